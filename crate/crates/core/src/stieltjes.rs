//! Solvers for the limiting Stieltjes transforms of the Fisher law.
//!
//! The central object is `m0(z)`, the root of
//!
//! ```text
//! z = h^2 m0 / (y2 (-1 + y2 S1(m0))) + (y1 / y2) m0,   S1(m) = sum_j w_j m / (l_j + m)
//! ```
//!
//! with `Im m0` of the opposite sign to `Im z`. The companion transform
//! follows as `m_(z) = 1/m0 - y2 sum_j w_j / (l_j + m0)`.
//!
//! Cold starts use continuation in `Im z`: the root is tracked from a point
//! far above the support, where `m0 ~ -(1 - y2) z`, down to the target.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{AspectRatios, SpectralMeasure};

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial Newton step fraction.
    pub damping: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Complex64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            damping: 1.0,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Validation(format!("solver tol = {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Validation("solver max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Validation(format!("damping = {} must lie in (0, 1]", self.damping)));
        }
        Ok(())
    }

    pub fn with_warm_start(mut self, m: Complex64) -> Self {
        self.warm_start = Some(m);
        self
    }

    pub fn cold(mut self) -> Self {
        self.warm_start = None;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// A solved point `(z, m0(z), m_(z))` with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesTriple {
    pub z: Complex64,
    pub m0: Complex64,
    pub m_under: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

impl StieltjesTriple {
    pub fn conj(&self) -> Self {
        Self {
            z: self.z.conj(),
            m0: self.m0.conj(),
            m_under: self.m_under.conj(),
            ..*self
        }
    }
}

/// Per-point sums over the spectrum that the contour formulas consume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSums {
    /// `sum w m / (l + m)`
    pub s1: Complex64,
    /// `sum w m^2 / (l + m)^2`
    pub s2: Complex64,
    /// `sum w / (l + m)`
    pub r1: Complex64,
}

/// The master equation for a fixed spectrum and ratio set.
#[derive(Debug, Clone, Copy)]
pub struct MasterEquation<'a> {
    pub ratios: &'a AspectRatios,
    pub h: &'a SpectralMeasure,
}

impl<'a> MasterEquation<'a> {
    pub fn new(ratios: &'a AspectRatios, h: &'a SpectralMeasure) -> Self {
        Self { ratios, h }
    }

    pub fn sums(&self, m: Complex64) -> SpectralSums {
        let mut s1 = Complex64::new(0.0, 0.0);
        let mut s2 = Complex64::new(0.0, 0.0);
        let mut r1 = Complex64::new(0.0, 0.0);
        for &(l, w) in self.h.atoms() {
            let inv = (m + l).inv();
            let q = m * inv;
            s1 += q * w;
            s2 += q * q * w;
            r1 += inv * w;
        }
        SpectralSums { s1, s2, r1 }
    }

    /// The right-hand side `z(m0)`.
    pub fn z_of(&self, m: Complex64) -> Complex64 {
        self.z_and_derivative(m).0
    }

    /// `z(m0)` and `dz/dm0`.
    pub fn z_and_derivative(&self, m: Complex64) -> (Complex64, Complex64) {
        let y1 = self.ratios.y1();
        let y2 = self.ratios.y2();
        let h2 = self.ratios.h_sq();
        let mut s1 = Complex64::new(0.0, 0.0);
        let mut ds1 = Complex64::new(0.0, 0.0);
        for &(l, w) in self.h.atoms() {
            let inv = (m + l).inv();
            s1 += m * inv * w;
            ds1 += inv * inv * (l * w);
        }
        let g = y2 * s1 - 1.0;
        let dg = ds1 * y2;
        let z = m * h2 / (g * y2) + m * (y1 / y2);
        let dz = (g - m * dg) * h2 / (g * g * y2) + y1 / y2;
        (z, dz)
    }

    pub fn residual(&self, z: Complex64, m: Complex64) -> f64 {
        (self.z_of(m) - z).norm()
    }

    /// Companion transform from `m0`.
    pub fn m_under(&self, m: Complex64) -> Complex64 {
        let r1: Complex64 = self.h.atoms().iter().map(|&(l, w)| (m + l).inv() * w).sum();
        m.inv() - r1 * self.ratios.y2()
    }

    /// Far-field approximation of `m0`.
    pub fn asymptotic_m0(&self, z: Complex64) -> Complex64 {
        -z * (1.0 - self.ratios.y2())
    }

    fn branch_ok(&self, z: Complex64, m0: Complex64) -> bool {
        let s = z.im.signum();
        m0.im * s < 0.0 && self.m_under(m0).im * s > 0.0
    }

    fn triple(&self, z: Complex64, m0: Complex64, iterations: usize) -> StieltjesTriple {
        StieltjesTriple {
            z,
            m0,
            m_under: self.m_under(m0),
            residual: self.residual(z, m0),
            iterations,
        }
    }

    /// Cold-start scale: far enough above the support that the far-field
    /// guess lies in the basin of the correct root.
    fn homotopy_height(&self, z: Complex64) -> f64 {
        let lmax = self.h.max_value();
        100.0 * [1.0, z.norm(), lmax / (1.0 - self.ratios.y2())]
            .into_iter()
            .fold(f64::MIN, f64::max)
    }
}

struct NewtonOutcome {
    m: Complex64,
    iterations: usize,
}

/// Damped Newton on a scalar unknown. `step` returns the current residual
/// norm and the full Newton step; `residual` only the norm. Iterates keep
/// the sign of `Im m` equal to `im_sign`.
fn damped_newton<S, R>(
    z: Complex64,
    guess: Complex64,
    cfg: &SolverConfig,
    im_sign: f64,
    step: S,
    residual: R,
) -> Result<NewtonOutcome>
where
    S: Fn(Complex64) -> (f64, Complex64),
    R: Fn(Complex64) -> f64,
{
    let mut m = guess;
    if m.im * im_sign <= 0.0 {
        m = Complex64::new(m.re, im_sign * m.im.abs().max(1e-300));
    }
    let (mut res, mut full) = step(m);
    for it in 0..cfg.max_iter {
        if !res.is_finite() {
            break;
        }
        if res <= cfg.tol {
            // one polishing step past the tolerance
            let cand = m + full;
            if cand.im * im_sign > 0.0 {
                let r = residual(cand);
                if r < res {
                    return Ok(NewtonOutcome { m: cand, iterations: it + 1 });
                }
            }
            return Ok(NewtonOutcome { m, iterations: it });
        }
        let mut t = cfg.damping;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = m + full * t;
            if cand.im * im_sign > 0.0 && cand.re.is_finite() {
                let r = residual(cand);
                if r < res {
                    m = cand;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        (res, full) = step(m);
    }
    Err(Error::NoConvergence {
        z,
        last: m,
        residual: res,
        iterations: cfg.max_iter,
    })
}

/// Root tracking in `Im z` from a far-field start down to the target.
fn continuation<F>(
    z: Complex64,
    height: f64,
    far_field: impl Fn(Complex64) -> Complex64,
    solve: F,
) -> Result<(Complex64, usize)>
where
    F: Fn(Complex64, Complex64) -> Result<NewtonOutcome>,
{
    let s = z.im.signum();
    let target = z.im.abs();
    let mut level = height.max(target);
    let start = Complex64::new(z.re, s * level);
    let first = solve(start, far_field(start))?;
    let mut m = first.m;
    let mut total = first.iterations;
    let mut ratio = 0.5;
    while level > target {
        let next = (level * ratio).max(target);
        match solve(Complex64::new(z.re, s * next), m) {
            Ok(out) => {
                m = out.m;
                total += out.iterations;
                level = next;
                ratio = (ratio * ratio).max(0.5_f64.powi(4)).min(0.5);
            }
            Err(e) => {
                ratio = 0.5 * (1.0 + ratio);
                if ratio > 0.999 {
                    return Err(e);
                }
            }
        }
    }
    Ok((m, total))
}

fn check_z(z: Complex64) -> Result<()> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Domain(format!("z = {z} is not finite")));
    }
    if z.im == 0.0 {
        return Err(Error::Domain(format!("z = {z} lies on the real axis")));
    }
    Ok(())
}

/// Shared driver: warm start, reflected restart, then continuation from the
/// far field. `newton` runs the inner iteration, `accept` the branch test.
fn solve_with_fallbacks<N, A>(
    z: Complex64,
    cfg: &SolverConfig,
    far_field: impl Fn(Complex64) -> Complex64,
    height: f64,
    newton: N,
    accept: A,
) -> Result<NewtonOutcome>
where
    N: Fn(Complex64, Complex64) -> Result<NewtonOutcome>,
    A: Fn(Complex64, Complex64) -> bool,
{
    cfg.validate()?;
    check_z(z)?;
    let mut last_err = None;
    if let Some(guess) = cfg.warm_start {
        match newton(z, guess) {
            Ok(out) if accept(z, out.m) => return Ok(out),
            Ok(out) => {
                // wrong branch: retry from the reflected iterate
                match newton(z, out.m.conj()) {
                    Ok(o2) if accept(z, o2.m) => return Ok(o2),
                    Ok(o2) => last_err = Some(Error::WrongBranch { z, m0: o2.m }),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (m, iters) = match continuation(z, height, &far_field, |zz, g| {
        let out = newton(zz, g)?;
        if accept(zz, out.m) {
            Ok(out)
        } else {
            Err(Error::WrongBranch { z: zz, m0: out.m })
        }
    }) {
        Ok(v) => v,
        Err(e) => return Err(last_err.unwrap_or(e)),
    };
    // final polish at the exact target
    let out = newton(z, m)?;
    if !accept(z, out.m) {
        return Err(Error::WrongBranch { z, m0: out.m });
    }
    Ok(NewtonOutcome {
        iterations: out.iterations + iters,
        ..out
    })
}

/// Solves the master equation for `m0(z)` by complex Newton.
pub fn solve_m0(
    z: Complex64,
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<StieltjesTriple> {
    let eq = MasterEquation::new(ratios, h);
    let newton = |zz: Complex64, guess: Complex64| {
        damped_newton(
            zz,
            guess,
            cfg,
            -zz.im.signum(),
            |m| {
                let (zm, dz) = eq.z_and_derivative(m);
                let r = zm - zz;
                (r.norm(), -r / dz)
            },
            |m| eq.residual(zz, m),
        )
    };
    let out = solve_with_fallbacks(
        z,
        cfg,
        |zz| eq.asymptotic_m0(zz),
        eq.homotopy_height(z),
        newton,
        |zz, m| eq.branch_ok(zz, m),
    )?;
    Ok(eq.triple(z, out.m, out.iterations))
}

/// Real and imaginary parts of `z(u + iv)` written out as two real equations.
pub fn real_split_map(ratios: &AspectRatios, h: &SpectralMeasure, u: f64, v: f64) -> (f64, f64) {
    let y1 = ratios.y1();
    let y2 = ratios.y2();
    let h2 = ratios.h_sq();
    let mut sa = 0.0;
    let mut sb = 0.0;
    for &(l, w) in h.atoms() {
        let d = (l + u) * (l + u) + v * v;
        sa += w * l * (l + u) / d;
        sb += w * l * v / d;
    }
    let a = 1.0 - y2 + y2 * sa;
    let b = y2 * sb;
    let den = y2 * (a * a + b * b);
    let xz = -h2 * (u * a - v * b) / den + y1 * u / y2;
    let yz = -h2 * (u * b + v * a) / den + y1 * v / y2;
    (xz, yz)
}

/// Solves the same equation as [`solve_m0`] as a 2x2 real system in
/// `(Re m0, Im m0)` with a finite-difference Jacobian.
pub fn solve_m0_real_split(
    z: Complex64,
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<StieltjesTriple> {
    let eq = MasterEquation::new(ratios, h);
    let f = |zz: Complex64, m: Complex64| {
        let (x, y) = real_split_map(ratios, h, m.re, m.im);
        (x - zz.re, y - zz.im)
    };
    let newton = |zz: Complex64, guess: Complex64| {
        damped_newton(
            zz,
            guess,
            cfg,
            -zz.im.signum(),
            |m| {
                let (f1, f2) = f(zz, m);
                let du = 1e-7 * m.norm().max(1e-3);
                let dv = du.min(0.5 * m.im.abs());
                let (a1, a2) = f(zz, m + du);
                let (b1, b2) = f(zz, m - du);
                let (c1, c2) = f(zz, m + Complex64::new(0.0, dv));
                let (d1, d2) = f(zz, m - Complex64::new(0.0, dv));
                let j11 = (a1 - b1) / (2.0 * du);
                let j21 = (a2 - b2) / (2.0 * du);
                let j12 = (c1 - d1) / (2.0 * dv);
                let j22 = (c2 - d2) / (2.0 * dv);
                let det = j11 * j22 - j12 * j21;
                let su = -(j22 * f1 - j12 * f2) / det;
                let sv = -(-j21 * f1 + j11 * f2) / det;
                (f1.hypot(f2), Complex64::new(su, sv))
            },
            |m| {
                let (f1, f2) = f(zz, m);
                f1.hypot(f2)
            },
        )
    };
    let out = solve_with_fallbacks(
        z,
        cfg,
        |zz| eq.asymptotic_m0(zz),
        eq.homotopy_height(z),
        newton,
        |zz, m| eq.branch_ok(zz, m),
    )?;
    let mut t = eq.triple(z, out.m, out.iterations);
    let (f1, f2) = f(z, out.m);
    t.residual = f1.hypot(f2);
    Ok(t)
}

/// Solves `xi = -1/m + y2 sum_j w_j / (l_j + m)` for the companion transform
/// of the limiting law of `S2^{-1}`-type matrices, `Im m` with the sign of `Im xi`.
pub fn solve_m_under_y2(
    xi: Complex64,
    y2: f64,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<Complex64> {
    if !(y2 > 0.0 && y2 < 1.0) {
        return Err(Error::Validation(format!("y2 = {y2} must lie in (0, 1)")));
    }
    let map = |m: Complex64| -> (Complex64, Complex64) {
        let mut r = Complex64::new(0.0, 0.0);
        let mut dr = Complex64::new(0.0, 0.0);
        for &(l, w) in h.atoms() {
            let inv = (m + l).inv();
            r += inv * w;
            dr += inv * inv * w;
        }
        let minv = m.inv();
        (-minv + r * y2, minv * minv - dr * y2)
    };
    let newton = |zz: Complex64, guess: Complex64| {
        damped_newton(
            zz,
            guess,
            cfg,
            zz.im.signum(),
            |m| {
                let (v, d) = map(m);
                let r = v - zz;
                (r.norm(), -r / d)
            },
            |m| (map(m).0 - zz).norm(),
        )
    };
    let accept = |zz: Complex64, m: Complex64| m.im * zz.im > 0.0;
    let height = 100.0 * [1.0, xi.norm(), h.max_value()].into_iter().fold(f64::MIN, f64::max);
    let out = solve_with_fallbacks(xi, cfg, |zz| -zz.inv(), height, newton, accept)?;
    Ok(out.m)
}

/// Solves along an ordered path of points, warm-starting each solve from
/// the previous root.
pub fn solve_chain(
    zs: &[Complex64],
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<Vec<StieltjesTriple>> {
    let mut out: Vec<StieltjesTriple> = Vec::with_capacity(zs.len());
    let mut warm = cfg.warm_start;
    for &z in zs {
        let mut c = *cfg;
        c.warm_start = warm.map(|m| {
            // a warm start from the other half-plane is reflected
            if m.im * z.im > 0.0 {
                m.conj()
            } else {
                m
            }
        });
        let t = solve_m0(z, ratios, h, &c)?;
        warm = Some(t.m0);
        out.push(t);
    }
    Ok(out)
}

/// One identity check: both sides and `|lhs - rhs| / max(1, |rhs|)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub defect: f64,
}

impl IdentityCheck {
    fn new(name: &'static str, lhs: Complex64, rhs: Complex64) -> Self {
        Self { name, lhs, rhs, defect: (lhs - rhs).norm() / rhs.norm().max(1.0) }
    }
}

/// Evaluates the derivative and composition identities satisfied by the
/// solved transforms, with derivatives from central differences of step
/// `min(1e-5 max(1, |z|), 1e-3 |Im z|)` (the first alone on the real axis). The transforms vary on the scale of
/// the distance to the real axis, so the step shrinks with it.
///
/// * `companion_derivative`: `m_^2 / m_'` against
///   `h^2/y2 - (y1/y2) (1 - y2 S1)^2 / (1 - y2 S2)`
/// * `composition`: `m0(z)` against the `y2`-companion transform at `-m_(z)`
/// * `m0_derivative`: `m0'` against `-m_' m0^2 / (1 - y2 S2)`
/// * `s2_derivative`: `(1 - y2 S2)'` against
///   `2 m_' y2 sum w m0^3 l / (l + m0)^3 / (1 - y2 S2)`
pub fn check_identities(
    z: Complex64,
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<Vec<IdentityCheck>> {
    let eq = MasterEquation::new(ratios, h);
    let y1 = ratios.y1();
    let y2 = ratios.y2();
    let base = solve_m0(z, ratios, h, cfg)?;
    let base_step = 1e-5 * z.norm().max(1.0);
    let delta = if z.im == 0.0 { base_step } else { base_step.min(1e-3 * z.im.abs()) };
    let warm = cfg.with_warm_start(base.m0);
    let plus = solve_m0(z + delta, ratios, h, &warm)?;
    let minus = solve_m0(z - delta, ratios, h, &warm)?;
    let d_under = (plus.m_under - minus.m_under) / (2.0 * delta);
    let d_m0 = (plus.m0 - minus.m0) / (2.0 * delta);

    let m0 = base.m0;
    let sums = eq.sums(m0);
    let g2 = -sums.s2 * y2 + 1.0;
    let one_minus_s1 = -sums.s1 * y2 + 1.0;

    let temp = IdentityCheck::new(
        "companion_derivative",
        base.m_under * base.m_under / d_under,
        -one_minus_s1 * one_minus_s1 / g2 * (y1 / y2) + ratios.h_sq() / y2,
    );

    let composed = solve_m_under_y2(-base.m_under, y2, h, &cfg.with_warm_start(m0))?;
    let comp = IdentityCheck::new("composition", m0, composed);

    let deriv = IdentityCheck::new("m0_derivative", d_m0, -d_under * m0 * m0 / g2);

    let g2_at = |m: Complex64| -eq.sums(m).s2 * y2 + 1.0;
    let d_g2 = (g2_at(plus.m0) - g2_at(minus.m0)) / (2.0 * delta);
    let cube: Complex64 = h
        .atoms()
        .iter()
        .map(|&(l, w)| (m0 / (m0 + l)).powu(3) * (l * w))
        .sum();
    let s2d = IdentityCheck::new("s2_derivative", d_g2, d_under * cube * (2.0 * y2) / g2);

    Ok(vec![temp, comp, deriv, s2d])
}
