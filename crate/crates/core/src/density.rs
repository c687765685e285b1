//! Limiting spectral density of the Fisher matrix on a real mesh, support
//! detection, and integration of test functions against the limiting law.
//!
//! The density is read off the companion transform just above the axis,
//! `u(x) = Im m_(x + i eps) / (pi y1)`. For `y1 < 1` the companion law has an
//! atom of mass `1 - y1` at zero whose smoothed tail is removed before taking
//! the imaginary part. When `y1 > 1` there is no such atom and `u` integrates
//! to the continuous mass `1 / y1`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{AspectRatios, SpectralFunctional, SpectralMeasure};
use crate::stieltjes::{solve_chain, SolverConfig};

/// Imaginary offset used while locating the support. Small enough that the
/// Poisson tail of the smoothed density stays below the threshold off support.
pub const DETECTION_EPSILON: f64 = 1e-10;
/// Density level separating support from gap.
pub const DETECTION_THRESHOLD: f64 = 1e-6;
const SCAN_POINTS: usize = 2000;
const BISECTION_STEPS: usize = 60;
/// Number of independent warm-start chains a mesh is split into.
const CHAINS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub mesh: Vec<f64>,
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub support: (f64, f64),
    pub ratios: AspectRatios,
}

/// Discrete rule for `int f(x) u(x) dx` over the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumRule {
    /// `(c2 - c1)/m * sum_{j=1..m} f(x_j) u(x_j)`
    #[default]
    Riemann,
    Trapezoid,
}

impl DensityCurve {
    pub fn m(&self) -> usize {
        self.mesh.len() - 1
    }

    pub fn trapezoid_mass(&self) -> f64 {
        self.mesh
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, u)| 0.5 * (x[1] - x[0]) * (u[0] + u[1]))
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,u")?;
        for (x, u) in self.mesh.iter().zip(&self.values) {
            writeln!(out, "{x},{u}")?;
        }
        Ok(())
    }
}

fn check_eps(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Validation(format!("epsilon = {epsilon} must be positive")));
    }
    Ok(())
}

/// Density values at `xs + i eps` by warm-started chains. The split into
/// chains is fixed so the output never depends on the worker count.
pub fn density_values(
    xs: &[f64],
    epsilon: f64,
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    check_eps(epsilon)?;
    let zs: Vec<Complex64> = xs.iter().map(|&x| Complex64::new(x, epsilon)).collect();
    let chunk = zs.len().div_ceil(CHAINS).max(1);
    let cold = cfg.cold();
    let atom = (1.0 - ratios.y1()).max(0.0);
    let parts: Vec<Result<Vec<f64>>> = zs
        .par_chunks(chunk)
        .map(|zc| {
            // solver errors carry the failing z
            let sol = solve_chain(zc, ratios, h, &cold)?;
            Ok(sol
                .iter()
                .map(|t| {
                    // drop the Poisson tail of the companion's atom at zero
                    let under = t.m_under + atom / t.z;
                    (under.im / (std::f64::consts::PI * ratios.y1())).max(0.0)
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(xs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Density on the uniform mesh `x_j = c1 + (c2 - c1) j / m`.
pub fn density_on_mesh(
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    support_hint: Option<(f64, f64)>,
    m: usize,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<DensityCurve> {
    if m < 10 {
        return Err(Error::Validation(format!("mesh size m = {m} must be at least 10")));
    }
    check_eps(epsilon)?;
    let (c1, c2) = match support_hint {
        Some((a, b)) if a < b => (a, b),
        Some((a, b)) => return Err(Error::Validation(format!("support hint [{a}, {b}] is empty"))),
        None => detect_support(ratios, h, cfg)?,
    };
    let mesh: Vec<f64> = (0..=m).map(|j| c1 + (c2 - c1) * j as f64 / m as f64).collect();
    let values = density_values(&mesh, epsilon, ratios, h, cfg)?;
    Ok(DensityCurve {
        mesh,
        values,
        epsilon,
        support: (c1, c2),
        ratios: *ratios,
    })
}

/// Bracket for the support: the `T = I` support scaled by the extreme atoms.
pub fn support_bracket(ratios: &AspectRatios, h: &SpectralMeasure) -> (f64, f64) {
    let (a, b) = ratios.identity_support();
    (h.min_value() * a, h.max_value() * b)
}

/// Locates `[c1, c2]` as the outermost points where the density exceeds
/// [`DETECTION_THRESHOLD`].
pub fn detect_support(
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    let (a, b) = support_bracket(ratios, h);
    if !(b > 0.0) {
        return Err(Error::Support("spectrum has no positive atoms".into()));
    }
    let w = b - a;
    let lo = (a - 0.25 * w).max(0.5 * a).max(1e-12 * b);
    let hi = b + 0.25 * w;
    let xs: Vec<f64> = (0..=SCAN_POINTS)
        .map(|j| lo + (hi - lo) * j as f64 / SCAN_POINTS as f64)
        .collect();
    let u = density_values(&xs, DETECTION_EPSILON, ratios, h, cfg)?;
    if u[0] > DETECTION_THRESHOLD || u[SCAN_POINTS] > DETECTION_THRESHOLD {
        return Err(Error::Support(format!(
            "density exceeds {DETECTION_THRESHOLD} at the bracket ends [{lo}, {hi}]; supply a support hint"
        )));
    }
    let first = u.iter().position(|&v| v > DETECTION_THRESHOLD);
    let last = u.iter().rposition(|&v| v > DETECTION_THRESHOLD);
    let (Some(i), Some(k)) = (first, last) else {
        return Err(Error::Support(format!(
            "density never exceeds {DETECTION_THRESHOLD} on [{lo}, {hi}]"
        )));
    };
    let inside = |x: f64| -> Result<bool> {
        Ok(density_values(&[x], DETECTION_EPSILON, ratios, h, cfg)?[0] > DETECTION_THRESHOLD)
    };
    // invariant: `out` below threshold, `inn` above
    let refine = |mut out: f64, mut inn: f64| -> Result<f64> {
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (out + inn);
            if mid == out || mid == inn {
                break;
            }
            if inside(mid)? {
                inn = mid;
            } else {
                out = mid;
            }
        }
        Ok(out)
    };
    let c1 = refine(xs[i - 1], xs[i])?;
    let c2 = refine(xs[k + 1], xs[k])?;
    Ok((c1, c2))
}

/// `int f(x) u(x) dx` over the curve's mesh, Riemann rule.
pub fn integrate_functional(f: &SpectralFunctional, curve: &DensityCurve) -> Result<f64> {
    integrate_functional_with(f, curve, SumRule::Riemann)
}

pub fn integrate_functional_with(
    f: &SpectralFunctional,
    curve: &DensityCurve,
    rule: SumRule,
) -> Result<f64> {
    let (c1, c2) = curve.support;
    let (lo, hi) = f.analytic_interval();
    if !(c1 > lo && c2 < hi) {
        return Err(Error::Domain(format!(
            "{} is singular inside the support [{c1}, {c2}]",
            f.describe()
        )));
    }
    let m = curve.m();
    let mut fu = Vec::with_capacity(m + 1);
    for (&x, &u) in curve.mesh.iter().zip(&curve.values) {
        fu.push(f.eval_real(x)? * u);
    }
    let step = (c2 - c1) / m as f64;
    let sum: f64 = match rule {
        SumRule::Riemann => fu[1..].iter().sum(),
        SumRule::Trapezoid => fu[1..m].iter().sum::<f64>() + 0.5 * (fu[0] + fu[m]),
    };
    Ok(sum * step)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form continuous density of the `T = I` Fisher law.
    fn wachter(x: f64, y1: f64, y2: f64) -> f64 {
        let h = (y1 + y2 - y1 * y2).sqrt();
        let a = ((1.0 - h) / (1.0 - y2)).powi(2);
        let b = ((1.0 + h) / (1.0 - y2)).powi(2);
        if x <= a || x >= b {
            return 0.0;
        }
        (1.0 - y2) * ((b - x) * (x - a)).sqrt()
            / (2.0 * std::f64::consts::PI * x * (y1 + y2 * x))
    }

    /// `int g(x) u(x) dx` for the closed form, via `x = mid + half cos t`,
    /// which removes the square-root edges.
    fn wachter_integral(g: impl Fn(f64) -> f64, y1: f64, y2: f64) -> f64 {
        let h = (y1 + y2 - y1 * y2).sqrt();
        let a = ((1.0 - h) / (1.0 - y2)).powi(2);
        let b = ((1.0 + h) / (1.0 - y2)).powi(2);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let n = 20000;
        let dt = std::f64::consts::PI / n as f64;
        (1..n)
            .map(|k| {
                let t = k as f64 * dt;
                let x = mid + half * t.cos();
                (1.0 - y2) * half * half * t.sin() * t.sin() * g(x)
                    / (2.0 * std::f64::consts::PI * x * (y1 + y2 * x))
            })
            .sum::<f64>()
            * dt
    }

    fn identity() -> (AspectRatios, SpectralMeasure) {
        (
            AspectRatios::symmetric(0.5, 0.5).unwrap(),
            SpectralMeasure::point_mass(1.0).unwrap(),
        )
    }

    #[test]
    fn oracle_mass_is_one() {
        let mass = wachter_integral(|_| 1.0, 0.5, 0.5);
        assert!((mass - 1.0).abs() < 1e-10, "{mass}");
        let mass = wachter_integral(|_| 1.0, 2.0, 0.5);
        assert!((mass - 0.5).abs() < 1e-10, "{mass}");
    }

    #[test]
    fn identity_support() {
        let (r, h) = identity();
        let (c1, c2) = detect_support(&r, &h, &SolverConfig::default()).unwrap();
        let a = ((1.0 - 0.75f64.sqrt()) / 0.5).powi(2);
        let b = ((1.0 + 0.75f64.sqrt()) / 0.5).powi(2);
        assert!((c1 - a).abs() < 0.01 && (c2 - b).abs() < 0.01, "{c1} {c2}");
        let scaled = SpectralMeasure::point_mass(3.0).unwrap();
        let (d1, d2) = detect_support(&r, &scaled, &SolverConfig::default()).unwrap();
        assert!((d1 - 3.0 * a).abs() < 0.01 && (d2 - 3.0 * b).abs() < 0.01);
        let dup = SpectralMeasure::normalize(&[(1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(detect_support(&r, &dup, &SolverConfig::default()).unwrap(), (c1, c2));
    }

    #[test]
    fn identity_density_matches_closed_form() {
        let (r, h) = identity();
        let curve = density_on_mesh(&r, &h, None, 2000, 1e-4, &SolverConfig::default()).unwrap();
        let (c1, c2) = curve.support;
        let sup = curve
            .mesh
            .iter()
            .zip(&curve.values)
            .filter(|(x, _)| **x >= c1 + 0.05 && **x <= c2 - 0.05)
            .map(|(&x, &u)| (u - wachter(x, 0.5, 0.5)).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 1e-2, "sup-norm {sup}");
        assert!((curve.trapezoid_mass() - 1.0).abs() <= 0.02);
        assert!(curve.values.iter().all(|&u| u >= 0.0));
    }

    #[test]
    fn vanishes_off_support() {
        let (r, h) = identity();
        let (_, c2) = detect_support(&r, &h, &SolverConfig::default()).unwrap();
        let u = density_values(&[c2 + 1.0], 1e-4, &r, &h, &SolverConfig::default()).unwrap();
        assert!(u[0] <= 1e-3);
    }

    #[test]
    fn mass_with_point_mass_at_zero() {
        let r = AspectRatios::symmetric(2.0, 0.3).unwrap();
        let h = SpectralMeasure::normalize(&[(1.0, 0.5), (2.0, 0.5)]).unwrap();
        let curve = density_on_mesh(&r, &h, None, 4000, 1e-4, &SolverConfig::default()).unwrap();
        assert!((curve.trapezoid_mass() - 0.5).abs() <= 0.02, "{}", curve.trapezoid_mass());
    }

    #[test]
    fn log_integral_matches_quadrature() {
        let (r, h) = identity();
        let curve = density_on_mesh(&r, &h, None, 10_000, 1e-6, &SolverConfig::default()).unwrap();
        let got = integrate_functional(&SpectralFunctional::Log, &curve).unwrap();
        let oracle = wachter_integral(f64::ln, 0.5, 0.5);
        assert!((got - oracle).abs() <= 1e-3, "{got} vs {oracle}");
        let mass = integrate_functional(&SpectralFunctional::one(), &curve).unwrap();
        assert!((mass - 1.0).abs() <= 0.02);
    }

    #[test]
    fn refinement_is_first_order() {
        let (r, h) = identity();
        let cfg = SolverConfig::default();
        let support = detect_support(&r, &h, &cfg).unwrap();
        let vals: Vec<f64> = [500, 1000, 2000]
            .iter()
            .map(|&m| {
                let c = density_on_mesh(&r, &h, Some(support), m, 1e-6, &cfg).unwrap();
                integrate_functional(&SpectralFunctional::Log, &c).unwrap()
            })
            .collect();
        let d1 = (vals[1] - vals[0]).abs();
        let d2 = (vals[2] - vals[1]).abs();
        assert!(d2 <= 2.0 * d1, "{vals:?}");
    }

    #[test]
    fn epsilon_robustness() {
        let (r, h) = identity();
        let cfg = SolverConfig::default();
        let support = detect_support(&r, &h, &cfg).unwrap();
        let a = density_on_mesh(&r, &h, Some(support), 1000, 1e-3, &cfg).unwrap();
        let b = density_on_mesh(&r, &h, Some(support), 1000, 5e-4, &cfg).unwrap();
        let (c1, c2) = support;
        let sup = a
            .mesh
            .iter()
            .zip(a.values.iter().zip(&b.values))
            .filter(|(x, _)| **x >= c1 + 0.05 && **x <= c2 - 0.05)
            .map(|(_, (u, v))| (u - v).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 5e-3, "{sup}");
    }

    #[test]
    fn pole_inside_support_is_rejected() {
        let (r, h) = identity();
        let curve = density_on_mesh(&r, &h, None, 100, 1e-3, &SolverConfig::default()).unwrap();
        let f = SpectralFunctional::LogLinear { a: -1.0, b: 1.0 };
        assert!(matches!(integrate_functional(&f, &curve), Err(Error::Domain(_))));
    }
}
