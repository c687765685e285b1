//! Domain types shared by the numerical modules: population spectra,
//! dimension ratios, fourth-moment parameters and analytic test functions.

use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete weighted spectrum `sum_j w_j 1{lambda_j <= t}`.
///
/// Atoms are sorted ascending by value, have distinct values and weights
/// summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct SpectralMeasure {
    atoms: Vec<(f64, f64)>,
}

impl SpectralMeasure {
    /// Canonicalizes raw `(value, weight)` pairs: validates, merges duplicate
    /// values, sorts ascending and rescales weights to sum to one.
    pub fn normalize(raw: &[(f64, f64)]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Validation("spectral measure needs at least one atom".into()));
        }
        for (i, &(v, w)) in raw.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("atom {i}: value {v} must be finite and >= 0")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Validation(format!("atom {i}: weight {w} must be finite and >= 0")));
            }
        }
        let mut sorted: Vec<(f64, f64)> = raw.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        for (v, w) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        if total <= 0.0 {
            return Err(Error::Validation("spectral measure weights sum to zero".into()));
        }
        merged.retain(|a| a.1 > 0.0);
        for a in &mut merged {
            a.1 /= total;
        }
        Ok(Self { atoms: merged })
    }

    /// Point mass at `value`.
    pub fn point_mass(value: f64) -> Result<Self> {
        Self::normalize(&[(value, 1.0)])
    }

    /// Equal-weight empirical spectrum of the given eigenvalues.
    pub fn from_eigenvalues(values: &[f64]) -> Result<Self> {
        let raw: Vec<(f64, f64)> = values.iter().map(|&v| (v, 1.0)).collect();
        Self::normalize(&raw)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn min_value(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max_value(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    /// `int g(t) dH(t)` for a complex-valued integrand.
    pub fn integrate<F: Fn(f64) -> Complex64>(&self, g: F) -> Complex64 {
        self.atoms.iter().map(|&(t, w)| g(t) * w).sum()
    }

    /// Rescales every atom value by `c > 0` (the spectrum of `c * T`).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let raw: Vec<(f64, f64)> = self.atoms.iter().map(|&(v, w)| (v * c, w)).collect();
        Self::normalize(&raw)
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut raw = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 && line.eq_ignore_ascii_case("value,weight") {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(v), Some(w), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("line {}: expected `value,weight`", lineno + 1)));
            };
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad value `{v}`", lineno + 1)))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad weight `{w}`", lineno + 1)))?;
            raw.push((v, w));
        }
        Self::normalize(&raw)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "value,weight")?;
        for &(v, w) in &self.atoms {
            writeln!(out, "{v},{w}")?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<(f64, f64)>> for SpectralMeasure {
    type Error = Error;
    fn try_from(raw: Vec<(f64, f64)>) -> Result<Self> {
        Self::normalize(&raw)
    }
}

impl From<SpectralMeasure> for Vec<(f64, f64)> {
    fn from(m: SpectralMeasure) -> Self {
        m.atoms
    }
}

/// Dimension-to-sample-size ratios: limits `(y1, y2)` and the finite-sample
/// values `(yn1, yn2)`, with `h^2 = y1 + y2 - y1 y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RatiosRepr", into = "RatiosRepr")]
pub struct AspectRatios {
    y1: f64,
    y2: f64,
    yn1: f64,
    yn2: f64,
    h_sq: f64,
}

#[derive(Serialize, Deserialize)]
struct RatiosRepr {
    y1: f64,
    y2: f64,
    yn1: f64,
    yn2: f64,
}

impl TryFrom<RatiosRepr> for AspectRatios {
    type Error = Error;
    fn try_from(r: RatiosRepr) -> Result<Self> {
        Self::new(r.y1, r.y2, r.yn1, r.yn2)
    }
}

impl From<AspectRatios> for RatiosRepr {
    fn from(r: AspectRatios) -> Self {
        RatiosRepr {
            y1: r.y1,
            y2: r.y2,
            yn1: r.yn1,
            yn2: r.yn2,
        }
    }
}

fn h_squared(y1: f64, y2: f64) -> f64 {
    y1 + y2 - y1 * y2
}

impl AspectRatios {
    pub fn new(y1: f64, y2: f64, yn1: f64, yn2: f64) -> Result<Self> {
        for (name, y) in [("y1", y1), ("yn1", yn1)] {
            if !(y.is_finite() && y > 0.0) {
                return Err(Error::Validation(format!("{name} = {y} must be positive")));
            }
        }
        for (name, y) in [("y2", y2), ("yn2", yn2)] {
            if !(y > 0.0 && y < 1.0) {
                return Err(Error::Validation(format!("{name} = {y} must lie in (0, 1)")));
            }
        }
        let h_sq = h_squared(y1, y2);
        if h_sq <= 0.0 {
            return Err(Error::Validation(format!("h^2 = {h_sq} must be positive")));
        }
        Ok(Self { y1, y2, yn1, yn2, h_sq })
    }

    /// Ratios whose limits equal their finite-sample values.
    pub fn symmetric(y1: f64, y2: f64) -> Result<Self> {
        Self::new(y1, y2, y1, y2)
    }

    /// `p / n1`, `p / n2` from raw dimensions.
    pub fn from_dims(p: usize, n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::Validation("sample sizes must be positive".into()));
        }
        Self::symmetric(p as f64 / n1 as f64, p as f64 / n2 as f64)
    }

    /// `p / (n1 - 1)`, `p / (n2 - 1)`: the ratios for mean-centered samples.
    pub fn from_centered_dims(p: usize, n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::Validation("centered samples need n >= 2".into()));
        }
        Self::from_dims(p, n1 - 1, n2 - 1)
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }
    pub fn yn1(&self) -> f64 {
        self.yn1
    }
    pub fn yn2(&self) -> f64 {
        self.yn2
    }
    pub fn h_sq(&self) -> f64 {
        self.h_sq
    }

    /// The same ratios with the limits replaced by the finite-sample values.
    pub fn finite_sample(&self) -> Self {
        Self::symmetric(self.yn1, self.yn2).expect("finite-sample ratios already validated")
    }

    /// Total mass of the continuous part of the Fisher law, `min(1, 1/y1)`.
    pub fn continuous_mass(&self) -> f64 {
        (1.0 / self.y1).min(1.0)
    }

    /// Support of the Fisher law when `T = I`.
    pub fn identity_support(&self) -> (f64, f64) {
        let h = self.h_sq.sqrt();
        let d = 1.0 - self.y2;
        (((1.0 - h) / d).powi(2), ((1.0 + h) / d).powi(2))
    }
}

/// Field indicator and fourth-cumulant excesses of the two populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MomentsRepr", into = "MomentsRepr")]
pub struct MomentParams {
    kappa: u8,
    beta_x: f64,
    beta_y: f64,
}

#[derive(Serialize, Deserialize)]
struct MomentsRepr {
    kappa: u8,
    beta_x: f64,
    beta_y: f64,
}

impl TryFrom<MomentsRepr> for MomentParams {
    type Error = Error;
    fn try_from(r: MomentsRepr) -> Result<Self> {
        Self::new(r.kappa, r.beta_x, r.beta_y)
    }
}

impl From<MomentParams> for MomentsRepr {
    fn from(m: MomentParams) -> Self {
        MomentsRepr {
            kappa: m.kappa,
            beta_x: m.beta_x,
            beta_y: m.beta_y,
        }
    }
}

impl MomentParams {
    pub fn new(kappa: u8, beta_x: f64, beta_y: f64) -> Result<Self> {
        if kappa != 1 && kappa != 2 {
            return Err(Error::Validation(format!("kappa = {kappa} must be 1 (complex) or 2 (real)")));
        }
        let k = f64::from(kappa);
        for (name, b) in [("beta_x", beta_x), ("beta_y", beta_y)] {
            if !b.is_finite() || b < -k {
                return Err(Error::Validation(format!(
                    "{name} = {b} implies a fourth moment below 1"
                )));
            }
        }
        Ok(Self { kappa, beta_x, beta_y })
    }

    pub fn real_gaussian() -> Self {
        Self { kappa: 2, beta_x: 0.0, beta_y: 0.0 }
    }

    pub fn complex_gaussian() -> Self {
        Self { kappa: 1, beta_x: 0.0, beta_y: 0.0 }
    }

    pub fn kappa(&self) -> f64 {
        f64::from(self.kappa)
    }
    pub fn kappa_indicator(&self) -> u8 {
        self.kappa
    }
    pub fn beta_x(&self) -> f64 {
        self.beta_x
    }
    pub fn beta_y(&self) -> f64 {
        self.beta_y
    }

    pub fn fourth_moment_x(&self) -> f64 {
        1.0 + self.kappa() + self.beta_x
    }

    pub fn fourth_moment_y(&self) -> f64 {
        1.0 + self.kappa() + self.beta_y
    }
}

/// Analytic test function `f` with derivative `f'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralFunctional {
    /// `log x`
    Log,
    /// `x^k`; `k = 0` is the constant one.
    Power { k: u32 },
    /// `log(a + b x)`
    LogLinear { a: f64, b: f64 },
    /// `log(y1 + y2 x) - y2 / (y1 + y2) log x`, the two-sample LRT integrand.
    Lrt { y1: f64, y2: f64 },
    LinearCombination { terms: Vec<Term> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coefficient: f64,
    pub functional: SpectralFunctional,
}

fn principal_log(w: Complex64, what: &str, z: Complex64) -> Result<Complex64> {
    if w.im == 0.0 && w.re <= 0.0 {
        return Err(Error::Domain(format!("{what}: z = {z} lies on the branch cut")));
    }
    Ok(w.ln())
}

fn nonzero(w: Complex64, what: &str, z: Complex64) -> Result<Complex64> {
    if w == Complex64::new(0.0, 0.0) {
        return Err(Error::Domain(format!("{what}: z = {z} is a singular point")));
    }
    Ok(w)
}

impl SpectralFunctional {
    pub fn linear_combination(terms: Vec<(f64, SpectralFunctional)>) -> Self {
        SpectralFunctional::LinearCombination {
            terms: terms
                .into_iter()
                .map(|(coefficient, functional)| Term { coefficient, functional })
                .collect(),
        }
    }

    /// The constant function one.
    pub fn one() -> Self {
        SpectralFunctional::Power { k: 0 }
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        match self {
            SpectralFunctional::Log => principal_log(z, "log", z),
            SpectralFunctional::Power { k } => Ok(z.powu(*k)),
            SpectralFunctional::LogLinear { a, b } => principal_log(*a + z * *b, "log(a + b x)", z),
            SpectralFunctional::Lrt { y1, y2 } => {
                let first = principal_log(*y1 + z * *y2, "LRT", z)?;
                let second = principal_log(z, "LRT", z)?;
                Ok(first - second * (*y2 / (*y1 + *y2)))
            }
            SpectralFunctional::LinearCombination { terms } => {
                let mut acc = Complex64::new(0.0, 0.0);
                for t in terms {
                    acc += t.functional.eval(z)? * t.coefficient;
                }
                Ok(acc)
            }
        }
    }

    pub fn eval_deriv(&self, z: Complex64) -> Result<Complex64> {
        match self {
            SpectralFunctional::Log => {
                principal_log(z, "log", z)?;
                Ok(nonzero(z, "log", z)?.inv())
            }
            SpectralFunctional::Power { k } => match k {
                0 => Ok(Complex64::new(0.0, 0.0)),
                k => Ok(z.powu(k - 1) * f64::from(*k)),
            },
            SpectralFunctional::LogLinear { a, b } => {
                let w = principal_log(*a + z * *b, "log(a + b x)", z).map(|_| *a + z * *b)?;
                Ok(Complex64::new(*b, 0.0) / w)
            }
            SpectralFunctional::Lrt { y1, y2 } => {
                principal_log(*y1 + z * *y2, "LRT", z)?;
                principal_log(z, "LRT", z)?;
                Ok(*y2 / (*y1 + z * *y2) - (*y2 / (*y1 + *y2)) / z)
            }
            SpectralFunctional::LinearCombination { terms } => {
                let mut acc = Complex64::new(0.0, 0.0);
                for t in terms {
                    acc += t.functional.eval_deriv(z)? * t.coefficient;
                }
                Ok(acc)
            }
        }
    }

    /// Real evaluation on the positive axis.
    pub fn eval_real(&self, x: f64) -> Result<f64> {
        self.eval(Complex64::new(x, 0.0)).map(|v| v.re)
    }

    /// Real interval `(lo, hi)` outside of which the function may have branch
    /// cuts; `f` is analytic on a complex neighbourhood of any compact subset
    /// of `(lo, hi)`.
    pub fn analytic_interval(&self) -> (f64, f64) {
        match self {
            SpectralFunctional::Log | SpectralFunctional::Lrt { .. } => (0.0, f64::INFINITY),
            SpectralFunctional::Power { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            SpectralFunctional::LogLinear { a, b } => {
                if *b > 0.0 {
                    (-a / b, f64::INFINITY)
                } else if *b < 0.0 {
                    (f64::NEG_INFINITY, -a / b)
                } else if *a > 0.0 {
                    (f64::NEG_INFINITY, f64::INFINITY)
                } else {
                    (f64::INFINITY, f64::NEG_INFINITY)
                }
            }
            SpectralFunctional::LinearCombination { terms } => terms.iter().fold(
                (f64::NEG_INFINITY, f64::INFINITY),
                |(lo, hi), t| {
                    let (l, h) = t.functional.analytic_interval();
                    (lo.max(l), hi.min(h))
                },
            ),
        }
    }

    pub fn has_branch_cut(&self) -> bool {
        let (lo, hi) = self.analytic_interval();
        lo.is_finite() || hi.is_finite()
    }

    /// Short human-readable descriptor used in reports.
    pub fn describe(&self) -> String {
        match self {
            SpectralFunctional::Log => "log(x)".into(),
            SpectralFunctional::Power { k } => format!("x^{k}"),
            SpectralFunctional::LogLinear { a, b } => format!("log({a} + {b} x)"),
            SpectralFunctional::Lrt { y1, y2 } => {
                format!("log({y1} + {y2} x) - {} log(x)", y2 / (y1 + y2))
            }
            SpectralFunctional::LinearCombination { terms } => terms
                .iter()
                .map(|t| format!("{} * [{}]", t.coefficient, t.functional.describe()))
                .collect::<Vec<_>>()
                .join(" + "),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn merges_duplicates() {
        let m = SpectralMeasure::normalize(&[(1.0, 2.0), (1.0, 2.0)]).unwrap();
        assert_eq!(m.atoms(), &[(1.0, 1.0)]);
    }

    #[test]
    fn sorts_atoms() {
        let m = SpectralMeasure::normalize(&[(2.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(m.atoms(), &[(1.0, 0.5), (2.0, 0.5)]);
    }

    #[test]
    fn identity_point_mass() {
        let m = SpectralMeasure::normalize(&[(1.0, 1.0)]).unwrap();
        assert_eq!(m.atoms(), &[(1.0, 1.0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SpectralMeasure::normalize(&[]).is_err());
        let e = SpectralMeasure::normalize(&[(1.0, 1.0), (2.0, -1.0)]).unwrap_err();
        assert!(e.to_string().contains("atom 1"), "{e}");
        let e = SpectralMeasure::normalize(&[(-1.0, 1.0)]).unwrap_err();
        assert!(e.to_string().contains("atom 0"), "{e}");
        assert!(SpectralMeasure::normalize(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = SpectralMeasure::normalize(&[(1.0, 0.25), (2.5, 0.75)]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("value,weight\n"));
        let back = SpectralMeasure::read_csv(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ratios_validation() {
        assert!(AspectRatios::symmetric(0.5, 1.0).is_err());
        assert!(AspectRatios::symmetric(0.0, 0.5).is_err());
        let r = AspectRatios::symmetric(0.5, 0.5).unwrap();
        assert_eq!(r.h_sq(), 0.5 + 0.5 - 0.25);
        assert_eq!(r.h_sq(), h_squared(r.y1(), r.y2()));
        let r = AspectRatios::from_centered_dims(100, 201, 401).unwrap();
        assert_eq!(r.yn1(), 0.5);
        assert_eq!(r.yn2(), 0.25);
    }

    #[test]
    fn moments_validation() {
        assert!(MomentParams::new(3, 0.0, 0.0).is_err());
        assert!(MomentParams::new(2, -2.5, 0.0).is_err());
        let m = MomentParams::new(2, -1.0, 0.0).unwrap();
        assert_eq!(m.fourth_moment_x(), 2.0);
    }

    #[test]
    fn functional_examples() {
        let e = std::f64::consts::E;
        let v = SpectralFunctional::Log.eval(c(e, 0.0)).unwrap();
        assert!((v - c(1.0, 0.0)).norm() < 1e-15);
        let d = SpectralFunctional::Power { k: 2 }.eval_deriv(c(3.0, 0.0)).unwrap();
        assert_eq!(d, c(6.0, 0.0));
        let l = SpectralFunctional::Lrt { y1: 0.5, y2: 0.5 }.eval(c(1.0, 0.0)).unwrap();
        assert_eq!(l, c(0.0, 0.0));
    }

    #[test]
    fn branch_cut_is_a_domain_error() {
        assert!(matches!(SpectralFunctional::Log.eval(c(-1.0, 0.0)), Err(Error::Domain(_))));
        assert!(SpectralFunctional::Log.eval_deriv(c(0.0, 0.0)).is_err());
        assert!(SpectralFunctional::Lrt { y1: 0.5, y2: 0.5 }.eval(c(-0.5, 0.0)).is_err());
        assert!(SpectralFunctional::Log.eval(c(-1.0, 1e-3)).is_ok());
    }

    #[test]
    fn analytic_intervals() {
        assert_eq!(SpectralFunctional::Log.analytic_interval(), (0.0, f64::INFINITY));
        assert!(!SpectralFunctional::Power { k: 3 }.has_branch_cut());
        let f = SpectralFunctional::LogLinear { a: 1.0, b: 2.0 };
        assert_eq!(f.analytic_interval().0, -0.5);
        let g = SpectralFunctional::linear_combination(vec![
            (1.0, SpectralFunctional::Power { k: 1 }),
            (2.0, SpectralFunctional::Log),
        ]);
        assert_eq!(g.analytic_interval().0, 0.0);
    }

    #[test]
    fn serde_shape() {
        let f = SpectralFunctional::Lrt { y1: 0.5, y2: 0.25 };
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"kind":"lrt","y1":0.5,"y2":0.25}"#);
        let back: SpectralFunctional = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let bad: std::result::Result<AspectRatios, _> =
            serde_json::from_str(r#"{"y1":0.5,"y2":1.5,"yn1":0.5,"yn2":0.5}"#);
        assert!(bad.is_err());
    }

    fn builtins() -> Vec<SpectralFunctional> {
        vec![
            SpectralFunctional::Log,
            SpectralFunctional::Power { k: 1 },
            SpectralFunctional::Power { k: 3 },
            SpectralFunctional::LogLinear { a: 0.7, b: 1.3 },
            SpectralFunctional::Lrt { y1: 0.5, y2: 0.25 },
            SpectralFunctional::linear_combination(vec![
                (0.5, SpectralFunctional::Log),
                (-1.5, SpectralFunctional::Power { k: 2 }),
            ]),
        ]
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in prop::collection::vec((0.0f64..10.0, 0.01f64..5.0), 1..12)) {
            let once = SpectralMeasure::normalize(&raw).unwrap();
            let twice = SpectralMeasure::normalize(once.atoms()).unwrap();
            prop_assert_eq!(once.atoms().len(), twice.atoms().len());
            for (a, b) in once.atoms().iter().zip(twice.atoms()) {
                prop_assert_eq!(a.0, b.0);
                prop_assert!((a.1 - b.1).abs() <= 1e-15);
            }
            let total: f64 = once.atoms().iter().map(|a| a.1).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn derivative_matches_central_difference(
            re in 0.05f64..8.0,
            im in prop_oneof![-3.0f64..-0.01, 0.01f64..3.0],
        ) {
            let z = c(re, im);
            let delta = 1e-6 * z.norm();
            for f in builtins() {
                let fd = (f.eval(z + delta).unwrap() - f.eval(z - delta).unwrap()) / (2.0 * delta);
                let exact = f.eval_deriv(z).unwrap();
                prop_assert!((fd - exact).norm() <= 1e-6 * exact.norm().max(1e-3), "{:?} at {}", f, z);
            }
        }

        #[test]
        fn conjugate_symmetry(re in 0.05f64..8.0, im in 0.01f64..3.0) {
            let z = c(re, im);
            for f in builtins() {
                let a = f.eval(z.conj()).unwrap();
                let b = f.eval(z).unwrap().conj();
                prop_assert!((a - b).norm() <= 1e-14 * (1.0 + b.norm()));
            }
        }
    }
}
