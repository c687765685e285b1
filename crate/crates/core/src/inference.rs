//! Two-sample covariance equality test, its asymptotic power, and a
//! grid-scan confidence interval for a one-parameter spectrum family.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clt::{clt_summary, CltConfig, CltDiagnostics};
use crate::error::{Error, Result, Stage, StageExt};
use crate::fisher::{lrt_statistic, sample_spectrum, TwoSample};
use crate::measures::{AspectRatios, MomentParams, SpectralFunctional, SpectralMeasure};
use crate::stats::normal_cdf;

/// One-sided 5% critical value used by the test unless configured.
pub const DEFAULT_CRITICAL_VALUE: f64 = 1.64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub clt: CltConfig,
    pub moments: MomentParams,
    pub critical_value: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            clt: CltConfig::default(),
            moments: MomentParams::real_gaussian(),
            critical_value: DEFAULT_CRITICAL_VALUE,
        }
    }
}

/// Dimensions of a two-sample problem, with the centering convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDims {
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    /// Column means removed, so the effective sizes are `n_i - 1`.
    pub centered: bool,
}

impl SampleDims {
    pub fn of(sample: &TwoSample) -> Self {
        Self { p: sample.p(), n1: sample.n1(), n2: sample.n2(), centered: sample.centered }
    }

    /// `p/n1`, `p/n2`: the ratios inside the statistic.
    pub fn yn(&self) -> (f64, f64) {
        (self.p as f64 / self.n1 as f64, self.p as f64 / self.n2 as f64)
    }

    /// Ratios `p/N_i` with the effective sizes, used for the limiting law.
    pub fn effective_ratios(&self) -> Result<AspectRatios> {
        let d = usize::from(self.centered);
        if self.n1 <= d || self.n2 <= d {
            return Err(Error::Dimension("sample sizes too small".into()));
        }
        AspectRatios::from_dims(self.p, self.n1 - d, self.n2 - d)
    }

    pub fn functional(&self) -> SpectralFunctional {
        let (a, b) = self.yn();
        SpectralFunctional::Lrt { y1: a, y2: b }
    }
}

/// `p F(f)`, `m(f)` and `v(f)` for the LRT functional at one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtParameters {
    pub dims: SampleDims,
    pub spectrum: SpectralMeasure,
    /// `p int f u` at the effective ratios.
    pub p_f: f64,
    /// Asymptotic mean `m(f)`.
    pub mean: f64,
    /// Asymptotic variance `v(f)`.
    pub variance: f64,
    /// `log(yn1 + yn2)`, subtracted once inside the statistic.
    pub trailing_log: f64,
    pub diagnostics: CltDiagnostics,
}

impl LrtParameters {
    /// Centering compared against the statistic: `p F + m - log(yn1 + yn2)`.
    pub fn centering(&self) -> f64 {
        self.p_f + self.mean - self.trailing_log
    }

    pub fn scale(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Runs the density and contour pipeline for the LRT functional at spectrum `h`.
pub fn lrt_parameters(h: &SpectralMeasure, dims: SampleDims, cfg: &TestConfig) -> Result<LrtParameters> {
    let r = dims.effective_ratios()?;
    let f = dims.functional();
    let mut clt = cfg.clt.clone();
    clt.dimension = Some(dims.p);
    let s = clt_summary(std::slice::from_ref(&f), &r, h, &cfg.moments, None, &clt)?;
    let variance = s.cov[0][0];
    if !(variance > 0.0) {
        return Err(Error::Domain(format!("nonpositive asymptotic variance {variance}")).at(Stage::Covariance));
    }
    let (a, b) = dims.yn();
    Ok(LrtParameters {
        dims,
        spectrum: h.clone(),
        p_f: s.centering[0],
        mean: s.mean[0],
        variance,
        trailing_log: (a + b).ln(),
        diagnostics: s.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDiagnostics {
    pub dims: SampleDims,
    pub zero_eigenvalues: usize,
    pub p_f: f64,
    pub mean_correction: f64,
    pub variance: f64,
    pub critical_value: f64,
    pub pipeline: CltDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub null_centering: f64,
    pub null_scale: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub reject_at_5pct: bool,
    pub power_at_alternative: Option<f64>,
    pub diagnostics: TestDiagnostics,
}

/// `T_N` of a sample.
pub fn statistic(sample: &TwoSample) -> Result<(f64, usize)> {
    let spec = sample_spectrum(sample).stage(Stage::Spectrum)?;
    let (a, b) = SampleDims::of(sample).yn();
    Ok((lrt_statistic(&spec, a, b).stage(Stage::Statistic)?, spec.zero_count()))
}

/// Test report given precomputed null parameters.
pub fn equality_test_with(sample: &TwoSample, null: &LrtParameters, critical_value: f64) -> Result<TestReport> {
    if SampleDims::of(sample) != null.dims {
        return Err(Error::Dimension("null parameters were computed for other dimensions".into()));
    }
    let (t, zeros) = statistic(sample)?;
    let center = null.centering();
    let scale = null.scale();
    let z = (t - center) / scale;
    Ok(TestReport {
        statistic: t,
        null_centering: center,
        null_scale: scale,
        z_score: z,
        p_value: 1.0 - normal_cdf(z),
        reject_at_5pct: z > critical_value,
        power_at_alternative: None,
        diagnostics: TestDiagnostics {
            dims: null.dims,
            zero_eigenvalues: zeros,
            p_f: null.p_f,
            mean_correction: null.mean,
            variance: null.variance,
            critical_value,
            pipeline: null.diagnostics.clone(),
        },
    })
}

/// Likelihood-ratio test of `Sigma1 = Sigma2`, null parameters at `H = delta_1`.
pub fn equality_test(sample: &TwoSample, cfg: &TestConfig) -> Result<TestReport> {
    let null = lrt_parameters(&SpectralMeasure::point_mass(1.0)?, SampleDims::of(sample), cfg)?;
    equality_test_with(sample, &null, cfg.critical_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub power: f64,
    pub null: LrtParameters,
    pub alternative: LrtParameters,
    pub critical_value: f64,
}

/// `1 - Phi(v1^{-1/2} [c sqrt(v) + pF + m - pF1 - m1])` from parameter sets.
pub fn power_from(null: &LrtParameters, alt: &LrtParameters, critical_value: f64) -> f64 {
    // written so that identical parameter sets give exactly the critical value
    let arg = critical_value * (null.scale() / alt.scale()) + ((null.p_f - alt.p_f) + (null.mean - alt.mean)) / alt.scale();
    1.0 - normal_cdf(arg)
}

/// Asymptotic power at the alternative spectrum `alt` of `Sigma2^{-1} Sigma1`.
pub fn power_function(alt: &SpectralMeasure, dims: SampleDims, cfg: &TestConfig) -> Result<PowerReport> {
    let null = lrt_parameters(&SpectralMeasure::point_mass(1.0)?, dims, cfg)?;
    let alternative = if alt == &null.spectrum {
        null.clone()
    } else {
        lrt_parameters(alt, dims, cfg)?
    };
    Ok(PowerReport {
        power: power_from(&null, &alternative, cfg.critical_value),
        null,
        alternative,
        critical_value: cfg.critical_value,
    })
}

/// Map from `theta` to the spectrum of `T(theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaFamily {
    /// Point mass at `theta`.
    Scale,
    /// Atoms `1` and `theta` with weights `1 - weight` and `weight`.
    TwoAtom { weight: f64 },
    /// Explicit spectra at listed `theta` values.
    Table { entries: Vec<(f64, SpectralMeasure)> },
}

impl ThetaFamily {
    pub fn spectrum(&self, theta: f64) -> Result<SpectralMeasure> {
        match self {
            ThetaFamily::Scale => {
                if !(theta > 0.0) {
                    return Err(Error::Validation(format!("scale family needs theta > 0, got {theta}")));
                }
                SpectralMeasure::point_mass(theta)
            }
            ThetaFamily::TwoAtom { weight } => {
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::Validation(format!("two-atom weight {weight} outside [0, 1]")));
                }
                SpectralMeasure::normalize(&[(1.0, 1.0 - weight), (theta, *weight)])
            }
            ThetaFamily::Table { entries } => entries
                .iter()
                .find(|(t, _)| (t - theta).abs() <= 1e-9 * theta.abs().max(1.0))
                .map(|(_, h)| h.clone())
                .ok_or_else(|| Error::Config(format!("theta = {theta} is not listed in the family table"))),
        }
    }

    /// Reads a CSV of `theta,spectrum_path` rows; paths are relative to the table.
    pub fn load_table(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, ',');
            let (Some(t), Some(p)) = (parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("{}:{}: expected theta,path", path.display(), i + 1)));
            };
            let Ok(theta) = t.trim().parse::<f64>() else {
                if i == 0 {
                    continue; // header
                }
                return Err(Error::Parse(format!("{}:{}: bad theta {t:?}", path.display(), i + 1)));
            };
            entries.push((theta, SpectralMeasure::load_csv(&base.join(p.trim()))?));
        }
        if entries.is_empty() {
            return Err(Error::Parse(format!("{}: empty family table", path.display())));
        }
        Ok(ThetaFamily::Table { entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiConfig {
    pub test: TestConfig,
    /// Accept when `|z| <= two_sided_threshold` instead of `z <= threshold`.
    pub two_sided: bool,
    pub two_sided_threshold: f64,
    /// Pipeline evaluations spread over `[a, b]` and interpolated onto the
    /// grid by a natural cubic spline; `None` runs the pipeline at every point.
    pub knots: Option<usize>,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self { test: TestConfig::default(), two_sided: false, two_sided_threshold: 1.96, knots: Some(33) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaInterval {
    pub theta_lo: Option<f64>,
    pub theta_hi: Option<f64>,
    pub grid: (f64, f64, usize),
    /// One character per grid point, `1` when accepted.
    pub accepted_flags: String,
    pub threshold: f64,
    pub two_sided: bool,
    pub statistic: f64,
    /// False when the accepted set has gaps.
    pub contiguous: bool,
    pub knots: Option<usize>,
}

impl ThetaInterval {
    pub fn is_empty(&self) -> bool {
        self.theta_lo.is_none()
    }

    pub fn accepted(&self) -> Vec<bool> {
        self.accepted_flags.bytes().map(|b| b == b'1').collect()
    }
}

/// Natural cubic spline through `(xs, ys)`, `xs` strictly increasing.
struct Spline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal solve for second derivatives, natural ends
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let cc = h1 / 6.0;
                let r = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
                let denom = b - a * c[i - 1];
                c[i] = cc / denom;
                d[i] = (r - a * d[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Self { xs, ys, m }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 {
            return self.ys[0];
        }
        let k = match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(i) => i.clamp(1, n - 1),
        };
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.ys[k - 1]
            + b * self.ys[k]
            + ((a * a * a - a) * self.m[k - 1] + (b * b * b - b) * self.m[k]) * h * h / 6.0
    }
}

/// Grid-scan interval: `theta_j = a + (b - a) j / m` is accepted when the
/// statistic standardized at `H = family(theta_j)` is at most `threshold`.
pub fn confidence_interval(
    sample: &TwoSample,
    family: &ThetaFamily,
    (a, b, m): (f64, f64, usize),
    threshold: f64,
    cfg: &CiConfig,
) -> Result<ThetaInterval> {
    if m < 10 {
        return Err(Error::Validation(format!("theta grid needs m >= 10, got {m}")));
    }
    if !(a < b) {
        return Err(Error::Validation(format!("theta range [{a}, {b}] is empty")));
    }
    let dims = SampleDims::of(sample);
    let (t, _) = statistic(sample)?;
    let grid: Vec<f64> = (0..=m).map(|j| a + (b - a) * j as f64 / m as f64).collect();
    let knots = match (family, cfg.knots) {
        (ThetaFamily::Table { .. }, _) | (_, None) => None,
        (_, Some(k)) if k > m => None,
        (_, Some(k)) if k < 4 => return Err(Error::Config(format!("at least 4 knots are needed, got {k}"))),
        (_, Some(k)) => Some(k),
    };
    let eval_at: Vec<f64> = match knots {
        None => grid.clone(),
        Some(k) => (0..k).map(|j| a + (b - a) * j as f64 / (k - 1) as f64).collect(),
    };
    let params: Vec<Result<(f64, f64)>> = eval_at
        .par_iter()
        .map(|&theta| {
            let h = family.spectrum(theta)?;
            let p = lrt_parameters(&h, dims, &cfg.test)?;
            Ok((p.centering(), p.variance))
        })
        .collect();
    let params: Vec<(f64, f64)> = params.into_iter().collect::<Result<_>>()?;
    let (center, var): (Vec<f64>, Vec<f64>) = match knots {
        None => params.into_iter().unzip(),
        Some(_) => {
            let (c, v): (Vec<f64>, Vec<f64>) = params.into_iter().unzip();
            let sc = Spline::new(eval_at.clone(), c);
            let sv = Spline::new(eval_at.clone(), v);
            grid.iter().map(|&x| (sc.eval(x), sv.eval(x))).unzip()
        }
    };
    let accepted: Vec<bool> = center
        .iter()
        .zip(&var)
        .map(|(c, v)| {
            let z = (t - c) / v.sqrt();
            if cfg.two_sided {
                z.abs() <= cfg.two_sided_threshold
            } else {
                z <= threshold
            }
        })
        .collect();
    let lo = accepted.iter().position(|&x| x);
    let hi = accepted.iter().rposition(|&x| x);
    let contiguous = match (lo, hi) {
        (Some(i), Some(k)) => accepted[i..=k].iter().all(|&x| x),
        _ => true,
    };
    Ok(ThetaInterval {
        theta_lo: lo.map(|i| grid[i]),
        theta_hi: hi.map(|k| grid[k]),
        grid: (a, b, m),
        accepted_flags: accepted.iter().map(|&x| if x { '1' } else { '0' }).collect(),
        threshold: if cfg.two_sided { cfg.two_sided_threshold } else { threshold },
        two_sided: cfg.two_sided,
        statistic: t,
        contiguous,
        knots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clt::GridParams;
    use crate::fisher::DataMatrix;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn quick() -> TestConfig {
        let mut cfg = TestConfig::default();
        cfg.clt.grid = GridParams { m1: 200, m2: 400, ..Default::default() };
        cfg.clt.centering_mesh = 2000;
        cfg
    }

    fn sample(p: usize, n1: usize, n2: usize, scale: f64, seed: u64) -> TwoSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c, s: f64| {
            DMatrix::from_fn(r, c, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                s * g
            })
        };
        let x = draw(p, n1, scale.sqrt());
        let y = draw(p, n2, 1.0);
        TwoSample::new(DataMatrix::Real(x), DataMatrix::Real(y), true).unwrap()
    }

    #[test]
    fn power_at_null_is_size() {
        let dims = SampleDims { p: 20, n1: 40, n2: 80, centered: true };
        let cfg = quick();
        let r = power_function(&SpectralMeasure::point_mass(1.0).unwrap(), dims, &cfg).unwrap();
        assert_eq!(r.null, r.alternative);
        assert_eq!(r.power, 1.0 - normal_cdf(DEFAULT_CRITICAL_VALUE));
    }

    #[test]
    fn power_grows_with_scale() {
        let dims = SampleDims { p: 100, n1: 200, n2: 400, centered: true };
        let cfg = quick();
        let a = power_function(&SpectralMeasure::point_mass(1.5).unwrap(), dims, &cfg).unwrap().power;
        let b = power_function(&SpectralMeasure::point_mass(2.5).unwrap(), dims, &cfg).unwrap().power;
        assert!(a < b && (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b), "{a} {b}");
    }

    #[test]
    fn report_fields_are_consistent() {
        let s = sample(20, 40, 80, 1.0, 3);
        let cfg = quick();
        let r = equality_test(&s, &cfg).unwrap();
        assert_eq!(r.z_score, (r.statistic - r.null_centering) / r.null_scale);
        assert_eq!(r.p_value, 1.0 - normal_cdf(r.z_score));
        assert_eq!(r.reject_at_5pct, r.z_score > cfg.critical_value);
        let again = equality_test(&s, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn strong_alternative_rejects() {
        let s = sample(50, 100, 200, 2.0, 4);
        let r = equality_test(&s, &quick()).unwrap();
        assert!(r.reject_at_5pct, "z = {}", r.z_score);
    }

    #[test]
    fn infinite_threshold_accepts_everything() {
        let s = sample(20, 40, 80, 1.0, 5);
        let mut cfg = CiConfig { test: quick(), knots: Some(6), ..Default::default() };
        cfg.test.clt.grid = GridParams { m1: 100, m2: 200, ..Default::default() };
        let ci = confidence_interval(&s, &ThetaFamily::Scale, (0.5, 2.0, 20), f64::INFINITY, &cfg).unwrap();
        assert_eq!(ci.theta_lo, Some(0.5));
        assert_eq!(ci.theta_hi, Some(2.0));
        assert!(ci.contiguous);
        assert_eq!(ci.accepted().len(), 21);
    }

    #[test]
    fn spline_reproduces_cubics_inside() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let s = Spline::new(xs, ys);
        assert!((s.eval(0.6) - 2.2).abs() < 1e-12);
        assert!((s.eval(1.9) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn families() {
        assert!(ThetaFamily::Scale.spectrum(0.0).is_err());
        let h = ThetaFamily::TwoAtom { weight: 0.25 }.spectrum(3.0).unwrap();
        assert_eq!(h.atoms(), &[(1.0, 0.75), (3.0, 0.25)]);
        let t = ThetaFamily::Table { entries: vec![(1.0, SpectralMeasure::point_mass(2.0).unwrap())] };
        assert!(t.spectrum(1.0).is_ok());
        assert!(matches!(t.spectrum(1.5), Err(Error::Config(_))));
    }
}
