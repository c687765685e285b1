//! Seeded simulation of two-sample data and replicated experiments.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clt::{clt_summary, CltConfig, CltData, CltSummary};
use crate::density::{density_on_mesh, detect_support, integrate_functional_with};
use crate::error::{Error, Result, Stage, StageExt};
use crate::fisher::{lss, sample_spectrum, DataMatrix, TwoSample};
use crate::inference::{equality_test_with, lrt_parameters, power_from, SampleDims, TestConfig};
use crate::measures::{MomentParams, SpectralFunctional, SpectralMeasure};
use crate::stats;

/// Stream reserved for the draw that feeds the fourth-moment estimators.
pub const ESTIMATOR_STREAM: u64 = u64::MAX;

/// Standardized entry distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryLaw {
    GaussianReal,
    /// `(N1 + i N2) / sqrt(2)`
    GaussianComplex,
    /// Real two-point law with `E x^4 = 3 + beta`.
    TwoPoint { beta: f64 },
    /// Student t scaled to unit variance.
    ScaledStudent { df: u32 },
}

impl EntryLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EntryLaw::TwoPoint { beta } if !(beta >= -2.0 && beta.is_finite()) => {
                Err(Error::Validation(format!("two-point law needs beta >= -2, got {beta}")))
            }
            EntryLaw::ScaledStudent { df } if df < 9 => {
                Err(Error::Validation(format!("scaled Student law needs df >= 9, got {df}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, EntryLaw::GaussianComplex)
    }

    /// Fourth-moment excess over the Gaussian of the same field.
    pub fn beta(&self) -> f64 {
        match *self {
            EntryLaw::GaussianReal | EntryLaw::GaussianComplex => 0.0,
            EntryLaw::TwoPoint { beta } => beta,
            EntryLaw::ScaledStudent { df } => 6.0 / (df as f64 - 4.0),
        }
    }

    /// `(value, probability)` of the positive atom of the two-point law.
    fn two_point(beta: f64) -> (f64, f64, f64) {
        let s = 1.0 / (6.0 + beta);
        let q = 0.5 * (1.0 - (1.0 - 4.0 * s).max(0.0).sqrt());
        (((1.0 - q) / q).sqrt(), -(q / (1.0 - q)).sqrt(), q)
    }

    fn fill_real(&self, rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        match *self {
            EntryLaw::TwoPoint { beta } => {
                let (hi, lo, q) = Self::two_point(beta);
                DMatrix::from_fn(r, c, |_, _| if rng.random::<f64>() < q { hi } else { lo })
            }
            EntryLaw::ScaledStudent { df } => {
                let t = StudentT::new(df as f64).expect("df >= 9");
                let s = ((df as f64 - 2.0) / df as f64).sqrt();
                DMatrix::from_fn(r, c, |_, _| s * t.sample(rng))
            }
            _ => DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng)),
        }
    }

    fn fill(&self, rng: &mut ChaCha8Rng, r: usize, c: usize) -> DataMatrix {
        if self.is_complex() {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            DataMatrix::Complex(DMatrix::from_fn(r, c, |_, _| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                Complex64::new(s * a, s * b)
            }))
        } else {
            DataMatrix::Real(self.fill_real(rng, r, c))
        }
    }
}

/// Population covariance: a spectrum laid out on the diagonal, optionally
/// rotated by a seeded random orthogonal matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub spectrum: SpectralMeasure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_seed: Option<u64>,
}

impl CovarianceSpec {
    pub fn identity() -> Self {
        Self { spectrum: SpectralMeasure::point_mass(1.0).expect("valid"), rotation_seed: None }
    }

    pub fn scaled(c: f64) -> Result<Self> {
        Ok(Self { spectrum: SpectralMeasure::point_mass(c)?, rotation_seed: None })
    }

    /// Diagonal of length `p`; atom counts by largest remainder, in atom order.
    pub fn diagonal(&self, p: usize) -> Vec<f64> {
        let atoms = self.spectrum.atoms();
        let raw: Vec<f64> = atoms.iter().map(|a| a.1 * p as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&i, &j| (raw[j] - raw[j].floor()).total_cmp(&(raw[i] - raw[i].floor())).then(i.cmp(&j)));
        let short = p - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        atoms.iter().zip(&counts).flat_map(|(a, &n)| std::iter::repeat_n(a.0, n)).collect()
    }

    fn rotation(&self, p: usize) -> Option<DMatrix<f64>> {
        self.rotation_seed.map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
            let qr = g.qr();
            let mut q = qr.q();
            let r = qr.r();
            // sign fix makes the rotation Haar distributed
            for j in 0..p {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            q
        })
    }

    /// `Sigma^{1/2}`, or `None` for the identity.
    pub fn half(&self, p: usize) -> Option<DMatrix<f64>> {
        let d = self.diagonal(p);
        if self.rotation_seed.is_none() && d.iter().all(|&v| v == 1.0) {
            return None;
        }
        let sq = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p, d.iter().map(|v| v.sqrt())));
        Some(match self.rotation(p) {
            Some(q) => &q * sq * q.transpose(),
            None => sq,
        })
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        match self.half(p) {
            Some(h) => &h * &h,
            None => DMatrix::identity(p, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    pub entry_law: EntryLaw,
    /// Law of the second sample; defaults to `entry_law`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_law_y: Option<EntryLaw>,
    #[serde(default = "CovarianceSpec::identity")]
    pub sigma1: CovarianceSpec,
    #[serde(default = "CovarianceSpec::identity")]
    pub sigma2: CovarianceSpec,
    /// Remove column means before forming covariances.
    #[serde(default)]
    pub centered: bool,
    pub reps: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(p: usize, n1: usize, n2: usize, law: EntryLaw, reps: usize, seed: u64) -> Self {
        Self {
            p,
            n1,
            n2,
            entry_law: law,
            entry_law_y: None,
            sigma1: CovarianceSpec::identity(),
            sigma2: CovarianceSpec::identity(),
            centered: false,
            reps,
            seed,
        }
    }

    pub fn law_y(&self) -> EntryLaw {
        self.entry_law_y.unwrap_or(self.entry_law)
    }

    pub fn validate(&self) -> Result<()> {
        self.entry_law.validate()?;
        self.law_y().validate()?;
        if self.entry_law.is_complex() != self.law_y().is_complex() {
            return Err(Error::Validation("X and Y laws must share the field".into()));
        }
        if self.p == 0 || self.n1 == 0 || self.reps == 0 {
            return Err(Error::Validation("p, n1 and reps must be positive".into()));
        }
        let eff = self.n2 - usize::from(self.centered && self.n2 > 0);
        if eff <= self.p {
            return Err(Error::Validation(format!("need n2 > p (effective n2 = {eff}, p = {})", self.p)));
        }
        Ok(())
    }

    pub fn dims(&self) -> SampleDims {
        SampleDims { p: self.p, n1: self.n1, n2: self.n2, centered: self.centered }
    }

    pub fn moments(&self) -> Result<MomentParams> {
        let kappa = if self.entry_law.is_complex() { 1 } else { 2 };
        MomentParams::new(kappa, self.entry_law.beta(), self.law_y().beta())
    }

    /// Spectrum of `Sigma2^{-1/2} Sigma1 Sigma2^{-1/2}`.
    pub fn population_spectrum(&self) -> Result<SpectralMeasure> {
        if self.sigma1.rotation_seed.is_none() && self.sigma2.rotation_seed.is_none() {
            let d1 = self.sigma1.diagonal(self.p);
            let d2 = self.sigma2.diagonal(self.p);
            let q: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a / b).collect();
            return SpectralMeasure::from_eigenvalues(&q);
        }
        let s1 = self.sigma1.matrix(self.p);
        let s2 = self.sigma2.matrix(self.p);
        let l = s2
            .cholesky()
            .ok_or_else(|| Error::Conditioning("Sigma2 is not positive definite".into()))?;
        let li = l.l().try_inverse().ok_or_else(|| Error::Conditioning("Sigma2 factor singular".into()))?;
        let m = &li * s1 * li.transpose();
        let m = 0.5 * (&m + m.transpose());
        // round so numerically equal eigenvalues merge into one atom
        let vals: Vec<f64> = m
            .symmetric_eigenvalues()
            .iter()
            .map(|&v| {
                let scale = 10f64.powi(11 - v.abs().log10().floor() as i32);
                (v * scale).round() / scale
            })
            .collect();
        SpectralMeasure::from_eigenvalues(&vals)
    }
}

/// Standardized draws `(X, Y)` for stream `rep`.
pub fn generate_standardized(spec: &SimSpec, rep: u64) -> (DataMatrix, DataMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(rep);
    let x = spec.entry_law.fill(&mut rng, spec.p, spec.n1);
    let y = spec.law_y().fill(&mut rng, spec.p, spec.n2);
    (x, y)
}

fn transform(half: Option<&DMatrix<f64>>, x: DataMatrix) -> DataMatrix {
    match (half, x) {
        (None, x) => x,
        (Some(h), DataMatrix::Real(m)) => DataMatrix::Real(h * m),
        (Some(h), DataMatrix::Complex(m)) => DataMatrix::Complex(h.map(|v| Complex64::new(v, 0.0)) * m),
    }
}

/// Sample `(Sigma1^{1/2} X, Sigma2^{1/2} Y)` for replication `rep`.
pub fn generate(spec: &SimSpec, rep: u64) -> Result<TwoSample> {
    spec.validate()?;
    let (x, y) = generate_standardized(spec, rep);
    let h1 = spec.sigma1.half(spec.p);
    let h2 = spec.sigma2.half(spec.p);
    TwoSample::new(transform(h1.as_ref(), x), transform(h2.as_ref(), y), spec.centered)
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed * 100 > total {
        return Err(Error::Replications { failed, total });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub clt: CltConfig,
    /// Compute CLT predictions and the KS statistic against them.
    pub predict: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { clt: CltConfig::default(), predict: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationTable {
    pub functionals: Vec<SpectralFunctional>,
    /// One row per successful replication.
    pub values: Vec<Vec<f64>>,
    pub failed: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// KS distance of each column from the predicted normal law.
    pub ks_statistic: Vec<f64>,
    pub ks_p_value: Vec<f64>,
    pub centering: Vec<f64>,
    pub prediction: Option<CltSummary>,
    pub beta_x: f64,
    pub beta_y: f64,
    /// Sample fourth-moment excesses of the estimator draw.
    pub beta_hat_x: f64,
    pub beta_hat_y: f64,
}

impl ReplicationTable {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn standard_error(&self, j: usize) -> f64 {
        (self.cov[j][j] / self.values.len() as f64).sqrt()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.functionals.len()).map(|j| format!("f{j}")).collect();
        writeln!(out, "rep,{}", header.join(","))?;
        for (i, row) in self.values.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn sample_beta(m: &DataMatrix) -> f64 {
    match m {
        DataMatrix::Real(x) => stats::mean(&x.iter().map(|v| v.powi(4)).collect::<Vec<_>>()) - 3.0,
        DataMatrix::Complex(x) => stats::mean(&x.iter().map(|v| v.norm_sqr().powi(2)).collect::<Vec<_>>()) - 2.0,
    }
}

fn summarize_columns(values: &[Vec<f64>], s: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let cols: Vec<Vec<f64>> = (0..s).map(|j| values.iter().map(|r| r[j]).collect()).collect();
    let mean = cols.iter().map(|c| stats::mean(c)).collect();
    let cov = (0..s)
        .map(|i| (0..s).map(|j| stats::covariance(&cols[i], &cols[j])).collect())
        .collect();
    (mean, cov)
}

/// Replicated centered LSS `sum f(l) - p int f u_{y_n}` per functional.
pub fn run_clt_experiment(
    spec: &SimSpec,
    functionals: &[SpectralFunctional],
    cfg: &ExperimentConfig,
) -> Result<ReplicationTable> {
    spec.validate()?;
    if functionals.is_empty() {
        return Err(Error::Validation("no functionals".into()));
    }
    let h = spec.population_spectrum()?;
    let ratios = spec.dims().effective_ratios()?;
    let moments = spec.moments()?;
    let s = functionals.len();
    let (ex, ey) = generate_standardized(spec, ESTIMATOR_STREAM);

    let (centering, prediction) = if cfg.predict {
        let mut clt = cfg.clt.clone();
        clt.dimension = Some(spec.p);
        let t_half = match (spec.sigma1.half(spec.p), spec.sigma2.rotation_seed, spec.sigma2.diagonal(spec.p)) {
            (h1, None, d2) if d2.iter().all(|&v| v == 1.0) => h1.map(DataMatrix::Real),
            _ => {
                if moments.beta_x() != 0.0 {
                    return Err(Error::Config(
                        "the fourth-moment estimator is wired for Sigma2 = I only".into(),
                    ));
                }
                None
            }
        };
        let data = CltData { x: &ex, y: &ey, t_half: t_half.as_ref() };
        let summary = clt_summary(functionals, &ratios, &h, &moments, Some(data), &clt)?;
        (summary.centering.clone(), Some(summary))
    } else {
        let support = detect_support(&ratios, &h, &cfg.clt.solver).stage(Stage::Support)?;
        let curve = density_on_mesh(&ratios, &h, Some(support), cfg.clt.centering_mesh, cfg.clt.centering_eps, &cfg.clt.solver)
            .stage(Stage::Density)?;
        let c = functionals
            .iter()
            .map(|f| Ok(spec.p as f64 * integrate_functional_with(f, &curve, cfg.clt.centering_rule)?))
            .collect::<Result<Vec<f64>>>()
            .stage(Stage::Centering)?;
        (c, None)
    };

    let rows: Vec<Option<Vec<f64>>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let sample = generate(spec, rep as u64).ok()?;
            let spectrum = sample_spectrum(&sample).ok()?;
            let mut row = Vec::with_capacity(s);
            for (f, c) in functionals.iter().zip(&centering) {
                let v = lss(f, &spectrum).ok()? - c;
                if !v.is_finite() {
                    return None;
                }
                row.push(v);
            }
            Some(row)
        })
        .collect();
    let failed = rows.iter().filter(|r| r.is_none()).count();
    check_failures(failed, spec.reps)?;
    let values: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    let (mean, cov) = summarize_columns(&values, s);
    let (ks_statistic, ks_p_value) = match &prediction {
        Some(p) => (0..s)
            .map(|j| {
                let col: Vec<f64> = values.iter().map(|r| r[j]).collect();
                let d = stats::ks_statistic(&col, p.mean[j], p.cov[j][j].sqrt());
                (d, stats::ks_p_value(d, col.len()))
            })
            .unzip(),
        None => (vec![], vec![]),
    };
    Ok(ReplicationTable {
        functionals: functionals.to_vec(),
        values,
        failed,
        mean,
        cov,
        ks_statistic,
        ks_p_value,
        centering,
        prediction,
        beta_x: moments.beta_x(),
        beta_y: moments.beta_y(),
        beta_hat_x: sample_beta(&ex),
        beta_hat_y: sample_beta(&ey),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePowerReport {
    pub size: f64,
    pub power: f64,
    pub predicted_power: f64,
    pub null_reps: usize,
    pub alt_reps: usize,
    pub failed: usize,
    pub null_z: Vec<f64>,
    pub alt_z: Vec<f64>,
}

/// Empirical rejection rates under both specs and the predicted power.
pub fn run_size_power_experiment(spec_null: &SimSpec, spec_alt: &SimSpec, cfg: &TestConfig) -> Result<SizePowerReport> {
    spec_null.validate()?;
    spec_alt.validate()?;
    if spec_null.dims() != spec_alt.dims() {
        return Err(Error::Validation("null and alternative specs must share dimensions".into()));
    }
    let dims = spec_null.dims();
    let null_h = SpectralMeasure::point_mass(1.0)?;
    let null = lrt_parameters(&null_h, dims, cfg)?;
    let alt_h = spec_alt.population_spectrum()?;
    let alt = if alt_h == null_h { null.clone() } else { lrt_parameters(&alt_h, dims, cfg)? };
    let zs = |spec: &SimSpec| -> (Vec<f64>, usize) {
        let rows: Vec<Option<f64>> = (0..spec.reps)
            .into_par_iter()
            .map(|rep| {
                let sample = generate(spec, rep as u64).ok()?;
                equality_test_with(&sample, &null, cfg.critical_value).ok().map(|r| r.z_score)
            })
            .collect();
        let failed = rows.iter().filter(|r| r.is_none()).count();
        (rows.into_iter().flatten().collect(), failed)
    };
    let (null_z, f0) = zs(spec_null);
    check_failures(f0, spec_null.reps)?;
    let (alt_z, f1) = zs(spec_alt);
    check_failures(f1, spec_alt.reps)?;
    let rate = |z: &[f64]| z.iter().filter(|&&v| v > cfg.critical_value).count() as f64 / z.len() as f64;
    Ok(SizePowerReport {
        size: rate(&null_z),
        power: rate(&alt_z),
        predicted_power: power_from(&null, &alt, cfg.critical_value),
        null_reps: null_z.len(),
        alt_reps: alt_z.len(),
        failed: f0 + f1,
        null_z,
        alt_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(m: &DataMatrix) -> Vec<f64> {
        match m {
            DataMatrix::Real(x) => x.iter().copied().collect(),
            DataMatrix::Complex(_) => unreachable!(),
        }
    }

    #[test]
    fn two_point_moments() {
        let spec = SimSpec::new(1000, 1000, 1001, EntryLaw::TwoPoint { beta: -1.0 }, 1, 11);
        let (x, _) = generate_standardized(&spec, 0);
        let v = entries(&x);
        let n = v.len() as f64;
        let m1 = stats::mean(&v);
        let m2 = stats::mean(&v.iter().map(|a| a * a).collect::<Vec<_>>());
        let m4 = stats::mean(&v.iter().map(|a| a.powi(4)).collect::<Vec<_>>());
        assert!(m1.abs() <= 4.0 / n.sqrt(), "{m1}");
        assert!((m2 - 1.0).abs() <= 0.01);
        assert!((m4 - 2.0).abs() <= 0.02, "{m4}");
    }

    #[test]
    fn gaussian_and_student_moments() {
        for law in [EntryLaw::GaussianReal, EntryLaw::ScaledStudent { df: 12 }] {
            let spec = SimSpec::new(1000, 1000, 1001, law, 1, 12);
            let (x, _) = generate_standardized(&spec, 0);
            let v = entries(&x);
            let m1 = stats::mean(&v);
            let m2 = stats::mean(&v.iter().map(|a| a * a).collect::<Vec<_>>());
            assert!(m1.abs() <= 4.0 / (v.len() as f64).sqrt(), "{law:?} {m1}");
            assert!((m2 - 1.0).abs() <= 0.01, "{law:?} {m2}");
        }
        let spec = SimSpec::new(500, 1000, 1001, EntryLaw::GaussianComplex, 1, 13);
        let (x, _) = generate_standardized(&spec, 0);
        let DataMatrix::Complex(c) = x else { panic!() };
        let m2: f64 = c.iter().map(|z| z.norm_sqr()).sum::<f64>() / c.len() as f64;
        let sq: Complex64 = c.iter().map(|z| z * z).sum::<Complex64>() / c.len() as f64;
        assert!((m2 - 1.0).abs() <= 0.01 && sq.norm() <= 0.01);
    }

    #[test]
    fn draws_are_deterministic_and_streams_differ() {
        let spec = SimSpec::new(5, 7, 9, EntryLaw::GaussianReal, 3, 99);
        let a = generate(&spec, 1).unwrap();
        let b = generate(&spec, 1).unwrap();
        let c = generate(&spec, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn student_df_is_validated() {
        assert!(EntryLaw::ScaledStudent { df: 8 }.validate().is_err());
        assert!((EntryLaw::ScaledStudent { df: 10 }.beta() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_layout_and_spectrum() {
        let c = CovarianceSpec { spectrum: SpectralMeasure::normalize(&[(1.0, 1.0), (2.0, 2.0)]).unwrap(), rotation_seed: None };
        let d = c.diagonal(10);
        assert_eq!(d.iter().filter(|&&v| v == 1.0).count(), 3);
        assert_eq!(d.iter().filter(|&&v| v == 2.0).count(), 7);
        let mut spec = SimSpec::new(10, 20, 30, EntryLaw::GaussianReal, 1, 1);
        spec.sigma1 = CovarianceSpec { rotation_seed: Some(5), ..c.clone() };
        let h = spec.population_spectrum().unwrap();
        assert_eq!(h.atoms().len(), 2);
        assert!((h.atoms()[1].0 - 2.0).abs() < 1e-9);
        assert!((h.atoms()[0].1 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn small_experiment_runs() {
        let spec = SimSpec::new(10, 20, 40, EntryLaw::GaussianReal, 40, 7);
        let mut cfg = ExperimentConfig::default();
        cfg.clt.grid = crate::clt::GridParams { m1: 100, m2: 200, ..Default::default() };
        cfg.clt.centering_mesh = 1000;
        let t = run_clt_experiment(&spec, &[SpectralFunctional::Log], &cfg).unwrap();
        assert_eq!(t.values.len(), 40);
        assert_eq!(t.failed, 0);
        assert!(t.ks_p_value[0] >= 0.0 && t.cov[0][0] > 0.0);
        let again = run_clt_experiment(&spec, &[SpectralFunctional::Log], &cfg).unwrap();
        assert_eq!(t, again);
    }
}
