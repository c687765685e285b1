//! Run configuration: one JSON document with optional per-command blocks.

use std::path::{Path, PathBuf};

use flss_core::clt::{CltConfig, ContourRule};
use flss_core::fisher::TwoSample;
use flss_core::inference::{SampleDims, ThetaFamily, DEFAULT_CRITICAL_VALUE};
use flss_core::montecarlo::SimSpec;
use flss_core::{AspectRatios, Error, MomentParams, Result, SpectralFunctional, SpectralMeasure};
use serde::{Deserialize, Serialize};

/// A spectrum given inline as `[[value, weight], ...]` or as a CSV path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectrumSource {
    Atoms(SpectralMeasure),
    File(PathBuf),
}

impl SpectrumSource {
    pub fn load(&self, base: &Path) -> Result<SpectralMeasure> {
        match self {
            SpectrumSource::Atoms(h) => Ok(h.clone()),
            SpectrumSource::File(p) => SpectralMeasure::load_csv(&base.join(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    /// Column means removed; `None` takes the command's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centered: Option<bool>,
}

impl Dims {
    pub fn sample_dims(&self, default_centered: bool) -> SampleDims {
        SampleDims { p: self.p, n1: self.n1, n2: self.n2, centered: self.centered.unwrap_or(default_centered) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityBlock {
    pub mesh: usize,
    pub eps: f64,
}

impl Default for DensityBlock {
    fn default() -> Self {
        Self { mesh: 10_000, eps: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBlock {
    pub x: PathBuf,
    pub y: PathBuf,
    #[serde(default = "yes")]
    pub centered: bool,
}

fn yes() -> bool {
    true
}

impl DataBlock {
    pub fn load(&self, base: &Path) -> Result<TwoSample> {
        let x = flss_core::io::load_matrix(&base.join(&self.x))?;
        let y = flss_core::io::load_matrix(&base.join(&self.y))?;
        TwoSample::new(x, y, self.centered)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestBlock {
    pub critical_value: f64,
}

impl Default for TestBlock {
    fn default() -> Self {
        Self { critical_value: DEFAULT_CRITICAL_VALUE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBlock {
    pub alternative: SpectrumSource,
}

/// Family given inline or as a `theta,spectrum_path` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilySource {
    Builtin(ThetaFamily),
    Table { table: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiBlock {
    pub family: FamilySource,
    pub a: f64,
    pub b: f64,
    #[serde(default = "theta_grid")]
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub two_sided: bool,
    #[serde(default = "default_knots")]
    pub knots: Option<usize>,
}

fn theta_grid() -> usize {
    10_000
}

fn default_knots() -> Option<usize> {
    Some(33)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateBlock {
    pub spec: SimSpec,
    /// Functionals of the replicated LSS; defaults to the run's functionals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functionals: Option<Vec<SpectralFunctional>>,
    #[serde(default = "yes")]
    pub predict: bool,
    /// When present, runs a size/power experiment against this alternative
    /// instead of the LSS replication.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<SimSpec>,
    /// Also write replication 0 as `x.csv`, `y.csv`.
    #[serde(default)]
    pub export_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<AspectRatios>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Dims>,
    pub moments: MomentParams,
    pub functionals: Vec<SpectralFunctional>,
    pub clt: CltConfig,
    pub density: DensityBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataBlock>,
    pub test: TestBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<CiBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spectrum: None,
            ratios: None,
            dims: None,
            moments: MomentParams::real_gaussian(),
            functionals: vec![SpectralFunctional::Log],
            clt: CltConfig::default(),
            density: DensityBlock::default(),
            data: None,
            test: TestBlock::default(),
            power: None,
            ci: None,
            simulate: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Pins every tunable to the reference example values.
    pub fn apply_reference_defaults(&mut self) {
        let grid = flss_core::clt::GridParams { eps: 1e-3, zeta: 1e-3, m1: 1000, m2: 1000 };
        self.clt.grid = grid;
        self.clt.centering_mesh = 10_000;
        self.clt.centering_eps = 1e-3;
        self.clt.contour_rule = ContourRule::LeftEndpoint;
        self.clt.estimator_grid.eps = Some(grid.eps);
        self.clt.estimator_grid.zeta = Some(grid.zeta);
        self.clt.estimator_grid.m1 = grid.m1;
        self.clt.estimator_grid.m2 = grid.m2;
        self.density = DensityBlock { mesh: 10_000, eps: 1e-3 };
        self.test.critical_value = DEFAULT_CRITICAL_VALUE;
        if let Some(ci) = self.ci.as_mut() {
            ci.m = 10_000;
            ci.threshold = None;
            ci.knots = None;
        }
    }

    pub fn spectrum(&self, base: &Path) -> Result<SpectralMeasure> {
        self.spectrum
            .as_ref()
            .ok_or_else(|| Error::Config("the config needs a `spectrum`".into()))?
            .load(base)
    }

    /// Limiting ratios from `ratios`, else from `dims` (uncentered unless flagged).
    pub fn limit_ratios(&self) -> Result<AspectRatios> {
        match (self.ratios, self.dims) {
            (Some(r), _) => Ok(r),
            (None, Some(d)) => d.sample_dims(false).effective_ratios(),
            (None, None) => Err(Error::Config("the config needs `ratios` or `dims`".into())),
        }
    }

    pub fn moments_checked(&self) -> Result<MomentParams> {
        if self.functionals.is_empty() {
            return Err(Error::Config("`functionals` is empty".into()));
        }
        Ok(self.moments)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_json(c: &RunConfig) -> String {
        serde_json::to_string_pretty(c).unwrap()
    }

    #[test]
    fn round_trip_is_idempotent() {
        let text = r#"{
            "spectrum": [[1.0, 0.5], [2.0, 0.5]],
            "dims": {"p": 10, "n1": 20, "n2": 40},
            "functionals": [{"kind": "log"}, {"kind": "power", "k": 2}],
            "ci": {"family": {"kind": "scale"}, "a": 0.5, "b": 2.0}
        }"#;
        let a = RunConfig::from_json(text).unwrap();
        let s1 = to_json(&a);
        let b = RunConfig::from_json(&s1).unwrap();
        assert_eq!(a, b);
        assert_eq!(s1, to_json(&b));
        assert_eq!(a.ci.as_ref().unwrap().m, 10_000);
    }

    #[test]
    fn spectrum_sources() {
        let c = RunConfig::from_json(r#"{"spectrum": "h.csv"}"#).unwrap();
        assert_eq!(c.spectrum, Some(SpectrumSource::File("h.csv".into())));
        assert!(RunConfig::from_json(r#"{"spectrum": [[-1.0, 1.0]]}"#).is_err());
    }

    #[test]
    fn reference_defaults_pin_the_examples() {
        let mut c = RunConfig::default();
        c.clt.grid.m2 = 4000;
        c.apply_reference_defaults();
        assert_eq!(c.clt.grid.m2, 1000);
        assert_eq!(c.clt.centering_eps, 1e-3);
        assert_eq!(c.test.critical_value, 1.64);
    }
}
