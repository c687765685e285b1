use std::fs;
use std::path::{Path, PathBuf};

use flss_core::clt::{clt_summary, CltData};
use flss_core::density::{density_on_mesh, detect_support};
use flss_core::fisher::DataMatrix;
use flss_core::inference::{
    confidence_interval, equality_test, power_function, CiConfig, TestConfig, ThetaFamily,
};
use flss_core::io::save_matrix;
use flss_core::montecarlo::{
    generate, run_clt_experiment, run_size_power_experiment, ExperimentConfig, ReplicationTable,
};
use flss_core::{Error, Result, SpectralFunctional};
use serde::Serialize;

use crate::config::{FamilySource, RunConfig};

/// Outcome of a command that ran to completion.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    EmptyInterval,
}

pub struct Context {
    pub config: RunConfig,
    /// Directory relative paths in the config are resolved against.
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|source| Error::Io { path: p.display().to_string(), source })
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn test_config(&self) -> TestConfig {
        TestConfig {
            clt: self.config.clt.clone(),
            moments: self.config.moments,
            critical_value: self.config.test.critical_value,
        }
    }
}

#[derive(Serialize)]
struct SupportReport {
    c1: f64,
    c2: f64,
    mass: f64,
    eps: f64,
    mesh: usize,
}

pub fn density(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let h = cfg.spectrum(&ctx.base)?;
    let r = cfg.limit_ratios()?;
    let solver = &cfg.clt.solver;
    let support = detect_support(&r, &h, solver).map_err(|e| e.at(flss_core::Stage::Support))?;
    let curve = density_on_mesh(&r, &h, Some(support), cfg.density.mesh, cfg.density.eps, solver)
        .map_err(|e| e.at(flss_core::Stage::Density))?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).map_err(|source| Error::Io { path: "density.csv".into(), source })?;
    ctx.write("density.csv", &buf)?;
    ctx.write_json(
        "support.json",
        &SupportReport {
            c1: support.0,
            c2: support.1,
            mass: curve.trapezoid_mass(),
            eps: cfg.density.eps,
            mesh: cfg.density.mesh,
        },
    )?;
    Ok(Outcome::Done)
}

pub fn clt(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let moments = cfg.moments_checked()?;
    let h = cfg.spectrum(&ctx.base)?;
    let r = cfg.limit_ratios()?;
    let mut clt = cfg.clt.clone();
    if clt.dimension.is_none() {
        clt.dimension = cfg.dims.map(|d| d.p);
    }
    let sample = cfg.data.as_ref().map(|d| d.load(&ctx.base)).transpose()?;
    let data = sample.as_ref().map(|s| CltData { x: &s.x, y: &s.y, t_half: None });
    let summary = clt_summary(&cfg.functionals, &r, &h, &moments, data, &clt)?;
    ctx.write_json("clt.json", &summary)?;
    Ok(Outcome::Done)
}

pub fn test(ctx: &Context) -> Result<Outcome> {
    let data = ctx
        .config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("`test` needs a `data` block".into()))?;
    let sample = data.load(&ctx.base)?;
    let report = equality_test(&sample, &ctx.test_config())?;
    ctx.write_json("test.json", &report)?;
    Ok(Outcome::Done)
}

pub fn power(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let block = cfg.power.as_ref().ok_or_else(|| Error::Config("`power` needs a `power` block".into()))?;
    let alt = block.alternative.load(&ctx.base)?;
    let dims = cfg.dims.ok_or_else(|| Error::Config("`power` needs `dims`".into()))?;
    let report = power_function(&alt, dims.sample_dims(true), &ctx.test_config())?;
    ctx.write_json("power.json", &report)?;
    Ok(Outcome::Done)
}

pub fn ci(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let block = cfg.ci.as_ref().ok_or_else(|| Error::Config("`ci` needs a `ci` block".into()))?;
    let data = cfg.data.as_ref().ok_or_else(|| Error::Config("`ci` needs a `data` block".into()))?;
    let sample = data.load(&ctx.base)?;
    let family = match &block.family {
        FamilySource::Builtin(f) => f.clone(),
        FamilySource::Table { table } => ThetaFamily::load_table(&ctx.base.join(table))?,
    };
    let ci_cfg = CiConfig {
        test: ctx.test_config(),
        two_sided: block.two_sided,
        knots: block.knots,
        ..CiConfig::default()
    };
    let threshold = block.threshold.unwrap_or(cfg.test.critical_value);
    let interval = confidence_interval(&sample, &family, (block.a, block.b, block.m), threshold, &ci_cfg)?;
    ctx.write_json("ci.json", &interval)?;
    Ok(if interval.is_empty() { Outcome::EmptyInterval } else { Outcome::Done })
}

/// Replication table without the per-rep rows, which go to CSV.
#[derive(Serialize)]
struct SimulationSummary<'a> {
    functionals: &'a [SpectralFunctional],
    reps: usize,
    failed: usize,
    mean: &'a [f64],
    cov: &'a [Vec<f64>],
    ks_statistic: &'a [f64],
    ks_p_value: &'a [f64],
    centering: &'a [f64],
    predicted_mean: Option<&'a [f64]>,
    predicted_cov: Option<&'a [Vec<f64>]>,
    beta_x: f64,
    beta_y: f64,
    beta_hat_x: f64,
    beta_hat_y: f64,
}

impl<'a> From<&'a ReplicationTable> for SimulationSummary<'a> {
    fn from(t: &'a ReplicationTable) -> Self {
        Self {
            functionals: &t.functionals,
            reps: t.values.len(),
            failed: t.failed,
            mean: &t.mean,
            cov: &t.cov,
            ks_statistic: &t.ks_statistic,
            ks_p_value: &t.ks_p_value,
            centering: &t.centering,
            predicted_mean: t.prediction.as_ref().map(|p| p.mean.as_slice()),
            predicted_cov: t.prediction.as_ref().map(|p| p.cov.as_slice()),
            beta_x: t.beta_x,
            beta_y: t.beta_y,
            beta_hat_x: t.beta_hat_x,
            beta_hat_y: t.beta_hat_y,
        }
    }
}

fn export(ctx: &Context, name: &str, m: &DataMatrix) -> Result<()> {
    save_matrix(m, &ctx.path(name))
}

pub fn simulate(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let block = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("`simulate` needs a `simulate` block".into()))?;
    let spec = &block.spec;
    spec.validate()?;
    if block.export_sample {
        let s = generate(spec, 0)?;
        let ext = if s.x.is_complex() { "bin" } else { "csv" };
        export(ctx, &format!("x.{ext}"), &s.x)?;
        export(ctx, &format!("y.{ext}"), &s.y)?;
    }
    if let Some(alt) = &block.alternative {
        let report = run_size_power_experiment(spec, alt, &ctx.test_config())?;
        ctx.write_json("size_power.json", &report)?;
        return Ok(Outcome::Done);
    }
    let fs = block.functionals.as_ref().unwrap_or(&cfg.functionals);
    let exp = ExperimentConfig { clt: cfg.clt.clone(), predict: block.predict };
    let table = run_clt_experiment(spec, fs, &exp)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf).map_err(|source| Error::Io { path: "replications.csv".into(), source })?;
    ctx.write("replications.csv", &buf)?;
    ctx.write_json("simulate.json", &SimulationSummary::from(&table))?;
    Ok(Outcome::Done)
}

/// Directory of the config file, for resolving relative paths.
pub fn base_dir(config: Option<&Path>) -> PathBuf {
    config
        .and_then(|p| p.parent())
        .map(|p| if p.as_os_str().is_empty() { PathBuf::from(".") } else { p.to_path_buf() })
        .unwrap_or_else(|| PathBuf::from("."))
}
