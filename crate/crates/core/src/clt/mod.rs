//! Contour sums for the asymptotic mean and covariance of centered linear
//! spectral statistics of Fisher matrices.

pub mod contour;
pub mod estimator;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{density_on_mesh, detect_support, integrate_functional_with, SumRule};
use crate::error::{Error, Result, Stage, StageExt};
use crate::fisher::DataMatrix;
use crate::measures::{AspectRatios, MomentParams, SpectralFunctional, SpectralMeasure};
use crate::stieltjes::SolverConfig;

pub use contour::{build_contours, solve_nodes, ContourGrid, EstimatorGridParams, GridParams, NodeTable, NodeValue};
pub use estimator::{estimate_h_m1, Estimator, HEstimator, HEstimator2};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Quadrature rule applied along a closed contour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourRule {
    /// `sum_k F(z_k) (z_{k+1} - z_k)`
    LeftEndpoint,
    /// `sum_k (F(z_k) + F(z_{k+1}))/2 (z_{k+1} - z_k)`; symmetric under
    /// conjugation of the contour, so the assembled sums are real to rounding.
    #[default]
    Trapezoid,
}

/// Form of the covariance log kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKernel {
    /// `log(m0(z1) - m0(z2))`
    #[default]
    Verbatim,
    /// `log((m0(z1) - m0(z2)) / (z1 - z2))`; the dropped `log(z1 - z2)` part
    /// integrates to zero against `f'(z2)` over the inner contour.
    Desingularized,
}

/// Weight multiplying `F(z_k)` in the closed-contour sum.
pub fn node_weights(steps: &[Complex64], rule: ContourRule) -> Vec<Complex64> {
    match rule {
        ContourRule::LeftEndpoint => steps.to_vec(),
        ContourRule::Trapezoid => {
            let n = steps.len();
            (0..n).map(|k| 0.5 * (steps[(k + n - 1) % n] + steps[k])).collect()
        }
    }
}

/// Logarithm continued along the node sequence. A phase step above `pi/2`
/// between neighbours means the grid cannot resolve the argument.
fn unwrapped_log(values: &[Complex64], what: &str) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(values.len());
    let Some(&first) = values.first() else {
        return Ok(out);
    };
    if first == ZERO {
        return Err(Error::Domain(format!("{what} vanishes at a contour node")));
    }
    let mut phase = first.arg();
    out.push(Complex64::new(first.norm().ln(), phase));
    for w in values.windows(2) {
        if w[1] == ZERO {
            return Err(Error::Domain(format!("{what} vanishes at a contour node")));
        }
        let d = (w[1] / w[0]).arg();
        if d.abs() > 0.5 * PI {
            return Err(Error::GridTooCoarse(format!(
                "argument of {what} jumps by {d:.3} between adjacent nodes"
            )));
        }
        phase += d;
        out.push(Complex64::new(w[1].norm().ln(), phase));
    }
    let close = (first / values[values.len() - 1]).arg();
    let winding = (phase + close - first.arg()) / (2.0 * PI);
    if winding.abs() > 0.5 {
        return Err(Error::BranchCut(format!(
            "{what} winds {winding:.0} times around 0 along the contour"
        )));
    }
    Ok(out)
}

fn derivs(f: &SpectralFunctional, table: &NodeTable, weights: &[Complex64]) -> Result<Vec<Complex64>> {
    table
        .values
        .iter()
        .zip(weights)
        .map(|(v, w)| Ok(f.eval_deriv(v.z)? * w))
        .collect()
}

/// Raw contour sums of the four mean terms, before the moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanTerms {
    /// `sum f'(z) log(g1(z)) dz`
    pub log_g1: Complex64,
    /// `sum f(z) z^2 m_^3(z) h_m1(z) / g1(z) dz`, present when an estimate is supplied
    pub beta_x: Option<Complex64>,
    /// `sum f'(z) log(1 - y2 S2(z)) dz`
    pub log_g2: Complex64,
    /// `sum f'(z) S2(z) dz`
    pub beta_y: Complex64,
}

impl MeanTerms {
    fn coefficients(&self, ratios: &AspectRatios, moments: &MomentParams) -> Result<[(f64, Complex64); 4]> {
        let km1 = moments.kappa() - 1.0;
        let bx = moments.beta_x();
        let tx = match (self.beta_x, bx != 0.0) {
            (Some(t), _) => t,
            (None, false) => ZERO,
            (None, true) => {
                return Err(Error::Config(
                    "beta_x != 0 requires the h_m1 estimate (raw data matrices)".into(),
                ))
            }
        };
        Ok([
            (-km1 / (4.0 * PI), self.log_g1),
            (-bx * ratios.y1() / (2.0 * PI), tx),
            (-km1 / (4.0 * PI), self.log_g2),
            (moments.beta_y() * ratios.y2() / (4.0 * PI), self.beta_y),
        ])
    }

    /// `E X_f`; the imaginary parts of the sums.
    pub fn value(&self, ratios: &AspectRatios, moments: &MomentParams) -> Result<f64> {
        Ok(self.coefficients(ratios, moments)?.iter().map(|(c, t)| c * t.im).sum())
    }

    /// The same combination of the real parts, which vanishes in the limit.
    pub fn residue(&self, ratios: &AspectRatios, moments: &MomentParams) -> Result<f64> {
        Ok(self.coefficients(ratios, moments)?.iter().map(|(c, t)| c * t.re).sum::<f64>().abs())
    }
}

/// Sum of `f(z) z^2 m_^3(z) h_m1(z) / g1(z) dz` over the estimator grid.
fn beta_x_mean_sum(
    f: &SpectralFunctional,
    table: &NodeTable,
    est: &HEstimator,
    ratios: &AspectRatios,
    rule: ContourRule,
) -> Result<Complex64> {
    if est.values.len() != table.len() {
        return Err(Error::Dimension(format!(
            "h_m1 table has {} nodes, grid has {}",
            est.values.len(),
            table.len()
        )));
    }
    let w = node_weights(&table.steps, rule);
    let mut acc = ZERO;
    for (k, v) in table.values.iter().enumerate() {
        let mu = v.m_under;
        acc += f.eval(v.z)? * v.z * v.z * mu * mu * mu * est.values[k] / v.g1(ratios) * w[k];
    }
    Ok(acc)
}

/// Mean sums over the outer grid's node table. The `h_m1` term, when
/// present, is summed over its own grid.
pub fn mean_terms(
    f: &SpectralFunctional,
    table: &NodeTable,
    ratios: &AspectRatios,
    hm1: Option<(&NodeTable, &HEstimator)>,
    rule: ContourRule,
) -> Result<MeanTerms> {
    let w = node_weights(&table.steps, rule);
    let fp = derivs(f, table, &w)?;
    let y2 = ratios.y2();
    let g1: Vec<Complex64> = table.values.iter().map(|v| v.g1(ratios)).collect();
    let g2: Vec<Complex64> = table.values.iter().map(|v| v.g2(y2)).collect();
    let lg1 = unwrapped_log(&g1, "the first mean log argument")?;
    let lg2 = unwrapped_log(&g2, "1 - y2 S2")?;
    let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<Complex64>();
    let beta_x = match hm1 {
        None => None,
        Some((t, est)) => Some(beta_x_mean_sum(f, t, est, ratios, rule)?),
    };
    let s2: Vec<Complex64> = table.values.iter().map(|v| v.s2).collect();
    Ok(MeanTerms {
        log_g1: dot(&fp, &lg1),
        beta_x,
        log_g2: dot(&fp, &lg2),
        beta_y: dot(&fp, &s2),
    })
}

/// `E X_f` from the outer grid.
pub fn mean_exf(
    f: &SpectralFunctional,
    table: &NodeTable,
    ratios: &AspectRatios,
    moments: &MomentParams,
    hm1: Option<(&NodeTable, &HEstimator)>,
    rule: ContourRule,
) -> Result<f64> {
    if moments.beta_x() != 0.0 && hm1.is_none() {
        return Err(Error::Config("beta_x != 0 requires the h_m1 estimate".into()));
    }
    mean_terms(f, table, ratios, hm1, rule)?.value(ratios, moments)
}

/// Raw double sums of the three covariance terms, `s x s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovTerms {
    pub kappa: DMatrix<Complex64>,
    pub beta_y: DMatrix<Complex64>,
    pub beta_x: Option<DMatrix<Complex64>>,
}

impl CovTerms {
    fn combine(&self, ratios: &AspectRatios, moments: &MomentParams, part: fn(Complex64) -> f64) -> Result<DMatrix<f64>> {
        let ck = -moments.kappa() / (4.0 * PI * PI);
        let cy = -moments.beta_y() * ratios.y2() / (4.0 * PI * PI);
        let bx = moments.beta_x();
        let cx = -bx * ratios.y1() / (4.0 * PI * PI);
        if bx != 0.0 && self.beta_x.is_none() {
            return Err(Error::Config("beta_x != 0 requires the h_v1 estimate (raw data matrices)".into()));
        }
        let s = self.kappa.nrows();
        Ok(DMatrix::from_fn(s, s, |i, j| {
            let x = self.beta_x.as_ref().map_or(0.0, |m| part(m[(i, j)]));
            ck * part(self.kappa[(i, j)]) + cy * part(self.beta_y[(i, j)]) + cx * x
        }))
    }

    /// Covariance matrix with outer functional `i` and inner `j`; not symmetrized.
    pub fn value(&self, ratios: &AspectRatios, moments: &MomentParams) -> Result<DMatrix<f64>> {
        self.combine(ratios, moments, |c| c.re)
    }

    /// Entrywise magnitude of the imaginary parts under the same coefficients.
    pub fn residue(&self, ratios: &AspectRatios, moments: &MomentParams) -> Result<DMatrix<f64>> {
        Ok(self.combine(ratios, moments, |c| c.im)?.abs())
    }
}

/// Row of the log kernel for one outer node against the whole inner table.
///
/// `log(m0(z1) - m0(z2))` is continued along the inner contour. Each phase
/// step is `arg` of the ratio of successive differences, with its branch taken
/// from the split `(z1 - z2) Q`: the angle swept by `z1 - z2` along a straight
/// step is exact, and `Q = (m0(z1) - m0(z2)) / (z1 - z2)` is smooth when `z2`
/// passes close to `z1` on the same side of the support.
fn kernel_row(z1: Complex64, m1: Complex64, inner: &NodeTable, kernel: CovKernel) -> Result<Vec<Complex64>> {
    let n = inner.len();
    let mut out = Vec::with_capacity(n);
    let mut prev: Option<(Complex64, Complex64)> = None;
    let mut phase = 0.0;
    let mut z_phase = 0.0;
    for v in &inner.values {
        let dm = m1 - v.m0;
        if dm.norm() <= 1e-14 * (m1.norm() + v.m0.norm()) {
            return Err(Error::Disjointness(format!(
                "m0({z1}) = m0({}) on the two grids",
                v.z
            )));
        }
        let dz = z1 - v.z;
        match prev {
            None => {
                phase = dm.arg();
                z_phase = dz.arg();
            }
            Some((dm0, dz0)) => {
                let step_z = (dz / dz0).arg();
                let step_m = (dm / dm0).arg();
                let step_q = ((dm / dz) / (dm0 / dz0)).arg();
                let step = if step_q.abs() <= 0.5 * PI {
                    step_z + step_q
                } else if step_m.abs() <= 0.5 * PI {
                    step_m
                } else {
                    return Err(Error::GridTooCoarse(format!(
                        "argument of m0({z1}) - m0(z2) jumps by {step_m:.3} near z2 = {}",
                        v.z
                    )));
                };
                phase += step;
                z_phase += step_z;
            }
        }
        prev = Some((dm, dz));
        let l = Complex64::new(dm.norm().ln(), phase);
        out.push(match kernel {
            CovKernel::Verbatim => l,
            CovKernel::Desingularized => l - Complex64::new(dz.norm().ln(), z_phase),
        });
    }
    Ok(out)
}

/// Blocks used for deterministic parallel reductions over outer nodes.
const REDUCTION_BLOCKS: usize = 16;

/// `h_v1` estimate with the pair of node tables its double sum runs over.
#[derive(Clone, Copy)]
pub struct HvInput<'a> {
    pub est: &'a HEstimator2<'a>,
    pub outer: &'a NodeTable,
    pub inner: &'a NodeTable,
    /// Imaginary offsets used for nodes on the real axis.
    pub offsets: (f64, f64),
}

/// Covariance double sums, outer functionals on `outer`, inner on `inner`.
#[allow(clippy::too_many_arguments)]
pub fn cov_terms(
    fs: &[SpectralFunctional],
    outer: &NodeTable,
    inner: &NodeTable,
    h: &SpectralMeasure,
    hv1: Option<HvInput<'_>>,
    rule: ContourRule,
    kernel: CovKernel,
) -> Result<CovTerms> {
    let s = fs.len();
    let w1 = node_weights(&outer.steps, rule);
    let w2 = node_weights(&inner.steps, rule);
    let b: Vec<Vec<Complex64>> = fs.iter().map(|f| derivs(f, outer, &w1)).collect::<Result<_>>()?;
    let a: Vec<Vec<Complex64>> = fs.iter().map(|f| derivs(f, inner, &w2)).collect::<Result<_>>()?;

    let n1 = outer.len();
    let chunk = n1.div_ceil(REDUCTION_BLOCKS).max(1);
    let blocks: Vec<std::ops::Range<usize>> = (0..n1).step_by(chunk).map(|k| k..(k + chunk).min(n1)).collect();
    let partial: Vec<Result<DMatrix<Complex64>>> = blocks
        .par_iter()
        .map(|range| {
            let mut acc = DMatrix::from_element(s, s, ZERO);
            for k in range.clone() {
                let v = &outer.values[k];
                let row = kernel_row(v.z, v.m0, inner, kernel)?;
                for j in 0..s {
                    let sj: Complex64 = a[j].iter().zip(&row).map(|(x, y)| x * y).sum();
                    for i in 0..s {
                        acc[(i, j)] += b[i][k] * sj;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut kappa = DMatrix::from_element(s, s, ZERO);
    for p in partial {
        kappa += p?;
    }

    let mut beta_y = DMatrix::from_element(s, s, ZERO);
    for &(t, wt) in h.atoms() {
        let side = |coef: &[Vec<Complex64>], table: &NodeTable| -> Vec<Complex64> {
            coef.iter()
                .map(|c| c.iter().zip(&table.values).map(|(x, v)| x / (v.m0 + t)).sum())
                .collect()
        };
        let pi = side(&b, outer);
        let qj = side(&a, inner);
        for i in 0..s {
            for j in 0..s {
                beta_y[(i, j)] += pi[i] * qj[j] * (wt * t * t);
            }
        }
    }

    let beta_x = match hv1 {
        None => None,
        Some(hv) => {
            let scaled = |table: &NodeTable| -> Result<Vec<Vec<Complex64>>> {
                let w = node_weights(&table.steps, rule);
                fs.iter()
                    .map(|f| {
                        let c = derivs(f, table, &w)?;
                        Ok(c.iter().zip(&table.values).map(|(x, v)| x * v.z * v.m_under).collect())
                    })
                    .collect()
            };
            let z1: Vec<Complex64> = hv.outer.values.iter().map(|v| v.z).collect();
            let z2: Vec<Complex64> = hv.inner.values.iter().map(|v| v.z).collect();
            let u1 = scaled(hv.outer)?;
            let u2 = scaled(hv.inner)?;
            let m = hv.est.contract((&z1, &u1, hv.offsets.0), (&z2, &u2, hv.offsets.1))?;
            Some(DMatrix::from_fn(s, s, |i, j| m[i][j]))
        }
    };
    Ok(CovTerms { kappa, beta_y, beta_x })
}

/// `Cov(X_fi, X_fj)` for a single pair.
#[allow(clippy::too_many_arguments)]
pub fn cov_xf(
    fi: &SpectralFunctional,
    fj: &SpectralFunctional,
    outer: &NodeTable,
    inner: &NodeTable,
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    moments: &MomentParams,
    hv1: Option<HvInput<'_>>,
    rule: ContourRule,
    kernel: CovKernel,
) -> Result<f64> {
    if moments.beta_x() != 0.0 && hv1.is_none() {
        return Err(Error::Config("beta_x != 0 requires the h_v1 estimate".into()));
    }
    let fs = [fi.clone(), fj.clone()];
    let t = cov_terms(&fs, outer, inner, h, hv1, rule, kernel)?;
    Ok(t.value(ratios, moments)?[(0, 1)])
}

/// Raw data for the fourth-moment estimators.
#[derive(Debug, Clone, Copy)]
pub struct CltData<'a> {
    pub x: &'a DataMatrix,
    pub y: &'a DataMatrix,
    pub t_half: Option<&'a DataMatrix>,
}

/// Pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CltConfig {
    pub grid: GridParams,
    pub solver: SolverConfig,
    /// Mesh size of the centering density.
    pub centering_mesh: usize,
    /// Imaginary offset of the centering density.
    pub centering_eps: f64,
    pub centering_rule: SumRule,
    pub contour_rule: ContourRule,
    pub kernel: CovKernel,
    /// Support `[c1, c2]`; detected when absent.
    pub support: Option<(f64, f64)>,
    /// Dimension `p` multiplying the centering; taken from the data when present.
    pub dimension: Option<usize>,
    pub estimator_grid: EstimatorGridParams,
    pub estimator_cap: usize,
    pub cache_budget: usize,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            grid: GridParams::default(),
            solver: SolverConfig::default(),
            centering_mesh: 10_000,
            centering_eps: DEFAULT_CENTERING_EPS,
            centering_rule: SumRule::Riemann,
            contour_rule: ContourRule::Trapezoid,
            kernel: CovKernel::Verbatim,
            support: None,
            dimension: None,
            estimator_grid: EstimatorGridParams::default(),
            estimator_cap: estimator::DEFAULT_P_CAP,
            cache_budget: estimator::DEFAULT_CACHE_BUDGET,
        }
    }
}

/// Default imaginary offset for the centering density.
pub const DEFAULT_CENTERING_EPS: f64 = 1e-6;

/// Grid record kept in reports instead of the full node lists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub c1: f64,
    pub c2: f64,
    pub eps: f64,
    pub zeta: f64,
    pub m1: usize,
    pub m2: usize,
    pub nodes: usize,
    pub orientation: f64,
}

impl From<&ContourGrid> for GridRecord {
    fn from(g: &ContourGrid) -> Self {
        Self {
            c1: g.c1,
            c2: g.c2,
            eps: g.eps,
            zeta: g.zeta,
            m1: g.m1,
            m2: g.m2,
            nodes: g.len(),
            orientation: g.orientation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltDiagnostics {
    pub max_residual: f64,
    pub total_iterations: usize,
    /// Largest real-part residue of the mean sums, relative to `1 + |mean|`.
    pub mean_residue: f64,
    /// Largest imaginary-part residue of the covariance sums, relative to `1 + |cov|`.
    pub cov_residue: f64,
    /// Largest `|C_ij - C_ji|` before symmetrization.
    pub cov_asymmetry: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltSummary {
    pub functionals: Vec<SpectralFunctional>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// `p * U_{y_n}(f)`, or `U_{y_n}(f)` when no dimension is known.
    pub centering: Vec<f64>,
    pub dimension: Option<usize>,
    pub ratios: AspectRatios,
    pub moments: MomentParams,
    pub support: (f64, f64),
    pub grids: (GridRecord, GridRecord),
    /// Contours of the `h_m1`, `h_v1` terms, when they were needed.
    pub estimator_grids: Option<(GridRecord, GridRecord)>,
    pub config: CltConfig,
    pub mean_terms: Vec<MeanTerms>,
    pub diagnostics: CltDiagnostics,
}

impl CltSummary {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let s = self.cov.len();
        DMatrix::from_fn(s, s, |i, j| self.cov[i][j])
    }
}

/// Node spacing on the vertical edges; offset for estimator evaluations at
/// nodes on the real axis.
fn vertical_spacing(g: &ContourGrid) -> f64 {
    2.0 * g.zeta / g.m1 as f64
}

/// Support, centering, contours, node solves, mean vector and covariance.
pub fn clt_summary(
    functionals: &[SpectralFunctional],
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    moments: &MomentParams,
    data: Option<CltData<'_>>,
    cfg: &CltConfig,
) -> Result<CltSummary> {
    if functionals.is_empty() {
        return Err(Error::Validation("at least one functional is required".into()));
    }
    cfg.solver.validate()?;
    let needs_data = moments.beta_x() != 0.0;
    if needs_data && data.is_none() {
        return Err(Error::Config("beta_x != 0 requires raw data matrices for the estimators".into()));
    }
    let mut warnings = Vec::new();
    if moments.beta_y() != 0.0 && h.len() > 1 {
        warnings.push(
            "beta_y corrections use the diagonal-population closed forms; they are exact only when T is diagonal"
                .to_string(),
        );
    }

    let support = match cfg.support {
        Some(s) => s,
        None => detect_support(ratios, h, &cfg.solver).stage(Stage::Support)?,
    };

    let fs_ratios = ratios.finite_sample();
    let fs_support = if fs_ratios == *ratios {
        support
    } else {
        detect_support(&fs_ratios, h, &cfg.solver).stage(Stage::Support)?
    };
    let curve = density_on_mesh(
        &fs_ratios,
        h,
        Some(fs_support),
        cfg.centering_mesh,
        cfg.centering_eps,
        &cfg.solver,
    )
    .stage(Stage::Density)?;
    let dimension = data.map(|d| d.x.nrows()).or(cfg.dimension);
    let scale = dimension.map_or(1.0, |p| p as f64);
    let centering: Vec<f64> = functionals
        .iter()
        .map(|f| Ok(scale * integrate_functional_with(f, &curve, cfg.centering_rule)?))
        .collect::<Result<_>>()
        .stage(Stage::Centering)?;

    let (a1, a2) = build_contours(support.0, support.1, &cfg.grid, functionals).stage(Stage::Contour)?;
    let t1 = solve_nodes(&a1, ratios, h, &cfg.solver).stage(Stage::NodeSolve)?;
    let t2 = solve_nodes(&a2, ratios, h, &cfg.solver).stage(Stage::NodeSolve)?;

    let est = match (needs_data, data) {
        (true, Some(d)) => Some(Estimator::new(d.x, d.y, d.t_half, cfg.estimator_cap).stage(Stage::Estimator)?),
        _ => None,
    };
    let est_grids = match &est {
        Some(_) => {
            let (e1, e2) = cfg.estimator_grid.build(support.0, support.1, functionals).stage(Stage::Contour)?;
            let s1 = solve_nodes(&e1, ratios, h, &cfg.solver).stage(Stage::NodeSolve)?;
            let s2 = solve_nodes(&e2, ratios, h, &cfg.solver).stage(Stage::NodeSolve)?;
            Some(((e1, s1), (e2, s2)))
        }
        None => None,
    };
    let hm1 = match (&est, &est_grids) {
        (Some(e), Some(((g, t), _))) => Some(estimate_h_m1(e, t, vertical_spacing(g)).stage(Stage::Estimator)?),
        _ => None,
    };
    let hv1 = est.as_ref().map(|e| HEstimator2::new(e, cfg.cache_budget));

    let mut mean = Vec::with_capacity(functionals.len());
    let mut mean_terms_out = Vec::with_capacity(functionals.len());
    let mut mean_residue: f64 = 0.0;
    let hm1_arg = match (&est_grids, &hm1) {
        (Some(((_, t), _)), Some(hm)) => Some((t, hm)),
        _ => None,
    };
    for f in functionals {
        let terms = mean_terms(f, &t1, ratios, hm1_arg, cfg.contour_rule).stage(Stage::Mean)?;
        let v = terms.value(ratios, moments).stage(Stage::Mean)?;
        let r = terms.residue(ratios, moments).stage(Stage::Mean)?;
        mean_residue = mean_residue.max(r / (1.0 + v.abs()));
        mean.push(v);
        mean_terms_out.push(terms);
    }

    let hv1_arg = match (&est_grids, &hv1) {
        (Some(((g1, s1), (g2, s2))), Some(e)) => Some(HvInput {
            est: e,
            outer: s1,
            inner: s2,
            offsets: (vertical_spacing(g1), vertical_spacing(g2)),
        }),
        _ => None,
    };
    let terms = cov_terms(functionals, &t1, &t2, h, hv1_arg, cfg.contour_rule, cfg.kernel)
        .stage(Stage::Covariance)?;
    let raw = terms.value(ratios, moments).stage(Stage::Covariance)?;
    let res = terms.residue(ratios, moments).stage(Stage::Covariance)?;
    let s = functionals.len();
    let mut cov_residue: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for i in 0..s {
        for j in 0..s {
            cov_residue = cov_residue.max(res[(i, j)] / (1.0 + raw[(i, j)].abs()));
            asym = asym.max((raw[(i, j)] - raw[(j, i)]).abs());
        }
    }
    let cov: Vec<Vec<f64>> = (0..s)
        .map(|i| (0..s).map(|j| 0.5 * (raw[(i, j)] + raw[(j, i)])).collect())
        .collect();

    Ok(CltSummary {
        functionals: functionals.to_vec(),
        mean,
        cov,
        centering,
        dimension,
        ratios: *ratios,
        moments: *moments,
        support,
        grids: ((&a1).into(), (&a2).into()),
        estimator_grids: est_grids.as_ref().map(|((g1, _), (g2, _))| (g1.into(), g2.into())),
        config: cfg.clone(),
        mean_terms: mean_terms_out,
        diagnostics: CltDiagnostics {
            max_residual: t1.max_residual().max(t2.max_residual()),
            total_iterations: t1.total_iterations() + t2.total_iterations(),
            mean_residue,
            cov_residue,
            cov_asymmetry: asym,
            warnings,
        },
    })
}
