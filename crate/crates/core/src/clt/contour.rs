//! Rectangular contour grids around the support and the per-node
//! transform tables the contour sums consume.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{AspectRatios, SpectralFunctional, SpectralMeasure};
use crate::stieltjes::{solve_m0, MasterEquation, SolverConfig};

/// Closed polygon of nodes; consecutive duplicates at the corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub nodes: Vec<Complex64>,
    pub c1: f64,
    pub c2: f64,
    pub eps: f64,
    pub zeta: f64,
    pub m1: usize,
    pub m2: usize,
    /// `+1` when the listed order runs counterclockwise.
    pub orientation: f64,
}

impl ContourGrid {
    /// Rectangle `[c1 - eps, c2 + eps] x [-zeta, zeta]`, listed down the left
    /// edge, along the bottom, up the right edge and back along the top.
    pub fn rectangle(c1: f64, c2: f64, eps: f64, zeta: f64, m1: usize, m2: usize) -> Self {
        let left = c1 - eps;
        let right = c2 + eps;
        // corners land exactly on the rectangle's vertices
        let lerp = |a: f64, b: f64, j: usize, m: usize| if j == m { b } else { a + (b - a) * j as f64 / m as f64 };
        let mut nodes = Vec::with_capacity(2 * m1 + 2 * m2 + 4);
        for k in 0..=m1 {
            nodes.push(Complex64::new(left, lerp(zeta, -zeta, k, m1)));
        }
        for j in 0..=m2 {
            nodes.push(Complex64::new(lerp(left, right, j, m2), -zeta));
        }
        for k in 0..=m1 {
            nodes.push(Complex64::new(right, lerp(-zeta, zeta, k, m1)));
        }
        for j in 0..=m2 {
            nodes.push(Complex64::new(lerp(right, left, j, m2), zeta));
        }
        let area = signed_area(&nodes);
        Self {
            nodes,
            c1,
            c2,
            eps,
            zeta,
            m1,
            m2,
            orientation: area.signum(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `z_{k+1} - z_k` with the closing step back to the first node.
    pub fn steps(&self) -> Vec<Complex64> {
        let n = self.nodes.len();
        (0..n).map(|k| self.nodes[(k + 1) % n] - self.nodes[k]).collect()
    }

    /// Index ranges of the four edges.
    pub fn segments(&self) -> [std::ops::Range<usize>; 4] {
        let a = self.m1 + 1;
        let b = a + self.m2 + 1;
        let c = b + self.m1 + 1;
        [0..a, a..b, b..c, c..self.nodes.len()]
    }

    /// Distance from `z` to the polygon.
    pub fn distance_to(&self, z: Complex64) -> f64 {
        let n = self.nodes.len();
        (0..n)
            .map(|k| segment_distance(z, self.nodes[k], self.nodes[(k + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn signed_area(nodes: &[Complex64]) -> f64 {
    let n = nodes.len();
    0.5 * (0..n)
        .map(|k| {
            let a = nodes[k];
            let b = nodes[(k + 1) % n];
            a.re * b.im - b.re * a.im
        })
        .sum::<f64>()
}

fn segment_distance(z: Complex64, a: Complex64, b: Complex64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (z - a).norm();
    }
    let t = (((z - a) * d.conj()).re / len2).clamp(0.0, 1.0);
    (z - (a + d * t)).norm()
}

/// Contour geometry parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    pub eps: f64,
    pub zeta: f64,
    pub m1: usize,
    pub m2: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            zeta: 1e-3,
            m1: 1000,
            m2: 1000,
        }
    }
}

/// Geometry of the contours carrying the data-driven `h_m1`, `h_v1` terms.
///
/// Sample resolvents only track their limits at a distance from the
/// spectrum, so these contours sit well away from the support. Margins left
/// as `None` are chosen from the support and the functionals' domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorGridParams {
    pub eps: Option<f64>,
    pub zeta: Option<f64>,
    pub m1: usize,
    pub m2: usize,
}

impl Default for EstimatorGridParams {
    fn default() -> Self {
        Self { eps: None, zeta: None, m1: 100, m2: 200 }
    }
}

impl EstimatorGridParams {
    /// Resolved margins: half the room left of `c1` (bounded by the origin
    /// and every cut), at most a quarter of the support width, and a vertical
    /// margin of half the width.
    pub fn margins(&self, c1: f64, c2: f64, functionals: &[SpectralFunctional]) -> (f64, f64) {
        let lo = functionals.iter().map(|f| f.analytic_interval().0).fold(0.0, f64::max);
        let width = c2 - c1;
        let eps = self.eps.unwrap_or_else(|| (0.5 * (c1 - lo)).min(0.25 * width));
        let zeta = self.zeta.unwrap_or(0.5 * width).max(eps);
        (eps, zeta)
    }

    pub fn build(
        &self,
        c1: f64,
        c2: f64,
        functionals: &[SpectralFunctional],
    ) -> Result<(ContourGrid, ContourGrid)> {
        let (eps, zeta) = self.margins(c1, c2, functionals);
        build_contours(c1, c2, &GridParams { eps, zeta, m1: self.m1, m2: self.m2 }, functionals)
    }
}

/// Outer grid at margins `(eps, zeta)` and inner grid at `(eps/2, zeta/2)`.
///
/// Functionals with a cut on the negative axis require `c1 - eps > 0`.
pub fn build_contours(
    c1: f64,
    c2: f64,
    params: &GridParams,
    functionals: &[SpectralFunctional],
) -> Result<(ContourGrid, ContourGrid)> {
    let GridParams { eps, zeta, m1, m2 } = *params;
    if !(c1 < c2) {
        return Err(Error::Validation(format!("support [{c1}, {c2}] is empty")));
    }
    if !(eps > 0.0 && zeta > 0.0) {
        return Err(Error::Validation(format!("eps = {eps} and zeta = {zeta} must be positive")));
    }
    if m1 < 4 || m2 < 4 {
        return Err(Error::Validation(format!("m1 = {m1}, m2 = {m2} must be at least 4")));
    }
    for f in functionals {
        let (lo, hi) = f.analytic_interval();
        if c1 - eps <= lo || c2 + eps >= hi {
            return Err(Error::BranchCut(format!(
                "contour [{}, {}] meets the cut of {} outside ({lo}, {hi})",
                c1 - eps,
                c2 + eps,
                f.describe()
            )));
        }
    }
    let outer = ContourGrid::rectangle(c1, c2, eps, zeta, m1, m2);
    let inner = ContourGrid::rectangle(c1, c2, 0.5 * eps, 0.5 * zeta, m1, m2);
    Ok((outer, inner))
}

/// Solved transforms and spectral sums at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub z: Complex64,
    pub m0: Complex64,
    pub m_under: Complex64,
    /// `sum w m0 / (l + m0)`
    pub s1: Complex64,
    /// `sum w m0^2 / (l + m0)^2`
    pub s2: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

impl NodeValue {
    /// `1 - y2 S2`
    pub fn g2(&self, y2: f64) -> Complex64 {
        -self.s2 * y2 + 1.0
    }

    /// `h^2/y2 - (y1/y2) (1 - y2 S1)^2 / (1 - y2 S2)`
    pub fn g1(&self, ratios: &AspectRatios) -> Complex64 {
        let y1 = ratios.y1();
        let y2 = ratios.y2();
        let a = -self.s1 * y2 + 1.0;
        -(a * a / self.g2(y2)) * (y1 / y2) + ratios.h_sq() / y2
    }
}

/// Node values for a whole grid, index-aligned with `grid.nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTable {
    pub values: Vec<NodeValue>,
    pub steps: Vec<Complex64>,
}

impl NodeTable {
    pub fn max_residual(&self) -> f64 {
        self.values.iter().map(|v| v.residual).fold(0.0, f64::max)
    }

    pub fn total_iterations(&self) -> usize {
        self.values.iter().map(|v| v.iterations).sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Offset used for nodes that sit exactly on the real axis (outside the
/// support, where the transforms are real-analytic).
fn axis_offset(x: f64) -> f64 {
    1e-12 * x.abs().max(1.0)
}

fn node_value(eq: &MasterEquation, z: Complex64, cfg: &SolverConfig) -> Result<NodeValue> {
    let (target, on_axis) = if z.im == 0.0 {
        (Complex64::new(z.re, axis_offset(z.re)), true)
    } else {
        (z, false)
    };
    let t = solve_m0(target, eq.ratios, eq.h, cfg)?;
    let (m0, m_under) = if on_axis {
        (Complex64::new(t.m0.re, 0.0), Complex64::new(t.m_under.re, 0.0))
    } else {
        (t.m0, t.m_under)
    };
    let sums = eq.sums(m0);
    Ok(NodeValue {
        z,
        m0,
        m_under,
        s1: sums.s1,
        s2: sums.s2,
        residual: eq.residual(z, m0),
        iterations: t.iterations,
    })
}

/// Solves every node, one warm-started chain per edge.
pub fn solve_nodes(
    grid: &ContourGrid,
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    cfg: &SolverConfig,
) -> Result<NodeTable> {
    let eq = MasterEquation::new(ratios, h);
    let segs = grid.segments();
    let parts: Vec<Result<Vec<NodeValue>>> = segs
        .par_iter()
        .map(|range| {
            let mut out = Vec::with_capacity(range.len());
            let mut warm: Option<Complex64> = None;
            for &z in &grid.nodes[range.clone()] {
                let mut c = cfg.cold();
                if let Some(m) = warm {
                    c.warm_start = Some(if m.im * z.im > 0.0 { m.conj() } else { m });
                }
                let v = node_value(&eq, z, &c)?;
                warm = Some(v.m0);
                out.push(v);
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    for p in parts {
        values.extend(p?);
    }
    Ok(NodeTable {
        values,
        steps: grid.steps(),
    })
}
