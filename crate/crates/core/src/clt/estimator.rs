//! Data-driven estimates of the fourth-moment limit functionals
//!
//! ```text
//! h_m1(z)      ~ (n1 p)^{-1} sum_{j,i} B1ij(z) B2ij(z)
//! h_v1(z1, z2) ~ (n1 p)^{-1} sum_{j,i} B1ij(z1) B1ij(z2)
//! ```
//!
//! with `B1ij = c_i* D_j^{-1} c_i`, `B2ij = c_i* D_j^{-1} (m_ N + I)^{-1} c_i`,
//! `M = S2^{-1/2} T^{1/2}`, `c_i = M e_i`, `N = M* M` and
//! `D_j = M (S1 - x_j x_j* / n1) M* - z`. Each `D_j^{-1}` is a rank-one
//! update of `(M S1 M* - z)^{-1}`, so one eigendecomposition serves all `j`.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::clt::contour::NodeTable;
use crate::error::{Error, Result};
use crate::fisher::DataMatrix;

/// Default cap on the dimension accepted by the estimator.
pub const DEFAULT_P_CAP: usize = 500;
/// Default number of cached per-node `B1` tables.
pub const DEFAULT_CACHE_BUDGET: usize = 64;

/// Complex matrix held as real and imaginary parts so that products run on
/// real GEMM kernels. `im = None` means a real matrix.
#[derive(Debug, Clone)]
struct CMat {
    re: DMatrix<f64>,
    im: Option<DMatrix<f64>>,
}

impl CMat {
    fn real(re: DMatrix<f64>) -> Self {
        Self { re, im: None }
    }

    fn from_complex(m: &DMatrix<Complex64>) -> Self {
        Self {
            re: m.map(|c| c.re),
            im: Some(m.map(|c| c.im)),
        }
    }

    fn from_data(m: &DataMatrix) -> Self {
        match m {
            DataMatrix::Real(r) => Self::real(r.clone()),
            DataMatrix::Complex(c) => Self::from_complex(c),
        }
    }

    fn nrows(&self) -> usize {
        self.re.nrows()
    }

    fn ncols(&self) -> usize {
        self.re.ncols()
    }

    fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[(i, j)], self.im.as_ref().map_or(0.0, |m| m[(i, j)]))
    }

    fn adjoint(&self) -> Self {
        Self {
            re: self.re.transpose(),
            im: self.im.as_ref().map(|m| -m.transpose()),
        }
    }

    fn mul(&self, other: &CMat) -> CMat {
        let re = &self.re * &other.re;
        match (&self.im, &other.im) {
            (None, None) => CMat::real(re),
            (Some(ai), None) => CMat { re, im: Some(ai * &other.re) },
            (None, Some(bi)) => CMat { re, im: Some(&self.re * bi) },
            (Some(ai), Some(bi)) => {
                let re = re - ai * bi;
                let im = &self.re * bi + ai * &other.re;
                CMat { re, im: Some(im) }
            }
        }
    }

    /// `diag(d) * self`
    fn scale_rows(&self, d: &[Complex64]) -> CMat {
        let (r, c) = (self.nrows(), self.ncols());
        let mut re = DMatrix::zeros(r, c);
        let mut im = DMatrix::zeros(r, c);
        for j in 0..c {
            for i in 0..r {
                let v = d[i] * self.get(i, j);
                re[(i, j)] = v.re;
                im[(i, j)] = v.im;
            }
        }
        CMat { re, im: Some(im) }
    }

    /// `self * diag(d)`
    fn scale_cols(&self, d: &[Complex64]) -> CMat {
        let (r, c) = (self.nrows(), self.ncols());
        let mut re = DMatrix::zeros(r, c);
        let mut im = DMatrix::zeros(r, c);
        for j in 0..c {
            for i in 0..r {
                let v = self.get(i, j) * d[j];
                re[(i, j)] = v.re;
                im[(i, j)] = v.im;
            }
        }
        CMat { re, im: Some(im) }
    }
}

/// Hermitian eigendecomposition; complex inputs go through the real
/// `2p x 2p` embedding `[[A, -B], [B, A]]`, whose spectrum doubles that of `A + iB`.
fn hermitian_eigen(a: &CMat) -> (DVector<f64>, CMat) {
    match &a.im {
        None => {
            let e = a.re.clone().symmetric_eigen();
            (e.eigenvalues, CMat::real(e.eigenvectors))
        }
        Some(b) => {
            let p = a.nrows();
            let mut big = DMatrix::zeros(2 * p, 2 * p);
            big.view_mut((0, 0), (p, p)).copy_from(&a.re);
            big.view_mut((p, p), (p, p)).copy_from(&a.re);
            big.view_mut((p, 0), (p, p)).copy_from(b);
            big.view_mut((0, p), (p, p)).copy_from(&(-b));
            let e = big.symmetric_eigen();
            let mut order: Vec<usize> = (0..2 * p).collect();
            order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
            // eigenvalues come in pairs; pairs give (u, v) and (-v, u) for the
            // complex vector u + i v. Gram-Schmidt in C^p picks one per pair.
            let mut vals = Vec::with_capacity(p);
            let mut vecs: Vec<DVector<Complex64>> = Vec::with_capacity(p);
            for &k in &order {
                let col = e.eigenvectors.column(k);
                let mut v = DVector::from_fn(p, |i, _| Complex64::new(col[i], col[i + p]));
                for u in &vecs {
                    let proj = u.dotc(&v);
                    v -= u * proj;
                }
                let n = v.norm();
                if n > 0.5 {
                    v /= Complex64::new(n, 0.0);
                    vals.push(e.eigenvalues[k]);
                    vecs.push(v);
                }
                if vecs.len() == p {
                    break;
                }
            }
            let u = DMatrix::from_fn(p, p, |i, j| vecs[j][i]);
            (DVector::from_vec(vals), CMat::from_complex(&u))
        }
    }
}

/// Per-node `B1ij` values, `p x n1`.
#[derive(Debug, Clone)]
pub struct B1Table {
    pub z: Complex64,
    values: CMat,
}

impl B1Table {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values.get(i, j)
    }

    fn conj(&self) -> B1Table {
        B1Table {
            z: self.z.conj(),
            values: CMat {
                re: self.values.re.clone(),
                im: self.values.im.as_ref().map(|m| -m),
            },
        }
    }
}

/// Data-dependent precomputation shared by all nodes.
#[derive(Debug, Clone)]
pub struct Estimator {
    p: usize,
    n1: usize,
    real: bool,
    /// eigenvalues of `A = M S1 M*`
    lambda: Vec<f64>,
    /// `U* M`
    c: CMat,
    /// `U* M X / sqrt(n1)`
    r: CMat,
    /// eigenvalues of `N = M* M`
    sigma: Vec<f64>,
    /// `U* V`
    k: CMat,
    /// `V* M`
    w: CMat,
    scale: f64,
}

fn gram(x: &CMat, n: usize) -> CMat {
    let mut s = x.mul(&x.adjoint());
    s.re /= n as f64;
    if let Some(im) = s.im.as_mut() {
        *im /= n as f64;
    }
    hermitize(&mut s);
    s
}

fn hermitize(s: &mut CMat) {
    let re = 0.5 * (&s.re + s.re.transpose());
    s.re = re;
    if let Some(im) = s.im.as_mut() {
        *im = 0.5 * (&*im - im.transpose());
    }
}

impl Estimator {
    /// `x`, `y` are the standardized samples (`p x n1`, `p x n2`); `t_half`
    /// defaults to the identity.
    pub fn new(x: &DataMatrix, y: &DataMatrix, t_half: Option<&DataMatrix>, p_cap: usize) -> Result<Self> {
        let p = x.nrows();
        let n1 = x.ncols();
        let n2 = y.ncols();
        if y.nrows() != p {
            return Err(Error::Dimension(format!("X has {p} rows but Y has {}", y.nrows())));
        }
        if p > p_cap {
            return Err(Error::Config(format!("estimator dimension p = {p} exceeds the cap {p_cap}")));
        }
        if n2 <= p {
            return Err(Error::Dimension(format!("estimator needs n2 = {n2} > p = {p}")));
        }
        let xm = CMat::from_data(x);
        let ym = CMat::from_data(y);
        let s1 = gram(&xm, n1);
        let s2 = gram(&ym, n2);
        let (s2_vals, s2_vecs) = hermitian_eigen(&s2);
        let smin = s2_vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = s2_vals.iter().cloned().fold(0.0, f64::max);
        if !(smin > 0.0) || smax / smin > 1e12 {
            return Err(Error::Conditioning(format!("S2 condition {:e} too large", smax / smin)));
        }
        let inv_sqrt: Vec<Complex64> = s2_vals.iter().map(|&s| Complex64::new(s.powf(-0.5), 0.0)).collect();
        let mut s2_isqrt = s2_vecs.scale_cols(&inv_sqrt).mul(&s2_vecs.adjoint());
        if s2_vecs.im.is_none() {
            s2_isqrt.im = None;
        }
        hermitize(&mut s2_isqrt);
        let m = match t_half {
            Some(t) => {
                if t.nrows() != p || t.ncols() != p {
                    return Err(Error::Dimension(format!("T_half must be {p}x{p}")));
                }
                s2_isqrt.mul(&CMat::from_data(t))
            }
            None => s2_isqrt,
        };
        let mut a = m.mul(&s1).mul(&m.adjoint());
        hermitize(&mut a);
        let (lambda, u) = hermitian_eigen(&a);
        let mut n = m.adjoint().mul(&m);
        hermitize(&mut n);
        let (sigma, v) = hermitian_eigen(&n);
        let ua = u.adjoint();
        let c = ua.mul(&m);
        let mut r = ua.mul(&m).mul(&xm);
        r.re /= (n1 as f64).sqrt();
        if let Some(im) = r.im.as_mut() {
            *im /= (n1 as f64).sqrt();
        }
        let k = ua.mul(&v);
        let w = v.adjoint().mul(&m);
        let scale = lambda.iter().cloned().fold(0.0, f64::max).max(1.0);
        Ok(Self {
            p,
            n1,
            real: !x.is_complex() && t_half.is_none_or(|t| !t.is_complex()),
            lambda: lambda.iter().copied().collect(),
            c,
            r,
            sigma: sigma.iter().copied().collect(),
            k,
            w,
            scale,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    /// True when `B(conj z) = conj B(z)` holds exactly.
    pub fn is_real(&self) -> bool {
        self.real
    }

    fn resolvent_diag(&self, z: Complex64) -> Result<Vec<Complex64>> {
        let mut d = Vec::with_capacity(self.p);
        for &l in &self.lambda {
            let gap = Complex64::new(l, 0.0) - z;
            if gap.norm() <= 1e-12 * self.scale {
                return Err(Error::Conditioning(format!("z = {z} coincides with a sample eigenvalue {l}")));
            }
            d.push(gap.inv());
        }
        Ok(d)
    }

    /// `alpha_ij = c_i* R r_j`, `alpha'_ji = r_j* R c_i`, `gamma_j = 1 - r_j* R r_j`.
    fn pieces(&self, d: &[Complex64], z: Complex64) -> Result<(CMat, CMat, CMat, Vec<Complex64>)> {
        let dr = self.r.scale_rows(d);
        let alpha = self.c.adjoint().mul(&dr);
        let alpha_t = if self.real {
            CMat { re: alpha.re.transpose(), im: alpha.im.as_ref().map(|m| m.transpose()) }
        } else {
            self.r.adjoint().mul(&self.c.scale_rows(d))
        };
        let mut denom = Vec::with_capacity(self.n1);
        for j in 0..self.n1 {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..self.p {
                acc += self.r.get(k, j).norm_sqr() * d[k];
            }
            let g = Complex64::new(1.0, 0.0) - acc;
            if g.norm() <= 1e-12 {
                return Err(Error::Conditioning(format!(
                    "D_{j}(z) is singular at z = {z} (rank-one update denominator {g})"
                )));
            }
            denom.push(g);
        }
        Ok((dr, alpha, alpha_t, denom))
    }

    fn diag_terms(&self, d: &[Complex64], other: &CMat) -> Vec<Complex64> {
        (0..self.p)
            .map(|i| {
                (0..self.p)
                    .map(|k| self.c.get(k, i).conj() * d[k] * other.get(k, i))
                    .sum()
            })
            .collect()
    }

    /// `B1ij(z)` for all `i, j`.
    pub fn b1(&self, z: Complex64) -> Result<B1Table> {
        let d = self.resolvent_diag(z)?;
        let (_, alpha, alpha_t, denom) = self.pieces(&d, z)?;
        let delta = self.diag_terms(&d, &self.c);
        let mut re = DMatrix::zeros(self.p, self.n1);
        let mut im = DMatrix::zeros(self.p, self.n1);
        for j in 0..self.n1 {
            let inv = denom[j].inv();
            for i in 0..self.p {
                let v = delta[i] + alpha.get(i, j) * alpha_t.get(j, i) * inv;
                re[(i, j)] = v.re;
                im[(i, j)] = v.im;
            }
        }
        Ok(B1Table { z, values: CMat { re, im: Some(im) } })
    }

    /// `h_m1` estimate at `z` given the companion transform `m_(z)`.
    pub fn h_m1(&self, z: Complex64, m_under: Complex64) -> Result<Complex64> {
        let d = self.resolvent_diag(z)?;
        let (dr, alpha, alpha_t, denom) = self.pieces(&d, z)?;
        let g: Vec<Complex64> = self
            .sigma
            .iter()
            .map(|&s| (m_under * s + 1.0).inv())
            .collect();
        // P~ = U* (m_ N + I)^{-1} M = K diag(g) W
        let ptil = self.k.scale_cols(&g).mul(&self.w);
        let delta = self.diag_terms(&d, &self.c);
        let pi = self.diag_terms(&d, &ptil);
        // beta_ji = r_j* R p_i
        let rd = if self.real {
            CMat { re: dr.re.transpose(), im: dr.im.as_ref().map(|m| m.transpose()) }
        } else {
            self.r.adjoint().scale_cols(&d)
        };
        let beta = rd.mul(&self.k).scale_cols(&g).mul(&self.w);
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..self.n1 {
            let inv = denom[j].inv();
            for i in 0..self.p {
                let a = alpha.get(i, j) * inv;
                let b1 = delta[i] + a * alpha_t.get(j, i);
                let b2 = pi[i] + a * beta.get(j, i);
                acc += b1 * b2;
            }
        }
        Ok(acc / (self.n1 * self.p) as f64)
    }
}

/// Key grouping a node with its complex conjugate.
fn conj_key(z: Complex64) -> (u64, u64) {
    (z.re.to_bits(), z.im.abs().to_bits())
}

/// Tabulated `h_m1` at the nodes of one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HEstimator {
    pub nodes: Vec<Complex64>,
    pub values: Vec<Complex64>,
}

impl HEstimator {
    pub fn value(&self, k: usize) -> Complex64 {
        self.values[k]
    }
}

/// Evaluates `h_m1` at every node of `table`. Nodes on the real axis use
/// `Re h_m1(x + i axis_offset)`; for real data conjugate nodes share one
/// evaluation.
pub fn estimate_h_m1(est: &Estimator, table: &NodeTable, axis_offset: f64) -> Result<HEstimator> {
    use rayon::prelude::*;
    let mut reps: Vec<usize> = Vec::new();
    let mut slot: Vec<usize> = Vec::with_capacity(table.len());
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (k, v) in table.values.iter().enumerate() {
        let key = if est.is_real() { conj_key(v.z) } else { (v.z.re.to_bits(), v.z.im.to_bits()) };
        let idx = *seen.entry(key).or_insert_with(|| {
            reps.push(k);
            reps.len() - 1
        });
        slot.push(idx);
    }
    let computed: Vec<Result<Complex64>> = reps
        .par_iter()
        .map(|&k| {
            let v = &table.values[k];
            if v.z.im == 0.0 {
                let z = Complex64::new(v.z.re, axis_offset);
                Ok(Complex64::new(est.h_m1(z, v.m_under)?.re, 0.0))
            } else {
                est.h_m1(v.z, v.m_under)
            }
        })
        .collect();
    let computed: Vec<Complex64> = computed.into_iter().collect::<Result<_>>()?;
    let values = table
        .values
        .iter()
        .zip(&slot)
        .map(|(v, &s)| {
            let rep = &table.values[reps[s]];
            if rep.z == v.z {
                computed[s]
            } else {
                computed[s].conj()
            }
        })
        .collect();
    Ok(HEstimator {
        nodes: table.values.iter().map(|v| v.z).collect(),
        values,
    })
}

/// `h_v1` with cached per-node `B1` tables.
#[derive(Debug)]
pub struct HEstimator2<'a> {
    est: &'a Estimator,
    budget: usize,
    cache: Mutex<HashMap<(u64, u64), std::sync::Arc<B1Table>>>,
}

impl<'a> HEstimator2<'a> {
    pub fn new(est: &'a Estimator, budget: usize) -> Self {
        Self { est, budget, cache: Mutex::new(HashMap::new()) }
    }

    pub fn estimator(&self) -> &Estimator {
        self.est
    }

    fn table(&self, z: Complex64) -> Result<std::sync::Arc<B1Table>> {
        let key = (z.re.to_bits(), z.im.to_bits());
        if let Some(t) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        let t = std::sync::Arc::new(self.est.b1(z)?);
        let mut cache = self.cache.lock().expect("cache poisoned");
        if cache.len() >= self.budget {
            cache.clear();
        }
        cache.insert(key, t.clone());
        Ok(t)
    }

    /// `h_v1(z1, z2)`.
    pub fn eval(&self, z1: Complex64, z2: Complex64) -> Result<Complex64> {
        let a = self.table(z1)?;
        let b = self.table(z2)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..self.est.n1 {
            for i in 0..self.est.p {
                acc += a.get(i, j) * b.get(i, j);
            }
        }
        Ok(acc / (self.est.n1 * self.est.p) as f64)
    }

    /// `sum_{j,i} W1_a(i,j) W2_b(i,j) / (n1 p)` for every pair `(a, b)`, where
    /// `Wg_a(i,j) = sum_k weights_g[a][k] B1ij(z_gk)`. This is the double sum
    /// `sum_k sum_l w1[a][k] w2[b][l] h_v1(z1k, z2l)` without forming pairs.
    pub fn contract(
        &self,
        (nodes1, weights1, offset1): (&[Complex64], &[Vec<Complex64>], f64),
        (nodes2, weights2, offset2): (&[Complex64], &[Vec<Complex64>], f64),
    ) -> Result<Vec<Vec<Complex64>>> {
        let w1 = self.accumulate(nodes1, weights1, offset1)?;
        let w2 = self.accumulate(nodes2, weights2, offset2)?;
        let norm = (self.est.n1 * self.est.p) as f64;
        Ok(w1
            .iter()
            .map(|a| {
                w2.iter()
                    .map(|b| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (x, y) in a.iter().zip(b) {
                            acc += x * y;
                        }
                        acc / norm
                    })
                    .collect()
            })
            .collect())
    }

    fn accumulate(
        &self,
        nodes: &[Complex64],
        weights: &[Vec<Complex64>],
        axis_offset: f64,
    ) -> Result<Vec<Vec<Complex64>>> {
        use rayon::prelude::*;
        let size = self.est.p * self.est.n1;
        let mut groups: Vec<(Complex64, Vec<usize>)> = Vec::new();
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        for (k, &z) in nodes.iter().enumerate() {
            let key = if self.est.is_real() { conj_key(z) } else { (z.re.to_bits(), z.im.to_bits()) };
            match seen.get(&key) {
                Some(&g) => groups[g].1.push(k),
                None => {
                    seen.insert(key, groups.len());
                    groups.push((z, vec![k]));
                }
            }
        }
        let s = weights.len();
        // fixed chunking keeps the reduction order independent of threads
        let chunk = groups.len().div_ceil(16).max(1);
        let partials: Vec<Result<Vec<Vec<Complex64>>>> = groups
            .par_chunks(chunk)
            .map(|gs| {
                let mut acc = vec![vec![Complex64::new(0.0, 0.0); size]; s];
                for (z, members) in gs {
                    let table = if z.im == 0.0 {
                        let t = self.est.b1(Complex64::new(z.re, axis_offset))?;
                        B1Table { z: *z, values: CMat::real(t.values.re) }
                    } else {
                        self.est.b1(*z)?
                    };
                    let conj = table.conj();
                    for &k in members {
                        let t = if nodes[k] == *z { &table } else { &conj };
                        for (a, w) in weights.iter().enumerate() {
                            let wk = w[k];
                            if wk == Complex64::new(0.0, 0.0) {
                                continue;
                            }
                            let dst = &mut acc[a];
                            for j in 0..self.est.n1 {
                                for i in 0..self.est.p {
                                    dst[j * self.est.p + i] += wk * t.get(i, j);
                                }
                            }
                        }
                    }
                }
                Ok(acc)
            })
            .collect();
        let mut total = vec![vec![Complex64::new(0.0, 0.0); size]; s];
        for part in partials {
            let part = part?;
            for (t, p) in total.iter_mut().zip(part) {
                for (x, y) in t.iter_mut().zip(p) {
                    *x += y;
                }
            }
        }
        Ok(total)
    }
}
