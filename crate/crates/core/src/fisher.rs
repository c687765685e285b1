//! Sample covariances, Fisher eigenvalues and spectral statistics of data.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{integrate_functional, DensityCurve};
use crate::error::{Error, Result};
use crate::measures::{AspectRatios, SpectralFunctional};

/// Eigenvalues below this multiple of the largest are treated as exact zeros.
const ZERO_RELATIVE: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;

/// A data or covariance matrix over the real or complex field.
#[derive(Debug, Clone, PartialEq)]
pub enum DataMatrix {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl DataMatrix {
    pub fn nrows(&self) -> usize {
        match self {
            DataMatrix::Real(m) => m.nrows(),
            DataMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            DataMatrix::Real(m) => m.ncols(),
            DataMatrix::Complex(m) => m.ncols(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, DataMatrix::Complex(_))
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        match self {
            DataMatrix::Real(m) => m.map(|v| Complex64::new(v, 0.0)),
            DataMatrix::Complex(m) => m.clone(),
        }
    }

    /// Permutes columns by `perm` (column `k` of the result is column `perm[k]`).
    pub fn permute_columns(&self, perm: &[usize]) -> DataMatrix {
        match self {
            DataMatrix::Real(m) => DataMatrix::Real(m.select_columns(perm)),
            DataMatrix::Complex(m) => DataMatrix::Complex(m.select_columns(perm)),
        }
    }

    pub fn scale(&self, c: f64) -> DataMatrix {
        match self {
            DataMatrix::Real(m) => DataMatrix::Real(m * c),
            DataMatrix::Complex(m) => DataMatrix::Complex(m * Complex64::new(c, 0.0)),
        }
    }
}

/// Two independent samples stored variables-by-observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSample {
    pub x: DataMatrix,
    pub y: DataMatrix,
    pub centered: bool,
}

impl TwoSample {
    pub fn new(x: DataMatrix, y: DataMatrix, centered: bool) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.is_complex() != y.is_complex() {
            return Err(Error::Dimension("X and Y must be over the same field".into()));
        }
        let s = Self { x, y, centered };
        if s.x.nrows() == 0 || s.x.ncols() == 0 {
            return Err(Error::Dimension("empty sample".into()));
        }
        if s.effective_n2() <= s.p() {
            return Err(Error::Dimension(format!(
                "need more effective observations in Y ({}) than variables ({})",
                s.effective_n2(),
                s.p()
            )));
        }
        if centered && s.n1() < 2 {
            return Err(Error::Dimension("centering needs at least two columns in X".into()));
        }
        Ok(s)
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }
    pub fn n1(&self) -> usize {
        self.x.ncols()
    }
    pub fn n2(&self) -> usize {
        self.y.ncols()
    }

    fn effective(&self, n: usize) -> usize {
        if self.centered {
            n.saturating_sub(1)
        } else {
            n
        }
    }

    pub fn effective_n1(&self) -> usize {
        self.effective(self.n1())
    }
    pub fn effective_n2(&self) -> usize {
        self.effective(self.n2())
    }

    /// `p / N1`, `p / N2` with the effective sample sizes.
    pub fn ratios(&self) -> Result<AspectRatios> {
        AspectRatios::from_dims(self.p(), self.effective_n1(), self.effective_n2())
    }

    pub fn swapped(&self) -> Result<Self> {
        Self::new(self.y.clone(), self.x.clone(), self.centered)
    }
}

fn covariance<T: ComplexField<RealField = f64> + Copy>(x: &DMatrix<T>, centered: bool) -> DMatrix<T> {
    let n = x.ncols();
    let (data, divisor) = if centered {
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) * T::from_real(1.0 / n as f64);
            for v in row.iter_mut() {
                *v -= mean;
            }
        }
        (c, (n - 1) as f64)
    } else {
        (x.clone(), n as f64)
    };
    let mut s = &data * data.adjoint();
    s *= T::from_real(1.0 / divisor);
    hermitize(&mut s);
    s
}

fn hermitize<T: ComplexField<RealField = f64> + Copy>(s: &mut DMatrix<T>) {
    let p = s.nrows();
    for i in 0..p {
        s[(i, i)] = T::from_real(s[(i, i)].real());
        for j in (i + 1)..p {
            let v = (s[(i, j)] + s[(j, i)].conjugate()) * T::from_real(0.5);
            s[(i, j)] = v;
            s[(j, i)] = v.conjugate();
        }
    }
}

fn sandwich<T: ComplexField<RealField = f64> + Copy>(half: &DMatrix<T>, s: &DMatrix<T>) -> DMatrix<T> {
    let mut b = half * s * half.adjoint();
    hermitize(&mut b);
    b
}

/// `B_i = Sigma_i^{1/2} S_i (Sigma_i^{1/2})*` (or `S_i` when no half is given).
/// Divisors are `n_i`, or `n_i - 1` for centered samples.
pub fn sample_covariances(
    sample: &TwoSample,
    sigma1_half: Option<&DataMatrix>,
    sigma2_half: Option<&DataMatrix>,
) -> Result<(DataMatrix, DataMatrix)> {
    let p = sample.p();
    for (name, h) in [("Sigma1_half", sigma1_half), ("Sigma2_half", sigma2_half)] {
        if let Some(h) = h {
            if h.nrows() != p || h.ncols() != p {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {p}x{p}",
                    h.nrows(),
                    h.ncols()
                )));
            }
        }
    }
    let one = |x: &DataMatrix, half: Option<&DataMatrix>| -> DataMatrix {
        match x {
            DataMatrix::Real(m) => {
                let s = covariance(m, sample.centered);
                match half {
                    Some(DataMatrix::Real(h)) => DataMatrix::Real(sandwich(h, &s)),
                    Some(h) => DataMatrix::Complex(sandwich(
                        &h.to_complex(),
                        &s.map(|v| Complex64::new(v, 0.0)),
                    )),
                    None => DataMatrix::Real(s),
                }
            }
            DataMatrix::Complex(m) => {
                let s = covariance(m, sample.centered);
                match half {
                    Some(h) => DataMatrix::Complex(sandwich(&h.to_complex(), &s)),
                    None => DataMatrix::Complex(s),
                }
            }
        }
    };
    Ok((one(&sample.x, sigma1_half), one(&sample.y, sigma2_half)))
}

/// Eigenvalues of a Fisher matrix with bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherSpectrum {
    /// Descending, nonnegative.
    pub eigenvalues: Vec<f64>,
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    pub used_ratios: Option<AspectRatios>,
}

impl FisherSpectrum {
    pub fn zero_count(&self) -> usize {
        self.eigenvalues.iter().filter(|&&v| v == 0.0).count()
    }

    pub fn positive(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().copied().filter(|&v| v > 0.0)
    }
}

fn generalized_eigen<T: ComplexField<RealField = f64> + Copy>(
    b1: &DMatrix<T>,
    b2: &DMatrix<T>,
) -> Result<Vec<f64>> {
    let p = b2.nrows();
    if b1.nrows() != p || b1.ncols() != p || b2.ncols() != p {
        return Err(Error::Dimension("B1 and B2 must be square of equal size".into()));
    }
    let chol = b2
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning("B2 is not positive definite".into()))?;
    let l = chol.l();
    let diag: Vec<f64> = (0..p).map(|i| l[(i, i)].real()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = (dmax / dmin).powi(2);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Conditioning(format!("B2 condition estimate {cond:e} exceeds {MAX_CONDITION:e}")));
    }
    // C = L^{-1} B1 L^{-*}
    let w = l
        .solve_lower_triangular(b1)
        .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?;
    let mut c = l
        .solve_lower_triangular(&w.adjoint())
        .ok_or_else(|| Error::Conditioning("triangular solve failed".into()))?
        .adjoint();
    hermitize(&mut c);
    let eig = c.symmetric_eigenvalues();
    let mut vals: Vec<f64> = eig.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    for v in &mut vals {
        if *v <= ZERO_RELATIVE * top {
            *v = 0.0;
        }
    }
    Ok(vals)
}

/// Eigenvalues of `B1 B2^{-1}` from the Hermitian form `L^{-1} B1 L^{-*}` with
/// `B2 = L L*`.
pub fn fisher_eigenvalues(b1: &DataMatrix, b2: &DataMatrix) -> Result<FisherSpectrum> {
    let vals = match (b1, b2) {
        (DataMatrix::Real(a), DataMatrix::Real(b)) => generalized_eigen(a, b)?,
        (a, b) => generalized_eigen(&a.to_complex(), &b.to_complex())?,
    };
    Ok(FisherSpectrum {
        p: vals.len(),
        eigenvalues: vals,
        n1: 0,
        n2: 0,
        used_ratios: None,
    })
}

/// Covariances then eigenvalues, with dimensions recorded.
pub fn sample_spectrum(sample: &TwoSample) -> Result<FisherSpectrum> {
    let (b1, b2) = sample_covariances(sample, None, None)?;
    let mut spec = fisher_eigenvalues(&b1, &b2)?;
    spec.n1 = sample.n1();
    spec.n2 = sample.n2();
    spec.used_ratios = Some(sample.ratios()?);
    Ok(spec)
}

/// `sum f(l)` over the strictly positive eigenvalues.
pub fn lss(f: &SpectralFunctional, spectrum: &FisherSpectrum) -> Result<f64> {
    let mut acc = 0.0;
    for l in spectrum.positive() {
        acc += f.eval_real(l)?;
    }
    Ok(acc)
}

/// `lss(f) - p int f u`, the centered statistic.
pub fn centered_lss(f: &SpectralFunctional, spectrum: &FisherSpectrum, curve: &DensityCurve) -> Result<f64> {
    Ok(lss(f, spectrum)? - spectrum.p as f64 * integrate_functional(f, curve)?)
}

/// The two-sample LRT statistic
/// `sum log(yn1 + yn2 l) - yn2/(yn1 + yn2) sum log l - log(yn1 + yn2)`.
pub fn lrt_statistic(spectrum: &FisherSpectrum, yn1: f64, yn2: f64) -> Result<f64> {
    if let Some(&bad) = spectrum.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Domain(format!("LRT statistic needs positive eigenvalues, found {bad}")));
    }
    let f = SpectralFunctional::Lrt { y1: yn1, y2: yn2 };
    Ok(lss(&f, spectrum)? - (yn1 + yn2).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(p, n, |_, _| rng.random::<f64>() - 0.5)
    }

    fn spectrum(vals: &[f64]) -> FisherSpectrum {
        FisherSpectrum {
            eigenvalues: vals.to_vec(),
            p: vals.len(),
            n1: 0,
            n2: 0,
            used_ratios: None,
        }
    }

    #[test]
    fn hand_computed_covariance() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, -1.0, 4.0]);
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let s = TwoSample::new(DataMatrix::Real(x), DataMatrix::Real(y), false).unwrap();
        let (b1, _) = sample_covariances(&s, None, None).unwrap();
        let DataMatrix::Real(b1) = b1 else { panic!() };
        // (1 + 4 + 9)/3, (0 - 2 + 12)/3, (0 + 1 + 16)/3
        let expect = [14.0 / 3.0, 10.0 / 3.0, 10.0 / 3.0, 17.0 / 3.0];
        for (got, want) in b1.as_slice().iter().zip(expect) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn centered_constant_column_contributes_nothing() {
        let x = DMatrix::from_row_slice(2, 3, &[2.0, 2.0, 2.0, 5.0, 5.0, 5.0]);
        let y = random(2, 5, 1);
        let s = TwoSample::new(DataMatrix::Real(x), DataMatrix::Real(y), true).unwrap();
        let (b1, _) = sample_covariances(&s, None, None).unwrap();
        let DataMatrix::Real(b1) = b1 else { panic!() };
        assert!(b1.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn sigma_half_recovers_sigma() {
        // sqrt(n) e_i columns give S1 = I exactly
        let x = DMatrix::from_fn(2, 2, |i, j| if i == j { 2.0f64.sqrt() } else { 0.0 });
        let half = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let y = random(2, 5, 2);
        let s = TwoSample::new(DataMatrix::Real(x), DataMatrix::Real(y), false).unwrap();
        let (b1, _) = sample_covariances(&s, Some(&DataMatrix::Real(half.clone())), None).unwrap();
        let DataMatrix::Real(b1) = b1 else { panic!() };
        let sigma = &half * half.transpose();
        assert!((b1 - sigma).norm() < 1e-14);
    }

    #[test]
    fn scaled_pairs() {
        let b2 = {
            let a = random(5, 9, 3);
            &a * a.transpose()
        };
        let s = fisher_eigenvalues(&DataMatrix::Real(b2.clone()), &DataMatrix::Real(b2.clone())).unwrap();
        assert!(s.eigenvalues.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let s = fisher_eigenvalues(&DataMatrix::Real(&b2 * 2.0), &DataMatrix::Real(b2)).unwrap();
        assert!(s.eigenvalues.iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn matches_nonsymmetric_eigensolver() {
        let a = random(5, 8, 4);
        let b = random(5, 12, 5);
        let b1 = &a * a.transpose();
        let b2 = &b * b.transpose();
        let s = fisher_eigenvalues(&DataMatrix::Real(b1.clone()), &DataMatrix::Real(b2.clone())).unwrap();
        let f = &b1 * b2.clone().try_inverse().unwrap();
        let ev = f.complex_eigenvalues();
        let mut oracle: Vec<f64> = ev.iter().map(|c| c.re).collect();
        assert!(ev.iter().all(|c| c.im.abs() < 1e-9));
        oracle.sort_by(|x, y| y.total_cmp(x));
        for (g, w) in s.eigenvalues.iter().zip(&oracle) {
            assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn complex_case_is_real_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut draw = |p: usize, n: usize| {
            DMatrix::from_fn(p, n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        };
        let s = TwoSample::new(DataMatrix::Complex(draw(4, 3)), DataMatrix::Complex(draw(4, 9)), false).unwrap();
        let spec = sample_spectrum(&s).unwrap();
        assert_eq!(spec.eigenvalues.len(), 4);
        assert_eq!(spec.zero_count(), 1);
        assert!(spec.eigenvalues.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn singular_b2_is_rejected() {
        let a = random(4, 2, 7);
        let b2 = &a * a.transpose();
        let r = fisher_eigenvalues(&DataMatrix::Real(b2.clone()), &DataMatrix::Real(b2));
        assert!(matches!(r, Err(Error::Conditioning(_))));
    }

    #[test]
    fn permutation_and_scale() {
        let x = random(6, 10, 8);
        let y = random(6, 15, 9);
        let base = sample_spectrum(&TwoSample::new(DataMatrix::Real(x.clone()), DataMatrix::Real(y.clone()), true).unwrap()).unwrap();
        let perm: Vec<usize> = (0..10).rev().collect();
        let xp = DataMatrix::Real(x.clone()).permute_columns(&perm);
        let permuted = sample_spectrum(&TwoSample::new(xp, DataMatrix::Real(y.clone()), true).unwrap()).unwrap();
        for (a, b) in base.eigenvalues.iter().zip(&permuted.eigenvalues) {
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
        let scaled = sample_spectrum(&TwoSample::new(DataMatrix::Real(x * 3.0f64.sqrt()), DataMatrix::Real(y), true).unwrap()).unwrap();
        for (a, b) in base.eigenvalues.iter().zip(&scaled.eigenvalues) {
            assert!((3.0 * a - b).abs() <= 1e-10 * b.max(1.0));
        }
    }

    #[test]
    fn lss_examples() {
        let s = spectrum(&[3.0, 2.0, 1.0]);
        assert_eq!(lss(&SpectralFunctional::Power { k: 1 }, &s).unwrap(), 6.0);
        let z = spectrum(&[2.0, 1.0, 0.0]);
        assert_eq!(lss(&SpectralFunctional::Log, &z).unwrap(), 2.0f64.ln());
        let f = SpectralFunctional::Log;
        let g = SpectralFunctional::Power { k: 2 };
        let fg = SpectralFunctional::linear_combination(vec![(1.0, f.clone()), (1.0, g.clone())]);
        let s = spectrum(&[0.3, 1.7, 2.9]);
        let lhs = lss(&fg, &s).unwrap();
        let rhs = lss(&f, &s).unwrap() + lss(&g, &s).unwrap();
        assert!((lhs - rhs).abs() <= 1e-15 * rhs.abs().max(1.0));
    }

    #[test]
    fn lrt_examples() {
        let ones = spectrum(&[1.0; 7]);
        let t = lrt_statistic(&ones, 0.3, 0.2).unwrap();
        assert!((t - 6.0 * 0.5f64.ln()).abs() < 1e-14);
        let t = lrt_statistic(&spectrum(&[2.0]), 0.5, 0.5).unwrap();
        let want = 1.5f64.ln() - 0.5 * 2.0f64.ln();
        assert!((t - want).abs() < 1e-15);
        assert!((t - 0.058891).abs() < 1e-6);
        assert!(lrt_statistic(&spectrum(&[1.0, 0.0]), 0.5, 0.5).is_err());
    }
}
