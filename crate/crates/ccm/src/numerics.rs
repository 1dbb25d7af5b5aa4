//! Minimal linear-algebra contracts shared by the rest of the crate:
//! Hermitian eigendecomposition, Moore-Penrose pseudo-inverse, and the
//! normalized DFT matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative Frobenius tolerance for accepting an input as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Default relative singular-value threshold for the pseudo-inverse.
pub const PINV_TOL: f64 = 1e-10;

/// Default relative eigenvalue threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-6;

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending
/// and eigenvector columns aligned with them.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: CMat,
}

impl EigenDecomposition {
    /// Numerical rank: eigenvalues above `tol * lambda_max` (absolute value
    /// of the largest eigenvalue).
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let lmax = self.values.iter().cloned().fold(0.0_f64, f64::max);
        if lmax <= 0.0 {
            return 0;
        }
        self.values.iter().filter(|&&l| l > tol * lmax).count()
    }

    /// Smallest number of leading eigenvalues capturing `frac` of the total
    /// (positive-part) trace.
    pub fn power_rank(&self, frac: f64) -> usize {
        let total: f64 = self.values.iter().map(|l| l.max(0.0)).sum();
        if total <= 0.0 {
            return 0;
        }
        let mut acc = 0.0;
        for (i, l) in self.values.iter().enumerate() {
            acc += l.max(0.0);
            if acc >= frac * total {
                return i + 1;
            }
        }
        self.values.len()
    }

    /// Top-`nu` eigenpairs (columns, values).
    pub fn truncate(&self, nu: usize) -> (CMat, DVector<f64>) {
        let nu = nu.min(self.values.len());
        (
            self.vectors.columns(0, nu).into_owned(),
            self.values.rows(0, nu).into_owned(),
        )
    }

    /// Rebuild `V diag(lambda) V^H`.
    pub fn reconstruct(&self) -> CMat {
        let m = self.vectors.nrows();
        let mut d = CMat::zeros(m, m);
        for i in 0..self.values.len() {
            d[(i, i)] = C64::new(self.values[i], 0.0);
        }
        &self.vectors * d * self.vectors.adjoint()
    }
}

fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigendecomposition of a Hermitian matrix.
///
/// The input is symmetrized before factoring; deviations from Hermitian
/// symmetry beyond `HERMITIAN_TOL` (relative Frobenius) are rejected.
pub fn hermitian_eig(h: &CMat) -> Result<EigenDecomposition> {
    if h.nrows() != h.ncols() {
        return Err(Error::contract(format!(
            "hermitian_eig: non-square input {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::contract("hermitian_eig: non-finite entries"));
    }
    let skew = h - h.adjoint();
    let scale = frobenius(h);
    if scale > 0.0 && frobenius(&skew) > HERMITIAN_TOL * scale {
        return Err(Error::contract("hermitian_eig: input is not Hermitian"));
    }
    let sym = (h + h.adjoint()).map(|z| z * 0.5);
    let eig = sym.symmetric_eigen();

    // Sort eigenpairs by descending eigenvalue.
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// `tol * sigma_max` are treated as zero.
pub fn pseudo_inverse(a: &CMat, tol: f64) -> Result<CMat> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::contract(format!(
            "pseudo_inverse: tol {tol} outside (0,1)"
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::contract("pseudo_inverse: non-finite entries"));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd: u requested");
    let vt = svd.v_t.as_ref().expect("svd: v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let k = svd.singular_values.len();
    let mut sinv = CMat::zeros(k, k);
    for i in 0..k {
        let s = svd.singular_values[i];
        if smax > 0.0 && s > tol * smax {
            sinv[(i, i)] = C64::new(1.0 / s, 0.0);
        }
    }
    Ok(vt.adjoint() * sinv * u.adjoint())
}

/// Normalized DFT matrix: `[F]_{p,q} = exp(-j 2 pi p q / M) / sqrt(M)`.
pub fn dft_matrix(m: usize) -> Result<CMat> {
    if m == 0 {
        return Err(Error::contract("dft_matrix: M must be >= 1"));
    }
    let scale = 1.0 / (m as f64).sqrt();
    Ok(CMat::from_fn(m, m, |p, q| {
        let phase = -2.0 * std::f64::consts::PI * (p as f64) * (q as f64) / m as f64;
        C64::from_polar(scale, phase)
    }))
}

/// Hermitian Toeplitz matrix from its first column `c[0..M]`
/// (entry `(m, n) = c[m - n]`, conjugated below the diagonal).
pub fn hermitian_toeplitz(first_col: &[C64]) -> CMat {
    let m = first_col.len();
    CMat::from_fn(m, m, |r, c| {
        if r >= c {
            first_col[r - c]
        } else {
            first_col[c - r].conj()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_complex(rng: &mut impl Rng) -> C64 {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    }

    fn random_hermitian(m: usize, rng: &mut impl Rng) -> CMat {
        let a = CMat::from_fn(m, m, |_, _| random_complex(rng));
        (&a + a.adjoint()).map(|z| z * 0.5)
    }

    #[test]
    fn eig_identity() {
        let eig = hermitian_eig(&CMat::identity(4, 4)).unwrap();
        for l in eig.values.iter() {
            assert_abs_diff_eq!(*l, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_rank_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut a = CVec::from_fn(6, |_, _| random_complex(&mut rng));
        a /= C64::new(a.norm(), 0.0);
        let h = &a * a.adjoint();
        let eig = hermitian_eig(&h).unwrap();
        assert_abs_diff_eq!(eig.values[0], 1.0, epsilon = 1e-10);
        for i in 1..6 {
            assert_abs_diff_eq!(eig.values[i], 0.0, epsilon = 1e-10);
        }
        // First eigenvector colinear with a.
        let ip = (eig.vectors.column(0).adjoint() * &a)[(0, 0)].norm();
        assert_abs_diff_eq!(ip, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn eig_reconstruction() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let h = random_hermitian(8, &mut rng);
        let eig = hermitian_eig(&h).unwrap();
        let err = frobenius(&(&h - eig.reconstruct())) / frobenius(&h);
        assert!(err < 1e-8, "reconstruction error {err}");
        // Descending order.
        for i in 1..8 {
            assert!(eig.values[i - 1] >= eig.values[i]);
        }
        // Orthonormal columns.
        let gram = eig.vectors.adjoint() * &eig.vectors;
        let dev = frobenius(&(&gram - CMat::identity(8, 8)));
        assert!(dev < 1e-10, "gram deviation {dev}");
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let a = CMat::from_fn(4, 4, |_, _| random_complex(&mut rng));
        assert!(hermitian_eig(&a).is_err());
        assert!(hermitian_eig(&CMat::zeros(2, 3)).is_err());
    }

    #[test]
    fn eig_psd_floor() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for m in [4usize, 8, 16] {
            let a = CMat::from_fn(m, m + 2, |_, _| random_complex(&mut rng));
            let psd = &a * a.adjoint();
            let eig = hermitian_eig(&psd).unwrap();
            let lmax = eig.values[0];
            assert!(eig.values.iter().all(|&l| l >= -1e-10 * lmax));
        }
    }

    #[test]
    fn pinv_orthonormal_columns() {
        let f = dft_matrix(6).unwrap();
        let tall = f.columns(0, 3).into_owned();
        let p = pseudo_inverse(&tall, PINV_TOL).unwrap();
        let dev = frobenius(&(&p - tall.adjoint()));
        assert!(dev < 1e-10, "deviation {dev}");
    }

    #[test]
    fn pinv_invertible_square() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = random_hermitian(5, &mut rng) + CMat::identity(5, 5) * C64::new(3.0, 0.0);
        let p = pseudo_inverse(&a, PINV_TOL).unwrap();
        let dev = frobenius(&(&p * &a - CMat::identity(5, 5)));
        assert!(dev < 1e-8, "deviation {dev}");
    }

    #[test]
    fn pinv_penrose_rank_deficient() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        // 4x3 with a repeated column: rank 2.
        let c0 = CVec::from_fn(4, |_, _| random_complex(&mut rng));
        let c1 = CVec::from_fn(4, |_, _| random_complex(&mut rng));
        let mut a = CMat::zeros(4, 3);
        a.set_column(0, &c0);
        a.set_column(1, &c1);
        a.set_column(2, &(c0.clone() * C64::new(2.0, 0.0)));
        let p = pseudo_inverse(&a, PINV_TOL).unwrap();
        let scale = frobenius(&a);
        assert!(frobenius(&(&a * &p * &a - &a)) / scale < 1e-8);
        assert!(frobenius(&(&p * &a * &p - &p)) / frobenius(&p) < 1e-8);
        let ap = &a * &p;
        assert!(frobenius(&(&ap - ap.adjoint())) < 1e-8);
        let pa = &p * &a;
        assert!(frobenius(&(&pa - pa.adjoint())) < 1e-8);
    }

    #[test]
    fn pinv_double_application() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let a = CMat::from_fn(5, 3, |_, _| random_complex(&mut rng));
        let p = pseudo_inverse(&a, PINV_TOL).unwrap();
        let back = pseudo_inverse(&p, PINV_TOL).unwrap();
        assert!(frobenius(&(&back - &a)) / frobenius(&a) < 1e-8);
    }

    #[test]
    fn dft_small_cases() {
        let f1 = dft_matrix(1).unwrap();
        assert_abs_diff_eq!(f1[(0, 0)].re, 1.0, epsilon = 1e-15);
        let f2 = dft_matrix(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(f2[(1, 1)].re, -s, epsilon = 1e-15);
        assert_abs_diff_eq!(f2[(0, 1)].re, s, epsilon = 1e-15);
        assert!(dft_matrix(0).is_err());
    }

    #[test]
    fn dft_unitary() {
        for m in [1usize, 2, 3, 8, 33, 64, 128, 256] {
            let f = dft_matrix(m).unwrap();
            let dev = frobenius(&(&f * f.adjoint() - CMat::identity(m, m)));
            assert!(dev < 1e-11 * (m as f64), "M={m}: deviation {dev}");
        }
    }

    #[test]
    fn toeplitz_matches_direct() {
        let col: Vec<C64> = (0..4)
            .map(|k| C64::from_polar(1.0 / (k + 1) as f64, 0.3 * k as f64))
            .collect();
        let t = hermitian_toeplitz(&col);
        assert_eq!(t[(2, 0)], col[2]);
        assert_eq!(t[(0, 2)], col[2].conj());
        assert!(frobenius(&(&t - t.adjoint())) < 1e-15);
    }
}
