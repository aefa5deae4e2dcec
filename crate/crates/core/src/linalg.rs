//! Small complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

/// `Tr{P P†}`, the transmit power of a precoder.
pub fn power(p: &CMat) -> f64 {
    p.iter().map(|z| z.norm_sqr()).sum()
}

pub fn real_diag(values: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(
        values.len(),
        values.iter().map(|&v| c(v, 0.0)),
    ))
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn hermitian_eigen_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `f(M)` for Hermitian `M`, applied on the spectrum.
pub fn hermitian_fn(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = hermitian_eigen_desc(m);
    let mapped: Vec<f64> = vals.into_iter().map(f).collect();
    &vecs * real_diag(&mapped) * vecs.adjoint()
}

/// Inverse square root of a Hermitian positive-definite matrix.
pub fn hermitian_inv_sqrt(m: &CMat) -> CMat {
    hermitian_fn(m, |v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt())
}

pub fn hermitian_inverse(m: &CMat) -> CMat {
    hermitian_fn(m, |v| 1.0 / v)
}

/// `log det M` for Hermitian positive-definite `M`.
pub fn log_det_hpd(m: &CMat) -> f64 {
    hermitian_eigen_desc(m).0.iter().map(|v| v.ln()).sum()
}

/// Matrix with i.i.d. `CN(0, 1)` entries.
pub fn random_complex<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re * s, im * s)
    })
}

/// Haar-distributed unitary matrix (QR of a complex Ginibre matrix with the
/// phases of `R`'s diagonal folded into `Q`).
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let qr = random_complex(n, n, rng).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// `‖U†U − I‖_F`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    frobenius(&(u.adjoint() * u - CMat::identity(u.ncols(), u.ncols())))
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && frobenius(&(m - m.adjoint())) <= tol
}
