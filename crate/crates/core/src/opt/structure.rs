use crate::error::{Error, Result};
use crate::linalg::{c, frobenius, hermitian_eigen_desc, CMat, CVec, C64};

/// `P = U·D·R†` with `U`, `R` unitary and `D` diagonal, nonnegative and
/// descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderStructure {
    pub u: CMat,
    pub d: CMat,
    pub r: CMat,
}

impl PrecoderStructure {
    pub fn reconstruct(&self) -> CMat {
        &self.u * &self.d * self.r.adjoint()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        (0..self.d.nrows()).map(|i| self.d[(i, i)].re).collect()
    }
}

/// Canonical orthonormal basis of the column span of `b`: project the
/// standard basis vectors in order and orthonormalize the survivors. The
/// result depends on the subspace only, and the first nonzero entry of
/// each column is real positive.
fn canonical_basis(b: &CMat) -> CMat {
    let (n, m) = b.shape();
    let proj = b * b.adjoint();
    let mut out: Vec<CVec> = Vec::with_capacity(m);
    for i in 0..n {
        if out.len() == m {
            break;
        }
        let mut v: CVec = proj.column(i).into_owned();
        for q in &out {
            let dot = q.dotc(&v);
            v -= q * dot;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            out.push(v / c(norm, 0.0));
        }
    }
    CMat::from_columns(&out)
}

/// Singular value decomposition with fixed conventions: descending
/// singular values, and within each group of equal singular values the
/// right factor is the canonical basis of its subspace (so the first
/// nonzero entry of every column of `R` is real positive and `I` decomposes
/// into identities).
pub fn structure_decompose(p: &CMat) -> Result<PrecoderStructure> {
    if !p.is_square() {
        return Err(Error::Dimension(format!("precoder is {}x{}, not square", p.nrows(), p.ncols())));
    }
    let n = p.nrows();
    let svd = p.clone().svd(true, true);
    let (u0, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => return Err(Error::Numerical("singular value decomposition failed".into())),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let v0 = vt.adjoint();
    let u_sorted = CMat::from_columns(&order.iter().map(|&k| u0.column(k).into_owned()).collect::<Vec<_>>());
    let v_sorted = CMat::from_columns(&order.iter().map(|&k| v0.column(k).into_owned()).collect::<Vec<_>>());
    let tol = 1e-10 * sv.first().copied().unwrap_or(0.0).max(1.0);
    let mut u = CMat::zeros(n, n);
    let mut r = CMat::zeros(n, n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (sv[start] - sv[end]).abs() <= tol {
            end += 1;
        }
        let vc = v_sorted.columns(start, end - start).into_owned();
        let uc = u_sorted.columns(start, end - start).into_owned();
        let rb = canonical_basis(&vc);
        let ub = if sv[start] <= tol {
            // null space: the two factors rotate independently
            canonical_basis(&uc)
        } else {
            &uc * (vc.adjoint() * &rb)
        };
        r.columns_mut(start, end - start).copy_from(&rb);
        u.columns_mut(start, end - start).copy_from(&ub);
        start = end;
    }
    let d = CMat::from_diagonal(&CVec::from_iterator(n, sv.iter().map(|&s| c(s, 0.0))));
    let out = PrecoderStructure { u, d, r };
    let err = frobenius(&(out.reconstruct() - p));
    if err > 1e-9 * (1.0 + frobenius(p)) {
        return Err(Error::Numerical(format!("decomposition residual {err:e}")));
    }
    Ok(out)
}

/// `Π·U_E`: eigenvectors of an MMSE matrix ordered by ascending error, so
/// the best-estimated mode pairs with the strongest channel mode (columns
/// of a descending `D`).
pub fn mmse_rotation(e: &CMat) -> CMat {
    let (_, v) = hermitian_eigen_desc(e);
    let n = v.ncols();
    let cols: Vec<CVec> = (0..n)
        .rev()
        .map(|k| {
            let col: CVec = v.column(k).into_owned();
            let lead = col.iter().copied().find(|z| z.norm() > 1e-8).unwrap_or(c(1.0, 0.0));
            col * (lead.conj() / C64::from(lead.norm()))
        })
        .collect();
    CMat::from_columns(&cols)
}
