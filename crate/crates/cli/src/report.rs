//! Interference terms entering each user's precoder gradient.

use immse::bayes::{posterior_stats_with, PosteriorStats};
use immse::linalg::{CMat, C64};
use immse::{Evaluator, MacSystem, Result, User};
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct InterferenceReport {
    /// `H₁†H₂P₂·E[x̂₂x̂₁†]`: what user 2 subtracts from user 1's gradient.
    pub into_user1: CMat,
    /// `H₂†H₁P₁·E[x̂₁x̂₂†]`: what user 1 subtracts from user 2's gradient.
    pub into_user2: CMat,
    /// Entrywise std errors (modulus of the complex error).
    pub into_user1_se: DMatrix<f64>,
    pub into_user2_se: DMatrix<f64>,
    /// Scalar systems only: `cov(snr·hₖ*hₗpₗ·x̂ₗ, x̂ₖ)/(snr·hₖ*hₗ)` per user,
    /// which reproduces the matrix term whenever `snr·hₖ*hₗ ≠ 0`.
    pub scalar_covariance: Option<[C64; 2]>,
}

impl InterferenceReport {
    pub fn term(&self, user: User) -> &CMat {
        match user {
            User::One => &self.into_user1,
            User::Two => &self.into_user2,
        }
    }

    pub fn std_error(&self, user: User) -> &DMatrix<f64> {
        match user {
            User::One => &self.into_user1_se,
            User::Two => &self.into_user2_se,
        }
    }

    /// `Re Tr` of the term and its standard error.
    pub fn trace(&self, user: User) -> (f64, f64) {
        let t = self.term(user);
        let se = self.std_error(user);
        let n = t.nrows().min(t.ncols());
        let v = (0..n).map(|i| t[(i, i)].re).sum();
        let e = (0..n).map(|i| se[(i, i)].powi(2)).sum::<f64>().sqrt();
        (v, e)
    }
}

pub fn interference_report(sys: &MacSystem, seed: u64, n_samples: usize) -> Result<InterferenceReport> {
    interference_report_with(sys, &Evaluator::mc(seed, n_samples))
}

pub fn interference_report_with(sys: &MacSystem, ev: &Evaluator) -> Result<InterferenceReport> {
    Ok(report_from(sys, &posterior_stats_with(sys, ev)?))
}

/// Propagates entrywise errors of `C` through `A·C`, treating entries as
/// independent.
fn propagate(a: &CMat, se: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), se.ncols(), |i, j| {
        (0..a.ncols()).map(|k| a[(i, k)].norm_sqr() * se[(k, j)].powi(2)).sum::<f64>().sqrt()
    })
}

pub fn report_from(sys: &MacSystem, st: &PosteriorStats) -> InterferenceReport {
    let se12 = st.std_errors.cross12_re.zip_map(&st.std_errors.cross12_im, |a, b| a.hypot(b));
    let mut terms = Vec::with_capacity(2);
    for u in User::both() {
        let a = sys.h(u).adjoint() * sys.effective(u.other());
        let c = st.cross_into(u);
        let se = match u {
            User::One => se12.transpose(),
            User::Two => se12.clone(),
        };
        terms.push((&a * c, propagate(&a, &se)));
    }
    let scalar_covariance = (sys.n_r() == 1 && sys.n_t() == 1).then(|| {
        let snr = sys.snr();
        let mut out = [C64::new(0.0, 0.0); 2];
        for u in User::both() {
            let k = sys.h(u)[(0, 0)];
            let l = sys.h(u.other())[(0, 0)];
            let g = k.conj() * l * snr;
            // covariance of the scaled interferer estimate with the own estimate
            let cov = g * sys.p(u.other())[(0, 0)] * st.cross_into(u)[(0, 0)];
            out[u.index()] = if g.norm() > 0.0 { cov / g } else { C64::new(0.0, 0.0) };
        }
        out
    });
    let (into_user2, into_user2_se) = terms.pop().expect("two users");
    let (into_user1, into_user1_se) = terms.pop().expect("two users");
    InterferenceReport {
        into_user1,
        into_user2,
        into_user1_se,
        into_user2_se,
        scalar_covariance,
    }
}
