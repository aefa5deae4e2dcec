use crate::error::{param, Result};
use crate::linalg::{c, hermitian_eigen_desc, hermitian_fn, CMat};
use crate::system::{MacSystem, User};

/// Input covariance `Z = q·V·Λ·V† / Tr Λ` where `Hₖ†Hₖ = V·Λ·V†`: power
/// proportional to each eigen-mode's gain. Isotropic channels get `q/n_t·I`.
pub fn low_snr_covariance(sys: &MacSystem, user: User, q: f64) -> Result<CMat> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(param("q", format!("{q} is not a nonnegative budget")));
    }
    let h = sys.h(user);
    let gram = h.adjoint() * h;
    let n = gram.nrows();
    let (lambda, v) = hermitian_eigen_desc(&gram);
    let lambda: Vec<f64> = lambda.into_iter().map(|l| l.max(0.0)).collect();
    let total: f64 = lambda.iter().sum();
    if total <= 0.0 {
        return Ok(CMat::identity(n, n) * c(q / n as f64, 0.0));
    }
    let mut z = CMat::zeros(n, n);
    for (k, &l) in lambda.iter().enumerate() {
        let col = v.column(k);
        z += col * col.adjoint() * c(q * l / total, 0.0);
    }
    Ok(z)
}

/// Per-user low-snr covariances for budgets `q = [q₁, q₂]`.
pub fn low_snr_precoder(sys: &MacSystem, q: [f64; 2]) -> Result<[CMat; 2]> {
    Ok([
        low_snr_covariance(sys, User::One, q[0])?,
        low_snr_covariance(sys, User::Two, q[1])?,
    ])
}

/// Hermitian square root `Z^{1/2}`, a precoder realizing covariance `Z`.
pub fn precoder_from_covariance(z: &CMat) -> CMat {
    hermitian_fn(z, |x| x.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::Evaluator;
    use crate::constellation::Constellation;
    use crate::info::mutual_information_with;
    use crate::linalg::{frobenius, random_unitary, trace};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn system(h1: CMat, h2: CMat) -> MacSystem {
        let b2 = Constellation::bpsk().cartesian_power(2).unwrap();
        let eye = CMat::identity(2, 2);
        MacSystem::new(h1, h2, eye.clone(), eye, 1.0, b2.clone(), b2).unwrap()
    }

    #[test]
    fn eigenvalue_proportional_allocation() {
        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(2f64.sqrt(), 0.0), c(1.0, 0.0)]));
        let z = low_snr_covariance(&system(h.clone(), h), User::One, 1.0).unwrap();
        assert!((z[(0, 0)].re - 2.0 / 3.0).abs() < 1e-12);
        assert!((z[(1, 1)].re - 1.0 / 3.0).abs() < 1e-12);
        assert!(z[(0, 1)].norm() < 1e-12);
    }

    #[test]
    fn isotropic_channel_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_unitary(2, &mut rng) * c(1.7, 0.0);
        let z = low_snr_precoder(&system(u.clone(), u), [2.0, 0.5]).unwrap();
        assert!(frobenius(&(&z[0] - CMat::identity(2, 2))) < 1e-10);
        assert!((trace(&z[1]).re - 0.5).abs() < 1e-12);
        let zero = system(CMat::zeros(2, 2), CMat::zeros(2, 2));
        let z = low_snr_covariance(&zero, User::One, 1.0).unwrap();
        assert!(frobenius(&(z - CMat::identity(2, 2) * c(0.5, 0.0))) < 1e-15);
    }

    #[test]
    fn square_root_realizes_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = crate::linalg::random_complex(2, 2, &mut rng);
        let z = low_snr_covariance(&system(h.clone(), h), User::Two, 1.0).unwrap();
        let p = precoder_from_covariance(&z);
        assert!(frobenius(&(&p * p.adjoint() - z)) < 1e-12);
    }

    #[test]
    fn beats_identity_on_skewed_channel_at_low_snr() {
        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(2.0, 0.0), c(0.3, 0.0)]));
        let sys = system(h.clone(), h).with_snr(1e-3).unwrap();
        let z = low_snr_precoder(&sys, [2.0, 2.0]).unwrap();
        let tuned = sys
            .with_precoders(precoder_from_covariance(&z[0]), precoder_from_covariance(&z[1]))
            .unwrap();
        let ev = Evaluator::mc(6, 200_000);
        let a = mutual_information_with(&tuned, &ev).unwrap();
        let b = mutual_information_with(&sys, &ev).unwrap();
        let se = a.std_error.hypot(b.std_error);
        assert!(a.value - b.value > 3.0 * se, "{a:?} {b:?}");
    }
}
