//! Quick self-checks run by `immse check`.

use immse::bayes::score_identity_residual;
use immse::grad::{check_gradient, MatrixSel};
use immse::info::{immse_identity_check, ImmseOptions};
use immse::linalg::{c, random_complex, CMat, C64};
use immse::{Constellation, Evaluator, MacSystem, Result, User};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<10} worst={:.3e} tol={:.1e}", self.name, self.value, self.tolerance)
    }
}

fn line(name: &'static str, value: f64, tolerance: f64) -> CheckLine {
    CheckLine { name, passed: value <= tolerance, value, tolerance }
}

/// dI/dsnr against mmse + ψ for co-phase scalar BPSK.
pub fn immse_suite(seed: u64, n_samples: usize) -> Result<CheckLine> {
    let sys = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(1.0, 0.0), 1.0, 1.0, 1.0)?;
    let opts = ImmseOptions {
        stats: Evaluator::quadrature(),
        ..ImmseOptions::new(seed, n_samples)
    };
    let r = immse_identity_check(&sys, &[0.3, 1.0, 3.0], &opts)?;
    Ok(line("immse", r.max_rel_error, 2e-2))
}

/// Analytic precoder and channel gradients against central differences,
/// both computed by quadrature.
pub fn gradient_suite() -> Result<CheckLine> {
    let sys = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(0.6, 0.8), 0.9, 1.2, 1.5)?;
    let q = Evaluator::quadrature();
    let mut worst: f64 = 0.0;
    for u in User::both() {
        for wrt in [MatrixSel::Precoder(u), MatrixSel::Channel(u)] {
            worst = worst.max(check_gradient(&sys, wrt, &q, &q, None)?.rel_error);
        }
    }
    Ok(line("gradient", worst, 1e-4))
}

/// Score identity on random 2x2 QPSK systems and random outputs.
pub fn score_suite(seed: u64) -> Result<CheckLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q2 = Constellation::qpsk().cartesian_power(2)?;
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let h1 = random_complex(2, 2, &mut rng);
        let h2 = random_complex(2, 2, &mut rng);
        let eye = CMat::identity(2, 2);
        let sys = MacSystem::new(h1, h2, eye.clone(), eye * c(0.8, 0.0), 2.0, q2.clone(), q2.clone())?;
        for _ in 0..100 {
            let y = random_complex(2, 1, &mut rng).column(0) * c(3.0, 0.0);
            worst = worst.max(score_identity_residual(&sys, &y)?);
        }
    }
    Ok(line("score", worst, 1e-8))
}

pub fn run_all(seed: u64, n_samples: usize) -> Result<Vec<CheckLine>> {
    Ok(vec![immse_suite(seed, n_samples)?, gradient_suite()?, score_suite(seed)?])
}
