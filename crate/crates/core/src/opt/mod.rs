//! Precoder and power optimization driven by the gradient/MMSE relations.

mod lowsnr;
mod mercury;
mod power;
mod precoder;
mod structure;

pub use lowsnr::{low_snr_covariance, low_snr_precoder, precoder_from_covariance};
pub use mercury::{mercury_waterfilling, waterfilling, MmseCurve};
pub use power::{project_budget, solve_power_allocation, PowerAllocation, PowerOptions};
pub use precoder::{fixed_point_map, kkt_residual, solve_precoders, PrecoderOptions, PrecoderSolution};
pub use structure::{mmse_rotation, structure_decompose, PrecoderStructure};

use crate::bayes::Evaluator;
use crate::integrate::derive_seed;

/// Evaluator for iteration `t`: a fresh seed, and a Monte-Carlo budget
/// doubling every 10 iterations (capped at 64 times the initial one).
pub(crate) fn scheduled(ev: &Evaluator, t: usize) -> Evaluator {
    match ev {
        Evaluator::MonteCarlo(cfg) => {
            let n = cfg.n_samples.saturating_mul(1 << (t / 10).min(6));
            Evaluator::MonteCarlo(cfg.clone().with_seed(derive_seed(cfg.seed, t as u64)).with_samples(n))
        }
        other => other.clone(),
    }
}
