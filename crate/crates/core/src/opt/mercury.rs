use std::sync::Arc;

use super::power::PowerAllocation;
use crate::bayes::{model_stats, Evaluator, PosteriorModel};
use crate::constellation::Constellation;
use crate::error::{param, Error, Result};
use crate::info::mutual_information_with;
use crate::linalg::{c, CMat};
use crate::quadrature::NoiseRule;
use crate::system::MacSystem;

/// Scalar single-user MMSE `mmse(s)` of `y = √s·x + n` for a unit-energy
/// input, with its inverse on `(0, 1)`.
#[derive(Debug, Clone)]
pub enum MmseCurve {
    /// `1/(1 + s)`.
    Gaussian,
    Discrete(Arc<Constellation>),
}

/// Upper end of the effective-snr search range.
const S_MAX: f64 = 1e6;

impl MmseCurve {
    pub fn gaussian() -> Self {
        MmseCurve::Gaussian
    }

    /// Curve of a one-dimensional constellation, after checking that it is
    /// strictly decreasing on a logarithmic grid.
    pub fn discrete(c: Arc<Constellation>) -> Result<Self> {
        if c.dim() != 1 {
            return Err(param("constellation", "scalar constellation required"));
        }
        let curve = MmseCurve::Discrete(c);
        let mut prev = curve.mmse(0.0)?;
        for k in 0..=40 {
            let s = 10f64.powf(-3.0 + 0.1 * k as f64);
            let m = curve.mmse(s)?;
            if !(m < prev) {
                return Err(Error::Numerical(format!("mmse curve not decreasing at s = {s:e}")));
            }
            prev = m;
        }
        Ok(curve)
    }

    /// Noise rule fine enough for posterior features of width `~1/√s`.
    fn rule(s: f64) -> Result<NoiseRule> {
        if s <= 25.0 {
            Ok(NoiseRule::default())
        } else {
            NoiseRule::composite_legendre(9.0, 2.5 / s.sqrt(), 10)
        }
    }

    fn model(cst: &Constellation, s: f64) -> Result<PosteriorModel> {
        PosteriorModel::single(&CMat::from_element(1, 1, c(s.sqrt(), 0.0)), cst.points(), cst.probs())
    }

    pub fn mmse(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(param("s", format!("{s} is not a nonnegative snr")));
        }
        match self {
            MmseCurve::Gaussian => Ok(1.0 / (1.0 + s)),
            MmseCurve::Discrete(cst) => {
                let st = model_stats(&Self::model(cst, s)?, &Evaluator::Quadrature(Self::rule(s)?), None)?;
                Ok(st.e1[(0, 0)].re.clamp(0.0, 1.0))
            }
        }
    }

    /// Mutual information `I(s)` in nats.
    pub fn mi(&self, s: f64) -> Result<f64> {
        match self {
            MmseCurve::Gaussian => Ok(s.ln_1p()),
            MmseCurve::Discrete(cst) => {
                let sys = MacSystem::scalar(c(1.0, 0.0), c(0.0, 0.0), 1.0, 0.0, s, (**cst).clone(), (**cst).clone())?;
                Ok(mutual_information_with(&sys, &Evaluator::Quadrature(Self::rule(s)?))?.value)
            }
        }
    }

    /// `s` with `mmse(s) = θ`, `θ ∈ (0, 1)`.
    pub fn inverse(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(param("theta", format!("{theta} outside (0, 1)")));
        }
        if let MmseCurve::Gaussian = self {
            return Ok(1.0 / theta - 1.0);
        }
        let mut hi = 1.0;
        while self.mmse(hi)? > theta {
            hi *= 2.0;
            if hi > S_MAX {
                return Err(Error::Numerical(format!("mmse stays above {theta:e} up to s = {S_MAX:e}")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.mmse(mid)? > theta {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * hi.max(1e-300) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Classic waterfilling over parallel channels with power gains `gains`:
/// `pⱼ = max(0, μ − 1/(snr·gⱼ))` with `Σpⱼ = budget`. Returns the powers
/// and the water level `μ`.
pub fn waterfilling(gains: &[f64], budget: f64, snr: f64) -> Result<(Vec<f64>, f64)> {
    check_inputs(gains, budget, snr)?;
    let mut floors: Vec<f64> = gains.iter().map(|g| if *g > 0.0 { 1.0 / (snr * g) } else { f64::INFINITY }).collect();
    floors.sort_by(f64::total_cmp);
    let mut level = f64::NAN;
    let mut acc = 0.0;
    for (k, &f) in floors.iter().enumerate() {
        if !f.is_finite() {
            break;
        }
        acc += f;
        let mu = (budget + acc) / (k + 1) as f64;
        let next = floors.get(k + 1).copied().unwrap_or(f64::INFINITY);
        if mu <= next {
            level = mu;
            break;
        }
    }
    let powers = gains
        .iter()
        .map(|g| if *g > 0.0 { (level - 1.0 / (snr * g)).max(0.0) } else { 0.0 })
        .collect();
    Ok((powers, level))
}

fn check_inputs(gains: &[f64], budget: f64, snr: f64) -> Result<()> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(param("budget", format!("{budget} must be positive")));
    }
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(param("snr", format!("{snr} must be positive")));
    }
    if gains.is_empty() || gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(param("gains", "nonempty, finite and nonnegative"));
    }
    if gains.iter().all(|&g| g == 0.0) {
        return Err(param("gains", "at least one channel must be open"));
    }
    Ok(())
}

/// Single-user mercury/waterfilling over parallel channels:
/// `pⱼ = mmse⁻¹(γ/gⱼ)/(snr·gⱼ)` for `γ < gⱼ`, else 0, with `γ` bisected
/// until the budget is met. Results land in `powers1`/`gamma1`.
pub fn mercury_waterfilling(gains: &[f64], budget: f64, snr: f64, curve: &MmseCurve) -> Result<PowerAllocation> {
    check_inputs(gains, budget, snr)?;
    let alloc = |gamma: f64| -> Result<Vec<f64>> {
        gains
            .iter()
            .map(|&g| {
                if gamma >= g {
                    Ok(0.0)
                } else {
                    Ok(curve.inverse(gamma / g)? / (snr * g))
                }
            })
            .collect()
    };
    let gmax = gains.iter().copied().fold(0.0, f64::max);
    // total power decreases in γ, from +∞ at 0 to 0 at max gain
    let (mut lo, mut hi) = (0.0, gmax);
    let mut iterations = 0;
    let mut lo_ok = false;
    for _ in 0..200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        let total: f64 = alloc(mid)?.iter().sum();
        if total > budget {
            lo = mid;
            lo_ok = true;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * gmax {
            break;
        }
    }
    if !lo_ok && hi <= 0.0 {
        return Err(Error::Numerical("water level search collapsed".into()));
    }
    let gamma = hi;
    let mut powers = alloc(gamma)?;
    // spread the bisection's leftover onto the open channels
    let total: f64 = powers.iter().sum();
    if total > 0.0 {
        let scale = budget / total;
        for p in &mut powers {
            *p *= scale;
        }
    }
    let mut residual: f64 = 0.0;
    for (&g, &p) in gains.iter().zip(&powers) {
        if p > 0.0 {
            let slope = g * curve.mmse(snr * g * p)?;
            residual = residual.max((slope - gamma).abs() / gamma);
        } else if g > 0.0 {
            residual = residual.max(((g - gamma) / gamma).max(0.0));
        }
    }
    Ok(PowerAllocation {
        powers1: powers.clone(),
        powers2: Vec::new(),
        gamma1: gamma,
        gamma2: 0.0,
        kkt_residual: residual,
        iterations,
        converged: true,
        history: vec![[powers, Vec::new()]],
        residual_history: vec![residual],
    })
}
