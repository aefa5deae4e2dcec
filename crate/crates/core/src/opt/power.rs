use super::scheduled;
use crate::bayes::{posterior_stats_with, Evaluator, PosteriorStats};
use crate::error::{param, Result};
use crate::info::mutual_information_with;
use crate::linalg::{c, CMat};
use crate::system::{MacSystem, User};

/// Per-sub-channel powers of both users with their normalized multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub powers1: Vec<f64>,
    pub powers2: Vec<f64>,
    /// Lagrange multipliers divided by snr; 0 when the budget is slack.
    pub gamma1: f64,
    pub gamma2: f64,
    /// Largest KKT violation relative to `snr·maxⱼ‖hⱼ‖²`.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Accepted iterates, starting with the initial allocation. Steps are
    /// accepted on objective ascent; the residual itself need not decrease
    /// because the mutual information is not concave in the powers.
    pub history: Vec<[Vec<f64>; 2]>,
    pub residual_history: Vec<f64>,
}

impl PowerAllocation {
    pub fn powers(&self, user: User) -> &[f64] {
        match user {
            User::One => &self.powers1,
            User::Two => &self.powers2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerOptions {
    /// Initial ascent step as a fraction of the budget.
    pub step: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    /// Halvings of the step tried before declaring a stall.
    pub max_backtracks: usize,
    pub evaluator: Evaluator,
}

impl PowerOptions {
    pub fn new(evaluator: Evaluator) -> Self {
        Self {
            step: 0.2,
            max_iters: 200,
            tolerance: 1e-4,
            max_backtracks: 8,
            evaluator,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(param("step", format!("{} must be positive", self.step)));
        }
        if !(self.tolerance > 0.0) {
            return Err(param("tolerance", "must be positive"));
        }
        Ok(())
    }
}

/// Euclidean projection onto `{p ≥ 0, Σp ≤ budget}`; the threshold of the
/// active case is found by bisection.
pub fn project_budget(p: &[f64], budget: f64) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|x| x.max(0.0)).collect();
    if clamped.iter().sum::<f64>() <= budget {
        return clamped;
    }
    let excess = |tau: f64| p.iter().map(|x| (x - tau).max(0.0)).sum::<f64>() - budget;
    let (mut lo, mut hi) = (0.0, p.iter().copied().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut out: Vec<f64> = p.iter().map(|x| (x - hi).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if total > budget {
        let s = budget / total;
        out.iter_mut().for_each(|x| *x *= s);
    }
    out
}

fn diag_precoder(p: &[f64]) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_iterator(p.len(), p.iter().map(|x| c(x.sqrt(), 0.0))))
}

fn with_powers(template: &MacSystem, p: &[Vec<f64>; 2]) -> Result<MacSystem> {
    template.with_precoders(diag_precoder(&p[0]), diag_precoder(&p[1]))
}

/// Marginal gains `∂I/∂pⱼ = snr·Re(Hₖ†HₖPₖEₖ − Hₖ†HₗPₗC)ⱼⱼ/√pⱼ`.
fn gains(sys: &MacSystem, st: &PosteriorStats, user: User) -> Vec<f64> {
    let o = user.other();
    let hk = sys.h(user);
    let p = sys.p(user);
    let r = hk.adjoint() * hk * p * st.e(user) - hk.adjoint() * sys.effective(o) * st.cross_into(user);
    (0..p.nrows()).map(|j| sys.snr() * r[(j, j)].re / p[(j, j)].re).collect()
}

/// Upper bound on any marginal gain: the slope `snr·‖hⱼ‖²` of an idle
/// sub-channel without interference.
fn gain_scale(sys: &MacSystem, user: User) -> f64 {
    let h = sys.h(user);
    let m = (0..h.ncols()).map(|j| h.column(j).norm_squared()).fold(0.0, f64::max);
    (sys.snr() * m).max(1e-300)
}

/// Multiplier and KKT violation (relative to `scale`) of one user's
/// allocation given its gains.
fn kkt(p: &[f64], g: &[f64], budget: f64, floor: f64, scale: f64) -> (f64, f64) {
    if budget == 0.0 {
        return (0.0, 0.0);
    }
    let binding = p.iter().sum::<f64>() >= budget * (1.0 - 1e-9);
    let active: Vec<f64> = p.iter().zip(g).filter(|(x, _)| **x > floor).map(|(_, g)| *g).collect();
    let mu = if binding && !active.is_empty() {
        (active.iter().sum::<f64>() / active.len() as f64).max(0.0)
    } else {
        0.0
    };
    let mut worst: f64 = 0.0;
    for (&x, &gj) in p.iter().zip(g) {
        let v = if x > floor { (gj - mu).abs() } else { (gj - mu).max(0.0) };
        worst = worst.max(v);
    }
    (mu, worst / scale)
}

/// Projected gradient ascent on the joint mutual information over diagonal
/// precoders `Pₖ = diag(√pₖⱼ)`, starting from the full budget split evenly.
/// A step is accepted only if it does not lower the objective (common
/// random numbers within the comparison); otherwise it is halved.
pub fn solve_power_allocation(template: &MacSystem, budgets: [f64; 2], opts: &PowerOptions) -> Result<PowerAllocation> {
    opts.validate()?;
    for (k, &q) in budgets.iter().enumerate() {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(param(if k == 0 { "q1" } else { "q2" }, format!("{q} is not a budget")));
        }
    }
    for u in User::both() {
        let p = template.p(u);
        if (0..p.nrows()).any(|i| (0..p.ncols()).any(|j| i != j && p[(i, j)].norm() > 0.0)) {
            return Err(param("precoder", "power allocation needs diagonal precoders"));
        }
    }
    let n = template.n_t();
    let floor = 1e-9 * budgets[0].max(budgets[1]).max(1e-300);
    let mut p = [vec![budgets[0] / n as f64; n], vec![budgets[1] / n as f64; n]];
    // gains, multipliers and residual of an allocation under one evaluator;
    // gains are taken slightly inside the orthant so closed channels
    // report their opening slope
    let assess = |p: &[Vec<f64>; 2], ev: &Evaluator| -> Result<([Vec<f64>; 2], [f64; 2], f64)> {
        let lifted = [p[0].iter().map(|x| x.max(floor)).collect(), p[1].iter().map(|x| x.max(floor)).collect()];
        let sys = with_powers(template, &lifted)?;
        let st = posterior_stats_with(&sys, ev)?;
        let g = [gains(&sys, &st, User::One), gains(&sys, &st, User::Two)];
        let mut mus = [0.0; 2];
        let mut res: f64 = 0.0;
        for u in User::both() {
            let k = u.index();
            let (mu, r) = kkt(&p[k], &g[k], budgets[k], floor, gain_scale(template, u));
            mus[k] = mu;
            res = res.max(r);
        }
        Ok((g, mus, res))
    };
    let mut step = opts.step;
    let (mut g, mut mus, mut res) = assess(&p, &scheduled(&opts.evaluator, 0))?;
    let mut history = vec![p.clone()];
    let mut residual_history = vec![res];
    let mut converged = res <= opts.tolerance;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let ev = scheduled(&opts.evaluator, iterations);
        if !ev.is_deterministic() {
            (g, mus, res) = assess(&p, &ev)?;
        }
        let current = mutual_information_with(&with_powers(template, &p)?, &ev)?.value;
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            let mut cand = p.clone();
            for k in 0..2 {
                let gmax = g[k].iter().fold(0.0f64, |a, x| a.max(x.abs()));
                if gmax == 0.0 || budgets[k] == 0.0 {
                    continue;
                }
                let eta = step * budgets[k] / gmax;
                let moved: Vec<f64> = p[k].iter().zip(&g[k]).map(|(x, gj)| x + eta * gj).collect();
                cand[k] = project_budget(&moved, budgets[k]);
            }
            let value = mutual_information_with(&with_powers(template, &cand)?, &ev)?.value;
            let (cg, cmus, cres) = assess(&cand, &ev)?;
            if value >= current {
                (p, g, mus, res) = (cand, cg, cmus, cres);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (2.0 * step).min(opts.step);
        history.push(p.clone());
        residual_history.push(res);
        converged = res <= opts.tolerance;
    }
    let snr = template.snr();
    let norm = |mu: f64| if snr > 0.0 { mu / snr } else { 0.0 };
    let [powers1, powers2] = p;
    Ok(PowerAllocation {
        powers1,
        powers2,
        gamma1: norm(mus[0]),
        gamma2: norm(mus[1]),
        kkt_residual: res,
        iterations,
        converged,
        history,
        residual_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::Constellation;
    use crate::linalg::C64;

    fn quad() -> PowerOptions {
        PowerOptions::new(Evaluator::quadrature())
    }

    #[test]
    fn projection_cases() {
        assert_eq!(project_budget(&[0.2, -0.1], 1.0), vec![0.2, 0.0]);
        let p = project_budget(&[2.0, 1.0], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        let p = project_budget(&[0.8, 0.7, -1.0], 1.0);
        assert!((p[0] - 0.55).abs() < 1e-12 && (p[1] - 0.45).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn orthogonal_gaussian_users_waterfill() {
        let g = [1.0f64, 0.25];
        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(g[0].sqrt(), 0.0), c(g[1].sqrt(), 0.0)]));
        let b2 = Constellation::bpsk().cartesian_power(2).unwrap();
        let eye = CMat::identity(2, 2);
        // user 2 is silent, so the cross term vanishes
        let sys = MacSystem::new(h.clone(), h, eye.clone(), eye * c(0.0, 0.0), 1.0, b2.clone(), b2).unwrap();
        let mut opts = PowerOptions::new(Evaluator::GaussianInput);
        opts.tolerance = 1e-7;
        opts.max_iters = 2000;
        let r = solve_power_allocation(&sys, [4.0, 0.0], &opts).unwrap();
        let (wf, mu) = crate::opt::waterfilling(&g, 4.0, 1.0).unwrap();
        assert!(r.converged, "{:?}", r.residual_history.last());
        for (a, b) in r.powers1.iter().zip(&wf) {
            assert!((a - b).abs() < 1e-4, "{:?} vs {wf:?}", r.powers1);
        }
        // γ = μ/snr equals the inverse water level
        assert!((r.gamma1 - 1.0 / mu).abs() < 1e-3, "{} {}", r.gamma1, 1.0 / mu);
    }

    #[test]
    fn closed_channel_condition() {
        let g = [1.0f64, 0.02];
        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(g[0].sqrt(), 0.0), c(g[1].sqrt(), 0.0)]));
        let b2 = Constellation::bpsk().cartesian_power(2).unwrap();
        let eye = CMat::identity(2, 2);
        let sys = MacSystem::new(h.clone(), h, eye.clone(), eye * c(0.0, 0.0), 2.0, b2.clone(), b2).unwrap();
        let r = solve_power_allocation(&sys, [1.0, 0.0], &PowerOptions::new(Evaluator::GaussianInput)).unwrap();
        assert!(r.gamma1 >= g[1]);
        assert!(r.powers1[1] < 1e-9, "{:?}", r.powers1);
    }

    #[test]
    fn asymmetric_budgets_back_off_the_weaker_user() {
        let sys = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(1.0, 0.0), 1.0, 1.0, 2.0).unwrap();
        let r = solve_power_allocation(&sys, [2.0, 1.6], &quad()).unwrap();
        assert!(r.converged, "{:?}", r.residual_history);
        assert!((r.powers1[0] - 2.0).abs() < 1e-12);
        assert!(r.powers2[0] < 1.6 - 1e-3, "{:?}", r.powers2);
        assert_eq!(r.history[0][1][0], 1.6);
        assert!(r.gamma2 == 0.0 && r.kkt_residual <= 1e-4, "{r:?}");
    }

    #[test]
    fn budgets_hold() {
        let sys = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(0.0, 1.0), 1.0, 1.0, 1.0).unwrap();
        let r = solve_power_allocation(&sys, [1.0, 0.5], &quad()).unwrap();
        assert!(r.powers1[0] <= 1.0 + 1e-8 && r.powers2[0] <= 0.5 + 1e-8);
        assert!(r.powers1.iter().chain(&r.powers2).all(|p| *p >= 0.0));
        let full = MacSystem::scalar_bpsk(C64::new(1.0, 0.0), C64::new(1.0, 0.0), 1.0, 1.0, 1.0).unwrap();
        let dense = full.with_precoder(User::One, CMat::from_element(1, 1, c(1.0, 0.0))).unwrap();
        assert!(solve_power_allocation(&dense, [-1.0, 1.0], &quad()).is_err());
    }
}
