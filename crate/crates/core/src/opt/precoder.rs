use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scheduled;
use crate::bayes::{posterior_stats_with, Evaluator, PosteriorStats};
use crate::error::{param, Error, Result};
use crate::info::{mutual_information_with, McEstimate};
use crate::integrate::derive_seed;
use crate::linalg::{c, frobenius, power, random_unitary, trace, CMat};
use crate::system::{MacSystem, User};

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderOptions {
    /// Weight of the fixed-point image in each update.
    pub damping: f64,
    pub max_iters: usize,
    /// Target for the relative KKT residual.
    pub tolerance: f64,
    /// Extra starts from random unitary rotations of the initial precoder.
    pub restarts: usize,
    pub max_backtracks: usize,
    pub seed: u64,
    pub evaluator: Evaluator,
    /// Users whose precoder is updated; the others stay as in the template.
    pub optimize: [bool; 2],
}

impl PrecoderOptions {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self::with_evaluator(seed, Evaluator::mc(seed, n_samples))
    }

    pub fn with_evaluator(seed: u64, evaluator: Evaluator) -> Self {
        Self {
            damping: 0.25,
            max_iters: 200,
            tolerance: 1e-3,
            restarts: 0,
            max_backtracks: 4,
            seed,
            evaluator,
            optimize: [true, true],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(param("damping", format!("{} is outside (0, 1]", self.damping)));
        }
        if !(self.tolerance > 0.0) {
            return Err(param("tolerance", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(param("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PrecoderSolution {
    pub p1: CMat,
    pub p2: CMat,
    /// Multipliers `ν` of the fixed point `νPₖ = Rₖ` (gradient without snr).
    pub nu1: f64,
    pub nu2: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Joint mutual information (nats) at the returned precoders.
    pub objective: McEstimate,
    pub residual_history: Vec<f64>,
    /// Which start produced the returned point (0 is the template).
    pub restart: usize,
}

impl PrecoderSolution {
    pub fn p(&self, user: User) -> &CMat {
        match user {
            User::One => &self.p1,
            User::Two => &self.p2,
        }
    }
}

/// `Rₖ = Hₖ†HₖPₖEₖ − Hₖ†HₗPₗCₗₖ`, the precoder gradient divided by snr.
fn direction(sys: &MacSystem, st: &PosteriorStats, user: User) -> CMat {
    let hk = sys.h(user);
    hk.adjoint() * hk * sys.p(user) * st.e(user) - hk.adjoint() * sys.effective(user.other()) * st.cross_into(user)
}

fn rescale(p: CMat, q: f64) -> CMat {
    let pw = power(&p);
    if pw > 0.0 {
        p * c((q / pw).sqrt(), 0.0)
    } else {
        p
    }
}

/// One damped step of `P ← √Q·R/‖R‖_F`, renormalized to `Tr PP† = Q`.
pub fn fixed_point_map(sys: &MacSystem, stats: &PosteriorStats, user: User, q: f64, damping: f64) -> CMat {
    let r = direction(sys, stats, user);
    let nr = frobenius(&r);
    let p = sys.p(user);
    if nr == 0.0 {
        return p.clone();
    }
    let image = r * c(q.sqrt() / nr, 0.0);
    rescale(p * c(1.0 - damping, 0.0) + image * c(damping, 0.0), q)
}

/// Multipliers `νₖ = Re Tr(Pₖ†Rₖ)/‖Pₖ‖²` and the largest relative
/// violation `‖νₖPₖ − Rₖ‖_F/‖Rₖ‖_F` over the optimized users.
pub fn kkt_residual(sys: &MacSystem, stats: &PosteriorStats, optimize: [bool; 2]) -> ([f64; 2], f64) {
    let mut nu = [0.0; 2];
    let mut worst: f64 = 0.0;
    for u in User::both() {
        if !optimize[u.index()] {
            continue;
        }
        let p = sys.p(u);
        let r = direction(sys, stats, u);
        let pw = power(p);
        let v = if pw > 0.0 { trace(&(p.adjoint() * &r)).re / pw } else { 0.0 };
        nu[u.index()] = v;
        let nr = frobenius(&r);
        let res = if nr > 0.0 { frobenius(&(p * c(v, 0.0) - &r)) / nr } else { 0.0 };
        worst = worst.max(res);
    }
    (nu, worst)
}

struct Run {
    sys: MacSystem,
    nu: [f64; 2],
    residual: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn run(start: MacSystem, q: [f64; 2], opts: &PrecoderOptions) -> Result<Run> {
    let mut sys = start;
    let mut alpha = opts.damping;
    let mut history = Vec::new();
    let mut st = posterior_stats_with(&sys, &scheduled(&opts.evaluator, 0))?;
    let (mut nu, mut res) = kkt_residual(&sys, &st, opts.optimize);
    history.push(res);
    let mut converged = res <= opts.tolerance;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let ev = scheduled(&opts.evaluator, iterations);
        // re-score the incumbent with this iteration's draws
        if !ev.is_deterministic() {
            st = posterior_stats_with(&sys, &ev)?;
            (nu, res) = kkt_residual(&sys, &st, opts.optimize);
        }
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            let mut cand = sys.clone();
            for u in User::both() {
                if opts.optimize[u.index()] {
                    cand = cand.with_precoder(u, fixed_point_map(&sys, &st, u, q[u.index()], alpha))?;
                }
            }
            let cst = posterior_stats_with(&cand, &ev)?;
            let (cnu, cres) = kkt_residual(&cand, &cst, opts.optimize);
            if !cres.is_finite() {
                return Err(Error::Numerical(format!("non-finite KKT residual at iteration {iterations}")));
            }
            if cres <= res {
                (sys, st, nu, res) = (cand, cst, cnu, cres);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        history.push(res);
        if !accepted {
            break;
        }
        converged = res <= opts.tolerance;
    }
    Ok(Run { sys, nu, residual: res, iterations, converged, history })
}

/// Solves the stationarity condition `νₖPₖ = Rₖ` under `Tr PₖPₖ† = Qₖ`
/// by damped fixed-point iteration, from the template precoders (scaled
/// to budget) and from `restarts` random rotations of them. The start with
/// the largest mutual information wins; all starts share one evaluator.
pub fn solve_precoders(template: &MacSystem, q1: f64, q2: f64, opts: &PrecoderOptions) -> Result<PrecoderSolution> {
    opts.validate()?;
    let q = [q1, q2];
    for (k, &v) in q.iter().enumerate() {
        if opts.optimize[k] && (!(v > 0.0) || !v.is_finite()) {
            return Err(param(if k == 0 { "q1" } else { "q2" }, format!("{v} must be positive")));
        }
    }
    let n_t = template.n_t();
    let mut base = template.clone();
    for u in User::both() {
        if opts.optimize[u.index()] {
            let p = template.p(u);
            let p = if power(p) > 0.0 { p.clone() } else { CMat::identity(n_t, n_t) };
            base = base.with_precoder(u, rescale(p, q[u.index()]))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, u64::MAX >> 1));
    let mut best: Option<(Run, McEstimate, usize)> = None;
    for r in 0..=opts.restarts {
        let mut start = base.clone();
        if r > 0 {
            for u in User::both() {
                if opts.optimize[u.index()] {
                    let rot = random_unitary(n_t, &mut rng);
                    start = start.with_precoder(u, base.p(u) * rot)?;
                }
            }
        }
        let out = run(start, q, opts)?;
        let mi = mutual_information_with(&out.sys, &opts.evaluator)?;
        if best.as_ref().is_none_or(|(_, b, _)| mi.value > b.value) {
            best = Some((out, mi, r));
        }
    }
    let (out, objective, restart) = best.expect("at least one start");
    Ok(PrecoderSolution {
        p1: out.sys.p(User::One).clone(),
        p2: out.sys.p(User::Two).clone(),
        nu1: out.nu[0],
        nu2: out.nu[1],
        kkt_residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
        objective,
        residual_history: out.history,
        restart,
    })
}
