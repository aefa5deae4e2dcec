//! Closed-form gradients of mutual information with respect to channel and
//! precoder matrices, and a finite-difference oracle to check them.
//!
//! Analytic gradients are Wirtinger derivatives `∂I/∂M*` (nats), so that
//! `dI = 2·Re Tr{∇†·dM}`. The oracle returns `∂I/∂Re M + i·∂I/∂Im M`,
//! which is [`CONVENTION_SCALE`] times the analytic value.

use nalgebra::DMatrix;

use crate::bayes::{gaussian_stats, model_stats, posterior_stats_with, Evaluator, PosteriorModel, PosteriorStats};
use crate::error::{param, Error, Result};
use crate::info::{
    conditional_mi_with, gaussian_mi, mi_treat_as_noise_with, treat_as_noise_channel, MiKernel,
};
use crate::linalg::{c, frobenius, hermitian_inverse, CMat};
use crate::system::{MacSystem, User};

/// Ratio between the oracle's partial-derivative combination and the
/// Wirtinger gradient.
pub const CONVENTION_SCALE: f64 = 2.0;

/// A matrix of the system to differentiate against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixSel {
    Channel(User),
    Precoder(User),
}

impl MatrixSel {
    pub fn get(self, sys: &MacSystem) -> &CMat {
        match self {
            MatrixSel::Channel(u) => sys.h(u),
            MatrixSel::Precoder(u) => sys.p(u),
        }
    }

    pub fn replace(self, sys: &MacSystem, m: CMat) -> Result<MacSystem> {
        match self {
            MatrixSel::Channel(u) => sys.with_channel(u, m),
            MatrixSel::Precoder(u) => sys.with_precoder(u, m),
        }
    }
}

/// Which mutual information the oracle differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiTarget {
    /// `I(x₁, x₂; y)`.
    Joint,
    /// `I(x_d; y)` with the other user Gaussianized.
    TreatAsNoise { decode: User },
    /// `I(xₖ; y | x_given)`.
    Conditional { given: User },
}

impl MiTarget {
    fn model(self, sys: &MacSystem) -> Result<PosteriorModel> {
        match self {
            MiTarget::Joint => Ok(PosteriorModel::new(sys)),
            MiTarget::TreatAsNoise { decode } => {
                let cst = sys.constellation(decode);
                PosteriorModel::single(&treat_as_noise_channel(sys, decode), cst.points(), cst.probs())
            }
            MiTarget::Conditional { given } => {
                let u = given.other();
                let cst = sys.constellation(u);
                let g = sys.effective(u) * c(sys.snr().sqrt(), 0.0);
                PosteriorModel::single(&g, cst.points(), cst.probs())
            }
        }
    }

    /// Deterministic value in nats.
    fn value(self, sys: &MacSystem, ev: &Evaluator) -> Result<f64> {
        let v = match self {
            MiTarget::Joint if matches!(ev, Evaluator::GaussianInput) => return Ok(gaussian_mi(sys)),
            MiTarget::Joint => crate::info::mutual_information_with(sys, ev)?,
            MiTarget::TreatAsNoise { decode } => mi_treat_as_noise_with(sys, decode, ev)?,
            MiTarget::Conditional { given } => conditional_mi_with(sys, given, ev)?,
        };
        Ok(v.to_nats().value)
    }
}

/// `snr·(HₖPₖEₖPₖ† − HₗPₗ·E[x̂ₗx̂ₖ†]·Pₖ†)`.
pub fn grad_h_from(sys: &MacSystem, stats: &PosteriorStats, user: User) -> CMat {
    let o = user.other();
    let pk = sys.p(user);
    let own = sys.h(user) * pk * stats.e(user) * pk.adjoint();
    let cross = sys.effective(o) * stats.cross_into(user) * pk.adjoint();
    (own - cross) * c(sys.snr(), 0.0)
}

/// `snr·(Hₖ†HₖPₖEₖ − Hₖ†HₗPₗ·E[x̂ₗx̂ₖ†])`.
pub fn grad_p_from(sys: &MacSystem, stats: &PosteriorStats, user: User) -> CMat {
    let o = user.other();
    let hk = sys.h(user);
    let own = hk.adjoint() * hk * sys.p(user) * stats.e(user);
    let cross = hk.adjoint() * sys.effective(o) * stats.cross_into(user);
    (own - cross) * c(sys.snr(), 0.0)
}

pub fn grad_h(sys: &MacSystem, user: User, seed: u64, n_samples: usize) -> Result<CMat> {
    grad_h_with(sys, user, &Evaluator::mc(seed, n_samples))
}

pub fn grad_h_with(sys: &MacSystem, user: User, ev: &Evaluator) -> Result<CMat> {
    Ok(grad_h_from(sys, &posterior_stats_with(sys, ev)?, user))
}

pub fn grad_p(sys: &MacSystem, user: User, seed: u64, n_samples: usize) -> Result<CMat> {
    grad_p_with(sys, user, &Evaluator::mc(seed, n_samples))
}

pub fn grad_p_with(sys: &MacSystem, user: User, ev: &Evaluator) -> Result<CMat> {
    Ok(grad_p_from(sys, &posterior_stats_with(sys, ev)?, user))
}

/// Error covariance of a single-user channel `y = G·x + n`.
fn single_user_error(g: &CMat, user: User, sys: &MacSystem, ev: &Evaluator) -> Result<CMat> {
    match ev {
        Evaluator::GaussianInput => {
            let n = g.ncols();
            Ok(hermitian_inverse(&(CMat::identity(n, n) + g.adjoint() * g)))
        }
        _ => {
            let cst = sys.constellation(user);
            let model = PosteriorModel::single(g, cst.points(), cst.probs())?;
            Ok(model_stats(&model, ev, None)?.e1)
        }
    }
}

/// `Eₖ` when the other user's symbol is known (genie-aided receiver).
pub fn genie_error(sys: &MacSystem, user: User, ev: &Evaluator) -> Result<CMat> {
    let g = sys.effective(user) * c(sys.snr().sqrt(), 0.0);
    single_user_error(&g, user, sys, ev)
}

/// `E_d` in the whitened model where the other user is Gaussian noise.
pub fn whitened_error(sys: &MacSystem, decode: User, ev: &Evaluator) -> Result<CMat> {
    single_user_error(&treat_as_noise_channel(sys, decode), decode, sys, ev)
}

/// `∇_{Pₖ} I(xₖ; y | xₗ) = snr·Hₖ†HₖPₖEₖ` with the genie-aided `Eₖ`.
pub fn grad_conditional_from(sys: &MacSystem, genie: &CMat, user: User) -> CMat {
    let hk = sys.h(user);
    hk.adjoint() * hk * sys.p(user) * genie * c(sys.snr(), 0.0)
}

pub fn grad_conditional(sys: &MacSystem, user: User, seed: u64, n_samples: usize) -> Result<CMat> {
    grad_conditional_with(sys, user, &Evaluator::mc(seed, n_samples))
}

pub fn grad_conditional_with(sys: &MacSystem, user: User, ev: &Evaluator) -> Result<CMat> {
    Ok(grad_conditional_from(sys, &genie_error(sys, user, ev)?, user))
}

/// Forms of `∇_{Pₖ} I(x_d; y)`, the gradient of the other user's rate with
/// respect to the interferer's precoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatAsNoise {
    /// Interferer replaced by Gaussian noise of the same covariance:
    /// `−snr²·Hₖ†K⁻¹H_dP_dE_dP_d†H_d†K⁻¹HₖPₖ`, `K = I + snr·HₖPₖPₖ†Hₖ†`.
    Gaussianized,
    /// Finite-alphabet interferer: joint gradient minus the genie-aided one.
    Exact,
    /// `H_dP_dE_dP_d†H_d†·Hₖ†HₖP̃ₖ(P̃ₖ†Hₖ†HₖP̃ₖ + I)⁻¹` with `P̃ = √snr·P`.
    /// Kept for comparison; square systems only.
    Printed,
}

pub fn tan_gaussianized_from(sys: &MacSystem, whitened: &CMat, grad_wrt: User) -> CMat {
    let d = grad_wrt.other();
    let n_r = sys.n_r();
    let snr = sys.snr();
    let ak = sys.effective(grad_wrt);
    let ad = sys.effective(d);
    let kinv = hermitian_inverse(&(CMat::identity(n_r, n_r) + &ak * ak.adjoint() * c(snr, 0.0)));
    let hk = sys.h(grad_wrt);
    hk.adjoint() * &kinv * &ad * whitened * ad.adjoint() * &kinv * &ak * c(-snr * snr, 0.0)
}

pub fn tan_exact_from(sys: &MacSystem, joint: &PosteriorStats, genie: &CMat, grad_wrt: User) -> CMat {
    grad_p_from(sys, joint, grad_wrt) - grad_conditional_from(sys, genie, grad_wrt)
}

pub fn tan_printed_from(sys: &MacSystem, whitened: &CMat, grad_wrt: User) -> Result<CMat> {
    if sys.n_r() != sys.n_t() {
        return Err(Error::Dimension("the printed form needs n_r = n_t".into()));
    }
    let d = grad_wrt.other();
    let ad = sys.effective(d);
    let hk = sys.h(grad_wrt);
    let pt = sys.p(grad_wrt) * c(sys.snr().sqrt(), 0.0);
    let n = pt.ncols();
    let inner = hermitian_inverse(&(pt.adjoint() * hk.adjoint() * hk * &pt + CMat::identity(n, n)));
    Ok(&ad * whitened * ad.adjoint() * hk.adjoint() * hk * &pt * inner)
}

/// Gaussianized treat-as-noise gradient with Monte-Carlo statistics.
pub fn grad_p_treat_as_noise(sys: &MacSystem, grad_wrt: User, seed: u64, n_samples: usize) -> Result<CMat> {
    grad_p_treat_as_noise_with(sys, grad_wrt, TreatAsNoise::Gaussianized, &Evaluator::mc(seed, n_samples))
}

pub fn grad_p_treat_as_noise_with(
    sys: &MacSystem,
    grad_wrt: User,
    form: TreatAsNoise,
    ev: &Evaluator,
) -> Result<CMat> {
    let d = grad_wrt.other();
    match form {
        TreatAsNoise::Gaussianized => Ok(tan_gaussianized_from(sys, &whitened_error(sys, d, ev)?, grad_wrt)),
        TreatAsNoise::Printed => tan_printed_from(sys, &whitened_error(sys, d, ev)?, grad_wrt),
        TreatAsNoise::Exact => {
            let joint = posterior_stats_with(sys, ev)?;
            let genie = genie_error(sys, grad_wrt, &ev.reseeded(seed_of(ev) ^ 0x9e37))?;
            Ok(tan_exact_from(sys, &joint, &genie, grad_wrt))
        }
    }
}

fn seed_of(ev: &Evaluator) -> u64 {
    match ev {
        Evaluator::MonteCarlo(cfg) => cfg.seed,
        _ => 0,
    }
}

/// Default oracle step `1e-3·(1 + ‖M‖_F)`.
pub fn default_step(m: &CMat) -> f64 {
    1e-3 * (1.0 + frobenius(m))
}

/// Central-difference gradient of `f` at `m`: `∂f/∂Re Mᵢⱼ + i·∂f/∂Im Mᵢⱼ`.
pub fn fd_gradient_of(m: &CMat, step: f64, f: impl Fn(&CMat) -> Result<f64>) -> Result<CMat> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(param("step", format!("{step} is not positive")));
    }
    let mut g = CMat::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let mut part = [0.0; 2];
            for (k, dir) in [c(step, 0.0), c(0.0, step)].into_iter().enumerate() {
                let mut up = m.clone();
                up[(i, j)] += dir;
                let mut down = m.clone();
                down[(i, j)] -= dir;
                part[k] = (f(&up)? - f(&down)?) / (2.0 * step);
            }
            g[(i, j)] = c(part[0], part[1]);
        }
    }
    Ok(g)
}

/// Oracle gradient with per-entry standard errors (zero when
/// deterministic; `hypot` of the real and imaginary parts' errors).
#[derive(Debug, Clone, PartialEq)]
pub struct FdGradient {
    pub value: CMat,
    pub std_error: DMatrix<f64>,
}

pub fn fd_gradient_oracle(
    sys: &MacSystem,
    wrt: MatrixSel,
    step: f64,
    seed: u64,
    n_samples: usize,
) -> Result<FdGradient> {
    fd_gradient_with(sys, wrt, MiTarget::Joint, step, &Evaluator::mc(seed, n_samples))
}

/// Finite differences of `target` over the real and imaginary parts of every
/// entry of the selected matrix. Monte-Carlo evaluations share one noise
/// stream across all perturbed systems.
pub fn fd_gradient_with(
    sys: &MacSystem,
    wrt: MatrixSel,
    target: MiTarget,
    step: f64,
    ev: &Evaluator,
) -> Result<FdGradient> {
    let m = wrt.get(sys).clone();
    let (rows, cols) = m.shape();
    if !matches!(ev, Evaluator::MonteCarlo(_)) {
        let value = fd_gradient_of(&m, step, |x| target.value(&wrt.replace(sys, x.clone())?, ev))?;
        return Ok(FdGradient {
            value,
            std_error: DMatrix::zeros(rows, cols),
        });
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(param("step", format!("{step} is not positive")));
    }
    let entries = rows * cols;
    let mut models = Vec::with_capacity(4 * entries);
    for i in 0..rows {
        for j in 0..cols {
            for dir in [c(step, 0.0), c(-step, 0.0), c(0.0, step), c(0.0, -step)] {
                let mut x = m.clone();
                x[(i, j)] += dir;
                models.push(target.model(&wrt.replace(sys, x)?)?);
            }
        }
    }
    let inv = 1.0 / (2.0 * step);
    let mut combos = Vec::with_capacity(2 * entries);
    for e in 0..entries {
        for part in 0..2 {
            let mut row = vec![0.0; models.len()];
            row[4 * e + 2 * part] = inv;
            row[4 * e + 2 * part + 1] = -inv;
            combos.push(row);
        }
    }
    let center = target.model(sys)?;
    let refs: Vec<&PosteriorModel> = models.iter().collect();
    let kernel = MiKernel::new(refs, combos)?;
    let mo = ev.integrate(&kernel, &center, Some(center.signals()))?;
    let base = models.len();
    let mut value = CMat::zeros(rows, cols);
    let mut std_error = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let e = i * cols + j;
            let (re, se_re) = mo.get(base + 2 * e);
            let (im, se_im) = mo.get(base + 2 * e + 1);
            value[(i, j)] = c(re, im);
            std_error[(i, j)] = se_re.hypot(se_im);
        }
    }
    Ok(FdGradient { value, std_error })
}

/// Analytic-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// Analytic gradient times [`CONVENTION_SCALE`], directly comparable to
    /// `numeric`.
    pub analytic: CMat,
    pub numeric: CMat,
    pub numeric_std_error: DMatrix<f64>,
    /// `‖analytic − numeric‖_F / max(‖numeric‖_F, 1e-12)`.
    pub rel_error: f64,
    /// Least-squares real factor mapping the unscaled analytic gradient
    /// onto the oracle; should reproduce [`CONVENTION_SCALE`].
    pub convention_scale: f64,
}

pub fn fitted_scale(analytic: &CMat, numeric: &CMat) -> f64 {
    let num: f64 = analytic.iter().zip(numeric.iter()).map(|(a, b)| (a.conj() * b).re).sum();
    let den = analytic.norm_squared();
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

pub fn gradient_report(analytic: &CMat, fd: &FdGradient) -> GradientReport {
    let scaled = analytic * c(CONVENTION_SCALE, 0.0);
    let rel_error = frobenius(&(&scaled - &fd.value)) / frobenius(&fd.value).max(1e-12);
    GradientReport {
        analytic: scaled,
        numeric: fd.value.clone(),
        numeric_std_error: fd.std_error.clone(),
        rel_error,
        convention_scale: fitted_scale(analytic, &fd.value),
    }
}

/// Checks the joint-MI gradient with respect to `wrt`, using `stats_ev` for
/// the posterior statistics and `fd_ev` for the oracle.
pub fn check_gradient(
    sys: &MacSystem,
    wrt: MatrixSel,
    stats_ev: &Evaluator,
    fd_ev: &Evaluator,
    step: Option<f64>,
) -> Result<GradientReport> {
    let stats = posterior_stats_with(sys, stats_ev)?;
    let analytic = match wrt {
        MatrixSel::Channel(u) => grad_h_from(sys, &stats, u),
        MatrixSel::Precoder(u) => grad_p_from(sys, &stats, u),
    };
    let step = step.unwrap_or_else(|| default_step(wrt.get(sys)));
    let fd = fd_gradient_with(sys, wrt, MiTarget::Joint, step, fd_ev)?;
    Ok(gradient_report(&analytic, &fd))
}

/// Residual of `∇_P·P† = H†·∇_H` on one set of statistics.
pub fn scaling_connection_residual(sys: &MacSystem, stats: &PosteriorStats, user: User) -> f64 {
    let lhs = grad_p_from(sys, stats, user) * sys.p(user).adjoint();
    let rhs = sys.h(user).adjoint() * grad_h_from(sys, stats, user);
    frobenius(&(lhs - rhs))
}

/// Gaussian-input closed form `snr·Hₖ†K⁻¹HₖPₖ`.
pub fn gaussian_grad_p(sys: &MacSystem, user: User) -> CMat {
    let st = gaussian_stats(sys);
    grad_p_from(sys, &st, user)
}
