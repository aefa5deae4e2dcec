//! Mutual-information estimators, the two-user I-MMSE identity and low-snr
//! expansions.
//!
//! Internally everything is in nats. The per-sample estimator is the
//! likelihood ratio `log p(y|x) − log p(y)`, which has the same mean as
//! `−log p(y) − n_r·log(πe)` but much lower variance.

use std::f64::consts::LN_2;

use crate::bayes::{log_sum_exp, posterior_stats_with, Evaluator, PosteriorModel};
use crate::error::{param, Error, Result};
use crate::integrate::{Kernel, McConfig};
use crate::linalg::{c, hermitian_inv_sqrt, log_det_hpd, trace, CMat, C64};
use crate::system::{MacSystem, User};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoUnit {
    Bits,
    Nats,
}

/// A scalar estimate with its standard error. Deterministic evaluations
/// report `n_samples = 0` and a zero error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub unit: InfoUnit,
}

impl McEstimate {
    fn nats(value: f64, std_error: f64, ev: &Evaluator, n: usize) -> Self {
        let (n_samples, seed) = match ev {
            Evaluator::MonteCarlo(cfg) => (n, cfg.seed),
            _ => (0, 0),
        };
        Self {
            value,
            std_error,
            n_samples,
            seed,
            unit: InfoUnit::Nats,
        }
    }

    pub fn exact(value: f64, unit: InfoUnit) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples: 0,
            seed: 0,
            unit,
        }
    }

    pub fn to_bits(self) -> Self {
        match self.unit {
            InfoUnit::Bits => self,
            InfoUnit::Nats => Self {
                value: self.value / LN_2,
                std_error: self.std_error / LN_2,
                unit: InfoUnit::Bits,
                ..self
            },
        }
    }

    pub fn to_nats(self) -> Self {
        match self.unit {
            InfoUnit::Nats => self,
            InfoUnit::Bits => Self {
                value: self.value * LN_2,
                std_error: self.std_error * LN_2,
                unit: InfoUnit::Nats,
                ..self
            },
        }
    }
}

/// `log p(y|x) − log p(y)` for several models sharing one joint law,
/// evaluated on common noise, followed by fixed linear combinations of
/// those values.
pub(crate) struct MiKernel<'a> {
    models: Vec<&'a PosteriorModel>,
    combos: Vec<Vec<f64>>,
}

impl<'a> MiKernel<'a> {
    pub(crate) fn new(models: Vec<&'a PosteriorModel>, combos: Vec<Vec<f64>>) -> Result<Self> {
        let first = models.first().ok_or_else(|| param("models", "at least one model"))?;
        for m in &models {
            if m.n_r() != first.n_r() || m.law().probs() != first.law().probs() {
                return Err(Error::Dimension("paired models must share alphabets".into()));
            }
        }
        if combos.iter().any(|row| row.len() != models.len()) {
            return Err(Error::Dimension("one coefficient per model expected".into()));
        }
        Ok(Self { models, combos })
    }
}

impl Kernel for MiKernel<'_> {
    type Scratch = (Vec<f64>, Vec<C64>);

    fn dim(&self) -> usize {
        self.models.len() + self.combos.len()
    }

    fn n_r(&self) -> usize {
        self.models[0].n_r()
    }

    fn scratch(&self) -> Self::Scratch {
        (Vec::new(), vec![C64::default(); self.n_r()])
    }

    fn eval(&self, s: &mut Self::Scratch, joint: usize, noise: &[C64], out: &mut [f64]) {
        let (logits, y) = s;
        let nn: f64 = noise.iter().map(|z| z.norm_sqr()).sum();
        let m = self.models.len();
        for (k, model) in self.models.iter().enumerate() {
            for ((y, sig), n) in y.iter_mut().zip(model.signal(joint)).zip(noise) {
                *y = sig + n;
            }
            out[k] = -nn - model.log_mixture(y, logits);
        }
        for (r, row) in self.combos.iter().enumerate() {
            out[m + r] = row.iter().zip(&out[..m]).map(|(a, b)| a * b).sum();
        }
    }
}

/// `I(x₁, x₂; y)` in nats for Gaussian inputs: `log det(I + snr·Σ AₖAₖ†)`.
pub fn gaussian_mi(sys: &MacSystem) -> f64 {
    let n_r = sys.n_r();
    let s = c(sys.snr(), 0.0);
    let mut k = CMat::identity(n_r, n_r);
    for u in User::both() {
        let a = sys.effective(u);
        k += &a * a.adjoint() * s;
    }
    log_det_hpd(&k)
}

fn model_mi(model: &PosteriorModel, ev: &Evaluator) -> Result<McEstimate> {
    let kernel = MiKernel::new(vec![model], Vec::new())?;
    let mo = ev.integrate(&kernel, model, None)?;
    let (v, se) = mo.get(0);
    if !v.is_finite() {
        return Err(Error::Numerical("mutual information is not finite".into()));
    }
    Ok(McEstimate::nats(v, se, ev, mo.n))
}

/// Joint mutual information in bits, Monte-Carlo with default options.
pub fn mutual_information(sys: &MacSystem, seed: u64, n_samples: usize) -> Result<McEstimate> {
    mutual_information_with(sys, &Evaluator::mc(seed, n_samples)).map(McEstimate::to_bits)
}

/// Joint mutual information in nats.
pub fn mutual_information_with(sys: &MacSystem, ev: &Evaluator) -> Result<McEstimate> {
    match ev {
        Evaluator::GaussianInput => Ok(McEstimate::exact(gaussian_mi(sys), InfoUnit::Nats)),
        _ => model_mi(&PosteriorModel::new(sys), ev),
    }
}

/// Whitened single-user channel of `decode` when the other user's signal is
/// replaced by Gaussian noise of the same covariance:
/// `(I + snr·AᵢAᵢ†)^{-1/2}·√snr·A_d`.
pub fn treat_as_noise_channel(sys: &MacSystem, decode: User) -> CMat {
    let n_r = sys.n_r();
    let ai = sys.effective(decode.other());
    let k = CMat::identity(n_r, n_r) + &ai * ai.adjoint() * c(sys.snr(), 0.0);
    hermitian_inv_sqrt(&k) * sys.effective(decode) * c(sys.snr().sqrt(), 0.0)
}

fn single_user_mi(sys: &MacSystem, user: User, g: &CMat, ev: &Evaluator) -> Result<McEstimate> {
    match ev {
        Evaluator::GaussianInput => {
            let n_r = g.nrows();
            let v = log_det_hpd(&(CMat::identity(n_r, n_r) + g * g.adjoint()));
            Ok(McEstimate::exact(v, InfoUnit::Nats))
        }
        _ => {
            let c = sys.constellation(user);
            let model = PosteriorModel::single(g, c.points(), c.probs())?;
            model_mi(&model, ev)
        }
    }
}

/// `I(x_d; y)` in bits with the other user treated as Gaussian noise.
pub fn mi_treat_as_noise(sys: &MacSystem, decode: User, seed: u64, n_samples: usize) -> Result<McEstimate> {
    mi_treat_as_noise_with(sys, decode, &Evaluator::mc(seed, n_samples)).map(McEstimate::to_bits)
}

/// Nats.
pub fn mi_treat_as_noise_with(sys: &MacSystem, decode: User, ev: &Evaluator) -> Result<McEstimate> {
    single_user_mi(sys, decode, &treat_as_noise_channel(sys, decode), ev)
}

/// `I(xₖ; y | xₗ)` in bits where `l = given`: the known signal is removed,
/// leaving user `k` alone on `√snr·HₖPₖ`.
pub fn conditional_mi(sys: &MacSystem, given: User, seed: u64, n_samples: usize) -> Result<McEstimate> {
    conditional_mi_with(sys, given, &Evaluator::mc(seed, n_samples)).map(McEstimate::to_bits)
}

/// Nats.
pub fn conditional_mi_with(sys: &MacSystem, given: User, ev: &Evaluator) -> Result<McEstimate> {
    let user = given.other();
    let g = sys.effective(user) * c(sys.snr().sqrt(), 0.0);
    single_user_mi(sys, user, &g, ev)
}

/// `log p(y|xₖ) − log p(y)` with the other user marginalized exactly.
struct MarginalKernel<'a> {
    model: &'a PosteriorModel,
    user: User,
    n_other: usize,
    log_pk: Vec<f64>,
}

impl Kernel for MarginalKernel<'_> {
    type Scratch = (Vec<f64>, Vec<C64>);

    fn dim(&self) -> usize {
        1
    }

    fn n_r(&self) -> usize {
        self.model.n_r()
    }

    fn scratch(&self) -> Self::Scratch {
        (Vec::new(), vec![C64::default(); self.n_r()])
    }

    fn eval(&self, s: &mut Self::Scratch, joint: usize, noise: &[C64], out: &mut [f64]) {
        let (logits, y) = s;
        let m = self.model;
        for ((y, sig), n) in y.iter_mut().zip(m.signal(joint)).zip(noise) {
            *y = sig + n;
        }
        let all = m.log_mixture(y, logits);
        let (i1, i2) = m.law().split(joint);
        let n2 = m.law().len() / self.log_pk.len().max(1);
        let (mine, picks): (usize, Vec<usize>) = match self.user {
            User::One => (i1, (0..self.n_other).map(|k| i1 * n2 + k).collect()),
            User::Two => (i2, (0..self.n_other).map(|k| k * n2 + i2).collect()),
        };
        let cond: Vec<f64> = picks.iter().map(|&j| logits[j]).collect();
        out[0] = log_sum_exp(&cond) - self.log_pk[mine] - all;
    }
}

/// Exact `I(xₖ; y)` in nats, with the other user's finite-alphabet
/// interference marginalized rather than Gaussianized.
pub fn marginal_mi_with(sys: &MacSystem, user: User, ev: &Evaluator) -> Result<McEstimate> {
    if matches!(ev, Evaluator::GaussianInput) {
        return mi_treat_as_noise_with(sys, user, ev);
    }
    let model = PosteriorModel::new(sys);
    let kernel = MarginalKernel {
        model: &model,
        user,
        n_other: sys.constellation(user.other()).len(),
        log_pk: sys.constellation(user).probs().iter().map(|p| p.ln()).collect(),
    };
    let mo = ev.integrate(&kernel, &model, None)?;
    let (v, se) = mo.get(0);
    Ok(McEstimate::nats(v, se, ev, mo.n))
}

/// Finite-difference step on the snr axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep {
    /// Fraction of the grid point.
    Relative(f64),
    Absolute(f64),
}

impl FdStep {
    pub fn at(self, snr: f64) -> f64 {
        match self {
            FdStep::Relative(r) => r * snr,
            FdStep::Absolute(h) => h,
        }
    }
}

impl Default for FdStep {
    fn default() -> Self {
        FdStep::Relative(0.01)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImmseOptions {
    pub fd_step: FdStep,
    /// Evaluates the mutual information on `snr ± step` (common random
    /// numbers when Monte-Carlo).
    pub mi: Evaluator,
    /// Evaluates the posterior statistics at the grid point.
    pub stats: Evaluator,
}

impl ImmseOptions {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self {
            fd_step: FdStep::default(),
            // boundary mixing keeps the difference quotient resolvable at
            // high snr, where dI/dsnr decays exponentially
            mi: Evaluator::MonteCarlo(McConfig::new(seed, n_samples).with_boundary_mix(Some(0.5))),
            stats: Evaluator::mc(seed ^ 0x5eed, n_samples),
        }
    }
}

/// Comparison of `dI/dsnr` against `mmse + ψ` along an snr grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmseReport {
    pub snr_grid: Vec<f64>,
    /// `I(snr)` in nats.
    pub i_values: Vec<McEstimate>,
    pub di_dsnr_fd: Vec<f64>,
    pub fd_std_error: Vec<f64>,
    pub mmse_plus_psi: Vec<f64>,
    pub mmse_only: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_std_error: Vec<f64>,
    /// `|FD − (mmse + ψ)| / |FD|` per grid point.
    pub rel_errors: Vec<f64>,
    /// Same without ψ.
    pub rel_errors_mmse_only: Vec<f64>,
    pub max_rel_error: f64,
}

/// Central difference of `I` (nats) along snr at `snr ± h`, sharing random
/// numbers; returns `(I(snr), dI/dsnr, std error of the derivative)`.
pub fn mi_snr_derivative(sys: &MacSystem, h: f64, ev: &Evaluator) -> Result<(McEstimate, f64, f64)> {
    let snr = sys.snr();
    if !(h > 0.0) || h >= snr {
        return Err(param("fd_step", format!("{h} must lie in (0, snr = {snr})")));
    }
    if matches!(ev, Evaluator::GaussianInput) {
        let f = |s: f64| sys.with_snr(s).map(|x| gaussian_mi(&x));
        let d = (f(snr + h)? - f(snr - h)?) / (2.0 * h);
        return Ok((McEstimate::exact(gaussian_mi(sys), InfoUnit::Nats), d, 0.0));
    }
    let center = PosteriorModel::new(sys);
    let up = PosteriorModel::new(&sys.with_snr(snr + h)?);
    let down = PosteriorModel::new(&sys.with_snr(snr - h)?);
    let inv = 1.0 / (2.0 * h);
    let kernel = MiKernel::new(vec![&center, &up, &down], vec![vec![0.0, inv, -inv]])?;
    let mo = ev.integrate_many(&kernel, &[&center, &up, &down], center.signals())?;
    let (i0, se0) = mo.get(0);
    let (d, sed) = mo.get(3);
    Ok((McEstimate::nats(i0, se0, ev, mo.n), d, sed))
}

pub fn immse_identity_check(template: &MacSystem, snr_grid: &[f64], opts: &ImmseOptions) -> Result<ImmseReport> {
    if snr_grid.is_empty() {
        return Err(param("snr_grid", "empty"));
    }
    if snr_grid.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(param("snr_grid", "values must be positive"));
    }
    for &s in snr_grid {
        let h = opts.fd_step.at(s);
        if !(h > 0.0 && h < s) {
            return Err(param("fd_step", format!("step {h} at snr {s} must lie in (0, snr)")));
        }
    }
    let mut r = ImmseReport {
        snr_grid: snr_grid.to_vec(),
        i_values: Vec::new(),
        di_dsnr_fd: Vec::new(),
        fd_std_error: Vec::new(),
        mmse_plus_psi: Vec::new(),
        mmse_only: Vec::new(),
        psi: Vec::new(),
        psi_std_error: Vec::new(),
        rel_errors: Vec::new(),
        rel_errors_mmse_only: Vec::new(),
        max_rel_error: 0.0,
    };
    for &snr in snr_grid {
        let sys = template.with_snr(snr)?;
        let (i0, d, sed) = mi_snr_derivative(&sys, opts.fd_step.at(snr), &opts.mi)?;
        let st = posterior_stats_with(&sys, &opts.stats)?;
        let target = st.mmse_total + st.psi_oracle;
        let rel = (d - target).abs() / d.abs().max(1e-300);
        r.i_values.push(i0);
        r.di_dsnr_fd.push(d);
        r.fd_std_error.push(sed);
        r.mmse_plus_psi.push(target);
        r.mmse_only.push(st.mmse_total);
        r.psi.push(st.psi_oracle);
        r.psi_std_error.push(st.std_errors.psi_oracle);
        r.rel_errors.push(rel);
        r.rel_errors_mmse_only.push((d - st.mmse_total).abs() / d.abs().max(1e-300));
        r.max_rel_error = r.max_rel_error.max(rel);
    }
    Ok(r)
}

/// Coefficients of the low-snr expansion `I ≈ a·snr + b·snr²` (nats).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowSnrExpansion {
    /// `Tr{A₁} + Tr{A₂}` with `Aₖ = HₖPₖ(HₖPₖ)†`.
    pub first_order: f64,
    /// `−Tr{A₁²} − Tr{A₂²} + Tr{A₁A₂} − Tr{A₂A₁}` as printed; the last two
    /// terms cancel identically.
    pub second_order: f64,
}

pub fn low_snr_expansion(sys: &MacSystem) -> LowSnrExpansion {
    let a1 = sys.effective(User::One);
    let a2 = sys.effective(User::Two);
    let g1 = &a1 * a1.adjoint();
    let g2 = &a2 * a2.adjoint();
    let first_order = trace(&g1).re + trace(&g2).re;
    let second_order = -trace(&(&g1 * &g1)).re - trace(&(&g2 * &g2)).re + trace(&(&g1 * &g2)).re
        - trace(&(&g2 * &g1)).re;
    LowSnrExpansion {
        first_order,
        second_order,
    }
}

/// Second-order coefficient measured from an evaluation at `snr`:
/// `(I(snr) − first_order·snr)/snr²` with its standard error.
pub fn measured_second_order(sys: &MacSystem, ev: &Evaluator) -> Result<(f64, f64)> {
    let snr = sys.snr();
    if !(snr > 0.0) {
        return Err(param("snr", "must be positive"));
    }
    let i = mutual_information_with(sys, ev)?;
    let a = low_snr_expansion(sys).first_order;
    Ok(((i.value - a * snr) / (snr * snr), i.std_error / (snr * snr)))
}
