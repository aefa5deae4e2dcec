//! Exact posterior computation over the finite joint alphabet.
//!
//! All densities are handled in the log domain; posterior weights come from
//! a log-sum-exp over the joint alphabet.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{param, Error, Result};
use crate::integrate::{
    collinear_direction, monte_carlo, quadrature, quadrature_along, JointLaw, Kernel, McConfig, Moments,
};
use crate::linalg::{c, frobenius, hermitian_inverse, trace, CMat, CVec, C64};
use crate::quadrature::NoiseRule;
use crate::system::{MacSystem, User};

/// `log Σ exp(vᵢ)`, `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log p(y | x₁, x₂)` in nats.
pub fn log_likelihood(sys: &MacSystem, y: &CVec, x1: &CVec, x2: &CVec) -> Result<f64> {
    if y.len() != sys.n_r() || x1.len() != sys.n_t() || x2.len() != sys.n_t() {
        return Err(Error::Dimension("y, x1, x2 do not match the system".into()));
    }
    let mean = sys.receive(x1, x2, &CVec::zeros(sys.n_r()));
    Ok(-(sys.n_r() as f64) * PI.ln() - (y - mean).norm_squared())
}

/// Precomputed signal geometry of a two-user posterior.
///
/// A single-user model is a two-user one whose second user has a single
/// zero point.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    n_r: usize,
    dims: [usize; 2],
    sizes: [usize; 2],
    /// Alphabet points, flat, `dims[k]` entries each.
    x: [Vec<C64>; 2],
    /// `HₖPₖxₖ` without √snr, flat, `n_r` entries each.
    ax: [Vec<C64>; 2],
    log_p: Vec<f64>,
    /// `√snr·(H₁P₁x₁ + H₂P₂x₂)`, flat, `n_r` entries per joint index.
    signals: Vec<C64>,
    law: JointLaw,
}

impl PosteriorModel {
    pub fn new(sys: &MacSystem) -> Self {
        let flat = |v: &[CVec]| v.iter().flat_map(|p| p.iter().copied()).collect::<Vec<_>>();
        let ax1 = sys.user_signals(User::One);
        let ax2 = sys.user_signals(User::Two);
        let p1 = sys.c1().probs();
        let p2 = sys.c2().probs();
        Self::assemble(
            sys.snr().sqrt(),
            sys.n_r(),
            [flat(sys.c1().points()), flat(sys.c2().points())],
            [flat(&ax1), flat(&ax2)],
            [sys.n_t(), sys.n_t()],
            p1,
            p2,
        )
    }

    /// Single-user model `y = G·x + n` (any scaling lives in `g`).
    pub fn single(g: &CMat, points: &[CVec], probs: &[f64]) -> Result<Self> {
        let n_t = g.ncols();
        if points.iter().any(|p| p.len() != n_t) || points.len() != probs.len() {
            return Err(Error::Dimension("alphabet does not match the channel".into()));
        }
        let x: Vec<C64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let ax: Vec<C64> = points.iter().flat_map(|p| (g * p).iter().copied().collect::<Vec<_>>()).collect();
        let n_r = g.nrows();
        Ok(Self::assemble(
            1.0,
            n_r,
            [x, vec![C64::default()]],
            [ax, vec![C64::default(); n_r]],
            [n_t, 1],
            probs,
            &[1.0],
        ))
    }

    fn assemble(
        sqrt_snr: f64,
        n_r: usize,
        x: [Vec<C64>; 2],
        ax: [Vec<C64>; 2],
        dims: [usize; 2],
        p1: &[f64],
        p2: &[f64],
    ) -> Self {
        let sizes = [p1.len(), p2.len()];
        let law = JointLaw::new(p1, p2);
        let log_p = law.probs().iter().map(|p| p.ln()).collect();
        let mut signals = Vec::with_capacity(sizes[0] * sizes[1] * n_r);
        for i in 0..sizes[0] {
            for k in 0..sizes[1] {
                for r in 0..n_r {
                    signals.push((ax[0][i * n_r + r] + ax[1][k * n_r + r]) * sqrt_snr);
                }
            }
        }
        Self {
            n_r,
            dims,
            sizes,
            x,
            ax,
            log_p,
            signals,
            law,
        }
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn law(&self) -> &JointLaw {
        &self.law
    }

    pub fn signals(&self) -> &[C64] {
        &self.signals
    }

    pub fn signal(&self, joint: usize) -> &[C64] {
        &self.signals[joint * self.n_r..(joint + 1) * self.n_r]
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_p
    }

    /// `log Σⱼ pⱼ e^{-‖y − sⱼ‖²}`, i.e. `log p_y(y) + n_r log π`.
    pub fn log_mixture(&self, y: &[C64], logits: &mut Vec<f64>) -> f64 {
        self.logits(y, logits);
        log_sum_exp(logits)
    }

    fn logits(&self, y: &[C64], logits: &mut Vec<f64>) {
        logits.clear();
        for (j, lp) in self.log_p.iter().enumerate() {
            let s = self.signal(j);
            let d: f64 = y.iter().zip(s).map(|(a, b)| (a - b).norm_sqr()).sum();
            logits.push(lp - d);
        }
    }

    /// Posterior weights at `y` into `w` (overwritten); returns the log of
    /// the mixture normalizer as in [`Self::log_mixture`].
    pub fn weights(&self, y: &[C64], w: &mut Vec<f64>) -> f64 {
        self.logits(y, w);
        let lse = log_sum_exp(w);
        for v in w.iter_mut() {
            *v = (*v - lse).exp();
        }
        lse
    }

    /// Marginal posterior weights of each user from joint weights.
    fn marginals(&self, w: &[f64], w1: &mut [f64], w2: &mut [f64]) {
        w1.iter_mut().for_each(|v| *v = 0.0);
        w2.iter_mut().for_each(|v| *v = 0.0);
        let n2 = self.sizes[1];
        for (j, &v) in w.iter().enumerate() {
            w1[j / n2] += v;
            w2[j % n2] += v;
        }
    }

    fn mean_into(src: &[C64], stride: usize, weights: &[f64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::default());
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(&src[i * stride..(i + 1) * stride]) {
                *o += s * w;
            }
        }
    }

    pub fn posterior(&self, y: &[C64]) -> PosteriorAtY {
        let mut w = Vec::with_capacity(self.log_p.len());
        let lse = self.weights(y, &mut w);
        let mut w1 = vec![0.0; self.sizes[0]];
        let mut w2 = vec![0.0; self.sizes[1]];
        self.marginals(&w, &mut w1, &mut w2);
        let mut xhat1 = vec![C64::default(); self.dims[0]];
        let mut xhat2 = vec![C64::default(); self.dims[1]];
        Self::mean_into(&self.x[0], self.dims[0], &w1, &mut xhat1);
        Self::mean_into(&self.x[1], self.dims[1], &w2, &mut xhat2);
        PosteriorAtY {
            y: CVec::from_column_slice(y),
            log_py: lse - self.n_r as f64 * PI.ln(),
            xhat1: CVec::from_vec(xhat1),
            xhat2: CVec::from_vec(xhat2),
            posterior_weights: w,
        }
    }

    /// `∇_{y*} log p_y(y)` from the mixture density directly: the
    /// responsibility-weighted average of `−(y − sⱼ)`.
    pub fn score(&self, y: &[C64]) -> CVec {
        let mut w = Vec::with_capacity(self.log_p.len());
        self.weights(y, &mut w);
        let mut g = CVec::zeros(self.n_r);
        for (j, &wj) in w.iter().enumerate() {
            for (r, s) in self.signal(j).iter().enumerate() {
                g[r] -= (y[r] - s) * wj;
            }
        }
        g
    }
}

/// Posterior at one received vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorAtY {
    pub y: CVec,
    /// `log p_y(y)` in nats.
    pub log_py: f64,
    pub xhat1: CVec,
    pub xhat2: CVec,
    /// One weight per joint index, lexicographic.
    pub posterior_weights: Vec<f64>,
}

pub fn posterior(sys: &MacSystem, y: &CVec) -> Result<PosteriorAtY> {
    if y.len() != sys.n_r() {
        return Err(Error::Dimension(format!("y has {} entries, expected {}", y.len(), sys.n_r())));
    }
    Ok(PosteriorModel::new(sys).posterior(y.as_slice()))
}

/// How expectations over the received vector are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluator {
    MonteCarlo(McConfig),
    /// Deterministic tensor quadrature; scalar receivers only.
    Quadrature(NoiseRule),
    /// Closed forms for Gaussian inputs with the same covariance; ignores
    /// the constellations.
    GaussianInput,
}

impl Evaluator {
    pub fn mc(seed: u64, n_samples: usize) -> Self {
        Evaluator::MonteCarlo(McConfig::new(seed, n_samples))
    }

    pub fn quadrature() -> Self {
        Evaluator::Quadrature(NoiseRule::default())
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Evaluator::MonteCarlo(_))
    }

    /// Same evaluator with the Monte-Carlo seed replaced.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Evaluator::MonteCarlo(cfg) => Evaluator::MonteCarlo(cfg.clone().with_seed(seed)),
            other => other.clone(),
        }
    }

    /// Integrates `kernel` over the model's joint law. `reference` anchors the
    /// Monte-Carlo boundary proposal (defaults to the model's own signals).
    pub fn integrate<K: Kernel>(
        &self,
        kernel: &K,
        model: &PosteriorModel,
        reference: Option<&[C64]>,
    ) -> Result<Moments> {
        match self {
            Evaluator::MonteCarlo(cfg) => {
                monte_carlo(kernel, model.law(), Some(reference.unwrap_or(model.signals())), cfg)
            }
            Evaluator::Quadrature(rule) => quadrature(kernel, model.law(), model.signals(), rule),
            Evaluator::GaussianInput => Err(Error::Numerical(
                "the Gaussian-input evaluator has no sampling path".into(),
            )),
        }
    }

    /// Like [`Evaluator::integrate`] for a kernel that evaluates several
    /// models sharing one joint law. Quadrature drops the orthogonal noise
    /// coordinate only when every model's signals lie on one common line.
    pub fn integrate_many<K: Kernel>(
        &self,
        kernel: &K,
        models: &[&PosteriorModel],
        reference: &[C64],
    ) -> Result<Moments> {
        let first = models.first().ok_or_else(|| param("models", "at least one model"))?;
        match self {
            Evaluator::Quadrature(rule) => {
                let all: Vec<C64> = models.iter().flat_map(|m| m.signals().iter().copied()).collect();
                quadrature_along(kernel, first.law(), collinear_direction(&all), rule)
            }
            _ => self.integrate(kernel, first, Some(reference)),
        }
    }
}

/// Per-sample posterior statistics. Output layout: `E₁` (re, im), `E₂`
/// (re, im), `x̂₁x̂₂†` (re, im), then the scalars listed in [`Scalar`].
struct StatsKernel<'a> {
    m: &'a PosteriorModel,
}

#[derive(Clone, Copy)]
enum Scalar {
    Mmse1,
    Mmse2,
    PsiOracle,
    PsiPaperIm,
    Combined,
}

const SCALARS: usize = 5;

struct StatsScratch {
    w: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
    y: Vec<C64>,
    xh1: Vec<C64>,
    xh2: Vec<C64>,
    axh1: Vec<C64>,
    axh2: Vec<C64>,
    e1: Vec<C64>,
    e2: Vec<C64>,
}

/// Writes `a·b†` row-major into `out[base..]`, real parts first.
fn outer(a: &[C64], b: &[C64], base: usize, out: &mut [f64]) {
    let cols = b.len();
    let size = a.len() * cols;
    for (i, ai) in a.iter().enumerate() {
        for (k, bk) in b.iter().enumerate() {
            let v = ai * bk.conj();
            out[base + i * cols + k] = v.re;
            out[base + size + i * cols + k] = v.im;
        }
    }
}

impl StatsKernel<'_> {
    /// Starts of the `E₁`, `E₂`, `e₁e₂†`, `x̂₁x̂₂†` blocks and the scalars.
    fn offsets(&self) -> [usize; 5] {
        let [d1, d2] = self.m.dims;
        let e1 = 0;
        let e2 = e1 + 2 * d1 * d1;
        let e12 = e2 + 2 * d2 * d2;
        let c12 = e12 + 2 * d1 * d2;
        let scalars = c12 + 2 * d1 * d2;
        [e1, e2, e12, c12, scalars]
    }
}

impl Kernel for StatsKernel<'_> {
    type Scratch = StatsScratch;

    fn dim(&self) -> usize {
        self.offsets()[4] + SCALARS
    }

    fn n_r(&self) -> usize {
        self.m.n_r
    }

    fn scratch(&self) -> StatsScratch {
        let m = self.m;
        StatsScratch {
            w: Vec::with_capacity(m.log_p.len()),
            w1: vec![0.0; m.sizes[0]],
            w2: vec![0.0; m.sizes[1]],
            y: vec![C64::default(); m.n_r],
            xh1: vec![C64::default(); m.dims[0]],
            xh2: vec![C64::default(); m.dims[1]],
            axh1: vec![C64::default(); m.n_r],
            axh2: vec![C64::default(); m.n_r],
            e1: vec![C64::default(); m.dims[0]],
            e2: vec![C64::default(); m.dims[1]],
        }
    }

    fn eval(&self, s: &mut StatsScratch, joint: usize, noise: &[C64], out: &mut [f64]) {
        let m = self.m;
        let n_r = m.n_r;
        for ((y, sig), n) in s.y.iter_mut().zip(m.signal(joint)).zip(noise) {
            *y = sig + n;
        }
        m.weights(&s.y, &mut s.w);
        m.marginals(&s.w, &mut s.w1, &mut s.w2);
        let [d1, d2] = m.dims;
        PosteriorModel::mean_into(&m.x[0], d1, &s.w1, &mut s.xh1);
        PosteriorModel::mean_into(&m.x[1], d2, &s.w2, &mut s.xh2);
        PosteriorModel::mean_into(&m.ax[0], n_r, &s.w1, &mut s.axh1);
        PosteriorModel::mean_into(&m.ax[1], n_r, &s.w2, &mut s.axh2);
        let (i1, i2) = m.law.split(joint);
        let x1 = &m.x[0][i1 * d1..(i1 + 1) * d1];
        let x2 = &m.x[1][i2 * d2..(i2 + 1) * d2];
        let [o_e1, o_e2, o_e12, o_c, o_s] = self.offsets();
        for (e, (x, xh)) in s.e1.iter_mut().zip(x1.iter().zip(&s.xh1)) {
            *e = x - xh;
        }
        for (e, (x, xh)) in s.e2.iter_mut().zip(x2.iter().zip(&s.xh2)) {
            *e = x - xh;
        }
        outer(&s.e1, &s.e1, o_e1, out);
        outer(&s.e2, &s.e2, o_e2, out);
        outer(&s.e1, &s.e2, o_e12, out);
        outer(&s.xh1, &s.xh2, o_c, out);
        let (mut m1, mut m2, mut cross, mut paper) = (0.0, 0.0, C64::default(), C64::default());
        for r in 0..n_r {
            let e1 = m.ax[0][i1 * n_r + r] - s.axh1[r];
            let e2 = m.ax[1][i2 * n_r + r] - s.axh2[r];
            m1 += e1.norm_sqr();
            m2 += e2.norm_sqr();
            cross += e2.conj() * e1;
            paper += s.axh2[r].conj() * s.axh1[r];
        }
        out[o_s + Scalar::Mmse1 as usize] = m1;
        out[o_s + Scalar::Mmse2 as usize] = m2;
        out[o_s + Scalar::PsiOracle as usize] = 2.0 * cross.re;
        out[o_s + Scalar::PsiPaperIm as usize] = 2.0 * paper.im;
        out[o_s + Scalar::Combined as usize] = m1 + m2 + 2.0 * cross.re;
    }
}

/// Standard errors accompanying [`PosteriorStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct StatErrors {
    pub mmse1: f64,
    pub mmse2: f64,
    pub mmse_total: f64,
    pub psi_oracle: f64,
    /// Of the imaginary part of `psi_paper` (the real part is identically 0).
    pub psi_paper: f64,
    pub combined: f64,
    /// Entrywise `√(se_re² + se_im²)`.
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
    pub cross12_re: DMatrix<f64>,
    pub cross12_im: DMatrix<f64>,
}

/// Second-order posterior statistics of a system.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    /// `E[(x₁ − x̂₁)(x₁ − x̂₁)†]`.
    pub e1: CMat,
    pub e2: CMat,
    /// `E[x̂₁x̂₂†]`, estimated as `−E[e₁e₂†]` (equal in expectation for
    /// zero-mean inputs, much less noisy).
    pub cross12: CMat,
    /// Plain average of `x̂₁x̂₂†`.
    pub cross12_direct: CMat,
    /// `Tr{H₁P₁E₁(H₁P₁)†}`.
    pub mmse1: f64,
    pub mmse2: f64,
    pub mmse_total: f64,
    /// `Tr{H₁P₁C₁₂(H₂P₂)†} − conj(·)`, purely imaginary.
    pub psi_paper: C64,
    /// `E‖z − ẑ‖² − mmse₁ − mmse₂` for `z = H₁P₁x₁ + H₂P₂x₂`; equals
    /// `−2·Re Tr{H₁P₁C₁₂(H₂P₂)†}`.
    pub psi_oracle: f64,
    /// `E‖z − ẑ‖² = mmse_total + psi_oracle`, the snr-derivative of the
    /// mutual information in nats.
    pub combined: f64,
    /// Monte-Carlo draws; 0 for deterministic evaluators.
    pub sample_count: usize,
    pub std_errors: StatErrors,
}

impl PosteriorStats {
    pub fn e(&self, user: User) -> &CMat {
        match user {
            User::One => &self.e1,
            User::Two => &self.e2,
        }
    }

    /// `E[x̂ₗx̂ₖ†]` where `l` is the other user: the cross term entering
    /// user `k`'s gradient.
    pub fn cross_into(&self, user: User) -> CMat {
        match user {
            User::One => self.cross12.adjoint(),
            User::Two => self.cross12.clone(),
        }
    }

    pub fn mmse(&self, user: User) -> f64 {
        match user {
            User::One => self.mmse1,
            User::Two => self.mmse2,
        }
    }

    /// `Tr{H₁P₁E₁(H₁P₁)†} + Tr{H₂P₂E₂(H₂P₂)†}` from the stored matrices.
    pub fn recompute_mmse(&self, sys: &MacSystem) -> f64 {
        User::both()
            .iter()
            .map(|&u| {
                let a = sys.effective(u);
                trace(&(&a * self.e(u) * a.adjoint())).re
            })
            .sum()
    }

    /// `−2·Re Tr{H₁P₁C₁₂(H₂P₂)†}` from the stored cross-covariance.
    pub fn recompute_psi(&self, sys: &MacSystem) -> f64 {
        let t = trace(&(sys.effective(User::One) * &self.cross12 * sys.effective(User::Two).adjoint()));
        -2.0 * t.re
    }

    fn from_moments(m: &PosteriorModel, k: &StatsKernel<'_>, mo: &Moments, sample_count: usize) -> Self {
        let [d1, d2] = m.dims;
        let [o_e1, o_e2, o_e12, o_c, o_s] = k.offsets();
        let mat = |base: usize, rows: usize, cols: usize| {
            let size = rows * cols;
            let v = CMat::from_fn(rows, cols, |i, j| {
                c(mo.mean[base + i * cols + j], mo.mean[base + size + i * cols + j])
            });
            let re = DMatrix::from_fn(rows, cols, |i, j| mo.std_error[base + i * cols + j]);
            let im = DMatrix::from_fn(rows, cols, |i, j| mo.std_error[base + size + i * cols + j]);
            (v, re, im)
        };
        let herm = |x: CMat| (&x + x.adjoint()) * c(0.5, 0.0);
        let (e1, e1r, e1i) = mat(o_e1, d1, d1);
        let (e2, e2r, e2i) = mat(o_e2, d2, d2);
        // zero-mean inputs: E[e₁e₂†] = −E[x̂₁x̂₂†]
        let (e12, cr, ci) = mat(o_e12, d1, d2);
        let (cross12_direct, _, _) = mat(o_c, d1, d2);
        let s = |k: Scalar| mo.get(o_s + k as usize);
        let (mmse1, se1) = s(Scalar::Mmse1);
        let (mmse2, se2) = s(Scalar::Mmse2);
        let (psi_oracle, sepsi) = s(Scalar::PsiOracle);
        let (paper_im, sepaper) = s(Scalar::PsiPaperIm);
        let (combined, secomb) = s(Scalar::Combined);
        // The total's std error comes from the per-sample sum; recover it
        // from the combined and ψ terms' errors conservatively.
        let se_total = (se1 * se1 + se2 * se2).sqrt().max((secomb - sepsi).abs());
        Self {
            e1: herm(e1),
            e2: herm(e2),
            cross12: -e12,
            cross12_direct,
            mmse1,
            mmse2,
            mmse_total: mmse1 + mmse2,
            psi_paper: c(0.0, paper_im),
            psi_oracle,
            combined,
            sample_count,
            std_errors: StatErrors {
                mmse1: se1,
                mmse2: se2,
                mmse_total: se_total,
                psi_oracle: sepsi,
                psi_paper: sepaper,
                combined: secomb,
                e1: e1r.zip_map(&e1i, |a, b| a.hypot(b)),
                e2: e2r.zip_map(&e2i, |a, b| a.hypot(b)),
                cross12_re: cr,
                cross12_im: ci,
            },
        }
    }
}

/// Monte-Carlo posterior statistics with default sampling options.
pub fn posterior_stats(sys: &MacSystem, seed: u64, n_samples: usize) -> Result<PosteriorStats> {
    posterior_stats_with(sys, &Evaluator::mc(seed, n_samples))
}

pub fn posterior_stats_with(sys: &MacSystem, ev: &Evaluator) -> Result<PosteriorStats> {
    match ev {
        Evaluator::GaussianInput => Ok(gaussian_stats(sys)),
        _ => {
            let model = PosteriorModel::new(sys);
            model_stats(&model, ev, None)
        }
    }
}

/// Statistics for an arbitrary model; `reference` as in
/// [`Evaluator::integrate`].
pub fn model_stats(model: &PosteriorModel, ev: &Evaluator, reference: Option<&[C64]>) -> Result<PosteriorStats> {
    let kernel = StatsKernel { m: model };
    let mo = ev.integrate(&kernel, model, reference)?;
    let count = if ev.is_deterministic() { 0 } else { mo.n };
    let stats = PosteriorStats::from_moments(model, &kernel, &mo, count);
    if !stats.combined.is_finite() || !stats.mmse_total.is_finite() {
        return Err(Error::Numerical("posterior statistics are not finite".into()));
    }
    Ok(stats)
}

/// Effective precoders `√snr·Pₖ` and the receive covariance
/// `K = I + Σₖ HₖP̃ₖP̃ₖ†Hₖ†` of the Gaussian-input model.
fn gaussian_parts(sys: &MacSystem) -> ([CMat; 2], CMat) {
    let s = c(sys.snr().sqrt(), 0.0);
    let g = [sys.effective(User::One) * s, sys.effective(User::Two) * s];
    let n_r = sys.n_r();
    let k = CMat::identity(n_r, n_r) + &g[0] * g[0].adjoint() + &g[1] * g[1].adjoint();
    (g, k)
}

/// Closed-form statistics when both inputs are `CN(0, I)`: the conditional
/// mean is the linear MMSE estimate `x̂ₖ = P̃ₖ†Hₖ†K⁻¹y`.
pub fn gaussian_stats(sys: &MacSystem) -> PosteriorStats {
    let (g, k) = gaussian_parts(sys);
    let kinv = hermitian_inverse(&k);
    let n_t = sys.n_t();
    let eye = CMat::identity(n_t, n_t);
    let e1 = &eye - g[0].adjoint() * &kinv * &g[0];
    let e2 = &eye - g[1].adjoint() * &kinv * &g[1];
    let cross12 = g[0].adjoint() * &kinv * &g[1];
    let a1 = sys.effective(User::One);
    let a2 = sys.effective(User::Two);
    let mmse1 = trace(&(&a1 * &e1 * a1.adjoint())).re;
    let mmse2 = trace(&(&a2 * &e2 * a2.adjoint())).re;
    let t = trace(&(&a1 * &cross12 * a2.adjoint()));
    let psi_oracle = -2.0 * t.re;
    let zeros = DMatrix::zeros(n_t, n_t);
    PosteriorStats {
        e1,
        e2,
        cross12_direct: cross12.clone(),
        cross12,
        mmse1,
        mmse2,
        mmse_total: mmse1 + mmse2,
        psi_paper: t - t.conj(),
        psi_oracle,
        combined: mmse1 + mmse2 + psi_oracle,
        sample_count: 0,
        std_errors: StatErrors {
            mmse1: 0.0,
            mmse2: 0.0,
            mmse_total: 0.0,
            psi_oracle: 0.0,
            psi_paper: 0.0,
            combined: 0.0,
            e1: zeros.clone(),
            e2: zeros.clone(),
            cross12_re: zeros.clone(),
            cross12_im: zeros,
        },
    }
}

/// Residual norms of the score identity under three readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResiduals {
    /// `‖√snr·H₁P₁x̂₁ + √snr·H₂P₂x̂₂ − y − ∇log p_y‖`, the mixture-score form.
    pub scaled_plus: f64,
    /// Without the √snr factors.
    pub unscaled_plus: f64,
    /// √snr factors with a minus between the user terms.
    pub scaled_minus: f64,
}

pub fn score_identity_variants(sys: &MacSystem, y: &CVec) -> Result<ScoreResiduals> {
    let model = PosteriorModel::new(sys);
    let post = posterior(sys, y)?;
    let score = model.score(y.as_slice());
    let a1 = sys.effective(User::One) * &post.xhat1;
    let a2 = sys.effective(User::Two) * &post.xhat2;
    let s = sys.snr().sqrt();
    let base = y + &score;
    Ok(ScoreResiduals {
        scaled_plus: ((&a1 + &a2) * c(s, 0.0) - &base).norm(),
        unscaled_plus: (&a1 + &a2 - &base).norm(),
        scaled_minus: ((&a1 - &a2) * c(s, 0.0) - &base).norm(),
    })
}

/// Residual of the mixture-score identity; see [`ScoreResiduals::scaled_plus`].
pub fn score_identity_residual(sys: &MacSystem, y: &CVec) -> Result<f64> {
    Ok(score_identity_variants(sys, y)?.scaled_plus)
}

/// Recovers `x̂ₖ` from the score and the other user's estimate,
/// `x̂ₖ = (√snr·HₖPₖ)⁻¹(y + ∇log p_y − √snr·HₗPₗx̂ₗ)`. Defined only when
/// `HₖPₖ` is square and invertible.
pub fn estimate_from_score(sys: &MacSystem, user: User, y: &CVec) -> Result<CVec> {
    let a = sys.effective(user) * c(sys.snr().sqrt(), 0.0);
    if !a.is_square() {
        return Err(Error::Dimension("HP is not square".into()));
    }
    let inv = a
        .clone()
        .try_inverse()
        .filter(|inv| frobenius(inv).is_finite())
        .ok_or_else(|| Error::Numerical("HP is singular".into()))?;
    let post = posterior(sys, y)?;
    let other = match user {
        User::One => &post.xhat2,
        User::Two => &post.xhat1,
    };
    let model = PosteriorModel::new(sys);
    let score = model.score(y.as_slice());
    let interf = sys.effective(user.other()) * other * c(sys.snr().sqrt(), 0.0);
    Ok(inv * (y + score - interf))
}

/// Linear MMSE (Wiener) estimates `x̂ₖ = P̃ₖ†Hₖ†(I + Σⱼ HⱼP̃ⱼP̃ⱼ†Hⱼ†)⁻¹y` with
/// `P̃ = √snr·P`. For scalar systems this equals
/// `P̃ₖ†Hₖ†(1 + Σⱼ P̃ⱼ†Hⱼ†HⱼP̃ⱼ)⁻¹y`.
pub fn wiener_estimates(sys: &MacSystem, y: &CVec) -> Result<(CVec, CVec)> {
    if y.len() != sys.n_r() {
        return Err(Error::Dimension("y does not match n_r".into()));
    }
    let (g, k) = gaussian_parts(sys);
    let z = hermitian_inverse(&k) * y;
    Ok((g[0].adjoint() * &z, g[1].adjoint() * &z))
}

/// Matched-sample comparison of linear and conditional-mean estimation
/// errors, per user, as `E‖xₖ − x̂ₖ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerComparison {
    pub linear: [f64; 2],
    pub nonlinear: [f64; 2],
    /// Of the per-user excess `linear − nonlinear`.
    pub excess_std_error: [f64; 2],
    /// Closed-form linear MSE `Tr{I − P̃ₖ†Hₖ†K⁻¹HₖP̃ₖ}`.
    pub linear_theory: [f64; 2],
}

struct WienerKernel<'a> {
    m: &'a PosteriorModel,
    filters: [CMat; 2],
}

impl Kernel for WienerKernel<'_> {
    type Scratch = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<C64>);

    fn dim(&self) -> usize {
        6
    }

    fn n_r(&self) -> usize {
        self.m.n_r
    }

    fn scratch(&self) -> Self::Scratch {
        (Vec::new(), vec![0.0; self.m.sizes[0]], vec![0.0; self.m.sizes[1]], vec![C64::default(); self.m.n_r])
    }

    fn eval(&self, s: &mut Self::Scratch, joint: usize, noise: &[C64], out: &mut [f64]) {
        let m = self.m;
        let (w, w1, w2, y) = s;
        for ((y, sig), n) in y.iter_mut().zip(m.signal(joint)).zip(noise) {
            *y = sig + n;
        }
        m.weights(y, w);
        m.marginals(w, w1, w2);
        let (i1, i2) = m.law.split(joint);
        let yv = CVec::from_column_slice(y);
        for (u, (wu, iu)) in [(&*w1, i1), (&*w2, i2)].into_iter().enumerate() {
            let d = m.dims[u];
            let x = &m.x[u][iu * d..(iu + 1) * d];
            let mut xh = vec![C64::default(); d];
            PosteriorModel::mean_into(&m.x[u], d, wu, &mut xh);
            let lin = &self.filters[u] * &yv;
            let nl: f64 = x.iter().zip(&xh).map(|(a, b)| (a - b).norm_sqr()).sum();
            let l: f64 = x.iter().zip(lin.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            out[u] = l;
            out[2 + u] = nl;
            out[4 + u] = l - nl;
        }
    }
}

pub fn wiener_comparison(sys: &MacSystem, ev: &Evaluator) -> Result<WienerComparison> {
    let model = PosteriorModel::new(sys);
    let (g, k) = gaussian_parts(sys);
    let kinv = hermitian_inverse(&k);
    let filters = [g[0].adjoint() * &kinv, g[1].adjoint() * &kinv];
    let n_t = sys.n_t();
    let theory = |u: usize| (n_t as f64) - trace(&(&filters[u] * &g[u])).re;
    let kernel = WienerKernel { m: &model, filters: filters.clone() };
    let mo = ev.integrate(&kernel, &model, None)?;
    Ok(WienerComparison {
        linear: [mo.mean[0], mo.mean[1]],
        nonlinear: [mo.mean[2], mo.mean[3]],
        excess_std_error: [mo.std_error[4], mo.std_error[5]],
        linear_theory: [theory(0), theory(1)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::Constellation;
    use crate::linalg::{is_hermitian, random_complex};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one() -> C64 {
        c(1.0, 0.0)
    }

    fn scalar(y: C64) -> CVec {
        CVec::from_element(1, y)
    }

    fn random_system(seed: u64, snr: f64) -> MacSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b2 = Constellation::bpsk().cartesian_power(2).unwrap();
        MacSystem::new(
            random_complex(2, 2, &mut rng),
            random_complex(2, 2, &mut rng),
            random_complex(2, 2, &mut rng),
            random_complex(2, 2, &mut rng),
            snr,
            b2.clone(),
            b2,
        )
        .unwrap()
    }

    #[test]
    fn log_likelihood_examples() {
        let lpi = -PI.ln();
        let s0 = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(log_likelihood(&s0, &scalar(c(0.0, 0.0)), &scalar(one()), &scalar(one())).unwrap(), lpi);
        let s1 = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(
            log_likelihood(&s1, &scalar(one()), &scalar(one()), &scalar(one())).unwrap(),
            lpi - 1.0
        );
        assert_relative_eq!(
            log_likelihood(&s1, &scalar(c(0.0, 0.0)), &scalar(one()), &scalar(-one())).unwrap(),
            lpi
        );
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_relative_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln());
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(&[800.0, 0.0]), 800.0);
    }

    #[test]
    fn posterior_at_zero_snr_is_prior() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 0.0).unwrap();
        let p = posterior(&sys, &scalar(c(0.7, -0.2))).unwrap();
        assert!(p.xhat1.norm() < 1e-15 && p.xhat2.norm() < 1e-15);
        assert!(p.posterior_weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_user_posterior_is_tanh() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 0.0, 1.0).unwrap();
        let p = posterior(&sys, &scalar(c(0.5, 0.0))).unwrap();
        assert_relative_eq!(p.xhat1[0].re, (2.0f64 * 0.5).tanh(), epsilon = 1e-14);
        assert_relative_eq!(p.xhat1[0].re, 0.76159, epsilon = 1e-5);
        for snr in [0.3, 4.0] {
            let sys = sys.with_snr(snr).unwrap();
            for y in [-1.3, 0.1, 2.2] {
                let p = posterior(&sys, &scalar(c(y, 0.4))).unwrap();
                assert_relative_eq!(p.xhat1[0].re, (2.0 * snr.sqrt() * y).tanh(), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn symmetric_output_gives_zero_estimates() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 2.0).unwrap();
        let p = posterior(&sys, &scalar(c(0.0, 0.0))).unwrap();
        assert!(p.xhat1.norm() < 1e-15 && p.xhat2.norm() < 1e-15);
    }

    #[test]
    fn posterior_survives_extreme_snr() {
        let sys = MacSystem::scalar_bpsk(one(), c(0.0, 1.0), 1.0, 1.0, 1e6).unwrap();
        let p = posterior(&sys, &scalar(c(50.0, -80.0))).unwrap();
        let total: f64 = p.posterior_weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(p.log_py.is_finite());
        assert_relative_eq!(p.xhat1[0].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.xhat2[0].re, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_snr_statistics_are_prior() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 0.0).unwrap();
        let st = posterior_stats(&sys, 1, 2000).unwrap();
        assert_eq!(st.e1[(0, 0)], one());
        assert_eq!(st.e2[(0, 0)], one());
        assert_eq!(st.cross12_direct[(0, 0)], C64::default());
        let z = st.cross12[(0, 0)];
        assert!(z.re.abs() <= 5.0 * st.std_errors.cross12_re[(0, 0)] + 1e-15);
        assert!(z.im.abs() <= 5.0 * st.std_errors.cross12_im[(0, 0)] + 1e-15);
        let q = posterior_stats_with(&sys, &Evaluator::quadrature()).unwrap();
        assert_relative_eq!(q.e1[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_users_are_uncorrelated() {
        let sys = MacSystem::scalar_bpsk(one(), c(0.0, 1.0), 1.0, 1.0, 1.5).unwrap();
        let st = posterior_stats(&sys, 3, 50_000).unwrap();
        let (re, im) = (st.cross12[(0, 0)].re, st.cross12[(0, 0)].im);
        assert!(re.abs() <= 5.0 * st.std_errors.cross12_re[(0, 0)] + 1e-15);
        assert!(im.abs() <= 5.0 * st.std_errors.cross12_im[(0, 0)] + 1e-15);
        let q = posterior_stats_with(&sys, &Evaluator::quadrature()).unwrap();
        assert!(q.cross12[(0, 0)].norm() < 1e-12);
        assert!(q.psi_oracle.abs() < 1e-12);
    }

    #[test]
    fn cophase_mmse_plateaus() {
        let two = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 400.0).unwrap();
        let single = MacSystem::scalar_bpsk(one(), one(), 1.0, 0.0, 400.0).unwrap();
        let q = Evaluator::Quadrature(NoiseRule::composite_legendre(9.0, 0.05, 10).unwrap());
        let st2 = posterior_stats_with(&two, &q).unwrap();
        let st1 = posterior_stats_with(&single, &q).unwrap();
        // (+1,−1) and (−1,+1) collide at y = 0 and stay unresolvable
        assert!(st2.mmse_total > 0.9, "{}", st2.mmse_total);
        assert!(st1.mmse_total < 1e-25, "{}", st1.mmse_total);
        // the collision leaves E‖z − ẑ‖² → 0 while ψ cancels the plateau
        assert!(st2.combined < 1e-40);
    }

    #[test]
    fn quadrature_and_mc_agree() {
        let sys = MacSystem::scalar_bpsk(one(), c(0.6, 0.8), 1.0, 0.7, 2.0).unwrap();
        let q = posterior_stats_with(&sys, &Evaluator::quadrature()).unwrap();
        let mc = posterior_stats(&sys, 9, 100_000).unwrap();
        for (a, b, se) in [
            (q.mmse1, mc.mmse1, mc.std_errors.mmse1),
            (q.mmse2, mc.mmse2, mc.std_errors.mmse2),
            (q.psi_oracle, mc.psi_oracle, mc.std_errors.psi_oracle),
            (q.combined, mc.combined, mc.std_errors.combined),
        ] {
            assert!((a - b).abs() < 5.0 * se, "{a} vs {b} ± {se}");
        }
    }

    #[test]
    fn stored_parts_are_consistent() {
        let sys = random_system(4, 2.0);
        let st = posterior_stats(&sys, 2, 4096).unwrap();
        assert_relative_eq!(st.recompute_mmse(&sys), st.mmse_total, max_relative = 1e-10);
        // the error-based C₁₂ reproduces ψ sample by sample
        assert_relative_eq!(st.recompute_psi(&sys), st.psi_oracle, max_relative = 1e-9);
        // the direct average agrees only in expectation
        let sc = MacSystem::scalar_bpsk(one(), c(0.3, 0.9), 0.8, 1.1, 2.0).unwrap();
        let q = posterior_stats_with(&sc, &Evaluator::quadrature()).unwrap();
        assert!((&q.cross12 - &q.cross12_direct).norm() < 1e-9);
        assert_relative_eq!(st.combined, st.mmse_total + st.psi_oracle, max_relative = 1e-10);
        let t = trace(&(sys.effective(User::One) * &st.cross12_direct * sys.effective(User::Two).adjoint()));
        assert_relative_eq!(st.psi_paper.im, 2.0 * t.im, max_relative = 1e-9, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_stats_match_lmmse_algebra() {
        let sys = random_system(8, 1.3);
        let st = gaussian_stats(&sys);
        assert!(is_hermitian(&st.e1, 1e-12));
        let s = c(1.3f64.sqrt(), 0.0);
        let g1 = sys.effective(User::One) * s;
        let g2 = sys.effective(User::Two) * s;
        let n = CMat::identity(2, 2);
        // joint LMMSE error of the stacked input
        let g = CMat::from_fn(2, 4, |i, j| if j < 2 { g1[(i, j)] } else { g2[(i, j - 2)] });
        let joint = (CMat::identity(4, 4) + g.adjoint() * &g).try_inverse().unwrap();
        let e1 = joint.view((0, 0), (2, 2)).into_owned();
        assert!(frobenius(&(e1 - &st.e1)) < 1e-10);
        let k = &n + &g1 * g1.adjoint() + &g2 * g2.adjoint();
        assert!(st.combined > 0.0);
        assert!(k.determinant().re > 0.0);
    }

    #[test]
    fn score_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..3 {
            let sys = random_system(seed, 2.5);
            for _ in 0..20 {
                let y = random_complex(2, 1, &mut rng).column(0) * c(3.0, 0.0);
                let r = score_identity_variants(&sys, &y).unwrap();
                assert!(r.scaled_plus <= 1e-8, "{r:?}");
            }
        }
        let s0 = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 0.0).unwrap();
        let model = PosteriorModel::new(&s0);
        let y = [c(0.3, -1.2)];
        let score = model.score(&y);
        assert!((score[0] + y[0]).norm() < 1e-12);
    }

    #[test]
    fn score_matches_finite_differences_of_log_density() {
        let sys = random_system(11, 1.7);
        let model = PosteriorModel::new(&sys);
        let y = [c(0.4, -0.3), c(-1.1, 0.8)];
        let mut buf = Vec::new();
        let score = model.score(&y);
        let h = 1e-6;
        for r in 0..2 {
            let mut f = |d: C64| {
                let mut yy = y;
                yy[r] += d;
                model.log_mixture(&yy, &mut buf)
            };
            let d_re = (f(c(h, 0.0)) - f(c(-h, 0.0))) / (2.0 * h);
            let d_im = (f(c(0.0, h)) - f(c(0.0, -h))) / (2.0 * h);
            // ∂/∂y* = (∂_re + i∂_im)/2
            let fd = c(d_re, d_im) * 0.5;
            assert!((fd - score[r]).norm() < 1e-7, "{fd} vs {}", score[r]);
        }
    }

    #[test]
    fn estimate_from_score_recovers_posterior_mean() {
        let sys = random_system(2, 1.0);
        let y = CVec::from_vec(vec![c(0.2, 0.1), c(-0.5, 0.9)]);
        let post = posterior(&sys, &y).unwrap();
        let x1 = estimate_from_score(&sys, User::One, &y).unwrap();
        assert!((x1 - post.xhat1).norm() < 1e-9);
        let tall = MacSystem::new(
            CMat::identity(3, 2),
            CMat::identity(3, 2),
            CMat::identity(2, 2),
            CMat::identity(2, 2),
            1.0,
            Constellation::bpsk().cartesian_power(2).unwrap(),
            Constellation::bpsk().cartesian_power(2).unwrap(),
        )
        .unwrap();
        assert!(estimate_from_score(&tall, User::One, &CVec::zeros(3)).is_err());
    }

    #[test]
    fn wiener_examples() {
        let zero = MacSystem::scalar_bpsk(c(0.0, 0.0), c(0.0, 0.0), 1.0, 1.0, 1.0).unwrap();
        let (a, b) = wiener_estimates(&zero, &scalar(c(1.0, 2.0))).unwrap();
        assert_eq!((a[0], b[0]), (C64::default(), C64::default()));
        let single = MacSystem::scalar_bpsk(one(), c(0.0, 0.0), 1.0, 1.0, 1.0).unwrap();
        let y = scalar(c(0.8, -0.4));
        let (a, _) = wiener_estimates(&single, &y).unwrap();
        assert!((a[0] - y[0] * 0.5).norm() < 1e-15);
    }

    #[test]
    fn wiener_coefficient_is_mse_minimal() {
        // scalar single user: the MSE of x̂ = w·y is 1 − 2√snr·w + w²(1+snr),
        // minimized at √snr/(1+snr)
        let snr: f64 = 2.3;
        let sys = MacSystem::scalar_bpsk(one(), c(0.0, 0.0), 1.0, 1.0, snr).unwrap();
        let (a, _) = wiener_estimates(&sys, &scalar(one())).unwrap();
        let mse = |w: f64| 1.0 - 2.0 * snr.sqrt() * w + w * w * (1.0 + snr);
        let best = snr.sqrt() / (1.0 + snr);
        assert_relative_eq!(a[0].re, best, epsilon = 1e-14);
        assert!(mse(best) < mse(best * 1.01) && mse(best) < mse(best * 0.99));
    }

    #[test]
    fn linear_error_dominates() {
        let sys = random_system(6, 1.5);
        let cmp = wiener_comparison(&sys, &Evaluator::mc(1, 20_000)).unwrap();
        for u in 0..2 {
            assert!(cmp.linear[u] >= cmp.nonlinear[u]);
            assert!((cmp.linear[u] - cmp.linear_theory[u]).abs() < 0.05 * cmp.linear_theory[u]);
        }
    }

    fn scalar_case() -> impl Strategy<Value = MacSystem> {
        (0.0f64..6.0, 0.0f64..std::f64::consts::TAU, 0.2f64..1.5, 0.0f64..1.5).prop_map(|(snr, phase, p1, p2)| {
            MacSystem::scalar_bpsk(one(), C64::from_polar(1.0, phase), p1, p2, snr).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn posterior_invariants(sys in scalar_case(), yre in -4.0f64..4.0, yim in -4.0f64..4.0) {
            let p = posterior(&sys, &scalar(c(yre, yim))).unwrap();
            let total: f64 = p.posterior_weights.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-10);
            prop_assert!(p.xhat1.norm() <= 1.0 + 1e-12);
            prop_assert!(p.xhat2.norm() <= 1.0 + 1e-12);
            let r = score_identity_residual(&sys, &p.y).unwrap();
            prop_assert!(r <= 1e-10);
        }

        #[test]
        fn stats_invariants(sys in scalar_case()) {
            let st = posterior_stats_with(&sys, &Evaluator::quadrature()).unwrap();
            for e in [&st.e1, &st.e2] {
                prop_assert!(is_hermitian(e, 1e-12));
                let v = e[(0, 0)].re;
                prop_assert!((-1e-8..=1.0 + 1e-8).contains(&v));
            }
            prop_assert!(st.psi_oracle <= 1e-12);
            let bound = 2.0 * (st.mmse1 * st.mmse2).sqrt();
            prop_assert!(st.psi_oracle.abs() <= bound * (1.0 + 1e-9) + 1e-14);
            let cmp = wiener_comparison(&sys, &Evaluator::quadrature()).unwrap();
            prop_assert!(cmp.linear[0] >= cmp.nonlinear[0] - 1e-12);
            prop_assert!(cmp.linear[1] >= cmp.nonlinear[1] - 1e-12);
        }
    }
}
