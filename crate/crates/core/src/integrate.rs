//! Expectation engine shared by every estimator.
//!
//! A [`Kernel`] maps a joint input index and a noise realization to a vector
//! of per-sample values. The engine averages it either by Monte-Carlo with
//! counter-based random streams or by tensor quadrature over the noise.
//!
//! Monte-Carlo draws are grouped in fixed chunks of [`CHUNK`] draws; chunk
//! `c` reads stream `c` of a ChaCha8 generator seeded with the run seed, and
//! partial moments are merged in chunk order. The result is therefore
//! bit-identical for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::linalg::{c, C64};
use crate::quadrature::NoiseRule;

/// Draws per random stream.
pub const CHUNK: usize = 1024;

/// Monte-Carlo settings. `n_samples` counts draws; an antithetic pair or a
/// stratified sweep over the joint alphabet is a single draw.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Pair each noise draw with its negation.
    pub antithetic: bool,
    /// Average over the whole joint alphabet for every noise draw instead of
    /// sampling the inputs.
    pub stratify: bool,
    /// Weight of the defensive importance-sampling mixture that places extra
    /// noise mass on the decision boundaries midway between signal points.
    pub boundary_mix: Option<f64>,
}

impl McConfig {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self {
            seed,
            n_samples,
            antithetic: true,
            stratify: false,
            boundary_mix: None,
        }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn with_stratify(mut self, on: bool) -> Self {
        self.stratify = on;
        self
    }

    pub fn with_boundary_mix(mut self, mix: Option<f64>) -> Self {
        self.boundary_mix = mix;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(param("n_samples", "must be at least 1"));
        }
        if let Some(m) = self.boundary_mix {
            if !(m > 0.0 && m < 1.0) {
                return Err(param("boundary_mix", format!("{m} is outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Independent child seed for `index` (iterations, grid points, restarts).
/// Uses a stream range disjoint from the sampling chunks.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index | 1 << 63);
    rng.random()
}

/// Sampling distribution over indices given by a cumulative table.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        Self { cdf }
    }

    /// Inverse-CDF lookup for `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let total = *self.cdf.last().unwrap_or(&1.0);
        let target = u * total;
        self.cdf
            .partition_point(|&c| c <= target)
            .min(self.cdf.len() - 1)
    }
}

/// Product law of the two users' inputs, indexed lexicographically.
#[derive(Debug, Clone)]
pub struct JointLaw {
    first: Categorical,
    second: Categorical,
    n2: usize,
    probs: Vec<f64>,
}

impl JointLaw {
    pub fn new(p1: &[f64], p2: &[f64]) -> Self {
        let probs = p1
            .iter()
            .flat_map(|&a| p2.iter().map(move |&b| a * b))
            .collect();
        Self {
            first: Categorical::new(p1),
            second: Categorical::new(p2),
            n2: p2.len(),
            probs,
        }
    }

    pub fn sample(&self, u1: f64, u2: f64) -> usize {
        self.first.sample(u1) * self.n2 + self.second.sample(u2)
    }

    pub fn split(&self, joint: usize) -> (usize, usize) {
        (joint / self.n2, joint % self.n2)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Raw randomness of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub u1: f64,
    pub u2: f64,
    /// `CN(0, I)` noise: each real part has variance 1/2.
    pub noise: Vec<C64>,
    pub u_mix: f64,
    pub u_comp: f64,
}

/// Sequential reader of the draws in one chunk.
pub struct DrawStream {
    rng: ChaCha8Rng,
    n_r: usize,
    mixture: bool,
}

impl DrawStream {
    pub fn new(seed: u64, chunk: u64, n_r: usize, mixture: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        Self { rng, n_r, mixture }
    }

    pub fn next_into(&mut self, d: &mut Draw) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        d.u1 = self.rng.random();
        d.u2 = self.rng.random();
        d.noise.resize(self.n_r, C64::default());
        for z in d.noise.iter_mut() {
            let re: f64 = self.rng.sample(StandardNormal);
            let im: f64 = self.rng.sample(StandardNormal);
            *z = c(re * s, im * s);
        }
        if self.mixture {
            d.u_mix = self.rng.random();
            d.u_comp = self.rng.random();
        }
    }

    pub fn empty_draw(&self) -> Draw {
        Draw {
            u1: 0.0,
            u2: 0.0,
            noise: vec![C64::default(); self.n_r],
            u_mix: 1.0,
            u_comp: 0.0,
        }
    }
}

/// Per-sample integrand.
///
/// Quadrature over scalar outputs with collinear signal points integrates a
/// single noise direction, so kernels must not depend on the noise component
/// orthogonal to the signal span. Every posterior functional and the
/// likelihood-ratio form of the mutual information satisfy this.
pub trait Kernel: Sync {
    type Scratch: Send;
    /// Number of outputs per evaluation.
    fn dim(&self) -> usize;
    /// Receive dimension of the noise.
    fn n_r(&self) -> usize;
    fn scratch(&self) -> Self::Scratch;
    /// Writes the outputs for transmitted joint index `joint` and noise
    /// realization `noise` into `out` (overwriting it).
    fn eval(&self, scratch: &mut Self::Scratch, joint: usize, noise: &[C64], out: &mut [f64]);
}

/// Sample means with standard errors of the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Draws for Monte-Carlo, noise nodes for quadrature.
    pub n: usize,
}

impl Moments {
    pub fn get(&self, i: usize) -> (f64, f64) {
        (self.mean[i], self.std_error[i])
    }
}

/// Welford accumulator over vectors, mergeable in a fixed order.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn merge(&mut self, o: &Welford) {
        if o.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = o.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += o.m2[i] + d * d * na * nb / n;
        }
        self.n += o.n;
    }

    fn finish(self) -> Moments {
        let n = self.n;
        let std_error = self
            .m2
            .iter()
            .map(|&s| {
                if n > 1 {
                    (s.max(0.0) / ((n - 1) as f64) / n as f64).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Moments {
            mean: self.mean,
            std_error,
            n,
        }
    }
}

/// Defensive mixture proposal for the noise given the transmitted index:
/// `(1−m)·CN(0, I) + m·avg_c CN(μ_c, I)` with `μ_c = (s_c − s_j)/2` over the
/// reference signal points distinct from `s_j`.
struct Boundary<'a> {
    mix: f64,
    n_r: usize,
    signals: &'a [C64],
}

impl Boundary<'_> {
    const TINY: f64 = 1e-24;

    fn center(&self, j: usize, c: usize, out: &mut [C64]) -> f64 {
        let sj = &self.signals[j * self.n_r..(j + 1) * self.n_r];
        let sc = &self.signals[c * self.n_r..(c + 1) * self.n_r];
        let mut norm = 0.0;
        for ((o, a), b) in out.iter_mut().zip(sc).zip(sj) {
            *o = (a - b) * 0.5;
            norm += o.norm_sqr();
        }
        norm
    }

    fn components(&self, j: usize, buf: &mut [C64]) -> usize {
        let count = self.signals.len() / self.n_r;
        (0..count)
            .filter(|&c| c != j && self.center(j, c, buf) > Self::TINY)
            .count()
    }

    /// Adds the mixture shift selected by `(u_mix, u_comp)` to `noise`.
    fn shift(&self, j: usize, u_mix: f64, u_comp: f64, noise: &mut [C64], buf: &mut [C64]) {
        if u_mix >= self.mix {
            return;
        }
        let k = self.components(j, buf);
        if k == 0 {
            return;
        }
        let target = ((u_comp * k as f64) as usize).min(k - 1);
        let count = self.signals.len() / self.n_r;
        let mut seen = 0;
        for c in 0..count {
            if c == j || self.center(j, c, buf) <= Self::TINY {
                continue;
            }
            if seen == target {
                for (n, m) in noise.iter_mut().zip(buf.iter()) {
                    *n += m;
                }
                return;
            }
            seen += 1;
        }
    }

    /// Likelihood ratio `φ(n)/q(n)` of the nominal density to the proposal.
    fn weight(&self, j: usize, noise: &[C64], buf: &mut [C64]) -> f64 {
        let count = self.signals.len() / self.n_r;
        let mut k = 0usize;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for c in 0..count {
            if c == j {
                continue;
            }
            let norm = self.center(j, c, buf);
            if norm <= Self::TINY {
                continue;
            }
            k += 1;
            let dot: f64 = noise.iter().zip(buf.iter()).map(|(n, m)| (n.conj() * m).re).sum();
            let t = 2.0 * dot - norm;
            if t > max {
                sum = sum * (max - t).exp() + 1.0;
                max = t;
            } else {
                sum += (t - max).exp();
            }
        }
        if k == 0 {
            return 1.0;
        }
        let lse = max + sum.ln();
        let a = (1.0 - self.mix).ln();
        let b = (self.mix / k as f64).ln() + lse;
        let hi = a.max(b);
        let log_q = hi + ((a - hi).exp() + (b - hi).exp()).ln();
        (-log_q).exp()
    }
}

struct DrawBuffers {
    noise: Vec<C64>,
    center: Vec<C64>,
    tmp: Vec<f64>,
    acc: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_draw<K: Kernel>(
    kernel: &K,
    scratch: &mut K::Scratch,
    law: &JointLaw,
    boundary: Option<&Boundary<'_>>,
    cfg: &McConfig,
    draw: &Draw,
    bufs: &mut DrawBuffers,
) {
    bufs.acc.iter_mut().for_each(|v| *v = 0.0);
    let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
    let share = 1.0 / signs.len() as f64;
    let mut visit = |j: usize, pj: f64, bufs: &mut DrawBuffers| {
        for &sign in signs {
            for (n, z) in bufs.noise.iter_mut().zip(&draw.noise) {
                *n = z * sign;
            }
            let mut w = 1.0;
            if let Some(b) = boundary {
                b.shift(j, draw.u_mix, draw.u_comp, &mut bufs.noise, &mut bufs.center);
                w = b.weight(j, &bufs.noise, &mut bufs.center);
            }
            kernel.eval(scratch, j, &bufs.noise, &mut bufs.tmp);
            let f = pj * w * share;
            for (a, t) in bufs.acc.iter_mut().zip(&bufs.tmp) {
                *a += f * t;
            }
        }
    };
    if cfg.stratify {
        for (j, &pj) in law.probs().iter().enumerate() {
            if pj > 0.0 {
                visit(j, pj, bufs);
            }
        }
    } else {
        visit(law.sample(draw.u1, draw.u2), 1.0, bufs);
    }
}

/// Monte-Carlo average of `kernel`. `reference` holds the joint signal points
/// (row-major, `n_r` per joint index) that anchor the boundary proposal; it
/// is required when `cfg.boundary_mix` is set. Paired evaluations that must
/// share random numbers pass the same reference.
pub fn monte_carlo<K: Kernel>(
    kernel: &K,
    law: &JointLaw,
    reference: Option<&[C64]>,
    cfg: &McConfig,
) -> Result<Moments> {
    cfg.validate()?;
    let n_r = kernel.n_r();
    let boundary = match (cfg.boundary_mix, reference) {
        (None, _) => None,
        (Some(mix), Some(signals)) => {
            if signals.len() != law.len() * n_r {
                return Err(Error::Dimension(format!(
                    "reference holds {} values, expected {}",
                    signals.len(),
                    law.len() * n_r
                )));
            }
            Some(Boundary { mix, n_r, signals })
        }
        (Some(_), None) => {
            return Err(param("boundary_mix", "needs reference signal points"));
        }
    };
    let dim = kernel.dim();
    let chunks = cfg.n_samples.div_ceil(CHUNK);
    let partials: Vec<Welford> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let count = CHUNK.min(cfg.n_samples - chunk * CHUNK);
            let mut stream = DrawStream::new(cfg.seed, chunk as u64, n_r, boundary.is_some());
            let mut draw = stream.empty_draw();
            let mut scratch = kernel.scratch();
            let mut bufs = DrawBuffers {
                noise: vec![C64::default(); n_r],
                center: vec![C64::default(); n_r],
                tmp: vec![0.0; dim],
                acc: vec![0.0; dim],
            };
            let mut acc = Welford::new(dim);
            for _ in 0..count {
                stream.next_into(&mut draw);
                evaluate_draw(kernel, &mut scratch, law, boundary.as_ref(), cfg, &draw, &mut bufs);
                acc.push(&bufs.acc);
            }
            acc
        })
        .collect();
    let mut total = Welford::new(dim);
    for p in &partials {
        total.merge(p);
    }
    Ok(total.finish())
}

/// Deterministic expectation of `kernel` for a scalar receiver, enumerating
/// the joint alphabet and a tensor noise rule. When the signal points are
/// collinear the orthogonal noise coordinate is dropped (see [`Kernel`]).
/// Standard errors are zero.
pub fn quadrature<K: Kernel>(
    kernel: &K,
    law: &JointLaw,
    signals: &[C64],
    rule: &NoiseRule,
) -> Result<Moments> {
    if kernel.n_r() != 1 {
        return Err(Error::Dimension(format!(
            "quadrature needs a scalar receiver, got n_r = {}",
            kernel.n_r()
        )));
    }
    if signals.len() != law.len() {
        return Err(Error::Dimension("one signal point per joint index expected".into()));
    }
    quadrature_along(kernel, law, collinear_direction(signals), rule)
}

/// [`quadrature`] with the noise direction fixed by the caller: `Some(d)`
/// integrates along `d` only, `None` over the full complex plane.
pub fn quadrature_along<K: Kernel>(
    kernel: &K,
    law: &JointLaw,
    direction: Option<C64>,
    rule: &NoiseRule,
) -> Result<Moments> {
    if kernel.n_r() != 1 {
        return Err(Error::Dimension(format!(
            "quadrature needs a scalar receiver, got n_r = {}",
            kernel.n_r()
        )));
    }
    let dim = kernel.dim();
    let nodes = rule.nodes();
    let weights = rule.weights();
    let rows: Vec<Vec<f64>> = (0..nodes.len())
        .into_par_iter()
        .map(|a| {
            let mut scratch = kernel.scratch();
            let mut tmp = vec![0.0; dim];
            let mut row = vec![0.0; dim];
            let mut add = |noise: C64, w: f64, scratch: &mut K::Scratch| {
                for (j, &pj) in law.probs().iter().enumerate() {
                    if pj == 0.0 {
                        continue;
                    }
                    kernel.eval(scratch, j, &[noise], &mut tmp);
                    for (r, t) in row.iter_mut().zip(&tmp) {
                        *r += w * pj * t;
                    }
                }
            };
            match direction {
                Some(d) => add(d * nodes[a], weights[a], &mut scratch),
                None => {
                    for (&tb, &wb) in nodes.iter().zip(weights) {
                        add(c(nodes[a], tb), weights[a] * wb, &mut scratch);
                    }
                }
            }
            row
        })
        .collect();
    let mut mean = vec![0.0; dim];
    for row in &rows {
        for (m, r) in mean.iter_mut().zip(row) {
            *m += r;
        }
    }
    let n = match direction {
        Some(_) => nodes.len(),
        None => nodes.len() * nodes.len(),
    };
    Ok(Moments {
        mean,
        std_error: vec![0.0; dim],
        n,
    })
}

/// Unit direction spanning all points if they lie on one line through the
/// origin.
pub fn collinear_direction(points: &[C64]) -> Option<C64> {
    let big = points.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
    let scale = big.norm();
    if scale == 0.0 {
        return Some(c(1.0, 0.0));
    }
    let d = big / scale;
    points
        .iter()
        .all(|z| (z * d.conj()).im.abs() <= 1e-12 * scale)
        .then_some(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Outputs `[re n₀, |n|², re n₀ · joint]`.
    struct Probe;

    impl Kernel for Probe {
        type Scratch = ();
        fn dim(&self) -> usize {
            3
        }
        fn n_r(&self) -> usize {
            1
        }
        fn scratch(&self) {}
        fn eval(&self, _: &mut (), joint: usize, noise: &[C64], out: &mut [f64]) {
            out[0] = noise[0].re;
            out[1] = noise[0].norm_sqr();
            out[2] = joint as f64;
        }
    }

    fn law() -> JointLaw {
        JointLaw::new(&[0.5, 0.5], &[0.25, 0.75])
    }

    #[test]
    fn categorical_inverse_cdf() {
        let c = Categorical::new(&[0.25, 0.5, 0.25]);
        assert_eq!(c.sample(0.0), 0);
        assert_eq!(c.sample(0.2499), 0);
        assert_eq!(c.sample(0.25), 1);
        assert_eq!(c.sample(0.7499), 1);
        assert_eq!(c.sample(0.9999999), 2);
    }

    #[test]
    fn joint_law_is_lexicographic() {
        let l = law();
        assert_eq!(l.len(), 4);
        assert_eq!(l.probs(), &[0.125, 0.375, 0.125, 0.375]);
        assert_eq!(l.split(3), (1, 1));
        assert_eq!(l.sample(0.9, 0.1), 2);
    }

    #[test]
    fn mc_moments_match_noise_law() {
        let cfg = McConfig::new(11, 50_000).with_antithetic(false);
        let m = monte_carlo(&Probe, &law(), None, &cfg).unwrap();
        assert_eq!(m.n, 50_000);
        assert!(m.mean[0].abs() < 5.0 * m.std_error[0]);
        assert!((m.mean[1] - 1.0).abs() < 5.0 * m.std_error[1]);
        let expected_joint = 0.375 + 2.0 * 0.125 + 3.0 * 0.375;
        assert!((m.mean[2] - expected_joint).abs() < 5.0 * m.std_error[2]);
    }

    #[test]
    fn antithetic_cancels_odd_terms() {
        let cfg = McConfig::new(5, 4096);
        let m = monte_carlo(&Probe, &law(), None, &cfg).unwrap();
        assert!(m.mean[0].abs() < 1e-15);
        assert!(m.std_error[0] < 1e-15);
    }

    #[test]
    fn stratification_is_exact_on_inputs() {
        let cfg = McConfig::new(5, 3000).with_stratify(true);
        let m = monte_carlo(&Probe, &law(), None, &cfg).unwrap();
        assert_relative_eq!(m.mean[2], 0.375 + 0.25 + 1.125, epsilon = 1e-12);
        assert!(m.std_error[2] < 1e-12);
    }

    #[test]
    fn boundary_proposal_is_unbiased() {
        let signals = [c(-2.0, 0.0), c(0.0, 0.0), c(0.5, 0.0), c(2.0, 0.0)];
        let cfg = McConfig::new(9, 200_000).with_boundary_mix(Some(0.5));
        let m = monte_carlo(&Probe, &law(), Some(&signals), &cfg).unwrap();
        assert!((m.mean[1] - 1.0).abs() < 5.0 * m.std_error[1], "{:?}", m);
        // the weights integrate to one: E_q[w · 1] = 1 shows up in |n|² too
        let cfg = cfg.with_antithetic(false);
        let m = monte_carlo(&Probe, &law(), Some(&signals), &cfg).unwrap();
        assert!(m.mean[0].abs() < 5.0 * m.std_error[0]);
    }

    #[test]
    fn boundary_requires_reference() {
        let cfg = McConfig::new(1, 10).with_boundary_mix(Some(0.5));
        assert!(monte_carlo(&Probe, &law(), None, &cfg).is_err());
        let bad = McConfig::new(1, 10).with_boundary_mix(Some(1.5));
        assert!(bad.validate().is_err());
        assert!(McConfig::new(1, 0).validate().is_err());
    }

    #[test]
    fn result_is_independent_of_worker_count() {
        let cfg = McConfig::new(21, 10 * CHUNK + 17).with_antithetic(false);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo(&Probe, &law(), None, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }

    #[test]
    fn quadrature_matches_noise_moments() {
        let rule = NoiseRule::default();
        let collinear = [c(1.0, 0.0); 4];
        let m = quadrature(&Probe, &law(), &collinear, &rule).unwrap();
        assert!(m.mean[0].abs() < 1e-14);
        // only one coordinate is integrated for collinear points
        assert_relative_eq!(m.mean[1], 0.5, epsilon = 1e-12);
        let spread = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        let m = quadrature(&Probe, &law(), &spread, &rule).unwrap();
        assert_relative_eq!(m.mean[1], 1.0, epsilon = 1e-12);
        assert_eq!(m.n, rule.len() * rule.len());
    }

    #[test]
    fn collinearity_detection() {
        assert!(collinear_direction(&[c(1.0, 1.0), c(-2.0, -2.0), c(0.0, 0.0)]).is_some());
        assert!(collinear_direction(&[c(1.0, 0.0), c(0.0, 1.0)]).is_none());
        assert_eq!(collinear_direction(&[c(0.0, 0.0)]), Some(c(1.0, 0.0)));
    }
}
