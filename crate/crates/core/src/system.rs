//! The deterministic two-user multiple-access channel
//! `y = √snr·H₁P₁x₁ + √snr·H₂P₂x₂ + n` with `n ~ CN(0, I)`.

use std::sync::Arc;

use crate::constellation::{product, Constellation, JointAlphabet};
use crate::error::{param, Error, Result};
use crate::integrate::DrawStream;
use crate::integrate::{Categorical, CHUNK};
use crate::linalg::{c, frobenius, power, CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum User {
    One,
    Two,
}

impl User {
    pub fn other(self) -> Self {
        match self {
            User::One => User::Two,
            User::Two => User::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            User::One => 0,
            User::Two => 1,
        }
    }

    pub fn both() -> [User; 2] {
        [User::One, User::Two]
    }
}

impl TryFrom<u8> for User {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(User::One),
            2 => Ok(User::Two),
            _ => Err(param("user", format!("{v} is not 1 or 2"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MacSystem {
    h: [CMat; 2],
    p: [CMat; 2],
    snr: f64,
    c: [Arc<Constellation>; 2],
}

impl MacSystem {
    pub fn new(
        h1: CMat,
        h2: CMat,
        p1: CMat,
        p2: CMat,
        snr: f64,
        c1: Constellation,
        c2: Constellation,
    ) -> Result<Self> {
        let sys = Self {
            h: [h1, h2],
            p: [p1, p2],
            snr,
            c: [Arc::new(c1), Arc::new(c2)],
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Scalar channel (`n_r = n_t = 1`) with real precoder gains.
    pub fn scalar(
        h1: C64,
        h2: C64,
        p1: f64,
        p2: f64,
        snr: f64,
        c1: Constellation,
        c2: Constellation,
    ) -> Result<Self> {
        let m = |z: C64| CMat::from_element(1, 1, z);
        Self::new(m(h1), m(h2), m(c(p1, 0.0)), m(c(p2, 0.0)), snr, c1, c2)
    }

    pub fn scalar_bpsk(h1: C64, h2: C64, p1: f64, p2: f64, snr: f64) -> Result<Self> {
        Self::scalar(h1, h2, p1, p2, snr, Constellation::bpsk(), Constellation::bpsk())
    }

    fn validate(&self) -> Result<()> {
        if !(self.snr >= 0.0) || !self.snr.is_finite() {
            return Err(param("snr", format!("{} is not a finite nonnegative value", self.snr)));
        }
        let (n_r, n_t) = self.h[0].shape();
        if n_r == 0 || n_t == 0 {
            return Err(Error::Dimension("empty channel matrix".into()));
        }
        for u in User::both() {
            let k = u.index();
            if self.h[k].shape() != (n_r, n_t) {
                return Err(Error::Dimension(format!(
                    "h{} is {:?}, expected {:?}",
                    k + 1,
                    self.h[k].shape(),
                    (n_r, n_t)
                )));
            }
            if self.p[k].shape() != (n_t, n_t) {
                return Err(Error::Dimension(format!(
                    "p{} is {:?}, expected {:?}",
                    k + 1,
                    self.p[k].shape(),
                    (n_t, n_t)
                )));
            }
            if self.c[k].dim() != n_t {
                return Err(Error::Dimension(format!(
                    "c{} has dimension {}, expected {n_t}",
                    k + 1,
                    self.c[k].dim()
                )));
            }
            let finite = self.h[k].iter().chain(self.p[k].iter()).all(|z| z.re.is_finite() && z.im.is_finite());
            if !finite {
                return Err(Error::Numerical(format!("user {} matrices are not finite", k + 1)));
            }
        }
        Ok(())
    }

    pub fn with_snr(&self, snr: f64) -> Result<Self> {
        let mut s = self.clone();
        s.snr = snr;
        s.validate()?;
        Ok(s)
    }

    pub fn with_precoder(&self, user: User, p: CMat) -> Result<Self> {
        let mut s = self.clone();
        s.p[user.index()] = p;
        s.validate()?;
        Ok(s)
    }

    pub fn with_channel(&self, user: User, h: CMat) -> Result<Self> {
        let mut s = self.clone();
        s.h[user.index()] = h;
        s.validate()?;
        Ok(s)
    }

    pub fn with_precoders(&self, p1: CMat, p2: CMat) -> Result<Self> {
        let mut s = self.clone();
        s.p = [p1, p2];
        s.validate()?;
        Ok(s)
    }

    pub fn h1(&self) -> &CMat {
        &self.h[0]
    }
    pub fn h2(&self) -> &CMat {
        &self.h[1]
    }
    pub fn p1(&self) -> &CMat {
        &self.p[0]
    }
    pub fn p2(&self) -> &CMat {
        &self.p[1]
    }
    pub fn c1(&self) -> &Constellation {
        &self.c[0]
    }
    pub fn c2(&self) -> &Constellation {
        &self.c[1]
    }

    pub fn h(&self, user: User) -> &CMat {
        &self.h[user.index()]
    }

    pub fn p(&self, user: User) -> &CMat {
        &self.p[user.index()]
    }

    pub fn constellation(&self, user: User) -> &Constellation {
        &self.c[user.index()]
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn n_r(&self) -> usize {
        self.h[0].nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h[0].ncols()
    }

    /// `HₖPₖ` (without the √snr factor).
    pub fn effective(&self, user: User) -> CMat {
        self.h(user) * self.p(user)
    }

    pub fn joint_alphabet(&self) -> JointAlphabet {
        product(&self.c[0], &self.c[1])
    }

    /// Noiseless received points `√snr·(H₁P₁x₁ + H₂P₂x₂)` for every joint
    /// index, row-major with `n_r` entries each.
    pub fn joint_signals(&self) -> Vec<C64> {
        let s = c(self.snr.sqrt(), 0.0);
        let u1: Vec<CVec> = self.user_signals(User::One);
        let u2: Vec<CVec> = self.user_signals(User::Two);
        let mut out = Vec::with_capacity(u1.len() * u2.len() * self.n_r());
        for a in &u1 {
            for b in &u2 {
                out.extend((a + b).iter().map(|z| z * s));
            }
        }
        out
    }

    /// `HₖPₖxₖ` for every point of user `k`'s alphabet (no √snr).
    pub fn user_signals(&self, user: User) -> Vec<CVec> {
        let a = self.effective(user);
        self.constellation(user).points().iter().map(|x| &a * x).collect()
    }

    /// Received vector for given inputs and noise.
    pub fn receive(&self, x1: &CVec, x2: &CVec, noise: &CVec) -> CVec {
        let s = c(self.snr.sqrt(), 0.0);
        (self.effective(User::One) * x1 + self.effective(User::Two) * x2) * s + noise
    }

    /// Deterministic stream of `count` channel uses. Draw `k` comes from the
    /// same counter-based stream the Monte-Carlo engine uses for draw `k`
    /// without importance sampling.
    pub fn synthesize(&self, seed: u64, count: usize) -> Result<Synthesizer<'_>> {
        if count == 0 {
            return Err(param("count", "must be at least 1"));
        }
        Ok(Synthesizer {
            sys: self,
            seed,
            count,
            next: 0,
            stream: None,
            cat: [
                Categorical::new(self.c[0].probs()),
                Categorical::new(self.c[1].probs()),
            ],
        })
    }

    pub fn power_check(&self, q1: f64, q2: f64) -> Result<PowerReport> {
        for (name, q) in [("q1", q1), ("q2", q2)] {
            if !(q > 0.0) {
                return Err(param(name, format!("{q} is not positive")));
            }
        }
        let t1 = power(&self.p[0]);
        let t2 = power(&self.p[1]);
        let tol = |q: f64| 1e-12 * q.max(1.0);
        Ok(PowerReport {
            trace1: t1,
            trace2: t2,
            feasible1: t1 <= q1 + tol(q1),
            feasible2: t2 <= q2 + tol(q2),
        })
    }

    /// Frobenius norm of `√snr·HₖPₖ`, the strength of user `k`'s signal.
    pub fn signal_gain(&self, user: User) -> f64 {
        self.snr.sqrt() * frobenius(&self.effective(user))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerReport {
    pub trace1: f64,
    pub trace2: f64,
    pub feasible1: bool,
    pub feasible2: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub i1: usize,
    pub i2: usize,
    pub x1: CVec,
    pub x2: CVec,
    pub noise: CVec,
    pub y: CVec,
}

pub struct Synthesizer<'a> {
    sys: &'a MacSystem,
    seed: u64,
    count: usize,
    next: usize,
    stream: Option<DrawStream>,
    cat: [Categorical; 2],
}

impl Iterator for Synthesizer<'_> {
    type Item = ChannelSample;

    fn next(&mut self) -> Option<ChannelSample> {
        if self.next >= self.count {
            return None;
        }
        if self.next.is_multiple_of(CHUNK) {
            let chunk = (self.next / CHUNK) as u64;
            self.stream = Some(DrawStream::new(self.seed, chunk, self.sys.n_r(), false));
        }
        let stream = self.stream.as_mut().expect("stream initialized at chunk start");
        let mut d = stream.empty_draw();
        stream.next_into(&mut d);
        self.next += 1;
        let i1 = self.cat[0].sample(d.u1);
        let i2 = self.cat[1].sample(d.u2);
        let x1 = self.sys.c1().points()[i1].clone();
        let x2 = self.sys.c2().points()[i2].clone();
        let noise = CVec::from_vec(d.noise);
        let y = self.sys.receive(&x1, &x2, &noise);
        Some(ChannelSample {
            i1,
            i2,
            x1,
            x2,
            noise,
            y,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Synthesizer<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real_diag;

    fn one() -> C64 {
        c(1.0, 0.0)
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        let b = Constellation::bpsk();
        let h = CMat::identity(2, 2);
        assert!(MacSystem::new(h.clone(), h.clone(), h.clone(), h.clone(), 1.0, b.clone(), b.clone()).is_err());
        let b2 = b.cartesian_power(2).unwrap();
        assert!(MacSystem::new(h.clone(), h.clone(), h.clone(), h.clone(), 1.0, b2.clone(), b2.clone()).is_ok());
        let h3 = CMat::identity(3, 2);
        assert!(MacSystem::new(h.clone(), h3, h.clone(), h.clone(), 1.0, b2.clone(), b2.clone()).is_err());
        assert!(MacSystem::new(h.clone(), h.clone(), h.clone(), h, -1.0, b2.clone(), b2).is_err());
    }

    #[test]
    fn samples_reproduce_the_model() {
        let sys = MacSystem::scalar_bpsk(one(), c(0.0, 1.0), 1.0, 0.5, 2.0).unwrap();
        for s in sys.synthesize(3, 100).unwrap() {
            let rebuilt = sys.receive(&s.x1, &s.x2, &s.noise);
            assert_eq!(rebuilt, s.y);
        }
    }

    #[test]
    fn zero_snr_gives_pure_noise() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 0.0).unwrap();
        for s in sys.synthesize(8, 50).unwrap() {
            assert_eq!(s.y, s.noise);
        }
    }

    #[test]
    fn output_moments() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 1.0).unwrap();
        let n = 100_000;
        let ys: Vec<C64> = sys.synthesize(17, n).unwrap().map(|s| s.y[0]).collect();
        let mean: C64 = ys.iter().sum::<C64>() / n as f64;
        let p: Vec<f64> = ys.iter().map(|y| y.norm_sqr()).collect();
        let pm = p.iter().sum::<f64>() / n as f64;
        let pv = p.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_power = (pv / n as f64).sqrt();
        assert!((pm - 3.0).abs() < 5.0 * se_power, "{pm}");
        let se_mean = (3.0 / 2.0 / n as f64).sqrt();
        assert!(mean.re.abs() < 5.0 * se_mean && mean.im.abs() < 5.0 * se_mean);
    }

    #[test]
    fn noise_parts_have_half_variance() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 1.0).unwrap();
        let n = 100_000;
        let noise: Vec<C64> = sys.synthesize(4, n).unwrap().map(|s| s.noise[0]).collect();
        for part in [|z: &C64| z.re, |z: &C64| z.im] {
            let sq: Vec<f64> = noise.iter().map(|z| part(z).powi(2)).collect();
            let m = sq.iter().sum::<f64>() / n as f64;
            let v = sq.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - 0.5).abs() < 5.0 * (v / n as f64).sqrt(), "{m}");
        }
    }

    #[test]
    fn synthesis_is_reproducible() {
        let sys = MacSystem::scalar_bpsk(one(), one(), 1.0, 1.0, 1.0).unwrap();
        let a: Vec<_> = sys.synthesize(99, 3000).unwrap().collect();
        let b: Vec<_> = sys.synthesize(99, 3000).unwrap().collect();
        assert_eq!(a, b);
        let other: Vec<_> = sys.synthesize(100, 3000).unwrap().collect();
        assert_ne!(a, other);
        assert!(sys.synthesize(1, 0).is_err());
    }

    #[test]
    fn power_feasibility() {
        let b2 = Constellation::bpsk().cartesian_power(2).unwrap();
        let h = CMat::identity(2, 2);
        let mk = |p: CMat| MacSystem::new(h.clone(), h.clone(), p, CMat::identity(2, 2), 1.0, b2.clone(), b2.clone()).unwrap();
        let r = mk(CMat::identity(2, 2)).power_check(2.0, 2.0).unwrap();
        assert_eq!(r.trace1, 2.0);
        assert!(r.feasible1);
        let r = mk(CMat::identity(2, 2) * c(2.0, 0.0)).power_check(2.0, 2.0).unwrap();
        assert_eq!(r.trace1, 8.0);
        assert!(!r.feasible1);
        let r = mk(real_diag(&[0.3f64.sqrt(), 1.7f64.sqrt()])).power_check(2.0, 2.0).unwrap();
        assert!(r.feasible1);
        assert!((r.trace1 - 2.0).abs() < 1e-12);
        assert!(mk(CMat::identity(2, 2)).power_check(0.0, 1.0).is_err());
    }

    #[test]
    fn user_parsing() {
        assert_eq!(User::try_from(1).unwrap(), User::One);
        assert_eq!(User::try_from(2).unwrap().other(), User::One);
        assert!(User::try_from(3).is_err());
    }
}
