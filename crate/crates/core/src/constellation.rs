//! Finite input alphabets for the two users and their joint product law.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec, C64};

const PROB_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-12;
const COV_TOL: f64 = 1e-9;

/// A finite complex alphabet of `dim`-dimensional points with a probability
/// law. Constructors guarantee zero mean and identity covariance.
#[derive(Clone, PartialEq)]
pub struct Constellation {
    name: String,
    points: Vec<CVec>,
    probs: Vec<f64>,
}

impl fmt::Debug for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constellation")
            .field("name", &self.name)
            .field("size", &self.points.len())
            .field("dim", &self.dim())
            .finish()
    }
}

impl Constellation {
    /// Builds a constellation and checks every invariant (normalized law,
    /// zero mean, identity second moment).
    pub fn new(name: impl Into<String>, points: Vec<CVec>, probs: Vec<f64>) -> Result<Self> {
        let c = Self::new_unchecked(name, points, probs)?;
        c.validate()?;
        Ok(c)
    }

    /// Builds a constellation that only has a consistent shape; the moment
    /// invariants are not enforced.
    pub fn new_unchecked(
        name: impl Into<String>,
        points: Vec<CVec>,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Constellation("empty alphabet".into()));
        }
        if points.len() != probs.len() {
            return Err(Error::Constellation(format!(
                "{} points but {} probabilities",
                points.len(),
                probs.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Constellation("inconsistent point dimensions".into()));
        }
        Ok(Self {
            name: name.into(),
            points,
            probs,
        })
    }

    /// Antipodal `{+1, −1}`.
    pub fn bpsk() -> Self {
        Self::new(
            "bpsk",
            vec![CVec::from_element(1, c(1.0, 0.0)), CVec::from_element(1, c(-1.0, 0.0))],
            vec![0.5, 0.5],
        )
        .expect("bpsk is valid")
    }

    pub fn qpsk() -> Self {
        let mut q = Self::qam(4).expect("qam4 is valid");
        q.name = "qpsk".into();
        q
    }

    /// Square `m`-QAM with unit average energy and Gray-coded indexing: the
    /// upper half of the index bits selects the in-phase level and the lower
    /// half the quadrature level, each through a reflected Gray code.
    pub fn qam(m: usize) -> Result<Self> {
        let bits = m.trailing_zeros() as usize;
        if m < 4 || !m.is_power_of_two() || !bits.is_multiple_of(2) {
            return Err(Error::Constellation(format!(
                "qam order {m} is not an even power of two"
            )));
        }
        let side = 1usize << (bits / 2);
        let half = bits / 2;
        // Average energy of the unnormalized grid {±1, ±3, …}² is 2(side²−1)/3.
        let scale = (2.0 * ((side * side) as f64 - 1.0) / 3.0).sqrt();
        let level = |g: usize| {
            let idx = gray_decode(g);
            (2.0 * idx as f64 - (side as f64 - 1.0)) / scale
        };
        let points = (0..m)
            .map(|k| {
                let i = k >> half;
                let q = k & (side - 1);
                CVec::from_element(1, c(level(i), level(q)))
            })
            .collect();
        Self::new(format!("qam{m}"), points, vec![1.0 / m as f64; m])
    }

    /// Looks up a constellation by its config id.
    pub fn from_name(id: &str) -> Result<Self> {
        match id.trim().to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::bpsk()),
            "qpsk" | "qam4" => Ok(Self::qpsk()),
            "qam16" => Self::qam(16),
            "qam64" => Self::qam(64),
            other => Err(Error::Constellation(format!("unknown constellation id `{other}`"))),
        }
    }

    /// `dim`-fold Cartesian power of a scalar constellation (independent
    /// coordinates), enumerated lexicographically with the first coordinate
    /// most significant.
    pub fn cartesian_power(&self, dim: usize) -> Result<Self> {
        if self.dim() != 1 {
            return Err(Error::Constellation(
                "cartesian power needs a scalar constellation".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::Constellation("dimension must be positive".into()));
        }
        if dim == 1 {
            return Ok(self.clone());
        }
        let m = self.len();
        let total = m.checked_pow(dim as u32).ok_or_else(|| {
            Error::Constellation("alphabet size overflows".into())
        })?;
        let mut points = Vec::with_capacity(total);
        let mut probs = Vec::with_capacity(total);
        for k in 0..total {
            let mut rem = k;
            let mut digits = vec![0usize; dim];
            for d in (0..dim).rev() {
                digits[d] = rem % m;
                rem /= m;
            }
            points.push(CVec::from_iterator(dim, digits.iter().map(|&i| self.points[i][0])));
            probs.push(digits.iter().map(|&i| self.probs[i]).product());
        }
        Self::new(format!("{}^{dim}", self.name), points, probs)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[CVec] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn mean(&self) -> CVec {
        let mut m = CVec::zeros(self.dim());
        for (x, &p) in self.points.iter().zip(&self.probs) {
            m += x * c(p, 0.0);
        }
        m
    }

    /// `Σ pᵢ xᵢxᵢ†`.
    pub fn second_moment(&self) -> CMat {
        let n = self.dim();
        let mut m = CMat::zeros(n, n);
        for (x, &p) in self.points.iter().zip(&self.probs) {
            m += x * x.adjoint() * c(p, 0.0);
        }
        m
    }

    /// Largest point norm; bounds every posterior mean.
    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// `true` when every coordinate of every point is real.
    pub fn is_real(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|z| z.im == 0.0))
    }

    /// Entropy of the input law in bits.
    pub fn entropy_bits(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.log2())
            .sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Constellation("negative probability".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::Constellation(format!("probabilities sum to {total}")));
        }
        let mean = self.mean();
        if mean.norm() > MEAN_TOL {
            return Err(Error::Constellation(format!("nonzero mean (|m| = {:e})", mean.norm())));
        }
        let n = self.dim();
        let dev = crate::linalg::frobenius(&(self.second_moment() - CMat::identity(n, n)));
        if dev > COV_TOL {
            return Err(Error::Constellation(format!(
                "covariance deviates from identity by {dev:e}"
            )));
        }
        Ok(())
    }
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

/// One element of the joint input alphabet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPoint {
    pub i1: usize,
    pub i2: usize,
    pub prob: f64,
}

/// Product alphabet `C₁ × C₂` of two independent inputs, enumerated
/// lexicographically by `(i1, i2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAlphabet {
    n1: usize,
    n2: usize,
    pairs: Vec<JointPoint>,
}

impl JointAlphabet {
    pub fn pairs(&self) -> &[JointPoint] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Lexicographic index of the pair `(i1, i2)`.
    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n2 + i2
    }

    pub fn marginal1(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n1];
        for p in &self.pairs {
            m[p.i1] += p.prob;
        }
        m
    }

    pub fn marginal2(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n2];
        for p in &self.pairs {
            m[p.i2] += p.prob;
        }
        m
    }
}

pub fn product(c1: &Constellation, c2: &Constellation) -> JointAlphabet {
    let mut pairs = Vec::with_capacity(c1.len() * c2.len());
    for (i1, &p1) in c1.probs().iter().enumerate() {
        for (i2, &p2) in c2.probs().iter().enumerate() {
            pairs.push(JointPoint {
                i1,
                i2,
                prob: p1 * p2,
            });
        }
    }
    JointAlphabet {
        n1: c1.len(),
        n2: c2.len(),
        pairs,
    }
}

impl From<&Constellation> for Vec<C64> {
    fn from(c: &Constellation) -> Self {
        c.points.iter().flat_map(|p| p.iter().copied()).collect()
    }
}
