//! Sweep configuration: the system keys plus experiment, grid and solver keys.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use immse::config::{KvConfig, SystemSpec, SYSTEM_KEYS};
use immse::linalg::power;
use immse::{Error, Evaluator, McConfig, MacSystem};
use sha2::{Digest, Sha256};

/// Keys accepted on top of the system keys.
pub const SWEEP_KEYS: &[&str] = &[
    "experiment",
    "output",
    "seed",
    "samples",
    "evaluator",
    "antithetic",
    "boundary_mix",
    "p1_range",
    "p2_range",
    "snr_range",
    "damping",
    "tolerance",
    "max_iters",
    "restarts",
    "samples_initial",
    "fd_step",
    "curve",
];

pub const DEFAULT_SAMPLES: usize = 200_000;

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    MiSurface,
    MmseSurface,
    PerUserMmse,
    CovarianceSurface,
    PowerAllocation,
    ImmseCheck,
    GradientCheck,
    LowSnrCheck,
    Precode,
    Mercury,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::MiSurface,
        Experiment::MmseSurface,
        Experiment::PerUserMmse,
        Experiment::CovarianceSurface,
        Experiment::PowerAllocation,
        Experiment::ImmseCheck,
        Experiment::GradientCheck,
        Experiment::LowSnrCheck,
        Experiment::Precode,
        Experiment::Mercury,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::MiSurface => "mi-surface",
            Experiment::MmseSurface => "mmse-surface",
            Experiment::PerUserMmse => "per-user-mmse",
            Experiment::CovarianceSurface => "covariance-surface",
            Experiment::PowerAllocation => "power-allocation",
            Experiment::ImmseCheck => "immse-check",
            Experiment::GradientCheck => "gradient-check",
            Experiment::LowSnrCheck => "lowsnr-check",
            Experiment::Precode => "precode",
            Experiment::Mercury => "mercury",
        }
    }

    /// Whether the p-axes are power budgets handed to a solver rather than
    /// the transmitted powers themselves.
    pub fn axes_are_budgets(self) -> bool {
        matches!(self, Experiment::PowerAllocation | Experiment::Precode | Experiment::Mercury)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.id() == s.trim())
            .ok_or_else(|| {
                let ids: Vec<_> = Experiment::ALL.iter().map(|e| e.id()).collect();
                format!("unknown experiment `{s}`; expected one of {}", ids.join(", "))
            })
    }
}

/// `start:stop:step` (inclusive) or a single value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Axis {
    pub fn single(v: f64) -> Self {
        Self { start: v, stop: v, step: 1.0 }
    }

    pub fn parse(key: &str, text: &str) -> immse::Result<Self> {
        let nums: Vec<f64> = text
            .split(':')
            .map(|s| s.trim().parse::<f64>().map_err(|_| config_err(key, format!("`{}` is not a number", s.trim()))))
            .collect::<immse::Result<_>>()?;
        let axis = match nums[..] {
            [v] => Self::single(v),
            [start, stop, step] => Self { start, stop, step },
            _ => return Err(config_err(key, format!("`{text}` is neither `start:stop:step` nor a value"))),
        };
        if !(axis.step > 0.0) || ![axis.start, axis.stop, axis.step].iter().all(|v| v.is_finite()) {
            return Err(config_err(key, "step must be positive and all bounds finite"));
        }
        if axis.stop < axis.start {
            return Err(config_err(key, "empty range: stop is below start"));
        }
        Ok(axis)
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluatorKind {
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverKeys {
    pub damping: f64,
    pub tolerance: Option<f64>,
    pub max_iters: Option<usize>,
    pub restarts: usize,
    pub samples_initial: usize,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub experiment: Experiment,
    pub template: MacSystem,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub p1: Axis,
    pub p2: Axis,
    pub snr: Axis,
    pub output: PathBuf,
    pub seed: u64,
    pub n_samples: usize,
    pub evaluator: EvaluatorKind,
    pub antithetic: bool,
    /// Weight of the boundary importance-sampling component; `None` is off.
    pub boundary_mix: Option<f64>,
    pub solver: SolverKeys,
    /// Relative finite-difference step in snr.
    pub fd_step: f64,
    /// `gaussian` or `discrete` MMSE curve for the mercury experiment.
    pub gaussian_curve: bool,
    /// Base constellation name of user 1 (before the Cartesian power).
    pub c1_name: String,
    /// SHA-256 of the canonical `key=value` listing of the config.
    pub hash: String,
}

/// One grid point: its row index and coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub snr: f64,
    pub p1: f64,
    pub p2: f64,
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "grid point {} (snr={}, p1={}, p2={})", self.index, self.snr, self.p1, self.p2)
    }
}

impl SweepSpec {
    pub fn parse(text: &str) -> immse::Result<Self> {
        let kv = KvConfig::parse(text)?;
        let allowed: Vec<&str> = SYSTEM_KEYS.iter().chain(SWEEP_KEYS).copied().collect();
        kv.reject_unknown(&allowed)?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KvConfig) -> immse::Result<Self> {
        let experiment: Experiment = kv
            .get("experiment")
            .ok_or_else(|| config_err("experiment", "required key is missing"))?
            .parse()
            .map_err(|e: String| config_err("experiment", e))?;
        let sys = SystemSpec::from_kv(kv)?;
        let template = sys.system;
        let output = PathBuf::from(kv.get("output").ok_or_else(|| config_err("output", "required key is missing"))?);
        let seed: u64 = kv.parse_or("seed", 0)?;
        let n_samples: usize = kv.parse_or("samples", DEFAULT_SAMPLES)?;
        if n_samples < 2 {
            return Err(config_err("samples", "need at least 2 samples"));
        }
        let evaluator = match kv.get("evaluator").unwrap_or("mc") {
            "mc" => EvaluatorKind::MonteCarlo,
            "quadrature" => EvaluatorKind::Quadrature,
            other => return Err(config_err("evaluator", format!("`{other}` is not `mc` or `quadrature`"))),
        };
        let antithetic: bool = kv.parse_or("antithetic", true)?;
        // the snr-difference quotient needs tail sampling at high snr
        let default_mix = if experiment == Experiment::ImmseCheck { 0.5 } else { 0.0 };
        let mix: f64 = kv.parse_or("boundary_mix", default_mix)?;
        if !(0.0..1.0).contains(&mix) {
            return Err(config_err("boundary_mix", format!("{mix} is outside [0, 1)")));
        }
        let boundary_mix = (mix > 0.0).then_some(mix);
        let axis = |key: &str, default: f64| -> immse::Result<Axis> {
            match kv.get(key) {
                Some(t) => Axis::parse(key, t),
                None => Ok(Axis::single(default)),
            }
        };
        let (d1, d2) = if experiment.axes_are_budgets() {
            (sys.q1.unwrap_or(power(template.p1())), sys.q2.unwrap_or(power(template.p2())))
        } else {
            (power(template.p1()), power(template.p2()))
        };
        let p1 = axis("p1_range", d1)?;
        let p2 = axis("p2_range", d2)?;
        let snr = axis("snr_range", template.snr())?;
        for (key, a) in [("p1_range", p1), ("p2_range", p2), ("snr_range", snr)] {
            if a.start < 0.0 {
                return Err(config_err(key, "values must be nonnegative"));
            }
        }
        let solver = SolverKeys {
            damping: kv.parse_or("damping", 0.25)?,
            tolerance: kv.parse_opt("tolerance")?,
            max_iters: kv.parse_opt("max_iters")?,
            restarts: kv.parse_or("restarts", 0)?,
            samples_initial: kv.parse_or("samples_initial", n_samples)?,
        };
        if !(solver.damping > 0.0 && solver.damping <= 1.0) {
            return Err(config_err("damping", "must lie in (0, 1]"));
        }
        if solver.tolerance.is_some_and(|t| !(t > 0.0)) {
            return Err(config_err("tolerance", "must be positive"));
        }
        if solver.samples_initial < 2 {
            return Err(config_err("samples_initial", "need at least 2 samples"));
        }
        let fd_step: f64 = kv.parse_or("fd_step", 0.01)?;
        if !(fd_step > 0.0 && fd_step < 1.0) {
            return Err(config_err("fd_step", "must lie in (0, 1)"));
        }
        let gaussian_curve = match kv.get("curve").unwrap_or("discrete") {
            "discrete" => false,
            "gaussian" => true,
            other => return Err(config_err("curve", format!("`{other}` is not `discrete` or `gaussian`"))),
        };
        let mut hasher = Sha256::new();
        for key in kv.keys() {
            hasher.update(format!("{key}={}\n", kv.get(key).unwrap_or("")).as_bytes());
        }
        Ok(Self {
            experiment,
            template,
            q1: sys.q1,
            q2: sys.q2,
            p1,
            p2,
            snr,
            output,
            seed,
            n_samples,
            evaluator,
            antithetic,
            boundary_mix,
            solver,
            fd_step,
            gaussian_curve,
            c1_name: kv.get("c1").unwrap_or("bpsk").to_string(),
            hash: hex::encode(hasher.finalize()),
        })
    }

    /// Grid in row order: snr outermost, then p1, then p2.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &snr in &self.snr.values() {
            for &p1 in &self.p1.values() {
                for &p2 in &self.p2.values() {
                    out.push(GridPoint { index: out.len(), snr, p1, p2 });
                }
            }
        }
        out
    }

    /// Evaluator for a grid point seeded with `seed`.
    pub fn evaluator(&self, seed: u64, n_samples: usize) -> Evaluator {
        match self.evaluator {
            EvaluatorKind::Quadrature => Evaluator::quadrature(),
            EvaluatorKind::MonteCarlo => {
                Evaluator::MonteCarlo(McConfig::new(seed, n_samples)
                    .with_antithetic(self.antithetic)
                    .with_boundary_mix(self.boundary_mix))
            }
        }
    }
}
