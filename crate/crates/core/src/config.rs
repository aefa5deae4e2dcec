//! Flat `key = value` configuration text.
//!
//! Lines are `key = value`; `#` starts a comment. Matrices are row-major
//! lists of entries, each either `(re,im)` or a bare real number, separated
//! by whitespace, commas or semicolons:
//!
//! ```text
//! n_r = 2
//! n_t = 2
//! h1 = (1,0) (0,0.5); (0,0) (1,0)
//! p1 = 1 0 0 1
//! c1 = qpsk
//! snr = 3.0
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::linalg::{c, CMat, C64};
use crate::system::MacSystem;

/// Keys describing the channel model.
pub const SYSTEM_KEYS: &[&str] = &["h1", "h2", "p1", "p2", "snr", "c1", "c2", "n_r", "n_t", "q1", "q2"];

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(line, format!("line {} is not `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
                return Err(config_err(key, format!("invalid key on line {}", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(config_err(key, "duplicate key"));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Parses `key` with `FromStr`, falling back to `default` when absent.
    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn matrix(&self, key: &str, rows: usize, cols: usize) -> Result<Option<CMat>> {
        self.get(key)
            .map(|v| parse_matrix(v, rows, cols).map_err(|e| config_err(key, e)))
            .transpose()
    }

    /// Fails on the first key outside `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(config_err(k, "unknown key")),
            None => Ok(()),
        }
    }
}

/// Parses a row-major list of `rows·cols` complex entries.
pub fn parse_matrix(text: &str, rows: usize, cols: usize) -> std::result::Result<CMat, String> {
    let entries = parse_entries(text)?;
    if entries.len() != rows * cols {
        return Err(format!(
            "expected {} entries for a {rows}x{cols} matrix, found {}",
            rows * cols,
            entries.len()
        ));
    }
    Ok(CMat::from_row_slice(rows, cols, &entries))
}

fn parse_entries(text: &str) -> std::result::Result<Vec<C64>, String> {
    let num = |s: &str| -> std::result::Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("`{}` is not a number", s.trim()))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{}` is not finite", s.trim()))
        }
    };
    let mut out = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let first = rest.chars().next().expect("nonempty");
        if first.is_whitespace() || first == ',' || first == ';' {
            rest = &rest[first.len_utf8()..];
            continue;
        }
        if first == '(' {
            let end = rest.find(')').ok_or("unclosed `(`")?;
            let inner = &rest[1..end];
            let (re, im) = inner
                .split_once(',')
                .ok_or_else(|| format!("`({inner})` is not a (re,im) pair"))?;
            out.push(c(num(re)?, num(im)?));
            rest = &rest[end + 1..];
        } else {
            let end = rest
                .find(|ch: char| ch.is_whitespace() || ch == ',' || ch == ';' || ch == '(')
                .unwrap_or(rest.len());
            out.push(c(num(&rest[..end])?, 0.0));
            rest = &rest[end..];
        }
    }
    Ok(out)
}

/// A channel model with optional per-user power budgets.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub system: MacSystem,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
}

impl SystemSpec {
    /// Reads the system keys. Defaults: `n_r = n_t = 1`, BPSK inputs,
    /// identity precoders, `snr = 1`. Channels are required. Scalar
    /// constellations are raised to the `n_t`-th Cartesian power.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let n_r: usize = kv.parse_or("n_r", 1)?;
        let n_t: usize = kv.parse_or("n_t", 1)?;
        if n_r == 0 {
            return Err(config_err("n_r", "must be positive"));
        }
        if n_t == 0 {
            return Err(config_err("n_t", "must be positive"));
        }
        let snr: f64 = kv.parse_or("snr", 1.0)?;
        if !(snr >= 0.0) || !snr.is_finite() {
            return Err(config_err("snr", format!("{snr} is not a finite nonnegative value")));
        }
        let chan = |key: &str| {
            kv.matrix(key, n_r, n_t)?
                .ok_or_else(|| config_err(key, "required key is missing"))
        };
        let h1 = chan("h1")?;
        let h2 = chan("h2")?;
        let p1 = kv.matrix("p1", n_t, n_t)?.unwrap_or_else(|| CMat::identity(n_t, n_t));
        let p2 = kv.matrix("p2", n_t, n_t)?.unwrap_or_else(|| CMat::identity(n_t, n_t));
        let alphabet = |key: &str| -> Result<Constellation> {
            let name = kv.get(key).unwrap_or("bpsk");
            let base = Constellation::from_name(name).map_err(|e| config_err(key, e.to_string()))?;
            base.cartesian_power(n_t).map_err(|e| config_err(key, e.to_string()))
        };
        let c1 = alphabet("c1")?;
        let c2 = alphabet("c2")?;
        let budget = |key: &str| -> Result<Option<f64>> {
            let q: Option<f64> = kv.parse_opt(key)?;
            match q {
                Some(v) if !(v > 0.0) || !v.is_finite() => Err(config_err(key, format!("{v} is not positive"))),
                other => Ok(other),
            }
        };
        let q1 = budget("q1")?;
        let q2 = budget("q2")?;
        let system = MacSystem::new(h1, h2, p1, p2, snr, c1, c2)?;
        Ok(Self { system, q1, q2 })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvConfig::parse(text)?;
        kv.reject_unknown(SYSTEM_KEYS)?;
        Self::from_kv(&kv)
    }
}

/// Formats a matrix in the config syntax.
pub fn format_matrix(m: &CMat) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| format!("({},{})", m[(i, j)].re, m[(i, j)].im))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    rows.join("; ")
}
