//! Catalog of increment variances `sigma^2(h) = E(G(x+h) - G(x))^2`.
//!
//! Four families are supported: pure powers `h^r`, scaled powers `c0 h^r`,
//! `exp(-(log 1/h)^gamma)` and `(log 1/h)^(-q)`. Each spec carries a validity
//! window `(0, h_max]` on which the function is strictly increasing; the two
//! power families extend past it by the same closed form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid size for the numerical concavity certificate.
const CONCAVITY_GRID: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Power { r: f64 },
    ScaledPower { c0: f64, r: f64 },
    ExpLog { gamma: f64 },
    LogPow { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementVarianceSpec {
    pub family: Family,
    pub h_max: f64,
}

/// Structural facts about a spec on its validity window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureReport {
    pub concave: bool,
    /// Right end of the window on which `concave` was certified.
    pub window: f64,
    pub rv_index: f64,
    pub slowly_varying: bool,
    pub power_exponent: Option<f64>,
}

fn check_range(name: &str, v: f64, lo: f64, lo_open: bool, hi: f64, hi_open: bool) -> Result<()> {
    let ok_lo = if lo_open { v > lo } else { v >= lo };
    let ok_hi = if hi_open { v < hi } else { v <= hi };
    if v.is_finite() && ok_lo && ok_hi {
        Ok(())
    } else {
        let l = if lo_open { '(' } else { '[' };
        let r = if hi_open { ')' } else { ']' };
        Err(Error::Domain(format!(
            "{name}={v} violates bound {name} in {l}{lo}, {hi}{r}"
        )))
    }
}

impl Family {
    fn validate(&self) -> Result<()> {
        match *self {
            Family::Power { r } => check_range("r", r, 0.0, true, 2.0, false),
            Family::ScaledPower { c0, r } => {
                check_range("c0", c0, 0.0, true, f64::INFINITY, true)?;
                check_range("r", r, 0.0, true, 2.0, false)
            }
            Family::ExpLog { gamma } => check_range("gamma", gamma, 0.0, true, 1.0, true),
            Family::LogPow { q } => check_range("q", q, 0.0, true, f64::INFINITY, true),
        }
    }

    /// Default right end of the validity window.
    pub fn default_h_max(&self) -> f64 {
        match *self {
            Family::Power { .. } | Family::ScaledPower { .. } => 1.0,
            Family::ExpLog { .. } => (-2.0f64).exp(),
            // (log 1/h)^-q is concave only where log 1/h > q + 1
            Family::LogPow { q } => (-(2.0f64).max(q + 1.0)).exp(),
        }
    }
}

impl IncrementVarianceSpec {
    pub fn new(family: Family) -> Result<Self> {
        family.validate()?;
        Ok(IncrementVarianceSpec {
            family,
            h_max: family.default_h_max(),
        })
    }

    pub fn power(r: f64) -> Result<Self> {
        Self::new(Family::Power { r })
    }

    pub fn scaled_power(c0: f64, r: f64) -> Result<Self> {
        Self::new(Family::ScaledPower { c0, r })
    }

    pub fn exp_log(gamma: f64) -> Result<Self> {
        Self::new(Family::ExpLog { gamma })
    }

    pub fn log_pow(q: f64) -> Result<Self> {
        Self::new(Family::LogPow { q })
    }

    pub fn with_h_max(mut self, h_max: f64) -> Result<Self> {
        match self.family {
            Family::Power { .. } | Family::ScaledPower { .. } => {
                check_range("hmax", h_max, 0.0, true, f64::INFINITY, true)?
            }
            // log 1/h must stay positive
            Family::ExpLog { .. } | Family::LogPow { .. } => {
                check_range("hmax", h_max, 0.0, true, 1.0, true)?
            }
        }
        self.h_max = h_max;
        Ok(self)
    }

    /// True for the power families, whose closed form is valid on all of
    /// `[0, inf)`.
    pub fn is_power(&self) -> bool {
        matches!(
            self.family,
            Family::Power { .. } | Family::ScaledPower { .. }
        )
    }

    /// Exponent `r` of a power family.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.family {
            Family::Power { r } | Family::ScaledPower { r, .. } => Some(r),
            _ => None,
        }
    }

    /// Largest lag at which the closed form may be evaluated.
    pub fn reach(&self) -> f64 {
        if self.is_power() {
            f64::INFINITY
        } else {
            self.h_max
        }
    }

    fn check_window(&self, h: f64) -> Result<()> {
        if h > 0.0 && h <= self.h_max {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "h={h} outside validity window (0, {}] of {self}",
                self.h_max
            )))
        }
    }

    /// `sigma^2(h)` on the validity window.
    pub fn eval_sigma2(&self, h: f64) -> Result<f64> {
        self.check_window(h)?;
        Ok(self.sigma2_raw(h))
    }

    /// `d/dh sigma^2(h)` on the validity window.
    pub fn eval_dsigma2(&self, h: f64) -> Result<f64> {
        self.check_window(h)?;
        Ok(self.dsigma2_raw(h))
    }

    /// Closed form without window checks; `sigma^2(0) = 0`.
    pub(crate) fn sigma2_raw(&self, h: f64) -> f64 {
        let h = h.abs();
        if h == 0.0 {
            return 0.0;
        }
        match self.family {
            Family::Power { r } => h.powf(r),
            Family::ScaledPower { c0, r } => c0 * h.powf(r),
            Family::ExpLog { gamma } => (-(-h.ln()).powf(gamma)).exp(),
            Family::LogPow { q } => (-h.ln()).powf(-q),
        }
    }

    pub(crate) fn dsigma2_raw(&self, h: f64) -> f64 {
        match self.family {
            Family::Power { r } => r * h.powf(r - 1.0),
            Family::ScaledPower { c0, r } => c0 * r * h.powf(r - 1.0),
            Family::ExpLog { gamma } => {
                let l = -h.ln();
                self.sigma2_raw(h) * gamma * l.powf(gamma - 1.0) / h
            }
            Family::LogPow { q } => {
                let l = -h.ln();
                q * l.powf(-q - 1.0) / h
            }
        }
    }

    /// `sigma^2(s + d) - sigma^2(s)` for `s > 0`, `s + d > 0`, evaluated
    /// without cancellation when `|d| << s`.
    pub(crate) fn increment(&self, s: f64, d: f64) -> f64 {
        let u = d / s;
        match self.family {
            Family::Power { r } => s.powf(r) * (r * u.ln_1p()).exp_m1(),
            Family::ScaledPower { c0, r } => c0 * s.powf(r) * (r * u.ln_1p()).exp_m1(),
            Family::ExpLog { gamma } => {
                let l = -s.ln();
                let rel = -u.ln_1p() / l;
                let exponent_change = l.powf(gamma) * (gamma * rel.ln_1p()).exp_m1();
                self.sigma2_raw(s) * (-exponent_change).exp_m1()
            }
            Family::LogPow { q } => {
                let l = -s.ln();
                let rel = -u.ln_1p() / l;
                l.powf(-q) * (-q * rel.ln_1p()).exp_m1()
            }
        }
    }

    /// Concavity (certified on a log-spaced grid through the monotonicity of
    /// the derivative), regular-variation index and slow variation.
    pub fn classify(&self) -> StructureReport {
        let (rv_index, slowly_varying) = match self.family {
            Family::Power { r } | Family::ScaledPower { r, .. } => (r, false),
            Family::ExpLog { .. } | Family::LogPow { .. } => (0.0, true),
        };
        StructureReport {
            concave: self.certify_concave(),
            window: self.h_max,
            rv_index,
            slowly_varying,
            power_exponent: self.power_exponent(),
        }
    }

    fn certify_concave(&self) -> bool {
        let lo = self.h_max * 1e-12;
        let ratio = (self.h_max / lo).powf(1.0 / (CONCAVITY_GRID - 1) as f64);
        let mut prev = f64::INFINITY;
        let mut h = lo;
        for i in 0..CONCAVITY_GRID {
            if i == CONCAVITY_GRID - 1 {
                h = self.h_max;
            }
            let d = self.dsigma2_raw(h);
            if !(d > 0.0) || d > prev * (1.0 + 1e-12) {
                return false;
            }
            prev = d;
            h *= ratio;
        }
        true
    }
}

impl fmt::Display for IncrementVarianceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Power { r } => write!(f, "pow:{r}")?,
            Family::ScaledPower { c0, r } => write!(f, "spow:{c0}:{r}")?,
            Family::ExpLog { gamma } => write!(f, "explog:{gamma}")?,
            Family::LogPow { q } => write!(f, "logpow:{q}")?,
        }
        if self.h_max != self.family.default_h_max() {
            write!(f, "@hmax={}", self.h_max)?;
        }
        Ok(())
    }
}

fn parse_num(name: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{name}: cannot parse '{s}' as a number")))
}

impl FromStr for IncrementVarianceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (body, hmax) = match s.split_once('@') {
            Some((body, suffix)) => {
                let v = suffix.strip_prefix("hmax=").ok_or_else(|| {
                    Error::Parse(format!("unknown suffix '@{suffix}', expected '@hmax=<v>'"))
                })?;
                (body, Some(parse_num("hmax", v)?))
            }
            None => (s, None),
        };
        let mut parts = body.split(':');
        let tag = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        let want = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!(
                    "'{tag}' takes {n} parameter(s), got {} in '{s}'",
                    args.len()
                )))
            }
        };
        let family = match tag {
            "pow" => {
                want(1)?;
                Family::Power {
                    r: parse_num("r", args[0])?,
                }
            }
            "spow" => {
                want(2)?;
                Family::ScaledPower {
                    c0: parse_num("c0", args[0])?,
                    r: parse_num("r", args[1])?,
                }
            }
            "explog" => {
                want(1)?;
                Family::ExpLog {
                    gamma: parse_num("gamma", args[0])?,
                }
            }
            "logpow" => {
                want(1)?;
                Family::LogPow {
                    q: parse_num("q", args[0])?,
                }
            }
            other => {
                return Err(Error::Parse(format!(
                    "unknown sigma family '{other}' (expected pow, spow, explog, logpow)"
                )))
            }
        };
        let spec = IncrementVarianceSpec::new(family)?;
        match hmax {
            Some(v) => spec.with_h_max(v),
            None => Ok(spec),
        }
    }
}
