//! Variance of `I(f, h)` through the Hermite series
//!
//! ```text
//! Var I(f, h) = Σ_{m ≥ k0} a_2m² J_2m(h)
//! ```
//!
//! and the small-`h` behaviour of each `J_k`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::HermiteExpansion;
use crate::kernel::{self, concave_j_bounds, phi1};
use crate::quadrature::{dyadic_points, Adaptive};
use crate::sigma::{IncrementVarianceSpec, StructureReport};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `σ² = h^r` with `(2-r)k < 1`: `J_k ~ C h^{(2-r)k}`.
    SubcriticalPower,
    /// `σ² = h`: `J_k ~ 2c h / (k+1)`.
    BrownianExact,
    /// `σ² = h^r` with `(2-r)k = 1`, `k ≥ 2`: `J_k ~ C h log(1/h)`.
    CriticalLog,
    /// `σ² = h^r` with `(2-r)k > 1`: `J_k ~ C h`.
    SupercriticalLinear,
    /// Concave, regularly varying with positive index: `J_k ≈ h`.
    ConcaveRV,
    /// Concave, slowly varying: `J_k ≈ (h σ'(h)/σ(h))^k h`.
    SlowlyVarying,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How `J_k(h)` scales as `h → 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rate {
    Power(f64),
    Linear,
    LinearLog,
    /// `(h σ²'(h) / (2 σ²(h)))^k h`
    LogDerivative(u32),
}

impl Rate {
    pub fn eval(&self, spec: &IncrementVarianceSpec, h: f64) -> f64 {
        match *self {
            Rate::Power(e) => h.powf(e),
            Rate::Linear => h,
            Rate::LinearLog => h * (1.0 / h).ln(),
            Rate::LogDerivative(k) => slowly_varying_rate(spec, k, h),
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Power(e) => write!(f, "h^{}", (e * 1e12).round() / 1e12),
            Rate::Linear => write!(f, "h"),
            Rate::LinearLog => write!(f, "h*log(1/h)"),
            Rate::LogDerivative(k) => write!(f, "(h*sigma'(h)/sigma(h))^{k}*h"),
        }
    }
}

/// `(h σ'(h) / σ(h))^k h`, the scale of `J_k` for slowly varying `σ²`.
pub fn slowly_varying_rate(spec: &IncrementVarianceSpec, k: u32, h: f64) -> f64 {
    let log_derivative = h * spec.dsigma2_raw(h) / (2.0 * spec.sigma2_raw(h));
    log_derivative.powi(k as i32) * h
}

/// Leading-order behaviour of `J_k(h)` over an interval of length `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticJ {
    pub regime: Regime,
    pub k: u32,
    /// `J_k(h) / rate(h) → constant`; absent when only two-sided bounds
    /// are known.
    pub constant: Option<f64>,
    pub rate: Rate,
    #[serde(skip)]
    spec: IncrementVarianceSpec,
    #[serde(skip)]
    a: f64,
    #[serde(skip)]
    b: f64,
}

impl AsymptoticJ {
    /// `constant · rate(h)`, when a constant is known.
    pub fn leading(&self, h: f64) -> Option<f64> {
        self.constant.map(|c| c * self.rate.eval(&self.spec, h))
    }

    /// Two-sided bounds on `J_k(h)` from the concave bracket of
    /// `∫∫|φ_h|^k`; only for the concave regimes.
    pub fn bounds(&self, h: f64, tol: f64) -> Result<Option<(f64, f64)>> {
        match self.regime {
            Regime::ConcaveRV | Regime::SlowlyVarying => Ok(Some(concave_j_bounds(
                &self.spec, h, self.k, self.a, self.b, tol,
            )?)),
            _ => Ok(None),
        }
    }
}

/// Regime of `J_k` from the structural facts about `σ²`.
pub fn classify_regime(structure: &StructureReport, k: u32) -> Result<Regime> {
    if let Some(r) = structure.power_exponent {
        if r == 1.0 {
            return Ok(Regime::BrownianExact);
        }
        let x = (2.0 - r) * k as f64;
        return Ok(if (x - 1.0).abs() <= 1e-12 {
            Regime::CriticalLog
        } else if x < 1.0 {
            Regime::SubcriticalPower
        } else {
            Regime::SupercriticalLinear
        });
    }
    if !structure.concave {
        return Err(Error::UnsupportedRegime(
            "no asymptotic formula for a non-power, non-concave sigma^2".into(),
        ));
    }
    Ok(if structure.slowly_varying {
        Regime::SlowlyVarying
    } else {
        Regime::ConcaveRV
    })
}

/// Regime, constant and rate of `J_k(h)` as `h → 0` on `[a, b]`.
pub fn asymptotic_j(spec: &IncrementVarianceSpec, k: u32, a: f64, b: f64) -> Result<AsymptoticJ> {
    if k == 0 {
        return Err(Error::domain("moment order k must be positive"));
    }
    if !(a < b) {
        return Err(Error::domain(format!(
            "interval [{a}, {b}] must satisfy a < b"
        )));
    }
    let c = b - a;
    let kf = k as f64;
    let regime = classify_regime(&spec.classify(), k)?;
    let (constant, rate) = match (regime, spec.power_exponent()) {
        (Regime::BrownianExact, _) => (Some(2.0 * c / (kf + 1.0)), Rate::Linear),
        (Regime::SubcriticalPower, Some(r)) => {
            let e = (r - 2.0) * kf;
            let num = 2.0 * r.powf(kf) * (r - 1.0).abs().powf(kf) * c.powf(e + 2.0);
            let den = 2f64.powf(kf) * (e + 1.0) * (e + 2.0);
            (Some(num / den), Rate::Power((2.0 - r) * kf))
        }
        (Regime::CriticalLog, Some(r)) => (
            Some(2.0 * c * (r * (r - 1.0) / 2.0).abs().powf(kf)),
            Rate::LinearLog,
        ),
        (Regime::SupercriticalLinear, Some(r)) => (
            Some(2.0 * c * eval_phi1_integral(r, k, DEFAULT_TOL)?),
            Rate::Linear,
        ),
        (Regime::ConcaveRV, _) => (None, Rate::Linear),
        (Regime::SlowlyVarying, _) => (None, Rate::LogDerivative(k)),
        _ => unreachable!("power regimes always carry an exponent"),
    };
    Ok(AsymptoticJ {
        regime,
        k,
        constant,
        rate,
        spec: *spec,
        a,
        b,
    })
}

/// `∫_0^∞ |φ_1(s)|^k ds` for `σ² = h^r`, finite when `(2-r)k > 1`.
///
/// Quadrature covers `[0, S]`; past `S` the integrand is replaced by the
/// first two terms of its expansion `|C(r,2)|^k s^{(r-2)k} (1 + kβ s^-2)`
/// with `β = C(r,4) / C(r,2)`, integrated in closed form.
pub fn eval_phi1_integral(r: f64, k: u32, tol: f64) -> Result<f64> {
    if !(r > 0.0 && r < 2.0) {
        return Err(Error::domain(format!("r={r} must lie in (0, 2)")));
    }
    let kf = k as f64;
    let decay = (2.0 - r) * kf;
    if !(decay > 1.0) {
        return Err(Error::domain(format!(
            "integral of |phi_1|^k diverges for (2-r)k = {decay} <= 1"
        )));
    }
    let c2 = r * (r - 1.0) / 2.0;
    let c4 = c2 * (r - 2.0) * (r - 3.0) / 12.0;
    if c2 == 0.0 {
        // r = 1: φ_1 vanishes past 1
        let v = Adaptive::new(tol).integrate(|s| phi1(r, s).abs().powi(k as i32), &[0.0, 1.0])?;
        return Ok(v.value);
    }
    let beta = c4 / c2;
    let lead = c2.abs().powf(kf);
    // the dropped third-order term is about s^-4 relative to the tail
    let tail_at = |s: f64| {
        lead * (s.powf(1.0 - decay) / (decay - 1.0)
            + kf * beta * s.powf(-1.0 - decay) / (decay + 1.0))
    };
    let mut s_end = 16.0f64;
    while s_end < 2f64.powi(40) && tail_at(s_end) * s_end.powi(-4) * 10.0 > 0.25 * tol {
        s_end *= 2.0;
    }
    let mut breaks = vec![0.0, 1.0, 2.0];
    breaks.extend(dyadic_points(4.0, s_end));
    breaks.push(s_end);
    let body = Adaptive::new(0.5 * tol).integrate(|s| phi1(r, s).abs().powi(k as i32), &breaks)?;
    Ok(body.value + tail_at(s_end))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticValue {
    pub regime: Regime,
    pub predicted: f64,
}

/// Result of summing the Hermite series for `Var I(f, h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub h: f64,
    pub exact: f64,
    pub tail_bound: f64,
    /// `(m, a_2m², J_2m(h))` for every summed term.
    pub terms: Vec<(usize, f64, f64)>,
    pub asymptotic: Option<AsymptoticValue>,
}

impl VarianceReport {
    /// `J_2m(h)` for a summed term.
    pub fn j(&self, m: usize) -> Option<f64> {
        self.terms.iter().find(|t| t.0 == m).map(|t| t.2)
    }
}

/// Absolute quadrature target for the `J`'s of a series with relative
/// truncation target `tol`.
fn series_quad_tol(tol: f64, h: f64, c: f64) -> f64 {
    (tol * h.min(1.0) * c.min(1.0)).max(1e-300)
}

/// `Σ_{m ≥ k0} a_2m² J_2m(h)`, stopped once `J_2(m+1)(h)` times the
/// remaining coefficient mass falls below `tol` times the partial sum.
pub fn exact_variance(
    fexp: &HermiteExpansion,
    spec: &IncrementVarianceSpec,
    a: f64,
    b: f64,
    h: f64,
    tol: f64,
) -> Result<VarianceReport> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tol={tol} must be positive")));
    }
    let qtol = series_quad_tol(tol, h, b - a);
    let big_m = fexp.order();
    // remaining[m] = Σ_{j>m} a_2j² + tail_l2
    let mut remaining = vec![fexp.tail_l2; big_m + 1];
    for m in (0..big_m).rev() {
        remaining[m] = remaining[m + 1] + fexp.a(m + 1).powi(2);
    }

    let mut terms = Vec::new();
    let mut partial = 0.0;
    let mut tail_bound = 0.0;
    let mut j_cur = kernel::moment_j(spec, h, 2 * fexp.k0 as u32, a, b, qtol)?.value;
    for m in fexp.k0..=big_m {
        let a2 = fexp.a(m).powi(2);
        terms.push((m, a2, j_cur));
        partial += a2 * j_cur;
        let rest = remaining[m];
        if rest == 0.0 {
            break;
        }
        let j_next = kernel::moment_j(spec, h, 2 * (m as u32 + 1), a, b, qtol)?.value;
        tail_bound = j_next * rest;
        if m == big_m || tail_bound < tol * partial {
            break;
        }
        j_cur = j_next;
    }

    let asymptotic = asymptotic_variance(fexp, spec, a, b).ok().and_then(|av| {
        let predicted = match av.predictor {
            Predictor::DominantTerm { a2, .. } => Ok(a2 * terms[0].2),
            _ => av.eval(h),
        };
        predicted.ok().map(|predicted| AsymptoticValue {
            regime: av.regime,
            predicted,
        })
    });

    Ok(VarianceReport {
        h,
        exact: partial,
        tail_bound,
        terms,
        asymptotic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Predictor {
    /// `slope · h`
    Linear { slope: f64 },
    /// `slope · h log(1/h)`
    LinearLog { slope: f64 },
    /// `a_2k0² J_2k0(h)`, with `J` computed numerically.
    DominantTerm { a2: f64, k: u32 },
}

/// Leading-order predictor of `Var I(f, h)` as `h → 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticVariance {
    pub regime: Regime,
    pub formula: String,
    predictor: Predictor,
    spec: IncrementVarianceSpec,
    a: f64,
    b: f64,
}

impl AsymptoticVariance {
    /// The predicted variance at `h`.
    pub fn eval(&self, h: f64) -> Result<f64> {
        match self.predictor {
            Predictor::Linear { slope } => Ok(slope * h),
            Predictor::LinearLog { slope } => Ok(slope * h * (1.0 / h).ln()),
            Predictor::DominantTerm { a2, k } => {
                let tol = series_quad_tol(DEFAULT_TOL, h, self.b - self.a);
                Ok(a2 * kernel::moment_j(&self.spec, h, k, self.a, self.b, tol)?.value)
            }
        }
    }

    /// Two-sided bounds for the concave regimes, where only the order of
    /// magnitude is known.
    pub fn bounds(&self, h: f64) -> Result<Option<(f64, f64)>> {
        match self.predictor {
            Predictor::DominantTerm { a2, k } => {
                let (lo, hi) = concave_j_bounds(&self.spec, h, k, self.a, self.b, 1e-14)?;
                Ok(Some((a2 * lo, a2 * hi)))
            }
            _ => Ok(None),
        }
    }
}

/// Leading-order variance: the single term `a_2k0² J_2k0` when it dominates,
/// or the whole series of linear-rate terms when all of them are
/// comparable.
pub fn asymptotic_variance(
    fexp: &HermiteExpansion,
    spec: &IncrementVarianceSpec,
    a: f64,
    b: f64,
) -> Result<AsymptoticVariance> {
    let c = b - a;
    let k0 = fexp.k0 as u32;
    if spec.power_exponent() == Some(2.0) {
        return Err(Error::UnsupportedRegime(
            "sigma^2 = h^2 gives rho = 1: the statistic is degenerate and has no normal limit"
                .into(),
        ));
    }
    let lead = asymptotic_j(spec, 2 * k0, a, b)?;
    let a2k0 = fexp.a(fexp.k0).powi(2);
    let (predictor, formula) = match lead.regime {
        Regime::SubcriticalPower => {
            return Err(Error::UnsupportedRegime(format!(
                "(2-r)*2k0 < 1 for {spec} with k0={k0}: the limit is not Gaussian"
            )))
        }
        Regime::CriticalLog => {
            let slope = a2k0 * lead.constant.expect("critical constant");
            (
                Predictor::LinearLog { slope },
                format!("{slope:.10e} * h*log(1/h)"),
            )
        }
        Regime::BrownianExact | Regime::SupercriticalLinear => {
            let r = spec
                .power_exponent()
                .expect("linear regimes are power laws");
            let big_m = fexp.order();
            let mut remaining = vec![fexp.tail_l2; big_m + 1];
            for m in (0..big_m).rev() {
                remaining[m] = remaining[m + 1] + fexp.a(m + 1).powi(2);
            }
            let integral = |m: usize| -> Result<f64> {
                if r == 1.0 {
                    Ok(1.0 / (2 * m + 1) as f64)
                } else {
                    eval_phi1_integral(r, 2 * m as u32, DEFAULT_TOL)
                }
            };
            let mut slope = 0.0;
            let mut cur = integral(fexp.k0)?;
            for m in fexp.k0..=big_m {
                slope += fexp.a(m).powi(2) * 2.0 * c * cur;
                if remaining[m] == 0.0 || m == big_m {
                    break;
                }
                let next = integral(m + 1)?;
                if 2.0 * c * next * remaining[m] < DEFAULT_TOL * slope {
                    break;
                }
                cur = next;
            }
            (Predictor::Linear { slope }, format!("{slope:.10e} * h"))
        }
        Regime::ConcaveRV | Regime::SlowlyVarying => (
            Predictor::DominantTerm {
                a2: a2k0,
                k: 2 * k0,
            },
            format!("{a2k0:.10e} * J_{}(h), of order {}", 2 * k0, lead.rate),
        ),
    };
    Ok(AsymptoticVariance {
        regime: lead.regime,
        formula,
        predictor,
        spec: *spec,
        a,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{coefficients, FunctionSpec};

    fn pow(r: f64) -> IncrementVarianceSpec {
        IncrementVarianceSpec::power(r).unwrap()
    }

    fn expansion(f: &str, m: usize) -> HermiteExpansion {
        coefficients(&f.parse::<FunctionSpec>().unwrap(), m, 1e-12).unwrap()
    }

    #[test]
    fn brownian_square() {
        let e = expansion("poly:0,1", 16);
        let rep = exact_variance(&e, &pow(1.0), 0.0, 1.0, 0.1, DEFAULT_TOL).unwrap();
        assert!((rep.exact - 0.13).abs() < 1e-10, "{}", rep.exact);
        let asym = rep.asymptotic.unwrap();
        assert_eq!(asym.regime, Regime::BrownianExact);
        assert!((asym.predicted - 4.0 / 3.0 * 0.1).abs() < 1e-9);
    }

    #[test]
    fn degenerate_fourth_hermite() {
        let e = expansion("herm:4", 8);
        let rep = exact_variance(&e, &pow(2.0), 0.0, 1.0, 0.01, DEFAULT_TOL).unwrap();
        assert!((rep.exact - 1.0).abs() < 1e-10);
        assert!(rep.asymptotic.is_none());
        let err = asymptotic_variance(&e, &pow(2.0), 0.0, 1.0).unwrap_err();
        assert_eq!(err.category(), "unsupported-regime");
    }

    #[test]
    fn brownian_absolute_value_first_term() {
        let e = expansion("abspow:1", 64);
        let rep = exact_variance(&e, &pow(1.0), 0.0, 1.0, 0.05, DEFAULT_TOL).unwrap();
        let first = (2.0 * 0.05 / 3.0 - 2.0 * 0.0025 / 12.0) / std::f64::consts::PI;
        assert!((rep.terms[0].1 * rep.terms[0].2 - first).abs() < 1e-12);
        assert!((first - 0.010478).abs() < 1e-6);
        assert!(rep.exact > first);
    }

    #[test]
    fn sandwich_and_tail_bound() {
        let e = expansion("abspow:1.5", 64);
        for (r, h) in [(0.5, 0.01), (1.2, 0.02), (1.5, 0.005)] {
            let rep = exact_variance(&e, &pow(r), 0.0, 1.0, h, DEFAULT_TOL).unwrap();
            let j0 = rep.terms[0].2;
            assert!(rep.exact >= e.a(e.k0).powi(2) * j0 * (1.0 - 1e-12));
            assert!(rep.exact <= (e.centered_l2() + e.tail_l2) * j0);
            assert!(rep.tail_bound >= 0.0);
        }
    }

    #[test]
    fn scaled_power_is_invisible() {
        let e = expansion("abspow:1", 32);
        let plain = exact_variance(&e, &pow(0.7), 0.0, 1.0, 0.01, DEFAULT_TOL).unwrap();
        let scaled = IncrementVarianceSpec::scaled_power(17.0, 0.7).unwrap();
        let rep = exact_variance(&e, &scaled, 0.0, 1.0, 0.01, DEFAULT_TOL).unwrap();
        assert!((plain.exact - rep.exact).abs() <= 1e-12 * plain.exact);
        assert_eq!(plain.terms.len(), rep.terms.len());
    }

    #[test]
    fn regime_examples() {
        let bj = asymptotic_j(&pow(1.0), 2, 0.0, 1.0).unwrap();
        assert_eq!(bj.regime, Regime::BrownianExact);
        assert!((bj.constant.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(bj.rate, Rate::Linear);

        let cl = asymptotic_j(&pow(1.5), 2, 0.0, 1.0).unwrap();
        assert_eq!(cl.regime, Regime::CriticalLog);
        assert!((cl.constant.unwrap() - 0.28125).abs() < 1e-15);
        assert_eq!(cl.rate, Rate::LinearLog);

        let sl = asymptotic_j(&pow(0.5), 3, 0.0, 1.0).unwrap();
        assert_eq!(sl.regime, Regime::SupercriticalLinear);
        let want = 2.0 * eval_phi1_integral(0.5, 3, 1e-12).unwrap();
        assert!((sl.constant.unwrap() - want).abs() < 1e-9);

        let sub = asymptotic_j(&pow(1.2), 1, 0.0, 1.0).unwrap();
        assert_eq!(sub.regime, Regime::SubcriticalPower);
        assert!(matches!(sub.rate, Rate::Power(e) if (e - 0.8).abs() < 1e-15));

        let deg = asymptotic_j(&pow(2.0), 4, 0.0, 3.0).unwrap();
        assert_eq!(deg.regime, Regime::SubcriticalPower);
        assert!((deg.constant.unwrap() - 9.0).abs() < 1e-12);

        let sv = asymptotic_j(&IncrementVarianceSpec::log_pow(1.0).unwrap(), 2, 0.0, 0.1).unwrap();
        assert_eq!(sv.regime, Regime::SlowlyVarying);
        assert!(sv.constant.is_none());
        let (lo, hi) = sv.bounds(1e-4, 1e-14).unwrap().unwrap();
        assert!(0.0 < lo && lo < hi);
    }

    #[test]
    fn phi1_integral_brownian() {
        for k in 2..=6 {
            let v = eval_phi1_integral(1.0, k, 1e-12).unwrap();
            assert!((v - 1.0 / (k as f64 + 1.0)).abs() < 1e-10);
        }
        assert!(eval_phi1_integral(1.5, 2, 1e-10).is_err());
        assert!(eval_phi1_integral(0.5, 0, 1e-10).is_err());
    }

    #[test]
    fn phi1_integral_tail_is_consistent() {
        // the tail model must not depend on where quadrature stops
        let a = eval_phi1_integral(0.5, 2, 1e-12).unwrap();
        let b = eval_phi1_integral(0.5, 2, 1e-9).unwrap();
        assert!((a - b).abs() < 1e-8);
        let c = eval_phi1_integral(1.75, 5, 1e-10).unwrap();
        assert!(c > 0.0 && c.is_finite());
    }

    #[test]
    fn critical_variance_predictor() {
        let e = expansion("poly:0,1", 8);
        let av = asymptotic_variance(&e, &pow(1.5), 0.0, 1.0).unwrap();
        assert_eq!(av.regime, Regime::CriticalLog);
        let h = 1e-3f64;
        let want = 0.5625 * h * (1.0 / h).ln();
        assert!((av.eval(h).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn chaos_regime_is_unsupported() {
        let e = expansion("herm:4", 4);
        let err = asymptotic_variance(&e, &pow(1.9), 0.0, 1.0).unwrap_err();
        assert_eq!(err.category(), "unsupported-regime");
        // boundary case 2 - 1/(2 k0) is critical, not subcritical
        let av = asymptotic_variance(&e, &pow(1.75), 0.0, 1.0).unwrap();
        assert_eq!(av.regime, Regime::CriticalLog);
    }

    #[test]
    fn report_json_layout() {
        let e = expansion("poly:0,1", 8);
        let rep = exact_variance(&e, &pow(1.0), 0.0, 1.0, 0.1, DEFAULT_TOL).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&crate::format::to_json(&rep).unwrap()).unwrap();
        assert!(v["terms"][0].as_array().unwrap().len() == 3);
        assert_eq!(v["asymptotic"]["regime"], "BrownianExact");
        for key in ["h", "exact", "tail_bound"] {
            assert!(v[key].is_number(), "{key}");
        }
    }
}
