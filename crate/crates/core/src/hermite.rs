//! Orthonormal (probabilists') Hermite polynomials `h_m` and the expansion
//! of symmetric test functions `f = Σ a_2m h_2m`.

use std::fmt;
use std::str::FromStr;

use libm::tgamma as gamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Adaptive;

pub const MAX_ORDER: usize = 512;
pub const MAX_EXPANSION: usize = 128;
pub const DEFAULT_EXPANSION: usize = 64;
pub const DEFAULT_TOL: f64 = 1e-12;

/// Right end of the integration range for the coefficients; the Gaussian
/// weight underflows past it.
const X_MAX: f64 = 40.0;
const X_STEP: f64 = 0.5;

/// `h_m(x)` by the three-term recurrence.
pub fn hermite_eval(m: usize, x: f64) -> Result<f64> {
    if m > MAX_ORDER {
        return Err(Error::domain(format!(
            "Hermite order {m} exceeds {MAX_ORDER}"
        )));
    }
    let v = recurrence(m, x, 1.0);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(format!("h_{m}({x}) is not representable")))
    }
}

/// Runs `e_{m+1} = (x e_m - √m e_{m-1}) / √(m+1)` from `e_0 = start`,
/// `e_1 = x start`.
fn recurrence(m: usize, x: f64, start: f64) -> f64 {
    let (mut prev, mut cur) = (start, x * start);
    if m == 0 {
        return prev;
    }
    for n in 1..m {
        let nf = n as f64;
        let next = (x * cur - nf.sqrt() * prev) / (nf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// `h_m(x) φ(x)` with `φ` the standard normal density, computed without
/// forming `h_m(x)` on its own so it stays finite for large `x`.
fn weighted_hermite(m: usize, x: f64) -> f64 {
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    recurrence(m, x, density)
}

fn double_factorial_odd(n: i64) -> f64 {
    // (2j-1)!! with (-1)!! = 1
    let mut acc = 1.0;
    let mut i = n;
    while i > 1 {
        acc *= i as f64;
        i -= 2;
    }
    acc
}

/// `E η^{2n}` for standard normal `η`.
fn even_moment(n: usize) -> f64 {
    double_factorial_odd(2 * n as i64 - 1)
}

/// `E |η|^p`.
fn abs_moment(p: f64) -> f64 {
    2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    /// `|x|^p`, `p ≥ 1`.
    AbsPow { p: f64 },
    /// `h_order(x)` with `order` even.
    HermiteSingle { order: usize },
    /// `Σ_i c_i x^{2i}`.
    EvenPoly { coeffs: Vec<f64> },
    /// The constant 1.
    Indicator,
}

impl FunctionSpec {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            FunctionSpec::AbsPow { p } => {
                if *p == 2.0 {
                    x * x
                } else {
                    x.abs().powf(*p)
                }
            }
            FunctionSpec::HermiteSingle { order } => recurrence(*order, x, 1.0),
            FunctionSpec::EvenPoly { coeffs } => {
                let x2 = x * x;
                coeffs.iter().rev().fold(0.0, |acc, c| acc * x2 + c)
            }
            FunctionSpec::Indicator => 1.0,
        }
    }

    /// `E f(η)²` in closed form.
    pub fn second_moment(&self) -> f64 {
        match self {
            FunctionSpec::AbsPow { p } => abs_moment(2.0 * p),
            FunctionSpec::HermiteSingle { .. } | FunctionSpec::Indicator => 1.0,
            FunctionSpec::EvenPoly { coeffs } => {
                let mut acc = 0.0;
                for (i, ci) in coeffs.iter().enumerate() {
                    for (j, cj) in coeffs.iter().enumerate() {
                        acc += ci * cj * even_moment(i + j);
                    }
                }
                acc
            }
        }
    }
}

/// `a_0 = E f(η)` in closed form.
pub fn expectation_f(f: &FunctionSpec) -> f64 {
    match f {
        FunctionSpec::AbsPow { p } => {
            if *p == 2.0 {
                1.0
            } else {
                abs_moment(*p)
            }
        }
        FunctionSpec::HermiteSingle { order } => {
            if *order == 0 {
                1.0
            } else {
                0.0
            }
        }
        FunctionSpec::EvenPoly { coeffs } => coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * even_moment(i))
            .sum(),
        FunctionSpec::Indicator => 1.0,
    }
}

impl fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionSpec::AbsPow { p } => write!(f, "abspow:{p}"),
            FunctionSpec::HermiteSingle { order } => write!(f, "herm:{order}"),
            FunctionSpec::EvenPoly { coeffs } => {
                write!(f, "poly:")?;
                for (i, c) in coeffs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
            FunctionSpec::Indicator => write!(f, "one"),
        }
    }
}

impl FromStr for FunctionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "one" {
            return Ok(FunctionSpec::Indicator);
        }
        let (tag, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("cannot parse function spec '{s}'")))?;
        let number = |name: &str, v: &str| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse(format!("{name}: cannot parse '{v}' as a number")))
        };
        match tag {
            "abspow" => {
                let p = number("p", arg)?;
                if p < 1.0 {
                    return Err(Error::domain(format!("p={p} violates bound p >= 1")));
                }
                Ok(FunctionSpec::AbsPow { p })
            }
            "herm" => {
                let order: usize = arg
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("herm: cannot parse order '{arg}'")))?;
                if !order.is_multiple_of(2) || order > MAX_ORDER {
                    return Err(Error::domain(format!(
                        "herm order {order} must be even and at most {MAX_ORDER}"
                    )));
                }
                Ok(FunctionSpec::HermiteSingle { order })
            }
            "poly" => {
                let coeffs = arg
                    .split(',')
                    .map(|c| number("poly coefficient", c))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(FunctionSpec::EvenPoly { coeffs })
            }
            other => Err(Error::Parse(format!(
                "unknown function kind '{other}' (expected abspow, herm, poly, one)"
            ))),
        }
    }
}

/// Coefficients `a_0, a_2, ..., a_2M` of a symmetric function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteExpansion {
    pub coeffs: Vec<f64>,
    pub k0: usize,
    /// Upper bound on `Σ_{m>M} a_2m²`.
    pub tail_l2: f64,
}

impl HermiteExpansion {
    /// `a_2m`, zero past the stored range.
    pub fn a(&self, m: usize) -> f64 {
        self.coeffs.get(m).copied().unwrap_or(0.0)
    }

    /// Largest stored index `M`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `Σ_{m≥1} a_2m²` over the stored coefficients.
    pub fn centered_l2(&self) -> f64 {
        self.coeffs[1..].iter().map(|a| a * a).sum()
    }
}

/// `a_2m = 2 ∫_0^∞ f(x) h_2m(x) φ(x) dx` for `m = 0..=max_m`, each to
/// absolute error `tol`.
pub fn coefficients(f: &FunctionSpec, max_m: usize, tol: f64) -> Result<HermiteExpansion> {
    if max_m > MAX_EXPANSION {
        return Err(Error::domain(format!(
            "expansion length {max_m} exceeds {MAX_EXPANSION}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tol={tol} must be positive")));
    }
    let breaks: Vec<f64> = (0..=(X_MAX / X_STEP) as usize)
        .map(|i| i as f64 * X_STEP)
        .collect();
    let rule = Adaptive::new(0.5 * tol);
    let mut coeffs = Vec::with_capacity(max_m + 1);
    for m in 0..=max_m {
        let order = 2 * m;
        let integral = rule.integrate(|x| f.eval(x) * weighted_hermite(order, x), &breaks)?;
        coeffs.push(2.0 * integral.value);
    }
    let threshold = 10.0 * tol;
    let k0 = (1..=max_m)
        .find(|&m| coeffs[m].abs() > threshold)
        .ok_or(Error::UndefinedK0 { threshold })?;
    let sum_sq: f64 = coeffs.iter().map(|a| a * a).sum();
    let tail_l2 = (f.second_moment() - sum_sq).max(0.0);
    Ok(HermiteExpansion {
        coeffs,
        k0,
        tail_l2,
    })
}

/// Coefficients of `Z^{2k}, Z^{2k-2}, ..., Z^0` in the Wick power `:Z^{2k}:`
/// of a unit-variance Gaussian: `(-1)^j C(2k, 2j) (2j-1)!!`.
pub fn wick_coeffs(k: usize) -> Result<Vec<f64>> {
    if k > 32 {
        return Err(Error::domain(format!("Wick order k={k} exceeds 32")));
    }
    let n = 2 * k;
    let mut binom = 1.0f64;
    let mut out = Vec::with_capacity(k + 1);
    for j in 0..=k {
        if j > 0 {
            // C(n, 2j) from C(n, 2j-2)
            let a = (n - 2 * j + 2) as f64 * (n - 2 * j + 1) as f64;
            let b = (2 * j - 1) as f64 * (2 * j) as f64;
            binom = binom * a / b;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        out.push(sign * binom.round() * double_factorial_odd(2 * j as i64 - 1));
    }
    Ok(out)
}
