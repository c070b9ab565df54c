//! Increment covariance `φ_h`, the normalized kernel `ρ_h = φ_h / σ²(h)`,
//! kernel moments and the hypothesis diagnostics built on them.
//!
//! With `c = b - a`, the moments are
//!
//! ```text
//! J_k(h) = ∫_a^b ∫_a^b |ρ_h(x-y)|^k dx dy = 2 ∫_0^c |ρ_h(s)|^k (c-s) ds
//! S_k(h) = sup_{a≤x≤b} ∫_a^b |ρ_h(x-y)|^k dy
//! ```

use std::cell::Cell;
use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::num;
use crate::quadrature::{breakpoints, dyadic_points, Adaptive, Integral};
use crate::sigma::IncrementVarianceSpec;

/// Default absolute error target for `J` and `S`.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Slack allowed on `|ρ| ≤ 1` before the increment variance is declared invalid.
const RHO_SLACK: f64 = 1e-12;

/// Points scanned for sign changes of `ρ_h` on `(0, 4h]`.
const SIGN_SCAN: usize = 512;

/// Size of the x-grid (and of its refinement) used for `S_k`.
const SUP_GRID: usize = 256;

/// `φ_1(t) = (|t+1|^r + |t-1|^r - 2|t|^r) / 2`, the kernel of `σ² = h^r` at
/// unit lag. Power kernels scale exactly: `ρ_h(s) = φ_1(s/h)`.
pub fn phi1(r: f64, t: f64) -> f64 {
    let t = t.abs();
    if r == 2.0 {
        return 1.0;
    }
    if r == 1.0 {
        return (1.0 - t).max(0.0);
    }
    if t < 2.0 {
        return 0.5 * ((t + 1.0).powf(r) + (t - 1.0).abs().powf(r) - 2.0 * t.powf(r));
    }
    // t^r * sum_{j>=1} C(r, 2j) t^{-2j}; every term has the sign of r - 1
    let x = 1.0 / (t * t);
    let mut binom = r * (r - 1.0) / 2.0;
    let mut n = 2.0;
    let mut pow = x;
    let mut sum = 0.0;
    for _ in 0..400 {
        let term = binom * pow;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        binom *= (r - n) * (r - n - 1.0) / ((n + 1.0) * (n + 2.0));
        n += 2.0;
        pow *= x;
    }
    t.powf(r) * sum
}

fn check_h(spec: &IncrementVarianceSpec, h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("h={h} must be positive")));
    }
    if !spec.is_power() && h > spec.h_max {
        return Err(Error::domain(format!(
            "h={h} outside validity window (0, {}] of {spec}",
            spec.h_max
        )));
    }
    Ok(())
}

/// Checks that `φ_h(s)` may be evaluated for every `0 ≤ s ≤ s_max`.
fn check_reach(spec: &IncrementVarianceSpec, h: f64, s_max: f64) -> Result<()> {
    check_h(spec, h)?;
    if !(s_max >= 0.0) {
        return Err(Error::domain(format!("lag s={s_max} must be nonnegative")));
    }
    if s_max + h > spec.reach() {
        return Err(Error::domain(format!(
            "lag s+h={} exceeds validity window (0, {}] of {spec}",
            s_max + h,
            spec.h_max
        )));
    }
    Ok(())
}

pub(crate) fn phi_raw(spec: &IncrementVarianceSpec, h: f64, s: f64) -> f64 {
    let s = s.abs();
    if let Some(r) = spec.power_exponent() {
        return spec.sigma2_raw(h) * phi1(r, s / h);
    }
    if s < 2.0 * h {
        0.5 * (spec.sigma2_raw(s + h) + spec.sigma2_raw(s - h) - 2.0 * spec.sigma2_raw(s))
    } else {
        0.5 * (spec.increment(s, h) + spec.increment(s, -h))
    }
}

pub(crate) fn rho_raw(spec: &IncrementVarianceSpec, h: f64, s: f64) -> f64 {
    match spec.power_exponent() {
        Some(r) => phi1(r, s / h),
        None => phi_raw(spec, h, s) / spec.sigma2_raw(h),
    }
}

fn check_rho(spec: &IncrementVarianceSpec, h: f64, s: f64, v: f64) -> Result<f64> {
    if v.abs() > 1.0 + RHO_SLACK || !v.is_finite() {
        return Err(Error::Invariant(format!(
            "|rho_h(s)|={} > 1 at h={h}, s={s}: {spec} is not a valid increment variance",
            v.abs()
        )));
    }
    Ok(v)
}

/// `φ_h(s) = (σ²(s+h) + σ²(|s-h|) - 2σ²(s)) / 2`, with `σ²(0) = 0`.
pub fn phi(spec: &IncrementVarianceSpec, h: f64, s: f64) -> Result<f64> {
    check_reach(spec, h, s)?;
    Ok(phi_raw(spec, h, s))
}

/// `ρ_h(s) = φ_h(s) / σ²(h)`, checked to lie in `[-1, 1]`.
pub fn rho(spec: &IncrementVarianceSpec, h: f64, s: f64) -> Result<f64> {
    check_reach(spec, h, s)?;
    check_rho(spec, h, s, rho_raw(spec, h, s))
}

fn check_interval(a: f64, b: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::domain(format!(
            "interval [{a}, {b}] must satisfy a < b"
        )));
    }
    Ok(b - a)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::domain(format!("tol={tol} must be positive")));
    }
    Ok(())
}

/// Sign changes of `ρ_h` on `(0, min(4h, c)]`, each located by bisection.
fn sign_changes(spec: &IncrementVarianceSpec, h: f64, c: f64) -> Vec<f64> {
    let hi = (4.0 * h).min(c);
    let mut out = Vec::new();
    let mut prev_s = 0.0;
    let mut prev_v = rho_raw(spec, h, 0.0);
    for i in 1..=SIGN_SCAN {
        let s = hi * i as f64 / SIGN_SCAN as f64;
        let v = rho_raw(spec, h, s);
        if prev_v * v < 0.0 {
            let (mut lo, mut up, lo_v) = (prev_s, s, prev_v);
            while up - lo > 1e-14 * h {
                let mid = 0.5 * (lo + up);
                if mid <= lo || mid >= up {
                    break;
                }
                if rho_raw(spec, h, mid) * lo_v > 0.0 {
                    lo = mid;
                } else {
                    up = mid;
                }
            }
            out.push(0.5 * (lo + up));
        }
        prev_s = s;
        prev_v = v;
    }
    out
}

/// Mandatory panel edges on `[0, c]`: the kinks at `0, h, 2h`, interior sign
/// changes of `ρ_h`, and a geometric ladder `4h, 8h, ...` for the decay.
fn kernel_breaks(spec: &IncrementVarianceSpec, h: f64, c: f64) -> Vec<f64> {
    let mut interior = vec![h, 2.0 * h];
    interior.extend(sign_changes(spec, h, c));
    interior.extend(dyadic_points(4.0 * h, c));
    breakpoints(0.0, c, interior)
}

/// Runs `integrand(s, |ρ_h(s)|)` through the adaptive rule with the `ρ`
/// invariant enforced at every node.
fn integrate_rho<G>(
    spec: &IncrementVarianceSpec,
    h: f64,
    tol: f64,
    breaks: &[f64],
    integrand: G,
) -> Result<Vec<Integral>>
where
    G: Fn(f64, f64) -> f64,
{
    let bad = Cell::new(None);
    let f = |s: f64| {
        let r = rho_raw(spec, h, s);
        if (r.abs() > 1.0 + RHO_SLACK || !r.is_finite()) && bad.get().is_none() {
            bad.set(Some((s, r)));
        }
        integrand(s, r.abs())
    };
    let parts = Adaptive::new(tol).integrate_segments(f, breaks);
    if let Some((s, r)) = bad.get() {
        check_rho(spec, h, s, r)?;
    }
    parts
}

/// `J_k(h)` over `[a, b]` with absolute error target `tol`.
pub fn moment_j(
    spec: &IncrementVarianceSpec,
    h: f64,
    k: u32,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Integral> {
    let c = check_interval(a, b)?;
    check_tol(tol)?;
    if k == 0 {
        return Err(Error::domain("moment order k must be positive"));
    }
    check_reach(spec, h, c)?;
    let breaks = kernel_breaks(spec, h, c);
    let parts = integrate_rho(spec, h, 0.5 * tol, &breaks, |s, r| {
        r.powi(k as i32) * (c - s)
    })?;
    let total = parts.into_iter().fold(Integral::ZERO, |acc, p| acc + p);
    Ok(Integral {
        value: 2.0 * total.value,
        error: 2.0 * total.error,
    })
}

/// `F(t) = ∫_0^t |ρ_h|^k` at each of the sorted `points` in `[0, c]`, with the
/// total quadrature error.
fn cumulative_moment(
    spec: &IncrementVarianceSpec,
    h: f64,
    k: u32,
    c: f64,
    points: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut breaks = kernel_breaks(spec, h, c);
    breaks.extend_from_slice(points);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let parts = integrate_rho(spec, h, tol, &breaks, |_, r| r.powi(k as i32))?;
    let mut cum = Vec::with_capacity(breaks.len());
    let mut acc = 0.0;
    let mut err = 0.0;
    cum.push(0.0);
    for p in &parts {
        acc += p.value;
        err += p.error;
        cum.push(acc);
    }
    let values = points
        .iter()
        .map(|p| {
            let i = breaks
                .binary_search_by(|x| x.total_cmp(p))
                .expect("evaluation point is a breakpoint");
            cum[i]
        })
        .collect();
    Ok((values, err))
}

/// `S_k(h)`: `max_u F(u) + F(c-u)` over a grid of `u = x - a`, refined once
/// around the best grid point.
pub fn sup_moment_s(
    spec: &IncrementVarianceSpec,
    h: f64,
    k: u32,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Integral> {
    let c = check_interval(a, b)?;
    check_tol(tol)?;
    if k == 0 {
        return Err(Error::domain("moment order k must be positive"));
    }
    check_reach(spec, h, c)?;

    let grid: Vec<f64> = (0..=SUP_GRID)
        .map(|i| c * i as f64 / SUP_GRID as f64)
        .collect();
    let (f, err) = cumulative_moment(spec, h, k, c, &grid, 0.5 * tol)?;
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..=SUP_GRID {
        let v = f[i] + f[SUP_GRID - i];
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let mut best_err = 2.0 * err;

    let lo = grid[best_i.saturating_sub(1)];
    let hi = grid[(best_i + 1).min(SUP_GRID)];
    let fine: Vec<f64> = (0..=SUP_GRID)
        .map(|j| lo + (hi - lo) * j as f64 / SUP_GRID as f64)
        .collect();
    let mut pts: Vec<f64> = fine.iter().flat_map(|&u| [u, (c - u).max(0.0)]).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let (g, err2) = cumulative_moment(spec, h, k, c, &pts, 0.5 * tol)?;
    let at = |u: f64| g[pts.binary_search_by(|x| x.total_cmp(&u)).unwrap()];
    for &u in &fine {
        let v = at(u) + at((c - u).max(0.0));
        if v > best {
            best = v;
            best_err = 2.0 * err2;
        }
    }
    Ok(Integral {
        value: best,
        error: best_err,
    })
}

/// `∫_0^h |σ²(h) - σ²(s)|^k ds`, the one-sided integral that brackets
/// `∫∫|φ_h|^k` for concave `σ²`.
pub fn concave_side_integral(
    spec: &IncrementVarianceSpec,
    h: f64,
    k: u32,
    tol: f64,
) -> Result<Integral> {
    check_reach(spec, h, 0.0)?;
    check_tol(tol)?;
    let s2h = spec.sigma2_raw(h);
    let f = |s: f64| {
        let d = if s < 0.5 * h || s <= 0.0 {
            s2h - spec.sigma2_raw(s)
        } else {
            spec.increment(s, h - s)
        };
        d.abs().powi(k as i32)
    };
    Adaptive::new(tol).integrate(f, &[0.0, 0.5 * h, h])
}

/// Bounds `(lower, upper)` on `J_k(h)` for concave `σ²`, obtained by dividing
/// the bracket of `∫∫|φ_h|^k` by `σ²(h)^k`:
///
/// ```text
/// (c-h)/2^k · A ≤ ∫∫|φ_h|^k ≤ 6c(1+2^-k) · A,   A = ∫_0^h |σ²(h)-σ²(s)|^k ds
/// ```
pub fn concave_j_bounds(
    spec: &IncrementVarianceSpec,
    h: f64,
    k: u32,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let c = check_interval(a, b)?;
    let side = concave_side_integral(spec, h, k, tol)?.value;
    let norm = spec.sigma2_raw(h).powi(k as i32);
    let kf = k as i32;
    let lower = (c - h) / 2f64.powi(kf) * side / norm;
    let upper = 6.0 * c * (1.0 + 2f64.powi(-kf)) * side / norm;
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub k: u32,
    pub h: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "J_err")]
    pub j_err: f64,
    #[serde(rename = "S_err")]
    pub s_err: f64,
}

impl MomentEntry {
    pub fn quadrature_error(&self) -> f64 {
        self.j_err.max(self.s_err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMomentTable {
    pub a: f64,
    pub b: f64,
    pub entries: Vec<MomentEntry>,
}

impl KernelMomentTable {
    /// Tabulates `J_k(h)` and `S_k(h)` for every `(k, h)`, ordered by `k`
    /// then by the position of `h` in `hs`. Cells are independent, so the
    /// parallel evaluation is bit-identical to a sequential one.
    pub fn compute(
        spec: &IncrementVarianceSpec,
        a: f64,
        b: f64,
        ks: &[u32],
        hs: &[f64],
        tol: f64,
    ) -> Result<Self> {
        let cells: Vec<(u32, f64)> = ks
            .iter()
            .flat_map(|&k| hs.iter().map(move |&h| (k, h)))
            .collect();
        let entries = cells
            .par_iter()
            .map(|&(k, h)| {
                let j = moment_j(spec, h, k, a, b, tol)?;
                let s = sup_moment_s(spec, h, k, a, b, tol)?;
                Ok(MomentEntry {
                    k,
                    h,
                    j: j.value,
                    s: s.value,
                    j_err: j.error,
                    s_err: s.error,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelMomentTable { a, b, entries })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,h,J,S,J_err,S_err")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.k,
                num(e.h),
                num(e.j),
                num(e.s),
                num(e.j_err),
                num(e.s_err)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "consistent-with-holds")]
    Holds,
    #[serde(rename = "consistent-with-fails")]
    Fails,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl Verdict {
    fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        let mut all_hold = true;
        for v in verdicts {
            match v {
                Verdict::Fails => return Verdict::Fails,
                Verdict::Inconclusive => all_hold = false,
                Verdict::Holds => {}
            }
        }
        if all_hold {
            Verdict::Holds
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Floor below which a liminf-positive diagnostic is not called positive.
const LIMINF_FLOOR: f64 = 0.01;
/// Relative upward jitter tolerated in a "decreasing" trend.
const JITTER: f64 = 0.05;

/// Monotone decrease (up to jitter) over the last half of the grid, ending
/// below half the initial value.
fn decreasing_to_zero(xs: &[f64]) -> bool {
    let n = xs.len();
    let start = n / 2;
    let monotone = (start + 1..n).all(|i| xs[i] <= xs[i - 1] * (1.0 + JITTER));
    monotone && xs[n - 1] < 0.5 * xs[0]
}

/// Verdict for a condition of the form `diagnostic → 0`.
pub fn small_o_verdict(xs: &[f64]) -> Verdict {
    if decreasing_to_zero(xs) {
        Verdict::Holds
    } else if xs[xs.len() - 1] > LIMINF_FLOOR {
        Verdict::Fails
    } else {
        Verdict::Inconclusive
    }
}

/// Verdict for a condition of the form `liminf diagnostic > 0`.
pub fn liminf_positive_verdict(xs: &[f64]) -> Verdict {
    if decreasing_to_zero(xs) {
        Verdict::Fails
    } else if xs[xs.len() - 1] > LIMINF_FLOOR {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    }
}

/// Verdict for a condition of the form `diagnostic = O(1)`.
pub fn bounded_verdict(xs: &[f64]) -> Verdict {
    let n = xs.len();
    let start = n / 2;
    let first = xs[..start.max(1)].iter().cloned().fold(0.0, f64::max);
    let last = xs[start..].iter().cloned().fold(0.0, f64::max);
    let increasing = (start + 1..n).all(|i| xs[i] >= xs[i - 1] * (1.0 - JITTER));
    if last <= 2.0 * first {
        Verdict::Holds
    } else if increasing && xs[n - 1] > 4.0 * xs[0] {
        Verdict::Fails
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedRatio {
    pub k: u32,
    /// `sup_h S_k(h) / J_k(h)` over the grid.
    pub sup: f64,
    pub trend: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallOTrend {
    pub j: u32,
    /// `J_j^{1/j} / J_{j+1}^{1/(j+1)}` along the grid.
    pub trend: Vec<f64>,
    pub verdict: Verdict,
}

/// Diagnostics for the hypotheses of the CLTs, each tabulated along a
/// decreasing `h` grid. `verdicts` is keyed by diagnostic name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub h_grid: Vec<f64>,
    pub bounded_ratio: Vec<BoundedRatio>,
    pub smallo_trend: Vec<SmallOTrend>,
    /// `S_1(h)`.
    pub st_sup_trend: Vec<f64>,
    /// `J_2(h) / J_1(h)`.
    pub st_ratio_trend: Vec<f64>,
    /// `J_{2k0+2}(h) / J_{2k0}(h)`.
    pub ccl_ratio_trend: Vec<f64>,
    pub verdicts: BTreeMap<String, Verdict>,
}

/// Evaluates every hypothesis diagnostic on `h_grid`.
///
/// `tol` is relative to `h`: each moment is computed with absolute error
/// target `tol · min(h, 1)`, since the moments themselves shrink like `h`.
pub fn check_conditions(
    spec: &IncrementVarianceSpec,
    a: f64,
    b: f64,
    h_grid: &[f64],
    j_max: u32,
    k0: u32,
    tol: f64,
) -> Result<ConditionReport> {
    check_interval(a, b)?;
    check_tol(tol)?;
    if h_grid.len() < 4 {
        return Err(Error::domain(
            "condition checks need at least 4 grid points",
        ));
    }
    if h_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::domain("h grid must be strictly decreasing"));
    }
    if k0 == 0 || j_max < 2 * k0 + 2 {
        return Err(Error::domain(format!(
            "need k0 >= 1 and j_max >= 2 k0 + 2 (k0={k0}, j_max={j_max})"
        )));
    }

    let ks: Vec<u32> = (1..=j_max).collect();
    let cells: Vec<(usize, u32)> = (0..h_grid.len())
        .flat_map(|i| ks.iter().map(move |&k| (i, k)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(i, k)| {
            let h = h_grid[i];
            let t = tol * h.min(1.0);
            let j = moment_j(spec, h, k, a, b, t)?.value;
            let s = sup_moment_s(spec, h, k, a, b, t)?.value;
            Ok((j, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let jm = |i: usize, k: u32| values[i * j_max as usize + (k - 1) as usize].0;
    let sm = |i: usize, k: u32| values[i * j_max as usize + (k - 1) as usize].1;
    let n = h_grid.len();

    let finite = |name: &str, xs: Vec<f64>| -> Result<Vec<f64>> {
        if xs.iter().all(|x| x.is_finite() && *x >= 0.0) {
            Ok(xs)
        } else {
            Err(Error::Invariant(format!(
                "{name} has non-finite or negative entries"
            )))
        }
    };

    let mut bounded_ratio = Vec::new();
    for &k in &ks {
        let trend = finite(
            "bounded_ratio",
            (0..n).map(|i| sm(i, k) / jm(i, k)).collect(),
        )?;
        bounded_ratio.push(BoundedRatio {
            k,
            sup: trend.iter().cloned().fold(0.0, f64::max),
            verdict: bounded_verdict(&trend),
            trend,
        });
    }
    let mut smallo_trend = Vec::new();
    for j in 1..j_max {
        let trend = finite(
            "smallo_trend",
            (0..n)
                .map(|i| jm(i, j).powf(1.0 / j as f64) / jm(i, j + 1).powf(1.0 / (j + 1) as f64))
                .collect(),
        )?;
        smallo_trend.push(SmallOTrend {
            j,
            verdict: small_o_verdict(&trend),
            trend,
        });
    }
    let st_sup_trend = finite("st_sup_trend", (0..n).map(|i| sm(i, 1)).collect())?;
    let st_ratio_trend = finite(
        "st_ratio_trend",
        (0..n).map(|i| jm(i, 2) / jm(i, 1)).collect(),
    )?;
    let ccl_ratio_trend = finite(
        "ccl_ratio_trend",
        (0..n).map(|i| jm(i, 2 * k0 + 2) / jm(i, 2 * k0)).collect(),
    )?;

    let mut verdicts = BTreeMap::new();
    verdicts.insert(
        "bounded_ratio".to_string(),
        Verdict::combine(bounded_ratio.iter().map(|b| b.verdict)),
    );
    verdicts.insert(
        "smallo_trend".to_string(),
        Verdict::combine(smallo_trend.iter().map(|t| t.verdict)),
    );
    verdicts.insert("st_sup_trend".to_string(), small_o_verdict(&st_sup_trend));
    verdicts.insert(
        "st_ratio_trend".to_string(),
        liminf_positive_verdict(&st_ratio_trend),
    );
    verdicts.insert(
        "ccl_ratio_trend".to_string(),
        liminf_positive_verdict(&ccl_ratio_trend),
    );

    Ok(ConditionReport {
        h_grid: h_grid.to_vec(),
        bounded_ratio,
        smallo_trend,
        st_sup_trend,
        st_ratio_trend,
        ccl_ratio_trend,
        verdicts,
    })
}
