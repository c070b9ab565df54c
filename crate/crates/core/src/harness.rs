//! Monte Carlo check of asymptotic normality of
//! `(I(f, h) - (b-a) E f(η)) / √Var I(f, h)`.

use std::io::{self, Write};

use libm::erfc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::num;
use crate::hermite::{coefficients, expectation_f, FunctionSpec};
use crate::kernel;
use crate::sigma::IncrementVarianceSpec;
use crate::simulate::{functional_i, sample_paths, GridSpec, PathBundle, SampleMethod};
use crate::variance::{asymptotic_variance, exact_variance, VarianceReport};

pub const MIN_PATHS: usize = 100;
/// Significance level for `--expect` verdicts.
pub const ALPHA: f64 = 0.01;
pub const HIST_BINS: usize = 64;
pub const HIST_RANGE: f64 = 5.0;

/// Sum by a fixed binary tree over blocks of 16, so the result depends only
/// on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

fn central_moment(xs: &[f64], m: f64, p: i32) -> f64 {
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).powi(p)).collect();
    mean(&dev)
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    central_moment(xs, mean(xs), 2) * n / (n - 1.0)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub excess_kurtosis_se: f64,
}

impl MomentSummary {
    pub fn of(xs: &[f64]) -> MomentSummary {
        let n = xs.len() as f64;
        let m = mean(xs);
        let m2 = central_moment(xs, m, 2);
        let m3 = central_moment(xs, m, 3);
        let m4 = central_moment(xs, m, 4);
        let variance = m2 * n / (n - 1.0);
        MomentSummary {
            mean: m,
            mean_se: (variance / n).sqrt(),
            variance,
            variance_se: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
            skewness: m3 / m2.powf(1.5),
            skewness_se: (6.0 / n).sqrt(),
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
            excess_kurtosis_se: (24.0 / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    #[serde(rename = "D")]
    pub d: f64,
    pub p_value: f64,
}

/// `P(K > λ)` for the limiting Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // P(K ≤ λ) = √(2π)/λ Σ_{j≥1} exp(-(2j-1)² π² / (8λ²))
        let mut cdf = 0.0;
        for j in 1..=100 {
            let odd = (2 * j - 1) as f64;
            let term = (-odd * odd * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if term < 1e-12 {
                break;
            }
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        // P(K > λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)
        let mut sum = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            sum += if j % 2 == 1 { term } else { -term };
            if term < 1e-12 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov-Smirnov test against the standard normal, with
/// the asymptotic p-value at `√n D`.
pub fn ks_test(samples: &[f64]) -> Result<KsResult> {
    if samples.len() < 8 {
        return Err(Error::domain(format!(
            "KS test needs at least 8 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("KS test samples must be finite"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        d,
        p_value: kolmogorov_survival(n.sqrt() * d),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub empirical: f64,
    pub formula: f64,
    pub ratio: f64,
}

/// Inputs of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltParams {
    pub f: FunctionSpec,
    pub sigma: IncrementVarianceSpec,
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub n_per_h: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub expansion_len: usize,
}

impl CltParams {
    pub fn new(f: FunctionSpec, sigma: IncrementVarianceSpec, h: f64, seed: u64) -> Self {
        CltParams {
            f,
            sigma,
            a: 0.0,
            b: 1.0,
            h,
            n_per_h: 8,
            n_paths: 4000,
            seed,
            tol: crate::variance::DEFAULT_TOL,
            expansion_len: crate::hermite::DEFAULT_EXPANSION,
        }
    }
}

/// Echo of the inputs in their text grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub f: String,
    pub sigma: String,
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub n_per_h: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub expansion_len: usize,
}

impl From<&CltParams> for ConfigEcho {
    fn from(p: &CltParams) -> Self {
        ConfigEcho {
            f: p.f.to_string(),
            sigma: p.sigma.to_string(),
            a: p.a,
            b: p.b,
            h: p.h,
            n_per_h: p.n_per_h,
            n_paths: p.n_paths,
            seed: p.seed,
            tol: p.tol,
            expansion_len: p.expansion_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Normal,
    Nonnormal,
}

impl Expectation {
    /// Whether the KS p-value agrees with the expectation at level
    /// [`ALPHA`].
    pub fn met_by(&self, ks: &KsResult) -> bool {
        match self {
            Expectation::Normal => ks.p_value > ALPHA,
            Expectation::Nonnormal => ks.p_value < ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub config: ConfigEcho,
    /// `(b-a) E f(η)`.
    pub centering: f64,
    pub variance: VarianceReport,
    pub method: SampleMethod,
    pub moments: MomentSummary,
    pub ks: KsResult,
    pub variance_check: VarianceCheck,
    pub expect: Option<Expectation>,
    pub passed: Option<bool>,
    pub z: Vec<f64>,
}

impl CltReport {
    /// Records the verdict for `expect`.
    pub fn judge(&mut self, expect: Expectation) -> bool {
        let ok = expect.met_by(&self.ks);
        self.expect = Some(expect);
        self.passed = Some(ok);
        ok
    }

    pub fn write_z_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path_id,z")?;
        for (i, z) in self.z.iter().enumerate() {
            writeln!(w, "{i},{}", num(*z))?;
        }
        Ok(())
    }
}

/// Everything an experiment produces before standardization.
struct Draw {
    variance: VarianceReport,
    bundle: PathBundle,
    grid: GridSpec,
}

fn draw(p: &CltParams, n_per_h: usize) -> Result<Draw> {
    if p.n_paths < MIN_PATHS {
        return Err(Error::domain(format!(
            "n_paths={} is below the minimum of {MIN_PATHS}",
            p.n_paths
        )));
    }
    let fexp = coefficients(&p.f, p.expansion_len, crate::hermite::DEFAULT_TOL)?;
    let variance = exact_variance(&fexp, &p.sigma, p.a, p.b, p.h, p.tol)?;
    let grid = GridSpec::new(p.a, p.b, p.h, n_per_h)?;
    let bundle = sample_paths(&p.sigma, &grid, p.n_paths, p.seed)?;
    Ok(Draw {
        variance,
        bundle,
        grid,
    })
}

fn standardize(p: &CltParams, var: f64, values: &[f64]) -> Vec<f64> {
    let centering = (p.b - p.a) * expectation_f(&p.f);
    let sd = var.sqrt();
    values.iter().map(|i| (i - centering) / sd).collect()
}

fn report(p: &CltParams, d: Draw, values: Vec<f64>) -> Result<CltReport> {
    let var = d.variance.exact;
    let z = standardize(p, var, &values);
    let empirical = sample_variance(&values);
    Ok(CltReport {
        config: p.into(),
        centering: (p.b - p.a) * expectation_f(&p.f),
        method: d.bundle.method,
        moments: MomentSummary::of(&z),
        ks: ks_test(&z)?,
        variance_check: VarianceCheck {
            empirical,
            formula: var,
            ratio: empirical / var,
        },
        variance: d.variance,
        expect: None,
        passed: None,
        z,
    })
}

/// Samples `I(f, h)` on `n_paths` exact paths and standardizes it by the
/// series variance and the closed-form mean.
pub fn run_clt_experiment(p: &CltParams) -> Result<CltReport> {
    let d = draw(p, p.n_per_h)?;
    let values = functional_i(&d.bundle, &p.f, &p.sigma, &d.grid, p.h)?;
    report(p, d, values)
}

/// Raw `I(f, h)` values of an experiment, before standardization.
pub fn functional_sample(p: &CltParams) -> Result<Vec<f64>> {
    let d = draw(p, p.n_per_h)?;
    functional_i(&d.bundle, &p.f, &p.sigma, &d.grid, p.h)
}

/// The same experiment at `n_per_h` and `2 n_per_h` on coupled paths: the
/// coarse paths are the fine ones with increments summed in pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: MomentSummary,
    pub fine: MomentSummary,
}

pub fn run_refinement(p: &CltParams) -> Result<RefinementReport> {
    let fine = draw(p, 2 * p.n_per_h)?;
    let coarse_bundle = fine.bundle.coarsen(2)?;
    let coarse_grid = GridSpec::new(p.a, p.b, p.h, p.n_per_h)?;
    let fine_i = functional_i(&fine.bundle, &p.f, &p.sigma, &fine.grid, p.h)?;
    let coarse_i = functional_i(&coarse_bundle, &p.f, &p.sigma, &coarse_grid, p.h)?;
    let var = fine.variance.exact;
    Ok(RefinementReport {
        coarse: MomentSummary::of(&standardize(p, var, &coarse_i)),
        fine: MomentSummary::of(&standardize(p, var, &fine_i)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
    pub normal_density: f64,
}

/// Counts of `z` in 64 equal bins over `[-5, 5]`, with the standard normal
/// density at each bin center.
pub fn histogram(z: &[f64]) -> Vec<HistBin> {
    let width = 2.0 * HIST_RANGE / HIST_BINS as f64;
    let mut bins: Vec<HistBin> = (0..HIST_BINS)
        .map(|i| {
            let left = -HIST_RANGE + i as f64 * width;
            HistBin {
                bin_left: left,
                bin_right: left + width,
                count: 0,
                normal_density: normal_pdf(left + 0.5 * width),
            }
        })
        .collect();
    for &x in z {
        if (-HIST_RANGE..=HIST_RANGE).contains(&x) {
            let i = (((x + HIST_RANGE) / width) as usize).min(HIST_BINS - 1);
            bins[i].count += 1;
        }
    }
    bins
}

pub fn write_histogram_csv<W: Write>(bins: &[HistBin], mut w: W) -> io::Result<()> {
    writeln!(w, "bin_left,bin_right,count,normal_density")?;
    for b in bins {
        writeln!(
            w,
            "{},{},{},{}",
            num(b.bin_left),
            num(b.bin_right),
            b.count,
            num(b.normal_density)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub h: f64,
    /// `J_2, J_4, J_6, J_8` at `h`.
    pub j: [f64; 4],
    pub exact: f64,
    pub asymptotic: Option<f64>,
    pub ratio: Option<f64>,
}

/// Exact and leading-order variance along `h_grid`, with the kernel moments
/// `J_2..J_8` that drive them.
pub fn variance_convergence_study(
    f: &FunctionSpec,
    spec: &IncrementVarianceSpec,
    a: f64,
    b: f64,
    h_grid: &[f64],
    tol: f64,
) -> Result<Vec<StudyRow>> {
    let fexp = coefficients(
        f,
        crate::hermite::DEFAULT_EXPANSION,
        crate::hermite::DEFAULT_TOL,
    )?;
    let asym = asymptotic_variance(&fexp, spec, a, b).ok();
    h_grid
        .par_iter()
        .map(|&h| {
            let rep = exact_variance(&fexp, spec, a, b, h, tol)?;
            let mut j = [0.0; 4];
            for (i, slot) in j.iter_mut().enumerate() {
                let m = i + 1;
                *slot = match rep.j(m) {
                    Some(v) => v,
                    None => {
                        let qtol = (tol * h.min(1.0) * (b - a).min(1.0)).max(1e-300);
                        kernel::moment_j(spec, h, 2 * m as u32, a, b, qtol)?.value
                    }
                };
            }
            let asymptotic = match &asym {
                Some(av) => Some(av.eval(h)?),
                None => None,
            };
            Ok(StudyRow {
                h,
                j,
                exact: rep.exact,
                asymptotic,
                ratio: asymptotic.map(|p| rep.exact / p),
            })
        })
        .collect()
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], mut w: W) -> io::Result<()> {
    writeln!(w, "h,J2,J4,J6,J8,exact,asymptotic,ratio")?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            num(r.h),
            num(r.j[0]),
            num(r.j[1]),
            num(r.j[2]),
            num(r.j[3]),
            num(r.exact),
            opt(r.asymptotic),
            opt(r.ratio)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn perfect_normal_scores() {
        let n = 1000;
        let xs: Vec<f64> = (1..=n)
            .map(|i| normal_quantile((i as f64 - 0.5) / n as f64))
            .collect();
        let ks = ks_test(&xs).unwrap();
        assert!(ks.d <= 0.5 / n as f64 + 1e-9);
        assert!(ks.p_value > 0.999);
    }

    #[test]
    fn uniform_scores_are_rejected() {
        let n = 1000;
        let xs: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        assert!(ks_test(&xs).unwrap().p_value < 1e-10);
    }

    #[test]
    fn ks_preconditions() {
        assert!(ks_test(&[0.0; 5]).is_err());
        let mut xs = vec![0.1; 10];
        xs[3] = f64::NAN;
        assert!(ks_test(&xs).is_err());
    }

    #[test]
    fn kolmogorov_series_branches_meet() {
        // both series are valid near λ = 1
        let lo = kolmogorov_survival(1.0 - 1e-12);
        let hi = kolmogorov_survival(1.0);
        assert!((lo - hi).abs() < 1e-10);
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 5e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn normal_cdf_accuracy() {
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-15);
        assert!((normal_cdf(-3.0) - 0.0013498980316301).abs() < 1e-13);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn histogram_layout() {
        let bins = histogram(&[-5.0, 0.0, 0.01, 5.0, 7.0]);
        assert_eq!(bins.len(), 64);
        assert_eq!(bins[0].bin_left, -5.0);
        assert!((bins[63].bin_right - 5.0).abs() < 1e-12);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(bins[32].count, 2);
    }

    #[test]
    fn too_few_paths() {
        let mut p = CltParams::new(
            FunctionSpec::EvenPoly {
                coeffs: vec![0.0, 1.0],
            },
            IncrementVarianceSpec::power(1.0).unwrap(),
            1.0 / 64.0,
            1,
        );
        p.n_paths = 99;
        assert!(run_clt_experiment(&p).is_err());
    }

    #[test]
    fn small_brownian_experiment() {
        let mut p = CltParams::new(
            FunctionSpec::EvenPoly {
                coeffs: vec![0.0, 1.0],
            },
            IncrementVarianceSpec::power(1.0).unwrap(),
            1.0 / 32.0,
            3,
        );
        p.n_paths = 400;
        let rep = run_clt_experiment(&p).unwrap();
        assert_eq!(rep.z.len(), 400);
        assert!(rep.moments.mean.abs() < 0.25);
        assert!((0.0..=1.0).contains(&rep.ks.p_value));
        let raw = functional_sample(&p).unwrap();
        let want = (mean(&raw) - rep.centering) / rep.variance.exact.sqrt();
        assert!((rep.moments.mean - want).abs() < 1e-12);
    }
}
