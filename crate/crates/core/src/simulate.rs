//! Exact sampling of stationary Gaussian increments on a uniform grid and the
//! discretized functional `I(f, h)`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::num;
use crate::hermite::FunctionSpec;
use crate::kernel;
use crate::sigma::IncrementVarianceSpec;

/// Negative circulant eigenvalues down to this fraction of the largest one
/// are clipped to zero.
pub const CLIP_THRESHOLD: f64 = 1e-8;
/// Diagonal jitter for the dense factorization, relative to `γ(0)`.
pub const JITTER: f64 = 1e-12;

const ALIGN_TOL: f64 = 1e-9;

/// Uniform grid of step `δ = h / n_per_h` covering `[a, b + h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub n_per_h: usize,
}

fn nearest_integer(x: f64, what: &str) -> Result<usize> {
    let n = x.round();
    if n < 1.0 || (x - n).abs() > ALIGN_TOL * n.max(1.0) {
        return Err(Error::Alignment(format!(
            "{what} = {x} is not a positive integer"
        )));
    }
    Ok(n as usize)
}

impl GridSpec {
    pub fn new(a: f64, b: f64, h: f64, n_per_h: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::domain(format!(
                "interval [{a}, {b}] must satisfy a < b"
            )));
        }
        if !(h > 0.0 && h.is_finite()) || n_per_h == 0 {
            return Err(Error::domain(format!(
                "need h > 0 and n_per_h >= 1 (h={h}, n_per_h={n_per_h})"
            )));
        }
        let g = GridSpec { a, b, h, n_per_h };
        let cells = g.cells()?;
        if cells < 16 {
            return Err(Error::domain(format!(
                "(b-a)/delta = {cells} must be at least 16"
            )));
        }
        Ok(g)
    }

    pub fn delta(&self) -> f64 {
        self.h / self.n_per_h as f64
    }

    /// Grid points in `[a, b)`, i.e. `(b - a) / δ`.
    pub fn cells(&self) -> Result<usize> {
        nearest_integer((self.b - self.a) / self.delta(), "(b-a)/delta")
    }

    /// Increments needed to reach `b + h`.
    pub fn n_steps(&self) -> Result<usize> {
        Ok(self.cells()? + self.n_per_h)
    }
}

/// `γ(j) = φ_δ(j δ)` for `j = 0..=max_lag`.
pub fn increment_autocov(
    spec: &IncrementVarianceSpec,
    delta: f64,
    max_lag: usize,
) -> Result<Vec<f64>> {
    kernel::phi(spec, delta, delta * max_lag as f64)?;
    (0..=max_lag)
        .map(|j| kernel::phi(spec, delta, delta * j as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum SampleMethod {
    /// FFT of a circulant embedding; `clipped` negative eigenvalues (all at
    /// least `-CLIP_THRESHOLD` times the largest) were set to zero.
    CirculantEmbedding {
        size: usize,
        clipped: usize,
        min_ratio: f64,
    },
    Levinson,
    DenseFactorization {
        jitter: f64,
    },
}

/// Which sampler to use; `Auto` tries them in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Auto,
    Circulant,
    Levinson,
    Dense,
}

/// `n_paths` rows of `n_steps` increments each, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub n_paths: usize,
    pub n_steps: usize,
    pub delta: f64,
    pub seed: u64,
    pub method: SampleMethod,
    pub increments: Vec<f64>,
}

impl PathBundle {
    pub fn path(&self, i: usize) -> &[f64] {
        &self.increments[i * self.n_steps..(i + 1) * self.n_steps]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.increments.chunks_exact(self.n_steps)
    }

    /// Sums blocks of `factor` consecutive increments: the same paths seen on
    /// a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<PathBundle> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::Alignment(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps
            )));
        }
        let n_steps = self.n_steps / factor;
        let increments = self
            .increments
            .chunks_exact(factor)
            .map(|c| c.iter().sum())
            .collect();
        Ok(PathBundle {
            n_paths: self.n_paths,
            n_steps,
            delta: self.delta * factor as f64,
            seed: self.seed,
            method: self.method,
            increments,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "path_id,step,increment")?;
        for (i, row) in self.paths().enumerate() {
            for (j, x) in row.iter().enumerate() {
                writeln!(w, "{i},{j},{}", num(*x))?;
            }
        }
        Ok(())
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// First row of the circulant embedding of size `m` and its eigenvalues.
/// Lags past the validity window of `spec` are left at zero.
pub fn embedding_spectrum(
    spec: &IncrementVarianceSpec,
    delta: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    let m = (2 * n_steps).next_power_of_two();
    let half = m / 2;
    let reach_lags = ((spec.reach() / delta).floor() as usize)
        .saturating_sub(1)
        .min(half);
    if reach_lags + 1 < n_steps {
        return Err(Error::domain(format!(
            "{n_steps} steps of size {delta} exceed the validity window of {spec}"
        )));
    }
    let gamma = increment_autocov(spec, delta, reach_lags)?;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = j.min(m - j);
            Complex::new(gamma.get(lag).copied().unwrap_or(0.0), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    Ok(row.into_iter().map(|z| z.re).collect())
}

fn sample_circulant(
    eig: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Option<(Vec<f64>, SampleMethod)> {
    let m = eig.len();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min < -CLIP_THRESHOLD * max {
        return None;
    }
    let clipped = eig.iter().filter(|&&l| l < 0.0).count();
    let scale: Vec<f64> = eig
        .iter()
        .map(|&l| (l.max(0.0) / m as f64).sqrt())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut out = vec![0.0; n_paths * n_steps];
    out.par_chunks_mut(n_steps)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = path_rng(seed, i);
            let mut buf: Vec<Complex<f64>> = scale
                .iter()
                .map(|s| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex::new(s * re, s * im)
                })
                .collect();
            fft.process(&mut buf);
            for (x, z) in row.iter_mut().zip(&buf) {
                *x = z.re;
            }
        });
    Some((
        out,
        SampleMethod::CirculantEmbedding {
            size: m,
            clipped,
            min_ratio: min / max,
        },
    ))
}

/// Durbin recursion for the innovations form
/// `X_t = Σ_{j=1..t} φ_{t,j} X_{t-j} + √v_t ε_t`, which is `X = L ε` with `L`
/// the Cholesky factor of the Toeplitz covariance. Returns the coefficient
/// rows (row `t` holds `φ_{t,1..t}`) and the innovation variances, or `None`
/// when the covariance is not positive definite.
fn durbin(gamma: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = gamma.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    if !(gamma[0] > 0.0) {
        return None;
    }
    rows.push(Vec::new());
    v.push(gamma[0]);
    for t in 1..n {
        let prev = &rows[t - 1];
        let mut acc = gamma[t];
        for (j, p) in prev.iter().enumerate() {
            acc -= p * gamma[t - 1 - j];
        }
        let kappa = acc / v[t - 1];
        let mut row = Vec::with_capacity(t);
        for j in 0..t - 1 {
            row.push(prev[j] - kappa * prev[t - 2 - j]);
        }
        row.push(kappa);
        let vt = v[t - 1] * (1.0 - kappa * kappa);
        if !(vt > 0.0) || !vt.is_finite() {
            return None;
        }
        rows.push(row);
        v.push(vt);
    }
    Some((rows, v))
}

fn sample_levinson(gamma: &[f64], n_paths: usize, seed: u64) -> Option<Vec<f64>> {
    let n = gamma.len();
    let (rows, v) = durbin(gamma)?;
    let sd: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
    let mut out = vec![0.0; n_paths * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, x)| {
        let eps = normals(&mut path_rng(seed, i), n);
        for t in 0..n {
            let mut acc = sd[t] * eps[t];
            for (j, p) in rows[t].iter().enumerate() {
                acc += p * x[t - 1 - j];
            }
            x[t] = acc;
        }
    });
    Some(out)
}

fn sample_dense(gamma: &[f64], n_paths: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    let n = gamma.len();
    let jitter = JITTER * gamma[0];
    let cov = DMatrix::from_fn(n, n, |i, j| {
        gamma[i.abs_diff(j)] + if i == j { jitter } else { 0.0 }
    });
    let chol = cov.cholesky().ok_or_else(|| {
        Error::CovarianceInvalid(format!(
            "increment covariance of size {n} is not positive definite even with jitter {jitter:e}"
        ))
    })?;
    let l = chol.l();
    let mut out = vec![0.0; n_paths * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let z = DVector::from_vec(normals(&mut path_rng(seed, i), n));
        let x = &l * z;
        row.copy_from_slice(x.as_slice());
    });
    Ok((out, jitter))
}

/// Draws `n_paths` independent increment sequences with autocovariance
/// [`increment_autocov`] on `grid`. Path `i` uses its own random stream
/// derived from `(seed, i)`, so output does not depend on worker count.
pub fn sample_paths(
    spec: &IncrementVarianceSpec,
    grid: &GridSpec,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    sample_paths_with(spec, grid, n_paths, seed, MethodChoice::Auto)
}

/// [`sample_paths`] with the sampler pinned. A pinned method that is not
/// applicable is an error rather than a fallback.
pub fn sample_paths_with(
    spec: &IncrementVarianceSpec,
    grid: &GridSpec,
    n_paths: usize,
    seed: u64,
    choice: MethodChoice,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::domain("n_paths must be at least 1"));
    }
    let n = grid.n_steps()?;
    let delta = grid.delta();
    let bundle = |increments, method| PathBundle {
        n_paths,
        n_steps: n,
        delta,
        seed,
        method,
        increments,
    };

    if matches!(choice, MethodChoice::Auto | MethodChoice::Circulant) {
        let eig = embedding_spectrum(spec, delta, n)?;
        if let Some((inc, method)) = sample_circulant(&eig, n, n_paths, seed) {
            return Ok(bundle(inc, method));
        }
        if choice == MethodChoice::Circulant {
            return Err(Error::CovarianceInvalid(
                "circulant embedding has eigenvalues below the clipping threshold".into(),
            ));
        }
    }
    let gamma = increment_autocov(spec, delta, n - 1)?;
    if matches!(choice, MethodChoice::Auto | MethodChoice::Levinson) {
        if let Some(inc) = sample_levinson(&gamma, n_paths, seed) {
            return Ok(bundle(inc, SampleMethod::Levinson));
        }
        if choice == MethodChoice::Levinson {
            return Err(Error::CovarianceInvalid(
                "Levinson recursion met a nonpositive innovation variance".into(),
            ));
        }
    }
    let (inc, jitter) = sample_dense(&gamma, n_paths, seed)?;
    Ok(bundle(inc, SampleMethod::DenseFactorization { jitter }))
}

/// `δ Σ_{x_i ∈ [a, b)} f((G(x_i + h) - G(x_i)) / σ(h))` for each path.
pub fn functional_i(
    bundle: &PathBundle,
    f: &FunctionSpec,
    spec: &IncrementVarianceSpec,
    grid: &GridSpec,
    h: f64,
) -> Result<Vec<f64>> {
    let delta = bundle.delta;
    let q = nearest_integer(h / delta, "h/delta")?;
    let cells = nearest_integer((grid.b - grid.a) / delta, "(b-a)/delta")?;
    if cells + q > bundle.n_steps {
        return Err(Error::Alignment(format!(
            "paths of {} steps do not cover [a, b+h] ({} needed)",
            bundle.n_steps,
            cells + q
        )));
    }
    let sigma = if spec.is_power() {
        spec.sigma2_raw(h)
    } else {
        spec.eval_sigma2(h)?
    }
    .sqrt();
    let out = bundle
        .increments
        .par_chunks_exact(bundle.n_steps)
        .map(|row| {
            let mut window: f64 = row[..q].iter().sum();
            let mut acc = 0.0;
            for i in 0..cells {
                acc += f.eval(window / sigma);
                if i + 1 < cells {
                    window += row[i + q] - row[i];
                }
            }
            delta * acc
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pow(r: f64) -> IncrementVarianceSpec {
        IncrementVarianceSpec::power(r).unwrap()
    }

    #[test]
    fn autocov_examples() {
        let g = increment_autocov(&pow(1.0), 0.01, 5).unwrap();
        assert_eq!(g[0], 0.01);
        assert!(g[1..].iter().all(|x| *x == 0.0));
        let g = increment_autocov(&pow(2.0), 0.01, 5).unwrap();
        assert!(g.iter().all(|x| (x - 1e-4).abs() < 1e-18));
        let g = increment_autocov(&pow(1.5), 1.0, 3).unwrap();
        assert!((g[1] - 0.41421356237309515).abs() < 1e-15);
        let el = IncrementVarianceSpec::exp_log(0.5).unwrap();
        assert!(increment_autocov(&el, 0.01, 100).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 1.0, 1.0 / 64.0, 8).is_ok());
        assert!(GridSpec::new(0.0, 1.0, 0.3, 1).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.25, 2).is_err());
        let g = GridSpec::new(0.0, 1.0, 0.125, 4).unwrap();
        assert_eq!(g.cells().unwrap(), 32);
        assert_eq!(g.n_steps().unwrap(), 36);
    }

    #[test]
    fn deterministic_bundles() {
        let g = GridSpec::new(0.0, 1.0, 1.0 / 32.0, 4).unwrap();
        let x = sample_paths(&pow(0.7), &g, 20, 9).unwrap();
        let y = sample_paths(&pow(0.7), &g, 20, 9).unwrap();
        assert_eq!(x, y);
        let z = sample_paths(&pow(0.7), &g, 20, 10).unwrap();
        assert_ne!(x.increments, z.increments);
        assert!(matches!(x.method, SampleMethod::CirculantEmbedding { .. }));
    }

    #[test]
    fn degenerate_paths_are_constant() {
        let g = GridSpec::new(0.0, 1.0, 1.0 / 16.0, 4).unwrap();
        let b = sample_paths(&pow(2.0), &g, 5, 3).unwrap();
        for row in b.paths() {
            for x in row {
                assert!((x - row[0]).abs() <= 1e-8 * row[0].abs());
            }
        }
    }

    #[test]
    fn levinson_and_dense_agree() {
        let g = GridSpec::new(0.0, 1.0, 1.0 / 8.0, 4).unwrap();
        for r in [0.4, 1.0, 1.6] {
            let l = sample_paths_with(&pow(r), &g, 4, 5, MethodChoice::Levinson).unwrap();
            let d = sample_paths_with(&pow(r), &g, 4, 5, MethodChoice::Dense).unwrap();
            for (x, y) in l.increments.iter().zip(&d.increments) {
                assert!(
                    (x - y).abs() < 1e-8 * l.delta.powf(r / 2.0),
                    "r={r}: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn levinson_rejects_singular_covariance() {
        // σ² = h² gives a rank-one covariance
        let g = GridSpec::new(0.0, 1.0, 1.0 / 8.0, 4).unwrap();
        let e = sample_paths_with(&pow(2.0), &g, 2, 1, MethodChoice::Levinson).unwrap_err();
        assert_eq!(e.category(), "covariance-invalid");
    }

    #[test]
    fn coarsen_sums_blocks() {
        let g = GridSpec::new(0.0, 1.0, 1.0 / 16.0, 4).unwrap();
        let b = sample_paths(&pow(0.5), &g, 3, 1).unwrap();
        let c = b.coarsen(2).unwrap();
        assert_eq!(c.n_steps * 2, b.n_steps);
        assert!((c.path(1)[3] - (b.path(1)[6] + b.path(1)[7])).abs() < 1e-15);
        assert!(b.coarsen(7).is_err());
    }

    #[test]
    fn constant_functional() {
        let g = GridSpec::new(0.5, 2.0, 0.0625, 4).unwrap();
        let b = sample_paths(&pow(0.9), &g, 10, 2).unwrap();
        let v = functional_i(&b, &FunctionSpec::Indicator, &pow(0.9), &g, 0.0625).unwrap();
        assert!(v.iter().all(|x| (x - 1.5).abs() < 1e-12));
    }

    #[test]
    fn degenerate_functional_is_chi_square() {
        let g = GridSpec::new(0.0, 1.0, 1.0 / 64.0, 8).unwrap();
        let b = sample_paths(&pow(2.0), &g, 6, 11).unwrap();
        let f = FunctionSpec::EvenPoly {
            coeffs: vec![0.0, 1.0],
        };
        let v = functional_i(&b, &f, &pow(2.0), &g, g.h).unwrap();
        for (row, i) in b.paths().zip(&v) {
            let xi = row[0] / b.delta;
            assert!((i - xi * xi).abs() < 1e-8 * (xi * xi).max(1.0));
        }
    }

    #[test]
    fn misaligned_lag_is_rejected() {
        let g = GridSpec::new(0.0, 1.0, 1.0 / 16.0, 4).unwrap();
        let b = sample_paths(&pow(1.0), &g, 2, 2).unwrap();
        let e =
            functional_i(&b, &FunctionSpec::Indicator, &pow(1.0), &g, 1.5 * b.delta).unwrap_err();
        assert_eq!(e.category(), "alignment");
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::new(0.0, 1.0, 1.0 / 16.0, 1).unwrap();
        let b = sample_paths(&pow(1.0), &g, 2, 2).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,step,increment\n"));
        assert_eq!(text.lines().count(), 1 + 2 * b.n_steps);
    }
}
