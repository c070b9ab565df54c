//! Adaptive quadrature for piecewise-smooth integrands.
//!
//! Every integrand in this crate has known kink locations (the lag `h`,
//! sign changes of a kernel, the origin for `|x|^p`). Callers pass those as
//! breakpoints; the integrator then bisects panels globally, always splitting
//! the panel with the largest error estimate, until the summed estimate falls
//! below an absolute target.
//!
//! A panel's error estimate is the difference between the Gauss-Legendre rule
//! over the whole panel and the sum of the same rule over its two halves. The
//! returned value is the (more accurate) sum over halves, so the estimate is
//! conservative.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Points per panel for the Gauss-Legendre rule (exact for degree 23).
const GL_POINTS: usize = 12;

/// Integral estimate with its absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

impl Integral {
    pub const ZERO: Integral = Integral {
        value: 0.0,
        error: 0.0,
    };
}

impl std::ops::Add for Integral {
    type Output = Integral;
    fn add(self, rhs: Integral) -> Integral {
        Integral {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
        }
    }
}

/// Global adaptive bisection with an absolute error target and a panel budget.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub tol: f64,
    pub max_panels: usize,
}

impl Default for Adaptive {
    fn default() -> Self {
        Adaptive {
            tol: 1e-10,
            max_panels: 100_000,
        }
    }
}

fn gauss_legendre() -> &'static ([f64; GL_POINTS], [f64; GL_POINTS]) {
    static RULE: OnceLock<([f64; GL_POINTS], [f64; GL_POINTS])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut nodes = [0.0; GL_POINTS];
        let mut weights = [0.0; GL_POINTS];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                // Legendre recurrence for P_n(x) and P_{n-1}(x)
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        sum += w * f(mid + half * x);
    }
    sum * half
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    left: f64,
    right: f64,
    error: f64,
    segment: usize,
}

impl Panel {
    fn new<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, segment: usize) -> Panel {
        let m = 0.5 * (a + b);
        let left = gl_panel(f, a, m);
        let right = gl_panel(f, m, b);
        let error = (whole - (left + right)).abs();
        Panel {
            a,
            b,
            left,
            right,
            error: if error.is_nan() { f64::INFINITY } else { error },
            segment,
        }
    }

    fn splittable(&self) -> bool {
        let scale = self.a.abs().max(self.b.abs()).max(f64::MIN_POSITIVE);
        (self.b - self.a) > 64.0 * f64::EPSILON * scale
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

impl Adaptive {
    pub fn new(tol: f64) -> Self {
        Adaptive {
            tol,
            ..Adaptive::default()
        }
    }

    /// Integrates `f` over `[breaks[0], breaks[last]]`, using every entry of
    /// `breaks` as a mandatory panel edge.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, breaks: &[f64]) -> Result<Integral> {
        let parts = self.integrate_segments(f, breaks)?;
        Ok(parts.into_iter().fold(Integral::ZERO, |acc, p| acc + p))
    }

    /// Like [`Adaptive::integrate`] but reports the integral over each
    /// initial segment `[breaks[i], breaks[i+1]]` separately. The error
    /// target applies to the sum.
    pub fn integrate_segments<F: Fn(f64) -> f64>(
        &self,
        f: F,
        breaks: &[f64],
    ) -> Result<Vec<Integral>> {
        if breaks.len() < 2 {
            return Err(Error::domain("quadrature needs at least two breakpoints"));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain(
                "quadrature breakpoints must be finite and strictly increasing",
            ));
        }
        let n_seg = breaks.len() - 1;
        let mut heap = BinaryHeap::with_capacity(2 * n_seg);
        let mut frozen: Vec<Panel> = Vec::new();
        let mut total_err = 0.0;
        for (i, w) in breaks.windows(2).enumerate() {
            let whole = gl_panel(&f, w[0], w[1]);
            let p = Panel::new(&f, w[0], w[1], whole, i);
            total_err += p.error;
            heap.push(p);
        }
        let mut panels = n_seg;

        loop {
            if total_err <= self.tol {
                // the running sum drifts; confirm before stopping
                total_err = heap.iter().chain(frozen.iter()).map(|p| p.error).sum();
                if total_err <= self.tol {
                    break;
                }
            }
            let Some(worst) = heap.pop() else { break };
            if !worst.splittable() {
                frozen.push(worst);
                continue;
            }
            if panels >= self.max_panels {
                let estimate: f64 = heap
                    .iter()
                    .chain(frozen.iter())
                    .map(|p| p.error)
                    .sum::<f64>()
                    + worst.error;
                return Err(Error::Quadrature {
                    target: self.tol,
                    estimate,
                    panels,
                });
            }
            let m = 0.5 * (worst.a + worst.b);
            let l = Panel::new(&f, worst.a, m, worst.left, worst.segment);
            let r = Panel::new(&f, m, worst.b, worst.right, worst.segment);
            total_err += l.error + r.error - worst.error;
            heap.push(l);
            heap.push(r);
            panels += 1;
        }

        let total_err: f64 = heap.iter().chain(frozen.iter()).map(|p| p.error).sum();
        if total_err > self.tol {
            return Err(Error::Quadrature {
                target: self.tol,
                estimate: total_err,
                panels,
            });
        }

        // Sum per segment in a fixed order (by panel position) so results do
        // not depend on heap layout.
        let mut all: Vec<Panel> = heap.into_vec();
        all.extend(frozen);
        all.sort_by(|p, q| p.a.total_cmp(&q.a));
        let mut out = vec![Integral::ZERO; n_seg];
        for p in &all {
            let slot = &mut out[p.segment];
            slot.value += p.left + p.right;
            slot.error += p.error;
        }
        Ok(out)
    }
}

/// Merges, sorts and deduplicates breakpoints, keeping those inside `[lo, hi]`
/// and always including both ends.
pub fn breakpoints(lo: f64, hi: f64, interior: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut pts: Vec<f64> = interior
        .into_iter()
        .filter(|x| x.is_finite() && *x > lo && *x < hi)
        .collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()));
    pts
}

/// Geometric grid `start, 2 start, 4 start, ...` strictly below `end`.
pub fn dyadic_points(start: f64, end: f64) -> impl Iterator<Item = f64> {
    std::iter::successors(Some(start), |x| Some(2.0 * x)).take_while(move |x| *x < end)
}

/// Gauss-Hermite rule for the standard Gaussian measure: `sum w_i g(x_i)`
/// approximates `E g(eta)` and is exact for polynomials of degree `< 2n`.
///
/// Nodes come from the eigenvalues of the Jacobi matrix of the orthonormal
/// Hermite recurrence, then are polished by Newton steps; weights are the
/// Christoffel numbers `1 / sum_{m<n} h_m(x_i)^2`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_hermite needs at least one node");
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    let eval_all = |x: f64| -> (f64, f64, f64) {
        // returns (h_n(x), h_{n-1}(x), sum_{m<n} h_m(x)^2)
        let mut prev = 0.0;
        let mut cur = 1.0;
        let mut sumsq = 0.0;
        for m in 0..n {
            sumsq += cur * cur;
            let next = (x * cur - (m as f64).sqrt() * prev) / ((m + 1) as f64).sqrt();
            prev = cur;
            cur = next;
        }
        (cur, prev, sumsq)
    };

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (hn, hn1, _) = eval_all(*x);
            let deriv = (n as f64).sqrt() * hn1;
            if deriv == 0.0 {
                break;
            }
            let step = hn / deriv;
            *x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, _, sumsq) = eval_all(*x);
        weights.push(1.0 / sumsq);
    }
    (nodes, weights)
}
