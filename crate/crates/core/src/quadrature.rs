//! Composite Gauss–Legendre quadrature with level-synchronous adaptive
//! refinement of vector-valued integrands.

use crate::error::{Error, Result};

/// Panels evaluated per call of the integrand, bounding memory use.
const PANELS_PER_BATCH: usize = 32;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are found by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Result of an adaptive integration: the accepted quadrature nodes with
/// weights, and the accumulated error estimate.
#[derive(Debug, Clone)]
pub struct AdaptiveRule {
    pub nodes: Vec<(f64, f64)>,
    pub error_estimate: f64,
    pub panels: usize,
}

/// Builds a composite rule on `[a, b]` for a vector-valued integrand.
///
/// `eval` receives a batch of abscissae and returns one vector per abscissa,
/// so callers can prepare expensive per-abscissa data in parallel. A panel
/// is accepted when its one-panel and two-half-panel estimates differ by at
/// most `tol · len/(b - a)` in max norm.
pub fn adaptive_rule<F>(
    a: f64,
    b: f64,
    initial_panels: &[f64],
    tol: f64,
    max_rounds: usize,
    mut eval: F,
) -> Result<AdaptiveRule>
where
    F: FnMut(&[f64]) -> Result<Vec<Vec<f64>>>,
{
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput(format!("bad interval [{a}, {b}]")));
    }
    let gl = GaussLegendre::new(8);
    let total = b - a;
    let mut breaks: Vec<f64> = vec![a];
    breaks.extend(initial_panels.iter().copied().filter(|&x| x > a && x < b));
    breaks.push(b);
    let mut pending: Vec<(f64, f64)> = breaks.windows(2).map(|w| (w[0], w[1])).collect();
    let mut accepted: Vec<(f64, f64)> = Vec::new();
    let mut err_sum = 0.0;
    for round in 0..max_rounds {
        if pending.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for chunk in pending.chunks(PANELS_PER_BATCH) {
            // For each pending panel, the whole panel and its two halves.
            let mut xs = Vec::with_capacity(chunk.len() * 24);
            for &(l, r) in chunk {
                let m = 0.5 * (l + r);
                xs.extend(gl.mapped(l, r).map(|p| p.0));
                xs.extend(gl.mapped(l, m).map(|p| p.0));
                xs.extend(gl.mapped(m, r).map(|p| p.0));
            }
            let vals = eval(&xs)?;
            for (k, &(l, r)) in chunk.iter().enumerate() {
                let m = 0.5 * (l + r);
                let base = k * 24;
                let dim = vals[base].len();
                let mut coarse = vec![0.0; dim];
                let mut fine = vec![0.0; dim];
                for (j, (_, w)) in gl.mapped(l, r).enumerate() {
                    for (c, v) in coarse.iter_mut().zip(&vals[base + j]) {
                        *c += w * v;
                    }
                }
                for (j, (_, w)) in gl.mapped(l, m).chain(gl.mapped(m, r)).enumerate() {
                    for (c, v) in fine.iter_mut().zip(&vals[base + 8 + j]) {
                        *c += w * v;
                    }
                }
                let diff = coarse
                    .iter()
                    .zip(&fine)
                    .fold(0.0f64, |acc, (c, f)| acc.max((c - f).abs()));
                let last_round = round + 1 == max_rounds;
                if diff <= tol * (r - l) / total || last_round {
                    if last_round && diff > tol * (r - l) / total {
                        return Err(Error::Accuracy(format!(
                            "quadrature on [{l}, {r}] did not reach {tol:e} (difference {diff:e})"
                        )));
                    }
                    accepted.push((l, m));
                    accepted.push((m, r));
                    err_sum += diff;
                } else {
                    next.push((l, m));
                    next.push((m, r));
                }
            }
        }
        pending = next;
    }
    if !pending.is_empty() {
        return Err(Error::Accuracy(format!(
            "quadrature left {} panels unresolved",
            pending.len()
        )));
    }
    accepted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let nodes = accepted
        .iter()
        .flat_map(|&(l, r)| gl.mapped(l, r).collect::<Vec<_>>())
        .collect();
    Ok(AdaptiveRule {
        nodes,
        error_estimate: err_sum,
        panels: accepted.len(),
    })
}
