//! Gaussian quadrature rules and normal-distribution helpers.
//!
//! Nodes and weights are found by Newton iteration on the orthonormal
//! three-term recurrences (the same fixed points the Golub-Welsch
//! eigenproblem produces). Rules are cached per order since pricing calls
//! them millions of times along simulated paths.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{EngineError, Result};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// A quadrature rule: paired nodes and weights.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(PartialEq, Eq, Hash, Clone, Copy)]
enum Kind {
    Hermite,
    Legendre,
}

type RuleCache = Mutex<HashMap<(Kind, usize), Arc<QuadRule>>>;

fn cache() -> &'static RuleCache {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(kind: Kind, n: usize, build: fn(usize) -> Result<QuadRule>) -> Result<Arc<QuadRule>> {
    if let Some(rule) = cache().lock().unwrap().get(&(kind, n)) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(build(n)?);
    cache().lock().unwrap().insert((kind, n), rule.clone());
    Ok(rule)
}

/// Gauss-Hermite rule for the weight `exp(-x^2)` (physicists' convention,
/// weights sum to `sqrt(pi)`).
pub fn gauss_hermite(n: usize) -> Result<Arc<QuadRule>> {
    if n == 0 {
        return Err(EngineError::InvalidParameter(
            "quadrature order must be positive".into(),
        ));
    }
    cached(Kind::Hermite, n, build_hermite)
}

/// Gauss-Legendre rule on `[-1, 1]` (weights sum to 2).
pub fn gauss_legendre(n: usize) -> Result<Arc<QuadRule>> {
    if n == 0 {
        return Err(EngineError::InvalidParameter(
            "quadrature order must be positive".into(),
        ));
    }
    cached(Kind::Legendre, n, build_legendre)
}

/// Orthonormal Hermite value and the value one order down, at `x`.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    // h~_0 = pi^{-1/4}; h~_{k+1} = x sqrt(2/(k+1)) h~_k - sqrt(k/(k+1)) h~_{k-1}
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        p1 = x * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}

/// Eigenvalues of a symmetric tridiagonal matrix by the implicit QL
/// algorithm with Wilkinson shifts (no eigenvectors), ascending.
fn sym_tridiag_eigenvalues(mut d: Vec<f64>, mut e: Vec<f64>) -> Result<Vec<f64>> {
    let n = d.len();
    e.resize(n, 0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let scale = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(EngineError::Numerical(
                    "tridiagonal eigenvalue iteration stalled".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let denom = g + if g >= 0.0 { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / denom;
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

fn build_hermite(n: usize) -> Result<QuadRule> {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];

    // Jacobi matrix for the orthonormal recurrence: zero diagonal,
    // off-diagonal sqrt(i/2). Its eigenvalues are the nodes; they land each
    // Newton polish in the right basin for any order.
    let off: Vec<f64> = (1..n).map(|i| (i as f64 / 2.0).sqrt()).collect();
    let eig = sym_tridiag_eigenvalues(vec![0.0; n], off)?;

    for i in 0..n / 2 {
        // Polish the positive half; mirror onto the negative half.
        let mut z = eig[n - 1 - i];
        let mut pp = 0.0;
        for _ in 0..8 {
            let (p1, p2) = hermite_pair(n, z);
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-16 * (1.0 + z.abs()) {
                break;
            }
        }
        let w = 2.0 / (pp * pp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, p2) = hermite_pair(n, 0.0);
        let pp = (2.0 * n as f64).sqrt() * p2;
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (pp * pp);
    }
    Ok(QuadRule { nodes, weights })
}

fn build_legendre(n: usize) -> Result<QuadRule> {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);

    for i in 0..half {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..200 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(EngineError::Numerical(format!(
                "Gauss-Legendre Newton iteration stalled at order {n}"
            )));
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(QuadRule { nodes, weights })
}

/// Integrates `f` over `[a, b]` with an `n`-point Gauss-Legendre rule.
pub fn integrate_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Result<f64> {
    let rule = gauss_legendre(n)?;
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * f(mid + half * x);
    }
    Ok(acc * half)
}

/// Standard normal probability density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `P(Z > z)` of the standard normal.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

pub(crate) fn weights_total_hermite() -> f64 {
    SQRT_PI
}
