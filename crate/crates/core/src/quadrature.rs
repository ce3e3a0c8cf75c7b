//! Gaussian quadrature rules (Legendre on [−1, 1], Laguerre on [0, ∞)).
//!
//! Nodes come from the Golub–Welsch eigenproblem of the Jacobi matrix and are
//! then polished by Newton steps on the three-term recurrence; weights are
//! taken from the classical closed forms, which keeps small Laguerre weights
//! accurate in the relative sense.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// A quadrature rule `Σ w_i f(x_i)`.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Maps a Legendre rule from [−1, 1] to [a, b].
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (c + h * x, h * w))
    }
}

fn jacobi_eigen(diag: Vec<f64>, off: Vec<f64>) -> Vec<f64> {
    let n = diag.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = off[i];
            m[(i + 1, i)] = off[i];
        }
    }
    let mut x: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    x
}

/// `(P_n(x), P_n'(x))` for the Legendre polynomial.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `(L_n(x), L_{n−1}(x))` for the Laguerre polynomials.
fn laguerre(n: usize, x: f64) -> (f64, f64) {
    let (mut l0, mut l1) = (1.0, 1.0 - x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let k = k as f64;
        let l2 = ((2.0 * k + 1.0 - x) * l1 - k * l0) / (k + 1.0);
        l0 = l1;
        l1 = l2;
    }
    (l1, l0)
}

fn build_legendre(n: usize) -> Rule {
    let off: Vec<f64> = (1..n).map(|k| k as f64 / ((4 * k * k - 1) as f64).sqrt()).collect();
    let mut nodes = jacobi_eigen(vec![0.0; n], off);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = legendre(n, *x);
            *x -= p / dp;
        }
        let (_, dp) = legendre(n, *x);
        weights.push(2.0 / ((1.0 - *x * *x) * dp * dp));
    }
    Rule { nodes, weights }
}

fn build_laguerre(n: usize) -> Rule {
    let diag: Vec<f64> = (0..n).map(|k| (2 * k + 1) as f64).collect();
    let off: Vec<f64> = (1..n).map(|k| k as f64).collect();
    let mut nodes = jacobi_eigen(diag, off);
    let mut weights = Vec::with_capacity(n);
    let nf = n as f64;
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (ln, lnm1) = laguerre(n, *x);
            // L_n'(x) = n (L_n − L_{n−1}) / x
            let d = nf * (ln - lnm1) / *x;
            if d != 0.0 && d.is_finite() {
                *x -= ln / d;
            }
        }
        let (_, lnm1) = laguerre(n, *x);
        // w = x / (n² L_{n−1}(x)²)
        weights.push(*x / (nf * nf * lnm1 * lnm1));
    }
    Rule { nodes, weights }
}

type Cache = Mutex<HashMap<(u8, usize), Arc<Rule>>>;

fn cache() -> &'static Cache {
    static C: OnceLock<Cache> = OnceLock::new();
    C.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(kind: u8, n: usize, build: fn(usize) -> Rule) -> Arc<Rule> {
    let mut c = cache().lock().expect("quadrature cache poisoned");
    c.entry((kind, n)).or_insert_with(|| Arc::new(build(n))).clone()
}

/// Gauss–Legendre rule with `n` nodes on [−1, 1].
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    cached(0, n, build_legendre)
}

/// Gauss–Laguerre rule with `n` nodes for `∫₀^∞ e^{−x} f(x) dx`.
pub fn gauss_laguerre(n: usize) -> Arc<Rule> {
    cached(1, n, build_laguerre)
}

/// Composite Gauss–Legendre integral of `f` over `[a, b]` with `panels` panels.
pub fn integrate<F: FnMut(f64) -> num::complex::Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    panels: usize,
    order: usize,
) -> num::complex::Complex64 {
    let rule = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut acc = num::complex::Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in rule.on_interval(lo, lo + h) {
            acc += f(x) * w;
        }
    }
    acc
}
