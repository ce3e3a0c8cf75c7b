//! Quadrature machinery on logarithmic ray grids.
//!
//! Functions along a ray `τ = r e^{id}` are sampled at `r = 0` and at
//! geometric nodes `r_i = e^{s₀ + i h}`.  In the variable `s = ln r` the
//! fractional-power kernels
//!
//! ```text
//! ∫₀^r (r^κ − r'^κ)^{a−1} g(r') dr'/r' = r^{κ(a−1)} ∫₀^∞ (1 − e^{−κv})^{a−1} g(r e^{−v}) dv
//! ```
//!
//! become Toeplitz (convolution) sums, so their weights are computed once per
//! `(a, κ, h)`.  Below the first node the sampled function is continued by
//! `g(r₁)(r/r₁)^{ρ₀}`, matching the power-law vanishing of Borel-plane
//! functions at the origin.

use num::complex::Complex64;
use num::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature;

type C64 = Complex64;

/// Geometric radial grid `r_i = exp(s0 + i h)`, `i = 0..n` (positive nodes only).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogGrid {
    pub s0: f64,
    pub h: f64,
    pub n: usize,
}

impl LogGrid {
    /// Grid from `r_min` to at least `r_max` with `per_decade` nodes per decade.
    pub fn from_range(r_min: f64, r_max: f64, per_decade: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::Structural(format!("bad radial range [{r_min}, {r_max}]")));
        }
        let h = std::f64::consts::LN_10 / per_decade as f64;
        let n = ((r_max / r_min).ln() / h).ceil() as usize + 1;
        Ok(LogGrid { s0: r_min.ln(), h, n: n.max(8) })
    }

    /// `n` geometric nodes exactly spanning `[r_min, r_max]`.
    pub fn spanning(r_min: f64, r_max: f64, n: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) || n < 8 {
            return Err(Error::Structural(format!("bad radial range [{r_min}, {r_max}] with {n} nodes")));
        }
        Ok(LogGrid { s0: r_min.ln(), h: (r_max / r_min).ln() / (n - 1) as f64, n })
    }

    pub fn r(&self, i: usize) -> f64 {
        (self.s0 + i as f64 * self.h).exp()
    }

    pub fn r_max(&self) -> f64 {
        self.r(self.n - 1)
    }

    /// All radii including the leading `r = 0`.
    pub fn radii_with_origin(&self) -> Vec<f64> {
        std::iter::once(0.0).chain((0..self.n).map(|i| self.r(i))).collect()
    }

    /// Recovers the grid from radii `[0, r₁, r₂, …]` if they are geometric.
    pub fn detect(r: &[f64]) -> Result<Self> {
        if r.len() < 9 || r[0] != 0.0 {
            return Err(Error::GridCoverage("ray grid must start at r = 0 and hold at least 8 positive nodes".into()));
        }
        let s0 = r[1].ln();
        let n = r.len() - 1;
        let h = (r[n].ln() - s0) / (n - 1) as f64;
        for (i, &ri) in r[1..].iter().enumerate() {
            let expect = s0 + i as f64 * h;
            if (ri.ln() - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                return Err(Error::GridCoverage("ray grid is not geometric".into()));
            }
        }
        Ok(LogGrid { s0, h, n })
    }
}

/// Lagrange basis values at `x` for the nodes `0, 1, …, 5`.
pub fn lagrange6(x: f64) -> [f64; 6] {
    let mut w = [0.0; 6];
    for (q, wq) in w.iter_mut().enumerate() {
        let mut v = 1.0;
        for p in 0..6 {
            if p != q {
                v *= (x - p as f64) / (q as f64 - p as f64);
            }
        }
        *wq = v;
    }
    w
}

/// Value at node index `idx` (possibly negative) with power-law continuation below the grid.
#[inline]
fn extended<T: Copy + std::ops::Mul<f64, Output = T>>(g: &[T], idx: isize, decay: f64) -> T {
    if idx >= 0 {
        g[idx as usize]
    } else {
        g[0] * decay.powi((-idx) as i32)
    }
}

/// Six-point interpolation stencil for a fractional node position.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    base: isize,
    w: [f64; 6],
}

impl Stencil {
    /// Stencil centred on `pos`, shifted down so it never reads beyond node `n − 1`.
    fn at(pos: f64, n: usize) -> Self {
        let fl = pos.floor();
        let mut base = fl as isize - 2;
        let top = n as isize - 6;
        if base > top {
            base = top;
        }
        Stencil { base, w: lagrange6(pos - base as f64) }
    }
}

/// Toeplitz weights for `G_{a,κ}[g](s_i) = ∫₀^∞ (1 − e^{−κv})^{a−1} g(s_i − v) dv`.
#[derive(Clone, Debug)]
pub struct VolterraKernel {
    pub a: f64,
    pub kappa: f64,
    weights: Vec<f64>,
    tail: Vec<f64>,
}

impl VolterraKernel {
    pub fn new(a: f64, kappa: f64, grid: &LogGrid, rho0: f64) -> Self {
        let h = grid.h;
        let decay = (-rho0 * h).exp();
        let k_ext = ((40.0 / (rho0 * h)).ceil() as usize).max(8);
        let panels = grid.n + k_ext;
        let mut w = vec![0.0; panels + 8];
        let gl8 = quadrature::gauss_legendre(8);
        let gl16 = quadrature::gauss_legendre(16);
        let integer_a = (a - a.round()).abs() < 1e-12 && a >= 1.0;
        let kern = |v: f64| (-(-kappa * v).exp_m1()).powf(a - 1.0);
        for j in 0..panels {
            let start = if j < 2 { 0 } else { j - 2 };
            let mut add = |v: f64, val: f64| {
                let l = lagrange6(v / h - start as f64);
                for q in 0..6 {
                    w[start + q] += val * l[q];
                }
            };
            if j == 0 && !integer_a {
                // v = h y^{1/a} absorbs the v^{a−1} endpoint behaviour.
                for (y, wy) in gl16.on_interval(0.0, 1.0) {
                    let v = h * y.powf(1.0 / a);
                    let ratio = -(-kappa * v).exp_m1() / v;
                    add(v, ratio.powf(a - 1.0) * h.powf(a) / a * wy);
                }
            } else {
                let lo = j as f64 * h;
                for (v, wv) in gl8.on_interval(lo, lo + h) {
                    add(v, kern(v) * wv);
                }
            }
        }
        // Contribution of the continuation below the grid, per target node.
        let tail = (0..grid.n)
            .map(|i| {
                let mut t = 0.0;
                let mut f = 1.0;
                for wk in w.iter().skip(i + 1).take(k_ext) {
                    f *= decay;
                    t += wk * f;
                }
                t
            })
            .collect();
        VolterraKernel { a, kappa, weights: w, tail }
    }

    /// `G_{a,κ}[g]` at every positive node, for `g` sampled on the positive nodes.
    pub fn apply(&self, g: &[C64]) -> Vec<C64> {
        let n = g.len();
        (0..n)
            .map(|i| {
                let mut acc = g[0] * self.tail[i];
                for k in 0..=i {
                    acc += g[i - k] * self.weights[k];
                }
                acc
            })
            .collect()
    }
}

/// Weights for the ray convolution
///
/// ```text
/// C[f, g](r) = ∫₀¹ f(r(1−σ)^{1/κ}) g(rσ^{1/κ}) dσ / (σ(1−σ)),
/// ```
///
/// which is the Borel-plane image of a product of two series.  The interval
/// is split at `σ = 1/2`; on each half the small factor is written in the log
/// variable (`σ = e^{−κv}/2`), so the far factor sits on a grid shifted by
/// `ln 2/κ` and the near factor at fixed fractional offsets.
#[derive(Clone, Debug)]
pub struct RayConvolution {
    kappa: f64,
    grid: LogGrid,
    decay: f64,
    shift: f64,
    near: Vec<(f64, f64)>, // (fractional offset δ_k/h, weight c_k h κ/(1−σ_k))
    tail_factor: f64,
}

impl RayConvolution {
    pub fn new(kappa: f64, grid: &LogGrid, rho0: f64) -> Self {
        let h = grid.h;
        let v0 = std::f64::consts::LN_2 / kappa;
        let shift = v0 / h;
        let near = (0..grid.n)
            .map(|k| {
                let x = (-kappa * k as f64 * h).exp() * 0.5;
                let delta = (1.0 - x).ln() / kappa;
                let greg = match k {
                    0 => 95.0 / 288.0,
                    1 => 317.0 / 240.0,
                    2 => 23.0 / 30.0,
                    3 => 793.0 / 720.0,
                    4 => 157.0 / 160.0,
                    _ => 1.0,
                };
                (delta / h, greg * h * kappa / (1.0 - x))
            })
            .collect();
        let decay = (-rho0 * h).exp();
        RayConvolution {
            kappa,
            grid: *grid,
            decay,
            shift,
            near,
            tail_factor: h * kappa * decay / (1.0 - decay),
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn combine(vals: &[Vec<C64>], st: &Stencil, decay: f64, out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::zero());
        for q in 0..6 {
            let idx = st.base + q as isize;
            let wq = st.w[q];
            if idx >= 0 {
                for (o, v) in out.iter_mut().zip(&vals[idx as usize]) {
                    *o += v * wq;
                }
            } else {
                let s = wq * decay.powi((-idx) as i32);
                for (o, v) in out.iter_mut().zip(&vals[0]) {
                    *o += v * s;
                }
            }
        }
    }

    /// Values of `vals` on the grid shifted down by `ln 2/κ`.
    fn shifted(&self, vals: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let nm = vals[0].len();
        (0..self.grid.n)
            .map(|j| {
                let mut out = vec![C64::zero(); nm];
                let st = Stencil::at(j as f64 - self.shift, self.grid.n);
                Self::combine(vals, &st, self.decay, &mut out);
                out
            })
            .collect()
    }

    /// Evaluates `C[f, g]` at every positive node.
    ///
    /// `f`, `g` hold one vector per node (for instance one value per
    /// frequency); `prod(x, y)` combines values of the two factors sampled at
    /// complementary points.  With `symmetric = true` the caller asserts that
    /// `prod(f(a), g(b)) = prod(f(b), g(a))`, which halves the work.
    pub fn apply<P>(&self, f: &[Vec<C64>], g: &[Vec<C64>], symmetric: bool, prod: P) -> Vec<Vec<C64>>
    where
        P: Fn(&[C64], &[C64]) -> Vec<C64> + Sync,
    {
        let n = self.grid.n;
        let nm = f[0].len();
        let g_far = self.shifted(g);
        let f_far = if symmetric { Vec::new() } else { self.shifted(f) };
        let decay = self.decay;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![C64::zero(); nm];
                let mut near_f = vec![C64::zero(); nm];
                let mut near_g = vec![C64::zero(); nm];
                let axpy = |acc: &mut Vec<C64>, v: Vec<C64>, c: f64| {
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += x * c;
                    }
                };
                for k in 0..=i {
                    let (off, c) = self.near[k];
                    let st = Stencil::at(i as f64 + off, n);
                    Self::combine(f, &st, decay, &mut near_f);
                    let c_eff = if symmetric { 2.0 * c } else { c };
                    axpy(&mut acc, prod(&near_f, &g_far[i - k]), c_eff);
                    if !symmetric {
                        Self::combine(g, &st, decay, &mut near_g);
                        axpy(&mut acc, prod(&f_far[i - k], &near_g), c);
                    }
                }
                // Geometric continuation of the far factor below the grid.
                let k = (i + 1).min(n - 1);
                let (off, _) = self.near[k];
                let x = (-self.kappa * (i + 1) as f64 * self.grid.h).exp() * 0.5;
                let tf = self.tail_factor / (1.0 - x);
                let st = Stencil::at(i as f64 + off, n);
                Self::combine(f, &st, decay, &mut near_f);
                if symmetric {
                    axpy(&mut acc, prod(&near_f, &g_far[0]), 2.0 * tf);
                } else {
                    axpy(&mut acc, prod(&near_f, &g_far[0]), tf);
                    Self::combine(g, &st, decay, &mut near_g);
                    axpy(&mut acc, prod(&f_far[0], &near_g), tf);
                }
                acc
            })
            .collect()
    }
}

/// Interpolates node values at a fractional node position, with power-law
/// continuation below the first node.
pub fn interpolate_at(vals: &[C64], pos: f64, decay: f64) -> C64 {
    let st = Stencil::at(pos, vals.len());
    let mut acc = C64::zero();
    for q in 0..6 {
        acc += extended(vals, st.base + q as isize, decay) * st.w[q];
    }
    acc
}

/// `∫₀^∞ g(r) dr/r` for values on the positive nodes.
///
/// The trapezoid rule in `s = ln r` is spectrally accurate on the whole line,
/// so the grid is continued below its first node: the first three values are
/// fitted by `Σ_k c_k r^{rho0+k}` (k = 0, 1, 2) and the fitted terms are
/// summed over the missing nodes in closed form.  Geometric decay is assumed
/// at the top.
pub fn log_trapezoid(grid: &LogGrid, vals: &[C64], rho0: f64) -> C64 {
    let n = vals.len();
    let mut acc = C64::zero();
    for (i, v) in vals.iter().enumerate() {
        let w = if i == n - 1 { 0.5 } else { 1.0 };
        acc += v * w;
    }
    let head = if n >= 3 {
        // Vandermonde solve for v_j = Σ_k c_k x_k^j with x_k = e^{(rho0+k)h};
        // the nodes below contribute Σ_k c_k/(x_k − 1).
        let x: [f64; 3] = std::array::from_fn(|k| ((rho0 + k as f64) * grid.h).exp());
        // c_k = Σ_j v_j ℓ_{k,j}, ℓ_{k,j} the coefficients of the Lagrange
        // polynomial Π_{m≠k}(y − x_m)/(x_k − x_m) in powers of y.
        (0..3)
            .map(|k| {
                let (a, b) = (x[(k + 1) % 3], x[(k + 2) % 3]);
                let ck = (vals[0] * (a * b) - vals[1] * (a + b) + vals[2]) / ((x[k] - a) * (x[k] - b));
                ck / (x[k] - 1.0)
            })
            .sum::<C64>()
    } else {
        vals[0] / (rho0 * grid.h) - vals[0] * 0.5
    };
    (acc + head) * grid.h
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    #[test]
    fn volterra_reproduces_beta_integral() {
        // g(r) = r^p ⇒ ∫₀^∞(1−e^{−κv})^{a−1} e^{−pv} dv · r^p = B(p/κ, a)/κ · r^p
        let grid = LogGrid::from_range(1e-7, 10.0, 25).unwrap();
        for &(a, kappa, p) in &[(1.0, 1.0, 1.0), (2.0, 1.0, 2.0), (1.5, 2.0, 1.0), (0.5, 2.0, 3.0), (3.0, 3.0, 1.0)] {
            let k = VolterraKernel::new(a, kappa, &grid, p);
            let g: Vec<C64> = (0..grid.n).map(|i| C64::new(grid.r(i).powf(p), 0.0)).collect();
            let out = k.apply(&g);
            let b = gamma(p / kappa) * gamma(a) / gamma(p / kappa + a) / kappa;
            for i in (grid.n / 2)..grid.n {
                let exact = b * grid.r(i).powf(p);
                assert!(((out[i].re - exact) / exact).abs() < 5e-6, "a={a} κ={kappa} p={p}: {} vs {exact}", out[i].re);
            }
        }
    }

    #[test]
    fn ray_convolution_of_powers() {
        // f = r^p, g = r^q ⇒ C = r^{p+q} B(p/κ, q/κ)
        let grid = LogGrid::from_range(1e-8, 10.0, 25).unwrap();
        for &(kappa, p, q) in &[(1.0f64, 1.0f64, 1.0f64), (2.0, 1.0, 3.0), (1.0, 2.0, 1.0)] {
            let conv = RayConvolution::new(kappa, &grid, p.min(q));
            let f: Vec<Vec<C64>> = (0..grid.n).map(|i| vec![C64::new(grid.r(i).powf(p), 0.0)]).collect();
            let g: Vec<Vec<C64>> = (0..grid.n).map(|i| vec![C64::new(grid.r(i).powf(q), 0.0)]).collect();
            let out = conv.apply(&f, &g, false, |x, y| vec![x[0] * y[0]]);
            let b = gamma(p / kappa) * gamma(q / kappa) / gamma((p + q) / kappa);
            for i in (grid.n / 2)..grid.n {
                let exact = b * grid.r(i).powf(p + q);
                assert!(((out[i][0].re - exact) / exact).abs() < 5e-5, "κ={kappa} p={p} q={q} i={i}: {} vs {exact}", out[i][0].re);
            }
        }
    }
}
