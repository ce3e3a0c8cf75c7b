//! Sector-to-sector cocycles of the inner and outer solution families,
//! exponential-flatness fits, and the Gevrey report built from them.
//!
//! A cocycle `Θ = ∫_{L_{γ'}} − ∫_{L_γ}` of two Laplace transforms of the same
//! Borel-plane function is astronomically small (`log Θ` of order `−10³` to
//! `−10⁸` on the sample ladders), so it is never formed by subtraction.
//! Cauchy's theorem on the disc `D(0, ρ)` where the Borel function is
//! holomorphic splits it into
//!
//! ```text
//! Θ = ∫_{[ρ/2,∞)e^{iγ'}} − ∫_{[ρ/2,∞)e^{iγ}} + ∫_{arc ρ/2: γ → γ'}
//! ```
//!
//! and every piece is accumulated as a complex logarithm (log-sum-exp over
//! quadrature nodes and over the frequency grid).  The rays use composite
//! Gauss–Legendre rules in the variable `ℓ = (r − ρ/2)/s`, `s` the local
//! decay length of the Laplace kernel; the arc is integrated from each end
//! with the Borel function continued off its ray by its local polynomial in
//! `log u` (the arc contribution concentrates within `O(s/ρ)` radians of the
//! end points).

use std::f64::consts::PI;
use std::io::Write;

use num::complex::Complex64;
use num::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Loaded;
use crate::error::{Error, Result};
use crate::geometry::{wrap, AssociatedFamily};
use crate::inner::{inner_solution_with, solve_inner, FixedPointResult, GridSpec};
use crate::kernels::LogGrid;
use crate::model::{branch_arg, cpow_rat, cpow_rat_on, rat_f64, ScaleParams};
use crate::outer::{outer_solution, solve_outer};
use crate::quadrature::gauss_legendre;

type C64 = Complex64;

const LN_INV_SQRT_2PI: f64 = -0.918_938_533_204_672_8;
/// Ray variable `ℓ` is integrated over `[0, RAY_SPAN]` decay lengths.
const RAY_SPAN: f64 = 60.0;
const RAY_PANELS: usize = 30;
const GL_ORDER: usize = 6;
/// Nodes of the local polynomial used for interpolation and continuation.
const STENCIL: usize = 8;
/// Predicted `log Θ` at the top of every ε ladder.
pub const LADDER_TOP_LOG: f64 = -500.0;
/// Above this predicted `log Θ` the naive difference is computed as well.
pub const NAIVE_THRESHOLD: f64 = -30.0;

/// Ordinary least-squares line `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InsufficientData { got: n.min(ys.len()), need: 2 });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("regressor has zero variance".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r2 })
}

// ---------------------------------------------------------------------------
// Flatness fits

/// `log Θ(ε) ≈ intercept + slope/|ε|^k`: a cocycle bounded by
/// `C e^{−A/|ε|^k}` has `slope ≈ −A` and `intercept ≈ log C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessFit {
    pub order_tested: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `|ε|` samples, strictly decreasing.
    pub eps_points: Vec<f64>,
    /// Natural logarithms of the cocycle sups.
    pub log_theta: Vec<f64>,
}

impl FlatnessFit {
    /// A negative slope: the cocycle decays like `e^{−A/|ε|^k}`.
    pub fn is_flat(&self) -> bool {
        self.slope < 0.0
    }

    pub fn rate(&self) -> f64 {
        -self.slope
    }
}

/// Least squares of `log Θ` on `1/|ε|^order` (at least five points).
pub fn fit_flatness(logs: &[f64], eps: &[f64], order: f64) -> Result<FlatnessFit> {
    if logs.len() != eps.len() {
        return Err(Error::Structural(format!("{} logs for {} ε values", logs.len(), eps.len())));
    }
    if logs.len() < 5 {
        return Err(Error::InsufficientData { got: logs.len(), need: 5 });
    }
    if !(order > 0.0) {
        return Err(Error::Fit(format!("order {order} must be positive")));
    }
    if let Some(bad) = logs.iter().find(|l| !l.is_finite()) {
        return Err(Error::Fit(format!("non-finite log cocycle {bad}")));
    }
    let mut pairs: Vec<(f64, f64)> = eps.iter().map(|e| e.abs()).zip(logs.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    if pairs.windows(2).any(|w| !(w[0].0 > w[1].0)) || pairs.last().unwrap().0 <= 0.0 {
        return Err(Error::Fit("ε samples must be positive and pairwise distinct".into()));
    }
    let xs: Vec<f64> = pairs.iter().map(|(e, _)| e.powf(-order)).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, l)| *l).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(FlatnessFit {
        order_tested: order,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        eps_points: pairs.iter().map(|(e, _)| *e).collect(),
        log_theta: ys,
    })
}

/// Fits at `k/2`, `k` and `2k`.
pub fn fit_order_ladder(logs: &[f64], eps: &[f64], k: f64) -> Result<Vec<FlatnessFit>> {
    [0.5 * k, k, 2.0 * k].iter().map(|&o| fit_flatness(logs, eps, o)).collect()
}

/// `n` moduli geometric in `|ε|` with the top where `−C/|ε|^k` equals
/// [`LADDER_TOP_LOG`] (capped at `cap`), spanning `10^{min(1, 6/k)}`.
pub fn eps_ladder(c: f64, k: f64, cap: f64, n: usize) -> Result<Vec<f64>> {
    if !(c > 0.0 && k > 0.0) || n < 2 {
        return Err(Error::Domain(format!("ladder needs C > 0, k > 0 and two points (C = {c}, k = {k})")));
    }
    let top = (c / -LADDER_TOP_LOG).powf(1.0 / k).min(cap);
    let span = (6.0 / k).min(1.0);
    Ok((0..n).map(|i| top * 10f64.powf(-span * i as f64 / (n - 1) as f64)).collect())
}

/// `σ_t = ((δ₁ − δ₂)/ν)^{1/(γ−Γ)} |t|^{1/(γ−Γ)}`: the outer cocycle bound
/// holds for `|ε| < σ_t`.
pub fn sigma_t(t_abs: f64, delta1: f64, delta2: f64, nu: f64, p: &ScaleParams) -> Result<f64> {
    let g = p.gamma_f() - p.big_gamma_f();
    if !(g > 0.0 && delta1 > delta2 && delta2 > 0.0 && nu > 0.0) {
        return Err(Error::Domain(format!(
            "σ_t needs γ > Γ and 0 < δ₂ < δ₁ (γ−Γ = {g}, δ₁ = {delta1}, δ₂ = {delta2})"
        )));
    }
    Ok(((delta1 - delta2) / nu * t_abs).powf(1.0 / g))
}

// ---------------------------------------------------------------------------
// Log-space accumulation

/// `log Σ exp(L_k)` for complex logarithms (real part: log modulus).
fn log_sum_exp(terms: &[C64]) -> C64 {
    let m = terms.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return C64::new(f64::NEG_INFINITY, 0.0);
    }
    let s: C64 = terms.iter().filter(|l| l.re > f64::NEG_INFINITY).map(|l| C64::new(l.re - m, l.im).exp()).sum();
    if s.is_zero() {
        return C64::new(f64::NEG_INFINITY, 0.0);
    }
    let ls = s.ln();
    C64::new(m + ls.re, ls.im)
}

fn cln(v: C64) -> C64 {
    if v.is_zero() {
        C64::new(f64::NEG_INFINITY, 0.0)
    } else {
        v.ln()
    }
}

/// Laplace kernel of one family in logarithmic form.
#[derive(Clone, Copy, Debug)]
enum Kernel {
    /// `κ e^{−(u/T)^κ} du/u`.
    Inner { big_t: C64, kappa: f64 },
    /// `e^{−su} du`.
    Outer { s: C64 },
}

impl Kernel {
    fn log_kernel(&self, u: C64) -> C64 {
        match *self {
            Kernel::Inner { big_t, kappa } => -(u / big_t).powf(kappa) + kappa.ln(),
            Kernel::Outer { s } => -s * u,
        }
    }

    /// `log(du/dr)` (times `1/u` for the inner measure) on the ray `r e^{iγ}`.
    fn log_ray_jacobian(&self, r: f64, gamma: f64) -> C64 {
        match self {
            Kernel::Inner { .. } => C64::new(-r.ln(), 0.0),
            Kernel::Outer { .. } => C64::new(0.0, gamma),
        }
    }

    /// `log(du/dθ)` (times `1/u` for the inner measure) on the arc `r e^{iθ}`.
    fn log_arc_jacobian(&self, r: f64, theta: f64) -> C64 {
        match self {
            Kernel::Inner { .. } => C64::new(0.0, 0.5 * PI),
            Kernel::Outer { .. } => C64::new(r.ln(), 0.5 * PI + theta),
        }
    }

    /// `−d/dr Re log K` at `r e^{iγ}`: the local decay rate along the ray.
    fn decay_rate(&self, r: f64, gamma: f64) -> f64 {
        match *self {
            Kernel::Inner { big_t, kappa } => {
                kappa * r.powf(kappa - 1.0) * (C64::from_polar(1.0, kappa * gamma) / big_t.powf(kappa)).re
            }
            Kernel::Outer { s } => (s * C64::from_polar(1.0, gamma)).re,
        }
    }

    /// Direction of strongest damping (`arg T` resp. `−arg s`).
    fn damping_centre(&self) -> f64 {
        match *self {
            Kernel::Inner { big_t, .. } => big_t.arg(),
            Kernel::Outer { s } => -s.arg(),
        }
    }
}

/// Polynomial through `STENCIL` consecutive nodes of a log grid, evaluated
/// at a (complex) position of `log r`.
#[derive(Clone, Debug)]
struct Stencil {
    /// First row of `values` used (rows start with `r = 0`).
    row: usize,
    w: [C64; STENCIL],
}

impl Stencil {
    fn at(grid: &LogGrid, log_r: C64) -> Result<Self> {
        let pos = (log_r - grid.s0) / grid.h;
        let base = pos.re.floor() as isize - (STENCIL as isize / 2 - 1);
        if base < 0 || base as usize + STENCIL > grid.n {
            return Err(Error::GridCoverage(format!(
                "r = {:.4e} lies outside the solved ray [{:.3e}, {:.3e}]",
                log_r.re.exp(),
                grid.r(0),
                grid.r_max()
            )));
        }
        let zeta = pos - base as f64;
        let mut w = [C64::zero(); STENCIL];
        for (k, wk) in w.iter_mut().enumerate() {
            let mut acc = C64::new(1.0, 0.0);
            for j in 0..STENCIL {
                if j != k {
                    acc *= (zeta - j as f64) / (k as f64 - j as f64);
                }
            }
            *wk = acc;
        }
        Ok(Stencil { row: base as usize + 1, w })
    }

    fn eval(&self, values: &[Vec<C64>], j: usize) -> C64 {
        self.w.iter().enumerate().map(|(k, w)| values[self.row + k][j] * w).sum()
    }
}

/// Quadrature nodes of one piece: a point of the Borel plane with its
/// stencil and the log of (kernel × measure × weight).
struct PieceNodes {
    stencils: Vec<Stencil>,
    log_weights: Vec<C64>,
}

impl PieceNodes {
    /// Complex log of the piece at frequency column `j`.
    fn log_value(&self, values: &[Vec<C64>], j: usize) -> C64 {
        let terms: Vec<C64> =
            self.stencils.iter().zip(&self.log_weights).map(|(st, lw)| cln(st.eval(values, j)) + lw).collect();
        log_sum_exp(&terms)
    }
}

/// `∫_{[r₀,∞)e^{iγ}}` of the Borel function against the kernel.
fn ray_nodes(fp: &FixedPointResult, kernel: &Kernel, r0: f64) -> Result<PieceNodes> {
    let w = &fp.solution;
    let grid = w.log_grid()?;
    let gamma = w.direction;
    let rate = kernel.decay_rate(r0, gamma);
    if !(rate > 0.0) {
        return Err(Error::Sector(format!("Laplace kernel does not decay along γ = {gamma:.4} at r = {r0}")));
    }
    let sc = 1.0 / rate;
    let rule = gauss_legendre(GL_ORDER);
    let hp = RAY_SPAN / RAY_PANELS as f64;
    let mut stencils = Vec::new();
    let mut log_weights = Vec::new();
    for p in 0..RAY_PANELS {
        let lo = p as f64 * hp;
        for (l, wt) in rule.on_interval(lo, lo + hp) {
            let r = r0 + sc * l;
            let u = C64::from_polar(r, gamma);
            stencils.push(Stencil::at(&grid, C64::new(r.ln(), 0.0))?);
            log_weights.push(kernel.log_kernel(u) + kernel.log_ray_jacobian(r, gamma) + (wt * sc).ln());
        }
    }
    Ok(PieceNodes { stencils, log_weights })
}

/// Part of the arc `r₀e^{iθ}`, `θ` from `from` to `to`, continued off the ray
/// of `fp` (whose direction is `from` up to `2π`): panels grow geometrically
/// away from the end point, starting at the local angular decay length.
fn arc_nodes(fp: &FixedPointResult, kernel: &Kernel, r0: f64, from: f64, to: f64) -> Result<PieceNodes> {
    let w = &fp.solution;
    let grid = w.log_grid()?;
    let len = to - from;
    let mut stencils = Vec::new();
    let mut log_weights = Vec::new();
    if len == 0.0 {
        return Ok(PieceNodes { stencils, log_weights });
    }
    // Angular decay length at the end point: d/dθ Re log K(r₀e^{iθ}).
    let dth = 1e-6 * len.abs().max(1e-3);
    let slope = ((kernel.log_kernel(C64::from_polar(r0, from + dth)) - kernel.log_kernel(C64::from_polar(r0, from))).re
        / dth)
        .abs();
    let first = if slope > 0.0 { (1.0 / slope).min(len.abs()) } else { len.abs() };
    let mut edges = vec![0.0];
    let mut step = 0.25 * first;
    while *edges.last().unwrap() < len.abs() {
        let next = (edges.last().unwrap() + step).min(len.abs());
        edges.push(next);
        step *= 1.6;
    }
    let rule = gauss_legendre(GL_ORDER);
    let sign = len.signum();
    for e in edges.windows(2) {
        for (d, wt) in rule.on_interval(e[0], e[1]) {
            let theta = from + sign * d;
            let u = C64::from_polar(r0, theta);
            stencils.push(Stencil::at(&grid, C64::new(r0.ln(), sign * d))?);
            log_weights.push(kernel.log_kernel(u) + kernel.log_arc_jacobian(r0, theta) + (wt * sign).ln_c());
        }
    }
    Ok(PieceNodes { stencils, log_weights })
}

trait LnC {
    fn ln_c(self) -> C64;
}

impl LnC for f64 {
    /// Complex log of a nonzero real number.
    fn ln_c(self) -> C64 {
        C64::new(self.abs().ln(), if self < 0.0 { PI } else { 0.0 })
    }
}

/// `log(h w_j /√2π)`-weighted inverse Fourier transform in log space.
fn log_inverse_fourier(fp: &FixedPointResult, logs: &[C64], z: C64) -> C64 {
    let w = &fp.solution;
    let n = logs.len();
    let lh = w.m_spacing().ln() + LN_INV_SQRT_2PI;
    let terms: Vec<C64> = logs
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let edge = if j == 0 || j == n - 1 { 0.5f64.ln() } else { 0.0 };
            l + C64::new(0.0, 1.0) * z * w.m(j) + edge + lh
        })
        .collect();
    log_sum_exp(&terms)
}

// ---------------------------------------------------------------------------
// Cocycles

/// Evaluation points of a cocycle: scaled inner times `x` (`t = x ε^{χ−α}`)
/// or outer times `t`, crossed with `z` values of the strip `H_{β'}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeMesh {
    pub times: Vec<C64>,
    pub zs: Vec<C64>,
}

/// Sup over the probe mesh of one cocycle, in logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocycleSample {
    pub eps: C64,
    /// `log sup (|J₁| + |J₂| + |J₃|)`: the three-path bound on `|Θ|`, the
    /// quantity fitted for flatness.
    pub log_theta: f64,
    /// `log sup |J₁ − J₂ + J₃|`, the signed sum.  The pieces cancel down to
    /// the relative accuracy of the ray solves, so this is a noise floor
    /// rather than a resolved value whenever the true cocycle is smaller.
    pub log_signed: f64,
    /// `log sup` of each piece: far ray of the upper sector, of the lower
    /// sector, arc.
    pub log_pieces: [f64; 3],
    /// Predicted `log Θ` from the kernel alone (`−(ρ/2)·decay` at the worst probe).
    pub predicted: f64,
    /// Naive `log sup |u' − u|`, only when `predicted ≥ NAIVE_THRESHOLD`.
    pub naive: Option<f64>,
}

impl CocycleSample {
    /// Agreement of the naive log with the three-path log within 10% (when
    /// the naive difference was computed).
    pub fn naive_agrees(&self) -> Option<bool> {
        self.naive.map(|n| ((n - self.log_theta) / self.log_theta).abs() <= 0.1)
    }
}

/// Which family a cocycle belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Inner,
    Outer,
}

fn kernel_for(family: Family, fp: &FixedPointResult, time: C64) -> Kernel {
    let p = &fp.solution.scale;
    match family {
        Family::Inner => {
            let t = time * cpow_rat(fp.eps, p.chi - p.alpha);
            Kernel::Inner { big_t: cpow_rat(fp.eps, p.alpha) * t, kappa: p.kappa_f() }
        }
        Family::Outer => Kernel::Outer { s: time / cpow_rat_on(fp.eps, p.gamma, fp.eps_ref) },
    }
}

/// `−(r₀/|T|)^κ cos(κ(γ − arg T))` resp. `−r₀ Re(s e^{iγ})` minimised over
/// both rays: the leading behaviour of `log Θ`.
fn predicted_log(family: Family, lower: &FixedPointResult, upper: &FixedPointResult, r0: f64, times: &[C64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for &time in times {
        for fp in [lower, upper] {
            let k = kernel_for(family, fp, time);
            let e = k.log_kernel(C64::from_polar(r0, fp.solution.direction)).re;
            worst = worst.max(e);
        }
    }
    worst
}

/// Arc end points lifted next to the damping centre, `γ_lower → γ_upper`.
fn arc_ends(lower: f64, upper: f64, centre: f64) -> (f64, f64) {
    (centre + wrap(lower - centre), centre + wrap(upper - centre))
}

/// `log sup |Θ|` over the probe mesh for the solved pair (`lower` on sector
/// `p`, `upper` on sector `p+1`) of one family; `r0 = ρ/2`.
///
/// Identical directions give the exact zero (`log = −∞`).
pub fn cocycle_sup(
    family: Family,
    lower: &FixedPointResult,
    upper: &FixedPointResult,
    r0: f64,
    probe: &ProbeMesh,
) -> Result<CocycleSample> {
    if lower.eps != upper.eps {
        return Err(Error::Structural("cocycle of solutions at different ε".into()));
    }
    let predicted = predicted_log(family, lower, upper, r0, &probe.times);
    let (gl, gu) = (lower.solution.direction, upper.solution.direction);
    if gl == gu {
        let ninf = f64::NEG_INFINITY;
        return Ok(CocycleSample {
            eps: lower.eps,
            log_theta: ninf,
            log_signed: ninf,
            log_pieces: [ninf; 3],
            predicted,
            naive: None,
        });
    }
    let mut best = [f64::NEG_INFINITY; 5];
    for &time in &probe.times {
        let kl = kernel_for(family, lower, time);
        let ku = kernel_for(family, upper, time);
        if (kl.log_kernel(C64::new(1.0, 0.0)) - ku.log_kernel(C64::new(1.0, 0.0))).norm() > 1e-9 {
            return Err(Error::Domain(format!(
                "the two sectors use different branches of the fractional powers of ε = {}",
                lower.eps
            )));
        }
        let far_upper = ray_nodes(upper, &ku, r0)?;
        let far_lower = ray_nodes(lower, &kl, r0)?;
        let (a, b) = arc_ends(gl, gu, kl.damping_centre());
        let mid = 0.5 * (a + b);
        let arc_lower = arc_nodes(lower, &kl, r0, a, mid)?;
        let arc_upper = arc_nodes(upper, &ku, r0, b, mid)?;
        let m_points = lower.solution.m_points;
        let (mut p1, mut p2, mut p3, mut tot) =
            (Vec::with_capacity(m_points), Vec::with_capacity(m_points), Vec::with_capacity(m_points), Vec::new());
        for j in 0..m_points {
            let j1 = far_upper.log_value(&upper.solution.values, j);
            let j2 = far_lower.log_value(&lower.solution.values, j);
            // arc(a → b) = arc(a → mid) − arc(b → mid)
            let j3 = log_sum_exp(&[
                arc_lower.log_value(&lower.solution.values, j),
                arc_upper.log_value(&upper.solution.values, j) + C64::new(0.0, PI),
            ]);
            tot.push(log_sum_exp(&[j1, j2 + C64::new(0.0, PI), j3]));
            p1.push(j1);
            p2.push(j2);
            p3.push(j3);
        }
        for &z in &probe.zs {
            let l1 = log_inverse_fourier(lower, &p1, z).re;
            let l2 = log_inverse_fourier(lower, &p2, z).re;
            let l3 = log_inverse_fourier(lower, &p3, z).re;
            let lt = log_inverse_fourier(lower, &tot, z).re;
            let lb = log_sum_exp(&[C64::new(l1, 0.0), C64::new(l2, 0.0), C64::new(l3, 0.0)]).re;
            for (slot, v) in best.iter_mut().zip([lt, lb, l1, l2, l3]) {
                *slot = slot.max(v);
            }
        }
    }
    let naive = if predicted >= NAIVE_THRESHOLD { Some(naive_log(family, lower, upper, probe)?) } else { None };
    Ok(CocycleSample {
        eps: lower.eps,
        log_theta: best[1],
        log_signed: best[0],
        log_pieces: [best[2], best[3], best[4]],
        predicted,
        naive,
    })
}

/// Rescaled solution `ε^{m₀}u` resp. `ε^{−γ₀}v` at a probe point.
fn rescaled_solution(family: Family, fp: &FixedPointResult, time: C64, z: C64) -> Result<C64> {
    let p = &fp.solution.scale;
    match family {
        Family::Inner => inner_solution_with(time * cpow_rat(fp.eps, p.chi - p.alpha), z, fp, 0, None),
        Family::Outer => {
            // The time check is the caller's responsibility; Δ = 0 disables it.
            let v = outer_solution(time, z, fp, 0.0)?;
            Ok(v / cpow_rat_on(fp.eps, p.gamma0, fp.eps_ref))
        }
    }
}

/// `log sup |ε^{m₀}u' − ε^{m₀}u|` by direct subtraction.
pub fn naive_log(family: Family, lower: &FixedPointResult, upper: &FixedPointResult, probe: &ProbeMesh) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &time in &probe.times {
        for &z in &probe.zs {
            let d = rescaled_solution(family, upper, time, z)? - rescaled_solution(family, lower, time, z)?;
            best = best.max(cln(d).re);
        }
    }
    Ok(best)
}

/// `log sup |ε^{m₀}u|` resp. `log sup |ε^{−γ₀}v|` over the probe mesh.
pub fn log_solution_sup(family: Family, fp: &FixedPointResult, probe: &ProbeMesh) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &time in &probe.times {
        for &z in &probe.zs {
            best = best.max(cln(rescaled_solution(family, fp, time, z)?).re);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Studies over an ε ladder

/// Cocycles of one overlap along an ε ladder, with fits at `k/2`, `k`, `2k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapStudy {
    pub family: Family,
    pub overlap: usize,
    /// Theoretical flatness order (`χκ` inner, `γ` outer).
    pub order: f64,
    pub probe: ProbeMesh,
    pub samples: Vec<CocycleSample>,
    pub fits: Vec<FlatnessFit>,
    /// `log sup` of the lower-sector solution at the three smallest `|ε|`
    /// (boundedness as `ε → 0`).
    pub solution_logs: Vec<f64>,
}

impl OverlapStudy {
    pub fn fit_at(&self, order: f64) -> Option<&FlatnessFit> {
        self.fits.iter().find(|f| (f.order_tested - order).abs() < 1e-12)
    }

    /// Solutions stay bounded: finite sups and no growth as `|ε|` decreases.
    pub fn bounded(&self) -> bool {
        self.solution_logs.iter().all(|l| l.is_finite())
            && self.solution_logs.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
    }
}

/// Default inner probe: `x` on a 5-point diagonal of `[0.2, 1]ρ_X ×
/// (±0.4 × half-aperture of X)`, `z` on a 5-point diagonal of
/// `[−1, 1] × i[−β/4, β/4]`.
pub fn inner_probe(ld: &Loaded) -> ProbeMesh {
    let s = &ld.config.inner;
    let rho_x = ld.rho_x();
    let times = (0..5)
        .map(|k| {
            let f = k as f64 / 4.0;
            C64::from_polar(rho_x * (0.2 + 0.8 * f), s.x_bisector + 0.2 * s.x_aperture * (2.0 * f - 1.0))
        })
        .collect();
    ProbeMesh { times, zs: z_probe(ld.params.beta) }
}

fn z_probe(beta: f64) -> Vec<C64> {
    (0..5).map(|k| C64::new(k as f64 * 0.5 - 1.0, (k as f64 - 2.0) * 0.125 * beta)).collect()
}

/// Default outer probe: `|t| ∈ t_min·[1, 2]` on `arg t = (α^∞+β^∞)/2`, with
/// `t_min ≥ 1` doubled until `σ_t(t_min)` exceeds 1.5× the ladder top.
pub fn outer_probe(ld: &Loaded, fam: &AssociatedFamily, ladder_top: impl Fn(f64) -> f64) -> Result<ProbeMesh> {
    let (d1, d2) = fam.deltas;
    let nu = ld.params.nu_outer();
    let mut t_min = 1.0;
    for _ in 0..40 {
        if sigma_t(t_min, d1, d2, nu, &ld.params)? >= 1.5 * ladder_top(t_min) {
            let times = (0..5).map(|k| C64::from_polar(t_min * (1.0 + 0.25 * k as f64), fam.x_bisector)).collect();
            return Ok(ProbeMesh { times, zs: z_probe(ld.params.beta) });
        }
        t_min *= 2.0;
    }
    Err(Error::Domain("no probe time satisfies |ε| < σ_t on the ladder".into()))
}

/// Extends a grid so the solved ray reaches `r_need` (plus the stencil).
fn extended_grid(gs: &GridSpec, scale: f64, r_need: f64) -> GridSpec {
    let h = std::f64::consts::LN_10 / gs.per_decade as f64;
    let mut g = gs.clone();
    g.r_max_factor = g.r_max_factor.max(r_need * (h * STENCIL as f64).exp() / scale);
    g
}

/// The two solves of an overlap at one ε.
fn solve_pair(ld: &Loaded, fam: &AssociatedFamily, family: Family, p: usize, eps: C64, r_need: f64) -> Result<(FixedPointResult, FixedPointResult)> {
    let q = (p + 1) % fam.covering.len();
    let pr = &ld.params;
    let rho = match family {
        Family::Inner => pr.rho,
        Family::Outer => pr.rho_outer,
    };
    // Only the arc must stay in D(0, ρ); the far rays are solved along the
    // (root-free) rays themselves, within a sane reach.
    if r_need > 100.0 * rho {
        return Err(Error::GridCoverage(format!("cocycle rays need r = {r_need:.3e}, beyond 100ρ")));
    }
    let solve = |j: usize| -> Result<FixedPointResult> {
        match family {
            Family::Inner => {
                let mut run = ld.inner_run(fam, j, eps)?;
                run.grid = extended_grid(&run.grid, eps.norm().powf(pr.chi_f()), r_need);
                solve_inner(eps, &ld.spec, pr, &run)
            }
            Family::Outer => {
                let mut run = ld.outer_run(fam, j, eps, fam.x_bisector)?;
                run.grid = extended_grid(&run.grid, eps.norm().powf(pr.big_gamma_f()), r_need);
                solve_outer(eps, &ld.spec, pr, &run)
            }
        }
    };
    let (a, b) = rayon::join(|| solve(p), || solve(q));
    Ok((a?, b?))
}

/// `r` reached by the ray quadrature at the largest decay length.
fn ray_reach(family: Family, fp_dirs: (f64, f64), eps: C64, eps_ref: f64, r0: f64, probe: &ProbeMesh, p: &ScaleParams) -> f64 {
    let mut rate_min = f64::INFINITY;
    for &time in &probe.times {
        let k = match family {
            Family::Inner => {
                let t = time * cpow_rat(eps, p.chi - p.alpha);
                Kernel::Inner { big_t: cpow_rat(eps, p.alpha) * t, kappa: p.kappa_f() }
            }
            Family::Outer => Kernel::Outer { s: time / cpow_rat_on(eps, p.gamma, eps_ref) },
        };
        for g in [fp_dirs.0, fp_dirs.1] {
            rate_min = rate_min.min(k.decay_rate(r0, g));
        }
    }
    r0 + RAY_SPAN / rate_min
}

/// Checks `ε` lies in both sectors of overlap `p`.
fn check_overlap(fam: &AssociatedFamily, p: usize, eps: C64) -> Result<()> {
    let q = (p + 1) % fam.covering.len();
    let (a, b) = (&fam.covering.sectors[p], &fam.covering.sectors[q]);
    if !(a.contains(eps) && b.contains(eps)) {
        return Err(Error::Domain(format!("ε = {eps} is not in the overlap of sectors {p} and {q}")));
    }
    Ok(())
}

/// Cocycle of overlap `p` at one `ε`.
pub fn overlap_cocycle(
    ld: &Loaded,
    fam: &AssociatedFamily,
    family: Family,
    p: usize,
    eps: C64,
    probe: &ProbeMesh,
) -> Result<(CocycleSample, FixedPointResult)> {
    check_overlap(fam, p, eps)?;
    let pr = &ld.params;
    let r0 = 0.5
        * match family {
            Family::Inner => pr.rho,
            Family::Outer => pr.rho_outer,
        };
    let q = (p + 1) % fam.covering.len();
    let dirs = match family {
        Family::Inner => (ld.inner_run(fam, p, eps)?.direction, ld.inner_run(fam, q, eps)?.direction),
        Family::Outer => (
            ld.outer_direction(fam, p, eps, fam.x_bisector)?,
            ld.outer_direction(fam, q, eps, fam.x_bisector)?,
        ),
    };
    let eps_ref = match family {
        Family::Inner => 0.0,
        Family::Outer => wrap(fam.covering.sectors[p].bisector),
    };
    let r_need = ray_reach(family, dirs, eps, eps_ref, r0, probe, pr);
    let (lower, upper) = solve_pair(ld, fam, family, p, eps, r_need)?;
    let sample = cocycle_sup(family, &lower, &upper, r0, probe)?;
    Ok((sample, lower))
}

/// Flatness study of overlap `p`: ladder of `n` moduli on the overlap
/// bisector, cocycles in parallel, fits at `k/2`, `k`, `2k`.
pub fn overlap_study(ld: &Loaded, fam: &AssociatedFamily, family: Family, p: usize, n: usize) -> Result<OverlapStudy> {
    overlap_study_on(ld, fam, family, p, LadderChoice::Auto(n))
}

/// Moduli of an overlap study.
#[derive(Clone, Debug, PartialEq)]
pub enum LadderChoice {
    /// [`eps_ladder`] with this many points.
    Auto(usize),
    /// Given moduli (on the overlap bisector).
    Moduli(Vec<f64>),
}

pub fn overlap_study_on(ld: &Loaded, fam: &AssociatedFamily, family: Family, p: usize, ladder: LadderChoice) -> Result<OverlapStudy> {
    let pr = &ld.params;
    let (order, rho, cap) = match family {
        Family::Inner => (rat_f64(pr.inner_order()), pr.rho, pr.eps0),
        Family::Outer => (pr.gamma_f(), pr.rho_outer, pr.eps0_outer),
    };
    let r0 = 0.5 * rho;
    let arg = fam.covering.overlap_center(p);
    let q = (p + 1) % fam.covering.len();
    // The predicted log is −C/|ε|^k exactly on a fixed ray of ε.
    let coeff = |probe: &ProbeMesh| -> Result<f64> {
        let e = C64::from_polar(0.5 * cap, arg);
        let (dl, du, eps_ref) = match family {
            Family::Inner => (ld.inner_run(fam, p, e)?.direction, ld.inner_run(fam, q, e)?.direction, 0.0),
            Family::Outer => (
                ld.outer_direction(fam, p, e, fam.x_bisector)?,
                ld.outer_direction(fam, q, e, fam.x_bisector)?,
                wrap(fam.covering.sectors[p].bisector),
            ),
        };
        let mut worst = f64::NEG_INFINITY;
        for &time in &probe.times {
            let k = match family {
                Family::Inner => {
                    let t = time * cpow_rat(e, pr.chi - pr.alpha);
                    Kernel::Inner { big_t: cpow_rat(e, pr.alpha) * t, kappa: pr.kappa_f() }
                }
                Family::Outer => Kernel::Outer { s: time / cpow_rat_on(e, pr.gamma, eps_ref) },
            };
            for g in [dl, du] {
                worst = worst.max(k.log_kernel(C64::from_polar(r0, g)).re);
            }
        }
        Ok(-worst * (0.5 * cap).powf(order))
    };
    let probe = match family {
        Family::Inner => inner_probe(ld),
        Family::Outer => {
            let base = outer_probe(ld, fam, |_| 0.0)?;
            // C scales linearly with t_min on the outer family.
            let c1 = coeff(&base)? / base.times[0].norm();
            outer_probe(ld, fam, |t| (c1 * t / -LADDER_TOP_LOG).powf(1.0 / order).min(0.9 * cap))?
        }
    };
    let moduli = match ladder {
        LadderChoice::Auto(n) => eps_ladder(coeff(&probe)?, order, 0.9 * cap, n)?,
        LadderChoice::Moduli(m) => m,
    };
    let results: Vec<(CocycleSample, f64)> = moduli
        .par_iter()
        .map(|&m| {
            let eps = C64::from_polar(m, arg);
            let (s, lower) = overlap_cocycle(ld, fam, family, p, eps, &probe)?;
            let sol = log_solution_sup(family, &lower, &probe)?;
            Ok((s, sol))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<CocycleSample> = results.iter().map(|(s, _)| s.clone()).collect();
    let solution_logs = results.iter().rev().take(3).rev().map(|(_, l)| *l).collect();
    let logs: Vec<f64> = samples.iter().map(|s| s.log_theta).collect();
    let fits = fit_order_ladder(&logs, &moduli, order)?;
    Ok(OverlapStudy { family, overlap: p, order, probe, samples, fits, solution_logs })
}

// ---------------------------------------------------------------------------
// Gevrey report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapVerdict {
    pub overlap: usize,
    /// Order of the ladder with the largest `r²`.
    pub best_order: f64,
    pub r2: Vec<(f64, f64)>,
    pub slope_at_expected: Option<f64>,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyVerdict {
    pub expected_order: f64,
    pub overlaps: Vec<OverlapVerdict>,
    pub ok: bool,
    /// Implied asymptotic class of the common expansion.
    pub gevrey_class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevreyReport {
    pub inner: FamilyVerdict,
    pub outer: FamilyVerdict,
    pub orders_distinct: bool,
    pub ok: bool,
}

/// Fits of one overlap (any set of tested orders).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapFits {
    pub overlap: usize,
    pub fits: Vec<FlatnessFit>,
}

impl From<&OverlapStudy> for OverlapFits {
    fn from(s: &OverlapStudy) -> Self {
        OverlapFits { overlap: s.overlap, fits: s.fits.clone() }
    }
}

fn verdict(fits: &[OverlapFits], expected: f64) -> FamilyVerdict {
    let overlaps: Vec<OverlapVerdict> = fits
        .iter()
        .map(|o| {
            let best = o.fits.iter().max_by(|a, b| a.r2.partial_cmp(&b.r2).unwrap_or(std::cmp::Ordering::Equal));
            let at = o.fits.iter().find(|f| (f.order_tested - expected).abs() < 1e-9);
            let best_order = best.map(|b| b.order_tested).unwrap_or(f64::NAN);
            OverlapVerdict {
                overlap: o.overlap,
                best_order,
                r2: o.fits.iter().map(|f| (f.order_tested, f.r2)).collect(),
                slope_at_expected: at.map(|f| f.slope),
                ok: (best_order - expected).abs() < 1e-9 && at.is_some_and(|f| f.is_flat()),
            }
        })
        .collect();
    let ok = !overlaps.is_empty() && overlaps.iter().all(|v| v.ok);
    FamilyVerdict {
        expected_order: expected,
        overlaps,
        ok,
        gevrey_class: format!("C M^n Γ(1 + n/{expected}) |ε|^n"),
    }
}

/// Checks the best-fitting flatness order is `χκ` on every inner overlap
/// and `γ` on every outer overlap.  Equal orders are reported, not failed.
pub fn gevrey_report(inner: &[OverlapFits], outer: &[OverlapFits], p: &ScaleParams) -> GevreyReport {
    let ki = rat_f64(p.inner_order());
    let ko = p.gamma_f();
    let inner = verdict(inner, ki);
    let outer = verdict(outer, ko);
    let ok = inner.ok && outer.ok;
    GevreyReport { inner, outer, orders_distinct: (ki - ko).abs() > 1e-12, ok }
}

// ---------------------------------------------------------------------------
// Tables

/// One row per (overlap, ε): the cocycle logs.
pub fn write_samples_csv<W: Write>(studies: &[OverlapStudy], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "family", "overlap", "eps_abs", "eps_arg", "log_theta", "log_signed", "log_j1", "log_j2", "log_j3", "predicted", "naive",
    ])?;
    for s in studies {
        for c in &s.samples {
            let fam = match s.family {
                Family::Inner => "inner",
                Family::Outer => "outer",
            };
            w.write_record([
                fam.to_string(),
                s.overlap.to_string(),
                format!("{:.12e}", c.eps.norm()),
                format!("{:.12e}", c.eps.arg()),
                format!("{:.10e}", c.log_theta),
                format!("{:.10e}", c.log_signed),
                format!("{:.10e}", c.log_pieces[0]),
                format!("{:.10e}", c.log_pieces[1]),
                format!("{:.10e}", c.log_pieces[2]),
                format!("{:.10e}", c.predicted),
                c.naive.map(|v| format!("{v:.10e}")).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per (overlap, tested order).
pub fn write_fits_csv<W: Write>(studies: &[OverlapStudy], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "overlap", "order_tested", "slope", "intercept", "r2", "points"])?;
    for s in studies {
        for f in &s.fits {
            let fam = match s.family {
                Family::Inner => "inner",
                Family::Outer => "outer",
            };
            w.write_record([
                fam.to_string(),
                s.overlap.to_string(),
                format!("{}", f.order_tested),
                format!("{:.10e}", f.slope),
                format!("{:.10e}", f.intercept),
                format!("{:.12}", f.r2),
                f.eps_points.len().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Branch consistency of an outer overlap: both sectors must evaluate
/// `arg ε` on the same branch at the overlap bisector.
pub fn outer_overlap_single_valued(fam: &AssociatedFamily, p: usize) -> bool {
    let q = (p + 1) % fam.covering.len();
    let e = C64::from_polar(1.0, fam.covering.overlap_center(p));
    let a = branch_arg(e, wrap(fam.covering.sectors[p].bisector));
    let b = branch_arg(e, wrap(fam.covering.sectors[q].bisector));
    (a - b).abs() < 1e-9
}
