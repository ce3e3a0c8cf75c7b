//! Classical-Laplace fixed point `W = G_ε(W)` along one ray and the outer
//! solutions
//!
//! ```text
//! v(t, z, ε) = ε^{γ₀}/√(2π) ∫_ℝ ∫_{L_𝔲} W(u, m, ε) e^{−(t/ε^γ)u} e^{izm} du dm.
//! ```
//!
//! Dividing the PDE by `t^{d_D}` turns every `t^{−n}` into the order-`n`
//! antiderivative `(1/(n−1)!) ∫₀^τ (τ−s)^{n−1} · ds` in the Laplace plane and
//! the top term into `(−τ)^{δ_D} R_D(im) W`, so
//!
//! ```text
//! (−τ)^{δ_D} R_D(im) G_ε(w) = Σ_l a_l ε^{m_l+γ₀−γ(d_D−k_l)} Q(im) J_{d_D−k_l}[w]
//!                             + a₀ ε^{m₀+γ₀−γd_D} Q(im) J_{d_D}[w]
//!                             + Σ_l c_l ε^{μ_l+2γ₀−γ(d_D−h_l)} J_{d_D−h_l}[(Q₁w) ⋆ (Q₂w)]
//!                             − Σ_j ε^{n_j−γ(d_D−b_j)} B_j(m) τ^{d_D−b_j−1}/(d_D−b_j−1)!
//!                             − Υ(τ, m, ε)
//!                             − Σ_{l<D} ε^{Δ_l+γ₀−γ(d_D−d_l+δ_l)} R_l(im) J_{d_D−d_l}[(−s)^{δ_l} w]
//! ```
//!
//! with `J_n[f](τ) = (1/(n−1)!) ∫₀^τ (τ−s)^{n−1} f(s) ds` and `⋆` the
//! combined `s`-convolution and `(2π)^{−1/2}` frequency convolution.

use num::complex::Complex64;
use num::rational::Rational64;
use num::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::ray_integral;
use crate::fourier::SampledLine;
use crate::inner::{nonlinear_rows, pde_residual, picard, FixedPointResult, GridKind, GridSpec, OuterGrid2D, RayGrid2D, SolveConfig};
use crate::kernels::{LogGrid, RayConvolution, VolterraKernel};
use crate::model::{cpow_rat_on, EquationSpec, ScaleParams};
use crate::quadrature::integrate;

pub use crate::forcing::{forcing_f_direct, ode_residual_f};

type C64 = Complex64;

fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Weighted grid sup defining the outer Banach norm:
/// `max (1+|m|)^μ e^{β|m|} (1+|τ/ε^Γ|²) e^{−ν|τ/ε^Γ|} |w|` over every node,
/// `r = 0` included.
pub fn enorm(w: &OuterGrid2D, eps: C64) -> f64 {
    let p = &w.scale;
    let scale = eps.norm().powf(p.big_gamma_f());
    let nu = p.nu_outer();
    let mut best = 0.0f64;
    for (i, row) in w.values.iter().enumerate() {
        let x = w.r_grid[i] / scale;
        let rw = (1.0 + x * x) * (-nu * x).exp();
        for (j, v) in row.iter().enumerate() {
            let m = w.m(j).abs();
            let mw = (1.0 + m).powf(p.mu) * (p.beta * m).exp();
            best = best.max(mw * rw * v.norm());
        }
    }
    best
}

impl GridSpec {
    /// Default outer grid on the scale `|ε|^Γ`: at the smallest admissible
    /// `|t| = Δ_ν|ε|^{γ−Γ}` the Laplace damping beats the admissible growth
    /// `e^{ν|τ/ε^Γ|}` by `e^{−37}` at `r_max`.
    pub fn outer_default(p: &ScaleParams, delta1: f64, delta_nu: f64) -> Result<Self> {
        let net = delta_nu * delta1 - p.nu_outer();
        if !(net > 0.0) {
            return Err(Error::Domain(format!(
                "Δ_ν δ₁^∞ = {} does not exceed ν = {}: outer Laplace integrals diverge",
                delta_nu * delta1,
                p.nu_outer()
            )));
        }
        Ok(GridSpec { m_max: 20.0 / p.beta, m_points: 257, per_decade: 25, r_min_factor: 1e-6, r_max_factor: 37.0 / net })
    }
}

/// `∫₀^τ (τ−s)^{n} f(s) ds` on a ray, `τ = r e^{iu}`:
/// `e^{iu(n+1)} r^n G_{n+1,1}[r' f](r)` at the positive nodes.
#[derive(Clone, Debug)]
struct Antiderivative {
    kernel: VolterraKernel,
    n: i64,
}

impl Antiderivative {
    fn new(n: i64, grid: &LogGrid) -> Self {
        Antiderivative { kernel: VolterraKernel::new(n as f64 + 1.0, 1.0, grid, 1.0), n }
    }

    /// `f` at positive nodes; `radii` the positive nodes; `rn[i] = e^{iu(n+1)} r_i^n`.
    fn apply(&self, f: &[C64], radii: &[f64], phase: &[C64]) -> Vec<C64> {
        let g: Vec<C64> = f.iter().zip(radii).map(|(v, r)| v * *r).collect();
        self.kernel.apply(&g).into_iter().zip(phase).map(|(v, ph)| v * ph).collect()
    }
}

#[derive(Clone, Debug)]
struct LinearTerm {
    coef: Vec<C64>,
    kernel: usize,
    /// Weight `(−s)^power` applied before integration.
    power: i64,
}

/// Precomputed pieces of `G_ε` for one `(ε, ray)`.
#[derive(Clone, Debug)]
pub struct OuterOperator {
    pub eps: C64,
    pub eps_ref: f64,
    pub direction: f64,
    grid: LogGrid,
    template: OuterGrid2D,
    radii: Vec<f64>,
    denom: Vec<Vec<C64>>,
    forcing: Vec<Vec<C64>>,
    kernels: Vec<Antiderivative>,
    phases: Vec<Vec<C64>>,
    linear: Vec<LinearTerm>,
    nonlinear: Vec<(C64, usize)>,
    q1: Vec<C64>,
    q2: Vec<C64>,
    symmetric: bool,
    conv: RayConvolution,
}

fn kernel_for(kernels: &mut Vec<Antiderivative>, n: i64, grid: &LogGrid) -> Result<usize> {
    if n < 0 {
        return Err(Error::Structural(format!("antiderivative of negative order {n}")));
    }
    if let Some(i) = kernels.iter().position(|k| k.n == n) {
        return Ok(i);
    }
    kernels.push(Antiderivative::new(n, grid));
    Ok(kernels.len() - 1)
}

/// Scalar part `υ(τ)` of `Υ(τ, m, ε) = C_F(m) υ(τ)` at the radii of `radii`
/// along direction `u`.
fn upsilon_scalar(eps: C64, eps_ref: f64, spec: &EquationSpec, p: &ScaleParams, u: f64, radii: &[f64]) -> Result<Vec<C64>> {
    let f = &spec.forcing;
    let (_, dd, _) = spec.top();
    let pre = cpow_rat_on(eps, Rational64::from(f.n_f) - p.gamma * dd, eps_ref) / factorial(dd - 1);
    let total = ray_integral(f, f.theta_f, 0, |_| C64::new(1.0, 0.0))?;
    let dir = C64::from_polar(1.0, u);
    for root in f.f2_roots() {
        let along = root * dir.conj();
        if along.re >= 0.0 && along.re <= radii.last().copied().unwrap_or(0.0) && along.im.abs() < 1e-8 * (1.0 + root.norm()) {
            return Err(Error::SingularSymbol { m: u, value: root.norm() });
        }
    }
    let n = dd - 1;
    Ok(radii
        .par_iter()
        .map(|&r| {
            if r == 0.0 {
                return C64::zero();
            }
            let panels = 4 + (4.0 * r * (1.0 + f.k_f)).ceil() as usize;
            let conv = integrate(|x| f.omega_factor(dir * x) * (r - x).powi(n as i32), 0.0, r, panels, 16);
            let tau = dir * r;
            pre * (conv * dir.powi(n as i32 + 1) - tau.powi(n as i32) * total)
        })
        .collect())
}

/// Linear extrapolation of the positive-node values to `r = 0`.
fn extrapolate_origin(w: &mut OuterGrid2D) {
    if w.n_r() < 3 {
        return;
    }
    let (r1, r2) = (w.r_grid[1], w.r_grid[2]);
    let s = r1 / (r2 - r1);
    let (head, tail) = w.values.split_at_mut(1);
    for (j, v) in head[0].iter_mut().enumerate() {
        *v = tail[0][j] - (tail[1][j] - tail[0][j]) * s;
    }
}

impl OuterOperator {
    /// `eps_ref` centres the branch of `arg ε` used for fractional powers.
    pub fn new(eps: C64, eps_ref: f64, spec: &EquationSpec, p: &ScaleParams, direction: f64, gs: &GridSpec) -> Result<Self> {
        if eps.is_zero() {
            return Err(Error::Domain("ε must be nonzero".into()));
        }
        let (_, dd, del_d) = spec.top();
        let g0 = p.gamma0;
        let gm = p.gamma;
        let m0 = spec.m0();
        let scale = eps.norm().powf(p.big_gamma_f());
        let grid = gs.radial(scale)?;
        let template = RayGrid2D::zeros(GridKind::Outer, direction, grid.radii_with_origin(), gs.m_max, gs.m_points, p.clone())?;
        let ms: Vec<f64> = (0..gs.m_points).map(|j| template.m(j)).collect();
        let radii: Vec<f64> = (0..grid.n).map(|i| grid.r(i)).collect();
        let taus: Vec<C64> = radii.iter().map(|&r| C64::from_polar(r, direction)).collect();
        let sym = |poly: &crate::model::Polynomial| -> Vec<C64> { ms.iter().map(|&m| poly.symbol(m)).collect() };

        let rd = sym(spec.r_top());
        let mut denom = Vec::with_capacity(grid.n);
        for tau in &taus {
            let t = (-*tau).powi(del_d as i32);
            let row: Vec<C64> = rd.iter().map(|r| r * t).collect();
            if let Some((j, v)) = row.iter().enumerate().find(|(_, v)| v.norm() < 1e-300) {
                return Err(Error::SingularSymbol { m: ms[j], value: v.norm() });
            }
            denom.push(row);
        }

        // Forcing part of the numerator: −B monomials − Υ.
        let line = template.line();
        let mut forcing = vec![vec![C64::zero(); ms.len()]; grid.n];
        if !spec.forcing.c_f.is_zero() {
            let ups = upsilon_scalar(eps, eps_ref, spec, p, direction, &radii)?;
            let cf = spec.cf_line(&line);
            for (i, u) in ups.iter().enumerate() {
                for (j, f) in forcing[i].iter_mut().enumerate() {
                    *f -= cf.values()[j] * u;
                }
            }
        }
        for j in 0..=spec.q_count {
            let n = dd - spec.b_exp[j] - 1;
            let c = cpow_rat_on(eps, Rational64::from(spec.n_exp[j]) - gm * (dd - spec.b_exp[j]), eps_ref) / factorial(n);
            let bl = spec.b_line(j, &line);
            for (i, tau) in taus.iter().enumerate() {
                let tb = c * tau.powi(n as i32);
                for (jj, f) in forcing[i].iter_mut().enumerate() {
                    *f -= bl.values()[jj] * tb;
                }
            }
        }

        let mut kernels = Vec::new();
        let mut linear = Vec::new();
        let qs = sym(&spec.q_poly);
        let mut push_q = |order: i64, a: C64, m_l: i64, kernels: &mut Vec<Antiderivative>| -> Result<()> {
            let e = Rational64::from(m_l) + g0 - gm * order;
            let c = a * cpow_rat_on(eps, e, eps_ref) / factorial(order - 1);
            if !c.is_zero() {
                let kernel = kernel_for(kernels, order - 1, &grid)?;
                linear.push(LinearTerm { coef: qs.iter().map(|q| q * c).collect(), kernel, power: 0 });
            }
            Ok(())
        };
        for l in 1..=spec.q {
            push_q(dd - spec.k_exp[l - 1], spec.a[l], spec.m_exp[l], &mut kernels)?;
        }
        push_q(dd, spec.a[0], m0, &mut kernels)?;
        for l in 0..spec.d_terms - 1 {
            let order = dd - spec.d_exp[l];
            let dl = spec.delta_exp[l];
            let e = Rational64::from(spec.delta[l]) + g0 - gm * (order + dl);
            let c = -cpow_rat_on(eps, e, eps_ref) / factorial(order - 1);
            let coef: Vec<C64> = sym(&spec.r_poly[l]).iter().map(|r| r * c).collect();
            if coef.iter().all(|v| v.is_zero()) {
                continue;
            }
            let kernel = kernel_for(&mut kernels, order - 1, &grid)?;
            linear.push(LinearTerm { coef, kernel, power: dl });
        }
        let mut nonlinear = Vec::new();
        for l in 0..=spec.m_terms {
            let order = dd - spec.h_exp[l];
            let e = Rational64::from(spec.mu_exp[l]) + g0 * 2 - gm * order;
            let c = spec.c[l] * cpow_rat_on(eps, e, eps_ref) / factorial(order - 1);
            if c.is_zero() {
                continue;
            }
            nonlinear.push((c, kernel_for(&mut kernels, order - 1, &grid)?));
        }
        let phases = kernels
            .iter()
            .map(|k| {
                radii.iter().map(|&r| C64::from_polar(r.powi(k.n as i32), direction * (k.n + 1) as f64)).collect()
            })
            .collect();
        Ok(OuterOperator {
            eps,
            eps_ref,
            direction,
            conv: RayConvolution::new(1.0, &grid, 1.0),
            grid,
            template,
            radii,
            denom,
            forcing,
            kernels,
            phases,
            linear,
            nonlinear,
            q1: sym(&spec.q1_poly),
            q2: sym(&spec.q2_poly),
            symmetric: spec.q1_poly == spec.q2_poly,
        })
    }

    pub fn zero(&self) -> OuterGrid2D {
        self.template.clone()
    }

    /// `G_ε(0)`: the forcing terms divided by `(−τ)^{δ_D} R_D(im)`.
    pub fn forcing_image(&self) -> OuterGrid2D {
        self.assemble(vec![vec![C64::zero(); self.grid.n]; self.template.m_points], true)
    }

    /// `−Υ − B-monomials` before division.
    pub fn forcing_grid(&self) -> OuterGrid2D {
        let mut out = self.template.clone();
        for i in 0..self.grid.n {
            out.values[i + 1].clone_from(&self.forcing[i]);
        }
        out
    }

    /// `∫₀^τ (τ−s)^{kernel.n} f ds` at the positive nodes.
    fn antiderivative(&self, k: usize, f: &[C64]) -> Vec<C64> {
        self.kernels[k].apply(f, &self.radii, &self.phases[k])
    }

    /// `∫₀^s f(s−s') g(s') ds'` combined with the frequency convolution, at
    /// the positive nodes: `e^{iu} C[r'·Q₁w, r'·Q₂w](r)/r`.
    fn double_convolution(&self, w: &OuterGrid2D) -> Vec<Vec<C64>> {
        let mut wr = w.clone();
        for (i, row) in wr.values.iter_mut().enumerate() {
            let r = w.r_grid[i];
            row.iter_mut().for_each(|v| *v *= r);
        }
        let rows = nonlinear_rows(&self.conv, &wr, &self.q1, &self.q2, self.symmetric);
        let ph = C64::from_polar(1.0, self.direction);
        rows.into_iter()
            .zip(&self.radii)
            .map(|(row, r)| row.into_iter().map(|v| v * ph / *r).collect())
            .collect()
    }

    fn coupled_numerator(&self, w: &OuterGrid2D, with_nonlinear: bool) -> Vec<Vec<C64>> {
        let nm = w.m_points;
        let n = self.grid.n;
        let dir = C64::from_polar(1.0, self.direction);
        let weights: Vec<Vec<C64>> = self
            .linear
            .iter()
            .map(|t| self.radii.iter().map(|&r| (-dir * r).powi(t.power as i32)).collect())
            .collect();
        let mut cols: Vec<Vec<C64>> = (0..nm)
            .into_par_iter()
            .map(|j| {
                let col: Vec<C64> = w.values[1..].iter().map(|row| row[j]).collect();
                let mut acc = vec![C64::zero(); n];
                for (t, wt) in self.linear.iter().zip(&weights) {
                    let g: Vec<C64> = col.iter().zip(wt).map(|(a, b)| a * b).collect();
                    for (a, o) in acc.iter_mut().zip(self.antiderivative(t.kernel, &g)) {
                        *a += o * t.coef[j];
                    }
                }
                acc
            })
            .collect();
        if with_nonlinear && !self.nonlinear.is_empty() && w.max_abs() > 0.0 {
            let v = self.double_convolution(w);
            let add: Vec<Vec<C64>> = (0..nm)
                .into_par_iter()
                .map(|j| {
                    let col: Vec<C64> = v.iter().map(|row| row[j]).collect();
                    let mut acc = vec![C64::zero(); n];
                    for (c, k) in &self.nonlinear {
                        for (a, o) in acc.iter_mut().zip(self.antiderivative(*k, &col)) {
                            *a += o * c;
                        }
                    }
                    acc
                })
                .collect();
            for (c, a) in cols.iter_mut().zip(add) {
                for (x, y) in c.iter_mut().zip(a) {
                    *x += y;
                }
            }
        }
        cols
    }

    fn assemble(&self, cols: Vec<Vec<C64>>, with_forcing: bool) -> OuterGrid2D {
        let mut out = self.template.clone();
        for i in 0..self.grid.n {
            for (j, v) in out.values[i + 1].iter_mut().enumerate() {
                let f = if with_forcing { self.forcing[i][j] } else { C64::zero() };
                *v = (cols[j][i] + f) / self.denom[i][j];
            }
        }
        extrapolate_origin(&mut out);
        out
    }

    /// `G_ε(w)`.
    pub fn apply(&self, w: &OuterGrid2D) -> Result<OuterGrid2D> {
        if !w.same_shape(&self.template) {
            return Err(Error::GridCoverage("w does not live on this operator's grid".into()));
        }
        let out = self.assemble(self.coupled_numerator(w, true), true);
        if !out.is_finite() {
            return Err(Error::Overflow { log_exponent: f64::INFINITY });
        }
        Ok(out)
    }

    /// `G_ε(w) − G_ε(0)` with the quadratic term dropped.
    pub fn apply_linear(&self, w: &OuterGrid2D) -> Result<OuterGrid2D> {
        Ok(self.assemble(self.coupled_numerator(w, false), false))
    }
}

/// `Υ(τ, m, ε)` on `shape`'s grid (exact zero at `τ = 0`).
pub fn forcing_upsilon(eps: C64, eps_ref: f64, spec: &EquationSpec, p: &ScaleParams, shape: &OuterGrid2D) -> Result<OuterGrid2D> {
    let mut out = shape.zeros_like();
    if spec.forcing.c_f.is_zero() {
        return Ok(out);
    }
    let ups = upsilon_scalar(eps, eps_ref, spec, p, shape.direction, &shape.r_grid)?;
    let cf = spec.cf_line(&shape.line());
    for (i, u) in ups.iter().enumerate() {
        for (j, v) in out.values[i].iter_mut().enumerate() {
            *v = cf.values()[j] * u;
        }
    }
    Ok(out)
}

/// `G_ε(w)` through a freshly built operator on `w`'s grid.
pub fn apply_g(w: &OuterGrid2D, eps: C64, eps_ref: f64, spec: &EquationSpec, p: &ScaleParams, gs: &GridSpec) -> Result<OuterGrid2D> {
    OuterOperator::new(eps, eps_ref, spec, p, w.direction, gs)?.apply(w)
}

/// Ray and grid of one outer solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRun {
    pub direction: f64,
    /// Centre of the branch of `arg ε` (the bisector of the ε-sector).
    pub eps_ref: f64,
    pub delta1: f64,
    /// `Δ_{ν,δ₁^∞}`: outer solutions are evaluated for `|t| > Δ|ε|^{γ−Γ}` only.
    pub delta_nu: f64,
    pub grid: GridSpec,
    pub solve: SolveConfig,
}

/// Solves `G_ε(W) = W` on the ray of `run`.
pub fn solve_outer(eps: C64, spec: &EquationSpec, p: &ScaleParams, run: &OuterRun) -> Result<FixedPointResult> {
    let op = OuterOperator::new(eps, run.eps_ref, spec, p, run.direction, &run.grid)?;
    let mut fp = picard(op.zero(), |w| op.apply(w), |w| enorm(w, eps), &run.solve, eps, run.delta1)?;
    fp.eps_ref = run.eps_ref;
    Ok(fp)
}

/// Per-frequency Laplace values `∫_{L_𝔲} W(u, m) e^{−su} du`, `s = t/ε^γ`.
pub fn outer_laplace_line(fp: &FixedPointResult, s: C64) -> Result<Vec<C64>> {
    let w = &fp.solution;
    let u = w.direction;
    let c = (u + s.arg()).cos();
    if s.is_zero() || c < fp.delta1 {
        return Err(Error::Sector(format!(
            "cos(𝔲 + arg(t/ε^γ)) = {c:.4} below δ₁^∞ = {} (𝔲 = {u:.4}, arg(t/ε^γ) = {:.4})",
            fp.delta1,
            s.arg()
        )));
    }
    let p = &w.scale;
    let scale = fp.eps.norm().powf(p.big_gamma_f());
    let dir = C64::from_polar(1.0, u);
    let n = w.n_r();
    let r_last = w.r_grid[n - 1];
    let reach = -(s * dir).re * r_last + p.nu_outer() * r_last / scale;
    if reach > (1e-12f64).ln() {
        return Err(Error::GridCoverage(format!(
            "Laplace damping at the end of the ray is only e^{reach:.1}; |t| is below the outer grid's reach"
        )));
    }
    let h = w.log_grid()?.h;
    let kern: Vec<C64> = (1..n).map(|i| (-s * dir * w.r_grid[i]).exp() * w.r_grid[i]).collect();
    let r1 = w.r_grid[1];
    Ok((0..w.m_points)
        .map(|j| {
            let mut acc = C64::zero();
            for (i, k) in kern.iter().enumerate() {
                let wt = if i == 0 || i == kern.len() - 1 { 0.5 } else { 1.0 };
                acc += w.values[i + 1][j] * k * wt;
            }
            // ∫₀^{r₁} by the trapezoid rule; e^{−su} ≈ 1 there.
            let head = (w.values[0][j] + w.values[1][j]) * (0.5 * r1);
            (acc * h + head) * dir
        })
        .collect())
}

/// Errors unless `|t| > Δ|ε|^{γ−Γ}`.
fn check_outer_time(t: C64, fp: &FixedPointResult, delta_nu: f64) -> Result<()> {
    let p = &fp.solution.scale;
    let bound = delta_nu * fp.eps.norm().powf(p.gamma_f() - p.big_gamma_f());
    if !(t.norm() > bound) {
        return Err(Error::Domain(format!("|t| = {:.4e} is inside the excluded disc of radius {bound:.4e}", t.norm())));
    }
    Ok(())
}

fn outer_sheet(t: C64, fp: &FixedPointResult) -> Result<Vec<C64>> {
    let p = &fp.solution.scale;
    let s = t / cpow_rat_on(fp.eps, p.gamma, fp.eps_ref);
    let pre = cpow_rat_on(fp.eps, p.gamma0, fp.eps_ref);
    Ok(outer_laplace_line(fp, s)?.into_iter().map(|v| v * pre).collect())
}

/// `v(t, z, ε) = ε^{γ₀}/√(2π) ∬ W(u, m, ε) e^{−(t/ε^γ)u} e^{izm} du dm`.
pub fn outer_solution(t: C64, z: C64, fp: &FixedPointResult, delta_nu: f64) -> Result<C64> {
    check_outer_time(t, fp, delta_nu)?;
    let sheet = outer_sheet(t, fp)?;
    let line = SampledLine::new(fp.solution.m_max, sheet)?;
    Ok(crate::fourier::inverse_fourier(&line, z))
}

/// Relative PDE residual of the synthesised outer solution at `(t, z)`; the
/// forcing is `F^{θ_F}` with the direction of the solve as deformed ray.
pub fn outer_pde_residual(t: C64, z: C64, fp: &FixedPointResult, spec: &EquationSpec, delta_nu: f64) -> Result<f64> {
    check_outer_time(t, fp, delta_nu)?;
    pde_residual(t, z, fp.eps, fp.eps_ref, spec, &fp.solution, |tt| outer_sheet(tt, fp), Some(fp.solution.direction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::beta::beta;

    #[test]
    fn antiderivative_matches_beta_integral() {
        // ∫₀^τ (τ−s)^N s^n ds = τ^{N+n+1} B(N+1, n+1)
        let grid = LogGrid::from_range(1e-6, 5.0, 25).unwrap();
        let u = 0.4;
        let radii: Vec<f64> = (0..grid.n).map(|i| grid.r(i)).collect();
        for (big_n, n) in [(0i64, 0i32), (1, 2), (3, 1)] {
            let k = Antiderivative::new(big_n, &grid);
            let phase: Vec<C64> = radii.iter().map(|&r| C64::from_polar(r.powi(big_n as i32), u * (big_n + 1) as f64)).collect();
            let f: Vec<C64> = radii.iter().map(|&r| C64::from_polar(r, u).powi(n)).collect();
            let out = k.apply(&f, &radii, &phase);
            let b = beta(big_n as f64 + 1.0, n as f64 + 1.0);
            for i in (grid.n / 2..grid.n).step_by(17) {
                let exact = C64::from_polar(radii[i], u).powi(big_n as i32 + n + 1) * b;
                assert!((out[i] - exact).norm() < 1e-5 * exact.norm(), "N={big_n} n={n} i={i}");
            }
        }
    }
}
