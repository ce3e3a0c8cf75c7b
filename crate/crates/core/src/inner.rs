//! Borel-plane fixed point `ω_κ = H_ε(ω_κ)` along one Laplace ray and the
//! inner solutions `u(t, z, ε) = ε^{−m₀} U(ε^α t, z, ε)` synthesised from it.
//!
//! Dividing the convolution equation by
//! `P_m(τ) = Q(im)a₀ − R_D(im)κ^{δ_D}τ^{δ_Dκ}` gives
//!
//! ```text
//! H_ε(w) = P_m(τ)⁻¹ [ −Q(im) Σ_l a_l ε^{m_l−m₀−αk_l} K_{k_l/κ}[w]
//!                     − Σ_l c_l ε^{μ_l−2m₀−αh_l} K_{h_l/κ}[C[Q₁w ⋆ Q₂w]]
//!                     + Σ_j B_j(m) ε^{n_j−αb_j} τ^{b_j}/Γ(b_j/κ) + Ψ_κ(τ, m, ε)
//!                     + R_D(im) Σ_p A_{δ_D,p} K_{δ_D−p}[(κs)^p w]
//!                     + Σ_{l<D} ε^{Δ_l+α(δ_l−d_l)−m₀} R_l(im)
//!                         ( K_{d_{l,κ}/κ}[(κs)^{δ_l} w] + Σ_p A_{δ_l,p} K_{(d_{l,κ}+κ(δ_l−p))/κ}[(κs)^p w] ) ]
//! ```
//!
//! where `K_a[g](τ) = (τ^κ/Γ(a)) ∫₀^{τ^κ} (τ^κ − s)^{a−1} g(s^{1/κ}) ds/s` and
//! `C` is the ray convolution of [`RayConvolution`].  Every operator is of
//! Volterra type along the ray, so the equation is solved on the ray itself.

use std::io::{BufRead, BufReader, Read, Write};

use num::complex::Complex64;
use num::rational::Rational64;
use num::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{fd_derivative, forcing_f_direct, PsiSeries};
use crate::fourier::{inverse_fourier, FftConvolver, SampledLine};
use crate::kernels::{LogGrid, RayConvolution, VolterraKernel};
use crate::model::{cpow_rat, eval_p, EquationSpec, Polynomial, ScaleParams};
use crate::transforms::{gamma_fn, monomial_kernel};
use crate::turning::p_m;

type C64 = Complex64;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Which construction a grid belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Inner,
    Outer,
}

/// Samples `w(r e^{i·direction}, m)` on `r_grid × m-line`; `values[i][j]`
/// holds radius `r_grid[i]` (with `r_grid[0] = 0`) and frequency `m_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RayGrid2D {
    pub kind: GridKind,
    pub direction: f64,
    pub r_grid: Vec<f64>,
    pub m_max: f64,
    pub m_points: usize,
    pub values: Vec<Vec<C64>>,
    pub scale: ScaleParams,
}

/// Outer grids share the layout; only the vanishing at `r = 0` is dropped.
pub type OuterGrid2D = RayGrid2D;

impl RayGrid2D {
    pub fn zeros(kind: GridKind, direction: f64, r_grid: Vec<f64>, m_max: f64, m_points: usize, scale: ScaleParams) -> Result<Self> {
        SampledLine::zeros(m_max, m_points)?;
        if r_grid.first() != Some(&0.0) || r_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Structural("ray grid must start at 0 and increase".into()));
        }
        let values = vec![vec![C64::zero(); m_points]; r_grid.len()];
        Ok(RayGrid2D { kind, direction, r_grid, m_max, m_points, values, scale })
    }

    pub fn zeros_like(&self) -> Self {
        RayGrid2D { values: vec![vec![C64::zero(); self.m_points]; self.r_grid.len()], ..self.clone() }
    }

    pub fn with_values(&self, values: Vec<Vec<C64>>) -> Self {
        RayGrid2D { values, ..self.clone() }
    }

    pub fn line(&self) -> SampledLine {
        SampledLine::zeros(self.m_max, self.m_points).expect("validated at construction")
    }

    pub fn m(&self, j: usize) -> f64 {
        -self.m_max + 2.0 * self.m_max * j as f64 / (self.m_points - 1) as f64
    }

    pub fn m_spacing(&self) -> f64 {
        2.0 * self.m_max / (self.m_points - 1) as f64
    }

    pub fn n_r(&self) -> usize {
        self.r_grid.len()
    }

    pub fn tau(&self, i: usize) -> C64 {
        C64::from_polar(self.r_grid[i], self.direction)
    }

    pub fn log_grid(&self) -> Result<LogGrid> {
        LogGrid::detect(&self.r_grid)
    }

    /// Column `j` restricted to the positive radii.
    pub fn column(&self, j: usize) -> Vec<C64> {
        self.values[1..].iter().map(|row| row[j]).collect()
    }

    pub fn same_shape(&self, other: &RayGrid2D) -> bool {
        self.r_grid == other.r_grid && self.m_points == other.m_points && self.m_max == other.m_max
    }

    pub fn sub(&self, other: &RayGrid2D) -> Result<RayGrid2D> {
        if !self.same_shape(other) {
            return Err(Error::Structural("grids differ in shape".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Ok(self.with_values(values))
    }

    pub fn scaled(&self, c: C64) -> RayGrid2D {
        self.with_values(self.values.iter().map(|row| row.iter().map(|v| v * c).collect()).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Weighted grid sup defining the inner Banach norm:
/// `max (1+|m|)^μ e^{β|m|} (1+|ζ|^{2κ})/|ζ| · e^{−ν|ζ|^κ} |w|`, `ζ = τ/ε^χ`.
/// The `r = 0` node is skipped (the weight is singular there and `w`
/// vanishes; the first node carries the limiting slope).
pub fn fnorm(w: &RayGrid2D, eps: C64) -> f64 {
    let p = &w.scale;
    let k = p.kappa as f64;
    let scale = eps.norm().powf(p.chi_f());
    let mut best = 0.0f64;
    for (i, row) in w.values.iter().enumerate().skip(1) {
        let z = w.r_grid[i] / scale;
        let rw = (1.0 + z.powf(2.0 * k)) / z * (-p.nu * z.powf(k)).exp();
        for (j, v) in row.iter().enumerate() {
            let m = w.m(j).abs();
            let mw = (1.0 + m).powf(p.mu) * (p.beta * m).exp();
            best = best.max(mw * rw * v.norm());
        }
    }
    best
}

/// Exact coefficients `A_{δ,p}` of
/// `T^{δ(κ+1)}∂_T^δ = (T^{κ+1}∂_T)^δ + Σ_{p=1}^{δ−1} A_{δ,p} T^{κ(δ−p)}(T^{κ+1}∂_T)^p`.
///
/// On `Tⁿ` the left side gives `n(n−1)…(n−δ+1)T^{n+δκ}` and
/// `T^{κ(δ−p)}(T^{κ+1}∂_T)^p` gives `Π_{j<p}(n+jκ)·T^{n+δκ}`; matching at
/// `n = 1, …, δ−1` yields a linear system solved in rationals.
pub fn a_coeffs_exact(delta: i64, kappa: u32) -> Vec<Rational64> {
    let d = delta.max(1) as usize;
    if d <= 1 {
        return Vec::new();
    }
    let k = kappa as i64;
    let rising = |n: i64, p: usize| (0..p as i64).fold(Rational64::one(), |acc, j| acc * Rational64::from(n + j * k));
    let falling = |n: i64| (0..delta).fold(Rational64::one(), |acc, j| acc * Rational64::from(n - j));
    let size = d - 1;
    let mut mat: Vec<Vec<Rational64>> = (1..=size as i64)
        .map(|n| {
            let mut row: Vec<Rational64> = (1..=size).map(|p| rising(n, p)).collect();
            row.push(falling(n) - rising(n, d));
            row
        })
        .collect();
    // Gaussian elimination with exact pivots.
    for c in 0..size {
        let piv = (c..size).find(|&r| !mat[r][c].is_zero()).expect("monomial system is non-singular");
        mat.swap(c, piv);
        let pv = mat[c][c];
        for x in mat[c].iter_mut() {
            *x /= pv;
        }
        for r in 0..size {
            if r != c && !mat[r][c].is_zero() {
                let f = mat[r][c];
                let pivot_row = mat[c].clone();
                for (x, y) in mat[r].iter_mut().zip(pivot_row) {
                    *x -= f * y;
                }
            }
        }
    }
    mat.into_iter().map(|row| row[size]).collect()
}

pub fn a_coeffs(delta: i64, kappa: u32) -> Vec<f64> {
    a_coeffs_exact(delta, kappa).iter().map(|r| *r.numer() as f64 / *r.denom() as f64).collect()
}

/// Checks the expansion on `Tⁿ` for `n = 1..=n_max` in exact arithmetic.
pub fn a_coeffs_identity_holds(delta: i64, kappa: u32, n_max: i64) -> bool {
    let a = a_coeffs_exact(delta, kappa);
    let k = kappa as i64;
    (1..=n_max).all(|n| {
        let lhs = (0..delta).fold(Rational64::one(), |acc, j| acc * Rational64::from(n - j));
        let rising = |p: i64| (0..p).fold(Rational64::one(), |acc, j| acc * Rational64::from(n + j * k));
        let mut rhs = rising(delta);
        for (p, ap) in a.iter().enumerate() {
            rhs += *ap * rising(p as i64 + 1);
        }
        lhs == rhs
    })
}

/// Discretisation of one ray solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m_max: f64,
    pub m_points: usize,
    pub per_decade: usize,
    /// First positive radius as a multiple of the natural scale.
    pub r_min_factor: f64,
    /// Last radius as a multiple of the natural scale.
    pub r_max_factor: f64,
}

impl GridSpec {
    /// Default inner grid: the Laplace damping `e^{−(r/|T|)^κ δ₁}` beats the
    /// admissible growth `e^{ν(r/|ε|^χ)^κ}` by `e^{−37}` at `r_max` for every
    /// `|T| ≤ ρ_X|ε|^χ`.
    pub fn inner_default(p: &ScaleParams, delta1: f64, rho_x: f64) -> Result<Self> {
        let k = p.kappa as f64;
        let net = delta1 / rho_x.powf(k) - p.nu;
        if !(net > 0.0) {
            return Err(Error::Domain(format!(
                "ρ_X = {rho_x} is too large for δ₁ = {delta1} and ν = {}: Laplace integrals diverge",
                p.nu
            )));
        }
        Ok(GridSpec {
            m_max: 20.0 / p.beta,
            m_points: 257,
            per_decade: 25,
            r_min_factor: 1e-6,
            r_max_factor: (37.0 / net).powf(1.0 / k),
        })
    }

    pub fn radial(&self, scale: f64) -> Result<LogGrid> {
        LogGrid::from_range(self.r_min_factor * scale, self.r_max_factor * scale, self.per_decade)
    }
}

/// One linear, `w`-coupled term: `coef(m)·K_a[(κs)^p w]`.
#[derive(Clone, Debug)]
struct LinearTerm {
    coef: Vec<C64>,
    kernel: usize,
    power: i64,
}

/// Precomputed pieces of `H_ε` for one `(ε, ray)`.
#[derive(Clone, Debug)]
pub struct InnerOperator {
    pub eps: C64,
    pub direction: f64,
    pub kappa: u32,
    grid: LogGrid,
    template: RayGrid2D,
    pm: Vec<Vec<C64>>,
    forcing: Vec<Vec<C64>>,
    kernels: Vec<VolterraKernel>,
    linear: Vec<LinearTerm>,
    nonlinear: Vec<(C64, usize)>,
    q1: Vec<C64>,
    q2: Vec<C64>,
    symmetric: bool,
    conv: RayConvolution,
}

fn kernel_index(kernels: &mut Vec<VolterraKernel>, a: f64, kappa: f64, grid: &LogGrid, rho0: f64, keys: &mut Vec<(u64, u64)>) -> usize {
    let key = (a.to_bits(), rho0.to_bits());
    if let Some(i) = keys.iter().position(|k| *k == key) {
        return i;
    }
    keys.push(key);
    kernels.push(VolterraKernel::new(a, kappa, grid, rho0));
    kernels.len() - 1
}

impl InnerOperator {
    pub fn new(eps: C64, spec: &EquationSpec, p: &ScaleParams, direction: f64, gs: &GridSpec) -> Result<Self> {
        if eps.is_zero() {
            return Err(Error::Domain("ε must be nonzero".into()));
        }
        let kappa = p.kappa;
        let kf = kappa as f64;
        let alpha = p.alpha;
        let m0 = spec.m0();
        let scale = eps.norm().powf(p.chi_f());
        let grid = gs.radial(scale)?;
        let template = RayGrid2D::zeros(GridKind::Inner, direction, grid.radii_with_origin(), gs.m_max, gs.m_points, p.clone())?;
        let ms: Vec<f64> = (0..gs.m_points).map(|j| template.m(j)).collect();
        let taus: Vec<C64> = (0..grid.n).map(|i| C64::from_polar(grid.r(i), direction)).collect();

        let mut pm = Vec::with_capacity(grid.n);
        for tau in &taus {
            let row: Vec<C64> = ms.iter().map(|&m| p_m(*tau, m, spec, kappa)).collect();
            if let Some((j, v)) = row.iter().enumerate().find(|(_, v)| v.norm() < 1e-10) {
                return Err(Error::Admissibility(format!(
                    "|P_m(τ)| = {:.3e} at τ = {tau}, m = {} (ray meets a root of P_m)",
                    v.norm(),
                    ms[j]
                )));
            }
            pm.push(row);
        }

        // Forcing: B_j monomials and Ψ_κ.
        let line = template.line();
        let psi = PsiSeries::new(eps, spec, alpha, kappa)?;
        let cf = spec.cf_line(&line);
        let mut forcing = vec![vec![C64::zero(); ms.len()]; grid.n];
        for (i, tau) in taus.iter().enumerate() {
            let ps = if spec.forcing.c_f.is_zero() { C64::zero() } else { psi.eval(*tau)? };
            for (j, f) in forcing[i].iter_mut().enumerate() {
                *f = cf.values()[j] * ps;
            }
        }
        for j in 0..=spec.q_count {
            let bl = spec.b_line(j, &line);
            let e = Rational64::from(spec.n_exp[j]) - alpha * spec.b_exp[j];
            let c = cpow_rat(eps, e) / gamma_fn(spec.b_exp[j] as f64 / kf)?;
            for (i, tau) in taus.iter().enumerate() {
                let tb = c * tau.powi(spec.b_exp[j] as i32);
                for (jj, f) in forcing[i].iter_mut().enumerate() {
                    *f += bl.values()[jj] * tb;
                }
            }
        }

        let mut kernels = Vec::new();
        let mut keys = Vec::new();
        let mut linear = Vec::new();
        let sym = |poly: &Polynomial| -> Vec<C64> { ms.iter().map(|&m| poly.symbol(m)).collect() };
        let qs = sym(&spec.q_poly);
        for l in 1..=spec.q {
            let e = Rational64::from(spec.m_exp[l] - m0) - alpha * spec.k_exp[l - 1];
            let c = -spec.a[l] * cpow_rat(eps, e);
            if c.is_zero() {
                continue;
            }
            let a = spec.k_exp[l - 1] as f64 / kf;
            let kernel = kernel_index(&mut kernels, a, kf, &grid, 1.0, &mut keys);
            linear.push(LinearTerm { coef: qs.iter().map(|q| q * c).collect(), kernel, power: 0 });
        }
        let (_, _, dd) = spec.top();
        let rd = sym(spec.r_top());
        for (pi, ap) in a_coeffs(dd, kappa).iter().enumerate() {
            let pw = pi as i64 + 1;
            let kernel = kernel_index(&mut kernels, (dd - pw) as f64, kf, &grid, 1.0 + kf * pw as f64, &mut keys);
            linear.push(LinearTerm { coef: rd.iter().map(|r| r * *ap).collect(), kernel, power: pw });
        }
        for l in 0..spec.d_terms - 1 {
            let dl = spec.delta_exp[l];
            let dlk = spec.d_exp[l] - dl * (kappa as i64 + 1);
            let e = Rational64::from(spec.delta[l] - m0) + alpha * (dl - spec.d_exp[l]);
            let c = cpow_rat(eps, e);
            let rl: Vec<C64> = sym(&spec.r_poly[l]).iter().map(|r| r * c).collect();
            if rl.iter().all(|v| v.is_zero()) {
                continue;
            }
            let kernel = kernel_index(&mut kernels, dlk as f64 / kf, kf, &grid, 1.0 + kf * dl as f64, &mut keys);
            linear.push(LinearTerm { coef: rl.clone(), kernel, power: dl });
            for (pi, ap) in a_coeffs(dl, kappa).iter().enumerate() {
                let pw = pi as i64 + 1;
                let a = (dlk as f64 + kf * (dl - pw) as f64) / kf;
                let kernel = kernel_index(&mut kernels, a, kf, &grid, 1.0 + kf * pw as f64, &mut keys);
                linear.push(LinearTerm { coef: rl.iter().map(|r| r * *ap).collect(), kernel, power: pw });
            }
        }
        let mut nonlinear = Vec::new();
        for l in 0..=spec.m_terms {
            let e = Rational64::from(spec.mu_exp[l] - 2 * m0) - alpha * spec.h_exp[l];
            let c = -spec.c[l] * cpow_rat(eps, e);
            if c.is_zero() {
                continue;
            }
            let kernel = kernel_index(&mut kernels, spec.h_exp[l] as f64 / kf, kf, &grid, 2.0, &mut keys);
            nonlinear.push((c, kernel));
        }
        Ok(InnerOperator {
            eps,
            direction,
            kappa,
            conv: RayConvolution::new(kf, &grid, 1.0),
            grid,
            template,
            pm,
            forcing,
            kernels,
            linear,
            nonlinear,
            q1: sym(&spec.q1_poly),
            q2: sym(&spec.q2_poly),
            symmetric: spec.q1_poly == spec.q2_poly,
        })
    }

    /// A zero grid with this operator's shape.
    pub fn zero(&self) -> RayGrid2D {
        self.template.clone()
    }

    /// `(B-monomials + Ψ_κ)/P_m`, i.e. `H_ε(0)`.
    pub fn forcing_image(&self) -> RayGrid2D {
        let mut out = self.template.clone();
        for i in 0..self.grid.n {
            for (j, v) in out.values[i + 1].iter_mut().enumerate() {
                *v = self.forcing[i][j] / self.pm[i][j];
            }
        }
        out
    }

    /// The raw forcing `B-monomials + Ψ_κ` (before division by `P_m`).
    pub fn forcing_grid(&self) -> RayGrid2D {
        let mut out = self.template.clone();
        for i in 0..self.grid.n {
            out.values[i + 1].clone_from(&self.forcing[i]);
        }
        out
    }

    /// `(κ τ^κ)^p` at positive node `i`.
    fn irregular_weight(&self, i: usize, p: i64) -> C64 {
        let k = self.kappa as f64;
        C64::from_polar(k * self.grid.r(i).powf(k), k * self.direction).powi(p as i32)
    }

    /// Numerator of `H_ε(w)` without the forcing, column by column.
    fn coupled_numerator(&self, w: &RayGrid2D, with_nonlinear: bool) -> Vec<Vec<C64>> {
        let nm = w.m_points;
        let n = self.grid.n;
        let weights: Vec<Vec<C64>> = self
            .linear
            .iter()
            .map(|t| (0..n).map(|i| self.irregular_weight(i, t.power)).collect())
            .collect();
        let mut cols: Vec<Vec<C64>> = (0..nm)
            .into_par_iter()
            .map(|j| {
                let col = w.column(j);
                let mut acc = vec![C64::zero(); n];
                for (t, wt) in self.linear.iter().zip(&weights) {
                    let g: Vec<C64> = col.iter().zip(wt).map(|(a, b)| a * b).collect();
                    let out = monomial_kernel(&self.grid, self.direction, &self.kernels[t.kernel], &g);
                    for (a, o) in acc.iter_mut().zip(out) {
                        *a += o * t.coef[j];
                    }
                }
                acc
            })
            .collect();
        if with_nonlinear && !self.nonlinear.is_empty() && w.max_abs() > 0.0 {
            let v = nonlinear_rows(&self.conv, w, &self.q1, &self.q2, self.symmetric);
            let add: Vec<Vec<C64>> = (0..nm)
                .into_par_iter()
                .map(|j| {
                    let col: Vec<C64> = v.iter().map(|row| row[j]).collect();
                    let mut acc = vec![C64::zero(); n];
                    for (c, k) in &self.nonlinear {
                        let out = monomial_kernel(&self.grid, self.direction, &self.kernels[*k], &col);
                        for (a, o) in acc.iter_mut().zip(out) {
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

    fn assemble(&self, cols: Vec<Vec<C64>>, with_forcing: bool) -> Result<RayGrid2D> {
        let mut out = self.template.clone();
        for i in 0..self.grid.n {
            for (j, v) in out.values[i + 1].iter_mut().enumerate() {
                let f = if with_forcing { self.forcing[i][j] } else { C64::zero() };
                *v = (cols[j][i] + f) / self.pm[i][j];
            }
        }
        if !out.is_finite() {
            return Err(Error::Overflow { log_exponent: f64::INFINITY });
        }
        Ok(out)
    }

    /// `H_ε(w)`.
    pub fn apply(&self, w: &RayGrid2D) -> Result<RayGrid2D> {
        if !w.same_shape(&self.template) {
            return Err(Error::GridCoverage("w does not live on this operator's grid".into()));
        }
        self.assemble(self.coupled_numerator(w, true), true)
    }

    /// Linear part `L(w) = H_ε(w) − H_ε(0)` with the nonlinear term dropped.
    pub fn apply_linear(&self, w: &RayGrid2D) -> Result<RayGrid2D> {
        self.assemble(self.coupled_numerator(w, false), false)
    }
}

/// `C[(2π)^{−1/2} (Q₁w) ∗ (Q₂w)]` at the positive nodes: m-convolutions by
/// FFT, with the ray quadrature carried out on the spectra.
pub(crate) fn nonlinear_rows(conv: &RayConvolution, w: &RayGrid2D, q1: &[C64], q2: &[C64], symmetric: bool) -> Vec<Vec<C64>> {
    let fc = FftConvolver::new(w.m_points);
    let spectra = |q: &[C64]| -> Vec<Vec<C64>> {
        w.values[1..]
            .par_iter()
            .map(|row| fc.transform(&row.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>()))
            .collect()
    };
    let f = spectra(q1);
    let g = if symmetric { f.clone() } else { spectra(q2) };
    let out = conv.apply(&f, &g, symmetric, |x, y| x.iter().zip(y).map(|(a, b)| a * b).collect());
    let h = w.m_spacing() * INV_SQRT_2PI;
    out.into_par_iter().map(|sp| fc.finish(sp, h)).collect()
}

/// `Ψ_κ(τ, m, ε)` sampled on `shape`'s grid.
pub fn forcing_psi(eps: C64, spec: &EquationSpec, p: &ScaleParams, shape: &RayGrid2D) -> Result<RayGrid2D> {
    let mut out = shape.zeros_like();
    if spec.forcing.c_f.is_zero() || spec.forcing.f1.is_zero() {
        return Ok(out);
    }
    let psi = PsiSeries::new(eps, spec, p.alpha, p.kappa)?;
    let cf = spec.cf_line(&shape.line());
    for i in 1..shape.n_r() {
        let s = psi.eval(shape.tau(i))?;
        for (j, v) in out.values[i].iter_mut().enumerate() {
            *v = cf.values()[j] * s;
        }
    }
    Ok(out)
}

/// `H_ε(w)` through a freshly built operator on `w`'s grid.
pub fn apply_h(w: &RayGrid2D, eps: C64, spec: &EquationSpec, p: &ScaleParams, gs: &GridSpec) -> Result<RayGrid2D> {
    InnerOperator::new(eps, spec, p, w.direction, gs)?.apply(w)
}

/// Outcome of a Picard iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResult {
    pub solution: RayGrid2D,
    /// Picard steps until the increment test passed (the confirming step is not counted).
    pub iterations: usize,
    pub residual_norm: f64,
    pub contraction_ratios: Vec<f64>,
    pub increments: Vec<f64>,
    pub eps: C64,
    /// Centre of the branch of `arg ε` used for fractional powers.
    pub eps_ref: f64,
    pub delta1: f64,
    pub tol: f64,
}

/// Iteration controls shared by both solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { tol: 1e-9, max_iter: 200 }
    }
}

/// Picard iteration `w_{k+1} = H(w_k)` from `w₀`.
///
/// Stops once `‖w_{k+1} − w_k‖ < tol·‖w_{k+1}‖` after at least two steps (a
/// purely relative test: the solutions are tiny in absolute terms). Three
/// consecutive ratios `≥ 1` abort with a divergence error.
pub fn picard<A, N>(w0: RayGrid2D, apply: A, norm: N, cfg: &SolveConfig, eps: C64, delta1: f64) -> Result<FixedPointResult>
where
    A: Fn(&RayGrid2D) -> Result<RayGrid2D>,
    N: Fn(&RayGrid2D) -> f64,
{
    let mut w = w0;
    let mut increments: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut bad = 0;
    for k in 1..=cfg.max_iter {
        let next = apply(&w)?;
        let inc = norm(&next.sub(&w)?);
        let size = norm(&next);
        if let Some(&prev) = increments.last() {
            let r = if prev > 0.0 { inc / prev } else { 0.0 };
            ratios.push(r);
            bad = if r >= 1.0 { bad + 1 } else { 0 };
            if bad >= 3 {
                return Err(Error::PicardDivergence { iterations: k, ratio: r });
            }
        }
        increments.push(inc);
        let converged = inc <= cfg.tol * size || size == 0.0;
        w = next;
        if k >= 2 && converged {
            let residual_norm = norm(&apply(&w)?.sub(&w)?);
            return Ok(FixedPointResult {
                solution: w,
                iterations: k - 1,
                residual_norm,
                contraction_ratios: ratios,
                increments,
                eps,
                eps_ref: 0.0,
                delta1,
                tol: cfg.tol,
            });
        }
    }
    Err(Error::NonConvergence { iterations: cfg.max_iter, increment: increments.last().copied().unwrap_or(f64::NAN) })
}

/// Ray and grid of one inner solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerRun {
    pub direction: f64,
    pub delta1: f64,
    pub grid: GridSpec,
    pub solve: SolveConfig,
}

/// Solves `H_ε(ω) = ω` on the ray of `run`.
pub fn solve_inner(eps: C64, spec: &EquationSpec, p: &ScaleParams, run: &InnerRun) -> Result<FixedPointResult> {
    let op = InnerOperator::new(eps, spec, p, run.direction, &run.grid)?;
    picard(op.zero(), |w| op.apply(w), |w| fnorm(w, eps), &run.solve, eps, run.delta1)
}

/// Per-frequency Laplace values `κ ∫_{L_γ} ω(u, m) e^{−(u/T)^κ} du/u`.
pub fn inner_laplace_line(fp: &FixedPointResult, big_t: C64) -> Result<Vec<C64>> {
    let w = &fp.solution;
    let k = w.scale.kappa as f64;
    let c = (k * (w.direction - big_t.arg())).cos();
    if c < fp.delta1 || big_t.is_zero() {
        return Err(Error::Sector(format!(
            "cos(κ(γ − arg T)) = {c:.4} below δ₁ = {} (γ = {:.4}, arg T = {:.4})",
            fp.delta1,
            w.direction,
            big_t.arg()
        )));
    }
    let grid = w.log_grid()?;
    let damp: Vec<C64> = (1..w.n_r()).map(|i| (-(w.tau(i) / big_t).powf(k)).exp() * k).collect();
    let last = damp.last().unwrap().norm();
    if last > 1e-13 {
        return Err(Error::GridCoverage(format!(
            "Laplace damping at the end of the ray is only {last:.3e}; |T| exceeds the grid's reach"
        )));
    }
    let n = damp.len();
    Ok((0..w.m_points)
        .map(|j| {
            let mut acc = C64::zero();
            for (i, d) in damp.iter().enumerate() {
                let wt = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                acc += w.values[i + 1][j] * d * wt;
            }
            // Sub-grid continuation ∝ r: ∫₀^{r₁} dr = r₁.
            acc * grid.h + w.values[1][j] * damp[0]
        })
        .collect())
}

fn invert_with_symbol(w: &RayGrid2D, lap: &[C64], symbol: Option<&Polynomial>, z: C64) -> C64 {
    let line = w.line();
    let vals = match symbol {
        Some(poly) => lap.iter().enumerate().map(|(j, v)| v * poly.symbol(w.m(j))).collect(),
        None => lap.to_vec(),
    };
    inverse_fourier(&line.with_values(vals).expect("same grid"), z)
}

/// `u(t, z, ε) = ε^{−m₀}(κ/√2π)∬ ω_κ(u, m, ε) e^{−(u/(ε^α t))^κ} e^{izm} du/u dm`,
/// or `p(∂_z)u` when a symbol is given.
pub fn inner_solution_with(t: C64, z: C64, fp: &FixedPointResult, m0: i64, symbol: Option<&Polynomial>) -> Result<C64> {
    let p = &fp.solution.scale;
    let big_t = cpow_rat(fp.eps, p.alpha) * t;
    let lap = inner_laplace_line(fp, big_t)?;
    Ok(fp.eps.powi(-(m0 as i32)) * invert_with_symbol(&fp.solution, &lap, symbol, z))
}

pub fn inner_solution(t: C64, z: C64, fp: &FixedPointResult, spec: &EquationSpec) -> Result<C64> {
    inner_solution_with(t, z, fp, spec.m0(), None)
}

/// Relative residual of the PDE at `(t, z)` for a solution given by its
/// per-frequency Laplace lines: `lines(t)` returns the sheet on which the
/// symbols `Q, Q₁, Q₂, R_l` act before Fourier inversion, and `prefactor`
/// converts the inverted value into `u`.
pub(crate) fn pde_residual<L>(
    t: C64,
    z: C64,
    eps: C64,
    eps_ref: f64,
    spec: &EquationSpec,
    grid: &RayGrid2D,
    lines: L,
    theta_delta: Option<f64>,
) -> Result<f64>
where
    L: Fn(C64) -> Result<Vec<C64>>,
{
    let h = C64::from_polar(1e-3 * t.norm(), t.arg());
    let sheets: Vec<Vec<C64>> = (0..5).map(|j| lines(t + h * (j as f64 - 2.0))).collect::<Result<_>>()?;
    let eval = |sheet: &[C64], poly: &Polynomial| invert_with_symbol(grid, sheet, Some(poly), z);
    let at_centre = |poly: &Polynomial| eval(&sheets[2], poly);
    let line = grid.line();

    let mut terms: Vec<(C64, bool)> = Vec::new(); // (value, on left side)
    terms.push((eval_p(t, eps, spec) * at_centre(&spec.q_poly), true));
    let mut cpoly = C64::zero();
    for l in 0..=spec.m_terms {
        cpoly += spec.c[l] * eps.powi(spec.mu_exp[l] as i32) * t.powi(spec.h_exp[l] as i32);
    }
    terms.push((cpoly * at_centre(&spec.q1_poly) * at_centre(&spec.q2_poly), true));
    for j in 0..=spec.q_count {
        let bj = inverse_fourier(&spec.b_line(j, &line), z);
        terms.push((bj * eps.powi(spec.n_exp[j] as i32) * t.powi(spec.b_exp[j] as i32), false));
    }
    terms.push((forcing_f_direct(t, z, eps, eps_ref, spec, &line, theta_delta)?, false));
    for l in 0..spec.d_terms {
        let samples: [C64; 5] = std::array::from_fn(|j| eval(&sheets[j], &spec.r_poly[l]));
        let d = fd_derivative(&samples, h, spec.delta_exp[l] as usize)?;
        terms.push((eps.powi(spec.delta[l] as i32) * t.powi(spec.d_exp[l] as i32) * d, false));
    }
    let scale = terms.iter().map(|(v, _)| v.norm()).fold(0.0, f64::max);
    let res: C64 = terms.iter().map(|(v, lhs)| if *lhs { *v } else { -*v }).sum();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(res.norm() / scale)
}

/// Relative PDE residual of the synthesised inner solution at `(t, z)`
/// (five-point differences in `t` with step `10⁻³|t|`, symbols in `m`).
pub fn inner_pde_residual(t: C64, z: C64, fp: &FixedPointResult, spec: &EquationSpec) -> Result<f64> {
    let p = &fp.solution.scale;
    let ea = cpow_rat(fp.eps, p.alpha);
    let pre = fp.eps.powi(-(spec.m0() as i32));
    pde_residual(
        t,
        z,
        fp.eps,
        fp.eps_ref,
        spec,
        &fp.solution,
        |tt| Ok(inner_laplace_line(fp, ea * tt)?.into_iter().map(|v| v * pre).collect()),
        None,
    )
}

// ---------------------------------------------------------------------------
// Persistence: one JSON header line, then CSV rows (i, r, j, m, re, im).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Header {
    kind: GridKind,
    eps: [f64; 2],
    #[serde(default)]
    eps_ref: f64,
    direction: f64,
    iterations: usize,
    residual_norm: f64,
    contraction_ratios: Vec<f64>,
    increments: Vec<f64>,
    delta1: f64,
    tol: f64,
    m_max: f64,
    m_points: usize,
    r_nodes: usize,
    scale: ScaleParams,
}

#[derive(Serialize, Deserialize)]
struct Row {
    i: usize,
    r: f64,
    j: usize,
    m: f64,
    re: f64,
    im: f64,
}

impl FixedPointResult {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let s = &self.solution;
        let header = Header {
            kind: s.kind,
            eps: [self.eps.re, self.eps.im],
            eps_ref: self.eps_ref,
            direction: s.direction,
            iterations: self.iterations,
            residual_norm: self.residual_norm,
            contraction_ratios: self.contraction_ratios.clone(),
            increments: self.increments.clone(),
            delta1: self.delta1,
            tol: self.tol,
            m_max: s.m_max,
            m_points: s.m_points,
            r_nodes: s.n_r(),
            scale: s.scale.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        let mut wr = csv::Writer::from_writer(out);
        for (i, row) in s.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                wr.serialize(Row { i, r: s.r_grid[i], j, m: s.m(j), re: v.re, im: v.im })?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut br = BufReader::new(input);
        let mut first = String::new();
        br.read_line(&mut first)?;
        let h: Header = serde_json::from_str(first.trim())?;
        let mut r_grid = vec![0.0; h.r_nodes];
        let mut values = vec![vec![C64::zero(); h.m_points]; h.r_nodes];
        let mut rd = csv::Reader::from_reader(br);
        let mut count = 0;
        for rec in rd.deserialize() {
            let row: Row = rec?;
            if row.i >= h.r_nodes || row.j >= h.m_points {
                return Err(Error::Parse(format!("row index ({}, {}) outside the header's shape", row.i, row.j)));
            }
            r_grid[row.i] = row.r;
            values[row.i][row.j] = C64::new(row.re, row.im);
            count += 1;
        }
        if count != h.r_nodes * h.m_points {
            return Err(Error::Parse(format!("expected {} rows, found {count}", h.r_nodes * h.m_points)));
        }
        let mut solution = RayGrid2D::zeros(h.kind, h.direction, r_grid, h.m_max, h.m_points, h.scale)?;
        solution.values = values;
        Ok(FixedPointResult {
            solution,
            iterations: h.iterations,
            residual_norm: h.residual_norm,
            contraction_ratios: h.contraction_ratios,
            increments: h.increments,
            eps: C64::new(h.eps[0], h.eps[1]),
            eps_ref: h.eps_ref,
            delta1: h.delta1,
            tol: h.tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_coefficients_small_cases() {
        assert!(a_coeffs(1, 1).is_empty());
        // (T²∂)² = T⁴∂² + 2T³∂
        assert_eq!(a_coeffs(2, 1), vec![-2.0]);
        for d in 1..=5 {
            for k in 1..=3 {
                assert!(a_coeffs_identity_holds(d, k, 2 * d + 2), "δ={d} κ={k}");
            }
        }
    }
}
