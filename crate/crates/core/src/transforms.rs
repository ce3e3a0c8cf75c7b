//! m_κ-Borel and Laplace transforms, the classical Laplace transform, and the
//! special functions used in the bounds (Gamma, Mittag-Leffler).
//!
//! Conventions: the m_κ-Borel transform of `Σ_{n≥1} a_n T^n` is
//! `Σ a_n τ^n / Γ(n/κ)`; the m_κ-Laplace transform along the ray `L_γ` is
//! `κ ∫_{L_γ} w(u) e^{−(u/T)^κ} du/u`.  Fractional powers of complex numbers
//! use the principal branch everywhere.

use std::io::Write;

use num::complex::Complex64;
use num::rational::Rational64;
use num::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{log_trapezoid, LogGrid, RayConvolution, VolterraKernel};

type C64 = Complex64;

/// Truncated formal series `Σ_{n=1}^{N} a_n T^n`; `coeffs[0]` is `a_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FormalSeries {
    pub coeffs: Vec<C64>,
}

impl FormalSeries {
    pub fn new(coeffs: Vec<C64>) -> Self {
        FormalSeries { coeffs }
    }

    /// `c T^n` (n ≥ 1).
    pub fn monomial(n: usize, c: C64) -> Self {
        assert!(n >= 1, "series start at n = 1");
        let mut coeffs = vec![C64::zero(); n];
        coeffs[n - 1] = c;
        FormalSeries { coeffs }
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficient of `T^n` (zero beyond the truncation).
    pub fn coeff(&self, n: usize) -> C64 {
        if n == 0 {
            return C64::zero();
        }
        self.coeffs.get(n - 1).copied().unwrap_or_default()
    }

    /// Sums the series at `x`.
    pub fn eval(&self, x: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::zero(), |acc, &c| (acc + c) * x)
    }

    /// `T^{κ+1} ∂_T` applied termwise.
    pub fn irregular(&self, kappa: u32) -> FormalSeries {
        let k = kappa as usize;
        let mut out = vec![C64::zero(); self.coeffs.len() + k];
        for (i, &a) in self.coeffs.iter().enumerate() {
            let n = i + 1;
            out[n + k - 1] = a * n as f64;
        }
        FormalSeries { coeffs: out }
    }
}

/// `a_n ↦ a_n / Γ(n/κ)`.
pub fn mk_borel(s: &FormalSeries, kappa: u32) -> FormalSeries {
    let k = kappa as f64;
    let coeffs = s
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &a)| if a.is_zero() { a } else { a / gamma_fn((i + 1) as f64 / k).unwrap() })
        .collect();
    FormalSeries { coeffs }
}

/// Exact (rational) bookkeeping of Borel images: the coefficient of `τ^n` is
/// `coeff / Γ(gamma_arg)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactBorelTerm {
    pub n: usize,
    pub coeff: Rational64,
    pub gamma_arg: Rational64,
}

/// Exact m_κ-Borel image of a rational series `Σ a_n T^n`.
pub fn mk_borel_exact(coeffs: &[Rational64], kappa: u32) -> Vec<ExactBorelTerm> {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(i, &c)| ExactBorelTerm {
            n: i + 1,
            coeff: c,
            gamma_arg: Rational64::new((i + 1) as i64, kappa as i64),
        })
        .collect()
}

/// Rewrites `c/Γ(x)` as `c'/Γ(x')` with `x' ∈ (0, 1]` using `Γ(x+1) = xΓ(x)`,
/// so that two exact terms can be compared by equality.
pub fn normalize_gamma(mut t: ExactBorelTerm) -> ExactBorelTerm {
    let one = Rational64::one();
    while t.gamma_arg > one {
        t.gamma_arg -= one;
        t.coeff /= t.gamma_arg;
    }
    t
}

/// Series route: `B(T^{κ+1}∂_T f̂)`; operator route: `κτ^κ B(f̂)`.  Both are
/// returned normalised, so the identity holds iff the vectors are equal.
pub fn irregular_identity_exact(coeffs: &[Rational64], kappa: u32) -> (Vec<ExactBorelTerm>, Vec<ExactBorelTerm>) {
    let k = kappa as usize;
    let mut shifted = vec![Rational64::zero(); coeffs.len() + k];
    for (i, &a) in coeffs.iter().enumerate() {
        shifted[i + k] = a * Rational64::from_integer((i + 1) as i64);
    }
    let series = mk_borel_exact(&shifted, kappa).into_iter().map(normalize_gamma).collect();
    let operator = mk_borel_exact(coeffs, kappa)
        .into_iter()
        .map(|t| {
            normalize_gamma(ExactBorelTerm {
                n: t.n + k,
                coeff: t.coeff * Rational64::from_integer(kappa as i64),
                gamma_arg: t.gamma_arg,
            })
        })
        .collect();
    (series, operator)
}

/// Samples of a function along the ray `τ = r e^{i·direction}`, `r_grid[0] = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RayFunction {
    pub direction: f64,
    pub r_grid: Vec<f64>,
    pub values: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct RayHeader {
    direction: f64,
    kappa: u32,
    nodes: usize,
}

#[derive(Serialize)]
struct RayRow {
    r: f64,
    re: f64,
    im: f64,
}

/// Default number of geometric nodes of a ray grid.
pub const DEFAULT_RAY_NODES: usize = 400;

impl RayFunction {
    pub fn new(direction: f64, r_grid: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if r_grid.is_empty() || r_grid[0] != 0.0 {
            return Err(Error::Structural("ray grid must start at r = 0".into()));
        }
        if r_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Structural("ray grid must be strictly increasing".into()));
        }
        if values.len() != r_grid.len() {
            return Err(Error::Structural("ray grid and values differ in length".into()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Structural("non-finite ray value".into()));
        }
        Ok(RayFunction { direction, r_grid, values })
    }

    /// Geometric ray grid: `r = 0` plus `n` nodes from `10⁻⁴ R` to `R`.
    pub fn geometric_grid(r_max: f64, n: usize) -> Vec<f64> {
        LogGrid::spanning(1e-4 * r_max, r_max, n).expect("valid grid").radii_with_origin()
    }

    /// Samples `f(τ)` at `τ = r e^{id}` on the default geometric grid.
    pub fn from_fn(direction: f64, r_max: f64, f: impl Fn(C64) -> C64) -> Self {
        Self::from_fn_on(direction, Self::geometric_grid(r_max, DEFAULT_RAY_NODES), f)
    }

    pub fn from_fn_on(direction: f64, r_grid: Vec<f64>, f: impl Fn(C64) -> C64) -> Self {
        let values = r_grid.iter().map(|&r| f(C64::from_polar(r, direction))).collect();
        RayFunction { direction, r_grid, values }
    }

    pub fn tau(&self, i: usize) -> C64 {
        C64::from_polar(self.r_grid[i], self.direction)
    }

    pub fn log_grid(&self) -> Result<LogGrid> {
        LogGrid::detect(&self.r_grid)
    }

    fn with_values(&self, values: Vec<C64>) -> RayFunction {
        RayFunction { direction: self.direction, r_grid: self.r_grid.clone(), values }
    }

    pub fn write_csv<W: Write>(&self, mut w: W, kappa: u32) -> Result<()> {
        let header = RayHeader { direction: self.direction, kappa, nodes: self.r_grid.len() };
        writeln!(w, "# {}", serde_json::to_string(&header)?)?;
        let mut wr = csv::Writer::from_writer(w);
        for (r, v) in self.r_grid.iter().zip(&self.values) {
            wr.serialize(RayRow { r: *r, re: v.re, im: v.im })?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Exponent `p` of the local power law `|w| ∼ r^p` from the first two nodes,
/// clamped to a sane range (used for the sub-grid continuation).
///
/// Borel-plane data behave like `τ^{n/κ}` at the origin, so an estimate close
/// to a multiple of 1/12 is snapped onto it.  This keeps the transforms exactly
/// linear across inputs that share a leading power.
fn local_power(r: &[f64], v: &[C64]) -> f64 {
    let (a, b) = (v[1].norm(), v[2].norm());
    if a > 0.0 && b > 0.0 {
        let raw = ((b / a).ln() / (r[2] / r[1]).ln()).clamp(0.25, 40.0);
        let snapped = (12.0 * raw).round() / 12.0;
        if (raw - snapped).abs() < 0.02 {
            snapped
        } else {
            raw
        }
    } else {
        1.0
    }
}

/// Checks that the damped integrand has actually decayed at the end of the grid.
fn check_tail(vals: &[C64], what: &str) -> Result<()> {
    let peak = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let last = vals.last().map(|v| v.norm()).unwrap_or(0.0);
    if peak > 0.0 && last > 1e-10 * peak {
        return Err(Error::Divergence(format!(
            "{what}: integrand not damped at the end of the ray grid (|tail|/peak = {:.3e})",
            last / peak
        )));
    }
    Ok(())
}

/// `κ ∫_{L_d} w(u) e^{−(u/T)^κ} du/u` with the sector condition
/// `cos(κ(d − arg T)) ≥ Δ` checked first.
pub fn mk_laplace(w: &RayFunction, t: C64, kappa: u32, delta: f64) -> Result<C64> {
    let k = kappa as f64;
    let c = (k * (w.direction - t.arg())).cos();
    if c < delta || t.is_zero() {
        return Err(Error::Sector(format!(
            "cos(κ(d − arg T)) = {c:.4} below Δ = {delta} (d = {}, arg T = {})",
            w.direction,
            t.arg()
        )));
    }
    if w.values.iter().all(|v| v.is_zero()) {
        return Ok(C64::zero());
    }
    let grid = w.log_grid()?;
    let vals: Vec<C64> = (1..w.r_grid.len())
        .map(|i| {
            let u = w.tau(i);
            w.values[i] * (-(u / t).powf(k)).exp() * k
        })
        .collect();
    check_tail(&vals, "m_κ-Laplace")?;
    let p = local_power(&w.r_grid, &w.values);
    Ok(log_trapezoid(&grid, &vals, p))
}

/// `κ τ^κ w(τ)`: Borel image of `T^{κ+1}∂_T`.
pub fn borel_identity_irregular(w: &RayFunction, kappa: u32) -> RayFunction {
    let k = kappa as f64;
    let vals = (0..w.r_grid.len()).map(|i| w.values[i] * w.tau(i).powf(k) * k).collect();
    w.with_values(vals)
}

/// Toeplitz evaluation of the monomial kernel on a ray, `a = m/κ`:
/// `(τ^κ/Γ(a)) ∫₀^{τ^κ} (τ^κ − s)^{a−1} g(s^{1/κ}) ds/s`, for values `g` at the
/// positive nodes.  `rho0` is the power-law exponent of `g` at the origin.
pub fn monomial_kernel(
    grid: &LogGrid,
    direction: f64,
    kernel: &VolterraKernel,
    g: &[C64],
) -> Vec<C64> {
    let a = kernel.a;
    let k = kernel.kappa;
    let phase = C64::from_polar(1.0, k * direction * a);
    let pref = phase * (k / gamma_fn(a).unwrap());
    kernel
        .apply(g)
        .into_iter()
        .enumerate()
        .map(|(i, v)| v * pref * grid.r(i).powf(k * a))
        .collect()
}

/// Borel image of multiplication by `T^m`:
/// `(τ^κ/Γ(m/κ)) ∫₀^{τ^κ} (τ^κ − s)^{m/κ−1} w(s^{1/κ}) ds/s`.
pub fn borel_identity_monomial(w: &RayFunction, m: u32, kappa: u32) -> Result<RayFunction> {
    let grid = w.log_grid()?;
    let rho0 = local_power(&w.r_grid, &w.values);
    let ker = VolterraKernel::new(m as f64 / kappa as f64, kappa as f64, &grid, rho0);
    let out = monomial_kernel(&grid, w.direction, &ker, &w.values[1..]);
    Ok(w.with_values(std::iter::once(C64::zero()).chain(out).collect()))
}

/// Borel image of a product of series:
/// `τ^κ ∫₀^{τ^κ} f((τ^κ − s)^{1/κ}) g(s^{1/κ}) ds/((τ^κ − s)s)`.
pub fn borel_identity_cauchy(f: &RayFunction, g: &RayFunction, kappa: u32) -> Result<RayFunction> {
    if f.r_grid != g.r_grid || f.direction != g.direction {
        return Err(Error::Structural("Cauchy identity operands must share a ray grid".into()));
    }
    let grid = f.log_grid()?;
    let rho0 = local_power(&g.r_grid, &g.values).min(local_power(&f.r_grid, &f.values));
    let conv = RayConvolution::new(kappa as f64, &grid, rho0);
    let fv: Vec<Vec<C64>> = f.values[1..].iter().map(|&v| vec![v]).collect();
    let gv: Vec<Vec<C64>> = g.values[1..].iter().map(|&v| vec![v]).collect();
    let out = conv.apply(&fv, &gv, false, |x, y| vec![x[0] * y[0]]);
    Ok(f.with_values(std::iter::once(C64::zero()).chain(out.into_iter().map(|v| v[0])).collect()))
}

/// Exponential growth rate of `w` estimated on the outer quarter of its grid.
pub fn growth_rate(w: &RayFunction) -> f64 {
    let rmax = *w.r_grid.last().unwrap();
    w.r_grid
        .iter()
        .zip(&w.values)
        .filter(|(r, v)| **r >= 0.25 * rmax && v.norm() > 1.0)
        .map(|(r, v)| v.norm().ln() / r)
        .fold(0.0, f64::max)
}

/// Classical Laplace transform `∫_{L_d} w(τ) e^{−tτ} dτ`, requiring
/// `cos(d + arg t) ≥ δ₁` and `|t| > K/δ₁` for the measured growth rate `K`.
pub fn classical_laplace(w: &RayFunction, t: C64, delta1: f64) -> Result<C64> {
    let c = (w.direction + t.arg()).cos();
    if c < delta1 || t.is_zero() {
        return Err(Error::Sector(format!(
            "cos(d + arg t) = {c:.4} below δ₁ = {delta1} (d = {}, arg t = {})",
            w.direction,
            t.arg()
        )));
    }
    let k = growth_rate(w);
    if t.norm() <= k / delta1 {
        return Err(Error::Sector(format!("|t| = {} does not exceed K/δ₁ = {}", t.norm(), k / delta1)));
    }
    if w.values.iter().all(|v| v.is_zero()) {
        return Ok(C64::zero());
    }
    let grid = w.log_grid()?;
    let e = C64::from_polar(1.0, w.direction);
    let vals: Vec<C64> = (1..w.r_grid.len())
        .map(|i| w.values[i] * (-t * w.tau(i)).exp() * w.r_grid[i])
        .collect();
    check_tail(&vals, "Laplace")?;
    // r·w(r) vanishes like r^{p+1} at the origin.
    let p = if w.values[0].is_zero() { local_power(&w.r_grid, &w.values) + 1.0 } else { 1.0 };
    Ok(log_trapezoid(&grid, &vals, p) * e)
}

/// Gamma function (Lanczos approximation).
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("Gamma is evaluated on positive reals only, got {x}")));
    }
    Ok(statrs::function::gamma::gamma(x))
}

/// Mittag-Leffler function `E_β(x) = Σ_{n≥0} xⁿ/Γ(1+βn)` by partial sums.
///
/// Terms are formed in log space; summation stops once the next term falls
/// below `10⁻¹⁵` of the partial sum.  Fails if the growth bound `e^{x^{1/β}}`
/// leaves the double range or if `n_max` terms do not suffice.
pub fn mittag_leffler(beta: f64, x: f64, n_max: usize) -> Result<f64> {
    if !(beta > 0.0) || !(x >= 0.0) {
        return Err(Error::Domain(format!("E_β(x) needs β > 0 and x ≥ 0, got β = {beta}, x = {x}")));
    }
    let log_bound = x.powf(1.0 / beta);
    if log_bound > 700.0 {
        return Err(Error::Overflow { log_exponent: log_bound });
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let lx = x.ln();
    let mut sum = 0.0;
    for n in 0..n_max {
        let term = (n as f64 * lx - statrs::function::gamma::ln_gamma(1.0 + beta * n as f64)).exp();
        sum += term;
        let next = ((n + 1) as f64 * lx - statrs::function::gamma::ln_gamma(1.0 + beta * (n + 1) as f64)).exp();
        // Past the peak of the terms, stop when the next term is negligible.
        if next < 1e-15 * sum && next < term {
            return Ok(sum);
        }
    }
    Err(Error::Domain(format!("Mittag-Leffler series did not converge within {n_max} terms")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_half_is_sqrt_pi() {
        assert_relative_eq!(gamma_fn(0.5).unwrap(), std::f64::consts::PI.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn mittag_leffler_order_one_is_exponential() {
        assert_relative_eq!(mittag_leffler(1.0, 2.0, 200).unwrap(), 2f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn borel_of_t_squared_kappa_one() {
        let s = FormalSeries::new(vec![C64::zero(), C64::one()]);
        let b = mk_borel(&s, 1);
        assert_eq!(b.coeff(2), C64::one());
    }

    #[test]
    fn laplace_moment() {
        let w = RayFunction::from_fn(0.0, 80.0, |t| t.powi(3));
        let v = classical_laplace(&w, C64::new(1.0, 0.0), 0.5).unwrap();
        assert_relative_eq!(v.re, 6.0, max_relative = 1e-8);
    }
}
