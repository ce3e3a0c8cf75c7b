//! Scalar ray integrals of the forcing kernel `e^{−K_F u} F₁(u)/F₂(u)` and the
//! direct evaluation of `F^{θ_F}(t, z, ε)`.
//!
//! `ω_F(τ, m) = C_F(m)·φ(τ)` is separable, so every forcing quantity used by
//! the solvers is `C_F(m)` times a scalar function of `τ` or `t` computed here.

use num::complex::Complex64;
use num::Zero;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fourier::{inverse_fourier, SampledLine};
use crate::model::{cpow_rat, cpow_rat_on, EquationSpec, ForcingSpec};
use crate::quadrature::gauss_legendre;

type C64 = Complex64;

const PANEL_ORDER: usize = 16;

/// Decay rate `K_F cos θ` of the forcing kernel along `L_θ`.
fn decay_rate(f: &ForcingSpec, theta: f64) -> Result<f64> {
    let c = f.k_f * theta.cos();
    if !(c > 0.0) {
        return Err(Error::Domain(format!("e^(−K_F u) does not decay along the ray θ = {theta}")));
    }
    Ok(c)
}

/// `∫_{L_θ} e^{−K_F u} (F₁/F₂)(u) g(u) du` for an integrand factor `g` whose
/// growth is dominated by `e^{−K_F u}`, by GL panels of length `1/(K_F cosθ)`
/// out to `45 + 2·extra` panel lengths (`extra` is the power of `u` in `g`,
/// whose peak sits near `extra` panel lengths).
pub fn ray_integral(f: &ForcingSpec, theta: f64, extra: usize, g: impl Fn(C64) -> C64) -> Result<C64> {
    let rate = decay_rate(f, theta)?;
    let dir = C64::from_polar(1.0, theta);
    check_ray(f, theta)?;
    let len = 1.0 / rate;
    let rule = gauss_legendre(PANEL_ORDER);
    let mut acc = C64::zero();
    for k in 0..(45 + 2 * extra) {
        let a = k as f64 * len;
        for (r, w) in rule.on_interval(a, a + len) {
            let u = dir * r;
            acc += f.omega_factor(u) * g(u) * w;
        }
    }
    Ok(acc * dir)
}

/// Errors when the ray passes within `10⁻⁸` (relative) of a root of `F₂`.
fn check_ray(f: &ForcingSpec, theta: f64) -> Result<()> {
    for root in f.f2_roots() {
        let along = root * C64::from_polar(1.0, -theta);
        if along.re >= 0.0 && along.im.abs() < 1e-8 * (1.0 + root.norm()) {
            return Err(Error::SingularSymbol { m: theta, value: root.norm() });
        }
    }
    Ok(())
}

/// `sup_{u ∈ L_θ} |F₁(u)/F₂(u)|`, sampled (the constant `C_{F₁,F₂}`).
pub fn ratio_bound(f: &ForcingSpec, theta: f64) -> f64 {
    let dir = C64::from_polar(1.0, theta);
    (0..4000)
        .map(|i| {
            let r = if i == 0 { 0.0 } else { 1e-3 * (1.0f64 + 1e-2).powi(i) - 1e-3 };
            f.ratio(dir * r.min(1e6)).norm()
        })
        .fold(0.0, f64::max)
}

/// Moments `c_n = ∫_{L_{θ_F}} e^{−K_F u}(F₁/F₂)(u) uⁿ/n! du` for `n = 0..=n_max`.
pub fn forcing_moments(f: &ForcingSpec, n_max: usize) -> Result<Vec<C64>> {
    (0..=n_max)
        .map(|n| {
            let lg = ln_gamma(n as f64 + 1.0);
            ray_integral(f, f.theta_f, n, |u| {
                if n == 0 {
                    C64::new(1.0, 0.0)
                } else {
                    (u.ln() * n as f64 - lg).exp()
                }
            })
        })
        .collect()
}

/// The scalar part `ψ̃(τ)` of `Ψ_κ(τ, m, ε) = C_F(m) ψ̃(τ)`:
///
/// ```text
/// ψ̃(τ) = ε^{n_F} Σ_{n≥1} c_n (−τ/ε^{γ+α})ⁿ / Γ(n/κ).
/// ```
#[derive(Clone, Debug)]
pub struct PsiSeries {
    prefactor: C64,
    scale: C64,
    kappa: f64,
    moments: Vec<C64>,
    /// `C_{F₁,F₂}` and `K_F cos θ_F`, for the tail bound `C (x/K)^n / K`.
    bound: (f64, f64),
}

/// Largest admissible `|τ/ε^{γ+α}|/(K_F cos θ_F)`; beyond it the alternating
/// series loses all significant digits to cancellation.
const PSI_MAX_ARGUMENT: f64 = 30.0;

impl PsiSeries {
    pub fn new(eps: C64, spec: &EquationSpec, alpha: num::rational::Rational64, kappa: u32) -> Result<Self> {
        let f = &spec.forcing;
        let moments = forcing_moments(f, 220)?;
        Ok(PsiSeries {
            prefactor: eps.powi(f.n_f as i32),
            scale: -cpow_rat(eps, f.gamma + alpha).inv(),
            kappa: kappa as f64,
            moments,
            bound: (ratio_bound(f, f.theta_f), decay_rate(f, f.theta_f)?),
        })
    }

    pub fn eval(&self, tau: C64) -> Result<C64> {
        if tau.is_zero() {
            return Ok(C64::zero());
        }
        let x = tau * self.scale;
        let (cb, k) = self.bound;
        let ratio = x.norm() / k;
        if ratio > PSI_MAX_ARGUMENT {
            return Err(Error::Domain(format!(
                "Ψ_κ series argument |τ/ε^(γ+α)|/K_F = {ratio:.3e} is too large for the grid tail"
            )));
        }
        let mut acc = C64::zero();
        let mut xn = C64::new(1.0, 0.0);
        for n in 1..self.moments.len() {
            xn *= x;
            let term = self.moments[n] * xn / statrs::function::gamma::gamma(n as f64 / self.kappa);
            acc += term;
            let next = (n + 1) as f64;
            let tail = cb / k * ratio.powf(next) / statrs::function::gamma::gamma(next / self.kappa);
            if n >= 2 && tail < 1e-12 * acc.norm() && ratio < 0.5 * next {
                return Ok(acc * self.prefactor);
            }
        }
        Err(Error::Domain("Ψ_κ series did not reach its tail tolerance".into()))
    }
}

/// `∫_{L_θ} e^{−K_F u}(F₁/F₂)(u) e^{−su} du` with panels matched to the
/// combined exponential `e^{−(K_F + s)u}`, which must decay along `L_θ`.
fn damped_ray_integral(f: &ForcingSpec, theta: f64, s: C64) -> Result<C64> {
    let dir = C64::from_polar(1.0, theta);
    let k = (C64::new(f.k_f, 0.0) + s) * dir;
    if k.re <= 0.0 {
        return Err(Error::Domain(format!("e^(−(K_F + t/ε^γ)u) grows along θ = {theta}")));
    }
    check_ray(f, theta)?;
    // Panels of length 1/|k| keep the oscillation per panel below one radian;
    // enough of them to reach e^{−45}.
    let len = 1.0 / k.norm();
    let count = ((45.0 * k.norm() / k.re).ceil() as usize).clamp(45, 20000);
    let rule = gauss_legendre(PANEL_ORDER);
    let mut acc = C64::zero();
    for p in 0..count {
        let a = p as f64 * len;
        for (r, w) in rule.on_interval(a, a + len) {
            let u = dir * r;
            acc += f.ratio(u) * (-k * r).exp() * w;
        }
    }
    Ok(acc * dir)
}

/// `∫_{L_θ} e^{−K_F u}(F₁/F₂)(u)(e^{−su} − 1) du` on the ray `L_θ` itself,
/// accurate for moderate `|s|` (no cancellation near `s = 0`).
fn forcing_scalar(f: &ForcingSpec, theta: f64, s: C64) -> Result<C64> {
    let dir = C64::from_polar(1.0, theta);
    let rate = ((C64::new(f.k_f, 0.0) + s) * dir).re;
    if rate <= 0.0 {
        return Err(Error::Domain(format!("e^(−(K_F + t/ε^γ)u) grows along θ = {theta}")));
    }
    // Stretch the panel count so the slower of the two exponentials is resolved.
    let extra = ((f.k_f * theta.cos() / rate).ceil() as usize).saturating_mul(45).min(4000);
    ray_integral(f, theta, extra, |u| {
        let x = -s * u;
        if x.norm() < 1e-3 {
            // expm1 for the small-argument regime.
            x * (1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0)))
        } else {
            x.exp() - 1.0
        }
    })
}

/// Whether some root of `F₂` lies in the closed angular sector swept from
/// `a` to `b` (the short way round).
fn roots_between(f: &ForcingSpec, a: f64, b: f64) -> bool {
    let span = (b - a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    f.f2_roots().iter().any(|r| {
        let d = (r.arg() - a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        if span >= 0.0 {
            (-1e-12..=span + 1e-12).contains(&d)
        } else {
            (span - 1e-12..=1e-12).contains(&d)
        }
    })
}

/// `ε^{n_F} ∫_{L_{θ_F}} ω_F(u)(e^{−tu/ε^γ} − 1) du / C_F`.
///
/// For `|t/ε^γ| ≤ 2K_F` (the small-disc regime) the integral is taken on
/// `L_{θ_F}` itself.  Beyond that the damped part is rotated onto `L_{θ^Δ}`:
/// the supplied direction, or else the steepest-descent direction
/// `−arg(K_F + t/ε^γ)` when no root of `F₂` lies in between.  `ε^γ` is taken
/// on the branch of `arg ε` centred at `eps_ref`.
pub fn forcing_t_scalar(t: C64, eps: C64, eps_ref: f64, spec: &EquationSpec, theta_delta: Option<f64>) -> Result<C64> {
    let f = &spec.forcing;
    let s = t / cpow_rat_on(eps, f.gamma, eps_ref);
    let pre = eps.powi(f.n_f as i32);
    let small_rate = ((C64::new(f.k_f, 0.0) + s) * C64::from_polar(1.0, f.theta_f)).re;
    if s.norm() <= 2.0 * f.k_f && small_rate > 0.1 * f.k_f * f.theta_f.cos() {
        return Ok(pre * forcing_scalar(f, f.theta_f, s)?);
    }
    let th = match theta_delta {
        Some(th) => th,
        None => {
            let th = -(C64::new(f.k_f, 0.0) + s).arg();
            if roots_between(f, f.theta_f, th) {
                return Err(Error::Domain(format!(
                    "t = {t} lies outside the disc D_F;ε and the descent direction {th:.4} crosses a root of F₂"
                )));
            }
            th
        }
    };
    let damped = damped_ray_integral(f, th, s)?;
    let total = ray_integral(f, f.theta_f, 0, |_| C64::new(1.0, 0.0))?;
    Ok(pre * (damped - total))
}

/// `c_F(z) = F⁻¹(C_F)(z)` by the trapezoid rule on `line`'s grid.
pub fn c_f_of_z(spec: &EquationSpec, line: &SampledLine, z: C64) -> C64 {
    inverse_fourier(&spec.cf_line(line), z)
}

/// `F^{θ_F}(t, z, ε)`.
pub fn forcing_f_direct(
    t: C64,
    z: C64,
    eps: C64,
    eps_ref: f64,
    spec: &EquationSpec,
    line: &SampledLine,
    theta_delta: Option<f64>,
) -> Result<C64> {
    if t.is_zero() {
        return Ok(C64::zero());
    }
    Ok(c_f_of_z(spec, line, z) * forcing_t_scalar(t, eps, eps_ref, spec, theta_delta)?)
}

/// Five-point central weights for the derivatives of order `0..=4` at the
/// middle node of `x = −2, −1, 0, 1, 2` (unit step).
pub fn five_point_weights(order: usize) -> Result<[f64; 5]> {
    Ok(match order {
        0 => [0.0, 0.0, 1.0, 0.0, 0.0],
        1 => [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0],
        2 => [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0],
        3 => [-0.5, 1.0, 0.0, -1.0, 0.5],
        4 => [1.0, -4.0, 6.0, -4.0, 1.0],
        _ => return Err(Error::Domain(format!("derivative order {order} exceeds the five-point stencil"))),
    })
}

/// `d^k f/dt^k` at the centre from samples at `t + j·h`, `j = −2..=2`.
pub fn fd_derivative(samples: &[C64; 5], h: C64, order: usize) -> Result<C64> {
    let w = five_point_weights(order)?;
    let mut acc = C64::zero();
    for (s, c) in samples.iter().zip(w) {
        acc += s * c;
    }
    Ok(acc / h.powi(order as i32))
}

/// Relative residual of `F₂(−ε^γ ∂_t)F = ε^{n_F} c_F(z)(Σ_k F_{1,k} k!/(K_F + t/ε^γ)^{k+1} − F₂(0) c_{F₁,F₂,θ_F})`.
pub fn ode_residual_f(t: C64, z: C64, eps: C64, spec: &EquationSpec, line: &SampledLine) -> Result<f64> {
    let f = &spec.forcing;
    let eg = cpow_rat(eps, f.gamma);
    let deg = f.f2.degree_or_zero();
    if deg > 4 {
        return Err(Error::Domain("F₂ of degree > 4 needs a wider stencil".into()));
    }
    let h = C64::from_polar(1e-3 * eg.norm(), t.arg());
    let mut samples = [C64::zero(); 5];
    for (j, s) in samples.iter_mut().enumerate() {
        *s = forcing_f_direct(t + h * (j as f64 - 2.0), z, eps, 0.0, spec, line, None)?;
    }
    let mut lhs = C64::zero();
    let mut scale = 0.0f64;
    for (k, ck) in f.f2.coeffs().iter().enumerate() {
        let term = ck * (-eg).powi(k as i32) * fd_derivative(&samples, h, k)?;
        scale = scale.max(term.norm());
        lhs += term;
    }
    let cf = c_f_of_z(spec, line, z);
    let total = ray_integral(f, f.theta_f, 0, |_| C64::new(1.0, 0.0))?;
    let s = t / eg;
    let mut rat = C64::zero();
    let mut fact = 1.0;
    for (k, fk) in f.f1.coeffs().iter().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        rat += fk * fact / (C64::new(f.k_f, 0.0) + s).powi(k as i32 + 1);
    }
    let pre = eps.powi(f.n_f as i32) * cf;
    let a = pre * rat;
    let b = pre * f.f2.eval(C64::zero()) * total;
    let rhs = a - b;
    scale = scale.max(a.norm()).max(b.norm());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((lhs - rhs).norm() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Polynomial, Profile};

    fn plain(k_f: f64) -> ForcingSpec {
        ForcingSpec {
            n_f: 0,
            gamma: num::rational::Rational64::new(3, 2),
            k_f,
            c_f: Profile::Zero,
            f1: Polynomial::one(),
            f2: Polynomial::one(),
            theta_f: 0.0,
        }
    }

    #[test]
    fn moments_of_pure_exponential_are_inverse_powers() {
        // ∫₀^∞ e^{−K r} rⁿ/n! dr = K^{−(n+1)}
        let f = plain(1.7);
        let c = forcing_moments(&f, 12).unwrap();
        for (n, cn) in c.iter().enumerate() {
            let exact = 1.7f64.powi(-(n as i32 + 1));
            assert!((cn.re - exact).abs() < 1e-13 * exact, "n={n}: {:.3e}", (cn.re - exact).abs() / exact);
        }
    }

    #[test]
    fn five_point_second_derivative_of_cubic() {
        let h = C64::new(0.1, 0.0);
        let s: [C64; 5] = std::array::from_fn(|j| {
            let x = 1.0 + 0.1 * (j as f64 - 2.0);
            C64::new(x * x * x, 0.0)
        });
        assert!((fd_derivative(&s, h, 2).unwrap().re - 6.0).abs() < 1e-10);
    }
}
