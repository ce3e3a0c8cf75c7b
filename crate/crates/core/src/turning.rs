//! Turning points: roots of `P(t, ε)` and their merging rate, the Borel-symbol
//! polynomial `P_m(τ) = Q(im)a₀ − R_D(im)κ^{δ_D}τ^{δ_Dκ}`, its roots `q_l(m)`,
//! and the admissibility constants of a Borel-plane sector.

use num::complex::Complex64;
use num::Zero;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{EquationSpec, Polynomial, ScaleParams};

type C64 = Complex64;

/// All roots of a polynomial (companion-matrix eigenvalues refined by Newton).
pub fn polynomial_roots(p: &Polynomial) -> Result<Vec<C64>> {
    let deg = match p.degree() {
        None => return Err(Error::DegreeDrop),
        Some(0) => return Ok(Vec::new()),
        Some(d) => d,
    };
    let c = p.coeffs();
    let lead = c[deg];
    // A polynomial with vanishing low-order coefficients has exact zero roots.
    let zeros = c.iter().take_while(|v| v.is_zero()).count();
    let mut roots = vec![C64::zero(); zeros];
    let reduced: Vec<C64> = c[zeros..].to_vec();
    let d = reduced.len() - 1;
    if d == 0 {
        return Ok(roots);
    }
    let mut m = nalgebra::DMatrix::<C64>::zeros(d, d);
    for i in 1..d {
        m[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for i in 0..d {
        m[(i, d - 1)] = -reduced[i] / lead;
    }
    let rp = Polynomial::new(reduced);
    let dp = rp.derivative();
    // Unshifted-QR stalls on cyclic companions (binomials a + b·tᵈ), so the
    // Schur iteration is capped and Aberth's method takes over.
    let eig: Vec<C64> = match nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 200 * d) {
        Some(s) => s.eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_default(),
        None => Vec::new(),
    };
    let eig = if eig.len() == d { eig } else { aberth(&rp, &dp)? };
    for z0 in eig.iter() {
        let mut z = *z0;
        for _ in 0..8 {
            let f = rp.eval(z);
            let df = dp.eval(z);
            if df.is_zero() {
                break;
            }
            let step = f / df;
            let next = z - step;
            // Accept only improving steps (multiple roots converge linearly).
            if rp.eval(next).norm() <= f.norm() {
                z = next;
            } else {
                break;
            }
            if step.norm() <= 1e-16 * z.norm() {
                break;
            }
        }
        roots.push(z);
    }
    Ok(roots)
}

/// Aberth–Ehrlich simultaneous iteration for a polynomial with nonzero
/// constant term, started on a circle of the geometric-mean root radius.
fn aberth(p: &Polynomial, dp: &Polynomial) -> Result<Vec<C64>> {
    let c = p.coeffs();
    let d = c.len() - 1;
    let radius = (c[0].norm() / c[d].norm()).powf(1.0 / d as f64);
    let mut z: Vec<C64> =
        (0..d).map(|j| C64::from_polar(radius, (2.0 * PI * j as f64 + 0.7) / d as f64)).collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..d {
            let f = p.eval(z[i]);
            if f.is_zero() {
                continue;
            }
            let ratio = f / dp.eval(z[i]);
            let repulsion: C64 = (0..d).filter(|&j| j != i).map(|j| (z[i] - z[j]).inv()).sum();
            let step = ratio / (C64::new(1.0, 0.0) - ratio * repulsion);
            z[i] -= step;
            moved = moved.max(step.norm() / z[i].norm().max(f64::MIN_POSITIVE));
        }
        if moved < 1e-15 {
            return Ok(z);
        }
    }
    if z.iter().all(|v| v.is_finite()) {
        Ok(z)
    } else {
        Err(Error::Domain("polynomial root iteration failed".into()))
    }
}

/// `P(·, ε)` as a polynomial in `t`.
pub fn p_polynomial(eps: C64, spec: &EquationSpec) -> Polynomial {
    let kq = *spec.k_exp.iter().max().unwrap() as usize;
    let mut c = vec![C64::zero(); kq + 1];
    c[0] += spec.a[0] * eps.powi(spec.m_exp[0] as i32);
    for l in 1..=spec.q {
        c[spec.k_exp[l - 1] as usize] += spec.a[l] * eps.powi(spec.m_exp[l] as i32);
    }
    Polynomial::new(c)
}

/// The `k_q` turning points `t` with `P(t, ε) = 0`.
pub fn roots_p(eps: C64, spec: &EquationSpec) -> Result<Vec<C64>> {
    if eps.is_zero() {
        return Err(Error::Domain("turning points need ε ≠ 0".into()));
    }
    let p = p_polynomial(eps, spec);
    let kq = *spec.k_exp.iter().max().unwrap() as usize;
    if p.degree() != Some(kq) || p.leading().norm() < 1e-300 {
        return Err(Error::DegreeDrop);
    }
    let roots = polynomial_roots(&p)?;
    let scale = p.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    for r in &roots {
        let res = p.eval(*r).norm();
        if res >= 1e-10 * scale {
            return Err(Error::Precision(res / scale));
        }
    }
    Ok(roots)
}

/// Index `j₁` (1-based) of the first minimal `m_l`, `l ≥ 1`.
pub fn dominant_index(spec: &EquationSpec) -> usize {
    let mmin = spec.m_exp[1..].iter().copied().min().unwrap();
    (1..=spec.q).find(|&l| spec.m_exp[l] == mmin).unwrap()
}

/// Upper end of the admissible window `(0, μ_max)` for the turning-point disc
/// radius `|ε|^μ`: `μ < (m₀ − m_{j₁})/k_{j₁}` and `μ < (m_l − m_{j₁})/(k_{j₁} − k_l)`
/// whenever `k_l < k_{j₁}`.
pub fn admissible_mu_window(spec: &EquationSpec) -> f64 {
    let j1 = dominant_index(spec);
    let (mj, kj) = (spec.m_exp[j1] as f64, spec.k_exp[j1 - 1] as f64);
    let mut up = (spec.m0() as f64 - mj) / kj;
    for l in 1..=spec.q {
        let kl = spec.k_exp[l - 1] as f64;
        if l != j1 && kl < kj {
            up = up.min((spec.m_exp[l] as f64 - mj) / (kj - kl));
        }
    }
    up
}

/// Least-squares slope of `log min|root|` against `log ε`.
pub fn merging_exponent(spec: &EquationSpec, eps_seq: &[f64]) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &e in eps_seq {
        if let Ok(r) = roots_p(C64::new(e, 0.0), spec) {
            let rmin = r.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
            if rmin > 0.0 && rmin.is_finite() {
                xs.push(e.ln());
                ys.push(rmin.ln());
            }
        }
    }
    if xs.len() < 4 {
        return Err(Error::InsufficientData { got: xs.len(), need: 4 });
    }
    Ok(crate::asymptotics::linear_fit(&xs, &ys)?.slope)
}

/// Sampled `sup_{|t| = |ε|^μ} |P₁ − P₀|/|P₀|` with `P₁ = P/ε^{m_{j₁}}`, `P₀ = a_{j₁}t^{k_{j₁}}`.
pub fn rouche_ratio(eps: C64, mu: f64, spec: &EquationSpec) -> f64 {
    let j1 = dominant_index(spec);
    let radius = eps.norm().powf(mu);
    let p = p_polynomial(eps, spec);
    let scale = eps.powi(spec.m_exp[j1] as i32);
    let kj = spec.k_exp[j1 - 1];
    let n = 1024;
    (0..n)
        .map(|i| {
            let t = C64::from_polar(radius, 2.0 * PI * i as f64 / n as f64);
            let p0 = spec.a[j1] * t.powi(kj as i32);
            (p.eval(t) / scale - p0).norm() / p0.norm()
        })
        .fold(0.0, f64::max)
}

/// Number of roots of `P(·, ε)` inside `D(0, |ε|^μ)` by the argument principle.
pub fn rouche_count(eps: C64, mu: f64, spec: &EquationSpec) -> Result<i64> {
    let sup = rouche_ratio(eps, mu, spec);
    if !(sup < 1.0) {
        return Err(Error::Domain(format!(
            "μ = {mu} outside the comparison window at |ε| = {}: sup |P₁−P₀|/|P₀| = {sup:.3}",
            eps.norm()
        )));
    }
    let p = p_polynomial(eps, spec);
    let dp = p.derivative();
    let radius = eps.norm().powf(mu);
    let n = 4096;
    let mut acc = C64::zero();
    for i in 0..n {
        let t = C64::from_polar(radius, 2.0 * PI * i as f64 / n as f64);
        acc += dp.eval(t) * t / p.eval(t);
    }
    let wind = acc.re / n as f64;
    let k = wind.round();
    if (wind - k).abs() > 0.2 {
        return Err(Error::Precision((wind - k).abs()));
    }
    Ok(k as i64)
}

/// `P_m(τ) = Q(im)a₀ − R_D(im)κ^{δ_D}τ^{δ_Dκ}`.
pub fn p_m(tau: C64, m: f64, spec: &EquationSpec, kappa: u32) -> C64 {
    let (_, _, dd) = spec.top();
    let kd = (kappa as f64).powi(dd as i32);
    spec.q_poly.symbol(m) * spec.a[0] - spec.r_top().symbol(m) * kd * tau.powi((dd * kappa as i64) as i32)
}

/// The `δ_Dκ` roots `q_l(m)` of `P_m`.
pub fn q_roots(m: f64, spec: &EquationSpec, p: &ScaleParams) -> Result<Vec<C64>> {
    let (_, _, dd) = spec.top();
    let kappa = p.kappa;
    let qv = spec.q_poly.symbol(m);
    let rv = spec.r_top().symbol(m);
    if qv.norm() < 1e-12 {
        return Err(Error::SingularSymbol { m, value: qv.norm() });
    }
    if rv.norm() < 1e-12 {
        return Err(Error::SingularSymbol { m, value: rv.norm() });
    }
    let dk = (dd * kappa as i64) as usize;
    let kd = (kappa as f64).powi(dd as i32);
    let z = spec.a[0] * qv / (rv * kd);
    let modulus = z.norm().powf(1.0 / dk as f64);
    let roots: Vec<C64> = (0..dk)
        .map(|l| C64::from_polar(modulus, z.arg() / dk as f64 + 2.0 * PI * l as f64 / dk as f64))
        .collect();
    let scale = (spec.a[0] * qv).norm() + (rv * kd).norm() * modulus.powi(dk as i32);
    for r in &roots {
        let res = p_m(*r, m, spec, kappa).norm() / scale;
        if res >= 1e-8 {
            return Err(Error::Precision(res));
        }
    }
    Ok(roots)
}

/// `inf_m |Q(im)/R_D(im)|` over a wide grid and the `|m| → ∞` limit.
pub fn symbol_ratio_inf(spec: &EquationSpec) -> f64 {
    let (q, r) = (&spec.q_poly, spec.r_top());
    let n = 8001;
    let mut inf = (q.leading() / r.leading()).norm();
    for i in 0..n {
        let m = -400.0 + 800.0 * i as f64 / (n - 1) as f64;
        inf = inf.min((q.symbol(m) / r.symbol(m)).norm());
    }
    inf
}

/// Constants of the sector `S_d ∪ D̄(0, ρ)` relative to the roots `q_l(m)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    pub l0: usize,
    #[serde(rename = "CP")]
    pub cp: f64,
    #[serde(rename = "r_QRD")]
    pub r_qrd: f64,
    pub pass: bool,
    pub worst_tau: [f64; 2],
    pub worst_m: f64,
    pub direction: f64,
    pub aperture: f64,
    pub rho: f64,
}

/// `min_{x≥0} (1+x)^{δκ−1}/(1+x^κ)^{δ−1/κ}` by dense log sampling (the ratio
/// tends to 1 at both ends).
pub fn cp_shape_factor(delta_d: i64, kappa: u32) -> f64 {
    let k = kappa as f64;
    let d = delta_d as f64;
    let f = |x: f64| (1.0 + x).powf(d * k - 1.0) / (1.0 + x.powf(k)).powf(d - 1.0 / k);
    let mut best = f(0.0).min(1.0);
    for i in 0..=4000 {
        let x = 10f64.powf(-4.0 + 10.0 * i as f64 / 4000.0);
        best = best.min(f(x));
    }
    best
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Frequencies at which the roots are sampled.
fn admissibility_m_samples(spec: &EquationSpec) -> Vec<f64> {
    let mmax = 20.0 / spec.family.beta;
    let n = 201;
    let mut v: Vec<f64> = (0..n).map(|i| -mmax + 2.0 * mmax * i as f64 / (n - 1) as f64).collect();
    v.extend([-1e4, 1e4]);
    v
}

/// Samples `τ` over the disc `D̄(0,ρ)` and the sector `S_d` (256 angular × 64
/// radial each) and `m` over a frequency grid, returning `M₁`, `M₂`, `C_P`.
pub fn sector_admissibility(
    direction: f64,
    aperture: f64,
    rho: f64,
    spec: &EquationSpec,
    p: &ScaleParams,
    r_qrd: f64,
) -> Result<AdmissibilityReport> {
    if !(aperture > 0.0) {
        return Err(Error::Admissibility("aperture must be positive".into()));
    }
    let ms = admissibility_m_samples(spec);
    let roots: Vec<(f64, Vec<C64>)> = ms
        .iter()
        .map(|&m| q_roots(m, spec, p).map(|r| (m, r)))
        .collect::<Result<_>>()?;
    let dk = roots[0].1.len();
    // Hard failure: a root inside the sector or the disc.
    for (m, rs) in &roots {
        for r in rs {
            if r.norm() <= rho || angle_diff(r.arg(), direction) < 0.5 * aperture {
                return Ok(AdmissibilityReport {
                    m1: 0.0,
                    m2: 0.0,
                    l0: 0,
                    cp: 0.0,
                    r_qrd,
                    pass: false,
                    worst_tau: [r.re, r.im],
                    worst_m: *m,
                    direction,
                    aperture,
                    rho,
                });
            }
        }
    }
    let qmax = roots.iter().flat_map(|(_, r)| r.iter().map(|z| z.norm())).fold(0.0, f64::max);
    let (na, nr) = (256usize, 64usize);
    let mut taus = Vec::with_capacity(2 * na * nr);
    for i in 0..na {
        let th = 2.0 * PI * i as f64 / na as f64;
        for j in 0..=nr {
            taus.push(C64::from_polar(rho * j as f64 / nr as f64, th));
        }
    }
    let r_far = 1e3 * qmax.max(rho);
    for i in 0..na {
        let th = direction - 0.5 * aperture + aperture * i as f64 / (na - 1) as f64;
        for j in 0..nr {
            let r = rho * (r_far / rho).powf(j as f64 / (nr - 1) as f64);
            taus.push(C64::from_polar(r, th));
        }
    }
    // (M1 candidate, tau, m) minimised over samples; per-l minima for M2.
    let (m1, wt, wm, per_l) = taus
        .par_iter()
        .map(|&tau| {
            let mut best = (f64::INFINITY, tau, 0.0);
            let mut per_l = vec![f64::INFINITY; dk];
            for (m, rs) in &roots {
                for (l, q) in rs.iter().enumerate() {
                    let d = (tau - q).norm();
                    let v1 = d / (1.0 + tau.norm());
                    if v1 < best.0 {
                        best = (v1, tau, *m);
                    }
                    per_l[l] = per_l[l].min(d / q.norm());
                }
            }
            (best.0, best.1, best.2, per_l)
        })
        .reduce(
            || (f64::INFINITY, C64::zero(), 0.0, vec![f64::INFINITY; dk]),
            |a, b| {
                let per: Vec<f64> = a.3.iter().zip(&b.3).map(|(x, y)| x.min(*y)).collect();
                // Deterministic tie-break: keep the smaller value, then the smaller m.
                if b.0 < a.0 || (b.0 == a.0 && b.2 < a.2) {
                    (b.0, b.1, b.2, per)
                } else {
                    (a.0, a.1, a.2, per)
                }
            },
        );
    let (l0, m2) = per_l
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (l, &v)| if v > acc.1 { (l, v) } else { acc });
    let (_, _, dd) = spec.top();
    let k = p.kappa as f64;
    let dkf = dd as f64 * k;
    let kd = k.powi(dd as i32);
    let cp = m1.powf(dkf - 1.0) * m2 * kd * spec.a[0].norm().powf(1.0 / dkf) / kd.powf(1.0 / dkf)
        * cp_shape_factor(dd, p.kappa);
    Ok(AdmissibilityReport {
        m1,
        m2,
        l0,
        cp,
        r_qrd,
        pass: m1 > 1e-3 && m2 > 1e-3 && cp > 0.0,
        worst_tau: [wt.re, wt.im],
        worst_m: wm,
        direction,
        aperture,
        rho,
    })
}

/// Doubles `r` from `r_start` until `C_P r^{1/(δ_Dκ)}` reaches `threshold`.
pub fn search_r_qrd(cp: f64, dk: u32, r_start: f64, threshold: f64, max_doublings: usize) -> Result<f64> {
    let mut r = r_start;
    for _ in 0..=max_doublings {
        if cp * r.powf(1.0 / dk as f64) >= threshold {
            return Ok(r);
        }
        r *= 2.0;
    }
    Err(Error::Admissibility(format!(
        "C_P r^(1/δκ) stays below {threshold} after {max_doublings} doublings"
    )))
}

/// Lower bound `C_P r^{1/(δ_Dκ)} |R_D(im)| (1+|τ|^κ)^{δ_D−1/κ}` for `|P_m(τ)|`.
pub fn p_m_lower_bound(tau: C64, m: f64, spec: &EquationSpec, kappa: u32, adm: &AdmissibilityReport) -> f64 {
    let (_, _, dd) = spec.top();
    let k = kappa as f64;
    adm.cp
        * adm.r_qrd.powf(1.0 / (dd as f64 * k))
        * spec.r_top().symbol(m).norm()
        * (1.0 + tau.norm().powf(k)).powf(dd as f64 - 1.0 / k)
}
