//! Equation data for the singularly perturbed PDE, its coefficient polynomials,
//! and exact (rational) checks of every parameter constraint used by the
//! inner and outer constructions.
//!
//! The PDE reads
//!
//! ```text
//! (Σ_{l=1}^q a_l ε^{m_l} t^{k_l} + a₀ ε^{m₀}) Q(∂_z)u
//!   + (Σ_{l=0}^M c_l ε^{μ_l} t^{h_l}) Q₁(∂_z)u · Q₂(∂_z)u
//!   = Σ_{j=0}^{Qc} b_j(z) ε^{n_j} t^{b_j} + F^{θ_F}(t,z,ε)
//!     + Σ_{l=1}^{D} ε^{Δ_l} t^{d_l} ∂_t^{δ_l} R_l(∂_z)u
//! ```
//!
//! All exponent arithmetic is done in `Rational64`; boundary cases where a
//! constraint holds with equality are therefore decided exactly.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num::complex::Complex64;
use num::rational::Rational64;
use num::{One, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fourier::SampledLine;

pub type C64 = Complex64;
pub type Rat = Rational64;

// ---------------------------------------------------------------------------
// Rational (de)serialisation as "p/q" strings
// ---------------------------------------------------------------------------

/// Parses `"p/q"`, `"p"`, or a decimal with finitely many digits into a rational.
pub fn parse_rational(s: &str) -> Result<Rat> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| Error::Parse(format!("bad rational '{s}'")))?;
        let q: i64 = q.trim().parse().map_err(|_| Error::Parse(format!("bad rational '{s}'")))?;
        if q == 0 {
            return Err(Error::Parse(format!("zero denominator in '{s}'")));
        }
        return Ok(Rat::new(p, q));
    }
    if let Ok(p) = s.parse::<i64>() {
        return Ok(Rat::from_integer(p));
    }
    // Decimal literal such as "5.9": read digits exactly.
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    if let Some((ip, fp)) = body.split_once('.') {
        if fp.len() <= 12 && ip.chars().chain(fp.chars()).all(|c| c.is_ascii_digit()) {
            let den = 10i64.pow(fp.len() as u32);
            let ip: i64 = if ip.is_empty() { 0 } else { ip.parse().unwrap() };
            let fpv: i64 = if fp.is_empty() { 0 } else { fp.parse().unwrap() };
            let r = Rat::new(ip * den + fpv, den);
            return Ok(if neg { -r } else { r });
        }
    }
    Err(Error::Parse(format!("bad rational '{s}'")))
}

/// Formats a rational as `"p"` or `"p/q"`.
pub fn format_rational(r: &Rat) -> String {
    if r.is_integer() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Serde adapter: rationals travel as strings, integers are also accepted.
pub mod rational_str {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rat, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            I(i64),
        }
        match Raw::deserialize(d)? {
            Raw::S(s) => parse_rational(&s).map_err(serde::de::Error::custom),
            Raw::I(i) => Ok(Rat::from_integer(i)),
        }
    }
}

// ---------------------------------------------------------------------------
// Polynomials
// ---------------------------------------------------------------------------

/// Complex polynomial with coefficients in ascending degree.
///
/// Trailing zero coefficients are stripped on construction, so `degree()` is
/// the index of the last nonzero coefficient (and `None` for the zero polynomial).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<C64>", into = "Vec<C64>")]
pub struct Polynomial {
    coeffs: Vec<C64>,
}

impl From<Vec<C64>> for Polynomial {
    fn from(v: Vec<C64>) -> Self {
        Polynomial::new(v)
    }
}

impl From<Polynomial> for Vec<C64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<C64>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    pub fn from_real(c: &[f64]) -> Self {
        Polynomial::new(c.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn constant(c: C64) -> Self {
        Polynomial::new(vec![c])
    }

    pub fn one() -> Self {
        Polynomial::constant(C64::one())
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: Vec::new() }
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    /// Degree with the zero polynomial mapped to 0 (used in degree comparisons).
    pub fn degree_or_zero(&self) -> usize {
        self.degree().unwrap_or(0)
    }

    pub fn leading(&self) -> C64 {
        self.coeffs.last().copied().unwrap_or_default()
    }

    /// Horner evaluation.
    pub fn eval(&self, x: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::zero(), |acc, &c| acc * x + c)
    }

    /// Symbol value `P(i m)`, i.e. the Fourier-side action of `P(∂_z)`.
    pub fn symbol(&self, m: f64) -> C64 {
        self.eval(C64::new(0.0, m))
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * k as f64)
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Frequency profiles B_j(m), C_F(m)
// ---------------------------------------------------------------------------

/// A frequency profile `m ↦ h(m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `c (1+|m|)^{−μ−1} e^{−β|m|}`, using the family's `(β, μ)`.
    Decay { c: C64 },
    /// `c e^{−m²/(2 w²)}` (Gaussian-decay profile).
    Gaussian { c: C64, width: f64 },
    /// Identically zero.
    Zero,
}

impl Profile {
    pub fn value(&self, m: f64, fam: &ProfileFamily) -> C64 {
        match self {
            Profile::Decay { c } => {
                let a = m.abs();
                c * ((1.0 + a).powf(-fam.mu - 1.0) * (-fam.beta * a).exp())
            }
            Profile::Gaussian { c, width } => c * (-(m * m) / (2.0 * width * width)).exp(),
            Profile::Zero => C64::zero(),
        }
    }

    /// Closed-form `(β, μ)` norm for the decay profile when the norm
    /// parameters coincide with the family's: `sup (1+|m|)^{−1}|c| = |c|`.
    pub fn closed_form_norm(&self, fam: &ProfileFamily, beta: f64, mu: f64) -> Option<f64> {
        match self {
            Profile::Decay { c } if beta == fam.beta && mu == fam.mu => Some(c.norm()),
            Profile::Zero => Some(0.0),
            _ => None,
        }
    }

    pub fn sample(&self, line: &SampledLine, fam: &ProfileFamily) -> SampledLine {
        line.map_grid(|m| self.value(m, fam))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Zero => true,
            Profile::Decay { c } | Profile::Gaussian { c, .. } => c.is_zero(),
        }
    }
}

/// Decay rates shared by the default profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFamily {
    pub beta: f64,
    pub mu: f64,
}

// ---------------------------------------------------------------------------
// Forcing data
// ---------------------------------------------------------------------------

/// Data of the integral-transform forcing `F^{θ_F}(t, z, ε)` built from
/// `ω_F(τ, m) = C_F(m) e^{−K_F τ} F₁(τ)/F₂(τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingSpec {
    pub n_f: i64,
    pub gamma: Rat,
    pub k_f: f64,
    pub c_f: Profile,
    pub f1: Polynomial,
    pub f2: Polynomial,
    pub theta_f: f64,
}

impl ForcingSpec {
    /// `F₁(τ)/F₂(τ)`.
    pub fn ratio(&self, tau: C64) -> C64 {
        self.f1.eval(tau) / self.f2.eval(tau)
    }

    /// `e^{−K_F τ} F₁(τ)/F₂(τ)` (the m-independent factor of `ω_F`).
    pub fn omega_factor(&self, tau: C64) -> C64 {
        (-self.k_f * tau).exp() * self.ratio(tau)
    }

    /// Roots of `F₂` by companion eigenvalues (empty for constant `F₂`).
    pub fn f2_roots(&self) -> Vec<C64> {
        crate::turning::polynomial_roots(&self.f2).unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// Equation description
// ---------------------------------------------------------------------------

/// The full data of the PDE.  Index conventions: `a[l]`, `m_exp[l]` for
/// `0 ≤ l ≤ q`; `k_exp[l−1]` holds `k_l`; `r_poly[l−1]`, `delta[l−1]`,
/// `d_exp[l−1]`, `delta_exp[l−1]` hold the data of `R_l`, `1 ≤ l ≤ D`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquationSpec {
    pub q: usize,
    pub m_terms: usize,
    pub q_count: usize,
    pub d_terms: usize,
    pub a: Vec<C64>,
    pub m_exp: Vec<i64>,
    pub k_exp: Vec<i64>,
    pub c: Vec<C64>,
    pub mu_exp: Vec<i64>,
    pub h_exp: Vec<i64>,
    pub b_profiles: Vec<Profile>,
    pub n_exp: Vec<i64>,
    pub b_exp: Vec<i64>,
    pub delta: Vec<i64>,
    pub d_exp: Vec<i64>,
    pub delta_exp: Vec<i64>,
    pub q_poly: Polynomial,
    pub q1_poly: Polynomial,
    pub q2_poly: Polynomial,
    pub r_poly: Vec<Polynomial>,
    pub forcing: ForcingSpec,
    pub family: ProfileFamily,
}

/// JSON document layout of an [`EquationSpec`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecDocument {
    #[serde(rename = "q")]
    pub q: usize,
    #[serde(rename = "M")]
    pub m_terms: usize,
    #[serde(rename = "Qcount")]
    pub q_count: usize,
    #[serde(rename = "D")]
    pub d_terms: usize,
    pub a: Vec<C64>,
    pub m_exp: Vec<i64>,
    pub k_exp: Vec<i64>,
    pub c: Vec<C64>,
    pub mu_exp: Vec<i64>,
    pub h_exp: Vec<i64>,
    pub n_exp: Vec<i64>,
    pub b_exp: Vec<i64>,
    #[serde(rename = "Delta")]
    pub delta: Vec<i64>,
    pub d_exp: Vec<i64>,
    pub delta_exp: Vec<i64>,
    #[serde(rename = "Qpoly")]
    pub q_poly: Polynomial,
    #[serde(rename = "Q1poly")]
    pub q1_poly: Polynomial,
    #[serde(rename = "Q2poly")]
    pub q2_poly: Polynomial,
    #[serde(rename = "Rpoly")]
    pub r_poly: Vec<Polynomial>,
    pub forcing: ForcingDocument,
    pub profiles: ProfilesDocument,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForcingDocument {
    #[serde(rename = "nF")]
    pub n_f: i64,
    #[serde(with = "rational_str")]
    pub gamma: Rat,
    #[serde(rename = "KF")]
    pub k_f: f64,
    #[serde(rename = "F1")]
    pub f1: Polynomial,
    #[serde(rename = "F2")]
    pub f2: Polynomial,
    #[serde(rename = "thetaF")]
    pub theta_f: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfilesDocument {
    pub beta: f64,
    pub mu: f64,
    #[serde(rename = "B")]
    pub b: Vec<Profile>,
    #[serde(rename = "CF")]
    pub c_f: Profile,
}

impl EquationSpec {
    /// Builds a spec from its document form and checks the structural invariants.
    pub fn from_document(doc: SpecDocument) -> Result<Self> {
        let spec = EquationSpec {
            q: doc.q,
            m_terms: doc.m_terms,
            q_count: doc.q_count,
            d_terms: doc.d_terms,
            a: doc.a,
            m_exp: doc.m_exp,
            k_exp: doc.k_exp,
            c: doc.c,
            mu_exp: doc.mu_exp,
            h_exp: doc.h_exp,
            b_profiles: doc.profiles.b,
            n_exp: doc.n_exp,
            b_exp: doc.b_exp,
            delta: doc.delta,
            d_exp: doc.d_exp,
            delta_exp: doc.delta_exp,
            q_poly: doc.q_poly,
            q1_poly: doc.q1_poly,
            q2_poly: doc.q2_poly,
            r_poly: doc.r_poly,
            forcing: ForcingSpec {
                n_f: doc.forcing.n_f,
                gamma: doc.forcing.gamma,
                k_f: doc.forcing.k_f,
                c_f: doc.profiles.c_f,
                f1: doc.forcing.f1,
                f2: doc.forcing.f2,
                theta_f: doc.forcing.theta_f,
            },
            family: ProfileFamily { beta: doc.profiles.beta, mu: doc.profiles.mu },
        };
        spec.check_structure()?;
        Ok(spec)
    }

    pub fn to_document(&self) -> SpecDocument {
        SpecDocument {
            q: self.q,
            m_terms: self.m_terms,
            q_count: self.q_count,
            d_terms: self.d_terms,
            a: self.a.clone(),
            m_exp: self.m_exp.clone(),
            k_exp: self.k_exp.clone(),
            c: self.c.clone(),
            mu_exp: self.mu_exp.clone(),
            h_exp: self.h_exp.clone(),
            n_exp: self.n_exp.clone(),
            b_exp: self.b_exp.clone(),
            delta: self.delta.clone(),
            d_exp: self.d_exp.clone(),
            delta_exp: self.delta_exp.clone(),
            q_poly: self.q_poly.clone(),
            q1_poly: self.q1_poly.clone(),
            q2_poly: self.q2_poly.clone(),
            r_poly: self.r_poly.clone(),
            forcing: ForcingDocument {
                n_f: self.forcing.n_f,
                gamma: self.forcing.gamma,
                k_f: self.forcing.k_f,
                f1: self.forcing.f1.clone(),
                f2: self.forcing.f2.clone(),
                theta_f: self.forcing.theta_f,
            },
            profiles: ProfilesDocument {
                beta: self.family.beta,
                mu: self.family.mu,
                b: self.b_profiles.clone(),
                c_f: self.forcing.c_f.clone(),
            },
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(s)?;
        Self::from_document(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// Index `D` data: `(Δ_D, d_D, δ_D)`.
    pub fn top(&self) -> (i64, i64, i64) {
        let i = self.d_terms - 1;
        (self.delta[i], self.d_exp[i], self.delta_exp[i])
    }

    pub fn r_top(&self) -> &Polynomial {
        &self.r_poly[self.d_terms - 1]
    }

    pub fn m0(&self) -> i64 {
        self.m_exp[0]
    }

    /// Checks lengths, orderings, degrees and the turning-point hypothesis.
    pub fn check_structure(&self) -> Result<()> {
        let s = |msg: String| Err(Error::Structural(msg));
        if self.q == 0 || self.d_terms == 0 {
            return s("q and D must be positive".into());
        }
        let want = |name: &str, got: usize, n: usize| -> Result<()> {
            if got != n {
                Err(Error::Structural(format!("{name}: expected {n} entries, found {got}")))
            } else {
                Ok(())
            }
        };
        want("a", self.a.len(), self.q + 1)?;
        want("m_exp", self.m_exp.len(), self.q + 1)?;
        want("k_exp", self.k_exp.len(), self.q)?;
        want("c", self.c.len(), self.m_terms + 1)?;
        want("mu_exp", self.mu_exp.len(), self.m_terms + 1)?;
        want("h_exp", self.h_exp.len(), self.m_terms + 1)?;
        want("B profiles", self.b_profiles.len(), self.q_count + 1)?;
        want("n_exp", self.n_exp.len(), self.q_count + 1)?;
        want("b_exp", self.b_exp.len(), self.q_count + 1)?;
        want("Delta", self.delta.len(), self.d_terms)?;
        want("d_exp", self.d_exp.len(), self.d_terms)?;
        want("delta_exp", self.delta_exp.len(), self.d_terms)?;
        want("Rpoly", self.r_poly.len(), self.d_terms)?;

        let increasing = |v: &[i64]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.k_exp) || self.k_exp.iter().any(|&k| k < 1) {
            return s("k_l must be positive and strictly increasing".into());
        }
        if !increasing(&self.h_exp) || self.h_exp.iter().any(|&h| h < 0) {
            return s("h_l must be nonnegative and strictly increasing".into());
        }
        if !increasing(&self.b_exp) || self.b_exp.iter().any(|&b| b < 1) {
            return s("b_j must be positive and strictly increasing".into());
        }
        if !increasing(&self.delta_exp) || self.delta_exp.iter().any(|&d| d < 1) {
            return s("δ_l must be positive and strictly increasing".into());
        }
        let nonneg = |v: &[i64]| v.iter().all(|&x| x >= 0);
        if !nonneg(&self.m_exp) || !nonneg(&self.mu_exp) || !nonneg(&self.n_exp) {
            return s("m_l, μ_l, n_j must be nonnegative".into());
        }
        if !nonneg(&self.delta) || !nonneg(&self.d_exp) || self.forcing.n_f < 0 {
            return s("Δ_l, d_l, n_F must be nonnegative".into());
        }
        if self.a.iter().any(|a| a.is_zero()) {
            return s("all a_l must be nonzero".into());
        }
        let rd = self.r_top();
        if self.q_poly.is_zero() || rd.is_zero() {
            return s("Q and R_D must be nonzero polynomials".into());
        }
        if self.q_poly.degree() != rd.degree() {
            return s("deg(Q) must equal deg(R_D)".into());
        }
        let dd = rd.degree_or_zero();
        for (l, r) in self.r_poly.iter().enumerate().take(self.d_terms - 1) {
            if r.degree_or_zero() > dd {
                return s(format!("deg(R_{}) exceeds deg(R_D)", l + 1));
            }
        }
        if self.q1_poly.degree_or_zero() > dd || self.q2_poly.degree_or_zero() > dd {
            return s("deg(R_D) must dominate deg(Q₁) and deg(Q₂)".into());
        }
        if self.forcing.f2.is_zero() {
            return s("F₂ must be nonzero".into());
        }
        if self.forcing.f1.degree_or_zero() > self.forcing.f2.degree_or_zero() {
            return s("deg(F₁) must not exceed deg(F₂)".into());
        }
        if self.forcing.gamma <= Rat::new(1, 2) {
            return s("forcing γ must exceed 1/2".into());
        }
        if self.forcing.k_f <= 0.0 {
            return s("K_F must be positive".into());
        }
        if !(self.forcing.theta_f > -std::f64::consts::FRAC_PI_2 && self.forcing.theta_f < std::f64::consts::FRAC_PI_2) {
            return s("θ_F must lie in (−π/2, π/2)".into());
        }
        // Nonvanishing of the symbols Q(im), R_D(im).
        self.check_symbols_nonvanishing(&SampledLine::default_grid(self.family.beta))?;
        // The ray L_{θ_F} must avoid the roots of F₂.
        for r in self.forcing.f2_roots() {
            if r.norm() > 0.0 && (r.arg() - self.forcing.theta_f).abs() < 1e-9 {
                return Err(Error::Structural(format!("ray L_θF meets a root of F₂ at {r}")));
            }
            if r.norm() == 0.0 {
                return Err(Error::Structural("F₂ vanishes at the origin of L_θF".into()));
            }
        }
        Ok(())
    }

    /// Symbols `Q(im)` and `R_D(im)` must not vanish: grid test plus a
    /// leading-coefficient test for the asymptotic regime.
    pub fn check_symbols_nonvanishing(&self, line: &SampledLine) -> Result<()> {
        for p in [&self.q_poly, self.r_top()] {
            for m in line.grid() {
                let v = p.symbol(m).norm();
                if v < 1e-12 {
                    return Err(Error::SingularSymbol { m, value: v });
                }
            }
            // Exact real-axis zeros: roots of p lying on the imaginary axis.
            if let Ok(roots) = crate::turning::polynomial_roots(p) {
                for r in roots {
                    if r.re.abs() < 1e-12 {
                        return Err(Error::SingularSymbol { m: r.im, value: 0.0 });
                    }
                }
            }
            if p.leading().is_zero() {
                return Err(Error::Structural("vanishing leading coefficient".into()));
            }
        }
        Ok(())
    }

    /// Samples the `j`-th inhomogeneous profile `B_j`.
    pub fn b_line(&self, j: usize, line: &SampledLine) -> SampledLine {
        self.b_profiles[j].sample(line, &self.family)
    }

    /// Samples `C_F`.
    pub fn cf_line(&self, line: &SampledLine) -> SampledLine {
        self.forcing.c_f.sample(line, &self.family)
    }
}

/// `P(t,ε) = Σ_{l=1}^q a_l ε^{m_l} t^{k_l} + a₀ ε^{m₀}` with integer powers.
pub fn eval_p(t: C64, eps: C64, spec: &EquationSpec) -> C64 {
    let mut acc = spec.a[0] * eps.powi(spec.m_exp[0] as i32);
    for l in 1..=spec.q {
        acc += spec.a[l] * eps.powi(spec.m_exp[l] as i32) * t.powi(spec.k_exp[l - 1] as i32);
    }
    acc
}

// ---------------------------------------------------------------------------
// Scale parameters
// ---------------------------------------------------------------------------

/// The inner exponent bundle (κ, χ, α, ν) and the outer one (γ, γ₀, Γ, ν_outer),
/// with β, μ shared and the disc radii / sector radii of both constructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub kappa: u32,
    #[serde(with = "rational_str")]
    pub chi: Rat,
    #[serde(with = "rational_str")]
    pub alpha: Rat,
    #[serde(with = "rational_str")]
    pub gamma: Rat,
    #[serde(with = "rational_str")]
    pub gamma0: Rat,
    #[serde(rename = "Gamma", with = "rational_str")]
    pub big_gamma: Rat,
    /// Inner weight rate ν.
    pub nu: f64,
    /// Outer weight rate; defaults to `2 K_F ε₀_outer^Γ`.
    #[serde(default)]
    pub nu_outer: Option<f64>,
    pub beta: f64,
    pub mu: f64,
    /// Inner Borel-plane disc radius ρ.
    pub rho: f64,
    /// Outer Laplace-plane disc radius.
    pub rho_outer: f64,
    /// Radius of the inner good covering.
    pub eps0: f64,
    /// Radius of the outer good covering.
    pub eps0_outer: f64,
    #[serde(default)]
    pub m0: i64,
    #[serde(default)]
    pub dlk: Vec<i64>,
}

impl ScaleParams {
    /// Fills the derived fields `m0`, `dlk` and the default outer ν.
    pub fn resolve(mut self, spec: &EquationSpec) -> Self {
        self.m0 = spec.m0();
        let k = self.kappa as i64;
        self.dlk = (0..spec.d_terms - 1)
            .map(|i| spec.d_exp[i] - spec.delta_exp[i] * (k + 1))
            .collect();
        if self.nu_outer.is_none() {
            self.nu_outer = Some(2.0 * spec.forcing.k_f * self.eps0_outer.powf(rat_f64(self.big_gamma)));
        }
        self
    }

    pub fn nu_outer(&self) -> f64 {
        self.nu_outer.unwrap_or(1.0)
    }

    pub fn chi_f(&self) -> f64 {
        rat_f64(self.chi)
    }
    pub fn alpha_f(&self) -> f64 {
        rat_f64(self.alpha)
    }
    pub fn gamma_f(&self) -> f64 {
        rat_f64(self.gamma)
    }
    pub fn gamma0_f(&self) -> f64 {
        rat_f64(self.gamma0)
    }
    pub fn big_gamma_f(&self) -> f64 {
        rat_f64(self.big_gamma)
    }
    pub fn kappa_f(&self) -> f64 {
        self.kappa as f64
    }
    /// Inner flatness order χκ.
    pub fn inner_order(&self) -> Rat {
        self.chi * Rat::from_integer(self.kappa as i64)
    }
}

pub fn rat_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Principal-branch power `ε^r` for a rational exponent.
pub fn cpow_rat(eps: C64, r: Rat) -> C64 {
    cpow_rat_on(eps, r, 0.0)
}

/// `arg ε` taken in `(reference − π, reference + π]`.
pub fn branch_arg(eps: C64, reference: f64) -> f64 {
    let d = (eps.arg() - reference + PI).rem_euclid(2.0 * PI) - PI;
    reference + if d == -PI { PI } else { d }
}

/// `ε^r` on the branch of `arg ε` centred at `reference`, so that the power
/// is continuous on any sector of opening `< 2π` around that direction.
pub fn cpow_rat_on(eps: C64, r: Rat, reference: f64) -> C64 {
    if r.is_integer() {
        return eps.powi(*r.numer() as i32);
    }
    let e = rat_f64(r);
    C64::from_polar(eps.norm().powf(e), branch_arg(eps, reference) * e)
}

// ---------------------------------------------------------------------------
// Constraint reports
// ---------------------------------------------------------------------------

/// A recorded side of a constraint: exact when it comes from exponent algebra.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Exact(Rat),
    Real(f64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Exact(r) => write!(f, "{}", format_rational(r)),
            Value::Real(x) => write!(f, "{x}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Value::Exact(r) => s.serialize_str(&format_rational(r)),
            Value::Real(x) => s.serialize_f64(*x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintEntry {
    pub id: String,
    pub pass: bool,
    pub lhs: Value,
    pub relation: Relation,
    pub rhs: Value,
    pub citation: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub entries: Vec<ConstraintEntry>,
    pub overall: bool,
}

impl ConstraintReport {
    fn new() -> Self {
        ConstraintReport { entries: Vec::new(), overall: true }
    }

    fn push_exact(&mut self, id: impl Into<String>, lhs: Rat, rel: Relation, rhs: Rat, citation: &str) {
        let pass = match rel {
            Relation::Eq => lhs == rhs,
            Relation::Ge => lhs >= rhs,
            Relation::Gt => lhs > rhs,
            Relation::Le => lhs <= rhs,
            Relation::Lt => lhs < rhs,
        };
        self.overall &= pass;
        self.entries.push(ConstraintEntry {
            id: id.into(),
            pass,
            lhs: Value::Exact(lhs),
            relation: rel,
            rhs: Value::Exact(rhs),
            citation: citation.to_string(),
        });
    }

    fn push_real(&mut self, id: impl Into<String>, lhs: f64, rel: Relation, rhs: f64, citation: &str) {
        let pass = match rel {
            Relation::Eq => lhs == rhs,
            Relation::Ge => lhs >= rhs,
            Relation::Gt => lhs > rhs,
            Relation::Le => lhs <= rhs,
            Relation::Lt => lhs < rhs,
        };
        self.overall &= pass;
        self.entries.push(ConstraintEntry {
            id: id.into(),
            pass,
            lhs: Value::Real(lhs),
            relation: rel,
            rhs: Value::Real(rhs),
            citation: citation.to_string(),
        });
    }

    /// Entries that failed.
    pub fn failures(&self) -> Vec<&ConstraintEntry> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }

    pub fn entry(&self, id: &str) -> Option<&ConstraintEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

fn ri(x: i64) -> Rat {
    Rat::from_integer(x)
}

fn check_params_structure(spec: &EquationSpec, p: &ScaleParams) -> Result<()> {
    spec.check_structure()?;
    if p.kappa == 0 {
        return Err(Error::Structural("κ must be at least 1".into()));
    }
    if !(p.beta > 0.0) || !(p.nu > 0.0) || !(p.rho > 0.0) || !(p.eps0 > 0.0) {
        return Err(Error::Structural("β, ν, ρ, ε₀ must be positive".into()));
    }
    Ok(())
}

/// Every hypothesis of the inner (Borel-plane) construction, evaluated exactly.
pub fn validate_inner(spec: &EquationSpec, p: &ScaleParams) -> Result<ConstraintReport> {
    check_params_structure(spec, p)?;
    let mut r = ConstraintReport::new();
    let kappa = ri(p.kappa as i64);
    let (chi, alpha) = (p.chi, p.alpha);
    let chik = chi * kappa;
    let m0 = ri(spec.m0());
    let (dd_big, d_d, delta_d) = spec.top();
    let (dd_big, d_d, delta_d) = (ri(dd_big), ri(d_d), ri(delta_d));
    let one = Rat::one();
    let zero = Rat::zero();

    r.push_exact(
        "inner.top_balance",
        dd_big + alpha * (delta_d - d_d) - m0,
        Relation::Eq,
        zero,
        "Δ_D + α(δ_D − d_D) − m₀ = 0",
    );
    r.push_exact("inner.top_order", d_d, Relation::Eq, delta_d * (kappa + one), "d_D = δ_D(κ+1)");
    for l in 0..spec.d_terms - 1 {
        let dlk = ri(spec.d_exp[l]) - ri(spec.delta_exp[l]) * (kappa + one);
        r.push_exact(
            format!("inner.lower_order[{}]", l + 1),
            dlk,
            Relation::Ge,
            one,
            "d_{l,κ} = d_l − δ_l(κ+1) ≥ 1",
        );
    }
    r.push_exact("inner.gamma_alpha_chi", p.gamma + alpha, Relation::Le, chi, "γ + α ≤ χ");
    r.push_exact("inner.chi_kappa", chik, Relation::Gt, Rat::new(1, 2), "χκ > 1/2");
    r.push_exact("inner.alpha_chi", alpha, Relation::Lt, chi, "α < χ");
    let m_min = spec.m_exp[1..].iter().copied().min().unwrap_or(spec.m0());
    r.push_exact("inner.turning_point", m0, Relation::Gt, ri(m_min), "m₀ > min_{l≥1} m_l");
    r.push_exact("inner.forcing_gamma", p.gamma, Relation::Eq, spec.forcing.gamma, "forcing γ equals the outer-scale γ");
    r.push_exact("inner.deltaD_kappa", delta_d, Relation::Ge, one / kappa, "δ_D ≥ 1/κ");
    for l in 1..=spec.q {
        let k = ri(spec.k_exp[l - 1]);
        let ml = ri(spec.m_exp[l]);
        r.push_exact(
            format!("inner.linear[{l}]"),
            chi * k + ml - m0 - alpha * k,
            Relation::Ge,
            zero,
            "χk_l + m_l − m₀ − αk_l ≥ 0",
        );
    }
    for j in 0..=spec.q_count {
        let b = ri(spec.b_exp[j]);
        let n = ri(spec.n_exp[j]);
        r.push_exact(
            format!("inner.forcing_monomial[{j}]"),
            chi * b + n - alpha * b,
            Relation::Ge,
            zero,
            "χb_j + n_j − αb_j ≥ 0",
        );
        r.push_exact(format!("inner.forcing_degree[{j}]"), b, Relation::Ge, one, "b_j ≥ 1");
    }
    for l in 0..spec.d_terms - 1 {
        let dl = ri(spec.d_exp[l]);
        let del = ri(spec.delta_exp[l]);
        let big = ri(spec.delta[l]);
        let dlk = dl - del * (kappa + one);
        let lhs = chik * (dlk / kappa + del) + big + alpha * (del - dl) - m0 - chik * (delta_d - one / kappa);
        r.push_exact(
            format!("inner.lower_derivative[{}]", l + 1),
            lhs,
            Relation::Ge,
            zero,
            "χκ(d_{l,κ}/κ + δ_l) + Δ_l + α(δ_l − d_l) − m₀ − χκ(δ_D − 1/κ) ≥ 0",
        );
        r.push_exact(
            format!("inner.derivative_order[{}]", l + 1),
            delta_d - one / kappa,
            Relation::Ge,
            del,
            "δ_D − 1/κ ≥ δ_l",
        );
    }
    for l in 0..=spec.m_terms {
        let h = ri(spec.h_exp[l]);
        let mu = ri(spec.mu_exp[l]);
        let lhs = chik * (h / kappa + one / kappa) + mu - ri(2) * m0 - alpha * h - chik * (delta_d - one / kappa) - chi;
        r.push_exact(
            format!("inner.quadratic[{l}]"),
            lhs,
            Relation::Ge,
            zero,
            "χκ(h_l/κ + 1/κ) + μ_l − 2m₀ − αh_l − χκ(δ_D − 1/κ) − χ ≥ 0",
        );
    }
    let deg_bound = (spec.q1_poly.degree_or_zero().max(spec.q2_poly.degree_or_zero()) + 1) as f64;
    r.push_real("inner.mu_degree", p.mu, Relation::Gt, deg_bound, "μ > max(deg Q₁ + 1, deg Q₂ + 1)");
    Ok(r)
}

/// Every hypothesis of the outer (classical Laplace) construction, evaluated exactly.
pub fn validate_outer(spec: &EquationSpec, p: &ScaleParams) -> Result<ConstraintReport> {
    check_params_structure(spec, p)?;
    let mut r = ConstraintReport::new();
    let (g, g0, gg) = (p.gamma, p.gamma0, p.big_gamma);
    let (dd_big, d_d, delta_d) = spec.top();
    let (dd_big, d_d, delta_d) = (ri(dd_big), ri(d_d), ri(delta_d));
    let one = Rat::one();
    let zero = Rat::zero();
    let m0 = ri(spec.m0());

    r.push_exact("outer.top_balance", dd_big, Relation::Eq, g * delta_d - g0, "Δ_D = γδ_D − γ₀");
    r.push_exact("outer.gamma_lower", gg, Relation::Ge, zero, "0 ≤ Γ");
    r.push_exact("outer.gamma_upper", gg, Relation::Lt, g, "Γ < γ");
    r.push_exact("outer.forcing_gamma", g, Relation::Eq, spec.forcing.gamma, "forcing γ equals the outer-scale γ");
    let m_min = spec.m_exp[1..].iter().copied().min().unwrap_or(spec.m0());
    r.push_exact("outer.turning_point", m0, Relation::Gt, ri(m_min), "m₀ > min_{l≥1} m_l");
    for l in 0..spec.d_terms - 1 {
        r.push_exact(format!("outer.dominant[d_{}]", l + 1), d_d, Relation::Ge, ri(spec.d_exp[l]), "d_D ≥ d_i");
    }
    for (l, &k) in spec.k_exp.iter().enumerate() {
        r.push_exact(format!("outer.dominant[k_{}]", l + 1), d_d, Relation::Ge, ri(k), "d_D ≥ k_j");
    }
    for (j, &b) in spec.b_exp.iter().enumerate() {
        r.push_exact(format!("outer.dominant[b_{j}]"), d_d, Relation::Ge, ri(b), "d_D ≥ b_k");
    }
    for (l, &h) in spec.h_exp.iter().enumerate() {
        r.push_exact(format!("outer.dominant[h_{l}]"), d_d, Relation::Ge, ri(h), "d_D ≥ h_l");
    }
    let nf = ri(spec.forcing.n_f);
    r.push_exact("outer.forcing_degree", d_d, Relation::Ge, one + delta_d, "d_D ≥ 1 + δ_D");
    r.push_exact(
        "outer.forcing_scaling",
        nf + gg * (d_d - one - delta_d) - g * d_d,
        Relation::Ge,
        zero,
        "n_F + Γ(d_D − 1 − δ_D) − γd_D ≥ 0",
    );
    for l in 1..=spec.q {
        let k = ri(spec.k_exp[l - 1]);
        let ml = ri(spec.m_exp[l]);
        r.push_exact(format!("outer.linear[{l}].degree"), d_d - k - one, Relation::Ge, zero, "d_D − k_l − 1 ≥ 0");
        r.push_exact(format!("outer.linear[{l}].order"), delta_d, Relation::Le, d_d - k, "δ_D ≤ d_D − k_l");
        r.push_exact(
            format!("outer.linear[{l}].scaling"),
            ml + g0 + (gg - g) * (d_d - k) - gg * delta_d,
            Relation::Ge,
            zero,
            "m_l + γ₀ + (Γ − γ)(d_D − k_l) − Γδ_D ≥ 0",
        );
    }
    r.push_exact("outer.constant.degree", d_d, Relation::Ge, one, "d_D ≥ 1");
    r.push_exact("outer.constant.order", delta_d, Relation::Le, d_d, "δ_D ≤ d_D");
    r.push_exact(
        "outer.constant.scaling",
        m0 + g0 + (gg - g) * d_d - gg * delta_d,
        Relation::Ge,
        zero,
        "m₀ + γ₀ + (Γ − γ)d_D − Γδ_D ≥ 0",
    );
    for l in 0..=spec.m_terms {
        let h = ri(spec.h_exp[l]);
        let mu = ri(spec.mu_exp[l]);
        r.push_exact(format!("outer.quadratic[{l}].order"), delta_d, Relation::Le, d_d - h, "δ_D ≤ d_D − h_l");
        r.push_exact(
            format!("outer.quadratic[{l}].scaling"),
            mu + ri(2) * g0 + (gg - g) * (d_d - h) - gg * (delta_d - one),
            Relation::Ge,
            zero,
            "μ_l + 2γ₀ + (Γ − γ)(d_D − h_l) − Γ(δ_D − 1) ≥ 0",
        );
    }
    for j in 0..=spec.q_count {
        let b = ri(spec.b_exp[j]);
        let n = ri(spec.n_exp[j]);
        r.push_exact(format!("outer.monomial[{j}].order"), d_d - b - one, Relation::Ge, delta_d, "d_D − b_j − 1 ≥ δ_D");
        r.push_exact(
            format!("outer.monomial[{j}].scaling"),
            n - g * (d_d - b) + gg * (d_d - b - one - delta_d),
            Relation::Ge,
            zero,
            "n_j − γ(d_D − b_j) + Γ(d_D − b_j − 1 − δ_D) ≥ 0",
        );
    }
    for l in 0..spec.d_terms - 1 {
        let dl = ri(spec.d_exp[l]);
        let del = ri(spec.delta_exp[l]);
        let big = ri(spec.delta[l]);
        let id = l + 1;
        r.push_exact(format!("outer.lower[{id}].order"), delta_d, Relation::Le, d_d - dl + del, "δ_D ≤ d_D − d_l + δ_l");
        r.push_exact(format!("outer.lower[{id}].derivative"), delta_d, Relation::Ge, del, "δ_D ≥ δ_l");
        r.push_exact(
            format!("outer.lower[{id}].scaling"),
            big + g0 + (gg - g) * (d_d - dl + del) - gg * delta_d,
            Relation::Ge,
            zero,
            "Δ_l + γ₀ + (Γ − γ)(d_D − d_l + δ_l) − Γδ_D ≥ 0",
        );
    }
    let deg_bound = (spec.q1_poly.degree_or_zero().max(spec.q2_poly.degree_or_zero()) + 1) as f64;
    r.push_real("outer.mu_degree", p.mu, Relation::Gt, deg_bound, "μ > max(deg Q₁ + 1, deg Q₂ + 1)");
    Ok(r)
}

/// Smallness of the coefficients required by the outer fixed-point argument:
/// `|a_i|, |c_j|, ‖B_k‖, ‖C_F‖, sup_m |R_l(im)/R_D(im)| ≤ ζ₁`.
pub fn check_smallness(spec: &EquationSpec, zeta1: f64) -> ConstraintReport {
    let mut r = ConstraintReport::new();
    let cite = "coefficient smallness bounded by ζ₁";
    for (i, a) in spec.a.iter().enumerate() {
        r.push_real(format!("small.a[{i}]"), a.norm(), Relation::Le, zeta1, cite);
    }
    for (j, c) in spec.c.iter().enumerate() {
        r.push_real(format!("small.c[{j}]"), c.norm(), Relation::Le, zeta1, cite);
    }
    let fam = spec.family;
    let line = SampledLine::default_grid(fam.beta);
    for (k, b) in spec.b_profiles.iter().enumerate() {
        let n = b
            .closed_form_norm(&fam, fam.beta, fam.mu)
            .unwrap_or_else(|| crate::fourier::ebeta_norm(&b.sample(&line, &fam), fam.beta, fam.mu).unwrap_or(f64::INFINITY));
        r.push_real(format!("small.B[{k}]"), n, Relation::Le, zeta1, cite);
    }
    let cf = &spec.forcing.c_f;
    let n = cf
        .closed_form_norm(&fam, fam.beta, fam.mu)
        .unwrap_or_else(|| crate::fourier::ebeta_norm(&cf.sample(&line, &fam), fam.beta, fam.mu).unwrap_or(f64::INFINITY));
    r.push_real("small.CF", n, Relation::Le, zeta1, cite);
    for l in 0..spec.d_terms - 1 {
        let s = sup_symbol_ratio(&spec.r_poly[l], spec.r_top());
        r.push_real(format!("small.R[{}]/R_D", l + 1), s, Relation::Le, zeta1, cite);
    }
    r
}

/// `sup_m |A(im)|/|B(im)|` over a wide grid plus the `|m| → ∞` limit.
pub fn sup_symbol_ratio(a: &Polynomial, b: &Polynomial) -> f64 {
    let n = 8001;
    let mmax = 400.0;
    let mut s = 0.0f64;
    for i in 0..n {
        let m = -mmax + 2.0 * mmax * i as f64 / (n - 1) as f64;
        s = s.max(a.symbol(m).norm() / b.symbol(m).norm());
    }
    let limit = match (a.degree(), b.degree()) {
        (None, _) => 0.0,
        (Some(da), Some(db)) if da == db => a.leading().norm() / b.leading().norm(),
        (Some(da), Some(db)) if da < db => 0.0,
        _ => f64::INFINITY,
    };
    s.max(limit)
}
