//! The weighted space `E_(β,μ)` on a truncated uniform frequency grid: its
//! norm, the weighted star product, classical convolution and the inverse
//! Fourier transform.

use std::io::{Read, Write};

use num::complex::Complex64;
use num::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Polynomial;

type C64 = Complex64;

/// Default number of samples on the frequency line.
pub const DEFAULT_POINTS: usize = 2049;

/// Samples of a function `h(m)` on the symmetric grid
/// `m_j = −m_max + j·h_m`, `h_m = 2 m_max/(n−1)`, `n` odd.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledLine {
    m_max: f64,
    values: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    m: f64,
    re: f64,
    im: f64,
}

impl SampledLine {
    pub fn new(m_max: f64, values: Vec<C64>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 == 0 {
            return Err(Error::Structural(format!(
                "frequency grid needs an odd number of points, got {}",
                values.len()
            )));
        }
        if !(m_max > 0.0) || !m_max.is_finite() {
            return Err(Error::Structural(format!("m_max must be positive, got {m_max}")));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Structural("non-finite sample on frequency grid".into()));
        }
        Ok(SampledLine { m_max, values })
    }

    /// Zero function on the default grid for decay rate `beta`.
    pub fn default_grid(beta: f64) -> Self {
        SampledLine { m_max: 20.0 / beta, values: vec![C64::zero(); DEFAULT_POINTS] }
    }

    pub fn zeros(m_max: f64, n_pts: usize) -> Result<Self> {
        Self::new(m_max, vec![C64::zero(); n_pts])
    }

    pub fn from_fn(m_max: f64, n_pts: usize, f: impl Fn(f64) -> C64) -> Result<Self> {
        let z = Self::zeros(m_max, n_pts)?;
        Ok(z.map_grid(f))
    }

    /// Same grid, new values `f(m_j)`.
    pub fn map_grid(&self, f: impl Fn(f64) -> C64) -> Self {
        let values = (0..self.len()).map(|j| f(self.m(j))).collect();
        SampledLine { m_max: self.m_max, values }
    }

    /// Same grid, values given directly (length must match).
    pub fn with_values(&self, values: Vec<C64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::Structural("grid length mismatch".into()));
        }
        Self::new(self.m_max, values)
    }

    pub fn m_max(&self) -> f64 {
        self.m_max
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn spacing(&self) -> f64 {
        2.0 * self.m_max / (self.len() - 1) as f64
    }
    pub fn center(&self) -> usize {
        (self.len() - 1) / 2
    }
    pub fn m(&self, j: usize) -> f64 {
        (j as f64 - self.center() as f64) * self.spacing()
    }
    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|j| self.m(j))
    }
    pub fn values(&self) -> &[C64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }
    /// Pointwise multiplication by `f(m)`.
    pub fn scaled_by(&self, f: impl Fn(f64) -> C64) -> Self {
        let values = self.values.iter().enumerate().map(|(j, v)| v * f(self.m(j))).collect();
        SampledLine { m_max: self.m_max, values }
    }

    pub fn same_grid(&self, other: &SampledLine) -> bool {
        self.len() == other.len() && self.m_max == other.m_max
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (j, v) in self.values.iter().enumerate() {
            wr.serialize(CsvRow { m: self.m(j), re: v.re, im: v.im })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut ms = Vec::new();
        let mut vals = Vec::new();
        for row in rd.deserialize() {
            let row: CsvRow = row?;
            ms.push(row.m);
            vals.push(C64::new(row.re, row.im));
        }
        let m_max = ms.last().copied().unwrap_or(0.0);
        if ms.first().map(|m| (m + m_max).abs() > 1e-9 * m_max.max(1.0)).unwrap_or(true) {
            return Err(Error::Structural("CSV grid is not symmetric about 0".into()));
        }
        Self::new(m_max, vals)
    }
}

/// `‖h‖_(β,μ) = max_j (1+|m_j|)^μ e^{β|m_j|} |h(m_j)|`.
pub fn ebeta_norm(h: &SampledLine, beta: f64, mu: f64) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::Structural("empty frequency grid".into()));
    }
    Ok(h.grid()
        .zip(h.values())
        .map(|(m, v)| (1.0 + m.abs()).powf(mu) * (beta * m.abs()).exp() * v.norm())
        .fold(0.0, f64::max))
}

/// Discrete convolution `c_j = Σ_k f_{j−k} g_k h` on a centred odd grid,
/// zero-extended, with trapezoid halving at both ends of each sum's support.
/// Evaluated in parallel over `j`; each sum is reduced in a fixed order.
pub fn convolve(f: &[C64], g: &[C64], h: f64) -> Vec<C64> {
    let n = f.len();
    debug_assert_eq!(n, g.len());
    let c = (n - 1) / 2;
    (0..n)
        .into_par_iter()
        .map(|j| conv_at(f, g, h, j, c))
        .collect()
}

/// Serial variant of [`convolve`] for use inside already-parallel loops.
pub fn convolve_serial(f: &[C64], g: &[C64], h: f64) -> Vec<C64> {
    let n = f.len();
    let c = (n - 1) / 2;
    (0..n).map(|j| conv_at(f, g, h, j, c)).collect()
}

#[inline]
fn conv_at(f: &[C64], g: &[C64], h: f64, j: usize, c: usize) -> C64 {
    let n = f.len();
    // f index j − k + c must lie in [0, n).
    let lo = j.saturating_sub(c);
    let hi = (j + c).min(n - 1);
    if lo > hi {
        return C64::zero();
    }
    let mut acc = C64::zero();
    for k in lo..=hi {
        acc += f[j + c - k] * g[k];
    }
    if hi > lo {
        acc -= 0.5 * (f[j + c - lo] * g[lo] + f[j + c - hi] * g[hi]);
    }
    acc * h
}

/// `(f⋆g)(m) = R(im)^{−1} ∫ Q₁(i(m−m₁)) f(m−m₁) Q₂(im₁) g(m₁) dm₁` on the grid.
pub fn star_product(
    f: &SampledLine,
    g: &SampledLine,
    q1: &Polynomial,
    q2: &Polynomial,
    r: &Polynomial,
) -> Result<SampledLine> {
    if !f.same_grid(g) {
        return Err(Error::Structural("star product operands must share a grid".into()));
    }
    let (dr, d1, d2) = (r.degree(), q1.degree_or_zero(), q2.degree_or_zero());
    match dr {
        Some(d) if d >= d1 && d >= d2 => {}
        _ => return Err(Error::Structural("deg(R) must dominate deg(Q₁), deg(Q₂)".into())),
    }
    let mut rsym = Vec::with_capacity(f.len());
    for m in f.grid() {
        let v = r.symbol(m);
        if v.norm() < 1e-12 {
            return Err(Error::SingularSymbol { m, value: v.norm() });
        }
        rsym.push(v);
    }
    let fq: Vec<C64> = f.grid().zip(f.values()).map(|(m, v)| q1.symbol(m) * v).collect();
    let gq: Vec<C64> = g.grid().zip(g.values()).map(|(m, v)| q2.symbol(m) * v).collect();
    let conv = convolve(&fq, &gq, f.spacing());
    f.with_values(conv.into_iter().zip(rsym).map(|(c, rv)| c / rv).collect())
}

/// Classical convolution `f ∗ g`.
pub fn classical_convolution(f: &SampledLine, g: &SampledLine) -> Result<SampledLine> {
    let one = Polynomial::one();
    star_product(f, g, &one, &one, &one)
}

/// Empirical product constant `‖f⋆g‖/(‖f‖‖g‖)` for one pair.
pub fn star_constant(
    f: &SampledLine,
    g: &SampledLine,
    q1: &Polynomial,
    q2: &Polynomial,
    r: &Polynomial,
    beta: f64,
    mu: f64,
) -> Result<f64> {
    let p = star_product(f, g, q1, q2, r)?;
    let den = ebeta_norm(f, beta, mu)? * ebeta_norm(g, beta, mu)?;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(ebeta_norm(&p, beta, mu)? / den)
}

/// `F⁻¹(h)(z) = (2π)^{−1/2} Σ_j h(m_j) e^{i z m_j} h_m` (trapezoid).
pub fn inverse_fourier(h: &SampledLine, z: C64) -> C64 {
    trapezoid_fourier(h.values(), h, z, 1)
}

fn trapezoid_fourier(vals: &[C64], h: &SampledLine, z: C64, stride: usize) -> C64 {
    let n = vals.len();
    let mut acc = C64::zero();
    let iz = C64::new(0.0, 1.0) * z;
    let mut j = 0;
    while j < n {
        let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
        acc += vals[j] * (iz * h.m(j)).exp() * w;
        j += stride;
    }
    acc * (h.spacing() * stride as f64) / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse Fourier transform together with a Richardson estimate of the
/// discretisation error, `|I_h − I_{2h}|/3`, from the every-other-point subgrid.
pub fn inverse_fourier_with_error(h: &SampledLine, z: C64) -> (C64, f64) {
    let fine = inverse_fourier(h, z);
    if (h.len() - 1) % 4 != 0 {
        return (fine, f64::NAN);
    }
    let coarse = trapezoid_fourier(h.values(), h, z, 2);
    (fine, (fine - coarse).norm() / 3.0)
}

/// `|F⁻¹(f)(z)·F⁻¹(g)(z) − F⁻¹((2π)^{−1/2} f∗g)(z)|`.
pub fn product_identity_check(f: &SampledLine, g: &SampledLine, z: C64) -> Result<f64> {
    let conv = classical_convolution(f, g)?;
    let psi = conv.scaled_by(|_| C64::new(1.0 / (2.0 * std::f64::consts::PI).sqrt(), 0.0));
    Ok((inverse_fourier(f, z) * inverse_fourier(g, z) - inverse_fourier(&psi, z)).norm())
}

/// Lattice convolution `h Σ_k f(m_j − m_k) g(m_k)` through zero-padded FFTs.
///
/// Forward transforms are linear, so callers may combine transformed rows
/// (interpolation, quadrature sums) before multiplying pointwise; only the
/// final sum is transformed back with [`FftConvolver::finish`].
pub struct FftConvolver {
    n: usize,
    size: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl FftConvolver {
    pub fn new(n: usize) -> Self {
        let size = 2 * n;
        let mut planner = rustfft::FftPlanner::new();
        FftConvolver { n, size, forward: planner.plan_fft_forward(size), inverse: planner.plan_fft_inverse(size) }
    }

    pub fn transform(&self, row: &[C64]) -> Vec<C64> {
        let mut buf = vec![C64::zero(); self.size];
        buf[..self.n].copy_from_slice(row);
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform of a product spectrum, restricted to the grid and
    /// scaled by the spacing `h`.
    pub fn finish(&self, mut spectrum: Vec<C64>, h: f64) -> Vec<C64> {
        self.inverse.process(&mut spectrum);
        let c = (self.n - 1) / 2;
        let s = h / self.size as f64;
        spectrum[c..c + self.n].iter().map(|v| v * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn norm_of_weight_inverse_is_one() {
        let (beta, mu) = (1.0, 2.5);
        let h = SampledLine::from_fn(20.0, 2049, |m| c((1.0 + m.abs()).powf(-mu) * (-beta * m.abs()).exp())).unwrap();
        assert_relative_eq!(ebeta_norm(&h, beta, mu).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn norm_maximiser_matches_calculus() {
        // (1+x)² e^{−x} peaks at x = 1 with value 4/e; grid with m = 1 on it.
        let h = SampledLine::from_fn(20.0, 2001, |m| c((-2.0 * m.abs()).exp())).unwrap();
        assert_relative_eq!(ebeta_norm(&h, 1.0, 2.0).unwrap(), 4.0 / std::f64::consts::E, epsilon = 1e-12);
    }

    #[test]
    fn box_convolution_is_triangle() {
        // box on [−1,1] sampled so that ±1 are grid points
        let h = SampledLine::from_fn(4.0, 801, |m| if m.abs() <= 1.0 + 1e-12 { c(1.0) } else { c(0.0) }).unwrap();
        let p = classical_convolution(&h, &h).unwrap();
        let mid = p.values()[p.center()];
        assert!((mid.re - 2.0).abs() < 2.0 * h.spacing(), "{mid}");
    }

    #[test]
    fn inverse_fourier_of_two_sided_exponential() {
        let h = SampledLine::from_fn(40.0, 8001, |m| c((-m.abs()).exp())).unwrap();
        let v = inverse_fourier(&h, C64::zero());
        assert_relative_eq!(v.re, (2.0 / std::f64::consts::PI).sqrt(), max_relative = 1e-5);
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let n = 33;
        let f: Vec<C64> = (0..n).map(|j| C64::new((j as f64 * 0.3).sin(), 0.1 * j as f64)).collect();
        let g: Vec<C64> = (0..n).map(|j| C64::new(1.0 / (1.0 + j as f64), -(j as f64 * 0.7).cos())).collect();
        let fc = FftConvolver::new(n);
        let fast = fc.finish(fc.transform(&f).iter().zip(fc.transform(&g)).map(|(a, b)| a * b).collect(), 0.5);
        let c = (n - 1) / 2;
        for j in 0..n {
            let mut direct = C64::zero();
            for k in 0..n {
                let a = j as isize + c as isize - k as isize;
                if (0..n as isize).contains(&a) {
                    direct += f[a as usize] * g[k];
                }
            }
            assert!((fast[j] - direct * 0.5).norm() < 1e-12);
        }
    }
}
