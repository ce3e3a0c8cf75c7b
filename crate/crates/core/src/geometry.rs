//! Good coverings of the punctured ε-disc, the sector families associated to
//! them (Borel-plane directions for the inner solutions, Laplace directions
//! for the outer ones), and the time-scale gap between the two constructions.

use std::f64::consts::PI;

use num::complex::Complex64;
use num::rational::Rational64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{branch_arg, rat_f64, EquationSpec, ScaleParams};
use crate::turning::{sector_admissibility, symbol_ratio_inf, AdmissibilityReport};

type C64 = Complex64;

/// Size of the angular mesh used to verify covering invariants.
pub const COVERING_MESH: usize = 10_000;

/// Signed angular difference `a − b` wrapped to `(−π, π]`.
pub fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Open sector `{ r_min < |z| < r_max, |arg z − bisector| < aperture/2 }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sector {
    pub bisector: f64,
    pub aperture: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Sector {
    pub fn new(bisector: f64, aperture: f64, r_min: f64, r_max: f64) -> Result<Self> {
        if !(aperture > 0.0 && aperture < 2.0 * PI) {
            return Err(Error::Geometry(format!("aperture {aperture} outside (0, 2π)")));
        }
        if !(r_min >= 0.0 && r_min < r_max) {
            return Err(Error::Geometry(format!("radii [{r_min}, {r_max}) are not ordered")));
        }
        Ok(Sector { bisector, aperture, r_min, r_max })
    }

    pub fn contains_angle(&self, a: f64) -> bool {
        wrap(a - self.bisector).abs() < 0.5 * self.aperture
    }

    pub fn contains(&self, z: C64) -> bool {
        let r = z.norm();
        r > self.r_min && r < self.r_max && self.contains_angle(z.arg())
    }

    /// Evenly spaced interior angles (excluding the open boundary).
    pub fn angle_mesh(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.bisector - 0.5 * self.aperture + self.aperture * (i as f64 + 0.5) / n as f64)
            .collect()
    }
}

/// Cyclic family of overlapping sectors without triple intersections.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodCovering {
    pub sectors: Vec<Sector>,
    pub aperture_target: f64,
    pub eps0: f64,
    pub xi: f64,
}

impl GoodCovering {
    pub fn len(&self) -> usize {
        self.sectors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    /// Angle at the middle of the overlap of sectors `p` and `p+1`.
    pub fn overlap_center(&self, p: usize) -> f64 {
        let a = &self.sectors[p];
        let b = &self.sectors[(p + 1) % self.len()];
        a.bisector + 0.5 * wrap(b.bisector - a.bisector)
    }

    /// Angular half-width of the overlap of sectors `p` and `p+1`.
    pub fn overlap_half_width(&self, p: usize) -> f64 {
        let a = &self.sectors[p];
        let b = &self.sectors[(p + 1) % self.len()];
        0.5 * (0.5 * (a.aperture + b.aperture) - wrap(b.bisector - a.bisector).abs())
    }

    /// Checks overlap, no-triple and union invariants on the angular mesh.
    pub fn verify(&self) -> Result<()> {
        let n = self.len();
        let mut overlap = vec![false; n];
        for i in 0..COVERING_MESH {
            let a = -PI + 2.0 * PI * (i as f64 + 0.5) / COVERING_MESH as f64;
            let inside: Vec<usize> = (0..n).filter(|&p| self.sectors[p].contains_angle(a)).collect();
            if inside.is_empty() {
                return Err(Error::Geometry(format!("angle {a:.4} is not covered")));
            }
            if inside.len() >= 3 {
                return Err(Error::Geometry(format!(
                    "triple intersection of sectors {:?} at angle {a:.4}",
                    &inside[..3]
                )));
            }
            for p in 0..n {
                if inside.contains(&p) && inside.contains(&((p + 1) % n)) {
                    overlap[p] = true;
                }
            }
        }
        if let Some(p) = overlap.iter().position(|o| !o) {
            return Err(Error::Geometry(format!("sectors {p} and {} do not overlap", (p + 1) % n)));
        }
        Ok(())
    }
}

/// Equally spaced covering with bisectors `offset + 2πp/count`.
///
/// Aperture `max(target + ξ, 2π/count + ξ)` with `ξ = 10%` of the target.
pub fn build_covering_rotated(count: usize, aperture_target: f64, eps0: f64, offset: f64) -> Result<GoodCovering> {
    if count < 2 {
        return Err(Error::Geometry("a good covering needs at least two sectors".into()));
    }
    if !(aperture_target > 0.0) || !(eps0 > 0.0) {
        return Err(Error::Geometry("aperture target and radius must be positive".into()));
    }
    let spacing = 2.0 * PI / count as f64;
    let xi = 0.1 * aperture_target;
    let aperture = (aperture_target + xi).max(spacing + xi);
    if aperture >= 2.0 * spacing || aperture >= 2.0 * PI {
        return Err(Error::Geometry(format!(
            "aperture {aperture:.4} forces triple intersections for {count} sectors (needs < {:.4})",
            2.0 * spacing
        )));
    }
    let sectors = (0..count)
        .map(|p| Sector::new(wrap(offset + spacing * p as f64), aperture, 0.0, eps0))
        .collect::<Result<Vec<_>>>()?;
    let cov = GoodCovering { sectors, aperture_target, eps0, xi };
    cov.verify()?;
    Ok(cov)
}

pub fn build_covering(count: usize, aperture_target: f64, eps0: f64) -> Result<GoodCovering> {
    build_covering_rotated(count, aperture_target, eps0, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FamilyKind {
    Inner,
    Outer,
}

/// Geometry choices for the inner family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InnerGeometry {
    /// Aperture of each Borel-plane sector `S_{𝔡_p}`.
    pub sector_aperture: f64,
    /// The rescaled-time sector `X` (bisector, aperture, radius ρ_X).
    pub x_bisector: f64,
    pub x_aperture: f64,
    pub rho_x: f64,
    pub delta1: f64,
}

/// Geometry choices for the outer family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OuterGeometry {
    /// Angular margin kept between `U_{𝔲_j}` and the negative real axis.
    pub u_margin: f64,
    pub alpha_inf: f64,
    pub beta_inf: f64,
    pub delta1: f64,
    /// `Δ_{ν,δ₁^∞}` as a multiple of `ν/δ₁^∞` (must exceed 1).
    pub delta_nu_factor: f64,
}

/// Sector family associated to a good covering.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssociatedFamily {
    pub kind: FamilyKind,
    pub covering: GoodCovering,
    /// 𝔡_p (inner) or 𝔲_j (outer).
    pub directions: Vec<f64>,
    /// Aperture of the direction sectors `S_{𝔡_p}` or `U_{𝔲_j}`.
    pub sector_aperture: f64,
    /// θ (inner); unused for the outer family.
    pub theta: f64,
    pub deltas: (f64, f64),
    pub rho_x: f64,
    pub delta_nu: f64,
    pub alpha_inf: f64,
    pub beta_inf: f64,
    /// Rescaled-time sector X (inner) or time sector of 𝒯^∞ (outer).
    pub x_bisector: f64,
    pub x_aperture: f64,
    /// Admissibility constants of each `S_{𝔡_p}` (inner only).
    pub reports: Vec<AdmissibilityReport>,
}

fn inner_item3(cov: &GoodCovering, p: usize, d: f64, chi: f64, params: &InnerGeometry, theta: f64) -> bool {
    let s = &cov.sectors[p];
    let half = 0.5 * params.x_aperture;
    s.angle_mesh(64).iter().all(|&ae| {
        (0..17).all(|k| {
            let ax = params.x_bisector - half + 2.0 * half * (k as f64 + 0.5) / 17.0;
            wrap(ax + chi * ae - d).abs() < 0.5 * theta
        })
    })
}

/// Chooses Borel directions `𝔡_p` for every sector of `cov` (0.5° scan).
///
/// Candidates are tried in order of distance from `χ·bisector + arg X` (the
/// centre of the rescaled times), ties going to the smaller nonnegative angle.
pub fn associate_inner(
    cov: &GoodCovering,
    spec: &EquationSpec,
    p: &ScaleParams,
    params: &InnerGeometry,
) -> Result<AssociatedFamily> {
    if p.alpha >= p.chi {
        return Err(Error::Association("α < χ is required".into()));
    }
    let chi = rat_f64(p.chi);
    let theta = PI / p.kappa_f() + 0.5 * params.sector_aperture;
    let r_qrd = symbol_ratio_inf(spec);
    let step = PI / 360.0;
    let mut directions = Vec::new();
    let mut reports = Vec::new();
    // Sectors whose rescaled centres coincide mod 2π revisit the same candidates.
    let mut cache: std::collections::HashMap<u64, AdmissibilityReport> = std::collections::HashMap::new();
    for (idx, s) in cov.sectors.iter().enumerate() {
        let center = (chi * s.bisector + params.x_bisector).rem_euclid(2.0 * PI);
        let mut cands: Vec<f64> = (0..720).map(|k| k as f64 * step).collect();
        cands.sort_by(|a, b| {
            let (da, db) = (wrap(a - center).abs(), wrap(b - center).abs());
            da.partial_cmp(&db).unwrap().then(a.partial_cmp(b).unwrap())
        });
        let mut found = None;
        let mut any_item3 = false;
        for &d in &cands {
            if !inner_item3(cov, idx, d, chi, params, theta) {
                continue;
            }
            any_item3 = true;
            let rep = match cache.get(&d.to_bits()) {
                Some(r) => r.clone(),
                None => {
                    let r = sector_admissibility(d, params.sector_aperture, p.rho, spec, p, r_qrd)?;
                    cache.insert(d.to_bits(), r.clone());
                    r
                }
            };
            if rep.pass {
                found = Some((d, rep));
                break;
            }
        }
        match found {
            Some((d, rep)) => {
                directions.push(d);
                reports.push(rep);
            }
            None if !any_item3 => {
                return Err(Error::Association(format!(
                    "sector {idx}: no direction keeps arg(ε^α t) within θ/2 (item 3 fails for all 720 candidates)"
                )))
            }
            None => {
                return Err(Error::Association(format!(
                    "sector {idx}: no admissible Borel direction among 720 candidates"
                )))
            }
        }
    }
    Ok(AssociatedFamily {
        kind: FamilyKind::Inner,
        covering: cov.clone(),
        directions,
        sector_aperture: params.sector_aperture,
        theta,
        deltas: (params.delta1, 0.5 * params.delta1),
        rho_x: params.rho_x,
        delta_nu: 0.0,
        alpha_inf: 0.0,
        beta_inf: 0.0,
        x_bisector: params.x_bisector,
        x_aperture: params.x_aperture,
        reports,
    })
}

/// Laplace direction on `L_γ ⊂ S_{𝔡_p}` for the inner solution at `(ε, t)`:
/// the point of the sector closest to `arg(ε^α t)`, subject to
/// `cos(κ(γ − arg(ε^α t))) ≥ δ₁`.
pub fn inner_laplace_direction(fam: &AssociatedFamily, p: usize, big_t_arg: f64, kappa: u32) -> Result<f64> {
    let d = fam.directions[p];
    let half = 0.5 * fam.sector_aperture;
    let local = d + wrap(big_t_arg - d);
    let g = local.clamp(d - half, d + half);
    let c = (kappa as f64 * (g - local)).cos();
    if c < fam.deltas.0 {
        return Err(Error::Sector(format!(
            "no Laplace direction in S_d (d = {d:.4}) reaches δ₁ = {} for arg T = {big_t_arg:.4} (best cos = {c:.4})",
            fam.deltas.0
        )));
    }
    Ok(g)
}

/// Outer directions: `𝔲_j = 0`, `U = (−π + η, π − η)`, validated against the
/// roots of `F₂` and the cosine condition on a mesh.
pub fn associate_outer(
    cov: &GoodCovering,
    spec: &EquationSpec,
    p: &ScaleParams,
    params: &OuterGeometry,
) -> Result<AssociatedFamily> {
    if !(params.delta1 > 0.0 && params.delta1 <= 1.0) {
        return Err(Error::Association(format!("δ₁^∞ = {} cannot be reached by a cosine", params.delta1)));
    }
    if !(params.delta_nu_factor > 1.0) {
        return Err(Error::Association("Δ_{ν,δ₁^∞} must exceed ν/δ₁^∞".into()));
    }
    let aperture = 2.0 * (PI - params.u_margin);
    let roots = spec.forcing.f2_roots();
    let u_sector = |u: f64| Sector { bisector: u, aperture, r_min: 0.0, r_max: f64::INFINITY };
    let mut directions = Vec::new();
    for (j, _) in cov.sectors.iter().enumerate() {
        // Scan (−π/2, π/2) by 0.5° from 0 outwards for a root-free U.
        let cands = (0..360).map(|k| if k % 2 == 0 { k as f64 / 2.0 } else { -((k + 1) as f64) / 2.0 } * PI / 360.0);
        let mut found = None;
        for u in cands {
            if u.abs() >= 0.5 * PI {
                continue;
            }
            if roots.iter().all(|r| !u_sector(u).contains_angle(r.arg())) {
                found = Some(u);
                break;
            }
        }
        match found {
            Some(u) => directions.push(u),
            None => {
                return Err(Error::Association(format!(
                    "sector {j}: every candidate U contains a root of F₂ ({:?})",
                    roots
                )))
            }
        }
    }
    let nu = p.nu_outer();
    let delta_nu = params.delta_nu_factor * nu / params.delta1;
    let mut fam = AssociatedFamily {
        kind: FamilyKind::Outer,
        covering: cov.clone(),
        directions,
        sector_aperture: aperture,
        theta: 0.0,
        deltas: (params.delta1, 0.5 * params.delta1),
        rho_x: 0.0,
        delta_nu,
        alpha_inf: params.alpha_inf,
        beta_inf: params.beta_inf,
        x_bisector: 0.5 * (params.alpha_inf + params.beta_inf),
        x_aperture: params.beta_inf - params.alpha_inf,
        reports: Vec::new(),
    };
    // Mesh validation of the cosine condition.
    let g = p.gamma_f();
    for j in 0..cov.len() {
        for &ae in &cov.sectors[j].angle_mesh(48) {
            for k in 0..9 {
                let at = params.alpha_inf + (params.beta_inf - params.alpha_inf) * (k as f64 + 0.5) / 9.0;
                let eps = C64::from_polar(0.5 * cov.eps0, ae);
                outer_laplace_direction(&fam, j, eps, at, g).map_err(|e| {
                    Error::Association(format!("sector {j}, arg ε = {ae:.4}, arg t = {at:.4}: {e}"))
                })?;
            }
        }
    }
    fam.deltas = (params.delta1, 0.5 * params.delta1);
    Ok(fam)
}

/// Laplace direction `𝔲_j^Δ(ε, t) ∈ U_{𝔲_j}` with
/// `cos(𝔲 + arg(t/ε^γ)) ≥ δ₁^∞`, where `ε^γ` uses the branch of `arg ε`
/// centred at the sector bisector and a branch index fixed per sector (so
/// the choice is continuous in ε).
pub fn outer_laplace_direction(fam: &AssociatedFamily, j: usize, eps: C64, t_arg: f64, gamma: f64) -> Result<f64> {
    let s = &fam.covering.sectors[j];
    let wb = wrap(s.bisector);
    let psi = gamma * branch_arg(eps, wb) - t_arg;
    let psi_c = gamma * wb - fam.x_bisector;
    let n = (psi_c / (2.0 * PI)).round();
    let u0 = fam.directions[j];
    let half = 0.5 * fam.sector_aperture;
    let u = (psi - 2.0 * PI * n).clamp(u0 - half + 1e-12, u0 + half - 1e-12);
    let c = (u - psi).cos();
    if c < fam.deltas.0 {
        return Err(Error::Sector(format!(
            "cos(𝔲 + arg(t/ε^γ)) = {c:.4} below δ₁^∞ = {}",
            fam.deltas.0
        )));
    }
    Ok(u)
}

/// Margin and threshold of the inner/outer time-scale separation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingGap {
    pub margin: f64,
    pub margin_exact: String,
    pub eps_threshold: f64,
}

/// `margin = (χ − α) − (γ − Γ)` and `ε* = (Δ_ν/ρ_X)^{1/margin}`, below which
/// `ρ_X|ε|^{χ−α} < Δ_ν|ε|^{γ−Γ}` (the inner and outer time sectors are disjoint).
pub fn scaling_gap(p: &ScaleParams, rho_x: f64, delta_nu: f64) -> Result<ScalingGap> {
    let margin: Rational64 = (p.chi - p.alpha) - (p.gamma - p.big_gamma);
    if margin <= Rational64::from_integer(0) {
        return Err(Error::Geometry(format!(
            "scaling margin (χ−α)−(γ−Γ) = {} is not positive",
            crate::model::format_rational(&margin)
        )));
    }
    let m = rat_f64(margin);
    Ok(ScalingGap {
        margin: m,
        margin_exact: crate::model::format_rational(&margin),
        eps_threshold: (delta_nu / rho_x).powf(1.0 / m),
    })
}

/// Radius comparison `ρ_X|ε|^{χ−α} < Δ_ν|ε|^{γ−Γ}` at one `|ε|`.
pub fn time_domains_disjoint(p: &ScaleParams, rho_x: f64, delta_nu: f64, eps_abs: f64) -> bool {
    let inner = rho_x * eps_abs.powf(rat_f64(p.chi - p.alpha));
    let outer = delta_nu * eps_abs.powf(rat_f64(p.gamma - p.big_gamma));
    inner < outer
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_symmetric() {
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn four_quadrant_covering() {
        let c = build_covering(4, PI / 2.0, 1.0).unwrap();
        assert!((c.sectors[0].aperture - (PI / 2.0 + 0.05 * PI)).abs() < 1e-12);
    }
}
