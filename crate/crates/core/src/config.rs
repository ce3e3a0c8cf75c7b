//! Run configuration: the scale parameters of one example together with the
//! geometry choices of both sector families, loaded from JSON next to the
//! equation document.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num::complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{
    associate_inner, associate_outer, build_covering, build_covering_rotated, inner_laplace_direction, outer_laplace_direction,
    AssociatedFamily, InnerGeometry, OuterGeometry,
};
use crate::inner::{GridSpec, InnerRun, SolveConfig};
use crate::model::{EquationSpec, ScaleParams};
use crate::outer::OuterRun;

type C64 = Complex64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSettings {
    /// Number of sectors of the inner good covering.
    pub count: usize,
    /// Aperture of each Borel-plane sector `S_{𝔡_p}`.
    pub sector_aperture: f64,
    pub x_bisector: f64,
    pub x_aperture: f64,
    pub delta1: f64,
    /// Radius of X; defaults to `0.9 (δ₁/(δ₂+ν))^{1/κ}` with `δ₂ = δ₁/2`.
    #[serde(default)]
    pub rho_x: Option<f64>,
    #[serde(default)]
    pub m_points: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterSettings {
    /// Number of sectors ι of the outer good covering.
    pub count: usize,
    pub u_margin: f64,
    pub alpha_inf: f64,
    pub beta_inf: f64,
    pub delta1: f64,
    pub delta_nu_factor: f64,
    #[serde(default)]
    pub m_points: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    /// Equation document, relative to the configuration file.
    pub spec: String,
    pub params: ScaleParams,
    /// Smallness bound ζ₁ on the coupling coefficients.
    pub zeta1: f64,
    pub inner: InnerSettings,
    pub outer: OuterSettings,
    #[serde(default)]
    pub solve: SolveConfig,
}

/// A configuration with its equation loaded and the derived fields resolved.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub spec: EquationSpec,
    pub params: ScaleParams,
    pub spec_path: PathBuf,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Loaded> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        let spec_path = path.parent().unwrap_or(Path::new(".")).join(&config.spec);
        let spec = EquationSpec::load(&spec_path)?;
        Ok(Loaded::new(config, spec, spec_path))
    }
}

impl Loaded {
    pub fn new(config: RunConfig, spec: EquationSpec, spec_path: PathBuf) -> Self {
        let params = config.params.clone().resolve(&spec);
        Loaded { config, spec, params, spec_path }
    }

    pub fn delta1(&self) -> f64 {
        self.config.inner.delta1
    }

    /// `ρ_X`, defaulting to `0.9 σ` with `σ = (δ₁/(δ₂+ν))^{1/κ}`.
    pub fn rho_x(&self) -> f64 {
        let s = &self.config.inner;
        s.rho_x.unwrap_or_else(|| {
            let d1 = s.delta1;
            0.9 * (d1 / (0.5 * d1 + self.params.nu)).powf(1.0 / self.params.kappa_f())
        })
    }

    /// Inner good covering: `count` sectors with target aperture `π/(χκ)`,
    /// rotated by half a spacing so no bisector sits on the real axis.
    pub fn inner_family(&self) -> Result<AssociatedFamily> {
        let s = &self.config.inner;
        let target = PI / (self.params.chi_f() * self.params.kappa_f());
        let offset = PI / s.count as f64;
        let cov = build_covering_rotated(s.count, target, self.params.eps0, offset)?;
        let geo = InnerGeometry {
            sector_aperture: s.sector_aperture,
            x_bisector: s.x_bisector,
            x_aperture: s.x_aperture,
            rho_x: self.rho_x(),
            delta1: s.delta1,
        };
        associate_inner(&cov, &self.spec, &self.params, &geo)
    }

    /// Outer good covering: `ι` sectors with target aperture `π/γ`, bisectors
    /// `(π/2 + πj)/γ`.
    pub fn outer_family(&self) -> Result<AssociatedFamily> {
        let s = &self.config.outer;
        let g = self.params.gamma_f();
        let cov = build_covering_rotated(s.count, PI / g, self.params.eps0_outer, 0.5 * PI / g)?;
        let geo = OuterGeometry {
            u_margin: s.u_margin,
            alpha_inf: s.alpha_inf,
            beta_inf: s.beta_inf,
            delta1: s.delta1,
            delta_nu_factor: s.delta_nu_factor,
        };
        associate_outer(&cov, &self.spec, &self.params, &geo)
    }

    /// Plain covering used where only the ε-sectors matter.
    pub fn plain_covering(&self, count: usize, target: f64) -> Result<crate::geometry::GoodCovering> {
        build_covering(count, target, self.params.eps0)
    }

    pub fn inner_grid(&self) -> Result<GridSpec> {
        let mut g = GridSpec::inner_default(&self.params, self.delta1(), self.rho_x())?;
        if let Some(n) = self.config.inner.m_points {
            g.m_points = n;
        }
        Ok(g)
    }

    /// The inner ray for `ε` in sector `p` targeting times `t = x ε^{χ−α}`
    /// with `arg x` at the bisector of X.
    pub fn inner_run(&self, fam: &AssociatedFamily, p: usize, eps: C64) -> Result<InnerRun> {
        let arg_t = self.params.alpha_f() * eps.arg() + (self.params.chi_f() - self.params.alpha_f()) * eps.arg() + self.config.inner.x_bisector;
        let direction = inner_laplace_direction(fam, p, arg_t, self.params.kappa)?;
        Ok(InnerRun { direction, delta1: self.delta1(), grid: self.inner_grid()?, solve: self.config.solve.clone() })
    }

    /// Outer direction `𝔲_j^Δ` for `ε` in sector `j` at `arg t`.
    pub fn outer_direction(&self, fam: &AssociatedFamily, j: usize, eps: C64, arg_t: f64) -> Result<f64> {
        outer_laplace_direction(fam, j, eps, arg_t, self.params.gamma_f())
    }
    pub fn outer_grid(&self, fam: &AssociatedFamily) -> Result<GridSpec> {
        let mut g = GridSpec::outer_default(&self.params, self.config.outer.delta1, fam.delta_nu)?;
        if let Some(n) = self.config.outer.m_points {
            g.m_points = n;
        }
        Ok(g)
    }

    /// The outer ray `𝔲_j^Δ` for `ε` in sector `j` and times with `arg t = arg_t`.
    pub fn outer_run(&self, fam: &AssociatedFamily, j: usize, eps: C64, arg_t: f64) -> Result<OuterRun> {
        Ok(OuterRun {
            direction: self.outer_direction(fam, j, eps, arg_t)?,
            eps_ref: crate::geometry::wrap(fam.covering.sectors[j].bisector),
            delta1: self.config.outer.delta1,
            delta_nu: fam.delta_nu,
            grid: self.outer_grid(fam)?,
            solve: self.config.solve.clone(),
        })
    }
}
