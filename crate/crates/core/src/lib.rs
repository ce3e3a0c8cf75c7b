//! Numerical companion for a family of nonlinear singularly perturbed PDEs
//! with moving turning points: exact parameter validation, the Borel-plane
//! (inner) and classical-Laplace (outer) fixed-point constructions, and the
//! Gevrey-flatness analysis of the resulting cocycles.

pub mod asymptotics;
pub mod config;
pub mod error;
pub mod forcing;
pub mod fourier;
pub mod geometry;
pub mod inner;
pub mod kernels;
pub mod model;
pub mod outer;
pub mod quadrature;
pub mod transforms;
pub mod turning;

pub use error::{Error, Result};
