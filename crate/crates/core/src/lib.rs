//! Exponential mixture density (EMD) fusion of finite-set distributions.
//!
//! The crate covers three layers:
//!
//! * [`model`]: cardinality pmfs, Gaussian and grid localisation densities,
//!   and Bernoulli, Poisson and IID-cluster finite-set distributions.
//! * [`emd`], [`gaussian`], [`quadrature`]: EMD fusion of whole distributions
//!   and of their parts, the localisation scale factor `z_w` and its weight
//!   derivatives.
//! * [`diagnostics`] and [`solvers`]: cardinality-inconsistency tests, and
//!   Chernoff-optimal weights used by [`solvers::consistent_fuse`] to keep
//!   the fused cardinality above both inputs.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`.
//!
//! ```
//! use setfuse_core::{consistent_fuse, Gaussian, NewtonConfig, Pmf, FiniteSetDist};
//! use nalgebra::DVector;
//!
//! let a = Gaussian::isotropic(DVector::from_vec(vec![0.0, 0.0]), 1.0).unwrap();
//! let b = Gaussian::isotropic(DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
//! let fi = FiniteSetDist::iid_cluster(Pmf::binomial(5, 0.95).unwrap(), a);
//! let fj = FiniteSetDist::iid_cluster(Pmf::binomial(5, 0.92).unwrap(), b);
//! let res = consistent_fuse(&fi, &fj, &NewtonConfig::default()).unwrap();
//! assert!((res.omega_card - 0.5182).abs() < 1e-3);
//! ```

pub mod diagnostics;
pub mod emd;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod quadrature;
pub mod scalar;
pub mod solvers;

pub use error::{FusionError, Result};
pub use gaussian::CovarianceScale;
pub use model::{Divergence, Family};
pub use scalar::Real;
pub use solvers::{
    consistent_fuse, newton_cardinality, newton_localisation, NewtonConfig, NewtonTrace, SolverFlag,
};

pub type Pmf = model::CardinalityPmf<f64>;
pub type Gaussian = model::GaussianDensity<f64>;
pub type Layout = model::GridLayout<f64>;
pub type Grid = model::GridDensity<f64>;
pub type Localisation = model::LocalisationDensity<f64>;
pub type FiniteSetDist = model::FiniteSetDistribution<f64>;
pub type FiniteSet = model::FiniteSet<f64>;
pub type Fusion = solvers::FusionResult<f64>;
