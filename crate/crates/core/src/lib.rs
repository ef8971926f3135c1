//! Computational laboratory for the equilibrium measure of rational maps of
//! the Riemann sphere: exact preimage trees, the Bernoulli coding sampler,
//! singular observables and limit-theorem diagnostics.

pub mod catalog;
pub mod error;
pub mod estimate;
pub mod lyapunov;
pub mod map;
pub mod observables;
pub mod point;
pub mod poly;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod transfer;
pub mod tree;

pub use catalog::{catalog_list, lookup, CatalogEntry};
pub use error::{LabError, Result};
pub use estimate::Estimate;
pub use lyapunov::{lattes_probe, lyapunov, LattesConfig, LattesProbe};
pub use map::{MapSpec, ProductMap, ProductPoint, RationalMap};
pub use num_complex::Complex64;
pub use observables::{Kernel, Observable};
pub use point::ProjectivePoint;
pub use poly::{solve_poly, PolyRoots};
pub use rng::SeedSpec;
pub use sampler::{Ensemble, MuSampleBatch};
pub use stats::{CltReport, CovSeries, SigmaEstimate};
pub use tree::{build_tree, CodingTree, DiscretePath, Labeling};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
