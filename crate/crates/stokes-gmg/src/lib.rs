//! Adaptive geometric multigrid for the 2D stationary Stokes equations.
//!
//! The crate discretizes the stationary Stokes system with stabilized
//! equal-order Q1-Q1 finite elements on quadrilateral meshes, builds nested
//! mesh hierarchies by uniform or distance-band adaptive quadtree refinement
//! (2:1 balanced, hanging nodes condensed out), and solves the resulting
//! saddle-point systems with a multigrid V-cycle used as a fixed-point
//! iteration.
//!
//! Three Vanka-type smoothers share one pressure-centered subdomain
//! decomposition and differ only in how local corrections are combined:
//!
//! * multiplicative (`mv`): sequential sweeps with a fresh local residual
//!   per subdomain,
//! * additive (`av`): one global residual, damped overlapping corrections
//!   summed,
//! * restricted additive (`rav`): one global residual, but each subdomain
//!   writes only the degrees of freedom at its center vertex, so writes are
//!   disjoint and only a few rows of each local inverse are ever needed.
//!
//! Modules:
//!
//! * [`mesh`]: quadtree meshes, macro geometries (unit square, channel with
//!   cylinder), refinement, balance, hierarchies.
//! * [`discretization`]: DoF maps, constraints (Dirichlet, hanging-node,
//!   pressure pin), element matrices, assembly.
//! * [`linalg`]: CSR matrices, dense LU with partial pivoting.
//! * [`smoothers`]: Vanka subdomains, factorizations, the three smoother
//!   applications, work counters.
//! * [`multigrid`]: transfer operators, V-cycle, outer solver, metrics.
//! * [`bench`]: driven-cavity and cylinder-channel benchmark drivers,
//!   smoothing-step sweeps, CSV/JSON reports.
//! * [`vtk`]: legacy-ASCII VTK export of meshes and solution fields.

pub mod bench;
pub mod discretization;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod multigrid;
pub mod smoothers;
pub mod vtk;

pub use error::{Error, Result};
