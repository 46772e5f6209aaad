//! Composite particle-grid simulation engine for chemotaxis aggregation.
//!
//! The bacterial density is carried by an ensemble of stochastic particles
//! while the chemoattractant concentration lives on a uniform grid solved by
//! an implicit finite-difference scheme. Mass moves between the two
//! representations through moment-preserving bilinear deposition and
//! interpolation, which lets density singularities form, move, and merge as
//! harmless particle aggregates. A direct N-body integrator, a point-mass
//! ODE integrator, and radial hitting-probability probes provide independent
//! cross-checks of the aggregation laws.

pub mod config;
pub mod error;
pub mod experiments;
pub mod greens;
pub mod grid;
pub mod hybrid;
pub mod implicit;
pub mod io;
pub mod nbody;
pub mod particles;
pub mod provenance;
pub mod rng;
pub mod singularity;

pub use config::{ExperimentConfig, Mode};
pub use error::{KsError, Result};
pub use greens::{bessel_k0, bessel_k1, Kernel, KernelForm};
pub use grid::{build_gradient, sample_bilinear_pair, GridField, GridSpec};
pub use hybrid::{HybridSim, PhysicsParams, SimState};
pub use implicit::{BandedCholesky, ImplicitSolver};
pub use nbody::NBodyState;
pub use particles::{ParticleEnsemble, StepPolicy};
pub use singularity::{Atom, AtomTrack};
