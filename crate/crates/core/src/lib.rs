//! Mixed quantum-classical (Ehrenfest) electron-vibrational dynamics of
//! Su-Schrieffer-Heeger chains.
//!
//! The crate propagates ensembles of coupled electron-nuclear trajectories
//! for tight-binding chains with linear electron-phonon coupling: nuclei move
//! classically on the mean-field surface while the many-electron state — a
//! superposition of Slater determinants over one shared, unitarily evolving
//! orbital set — follows the time-dependent Schrödinger equation. Initial
//! nuclear conditions are drawn from the harmonic ground-state Wigner
//! distribution. On top of the raw trajectories it computes adiabatic orbital
//! populations, reconstructed many-body state populations, ensemble-averaged
//! reduced density matrices, and the one-/two-body reduced purities together
//! with coherent/partially-coherent/incoherent model curves.
//!
//! Module map:
//! - [`model`]: SSH Hamiltonian, analytic gradients, lattice energy/forces.
//! - [`ground_state`]: dimerized geometry optimization, normal modes, Wigner
//!   sampling.
//! - [`electronic`]: determinants, superposition states, Slater-Condon rules,
//!   one- and two-body reduced density matrices.
//! - [`dynamics`]: velocity-Verlet + exact-exponential trajectory integrator
//!   with conservation monitors.
//! - [`observables`]: populations, state reconstruction, purities, model
//!   curves, ensemble reduction.
//! - [`oracle`]: brute-force Fock-space reference used to validate the
//!   determinant engine.
//! - [`ensemble`]: seeded, parallel, checkpointable ensemble runs.
//! - [`io`]: CSV emission, flat config files, JSON checkpoints.

pub mod dynamics;
pub mod electronic;
pub mod ensemble;
mod error;
pub mod ground_state;
pub mod io;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod oracle;

pub use error::{CoreError, Result};
pub use model::{NuclearPhase, SingleParticleHamiltonian, SshParams, HBAR};

pub use num_complex::Complex64;

/// Version string stamped into output-file headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
