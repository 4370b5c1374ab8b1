//! Energy-stable time integration for gradient-flow PDEs.
//!
//! The library couples a scalar-auxiliary-variable (SAV) reformulation of
//! gradient flows with Gauss-collocation implicit Runge-Kutta stepping, so
//! the discrete modified energy is non-increasing for every time step size
//! while the order of accuracy in time is 2s for s stages. Space is
//! discretized with a 2D Fourier pseudospectral method on periodic domains.
//!
//! Modules:
//! - [`spectral`]: grids, fields, transforms, diagonal operator symbols
//! - [`tableau`]: Gauss-Legendre Butcher tableaus and the algebraic
//!   stability check
//! - [`sav`]: the auxiliary-variable layer (states, stage right-hand sides,
//!   modified and raw energies)
//! - [`stepper`]: the implicit RK step, the SAV Crank-Nicolson baseline,
//!   and the integration loop
//! - [`models`]: Allen-Cahn, Cahn-Hilliard, and thin-film (MBE) model
//!   constructors with their benchmark parameters
//! - [`harness`]: refinement studies, energy sweeps, disk-shrinkage and
//!   power-law experiments, and a brute-force reference integrator
//! - [`cli`]: config parsing and the command-line front end

pub mod cli;
pub mod error;
pub mod harness;
pub mod models;
pub mod sav;
pub mod spectral;
pub mod stepper;
pub mod tableau;

pub use error::{Error, Result};
pub use sav::{EnergyPair, ModelSpec, SavState};
pub use spectral::{Field, Grid2D};
pub use stepper::{Method, SolverConfig};
pub use tableau::ButcherTableau;
