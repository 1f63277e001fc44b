//! Swarm gradient dynamics on the circle and on flat tori.
//!
//! The crate is organised around the penalized relaxation
//! `U_beta[rho] = beta * int U rho + int phi(rho)` of a periodic objective `U`:
//!
//! - [`potentials`]: the glued power potential `phi_{m,2}` (and the Boltzmann
//!   reference `phi_1`) with every derived scalar function and constant.
//! - [`landscape`]: periodic objectives with analytic gradients.
//! - [`stationary`]: the unique minimizer `mu_beta = psi(c* - beta U)`.
//! - [`schedules`]: inverse-temperature schedules and their convergence conditions.
//! - [`pde1d`]: a conservative finite-volume solver for the nonlinear Fokker-Planck flow.
//! - [`swarm`]: the N-particle Euler-Maruyama simulator with periodic KDE.
//! - [`diagnostics`]: reduced cost, entropy production, inequality checkers,
//!   circle Wasserstein distance and the Lyapunov ODE bound.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod landscape;
pub mod pde1d;
pub mod potentials;
pub mod quadrature;
pub mod schedules;
pub mod stationary;
pub mod swarm;

pub use error::{Error, Result};
pub use grid::CircleGrid;
pub use landscape::{Landscape, TorusPoint};
pub use pde1d::GridDensity;
pub use potentials::{GluedPower, PotentialSpec};
pub use schedules::Schedule;
pub use stationary::StationaryMeasure;
pub use swarm::{Kernel, SwarmState};
