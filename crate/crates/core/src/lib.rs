//! Quasi-periodically forced scalar reaction–diffusion on the circle
//! `u_t = u_xx + f(t, x, u, u_x)`: integration, Lyapunov spectra, zero
//! numbers, fiber structure of the skew-product flow and linear gauge
//! transforms.

pub mod forcing;
pub mod grid;
pub mod parallel;
pub mod quad;
pub mod solver;
pub mod spectrum;
pub mod structure;
pub mod transforms;
pub mod zeronum;

pub use forcing::{ForcingSpec, HullPoint};
pub use grid::{Grid, PeriodicProfile};
pub use parallel::Execution;
pub use solver::{evolve, resume, Scheme, SolverConfig, Trajectory};
