//! Optimal proportional reinsurance under compound-Poisson claims, solved
//! through its dual.
//!
//! The crate solves the dual Hamilton-Jacobi-Bellman variational inequality
//! on a log-spaced grid ([`dual`]), recovers the primal value function and a
//! candidate retention strategy by conjugate duality ([`primal`]), and checks
//! both against a brute-force primal dynamic program and a Monte Carlo
//! simulator ([`simulator`]).

pub mod config;
pub mod dual;
pub mod export;
pub mod hamiltonian;
pub mod model;
pub mod primal;
pub mod simulator;

pub use dual::{solve, DualField, GridSpec, Region, Scheme};
pub use hamiltonian::{ControlBox, ValueSlice};
pub use model::{CrraUtility, MarketModel};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/hamiltonian.md")]
    mod hamiltonian {}
    #[doc = include_str!("../../../book/src/dual_solver.md")]
    mod dual_solver {}
    #[doc = include_str!("../../../book/src/primal.md")]
    mod primal {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
