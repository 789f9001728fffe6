//! Small-time, fast mean-reversion asymptotics for one-factor stochastic
//! volatility models, with Monte Carlo cross-checks.

pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod kv;
pub mod measures;
pub mod model;
pub mod poisson;
pub mod quad;
pub mod rates;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod tridiag;
pub mod verify;

pub use error::{Error, Result};
pub use model::{ModelParams, Regime, VolFnSpec, VolKind};
