//! Weighted-ensemble resampling for finite-state Markov chains.
//!
//! * [`markov`]: kernels, distributions, observables, stationary solves.
//! * [`we`]: particles, selection, mutation and the generation loop.
//! * [`coarse`]: bin-level Markov state models and variance estimates that
//!   steer adaptive allocation.
//! * [`diagnostics`]: exact martingale variance terms and Monte Carlo checks.
//! * [`hill`]: source–sink chains, Hill-relation estimators and oracles.
//! * [`three_well`]: the 90-state benchmark chain.

pub mod coarse;
pub mod csvio;
pub mod diagnostics;
pub mod error;
pub mod hill;
pub mod markov;
pub mod rng;
pub mod stats;
pub mod three_well;
pub mod we;

pub use coarse::{CoarseModel, VarianceTable};
pub use error::{Error, Result};
pub use markov::{Distribution, Observable, TransitionMatrix};
pub use rng::{Purpose, RngStream};
pub use we::{BinPartition, Ensemble, Particle, RunRecord, SelectionPolicy, WeSampler};
