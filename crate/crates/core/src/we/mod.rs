//! The weighted-ensemble particle system.
//!
//! A generation consists of *selection* (choose how many copies `C_p^j` of
//! each particle to keep and reweight them by `ω/E[C]`) followed by
//! *mutation* (evolve every copy independently under the kernel). The
//! weighted empirical measure `η_p` is then an unbiased estimate of the law
//! of `X_p`.

mod bins;
mod engine;
mod ensemble;
mod selection;

pub use bins::BinPartition;
pub use engine::{mutate, simulate_walkers, GenerationObserver, GenerationRecord, KernelSampler, RunRecord, WeSampler};
pub use ensemble::{
    apportion, empirical_estimate, init_ensemble, stationary_init_ensemble, BinTotal, Ensemble, Particle, Placement,
};
pub use selection::{
    allocate_targets, rounding_second_moment, select, select_with_mean_children, stochastic_round, SelectionOutcome,
    SelectionPolicy,
};
