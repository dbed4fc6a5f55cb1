//! Fixtures shared by the benchmarks.

use we_core::coarse::{build_coarse_exact, CoarseModel};
use we_core::three_well;
use we_core::we::stationary_init_ensemble;
use we_core::{BinPartition, Distribution, Ensemble, Observable, TransitionMatrix};

pub struct ThreeWellFixture {
    pub kernel: TransitionMatrix,
    pub bins: BinPartition,
    pub observable: Observable,
    pub coarse: CoarseModel,
    pub init: Ensemble,
}

/// The 90-state chain with 30 bins, a coarse model for `horizon` and the
/// 150-particle stationary start.
pub fn three_well_fixture(horizon: usize) -> ThreeWellFixture {
    let (_, kernel) = three_well::build_chain();
    let bins = three_well::bins();
    let observable = three_well::observable();
    let (p, u) = build_coarse_exact(&kernel, &bins, &Distribution::uniform(kernel.size()), &observable)
        .expect("three-well coarse model");
    let coarse = CoarseModel::new(p, u, horizon).expect("three-well variances");
    let init = stationary_init_ensemble(&coarse.stationary, &bins, 150).expect("stationary start");
    ThreeWellFixture {
        kernel,
        bins,
        observable,
        coarse,
        init,
    }
}
