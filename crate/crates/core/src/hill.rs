//! Dynamics from stationary averages.
//!
//! Replacing the rows of a kernel `K₀` inside a sink set `F` by the one-step
//! law `ρK₀` of a source `ρ` (support disjoint from `F`) produces a chain
//! that restarts at `ρ` whenever it reaches `F`. Its stationary law `π`
//! satisfies
//!
//! ```text
//! E^ρ[ Σ_{p=1}^{τ_F} g(X_p) ] = π(g) / π(F),     E^ρ[τ_F] = 1 / π(F),
//! P^ρ[τ_B < τ_A] = π(B) / π(A ∪ B)                (F = A ∪ B)
//! ```
//!
//! The functions here build that chain, evaluate the right-hand sides, give
//! exact linear-solve oracles for the left-hand sides, and estimate `π(F)`
//! with weighted-ensemble sampling.

use nalgebra::{DMatrix, DVector};

use crate::coarse::{build_coarse_exact, CoarseModel};
use crate::error::{Error, Result};
use crate::markov::{Distribution, Observable, TransitionMatrix};
use crate::stats::{summarize, SampleStats};
use crate::we::{stationary_init_ensemble, BinPartition, SelectionPolicy, WeSampler};

/// Source `ρ`, sink `F` and base kernel `K₀`. States are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSinkSpec {
    pub base: TransitionMatrix,
    pub sink: Vec<usize>,
    pub source: Distribution,
}

impl SourceSinkSpec {
    pub fn new(base: TransitionMatrix, mut sink: Vec<usize>, source: Distribution) -> Result<Self> {
        let n = base.size();
        if source.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: source.len(),
            });
        }
        sink.sort_unstable();
        sink.dedup();
        if sink.is_empty() {
            return Err(Error::InvalidParameter("sink set must be nonempty".into()));
        }
        if let Some(&s) = sink.iter().find(|&&s| s >= n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: s + 1,
            });
        }
        if let Some(&s) = sink.iter().find(|&&s| source.values()[s] > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "source has mass on sink state {}",
                s + 1
            )));
        }
        Ok(Self { base, sink, source })
    }

    pub fn size(&self) -> usize {
        self.base.size()
    }

    pub fn in_sink(&self, x: usize) -> bool {
        self.sink.binary_search(&x).is_ok()
    }
}

/// `K = K₀` outside `F`, `K(x, ·) = ρK₀` for `x ∈ F`.
pub fn source_sink_kernel(spec: &SourceSinkSpec) -> Result<TransitionMatrix> {
    let n = spec.size();
    let restart = spec.base.apply_left(&spec.source)?;
    let mut data = Vec::with_capacity(n * n);
    for x in 0..n {
        if spec.in_sink(x) {
            data.extend_from_slice(restart.values());
        } else {
            data.extend_from_slice(spec.base.row(x));
        }
    }
    TransitionMatrix::new(n, data)
}

/// `π(g) / π(F)`.
pub fn general_hill_average(pi: &Distribution, g: &Observable, sink: &[usize]) -> Result<f64> {
    let mass = pi.mass_of(sink);
    if mass.is_nan() || mass <= 0.0 {
        return Err(Error::InvalidParameter("sink has zero stationary mass".into()));
    }
    Ok(pi.expect(g)? / mass)
}

/// `π(B) / π(A ∪ B)` for disjoint `A`, `B`.
pub fn hitting_probability(pi: &Distribution, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.iter().any(|x| b.contains(x)) {
        return Err(Error::InvalidParameter("sets A and B overlap".into()));
    }
    let pa = pi.mass_of(a);
    let pb = pi.mass_of(b);
    if (pa + pb).is_nan() || pa + pb <= 0.0 {
        return Err(Error::InvalidParameter("A ∪ B has zero stationary mass".into()));
    }
    Ok(pb / (pa + pb))
}

/// Exact `E^ρ[Σ_{p=1}^{τ_F} g(X_p)]` under `K₀`, `τ_F = inf{p > 0 : X_p ∈ F}`.
///
/// For `x ∉ F`, `h(x) = Σ_y K₀(x,y) (g(y) + 𝟙{y ∉ F} h(y))`; the answer is
/// `Σ_x ρ(x) h(x)`.
pub fn cycle_average(spec: &SourceSinkSpec, g: &Observable) -> Result<f64> {
    let n = spec.size();
    if g.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: g.len(),
        });
    }
    let free: Vec<usize> = (0..n).filter(|&x| !spec.in_sink(x)).collect();
    let m = free.len();
    if m == 0 {
        return Ok(0.0);
    }
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, &x) in free.iter().enumerate() {
        let row = spec.base.row(x);
        b[i] = row.iter().zip(g.values()).map(|(k, v)| k * v).sum();
        for (j, &y) in free.iter().enumerate() {
            a[(i, j)] -= row[y];
        }
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("sink is not reachable from every state".into()))?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("sink is not reachable from every state".into()));
    }
    Ok(free
        .iter()
        .enumerate()
        .map(|(i, &x)| spec.source.values()[x] * h[i])
        .sum())
}

/// Exact mean first-passage time `E^ρ[τ_F]` under `K₀`.
pub fn direct_mfpt(spec: &SourceSinkSpec) -> Result<f64> {
    cycle_average(spec, &Observable::constant(spec.size(), 1.0))
}

/// Weighted-ensemble settings for a stationary estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryWeConfig {
    pub bins: BinPartition,
    /// Coarse-model sampling measure; uniform when `None`.
    pub zeta: Option<Distribution>,
    pub total: f64,
    pub floor: f64,
    pub horizon: usize,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryEstimate {
    /// Replicate statistics of `η_n(f)`.
    pub eta: SampleStats,
    /// Replicates with `η_n(f) ≤ 0`.
    pub invalid_replicates: usize,
    pub extinct_replicates: usize,
    /// Statistics of per-replicate `1/η_n(f)` over valid replicates; for
    /// dispersion only; the reciprocal is a biased estimator.
    pub reciprocal: SampleStats,
    /// Per-replicate `η_n(f)` in replicate order.
    pub values: Vec<f64>,
}

/// Coarse-preconditioned adaptive weighted-ensemble estimate of `π(f)` for
/// the chain `k` (build coarse model, start from `μ`, relax `horizon` steps).
pub fn we_stationary_estimate(
    k: &TransitionMatrix,
    f: &Observable,
    cfg: &StationaryWeConfig,
) -> Result<StationaryEstimate> {
    let zeta = cfg.zeta.clone().unwrap_or_else(|| Distribution::uniform(k.size()));
    let (p, u) = build_coarse_exact(k, &cfg.bins, &zeta, f)?;
    let coarse = CoarseModel::new(p, u, cfg.horizon.max(1))?;
    let init = stationary_init_ensemble(&coarse.stationary, &cfg.bins, cfg.total.round() as usize)?;
    let policy = SelectionPolicy::Adaptive {
        total: cfg.total,
        floor: cfg.floor,
    };
    let table = (cfg.horizon > 0).then_some(&coarse.variances);
    let policy = if table.is_some() {
        policy
    } else {
        SelectionPolicy::Naive
    };
    let sampler = WeSampler::new(k, &cfg.bins, policy, table)?;
    let runs = sampler.run_replicates(&init, f, cfg.horizon, cfg.seed, cfg.reps)?;
    let values: Vec<f64> = runs.iter().map(|r| r.final_estimate).collect();
    let reciprocals: Vec<f64> = values.iter().filter(|v| **v > 0.0).map(|v| 1.0 / v).collect();
    Ok(StationaryEstimate {
        eta: summarize(&values),
        invalid_replicates: values.len() - reciprocals.len(),
        extinct_replicates: runs.iter().filter(|r| r.extinct()).count(),
        reciprocal: summarize(&reciprocals),
        values,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfptEstimate {
    /// Estimate of `π(F)` under the source–sink chain.
    pub sink_mass: StationaryEstimate,
    /// `1 / mean η_n(𝟙_F)` (ratio of means).
    pub mfpt: f64,
    /// Delta-method standard error of `mfpt`.
    pub mfpt_std_err: f64,
}

/// Mean first-passage time `E^ρ[τ_F]` via the Hill relation.
pub fn we_hill_mfpt(spec: &SourceSinkSpec, cfg: &StationaryWeConfig) -> Result<MfptEstimate> {
    let k = source_sink_kernel(spec)?;
    let f = Observable::indicator(spec.size(), &spec.sink)?;
    let est = we_stationary_estimate(&k, &f, cfg)?;
    let m = est.eta.mean;
    Ok(MfptEstimate {
        mfpt: 1.0 / m,
        mfpt_std_err: est.eta.std_err / (m * m),
        sink_mass: est,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HittingEstimate {
    pub target_mass: StationaryEstimate,
    pub union_mass: StationaryEstimate,
    /// Ratio of replicate means, `mean η(𝟙_B) / mean η(𝟙_{A∪B})`.
    pub probability: f64,
}

/// `P^ρ[τ_B < τ_A]` with `F = A ∪ B`. `spec.sink` must equal `A ∪ B`.
pub fn we_hitting_probability(
    spec: &SourceSinkSpec,
    a: &[usize],
    b: &[usize],
    cfg: &StationaryWeConfig,
) -> Result<HittingEstimate> {
    let mut union: Vec<usize> = a.iter().chain(b).copied().collect();
    union.sort_unstable();
    union.dedup();
    if union.len() != a.len() + b.len() {
        return Err(Error::InvalidParameter("sets A and B overlap".into()));
    }
    if union != spec.sink {
        return Err(Error::InvalidParameter("sink must be A ∪ B".into()));
    }
    let k = source_sink_kernel(spec)?;
    let fb = Observable::indicator(spec.size(), b)?;
    let fu = Observable::indicator(spec.size(), &union)?;
    let target_mass = we_stationary_estimate(&k, &fb, cfg)?;
    let union_mass = we_stationary_estimate(&k, &fu, cfg)?;
    Ok(HittingEstimate {
        probability: target_mass.eta.mean / union_mass.eta.mean,
        target_mass,
        union_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state_spec() -> SourceSinkSpec {
        let k0 = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        SourceSinkSpec::new(k0, vec![1], Distribution::point_mass(2, 0).unwrap()).unwrap()
    }

    fn three_state_spec() -> SourceSinkSpec {
        let k0 =
            TransitionMatrix::from_rows(&[vec![0.5, 0.5, 0.0], vec![0.25, 0.5, 0.25], vec![0.0, 0.5, 0.5]]).unwrap();
        SourceSinkSpec::new(k0, vec![0, 2], Distribution::point_mass(3, 1).unwrap()).unwrap()
    }

    #[test]
    fn spec_validation() {
        let k0 = TransitionMatrix::identity(2);
        assert!(SourceSinkSpec::new(k0.clone(), vec![], Distribution::uniform(2)).is_err());
        assert!(SourceSinkSpec::new(k0.clone(), vec![1], Distribution::uniform(2)).is_err());
        assert!(SourceSinkSpec::new(k0, vec![5], Distribution::point_mass(2, 0).unwrap()).is_err());
    }

    #[test]
    fn two_state_kernel_and_b1() {
        let spec = two_state_spec();
        let k = source_sink_kernel(&spec).unwrap();
        assert_eq!(k.row(0), &[0.9, 0.1]);
        assert_eq!(k.row(1), &[0.9, 0.1]);
        let restart = k.apply_left(&spec.source).unwrap();
        assert_eq!(k.row(1), restart.values());
    }

    #[test]
    fn two_state_hill_relation() {
        let spec = two_state_spec();
        let pi = source_sink_kernel(&spec).unwrap().stationary().unwrap();
        assert_abs_diff_eq!(pi.values()[0], 0.9, epsilon = 1e-14);
        let ones = Observable::constant(2, 1.0);
        assert_abs_diff_eq!(
            general_hill_average(&pi, &ones, &spec.sink).unwrap(),
            10.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(direct_mfpt(&spec).unwrap(), 10.0, epsilon = 1e-10);
        let ind = Observable::indicator(2, &spec.sink).unwrap();
        assert_abs_diff_eq!(
            general_hill_average(&pi, &ind, &spec.sink).unwrap(),
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn three_state_hitting_probability() {
        let spec = three_state_spec();
        let pi = source_sink_kernel(&spec).unwrap().stationary().unwrap();
        let p = hitting_probability(&pi, &[0], &[2]).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-10);
        // Oracle by first-step analysis: h = P^x[τ_3 < τ_1] solves h(2) = 0.25 + 0.5 h(2).
        let ind_b = Observable::indicator(3, &[2]).unwrap();
        assert_abs_diff_eq!(cycle_average(&spec, &ind_b).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(hitting_probability(&pi, &[], &[2]).unwrap(), 1.0);
        assert_eq!(hitting_probability(&pi, &[0], &[]).unwrap(), 0.0);
        assert!(hitting_probability(&pi, &[0], &[0]).is_err());
    }

    #[test]
    fn one_step_absorption() {
        // From the source every move lands in F.
        let k0 = TransitionMatrix::from_rows(&[vec![0.0, 0.5, 0.5], vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let spec = SourceSinkSpec::new(k0, vec![1, 2], Distribution::point_mass(3, 0).unwrap()).unwrap();
        assert_abs_diff_eq!(direct_mfpt(&spec).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unreachable_sink_is_singular() {
        let k0 = TransitionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let spec = SourceSinkSpec::new(k0, vec![1], Distribution::point_mass(2, 0).unwrap()).unwrap();
        assert!(matches!(direct_mfpt(&spec), Err(Error::Singular(_))));
    }

    #[test]
    fn zero_sink_mass_is_an_error() {
        let pi = Distribution::point_mass(2, 0).unwrap();
        assert!(general_hill_average(&pi, &Observable::constant(2, 1.0), &[1]).is_err());
    }
}
