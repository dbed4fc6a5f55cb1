use rand::Rng;

use crate::error::{Error, Result};
use crate::markov::{Distribution, Observable};
use crate::rng::RngStream;

use super::BinPartition;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    /// 0-based state index.
    pub state: usize,
    pub weight: f64,
}

/// The particle population `(ξ_p^j, ω_p^j)` at generation `p`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Ensemble {
    pub generation: usize,
    pub particles: Vec<Particle>,
}

/// How initial states are drawn from a distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Placement {
    /// i.i.d. draws.
    Sampled,
    /// Deterministic per-state counts by largest-remainder apportionment.
    #[default]
    Stratified,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BinTotal {
    pub count: usize,
    pub weight: f64,
}

impl Ensemble {
    pub fn new(generation: usize, particles: Vec<Particle>) -> Self {
        Self { generation, particles }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// `η_p(f) = Σ_j ω_p^j f(ξ_p^j)`; zero for an empty (extinct) ensemble.
    pub fn estimate(&self, f: &Observable) -> f64 {
        self.particles.iter().map(|p| p.weight * f.get(p.state)).sum()
    }

    /// Per-bin particle counts and total weights.
    pub fn bin_totals(&self, bins: &BinPartition) -> Vec<BinTotal> {
        let mut totals = vec![BinTotal::default(); bins.num_bins()];
        for p in &self.particles {
            let t = &mut totals[bins.bin_of(p.state)];
            t.count += 1;
            t.weight += p.weight;
        }
        totals
    }

    /// The empirical measure `η_p` as a vector over `num_states` states.
    pub fn measure(&self, num_states: usize) -> Vec<f64> {
        let mut m = vec![0.0; num_states];
        for p in &self.particles {
            m[p.state] += p.weight;
        }
        m
    }

    pub fn states(&self) -> Vec<usize> {
        self.particles.iter().map(|p| p.state).collect()
    }
}

/// `η_p(f)`; free-function form of [`Ensemble::estimate`].
pub fn empirical_estimate(e: &Ensemble, f: &Observable) -> f64 {
    e.estimate(f)
}

/// `n0` particles of weight `1/n0` distributed according to `initial`.
pub fn init_ensemble(initial: &Distribution, n0: usize, placement: Placement, stream: RngStream) -> Result<Ensemble> {
    if n0 == 0 {
        return Err(Error::InvalidParameter("initial particle count must be ≥ 1".into()));
    }
    let weight = 1.0 / n0 as f64;
    let states: Vec<usize> = match placement {
        Placement::Stratified => apportion(initial.values(), n0)
            .into_iter()
            .enumerate()
            .flat_map(|(x, c)| std::iter::repeat_n(x, c))
            .collect(),
        Placement::Sampled => {
            let mut rng = stream.rng();
            let cdf = cumulative(initial.values());
            (0..n0).map(|_| sample_cdf(&cdf, rng.random::<f64>())).collect()
        }
    };
    Ok(Ensemble::new(
        0,
        states.into_iter().map(|state| Particle { state, weight }).collect(),
    ))
}

/// Coarse-preconditioned start for stationary averages.
///
/// Bin `r` receives `⌊N/R⌋` or `⌈N/R⌉` particles (extra particles go to the
/// lowest-index bins), spread round-robin over its states, each carrying
/// weight `μ_r / count_r`. Bins with `μ_r = 0` get no particles since a
/// zero-weight particle can never be selected.
pub fn stationary_init_ensemble(mu: &Distribution, bins: &BinPartition, n: usize) -> Result<Ensemble> {
    let r = bins.num_bins();
    if mu.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: mu.len(),
        });
    }
    if n < r {
        return Err(Error::InvalidParameter(format!("{n} particles cannot cover {r} bins")));
    }
    let counts = apportion(&vec![1.0; r], n);
    let mut particles = Vec::with_capacity(n);
    for (bin, &count) in counts.iter().enumerate() {
        let mass = mu.values()[bin];
        if mass <= 0.0 {
            continue;
        }
        let states = bins.members(bin);
        let weight = mass / count as f64;
        particles.extend((0..count).map(|k| Particle {
            state: states[k % states.len()],
            weight,
        }));
    }
    Ok(Ensemble::new(0, particles))
}

/// Largest-remainder apportionment of `total` items proportionally to
/// `shares`. Ties go to the lower index.
pub fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub(crate) fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Inverse-CDF lookup. `u` at or beyond the final cumulative value maps to
/// the last state with positive mass.
pub(crate) fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|&c| c <= u);
    if i < cdf.len() {
        return i;
    }
    let last = *cdf.last().unwrap();
    cdf.iter().position(|&c| c >= last).unwrap()
}
