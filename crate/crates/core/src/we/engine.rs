//! Mutation and the select → mutate generation loop.

use rand::Rng;
use rayon::prelude::*;

use crate::coarse::VarianceTable;
use crate::error::{Error, Result};
use crate::markov::{Observable, TransitionMatrix};
use crate::rng::{Purpose, RngStream};

use super::ensemble::{cumulative, sample_cdf};
use super::selection::{select, SelectionOutcome, SelectionPolicy};
use super::{BinPartition, Ensemble, Particle};

/// Inverse-CDF sampler over the rows of a kernel, restricted to each row's
/// support.
#[derive(Clone, Debug)]
pub struct KernelSampler {
    rows: Vec<(Vec<usize>, Vec<f64>)>,
}

impl KernelSampler {
    pub fn new(k: &TransitionMatrix) -> Self {
        let rows = k
            .rows()
            .map(|row| {
                let support: Vec<usize> = (0..row.len()).filter(|&j| row[j] > 0.0).collect();
                let probs: Vec<f64> = support.iter().map(|&j| row[j]).collect();
                (support, cumulative(&probs))
            })
            .collect();
        Self { rows }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    /// Next state from `x` given a uniform `u ∈ [0, 1)`.
    pub fn next_state(&self, x: usize, u: f64) -> usize {
        let (support, cdf) = &self.rows[x];
        support[sample_cdf(cdf, u)]
    }

    pub fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        self.next_state(x, rng.random())
    }
}

/// Evolves every selected particle one step, independently, keeping weights.
/// Particles draw from the stream in selection order.
pub fn mutate<R: Rng + ?Sized>(s: &SelectionOutcome, kernel: &KernelSampler, rng: &mut R) -> Ensemble {
    let particles = s
        .selected
        .iter()
        .map(|p| Particle {
            state: kernel.step(p.state, rng),
            weight: p.weight,
        })
        .collect();
    Ensemble::new(s.generation + 1, particles)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub p: usize,
    pub eta_f: f64,
    pub total_weight: f64,
    pub num_particles: usize,
    pub bin_counts: Vec<usize>,
    pub bin_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub replicate: u64,
    /// One entry per generation `0..=min(n, τ_kill)`.
    pub generations: Vec<GenerationRecord>,
    /// `η_n(f)`; zero after extinction.
    pub final_estimate: f64,
    /// `τ_kill`, if the population died out by the horizon.
    pub extinct_at: Option<usize>,
    pub final_ensemble: Ensemble,
}

impl RunRecord {
    pub fn extinct(&self) -> bool {
        self.extinct_at.is_some()
    }
}

/// Seen once per generation `p < n`: the ensemble before selection and the
/// selection outcome.
pub trait GenerationObserver {
    fn observe(&mut self, before: &Ensemble, selection: &SelectionOutcome);
}

impl<F: FnMut(&Ensemble, &SelectionOutcome)> GenerationObserver for F {
    fn observe(&mut self, before: &Ensemble, selection: &SelectionOutcome) {
        self(before, selection)
    }
}

struct NoObserver;

impl GenerationObserver for NoObserver {
    fn observe(&mut self, _: &Ensemble, _: &SelectionOutcome) {}
}

/// A configured weighted-ensemble sampler: kernel, bins, selection policy
/// and (for the adaptive policy) the coarse variance table.
#[derive(Clone, Debug)]
pub struct WeSampler<'a> {
    kernel: KernelSampler,
    bins: &'a BinPartition,
    policy: SelectionPolicy,
    variances: Option<&'a VarianceTable>,
    weight_scale: f64,
}

impl<'a> WeSampler<'a> {
    pub fn new(
        k: &TransitionMatrix,
        bins: &'a BinPartition,
        policy: SelectionPolicy,
        variances: Option<&'a VarianceTable>,
    ) -> Result<Self> {
        if bins.num_states() != k.size() {
            return Err(Error::DimensionMismatch {
                expected: k.size(),
                found: bins.num_states(),
            });
        }
        policy.validate(bins.num_bins())?;
        if policy.requires_coarse_model() {
            let table =
                variances.ok_or_else(|| Error::InvalidParameter("adaptive policy needs a coarse model".into()))?;
            if table.num_bins() != bins.num_bins() {
                return Err(Error::DimensionMismatch {
                    expected: bins.num_bins(),
                    found: table.num_bins(),
                });
            }
        }
        Ok(Self {
            kernel: KernelSampler::new(k),
            bins,
            policy,
            variances,
            weight_scale: 1.0,
        })
    }

    /// Negative-control hook: multiplies every child weight by `factor`
    /// after selection, breaking unbiasedness when `factor != 1`.
    pub fn with_weight_scale(mut self, factor: f64) -> Self {
        self.weight_scale = factor;
        self
    }

    pub fn policy(&self) -> &SelectionPolicy {
        &self.policy
    }

    pub fn bins(&self) -> &BinPartition {
        self.bins
    }

    pub fn kernel(&self) -> &KernelSampler {
        &self.kernel
    }

    /// Runs generations `0..n` of select → mutate from `init`.
    pub fn run(&self, init: &Ensemble, f: &Observable, n: usize, seed: u64, replicate: u64) -> Result<RunRecord> {
        self.run_observed(init, f, n, seed, replicate, &mut NoObserver)
    }

    pub fn run_observed<O: GenerationObserver + ?Sized>(
        &self,
        init: &Ensemble,
        f: &Observable,
        n: usize,
        seed: u64,
        replicate: u64,
        observer: &mut O,
    ) -> Result<RunRecord> {
        if f.len() != self.kernel.num_states() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.num_states(),
                found: f.len(),
            });
        }
        let v_table = match (self.policy.requires_coarse_model(), self.variances) {
            (true, Some(t)) => {
                if t.horizon() != n {
                    return Err(Error::InvalidParameter(format!(
                        "variance table built for horizon {} but run horizon is {n}",
                        t.horizon()
                    )));
                }
                Some(t)
            }
            (true, None) => return Err(Error::InvalidParameter("adaptive policy needs a coarse model".into())),
            (false, _) => None,
        };

        let mut ensemble = init.clone();
        ensemble.generation = 0;
        let mut generations = vec![self.record(&ensemble, f)];
        let mut extinct_at = ensemble.is_empty().then_some(0);

        for p in 0..n {
            if extinct_at.is_some() {
                break;
            }
            let stream = RngStream::new(seed, replicate, p as u64, Purpose::Selection);
            let v_p = v_table.map(|t| t.row(p));
            let mut selection = select(&ensemble, &self.policy, self.bins, v_p, &mut stream.rng())?;
            if self.weight_scale != 1.0 {
                selection
                    .selected
                    .iter_mut()
                    .for_each(|c| c.weight *= self.weight_scale);
            }
            observer.observe(&ensemble, &selection);
            let mut rng = stream.with_purpose(Purpose::Mutation).rng();
            ensemble = mutate(&selection, &self.kernel, &mut rng);
            generations.push(self.record(&ensemble, f));
            if ensemble.is_empty() {
                extinct_at = Some(p + 1);
            }
        }
        let final_estimate = if extinct_at.is_some() {
            0.0
        } else {
            ensemble.estimate(f)
        };
        Ok(RunRecord {
            replicate,
            generations,
            final_estimate,
            extinct_at,
            final_ensemble: ensemble,
        })
    }

    /// Independent replicates `0..reps`, run in parallel and returned in
    /// replicate order.
    pub fn run_replicates(
        &self,
        init: &Ensemble,
        f: &Observable,
        n: usize,
        seed: u64,
        reps: usize,
    ) -> Result<Vec<RunRecord>> {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| self.run(init, f, n, seed, r))
            .collect()
    }

    fn record(&self, e: &Ensemble, f: &Observable) -> GenerationRecord {
        let totals = e.bin_totals(self.bins);
        GenerationRecord {
            p: e.generation,
            eta_f: e.estimate(f),
            total_weight: e.total_weight(),
            num_particles: e.len(),
            bin_counts: totals.iter().map(|t| t.count).collect(),
            bin_weights: totals.iter().map(|t| t.weight).collect(),
        }
    }
}

/// Plain simulation of independent walkers: `states[p][j]` is walker `j`
/// at time `p`. Uses the same mutation streams as [`WeSampler::run`], so
/// naive weighted-ensemble runs reproduce it exactly.
pub fn simulate_walkers(
    kernel: &KernelSampler,
    start: &[usize],
    n: usize,
    seed: u64,
    replicate: u64,
) -> Vec<Vec<usize>> {
    let mut path = vec![start.to_vec()];
    for p in 0..n {
        let mut rng = RngStream::new(seed, replicate, p as u64, Purpose::Mutation).rng();
        let next = path[p].iter().map(|&x| kernel.step(x, &mut rng)).collect();
        path.push(next);
    }
    path
}
