//! Numerical checks of the martingale structure of weighted ensembles.
//!
//! With `g_p = K^{n−p} f`, `M_p = η_p(g_p)` is a martingale, so
//! `E[η_n(f)] = η_0(g_0)`, and
//!
//! ```text
//! E[M_n²] = E[M_0²] + E Σ_p ( mutation_p + selection_p )
//! mutation_p  = Σ_i ω̂_i² (K g_{p+1}² − g_p²)(ξ̂_i)
//! selection_p = Σ_j ω_j² (E[C_j²]/β_j² − 1) g_p(ξ_j)²
//! ```
//!
//! when children counts are conditionally uncorrelated. Both conditional
//! terms are evaluated exactly here, which is what makes the checks sharp on
//! finite chains.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov::{Observable, TransitionMatrix};
use crate::stats::{summarize, SampleStats};
use crate::we::{rounding_second_moment, Ensemble, SelectionOutcome, WeSampler};

/// Checks flag a failure when `|z|` exceeds this.
pub const Z_THRESHOLD: f64 = 4.0;

/// `g_p = K^{n−p} f` for `p = 0..=n`, plus the local variances
/// `K g_{p+1}² − g_p²` for `p < n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GSequence {
    g: Vec<Vec<f64>>,
    local_var: Vec<Vec<f64>>,
}

impl GSequence {
    pub fn new(k: &TransitionMatrix, f: &Observable, n: usize) -> Result<Self> {
        let mut g = vec![Vec::new(); n + 1];
        g[n] = f.values().to_vec();
        for p in (0..n).rev() {
            g[p] = k.apply_right_slice(&g[p + 1])?;
        }
        let local_var = (0..n)
            .map(|p| {
                let sq: Vec<f64> = g[p + 1].iter().map(|x| x * x).collect();
                let ksq = k.apply_right_slice(&sq)?;
                Ok(ksq.iter().zip(&g[p]).map(|(a, b)| a - b * b).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self { g, local_var })
    }

    pub fn horizon(&self) -> usize {
        self.g.len() - 1
    }

    pub fn g(&self, p: usize) -> &[f64] {
        &self.g[p]
    }

    pub fn local_variance(&self, p: usize) -> &[f64] {
        &self.local_var[p]
    }

    /// `M_p = η_p(g_p)` for an ensemble at generation `p`.
    pub fn martingale_value(&self, e: &Ensemble, p: usize) -> f64 {
        e.particles.iter().map(|q| q.weight * self.g[p][q.state]).sum()
    }
}

/// Variance contributed by mutating the selected particles at generation `p`.
pub fn mutation_variance_term(selected: &SelectionOutcome, g: &GSequence, p: usize) -> f64 {
    let lv = g.local_variance(p);
    selected
        .selected
        .iter()
        .map(|c| c.weight * c.weight * lv[c.state])
        .sum()
}

/// Variance contributed by stochastic-rounding selection with mean children
/// counts `mean_children`.
pub fn selection_variance_term(e: &Ensemble, mean_children: &[f64], g: &GSequence, p: usize) -> Result<f64> {
    if mean_children.len() != e.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            found: mean_children.len(),
        });
    }
    let gp = g.g(p);
    let mut total = 0.0;
    for (j, (q, &beta)) in e.particles.iter().zip(mean_children).enumerate() {
        if beta.is_nan() || beta <= 0.0 {
            return Err(Error::NonPositiveMeanChildren {
                particle: j + 1,
                value: beta,
            });
        }
        let ratio = rounding_second_moment(beta) / (beta * beta) - 1.0;
        total += q.weight * q.weight * ratio * gp[q.state] * gp[q.state];
    }
    Ok(total)
}

/// Mutation variance conditional on the pre-selection ensemble:
/// `Σ_j ω_j² / β_j · (K g_{p+1}² − g_p²)(ξ_j)`.
pub fn conditional_mutation_variance(e: &Ensemble, mean_children: &[f64], g: &GSequence, p: usize) -> f64 {
    let lv = g.local_variance(p);
    e.particles
        .iter()
        .zip(mean_children)
        .map(|(q, b)| q.weight * q.weight / b * lv[q.state].max(0.0))
        .sum()
}

/// Mean children counts minimising [`conditional_mutation_variance`] under
/// `Σ_j β_j = total`: `β_j ∝ ω_j √(K g_{p+1}² − g_p²)(ξ_j)`.
pub fn optimal_allocation(e: &Ensemble, g: &GSequence, p: usize, total: f64) -> Result<Vec<f64>> {
    let lv = g.local_variance(p);
    let scores: Vec<f64> = e
        .particles
        .iter()
        .map(|q| q.weight * lv[q.state].max(0.0).sqrt())
        .collect();
    let denom: f64 = scores.iter().sum();
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::InvalidParameter(
            "all local variances vanish; every allocation is optimal".into(),
        ));
    }
    Ok(scores.iter().map(|s| total * s / denom).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub check: &'static str,
    pub n: usize,
    pub policy: String,
    /// Monte Carlo side.
    pub value: f64,
    /// Exact value or independently estimated right-hand side.
    pub exact_or_rhs: f64,
    pub std_err: f64,
    pub z: f64,
    pub pass: bool,
    pub extinct_replicates: usize,
}

fn z_score(diff: f64, se: f64, scale: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 * scale.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Replicate mean of `η_n(f)` against the exact `η_0(K^n f)`.
pub fn check_unbiasedness(
    sampler: &WeSampler<'_>,
    k: &TransitionMatrix,
    init: &Ensemble,
    f: &Observable,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<CheckReport> {
    let g = GSequence::new(k, f, n)?;
    let exact = g.martingale_value(init, 0);
    let runs = sampler.run_replicates(init, f, n, seed, reps)?;
    let values: Vec<f64> = runs.iter().map(|r| r.final_estimate).collect();
    let s: SampleStats = summarize(&values);
    let z = z_score(s.mean - exact, s.std_err, exact);
    Ok(CheckReport {
        check: "unbiasedness",
        n,
        policy: sampler.policy().name().to_string(),
        value: s.mean,
        exact_or_rhs: exact,
        std_err: s.std_err,
        z,
        pass: z <= Z_THRESHOLD,
        extinct_replicates: runs.iter().filter(|r| r.extinct()).count(),
    })
}

/// Per-replicate quantities for the Doob identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoobSample {
    pub final_value: f64,
    pub mutation: f64,
    pub selection: f64,
    pub extinct: bool,
}

/// Runs one replicate and accumulates the exact conditional variance terms.
pub fn doob_sample(
    sampler: &WeSampler<'_>,
    g: &GSequence,
    init: &Ensemble,
    f: &Observable,
    seed: u64,
    replicate: u64,
) -> Result<DoobSample> {
    let n = g.horizon();
    let mut mutation = 0.0;
    let mut selection = 0.0;
    let mut failure = None;
    let mut observer = |before: &Ensemble, sel: &SelectionOutcome| {
        let p = sel.generation;
        mutation += mutation_variance_term(sel, g, p);
        match selection_variance_term(before, &sel.mean_children, g, p) {
            Ok(v) => selection += v,
            Err(e) => failure = Some(e),
        }
    };
    let rec = sampler.run_observed(init, f, n, seed, replicate, &mut observer)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(DoobSample {
        final_value: rec.final_estimate,
        mutation,
        selection,
        extinct: rec.extinct(),
    })
}

/// Monte Carlo `E[M_n²]` against `M_0² + E[Σ_p (mutation_p + selection_p)]`.
/// The two sides are estimated from the same replicates; the combined
/// standard error is `√(se_lhs² + se_rhs²)`.
pub fn check_doob_identity(
    sampler: &WeSampler<'_>,
    k: &TransitionMatrix,
    init: &Ensemble,
    f: &Observable,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<CheckReport> {
    let g = GSequence::new(k, f, n)?;
    let m0 = g.martingale_value(init, 0);
    let samples = (0..reps as u64)
        .into_par_iter()
        .map(|r| doob_sample(sampler, &g, init, f, seed, r))
        .collect::<Result<Vec<_>>>()?;
    let lhs: Vec<f64> = samples.iter().map(|s| s.final_value * s.final_value).collect();
    let rhs: Vec<f64> = samples.iter().map(|s| m0 * m0 + s.mutation + s.selection).collect();
    let l = summarize(&lhs);
    let r = summarize(&rhs);
    let se = (l.std_err * l.std_err + r.std_err * r.std_err).sqrt();
    let z = z_score(l.mean - r.mean, se, r.mean);
    Ok(CheckReport {
        check: "doob_identity",
        n,
        policy: sampler.policy().name().to_string(),
        value: l.mean,
        exact_or_rhs: r.mean,
        std_err: se,
        z,
        pass: z <= Z_THRESHOLD,
        extinct_replicates: samples.iter().filter(|s| s.extinct).count(),
    })
}
