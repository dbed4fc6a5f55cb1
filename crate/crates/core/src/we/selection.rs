//! Selection: per-particle mean children counts, stochastic rounding and
//! reweighting.
//!
//! A parent with mean children count `β_j = E[C_j | F_p]` is copied
//! `C_j ∈ {⌊β_j⌋, ⌊β_j⌋+1}` times and every child carries weight `ω_j / β_j`.
//! Children counts are drawn independently across parents.

use rand::Rng;

use crate::error::{Error, Result};

use super::{BinPartition, BinTotal, Ensemble, Particle};

/// How per-bin target particle counts `N_p^r` are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionPolicy {
    /// Coarse-model guided targets, `N_p^r = (N − ÑR)·√v_p^r·w_r / Σ_s √v_p^s·w_s + Ñ`.
    Adaptive { total: f64, floor: f64 },
    /// The same target in every occupied bin.
    Traditional { per_bin_target: f64 },
    /// No selection; every particle is kept once with its weight.
    Naive,
}

impl SelectionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::Adaptive { .. } => "adaptive",
            SelectionPolicy::Traditional { .. } => "traditional",
            SelectionPolicy::Naive => "naive",
        }
    }

    pub fn validate(&self, num_bins: usize) -> Result<()> {
        match *self {
            SelectionPolicy::Adaptive { total, floor } => check_floor(total, floor, num_bins),
            SelectionPolicy::Traditional { per_bin_target } => {
                if per_bin_target > 0.0 && per_bin_target.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "per-bin target {per_bin_target} must be positive"
                    )))
                }
            }
            SelectionPolicy::Naive => Ok(()),
        }
    }

    pub fn requires_coarse_model(&self) -> bool {
        matches!(self, SelectionPolicy::Adaptive { .. })
    }

    /// Per-bin targets `N_p^r`, or `None` for the naive policy.
    pub fn bin_targets(&self, totals: &[BinTotal], v_p: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
        match *self {
            SelectionPolicy::Adaptive { total, floor } => {
                let v =
                    v_p.ok_or_else(|| Error::InvalidParameter("adaptive selection needs variance estimates".into()))?;
                let weights: Vec<f64> = totals.iter().map(|t| t.weight).collect();
                allocate_targets(&weights, v, total, floor).map(Some)
            }
            SelectionPolicy::Traditional { per_bin_target } => Ok(Some(vec![per_bin_target; totals.len()])),
            SelectionPolicy::Naive => Ok(None),
        }
    }

    /// Per-particle `β_p^j`. Inside bin `r` this is `ω_j / ω̄_r` with
    /// `ω̄_r = w_r / N_p^r`, so `Σ_{j∈B^r} β_j = N_p^r`.
    pub fn mean_children(&self, e: &Ensemble, bins: &BinPartition, v_p: Option<&[f64]>) -> Result<Vec<f64>> {
        let totals = e.bin_totals(bins);
        let Some(targets) = self.bin_targets(&totals, v_p)? else {
            return Ok(vec![1.0; e.len()]);
        };
        Ok(e.particles
            .iter()
            .map(|p| {
                let r = bins.bin_of(p.state);
                let bar_weight = totals[r].weight / targets[r];
                p.weight / bar_weight
            })
            .collect())
    }
}

fn check_floor(total: f64, floor: f64, num_bins: usize) -> Result<()> {
    if !(floor > 0.0 && floor < total / num_bins as f64) {
        return Err(Error::InvalidParameter(format!(
            "lower threshold {floor} must lie in (0, N/R) = (0, {})",
            total / num_bins as f64
        )));
    }
    Ok(())
}

/// Coarse-guided per-bin targets.
///
/// `bin_weights[r]` is the total particle weight in bin `r`, `v_p[r]` the
/// coarse local-variance estimate. Targets are never rounded. When
/// `Σ_s √v_p^s·w_s = 0` every bin gets the floor `Ñ`.
pub fn allocate_targets(bin_weights: &[f64], v_p: &[f64], total: f64, floor: f64) -> Result<Vec<f64>> {
    if bin_weights.len() != v_p.len() {
        return Err(Error::DimensionMismatch {
            expected: bin_weights.len(),
            found: v_p.len(),
        });
    }
    let r = bin_weights.len();
    check_floor(total, floor, r)?;
    if let Some(i) = v_p.iter().position(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variance estimate for bin {} is {}",
            i + 1,
            v_p[i]
        )));
    }
    let scores: Vec<f64> = bin_weights.iter().zip(v_p).map(|(w, v)| v.sqrt() * w).collect();
    let denom: f64 = scores.iter().sum();
    if denom == 0.0 {
        return Ok(vec![floor; r]);
    }
    let free = total - floor * r as f64;
    Ok(scores.iter().map(|s| free * s / denom + floor).collect())
}

/// `⌊β⌋ + 1` with probability `β − ⌊β⌋`, else `⌊β⌋`. One uniform is consumed
/// per call regardless of `β`.
pub fn stochastic_round<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> u64 {
    let floor = beta.floor();
    let frac = beta - floor;
    let u: f64 = rng.random();
    floor as u64 + u64::from(u < frac)
}

/// `E[C²]` for the stochastic-rounding law with mean `β`.
pub fn rounding_second_moment(beta: f64) -> f64 {
    let fl = beta.floor();
    fl * fl + (2.0 * fl + 1.0) * (beta - fl)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    pub generation: usize,
    /// The selected particles `(ξ̂_p^i, ω̂_p^i)`.
    pub selected: Vec<Particle>,
    /// `parent_of[i]` is the index of the parent of selected particle `i`.
    pub parent_of: Vec<usize>,
    pub children_count: Vec<u64>,
    pub mean_children: Vec<f64>,
}

impl SelectionOutcome {
    pub fn is_extinct(&self) -> bool {
        self.selected.is_empty()
    }

    /// Deterministic copy of every particle (`C ≡ 1`).
    pub fn identity(e: &Ensemble) -> Self {
        Self {
            generation: e.generation,
            selected: e.particles.clone(),
            parent_of: (0..e.len()).collect(),
            children_count: vec![1; e.len()],
            mean_children: vec![1.0; e.len()],
        }
    }
}

/// Selects with the given mean children counts. Every `β_j` must be
/// positive and finite so each particle can survive.
pub fn select_with_mean_children<R: Rng + ?Sized>(
    e: &Ensemble,
    mean_children: Vec<f64>,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    if mean_children.len() != e.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            found: mean_children.len(),
        });
    }
    let mut selected = Vec::new();
    let mut parent_of = Vec::new();
    let mut children_count = Vec::with_capacity(e.len());
    for (j, (p, &beta)) in e.particles.iter().zip(&mean_children).enumerate() {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::NonPositiveMeanChildren {
                particle: j + 1,
                value: beta,
            });
        }
        let c = stochastic_round(beta, rng);
        let child = Particle {
            state: p.state,
            weight: p.weight / beta,
        };
        for _ in 0..c {
            selected.push(child);
            parent_of.push(j);
        }
        children_count.push(c);
    }
    Ok(SelectionOutcome {
        generation: e.generation,
        selected,
        parent_of,
        children_count,
        mean_children,
    })
}

/// One selection step under a binned policy. `v_p` is required only for
/// the adaptive policy.
pub fn select<R: Rng + ?Sized>(
    e: &Ensemble,
    policy: &SelectionPolicy,
    bins: &BinPartition,
    v_p: Option<&[f64]>,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    if matches!(policy, SelectionPolicy::Naive) {
        return Ok(SelectionOutcome::identity(e));
    }
    let beta = policy.mean_children(e, bins, v_p)?;
    select_with_mean_children(e, beta, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn integer_beta_is_deterministic() {
        let mut r = rng();
        for _ in 0..1000 {
            assert_eq!(stochastic_round(2.0, &mut r), 2);
            assert_eq!(stochastic_round(0.0, &mut r), 0);
        }
    }

    #[test]
    fn rounding_support_and_mean() {
        let mut r = rng();
        let draws = 1_000_000;
        let mut ones = 0u64;
        for _ in 0..draws {
            let c = stochastic_round(0.4, &mut r);
            assert!(c <= 1);
            ones += c;
        }
        let mean = ones as f64 / draws as f64;
        let sigma = (0.4f64 * 0.6 / draws as f64).sqrt();
        assert!((mean - 0.4).abs() <= 3.0 * sigma, "mean {mean}");

        let mut threes = 0u64;
        for _ in 0..100_000 {
            let c = stochastic_round(2.3, &mut r);
            assert!(c == 2 || c == 3);
            threes += u64::from(c == 3);
        }
        let frac = threes as f64 / 100_000.0;
        assert!((frac - 0.3).abs() < 4.0 * (0.21f64 / 100_000.0).sqrt());
    }

    #[test]
    fn second_moment_closed_form() {
        assert_abs_diff_eq!(rounding_second_moment(0.5), 0.5);
        assert_abs_diff_eq!(rounding_second_moment(2.0), 4.0);
        // 2.3: 4·0.7 + 9·0.3 = 5.5
        assert_abs_diff_eq!(rounding_second_moment(2.3), 5.5, epsilon = 1e-12);
    }

    #[test]
    fn allocate_targets_examples() {
        let t = allocate_targets(&[0.5, 0.25, 0.25], &[1.0, 4.0, 0.0], 10.0, 1.0).unwrap();
        assert_abs_diff_eq!(t[0], 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t[2], 1.0, epsilon = 1e-12);

        let one = allocate_targets(&[0.7], &[0.3], 150.0, 1.0).unwrap();
        assert_abs_diff_eq!(one[0], 150.0, epsilon = 1e-12);

        let sym = allocate_targets(&[0.25; 4], &[2.0; 4], 12.0, 1.0).unwrap();
        assert!(sym.iter().all(|v| (v - 3.0).abs() < 1e-12));

        let zero = allocate_targets(&[0.5, 0.5], &[0.0, 0.0], 10.0, 2.0).unwrap();
        assert_eq!(zero, vec![2.0, 2.0]);

        assert!(allocate_targets(&[0.5, 0.5], &[1.0, 1.0], 10.0, 5.0).is_err());
        assert!(allocate_targets(&[0.5, 0.5], &[1.0, 1.0], 10.0, 0.0).is_err());
        assert!(allocate_targets(&[0.5, 0.5], &[1.0, -1.0], 10.0, 1.0).is_err());
    }

    #[test]
    fn naive_selection_copies() {
        let bins = BinPartition::singletons(3).unwrap();
        let e = Ensemble::new(
            4,
            vec![Particle { state: 0, weight: 0.3 }, Particle { state: 2, weight: 0.7 }],
        );
        let out = select(&e, &SelectionPolicy::Naive, &bins, None, &mut rng()).unwrap();
        assert_eq!(out.selected, e.particles);
        assert_eq!(out.mean_children, vec![1.0, 1.0]);
        assert_eq!(out.generation, 4);
    }

    #[test]
    fn one_bin_two_particles() {
        let bins = BinPartition::single(2).unwrap();
        let e = Ensemble::new(
            0,
            vec![Particle { state: 0, weight: 0.75 }, Particle { state: 1, weight: 0.25 }],
        );
        let policy = SelectionPolicy::Traditional { per_bin_target: 2.0 };
        let beta = policy.mean_children(&e, &bins, None).unwrap();
        assert_abs_diff_eq!(beta[0], 1.5);
        assert_abs_diff_eq!(beta[1], 0.5);
        let out = select(&e, &policy, &bins, None, &mut rng()).unwrap();
        assert!(out.selected.iter().all(|p| (p.weight - 0.5).abs() < 1e-15));
        assert_eq!(out.children_count.iter().sum::<u64>() as usize, out.selected.len());
        assert!(out.children_count[0] == 1 || out.children_count[0] == 2);
        assert!(out.children_count[1] <= 1);
    }

    #[test]
    fn traditional_beta_sums_to_target() {
        let bins = BinPartition::from_assignment(vec![0, 0, 0, 1]).unwrap();
        let e = Ensemble::new(
            0,
            vec![
                Particle { state: 0, weight: 0.05 },
                Particle { state: 1, weight: 0.03 },
                Particle { state: 2, weight: 0.02 },
                Particle { state: 3, weight: 0.9 },
            ],
        );
        let beta = SelectionPolicy::Traditional { per_bin_target: 5.0 }
            .mean_children(&e, &bins, None)
            .unwrap();
        assert_abs_diff_eq!(beta[..3].iter().sum::<f64>(), 5.0, epsilon = 1e-12);
        // ω̄ = 0.1 / 5 = 0.02
        assert_abs_diff_eq!(beta[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn adaptive_requires_variances() {
        let bins = BinPartition::single(2).unwrap();
        let e = Ensemble::new(0, vec![Particle { state: 0, weight: 1.0 }]);
        let policy = SelectionPolicy::Adaptive {
            total: 10.0,
            floor: 1.0,
        };
        assert!(select(&e, &policy, &bins, None, &mut rng()).is_err());
        assert!(policy.validate(1).is_ok());
        assert!(policy.validate(10).is_err());
    }

    #[test]
    fn rejects_nonpositive_beta() {
        let e = Ensemble::new(0, vec![Particle { state: 0, weight: 1.0 }]);
        assert!(matches!(
            select_with_mean_children(&e, vec![0.0], &mut rng()),
            Err(Error::NonPositiveMeanChildren { particle: 1, .. })
        ));
    }
}
