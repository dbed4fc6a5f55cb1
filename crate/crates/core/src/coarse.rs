//! Coarse (Markov state) model over bins.
//!
//! The coarse model has a bin-to-bin transition matrix `P`, the bin
//! averages `u` of the observable, the stationary vector `μ` of `P`, and
//! for a horizon `n` the table
//!
//! ```text
//! v_p = P (P^{n-p-1} u)² − (P^{n-p} u)²      p = 0, …, n−1   (entrywise squares)
//! ```
//!
//! which approximates the local mutation variance `K g_{p+1}² − g_p²` inside
//! each bin and drives adaptive allocation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::markov::{Distribution, Observable, TransitionMatrix};
use crate::rng::RngStream;
use crate::we::{apportion, BinPartition};

/// Pre-clamp values of `v` in `[-NEGATIVE_ROUNDOFF, 0)` are set to zero;
/// anything more negative is an error.
pub const NEGATIVE_ROUNDOFF: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceTable {
    horizon: usize,
    values: Vec<Vec<f64>>,
    min_raw: f64,
}

impl VarianceTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_bins(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// `v_p` as a per-bin slice, `p < horizon`.
    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Smallest value before clamping.
    pub fn min_raw(&self) -> f64 {
        self.min_raw
    }
}

/// `v_p` for `p = 0..n`, by the vector recursion `w_0 = u`, `w_k = P w_{k−1}`.
pub fn compute_v(p_mat: &TransitionMatrix, u: &Observable, n: usize) -> Result<VarianceTable> {
    if n == 0 {
        return Err(Error::InvalidParameter("variance table needs horizon ≥ 1".into()));
    }
    let r = p_mat.size();
    let mut w = vec![u.values().to_vec()];
    for k in 1..=n {
        w.push(p_mat.apply_right_slice(&w[k - 1])?);
    }
    let mut min_raw = f64::INFINITY;
    let mut values = Vec::with_capacity(n);
    for p in 0..n {
        let next = &w[n - p - 1];
        let squared: Vec<f64> = next.iter().map(|x| x * x).collect();
        let mean_sq = p_mat.apply_right_slice(&squared)?;
        let current = &w[n - p];
        let mut row = Vec::with_capacity(r);
        for (bin, (a, g)) in mean_sq.iter().zip(current).enumerate() {
            let raw = a - g * g;
            min_raw = min_raw.min(raw);
            if raw < -NEGATIVE_ROUNDOFF {
                return Err(Error::NegativeVariance {
                    p,
                    bin: bin + 1,
                    value: raw,
                });
            }
            row.push(raw.max(0.0));
        }
        values.push(row);
    }
    Ok(VarianceTable {
        horizon: n,
        values,
        min_raw,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseModel {
    /// Coarse transition matrix `P` over bins.
    pub transition: TransitionMatrix,
    /// Bin averages `u_r` of the observable.
    pub observable: Observable,
    /// Stationary vector `μ` of `P`.
    pub stationary: Distribution,
    pub variances: VarianceTable,
}

impl CoarseModel {
    pub fn new(transition: TransitionMatrix, observable: Observable, horizon: usize) -> Result<Self> {
        if observable.len() != transition.size() {
            return Err(Error::DimensionMismatch {
                expected: transition.size(),
                found: observable.len(),
            });
        }
        let stationary = coarse_stationary(&transition)?;
        let variances = compute_v(&transition, &observable, horizon)?;
        Ok(Self {
            transition,
            observable,
            stationary,
            variances,
        })
    }

    /// Same `P`, `u` and `μ` with `v` recomputed for another horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Ok(Self {
            variances: compute_v(&self.transition, &self.observable, horizon)?,
            ..self.clone()
        })
    }

    pub fn horizon(&self) -> usize {
        self.variances.horizon()
    }

    pub fn num_bins(&self) -> usize {
        self.transition.size()
    }
}

/// `μ` with `μP = μ`.
pub fn coarse_stationary(p_mat: &TransitionMatrix) -> Result<Distribution> {
    p_mat.stationary()
}

/// Exact `ζ`-weighted lumping of `K` and `f` onto bins:
/// `P_rs = ζ(B^r)⁻¹ Σ_{x∈B^r} ζ(x) K(x, B^s)`, `u_r = ζ(B^r)⁻¹ Σ_{x∈B^r} ζ(x) f(x)`.
pub fn build_coarse_exact(
    k: &TransitionMatrix,
    bins: &BinPartition,
    zeta: &Distribution,
    f: &Observable,
) -> Result<(TransitionMatrix, Observable)> {
    check_sizes(k.size(), bins, zeta, f)?;
    let r = bins.num_bins();
    let mut p = vec![0.0; r * r];
    let mut u = vec![0.0; r];
    for bin in 0..r {
        let mass: f64 = bins.members(bin).iter().map(|&x| zeta.values()[x]).sum();
        if mass <= 0.0 {
            return Err(Error::EmptyBin { bin: bin + 1 });
        }
        let row = &mut p[bin * r..(bin + 1) * r];
        for &x in bins.members(bin) {
            let z = zeta.values()[x] / mass;
            if z == 0.0 {
                continue;
            }
            for (y, kxy) in k.row(x).iter().enumerate() {
                row[bins.bin_of(y)] += z * kxy;
            }
            u[bin] += z * f.get(x);
        }
        renormalize(row);
    }
    Ok((TransitionMatrix::new(r, p)?, Observable::new(u)?))
}

/// Something that can draw one step of the fine chain.
pub trait OneStepSampler {
    fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize;
}

impl OneStepSampler for crate::we::KernelSampler {
    fn step<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        crate::we::KernelSampler::step(self, x, rng)
    }
}

/// Monte Carlo estimate of `(P, u)` from `budget` one-step trajectories.
///
/// Start states are stratified: state `x` gets its largest-remainder share
/// of `budget · ζ(x)` starts. `u` is the start-count weighted bin average
/// of `f`.
pub fn build_coarse_mc<S: OneStepSampler>(
    sampler: &S,
    bins: &BinPartition,
    zeta: &Distribution,
    f: &Observable,
    budget: usize,
    stream: RngStream,
) -> Result<(TransitionMatrix, Observable)> {
    check_sizes(bins.num_states(), bins, zeta, f)?;
    let r = bins.num_bins();
    if budget < r {
        return Err(Error::InvalidParameter(format!(
            "sample budget {budget} is smaller than the number of bins {r}"
        )));
    }
    let starts = apportion(zeta.values(), budget);
    let mut counts = vec![0u64; r * r];
    let mut visits = vec![0u64; r];
    let mut f_sum = vec![0.0; r];
    let mut rng = stream.rng();
    for (x, &c) in starts.iter().enumerate() {
        let from = bins.bin_of(x);
        visits[from] += c as u64;
        f_sum[from] += c as f64 * f.get(x);
        for _ in 0..c {
            let y = sampler.step(x, &mut rng);
            counts[from * r + bins.bin_of(y)] += 1;
        }
    }
    let mut p = vec![0.0; r * r];
    let mut u = vec![0.0; r];
    for bin in 0..r {
        if visits[bin] == 0 {
            return Err(Error::UnvisitedBin { bin: bin + 1 });
        }
        let total = visits[bin] as f64;
        for s in 0..r {
            p[bin * r + s] = counts[bin * r + s] as f64 / total;
        }
        renormalize(&mut p[bin * r..(bin + 1) * r]);
        u[bin] = f_sum[bin] / total;
    }
    Ok((TransitionMatrix::new(r, p)?, Observable::new(u)?))
}

fn renormalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|v| *v /= s);
    }
}

fn check_sizes(n: usize, bins: &BinPartition, zeta: &Distribution, f: &Observable) -> Result<()> {
    for found in [bins.num_states(), zeta.len(), f.len()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use crate::we::KernelSampler;
    use approx::assert_abs_diff_eq;

    fn two_state() -> TransitionMatrix {
        TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn singleton_bins_reproduce_the_fine_chain() {
        let k = two_state();
        let f = Observable::new(vec![0.3, -2.0]).unwrap();
        let bins = BinPartition::singletons(2).unwrap();
        let (p, u) = build_coarse_exact(&k, &bins, &Distribution::uniform(2), &f).unwrap();
        assert_eq!(p, k);
        assert_eq!(u, f);
    }

    #[test]
    fn single_bin_collapses() {
        let k = two_state();
        let f = Observable::new(vec![0.0, 1.0]).unwrap();
        let bins = BinPartition::single(2).unwrap();
        let (p, u) = build_coarse_exact(&k, &bins, &Distribution::uniform(2), &f).unwrap();
        assert_eq!(p.get(0, 0), 1.0);
        assert_abs_diff_eq!(u.get(0), 0.5);

        let c = Observable::constant(2, 4.0);
        let (_, u) = build_coarse_exact(&k, &bins, &Distribution::uniform(2), &c).unwrap();
        assert_eq!(u.get(0), 4.0);
    }

    #[test]
    fn zero_mass_bin_is_named() {
        let k = two_state();
        let zeta = Distribution::point_mass(2, 0).unwrap();
        let bins = BinPartition::singletons(2).unwrap();
        let err = build_coarse_exact(&k, &bins, &zeta, &Observable::constant(2, 1.0)).unwrap_err();
        assert!(matches!(err, Error::EmptyBin { bin: 2 }));
    }

    #[test]
    fn v_examples() {
        let p = two_state();
        let u = Observable::new(vec![0.0, 1.0]).unwrap();
        let v = compute_v(&p, &u, 3).unwrap();
        // p = n−1: P u² − (P u)² = (0.1, 0.8) − (0.01, 0.64)
        assert_abs_diff_eq!(v.row(2)[0], 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(v.row(2)[1], 0.16, epsilon = 1e-15);

        let flat = compute_v(&p, &Observable::constant(2, 3.0), 4).unwrap();
        assert!(flat.rows().iter().flatten().all(|x| *x == 0.0));
        assert!(compute_v(&p, &u, 0).is_err());
    }

    #[test]
    fn coarse_stationary_examples() {
        let mu = coarse_stationary(&two_state()).unwrap();
        assert_abs_diff_eq!(mu.values()[0], 2.0 / 3.0, epsilon = 1e-14);
        let sym = TransitionMatrix::from_rows(&[vec![0.5, 0.25, 0.25], vec![0.25, 0.5, 0.25], vec![0.25, 0.25, 0.5]])
            .unwrap();
        for m in coarse_stationary(&sym).unwrap().values() {
            assert_abs_diff_eq!(*m, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn mc_builder_on_a_permutation_is_exact() {
        let perm =
            TransitionMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let bins = BinPartition::singletons(3).unwrap();
        let f = Observable::indicator(3, &[1]).unwrap();
        let (p, u) = build_coarse_mc(
            &KernelSampler::new(&perm),
            &bins,
            &Distribution::uniform(3),
            &f,
            3,
            RngStream::new(0, 0, 0, Purpose::CoarseSampling),
        )
        .unwrap();
        assert_eq!(p, perm);
        assert_eq!(u.values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn mc_builder_rejects_small_budget_and_unvisited_bins() {
        let k = two_state();
        let bins = BinPartition::singletons(2).unwrap();
        let f = Observable::constant(2, 1.0);
        let s = KernelSampler::new(&k);
        let stream = RngStream::new(0, 0, 0, Purpose::CoarseSampling);
        assert!(build_coarse_mc(&s, &bins, &Distribution::uniform(2), &f, 1, stream).is_err());
        let err = build_coarse_mc(&s, &bins, &Distribution::point_mass(2, 0).unwrap(), &f, 10, stream).unwrap_err();
        assert!(matches!(err, Error::UnvisitedBin { bin: 2 }));
    }
}
