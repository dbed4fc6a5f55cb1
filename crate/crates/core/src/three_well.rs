//! The 90-state three-well benchmark chain.
//!
//! A nearest-neighbour walk on `{1, …, 90}` with
//! `Q(i,i±1) = 2/5 ± m(i)/5`, `m(j) = sin(6πj/90)`, mimicking a
//! one-dimensional energy landscape with three wells. Sampling happens every
//! four steps, so the resampled chain has kernel `K = Q⁴`.

use std::f64::consts::PI;

use crate::markov::{Observable, TransitionMatrix};
use crate::we::BinPartition;

pub const NUM_STATES: usize = 90;
/// Steps of `Q` between resampling times.
pub const LAG: u32 = 4;
/// States per bin; bins are `{3r−2, 3r−1, 3r}` for `r = 1..=30`.
pub const BIN_WIDTH: usize = 3;
/// 1-based inclusive range where the benchmark observable is one.
pub const OBSERVABLE_RANGE: (usize, usize) = (28, 33);

pub fn tilt(j: usize) -> f64 {
    (6.0 * PI * j as f64 / NUM_STATES as f64).sin()
}

/// Returns `(Q, K = Q⁴)`.
///
/// The end states have only one neighbour; the missing mass stays on the
/// diagonal, `Q(1,1) = 1 − Q(1,2)` and `Q(90,90) = 1 − Q(90,89)`.
pub fn build_chain() -> (TransitionMatrix, TransitionMatrix) {
    let n = NUM_STATES;
    let mut data = vec![0.0; n * n];
    for i in 1..=n {
        let row = &mut data[(i - 1) * n..i * n];
        let m = tilt(i);
        if i < n {
            row[i] = 0.4 + m / 5.0;
        }
        if i > 1 {
            row[i - 2] = 0.4 - m / 5.0;
        }
        let off: f64 = row.iter().sum();
        row[i - 1] = 1.0 - off;
    }
    let q = TransitionMatrix::new(n, data).expect("three-well rows are stochastic");
    let k = q.power(LAG);
    (q, k)
}

pub fn bins() -> BinPartition {
    BinPartition::uniform_width(NUM_STATES, BIN_WIDTH).expect("90 states split into 30 bins")
}

/// Indicator of `{28, …, 33}`.
pub fn observable() -> Observable {
    let (lo, hi) = OBSERVABLE_RANGE;
    let states: Vec<usize> = (lo - 1..hi).collect();
    Observable::indicator(NUM_STATES, &states).expect("range inside state space")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spot_entries() {
        let (q, _) = build_chain();
        // m(45) = sin(3π) = 0 and m(90) = sin(6π) = 0.
        assert_abs_diff_eq!(q.get(44, 45), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(89, 88), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(89, 89), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(0, 0), 1.0 - q.get(0, 1), epsilon = 1e-15);
    }

    #[test]
    fn tridiagonal_and_stochastic() {
        let (q, k) = build_chain();
        for i in 0..NUM_STATES {
            let sum: f64 = q.row(i).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            for j in 0..NUM_STATES {
                let v = q.get(i, j);
                assert!((0.0..=1.0).contains(&v));
                if i.abs_diff(j) > 1 {
                    assert_eq!(v, 0.0);
                }
                if i.abs_diff(j) > LAG as usize {
                    assert_eq!(k.get(i, j), 0.0);
                }
            }
            let ksum: f64 = k.row(i).iter().sum();
            assert_abs_diff_eq!(ksum, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn observable_and_bins() {
        let f = observable();
        assert_eq!(f.values().iter().sum::<f64>(), 6.0);
        assert_eq!(f.get(27), 1.0);
        assert_eq!(f.get(32), 1.0);
        assert_eq!(f.get(26), 0.0);
        let b = bins();
        assert_eq!(b.num_bins(), 30);
        assert_eq!(b.bin_of(27), 9);
        assert_eq!(b.members(10), &[30, 31, 32]);
    }
}
