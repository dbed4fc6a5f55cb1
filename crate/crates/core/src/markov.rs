//! Finite-state Markov chains: kernels, distributions, observables.
//!
//! States are indexed `0..size` internally. All file formats and error
//! messages use 1-based state labels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on row sums and distribution totals.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Residual target for [`TransitionMatrix::stationary`].
pub const STATIONARY_TOL: f64 = 1e-12;

/// Iteration cap for power iteration.
pub const POWER_ITERATION_CAP: usize = 1_000_000;

/// Chains up to this size are solved directly before falling back to power
/// iteration.
pub const DENSE_SOLVE_LIMIT: usize = 2000;

/// Row-stochastic matrix on a finite state space, stored dense row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    /// Validates nonnegativity and unit row sums (within [`STOCHASTIC_TOL`]).
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidMatrix("state space must be nonempty".into()));
        }
        if data.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                found: data.len(),
            });
        }
        for i in 0..size {
            let row = &data[i * size..(i + 1) * size];
            if let Some(j) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({}, {}) = {} is not a probability",
                    i + 1,
                    j + 1,
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMatrix(format!("row {} sums to {sum}", i + 1)));
            }
        }
        Ok(Self { size, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        let mut data = Vec::with_capacity(size * size);
        for row in rows {
            if row.len() != size {
                return Err(Error::DimensionMismatch {
                    expected: size,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(size, data)
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            data[i * size + i] = 1.0;
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.size)
    }

    /// `(Kf)(x) = Σ_y K(x,y) f(y)`, i.e. `E[f(X_{p+1}) | X_p = x]`.
    pub fn apply_right(&self, f: &Observable) -> Result<Observable> {
        Ok(Observable(self.apply_right_slice(f.values())?))
    }

    pub(crate) fn apply_right_slice(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(f.len())?;
        Ok(self
            .rows()
            .map(|row| row.iter().zip(f).map(|(k, v)| k * v).sum())
            .collect())
    }

    /// `(ζK)(y) = Σ_x ζ(x) K(x,y)`.
    pub fn apply_left(&self, zeta: &Distribution) -> Result<Distribution> {
        Ok(Distribution(self.apply_left_slice(zeta.values())?))
    }

    /// Left action on an arbitrary signed measure.
    pub(crate) fn apply_left_slice(&self, zeta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(zeta.len())?;
        let mut out = vec![0.0; self.size];
        for (z, row) in zeta.iter().zip(self.rows()) {
            if *z == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(row) {
                *o += z * k;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &TransitionMatrix) -> Result<TransitionMatrix> {
        self.check_dim(other.size)?;
        let n = self.size;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            let out = &mut data[i * n..(i + 1) * n];
            for (k, a) in self.row(i).iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (o, b) in out.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(TransitionMatrix { size: n, data })
    }

    /// `K^n` by repeated squaring; `K^0` is the identity.
    pub fn power(&self, n: u32) -> TransitionMatrix {
        let mut result = TransitionMatrix::identity(self.size);
        let mut base = self.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = result.matmul(&base).expect("square matrices of equal size");
            }
            e >>= 1;
            if e > 0 {
                base = base.matmul(&base).expect("square matrices of equal size");
            }
        }
        result
    }

    /// Stationary distribution `π = πK`.
    ///
    /// Small chains are solved directly; the result is accepted only if its
    /// residual `max|πK − π|` is within [`STATIONARY_TOL`]. Otherwise, and for
    /// large chains, power iteration runs until the residual target is met.
    pub fn stationary(&self) -> Result<Distribution> {
        if self.size <= DENSE_SOLVE_LIMIT {
            if let Some(pi) = self.stationary_dense() {
                if self.stationary_residual(&pi) <= STATIONARY_TOL {
                    return Ok(Distribution(pi));
                }
                return self.stationary_power(pi);
            }
        }
        self.stationary_power(vec![1.0 / self.size as f64; self.size])
    }

    fn stationary_dense(&self) -> Option<Vec<f64>> {
        let n = self.size;
        // (K^T - I) x = 0 with the last equation replaced by Σx = 1.
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(j, i)] = self.get(i, j);
            }
            a[(i, i)] -= 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n);
        b[n - 1] = 1.0;
        let x = a.lu().solve(&b)?;
        if x.iter().any(|v| !v.is_finite() || *v < -1e-9) {
            return None;
        }
        let mut pi: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        if total <= 0.0 {
            return None;
        }
        pi.iter_mut().for_each(|v| *v /= total);
        Some(pi)
    }

    fn stationary_power(&self, start: Vec<f64>) -> Result<Distribution> {
        let mut pi = start;
        let mut residual = f64::INFINITY;
        for _ in 0..POWER_ITERATION_CAP {
            let mut next = self.apply_left_slice(&pi)?;
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            residual = self.stationary_residual(&next);
            pi = next;
            if residual <= STATIONARY_TOL {
                return Ok(Distribution(pi));
            }
        }
        Err(Error::NotConverged {
            iterations: POWER_ITERATION_CAP,
            residual,
        })
    }

    /// `max_y |(πK)(y) − π(y)|`.
    pub fn stationary_residual(&self, pi: &[f64]) -> f64 {
        let next = self.apply_left_slice(pi).expect("dimension checked by caller");
        next.iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Modulus of the second-largest eigenvalue (by modulus).
    ///
    /// Used only as a relaxation-time heuristic: `E[η_n(f)] − π(f) ≈ O(|λ₂|^n)`.
    pub fn second_eigenvalue_modulus(&self) -> Result<f64> {
        if self.size == 1 {
            return Ok(0.0);
        }
        let m = self.to_dmatrix();
        let schur = nalgebra::linalg::Schur::try_new(m, 1e-14, 100_000).ok_or(Error::NotConverged {
            iterations: 100_000,
            residual: f64::NAN,
        })?;
        let mut moduli: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        Ok(moduli[1].min(1.0))
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size, self.size, &self.data)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.size {
            return Err(Error::DimensionMismatch {
                expected: self.size,
                found,
            });
        }
        Ok(())
    }
}

/// Probability vector over states.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {} = {} is negative or not finite",
                i + 1,
                values[i]
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidDistribution(format!("total mass {total}")));
        }
        Ok(Self(values))
    }

    /// Scales nonnegative masses to a probability vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let total: f64 = values.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::InvalidDistribution(format!("total mass {total}")));
        }
        Self::new(values.into_iter().map(|v| v / total).collect())
    }

    pub fn point_mass(size: usize, state: usize) -> Result<Self> {
        if state >= size {
            return Err(Error::DimensionMismatch {
                expected: size,
                found: state + 1,
            });
        }
        let mut v = vec![0.0; size];
        v[state] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `ζ(f) = Σ_x ζ(x) f(x)`.
    pub fn expect(&self, f: &Observable) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: f.len(),
            });
        }
        Ok(self.0.iter().zip(f.values()).map(|(a, b)| a * b).sum())
    }

    /// `ζ(A)` for a set of 0-based states.
    pub fn mass_of(&self, states: &[usize]) -> f64 {
        states.iter().map(|&s| self.0[s]).sum()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.0[i] > 0.0).collect()
    }
}

/// Real function on states.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable(Vec<f64>);

impl Observable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidObservable(format!(
                "value at state {} is not finite",
                i + 1
            )));
        }
        Ok(Self(values))
    }

    pub fn constant(size: usize, c: f64) -> Self {
        Self(vec![c; size])
    }

    /// `𝟙_A` for a set of 0-based states.
    pub fn indicator(size: usize, states: &[usize]) -> Result<Self> {
        let mut v = vec![0.0; size];
        for &s in states {
            if s >= size {
                return Err(Error::DimensionMismatch {
                    expected: size,
                    found: s + 1,
                });
            }
            v[s] = 1.0;
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, state: usize) -> f64 {
        self.0[state]
    }
}
