//! Measurement operators `A: R^{n1 x n2} -> R^m`.
//!
//! Three families are supported:
//!
//! * partial orthogonal: `A = S W P` with `P` a uniformly random
//!   permutation of the entries of `vec(X)`, `W` the orthonormal type-II DCT
//!   and `S` keeping `m` rows of a uniformly random row permutation.
//!   `A A^T = I_m` holds exactly, and the `n x n` matrix is never formed.
//!   Without `P` every DCT row, reshaped to `n1 x n2`, has rank at most two,
//!   and low-rank iterates drift into the row space of `A`.
//! * Gaussian: a dense `m x n` matrix with i.i.d. `N(0, 1/n)` entries, so rows
//!   have unit length on average.
//! * entry selector: `m` distinct entries of `X`, i.e. matrix completion.
//!
//! `vec` is column stacking throughout, matching the storage of
//! [`DenseMatrix`].

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix, MeasurementVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    #[serde(rename = "dct")]
    PartialOrthogonal,
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "selector")]
    EntrySelector,
}

impl OperatorKind {
    /// Right-orthogonally invariant families, for which the practical
    /// `mu = n/m` and divergence-based `alpha` apply.
    pub fn is_roil(self) -> bool {
        matches!(self, OperatorKind::PartialOrthogonal | OperatorKind::Gaussian)
    }

    pub fn label(self) -> &'static str {
        match self {
            OperatorKind::PartialOrthogonal => "dct",
            OperatorKind::Gaussian => "gaussian",
            OperatorKind::EntrySelector => "selector",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Everything needed to regenerate an operator bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub m: usize,
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
}

impl OperatorSpec {
    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::invalid(format!(
                "operator domain {}x{} is empty",
                self.n1, self.n2
            )));
        }
        if self.m == 0 || self.m > self.n() {
            return Err(Error::invalid(format!(
                "need 1 <= m <= n1*n2 = {}, got m = {}",
                self.n(),
                self.m
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
enum Realization {
    Dct {
        /// `(P x)_j = x[cols[j]]`.
        cols: Vec<usize>,
        rows: Vec<usize>,
        plan: Arc<dyn TransformType2And3<f64>>,
    },
    /// Row-major `m x n`.
    Gaussian { entries: Vec<f64> },
    Selector { indices: Vec<usize> },
}

/// An immutable, realised measurement operator.
#[derive(Clone)]
pub struct LinearOperator {
    spec: OperatorSpec,
    realization: Realization,
}

impl fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearOperator").field("spec", &self.spec).finish()
    }
}

pub fn make_operator(
    kind: OperatorKind,
    m: usize,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<LinearOperator> {
    LinearOperator::new(OperatorSpec { kind, m, n1, n2, seed })
}

impl LinearOperator {
    pub fn new(spec: OperatorSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n();
        let mut rng = rng::seeded(spec.seed);
        let realization = match spec.kind {
            OperatorKind::PartialOrthogonal => {
                let rows = permuted_prefix(&mut rng, n, spec.m);
                let cols = permuted_prefix(&mut rng, n, n);
                let plan = DctPlanner::new().plan_dct2(n);
                Realization::Dct { cols, rows, plan }
            }
            OperatorKind::Gaussian => {
                let entries = rng::normal_vec(&mut rng, spec.m * n, (1.0 / n as f64).sqrt());
                Realization::Gaussian { entries }
            }
            OperatorKind::EntrySelector => Realization::Selector {
                indices: permuted_prefix(&mut rng, n, spec.m),
            },
        };
        Ok(Self { spec, realization })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn kind(&self) -> OperatorKind {
        self.spec.kind
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.spec.n1, self.spec.n2)
    }

    /// Selected column-stacked indices, for the selector and partial
    /// orthogonal kinds.
    pub fn selected_indices(&self) -> Option<&[usize]> {
        match &self.realization {
            Realization::Dct { rows, .. } => Some(rows),
            Realization::Selector { indices } => Some(indices),
            Realization::Gaussian { .. } => None,
        }
    }

    /// `A(X) = A vec(X)`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<MeasurementVector> {
        if x.shape() != self.shape() {
            return Err(Error::dims(
                format!("{}x{}", self.spec.n1, self.spec.n2),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        Ok(MeasurementVector::from_raw(self.apply_vec(x.as_slice())))
    }

    /// `A^T(y)`, reshaped to `n1 x n2`.
    pub fn adjoint(&self, y: &MeasurementVector) -> Result<DenseMatrix> {
        if y.len() != self.spec.m {
            return Err(Error::dims(self.spec.m, y.len()));
        }
        let (n1, n2) = self.shape();
        Ok(DenseMatrix::from_raw(n1, n2, self.adjoint_vec(y.as_slice())))
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        match &self.realization {
            Realization::Dct { cols, rows, plan } => {
                let mut buf: Vec<f64> = cols.iter().map(|&j| x[j]).collect();
                orthonormal_dct2(plan.as_ref(), &mut buf);
                rows.iter().map(|&k| buf[k]).collect()
            }
            Realization::Gaussian { entries } => {
                let n = self.n();
                entries.chunks_exact(n).map(|row| dot(row, x)).collect()
            }
            Realization::Selector { indices } => indices.iter().map(|&k| x[k]).collect(),
        }
    }

    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n();
        match &self.realization {
            Realization::Dct { cols, rows, plan } => {
                let mut buf = vec![0.0; n];
                for (&k, &v) in rows.iter().zip(y) {
                    buf[k] = v;
                }
                orthonormal_dct3(plan.as_ref(), &mut buf);
                let mut out = vec![0.0; n];
                for (&j, &v) in cols.iter().zip(&buf) {
                    out[j] = v;
                }
                out
            }
            Realization::Gaussian { entries } => {
                let mut out = vec![0.0; n];
                for (row, &yi) in entries.chunks_exact(n).zip(y) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += yi * a;
                    }
                }
                out
            }
            Realization::Selector { indices } => {
                let mut out = vec![0.0; n];
                for (&k, &v) in indices.iter().zip(y) {
                    out[k] = v;
                }
                out
            }
        }
    }

    /// Materialises the `m x n` matrix form. Only sensible for small `n`.
    pub fn matrix_form(&self) -> DenseMatrix {
        let (m, n) = (self.spec.m, self.n());
        let mut out = DenseMatrix::zeros(m, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_vec(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// First `m` entries of a uniformly random permutation of `0..n`.
fn permuted_prefix(rng: &mut rng::SeededRng, n: usize, m: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm.truncate(m);
    perm
}

fn orthonormal_dct2(plan: &dyn TransformType2And3<f64>, buf: &mut [f64]) {
    plan.process_dct2(buf);
    let n = buf.len() as f64;
    let s0 = (1.0 / n).sqrt();
    let s = (2.0 / n).sqrt();
    buf[0] *= s0;
    buf[1..].iter_mut().for_each(|v| *v *= s);
}

/// Inverse (= transpose) of [`orthonormal_dct2`].
fn orthonormal_dct3(plan: &dyn TransformType2And3<f64>, buf: &mut [f64]) {
    let n = buf.len() as f64;
    buf[0] *= 2.0 * (1.0 / n).sqrt();
    let s = (2.0 / n).sqrt();
    buf[1..].iter_mut().for_each(|v| *v *= s);
    plan.process_dct3(buf);
}
