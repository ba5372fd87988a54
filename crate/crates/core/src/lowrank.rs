//! Best rank-r approximation (the module-B denoiser) and its divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng;

/// Thin SVD `X = sum_i s_i u_i v_i^T` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub singular_values: Vec<f64>,
    /// `n1 x k`, orthonormal columns.
    pub left: DenseMatrix,
    /// `n2 x k`, orthonormal columns.
    pub right: DenseMatrix,
}

/// Thin SVD with a deterministic sign convention: the largest-magnitude
/// entry of every left singular vector is nonnegative.
pub fn svd(x: &DenseMatrix) -> Result<SvdFactors> {
    let dec = x
        .as_faer()
        .thin_svd()
        .map_err(|e| Error::Linalg(format!("svd did not converge: {e:?}")))?;
    let mut left = DenseMatrix::from_faer(dec.U());
    let mut right = DenseMatrix::from_faer(dec.V());
    let singular_values: Vec<f64> = dec.S().column_vector().iter().copied().collect();

    let (n1, n2) = x.shape();
    for k in 0..singular_values.len() {
        let col = left.column(k);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            left.as_mut_slice()[k * n1..(k + 1) * n1]
                .iter_mut()
                .for_each(|v| *v = -*v);
            right.as_mut_slice()[k * n2..(k + 1) * n2]
                .iter_mut()
                .for_each(|v| *v = -*v);
        }
    }
    Ok(SvdFactors {
        singular_values,
        left,
        right,
    })
}

impl SvdFactors {
    pub fn rank_capacity(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.truncate(self.rank_capacity())
            .expect("full truncation is always in range")
    }

    /// `sum_{i<=r} s_i u_i v_i^T`.
    pub fn truncate(&self, r: usize) -> Result<DenseMatrix> {
        let k = self.rank_capacity();
        if r == 0 || r > k {
            return Err(Error::invalid(format!("rank {r} outside 1..={k}")));
        }
        let n1 = self.left.rows();
        let n2 = self.right.rows();
        let mut scaled = DenseMatrix::from_raw(n1, r, self.left.as_slice()[..n1 * r].to_vec());
        for (c, &s) in self.singular_values[..r].iter().enumerate() {
            scaled.as_mut_slice()[c * n1..(c + 1) * n1]
                .iter_mut()
                .for_each(|v| *v *= s);
        }
        let v_r = self.right.as_faer().subcols(0, r);
        let mut out = DenseMatrix::zeros(n1, n2);
        faer::linalg::matmul::matmul(
            out.as_faer_mut(),
            faer::Accum::Replace,
            scaled.as_faer(),
            v_r.transpose(),
            1.0,
            faer::Par::Seq,
        );
        Ok(out)
    }

    /// Leading `r` singular triples, used as the subspace of the current
    /// low-rank estimate.
    pub fn leading(&self, r: usize) -> Result<SubspaceBasis> {
        let k = self.rank_capacity();
        if r == 0 || r > k {
            return Err(Error::invalid(format!("rank {r} outside 1..={k}")));
        }
        let n1 = self.left.rows();
        let n2 = self.right.rows();
        Ok(SubspaceBasis {
            u: DenseMatrix::from_raw(n1, r, self.left.as_slice()[..n1 * r].to_vec()),
            v: DenseMatrix::from_raw(n2, r, self.right.as_slice()[..n2 * r].to_vec()),
        })
    }
}

fn check_rank(x: &DenseMatrix, r: usize) -> Result<()> {
    let k = x.rows().min(x.cols());
    if r == 0 || r > k {
        return Err(Error::invalid(format!(
            "rank {r} outside 1..={k} for a {}x{} matrix",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Best rank-`r` approximation in Frobenius norm.
pub fn best_rank_r(x: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    check_rank(x, r)?;
    svd(x)?.truncate(r)
}

/// Divergence of the rank-`r` truncation evaluated at a matrix with the given
/// singular values:
///
/// `|n1 - n2| r + r^2 + 2 sum_{i<=r} sum_{j>r} s_i^2 / (s_i^2 - s_j^2)`.
pub fn divergence_from_spectrum(singular_values: &[f64], n1: usize, n2: usize, r: usize) -> Result<f64> {
    let k = singular_values.len();
    if r == 0 || r > k {
        return Err(Error::invalid(format!("rank {r} outside 1..={k}")));
    }
    let top = singular_values[0].powi(2);
    let gap_floor = 1e-12 * top;
    let mut cross = 0.0;
    for (i, &si) in singular_values[..r].iter().enumerate() {
        let si2 = si * si;
        for (j, &sj) in singular_values.iter().enumerate().skip(r) {
            let gap = si2 - sj * sj;
            if gap.abs() < gap_floor || gap == 0.0 {
                return Err(Error::DegenerateSpectrum { upper: i + 1, lower: j + 1 });
            }
            cross += si2 / gap;
        }
    }
    let (r_f, diff) = (r as f64, n1.abs_diff(n2) as f64);
    Ok(diff * r_f + r_f * r_f + 2.0 * cross)
}

pub fn divergence_analytic(x: &DenseMatrix, r: usize) -> Result<f64> {
    check_rank(x, r)?;
    let s = svd(x)?;
    divergence_from_spectrum(&s.singular_values, x.rows(), x.cols(), r)
}

/// Scale-relative finite-difference step, `1e-4 ||R||_F / sqrt(n1 n2)`.
pub fn default_eps(x: &DenseMatrix) -> f64 {
    let rms = x.norm() / (x.len() as f64).sqrt();
    if rms > 0.0 {
        1e-4 * rms
    } else {
        1e-4
    }
}

/// One probe is enough once the matrix has at least `10^4` entries.
pub fn default_probes(x: &DenseMatrix) -> usize {
    if x.len() >= 10_000 {
        1
    } else {
        8
    }
}

/// Monte Carlo divergence of the rank-`r` truncation.
pub fn divergence_monte_carlo(x: &DenseMatrix, r: usize, eps: f64, probes: usize, seed: u64) -> Result<f64> {
    check_rank(x, r)?;
    divergence_monte_carlo_with(|m| best_rank_r(m, r), x, eps, probes, seed)
}

/// Sample mean of `<(D(X + eps N) - D(X)) / eps, N>` over standard normal
/// probes `N`, for an arbitrary map `D`.
pub fn divergence_monte_carlo_with<F>(denoiser: F, x: &DenseMatrix, eps: f64, probes: usize, seed: u64) -> Result<f64>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if probes == 0 {
        return Err(Error::invalid("need at least one probe"));
    }
    let base = denoiser(x)?;
    let mut rng = rng::seeded(seed);
    let mut total = 0.0;
    for _ in 0..probes {
        let probe = rng::normal_matrix(&mut rng, x.rows(), x.cols());
        let mut shifted = x.clone();
        shifted.axpy(eps, &probe);
        let diff = &denoiser(&shifted)? - &base;
        total += diff.dot(&probe) / eps;
    }
    Ok(total / probes as f64)
}

/// Which subspace of the current estimate a search direction is projected
/// onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    /// `U U^T X`
    #[default]
    #[serde(alias = "left")]
    LeftSingular,
    /// `X V V^T`
    #[serde(alias = "right")]
    RightSingular,
    /// `U U^T X + X V V^T - U U^T X V V^T`, the tangent space of the rank-r
    /// manifold.
    Tangent,
}

/// Orthonormal bases of the column and row spaces of a rank-r estimate.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// `n1 x r`
    pub u: DenseMatrix,
    /// `n2 x r`
    pub v: DenseMatrix,
}

impl SubspaceBasis {
    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn project(&self, which: Subspace, x: &DenseMatrix) -> DenseMatrix {
        match which {
            Subspace::LeftSingular => self.project_left(x),
            Subspace::RightSingular => self.project_right(x),
            Subspace::Tangent => {
                let left = self.project_left(x);
                let right = self.project_right(x);
                let both = self.project_right(&left);
                let mut out = left;
                out.axpy(1.0, &right);
                out.axpy(-1.0, &both);
                out
            }
        }
    }

    fn project_left(&self, x: &DenseMatrix) -> DenseMatrix {
        let u = self.u.as_faer();
        let coeffs = u.transpose() * x.as_faer();
        DenseMatrix::from_faer((u * coeffs).as_ref())
    }

    fn project_right(&self, x: &DenseMatrix) -> DenseMatrix {
        let v = self.v.as_faer();
        let coeffs = x.as_faer() * v;
        DenseMatrix::from_faer((coeffs * v.transpose()).as_ref())
    }
}
