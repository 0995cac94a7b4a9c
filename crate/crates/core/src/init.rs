//! Truncated SVD and spectral initialization, plain and leave-one-out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim, param, Result};
use crate::matrix::{DenseMatrix, FactorPair, GroundTruth};
use crate::sampling::{LooAxis, LooSelector, ObservationMask};
use crate::svd::{fix_signs, full_svd, thin_qr, Svd};

/// Largest dimension handled by the dense SVD; bigger inputs go through
/// randomized subspace iteration.
pub const DENSE_SVD_LIMIT: usize = 512;
const OVERSAMPLING: usize = 10;
const POWER_ITERS: usize = 16;
const SKETCH_SEED: u64 = 0x005E_ED0F_5BD0;

/// Top `r` singular triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    pub u0: DenseMatrix,
    pub sigma0: Vec<f64>,
    pub v0: DenseMatrix,
}

impl TruncatedSvd {
    fn from_svd(svd: Svd, r: usize) -> Self {
        Self {
            u0: svd.u.leading_columns(r),
            sigma0: svd.sigma[..r].to_vec(),
            v0: svd.v.leading_columns(r),
        }
    }

    /// `U0 Sigma0^{1/2}` and `V0 Sigma0^{1/2}`.
    pub fn balanced_factors(&self) -> FactorPair {
        // roundoff can leave a tiny negative value
        let root: Vec<f64> = self.sigma0.iter().map(|s| s.max(0.0).sqrt()).collect();
        FactorPair {
            x: self.u0.scale_columns(&root),
            y: self.v0.scale_columns(&root),
        }
    }
}

/// Rank-`r` truncated SVD. Dense Jacobi up to [`DENSE_SVD_LIMIT`], seeded
/// randomized subspace iteration above it.
pub fn truncated_svd(m: &DenseMatrix, r: usize) -> Result<TruncatedSvd> {
    if m.rows().max(m.cols()) <= DENSE_SVD_LIMIT {
        check_rank(m, r)?;
        Ok(TruncatedSvd::from_svd(full_svd(m)?, r))
    } else {
        randomized_svd(m, r)
    }
}

fn check_rank(m: &DenseMatrix, r: usize) -> Result<()> {
    if r == 0 || r > m.rows().min(m.cols()) {
        return param(format!("rank {r} invalid for a {:?} matrix", m.shape()));
    }
    Ok(())
}

/// Randomized range finder with oversampling and power iterations, followed
/// by an exact SVD of the small projected matrix.
pub fn randomized_svd(m: &DenseMatrix, r: usize) -> Result<TruncatedSvd> {
    check_rank(m, r)?;
    if !m.is_finite() {
        return param("SVD input has non-finite entries");
    }
    let k = (r + OVERSAMPLING).min(m.rows().min(m.cols()));
    let mut rng = ChaCha8Rng::seed_from_u64(SKETCH_SEED);
    let omega = DenseMatrix::from_fn(m.cols(), k, |_, _| StandardNormal.sample(&mut rng));
    let (mut q, _) = thin_qr(&m.matmul(&omega));
    for _ in 0..POWER_ITERS {
        let (z, _) = thin_qr(&m.t_matmul(&q));
        q = thin_qr(&m.matmul(&z)).0;
    }
    let small = full_svd(&q.t_matmul(m))?;
    let mut svd = Svd {
        u: q.matmul(&small.u),
        sigma: small.sigma,
        v: small.v,
    };
    fix_signs(&mut svd);
    Ok(TruncatedSvd::from_svd(svd, r))
}

fn check_mask(gt: &GroundTruth, mask: &ObservationMask) -> Result<()> {
    if gt.m_star.shape() != mask.dims() {
        return dim(format!(
            "mask is {:?} but the ground truth is {:?}",
            mask.dims(),
            gt.m_star.shape()
        ));
    }
    Ok(())
}

/// `p^{-1} P_Omega(M*)` as a dense matrix.
pub fn observed_matrix(gt: &GroundTruth, mask: &ObservationMask) -> Result<DenseMatrix> {
    check_mask(gt, mask)?;
    let inv_p = 1.0 / mask.p();
    let mut out = DenseMatrix::zeros(mask.dims().0, mask.dims().1);
    for (i, j) in mask.cells() {
        out[(i, j)] = gt.m_star[(i, j)] * inv_p;
    }
    Ok(out)
}

/// `(p^{-1} P_{Omega without l} + P_l)(M*)`: the observed matrix with the
/// selected line replaced by the exact line of `M*`.
pub fn loo_observed_matrix(
    gt: &GroundTruth,
    mask: &ObservationMask,
    sel: LooSelector,
) -> Result<DenseMatrix> {
    let mut out = observed_matrix(gt, mask)?;
    if sel.dims() != mask.dims() {
        return dim("selector and mask dimensions differ");
    }
    match sel.axis() {
        LooAxis::Row(t) => out.row_mut(t).copy_from_slice(gt.m_star.row(t)),
        LooAxis::Column(t) => out.set_column(t, &gt.m_star.column(t)),
    }
    Ok(out)
}

/// `X0 = U0 Sigma0^{1/2}`, `Y0 = V0 Sigma0^{1/2}` from the rank-`r` SVD of
/// the rescaled observations.
pub fn spectral_init(gt: &GroundTruth, mask: &ObservationMask, r: usize) -> Result<FactorPair> {
    let observed = observed_matrix(gt, mask)?;
    Ok(truncated_svd(&observed, r)?.balanced_factors())
}

/// Spectral initialization of the leave-one-out problem for `sel`.
pub fn loo_init(
    gt: &GroundTruth,
    mask: &ObservationMask,
    r: usize,
    sel: LooSelector,
) -> Result<FactorPair> {
    let observed = loo_observed_matrix(gt, mask, sel)?;
    Ok(truncated_svd(&observed, r)?.balanced_factors())
}
