//! Distances, alignments and diagnostics measured against the planted truth.

use crate::error::{dim, param, Error, Result};
use crate::matrix::{dot, DenseMatrix, FactorPair};
use crate::svd::{full_svd, inverse};

/// Rank-deficiency threshold for the GL(r) alignment precondition.
pub const DEGENERATE_SIGMA: f64 = 1e-10;

const GL_MAX_ITERS: usize = 200;
const GL_STEP_TOL: f64 = 1e-12;
const GL_MAX_HALVINGS: usize = 40;

/// An `r x r` alignment matrix with the distance it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Orthogonal for Procrustes, invertible for GL(r).
    pub matrix: DenseMatrix,
    pub residual: f64,
    /// Always true for Procrustes.
    pub converged: bool,
}

/// `||X Y^T - M*||_F / ||M*||_F`, without forming `X Y^T`.
pub fn relative_error(f: &FactorPair, m_star: &DenseMatrix) -> Result<f64> {
    if (f.d1(), f.d2()) != m_star.shape() {
        return dim(format!(
            "factors give {}x{}, target is {:?}",
            f.d1(),
            f.d2(),
            m_star.shape()
        ));
    }
    let denom = m_star.frobenius_norm();
    if denom == 0.0 {
        return param("relative error against a zero matrix");
    }
    let mut num = 0.0;
    for i in 0..f.d1() {
        let xi = f.x.row(i);
        for (j, &m) in m_star.row(i).iter().enumerate() {
            let d = dot(xi, f.y.row(j)) - m;
            num += d * d;
        }
    }
    Ok(num.sqrt() / denom)
}

fn check_pair(f: &FactorPair, target: &FactorPair) -> Result<()> {
    if f.x.shape() != target.x.shape() || f.y.shape() != target.y.shape() {
        return dim(format!(
            "cannot align {:?}/{:?} to {:?}/{:?}",
            f.x.shape(),
            f.y.shape(),
            target.x.shape(),
            target.y.shape()
        ));
    }
    Ok(())
}

/// `||F O - F_target||_F` for the stacked factors.
fn rotated_residual(f: &FactorPair, o: &DenseMatrix, target: &FactorPair) -> f64 {
    let ex = f.x.matmul(o).sub(&target.x).frobenius_norm();
    let ey = f.y.matmul(o).sub(&target.y).frobenius_norm();
    ex.hypot(ey)
}

/// Best orthogonal `O` minimizing `||F O - F_target||_F`.
pub fn procrustes_align(f: &FactorPair, target: &FactorPair) -> Result<AlignmentResult> {
    check_pair(f, target)?;
    let cross = f.x.t_matmul(&target.x).add(&f.y.t_matmul(&target.y));
    let svd = full_svd(&cross)?;
    let o = svd.u.matmul_t(&svd.v);
    Ok(AlignmentResult {
        residual: rotated_residual(f, &o, target),
        matrix: o,
        converged: true,
    })
}

fn sigma_min(m: &DenseMatrix) -> Result<f64> {
    Ok(full_svd(m)?.sigma.last().copied().unwrap_or(0.0))
}

/// `||X Q - X*||^2 + ||Y Q^{-T} - Y*||^2` from pre-transformed factors.
fn gl_value(xq: &DenseMatrix, yq: &DenseMatrix, target: &FactorPair) -> f64 {
    xq.sub(&target.x).frobenius_norm().powi(2) + yq.sub(&target.y).frobenius_norm().powi(2)
}

/// Symmetric eigendecomposition of a positive semidefinite matrix, read off
/// its SVD.
fn spd_eigen(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let svd = full_svd(a)?;
    Ok((svd.u, svd.sigma))
}

/// Solves `A D + D B = C` for symmetric positive definite `A`, `B`.
fn sylvester(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix> {
    let (pa, ea) = spd_eigen(a)?;
    let (pb, eb) = spd_eigen(b)?;
    let mut z = pa.t_matmul(c).matmul(&pb);
    for i in 0..z.rows() {
        for j in 0..z.cols() {
            z[(i, j)] /= ea[i] + eb[j];
        }
    }
    Ok(pa.matmul(&z).matmul_t(&pb))
}

/// Best invertible `Q` minimizing `||X Q - X*||^2 + ||Y Q^{-T} - Y*||^2`.
///
/// Damped Gauss-Newton on the first-order conditions, started from the
/// Procrustes rotation. Each step linearizes `Q -> Q (I + D)` and solves the
/// resulting Sylvester equation for `D`, then backtracks until the objective
/// decreases. The result is never worse than Procrustes.
pub fn gl_align(f: &FactorPair, target: &FactorPair) -> Result<AlignmentResult> {
    check_pair(f, target)?;
    let (sx, sy) = (sigma_min(&f.x)?, sigma_min(&f.y)?);
    if sx < DEGENERATE_SIGMA || sy < DEGENERATE_SIGMA {
        return Err(Error::AlignmentDegenerate(format!(
            "smallest singular values {sx:e} (X) and {sy:e} (Y)"
        )));
    }
    let start = procrustes_align(f, target)?;
    let r = f.rank();
    let eye = DenseMatrix::identity(r);

    let mut q = start.matrix.clone();
    let mut xq = f.x.matmul(&q);
    let mut yq = f.y.matmul(&q);
    let mut value = gl_value(&xq, &yq, target);
    let mut converged = false;

    for _ in 0..GL_MAX_ITERS {
        let ex = xq.sub(&target.x);
        let ey = yq.sub(&target.y);
        let rhs = ey.t_matmul(&yq).sub(&xq.t_matmul(&ex));
        let delta = sylvester(&xq.t_matmul(&xq), &yq.t_matmul(&yq), &rhs)?;
        let q_delta = q.matmul(&delta).frobenius_norm();
        if q_delta < GL_STEP_TOL {
            converged = true;
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..GL_MAX_HALVINGS {
            let mut m = eye.clone();
            m.axpy(t, &delta);
            if let Ok(m_inv) = inverse(&m) {
                let (xn, yn) = (xq.matmul(&m), yq.matmul(&m_inv.transpose()));
                let vn = gl_value(&xn, &yn, target);
                if vn < value {
                    accepted = Some((m, xn, yn, vn));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((m, xn, yn, vn)) => {
                q = q.matmul(&m);
                xq = xn;
                yq = yn;
                value = vn;
                if t * q_delta < GL_STEP_TOL {
                    converged = true;
                    break;
                }
            }
            None => {
                // no decrease left at working precision
                converged = q_delta <= 1e-6 * (1.0 + q.frobenius_norm());
                break;
            }
        }
    }

    let residual = match inverse(&q) {
        Ok(q_inv) => {
            let ex = f.x.matmul(&q).sub(&target.x).frobenius_norm();
            let ey =
                f.y.matmul(&q_inv.transpose())
                    .sub(&target.y)
                    .frobenius_norm();
            ex.hypot(ey)
        }
        Err(_) => f64::INFINITY,
    };
    if residual.is_finite() && residual <= start.residual {
        Ok(AlignmentResult {
            matrix: q,
            residual,
            converged,
        })
    } else {
        Ok(AlignmentResult { converged, ..start })
    }
}

/// Distance to the target up to GL(r) ambiguity: the smaller of the GL(r)
/// and Procrustes residuals.
pub fn dist(f: &FactorPair, target: &FactorPair) -> Result<f64> {
    let gl = gl_align(f, target)?;
    let pr = procrustes_align(f, target)?;
    Ok(gl.residual.min(pr.residual))
}

/// `||X^T X - Y^T Y||_F`.
pub fn balancing_norm(f: &FactorPair) -> f64 {
    f.x.t_matmul(&f.x).sub(&f.y.t_matmul(&f.y)).frobenius_norm()
}

/// Smallest `mu` with `||U||_{2,inf} <= sqrt(mu r / d1)` and
/// `||V||_{2,inf} <= sqrt(mu r / d2)`.
pub fn incoherence(u: &DenseMatrix, v: &DenseMatrix) -> Result<f64> {
    let r = u.cols();
    if r == 0 || v.cols() != r {
        return dim(format!(
            "incoherence needs matching nonzero ranks, got {} and {}",
            u.cols(),
            v.cols()
        ));
    }
    for (name, m) in [("U", u), ("V", v)] {
        let gram_err = m.t_matmul(m).sub(&DenseMatrix::identity(r)).max_abs();
        if !(gram_err <= 1e-8) {
            return param(format!(
                "{name} does not have orthonormal columns (Gram error {gram_err:e})"
            ));
        }
    }
    let coeff = |m: &DenseMatrix| m.rows() as f64 / r as f64 * m.two_inf_norm().powi(2);
    Ok(coeff(u).max(coeff(v)))
}
