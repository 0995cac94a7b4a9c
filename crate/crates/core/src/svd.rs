//! Dense decompositions: one-sided Jacobi SVD, Householder QR and small
//! square solves.

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};

const MAX_SWEEPS: usize = 80;

/// Thin SVD `m = U diag(sigma) V^T` with `k = min(rows, cols)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `rows x k`, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonnegative, descending.
    pub sigma: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: DenseMatrix,
}

impl Svd {
    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.u.scale_columns(&self.sigma).matmul_t(&self.v)
    }
}

/// Full (thin) SVD by one-sided Jacobi rotations.
///
/// Sign convention: in every left singular vector the entry of largest
/// magnitude (lowest index on ties) is nonnegative; the matching right vector
/// is flipped with it.
pub fn full_svd(m: &DenseMatrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::Parameter("SVD input has non-finite entries".into()));
    }
    let mut svd = if m.rows() >= m.cols() {
        jacobi_tall(m)?
    } else {
        let t = jacobi_tall(&m.transpose())?;
        Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    };
    fix_signs(&mut svd);
    Ok(svd)
}

/// Jacobi on a matrix with `rows >= cols`: orthogonalize its columns.
fn jacobi_tall(m: &DenseMatrix) -> Result<Svd> {
    let (len, n) = m.shape();
    // rows of `w` are the columns of `m`; rows of `vt` are the columns of V
    let mut w = m.transpose();
    let mut vt = DenseMatrix::identity(n);
    let tol = f64::EPSILON * (len.max(1) as f64);
    // columns this small are roundoff left over from a rank deficiency;
    // their direction is noise and cannot be orthogonalized further
    let negligible = (tol * m.frobenius_norm()).powi(2);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let wp = w.row(p);
                    let wq = w.row(q);
                    (dot(wp, wp), dot(wq, wq), dot(wp, wq))
                };
                if gamma == 0.0
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                    || alpha.min(beta) <= negligible
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Decomposition(format!(
            "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = (0..n).map(|k| dot(w.row(k), w.row(k)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep index order
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());

    let mut u = DenseMatrix::zeros(len, n);
    let mut v = DenseMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        for i in 0..n {
            v[(i, dst)] = vt[(src, i)];
        }
        if s > f64::MIN_POSITIVE && s * s > negligible {
            for i in 0..len {
                u[(i, dst)] = w[(src, i)] / s;
            }
        } else {
            missing.push(dst);
        }
    }
    complete_basis(&mut u, &missing);
    Ok(Svd { u, sigma, v })
}

fn rotate_rows(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to all other
/// columns, drawing candidates from the standard basis.
fn complete_basis(u: &mut DenseMatrix, missing: &[usize]) {
    let (len, k) = u.shape();
    for &col in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..len {
            let mut cand = vec![0.0; len];
            cand[e] = 1.0;
            for _ in 0..2 {
                // columns still awaiting completion are zero and project to nothing
                for other in (0..k).filter(|&c| c != col) {
                    let uc = u.column(other);
                    let proj = dot(&uc, &cand);
                    cand.iter_mut().zip(&uc).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| nrm > *b + 1e-12) {
                best = Some((nrm, cand));
            }
            if nrm > 0.7 {
                break;
            }
        }
        let (nrm, cand) = best.expect("nonempty basis");
        let unit: Vec<f64> = cand.iter().map(|x| x / nrm).collect();
        u.set_column(col, &unit);
    }
}

pub(crate) fn fix_signs(svd: &mut Svd) {
    let k = svd.sigma.len();
    for col in 0..k {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..svd.u.rows() {
            let a = svd.u[(i, col)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if svd.u[(best, col)] < 0.0 {
            for i in 0..svd.u.rows() {
                svd.u[(i, col)] = -svd.u[(i, col)];
            }
            for i in 0..svd.v.rows() {
                svd.v[(i, col)] = -svd.v[(i, col)];
            }
        }
    }
}

/// Thin QR of a tall matrix by Householder reflections: `Q` is
/// `rows x cols` with orthonormal columns and `R` is upper triangular.
pub fn thin_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = a.shape();
    assert!(m >= n, "thin_qr needs rows >= cols");
    // columns of `a` as rows for contiguous access
    let mut cols = a.transpose();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let x = &cols.row(j)[j..];
        let norm_x = dot(x, x).sqrt();
        let mut v = x.to_vec();
        if norm_x == 0.0 {
            reflectors.push(v.iter().map(|_| 0.0).collect());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm_x } else { norm_x };
        v[0] -= alpha;
        let vn = dot(&v, &v).sqrt();
        if vn == 0.0 {
            reflectors.push(vec![0.0; v.len()]);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        for c in j..n {
            let col = &mut cols.row_mut(c)[j..];
            let proj = 2.0 * dot(&v, col);
            col.iter_mut().zip(&v).for_each(|(x, y)| *x -= proj * y);
        }
        reflectors.push(v);
    }
    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            r[(i, j)] = cols[(j, i)];
        }
    }
    // apply reflectors in reverse to the leading identity columns
    let mut q_cols = DenseMatrix::zeros(n, m);
    for j in 0..n {
        q_cols[(j, j)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        for c in 0..n {
            let col = &mut q_cols.row_mut(c)[j..];
            let proj = 2.0 * dot(v, col);
            if proj != 0.0 {
                col.iter_mut().zip(v).for_each(|(x, y)| *x -= proj * y);
            }
        }
    }
    (q_cols.transpose(), r)
}

/// Inverse of a square matrix by Gauss-Jordan elimination with partial
/// pivoting. Fails when a pivot vanishes.
pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "inverse of a non-square matrix");
    let mut work = a.clone();
    let mut inv = DenseMatrix::identity(n);
    let scale = a.max_abs();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| work[(i, col)].abs().total_cmp(&work[(j, col)].abs()))
            .unwrap();
        let pv = work[(pivot, col)];
        if pv.abs() <= scale * 1e-300 || pv == 0.0 {
            return Err(Error::Decomposition("singular matrix".into()));
        }
        if pivot != col {
            swap_rows(&mut work, pivot, col);
            swap_rows(&mut inv, pivot, col);
        }
        let inv_p = 1.0 / work[(col, col)];
        work.row_mut(col).iter_mut().for_each(|x| *x *= inv_p);
        inv.row_mut(col).iter_mut().for_each(|x| *x *= inv_p);
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = work[(row, col)];
            if factor == 0.0 {
                continue;
            }
            for c in 0..n {
                let w = work[(col, c)];
                work[(row, c)] -= factor * w;
                let v = inv[(col, c)];
                inv[(row, c)] -= factor * v;
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut DenseMatrix, a: usize, b: usize) {
    for c in 0..m.cols() {
        let t = m[(a, c)];
        m[(a, c)] = m[(b, c)];
        m[(b, c)] = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_error(q: &DenseMatrix) -> f64 {
        q.t_matmul(q)
            .sub(&DenseMatrix::identity(q.cols()))
            .max_abs()
    }

    #[test]
    fn diagonal_values() {
        let svd = full_svd(&DenseMatrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(svd.sigma, vec![3.0, 1.0]);
        let svd = full_svd(&DenseMatrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(svd.sigma, vec![3.0, 1.0]);
    }

    #[test]
    fn zero_matrix_has_orthonormal_factors() {
        let svd = full_svd(&DenseMatrix::zeros(4, 3)).unwrap();
        assert!(svd.sigma.iter().all(|&s| s == 0.0));
        assert!(orthonormality_error(&svd.u) < 1e-14);
        assert!(orthonormality_error(&svd.v) < 1e-14);
    }

    #[test]
    fn reconstructs_random_tall_and_wide() {
        for (rows, cols, seed) in [(12, 9, 1), (9, 12, 2), (30, 1, 3), (1, 7, 4)] {
            let m = random(rows, cols, seed);
            let svd = full_svd(&m).unwrap();
            let resid = svd.reconstruct().sub(&m).frobenius_norm();
            assert!(resid < 1e-10 * m.frobenius_norm(), "{rows}x{cols}: {resid}");
            assert!(orthonormality_error(&svd.u) < 1e-12);
            assert!(orthonormality_error(&svd.v) < 1e-12);
            assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_completion() {
        // rank one, 5x4
        let u = random(5, 1, 7);
        let v = random(4, 1, 8);
        let m = u.matmul_t(&v);
        let svd = full_svd(&m).unwrap();
        assert!(orthonormality_error(&svd.u) < 1e-10);
        assert!(svd.reconstruct().sub(&m).frobenius_norm() < 1e-12);
    }

    #[test]
    fn sign_convention_holds() {
        let m = random(7, 5, 11);
        let svd = full_svd(&m).unwrap();
        for c in 0..5 {
            let col = svd.u.column(c);
            let (idx, _) = col.iter().enumerate().fold((0, -1.0), |(bi, bv), (i, &v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            });
            assert!(col[idx] >= 0.0);
        }
        let negated = full_svd(&m.scale(-1.0)).unwrap();
        assert_eq!(negated.u, svd.u);
    }

    #[test]
    fn deterministic() {
        let m = random(15, 11, 5);
        assert_eq!(full_svd(&m).unwrap(), full_svd(&m).unwrap());
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = DenseMatrix::zeros(2, 2);
        m[(0, 1)] = f64::INFINITY;
        assert!(full_svd(&m).is_err());
    }

    #[test]
    fn qr_factors() {
        let a = random(10, 4, 21);
        let (q, r) = thin_qr(&a);
        assert!(orthonormality_error(&q) < 1e-13);
        assert!(q.matmul(&r).sub(&a).max_abs() < 1e-13);
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn inverse_roundtrip_and_singular() {
        let a = random(5, 5, 31);
        let inv = inverse(&a).unwrap();
        assert!(a.matmul(&inv).sub(&DenseMatrix::identity(5)).max_abs() < 1e-10);
        let s = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(inverse(&s).is_err());
    }
}
