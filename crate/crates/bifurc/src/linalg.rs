//! Small dense linear algebra, generic over the differentiation scalar.
//!
//! Everything downstream (determinants, bordered Newton systems, nullspace
//! tangents, deformation solves) runs on matrices of side at most N+1 where N
//! is the model state dimension, so these are straightforward unblocked
//! routines. They are generic over [`Scalar`] so the same factorization code
//! propagates dual perturbations exactly; pivot selection and rank checks
//! compare innermost real parts only.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_vec(&self, c: usize) -> Vec<S> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    pub fn transpose(&self) -> Mat<S> {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.at(r, c));
            }
        }
        t
    }

    /// self · other
    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                for j in 0..other.cols {
                    *out.at_mut(i, j) += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.all_finite())
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[inline]
pub fn norm2<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// LU factorization with partial pivoting, in place.
///
/// Returns the permutation sign, or `None` if a pivot is exactly zero in its
/// real part (a numerically singular matrix).
fn lu_factor_in_place<S: Scalar>(a: &mut Mat<S>, perm: &mut Vec<usize>) -> Option<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    perm.clear();
    perm.extend(0..n);
    let mut sign = 1.0;
    for k in 0..n {
        // pivot on largest innermost real magnitude
        let mut p = k;
        let mut best = a.at(k, k).value().abs();
        for r in (k + 1)..n {
            let v = a.at(r, k).value().abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 {
            return None;
        }
        if p != k {
            for c in 0..n {
                let tmp = a.at(k, c);
                a.set(k, c, a.at(p, c));
                a.set(p, c, tmp);
            }
            perm.swap(k, p);
            sign = -sign;
        }
        let piv = a.at(k, k);
        for r in (k + 1)..n {
            let m = a.at(r, k) / piv;
            a.set(r, k, m);
            for c in (k + 1)..n {
                let v = a.at(r, c) - m * a.at(k, c);
                a.set(r, c, v);
            }
        }
    }
    Some(sign)
}

/// Determinant via LU with partial pivoting.
///
/// A zero pivot (in the innermost real part) is only fatal when rows remain
/// below it — that means real rank ≤ n−2, where the determinant of a
/// perturbed matrix vanishes to first order as well, so exact zero is the
/// right answer. A zero pivot in the last position is kept: the real part of
/// the product is zero but the perturbation parts survive, which is exactly
/// what determinant derivatives at a simple fold need.
pub fn lu_det<S: Scalar>(a: &Mat<S>) -> S {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut lu = a.clone();
    let mut sign = 1.0;
    for k in 0..n {
        let mut p = k;
        let mut best = lu.at(k, k).value().abs();
        for r in (k + 1)..n {
            let v = lu.at(r, k).value().abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 {
            if k + 1 < n {
                return S::zero();
            }
            break; // nothing left to eliminate
        }
        if p != k {
            for c in 0..n {
                let tmp = lu.at(k, c);
                lu.set(k, c, lu.at(p, c));
                lu.set(p, c, tmp);
            }
            sign = -sign;
        }
        let piv = lu.at(k, k);
        for r in (k + 1)..n {
            let m = lu.at(r, k) / piv;
            for c in (k + 1)..n {
                let v = lu.at(r, c) - m * lu.at(k, c);
                lu.set(r, c, v);
            }
        }
    }
    let mut det = S::from_f64(sign);
    for k in 0..n {
        det *= lu.at(k, k);
    }
    det
}

/// Solve A·x = b for square A.
pub fn solve<S: Scalar>(a: &Mat<S>, b: &[S]) -> Result<Vec<S>> {
    let cols: Vec<Vec<S>> = vec![b.to_vec()];
    let x = solve_multi(a, &cols)?;
    Ok(x.into_iter().next().unwrap())
}

/// Solve A·X = B for square A and several right-hand-side columns.
pub fn solve_multi<S: Scalar>(a: &Mat<S>, bs: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm = Vec::new();
    if lu_factor_in_place(&mut lu, &mut perm).is_none() {
        return Err(Error::SingularSystem {
            context: format!("{n}x{n} linear solve"),
        });
    }
    let mut out = Vec::with_capacity(bs.len());
    for b in bs {
        assert_eq!(b.len(), n);
        // apply permutation
        let mut x: Vec<S> = perm.iter().map(|&i| b[i]).collect();
        // forward substitution (unit lower)
        for r in 1..n {
            for c in 0..r {
                let t = lu.at(r, c) * x[c];
                x[r] -= t;
            }
        }
        // back substitution
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                let t = lu.at(r, c) * x[c];
                x[r] -= t;
            }
            x[r] = x[r] / lu.at(r, r);
        }
        out.push(x);
    }
    Ok(out)
}

/// Unit-norm nullspace vector of a full-rank wide matrix J (n × (n+1)).
///
/// Computed from the Householder QR of Jᵀ: the last column of Q spans the
/// orthogonal complement of the row space of J. The sign of the result is an
/// artifact of the reflection sign convention; callers orient it.
///
/// Fails with a degenerate-geometry error when the ratio of the smallest to
/// largest |R_kk| drops below `1e-12` (rank deficiency).
pub fn qr_nullspace<S: Scalar>(j: &Mat<S>) -> Result<Vec<S>> {
    let n = j.rows();
    let m = j.cols();
    assert_eq!(m, n + 1, "expected an n x (n+1) matrix");
    let mut a = j.transpose(); // (n+1) x n
    let mut vs: Vec<Vec<S>> = Vec::with_capacity(n);
    let mut rdiag: Vec<f64> = Vec::with_capacity(n);
    for k in 0..n {
        // Householder vector for column k, rows k..
        let mut v: Vec<S> = (k..m).map(|r| a.at(r, k)).collect();
        let alpha = norm2(&v);
        if alpha.value() == 0.0 {
            rdiag.push(0.0);
            vs.push(v);
            continue;
        }
        let sign = if v[0].value() >= 0.0 { 1.0 } else { -1.0 };
        v[0] += S::from_f64(sign) * alpha;
        let vnorm2 = dot(&v, &v);
        // apply H = I - 2 v vᵀ / (vᵀv) to remaining columns
        for c in k..n {
            let mut proj = S::zero();
            for (i, r) in (k..m).enumerate() {
                proj += v[i] * a.at(r, c);
            }
            let coef = S::from_f64(2.0) * proj / vnorm2;
            for (i, r) in (k..m).enumerate() {
                let t = coef * v[i];
                *a.at_mut(r, c) -= t;
            }
        }
        rdiag.push(a.at(k, k).value().abs());
        vs.push(v);
    }
    let rmax = rdiag.iter().cloned().fold(0.0f64, f64::max);
    let rmin = rdiag.iter().cloned().fold(f64::INFINITY, f64::min);
    if rmax == 0.0 || rmin < 1e-12 * rmax {
        return Err(Error::DegenerateGeometry {
            context: format!(
                "rank-deficient Jacobian: |R| diagonal range [{rmin:.3e}, {rmax:.3e}]"
            ),
        });
    }
    // q = H_1 ... H_n e_{n+1} (reflections applied in reverse)
    let mut q = vec![S::zero(); m];
    q[m - 1] = S::one();
    for k in (0..n).rev() {
        let v = &vs[k];
        let vnorm2 = dot(v, v);
        if vnorm2.value() == 0.0 {
            continue;
        }
        let mut proj = S::zero();
        for (i, r) in (k..m).enumerate() {
            proj += v[i] * q[r];
        }
        let coef = S::from_f64(2.0) * proj / vnorm2;
        for (i, r) in (k..m).enumerate() {
            q[r] -= coef * v[i];
        }
    }
    // orthonormal by construction; renormalize to shed rounding
    let nrm = norm2(&q);
    for x in q.iter_mut() {
        *x = *x / nrm;
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;

    #[test]
    fn det_small_cases() {
        let a = Mat::from_rows(vec![vec![-1.0, 0.0], vec![0.0, -2.0]]);
        assert!((lu_det(&a) - 2.0).abs() < 1e-15);
        let b = Mat::from_rows(vec![
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ]);
        // det = 2(12-1) - 1(4-0) = 18
        assert!((lu_det(&b) - 18.0).abs() < 1e-12);
    }

    #[test]
    fn det_singular_is_zero() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(lu_det(&a), 0.0);
    }

    #[test]
    fn det_derivative_via_dual_matches_jacobi_formula() {
        // d/dt det(A + tB) at t=0 equals tr(adj(A)·B); check on a 2x2.
        let a = [[3.0, 1.0], [2.0, 5.0]];
        let b = [[1.0, -1.0], [0.5, 2.0]];
        let mut m = Mat::zeros(2, 2);
        for r in 0..2 {
            for c in 0..2 {
                m.set(r, c, Dual::seeded(a[r][c], b[r][c]));
            }
        }
        let d = lu_det(&m);
        // adj(A) = [[5,-1],[-2,3]]; tr(adj(A)·B) = 5·1 + (-1)·0.5 + (-2)·(-1) + 3·2 = 12.5
        assert!((d.re - 13.0).abs() < 1e-13);
        assert!((d.du - 12.5).abs() < 1e-12);
    }

    #[test]
    fn solve_roundtrip() {
        let a = Mat::from_rows(vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 2.0],
            vec![0.0, 2.0, 5.0],
        ]);
        let x_true = vec![1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3).map(|r| dot(a.row(r), &x_true)).collect();
        let x = solve(&a, &b).unwrap();
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn nullspace_is_orthogonal_to_rows() {
        let j = Mat::from_rows(vec![
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.0, -1.0],
        ]);
        let q = qr_nullspace(&j).unwrap();
        for r in 0..2 {
            assert!(dot(j.row(r), &q).abs() < 1e-13);
        }
        assert!((norm2(&q) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn nullspace_rank_deficiency_detected() {
        let j = Mat::from_rows(vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 6.0],
        ]);
        assert!(qr_nullspace(&j).is_err());
    }
}
