//! Small dense linear algebra: vector helpers and a cyclic Jacobi
//! eigensolver for the symmetric matrices used by the topology module.
//!
//! Agent counts are desk-scale (m <= a few dozen), so a full dense symmetric
//! decomposition is the right tool; no iterative or blocked methods.

use crate::Scalar;

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Squared Euclidean norm.
#[inline]
pub fn norm_sq<F: Scalar>(a: &[F]) -> F {
    dot(a, a)
}

#[inline]
pub fn norm<F: Scalar>(a: &[F]) -> F {
    norm_sq(a).sqrt()
}

/// `a - b`.
pub fn sub<F: Scalar>(a: &[F], b: &[F]) -> Vec<F> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// `a += s * b`.
pub fn axpy<F: Scalar>(a: &mut [F], s: F, b: &[F]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, &y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

pub fn scale<F: Scalar>(a: &mut [F], s: F) {
    for x in a.iter_mut() {
        *x *= s;
    }
}

/// Mean of `rows` (all the same length, at least one row).
pub fn mean_rows<F: Scalar>(rows: &[Vec<F>]) -> Vec<F> {
    assert!(!rows.is_empty());
    let d = rows[0].len();
    let mut out = vec![F::zero(); d];
    for r in rows {
        debug_assert_eq!(r.len(), d);
        for (o, &v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let inv = F::one() / F::from_usize(rows.len()).unwrap();
    scale(&mut out, inv);
    out
}

/// Eigenvalues of a symmetric `n x n` matrix (row-major), sorted descending.
///
/// Cyclic Jacobi rotations on a working copy; quadratic convergence makes a
/// fixed sweep cap safe at these sizes. Symmetry is the caller's contract
/// (the matrix is symmetrized before iterating so near-symmetric inputs do
/// not poison the rotations).
pub fn symmetric_eigenvalues<F: Scalar>(a: &[F], n: usize) -> Vec<F> {
    assert_eq!(a.len(), n * n, "matrix shape mismatch");
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![a[0]];
    }
    let mut m: Vec<F> = a.to_vec();
    let half = F::lit(0.5);
    for p in 0..n {
        for q in (p + 1)..n {
            let s = half * (m[p * n + q] + m[q * n + p]);
            m[p * n + q] = s;
            m[q * n + p] = s;
        }
    }

    let frob = norm(&m);
    let tol = F::epsilon() * frob.max(F::one());
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let mut off = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= F::epsilon() * frob {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (F::lit(2.0) * apq);
                let t = {
                    let denom = theta.abs() + (theta * theta + F::one()).sqrt();
                    if theta >= F::zero() {
                        F::one() / denom
                    } else {
                        -F::one() / denom
                    }
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q.
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[p * n + k] = m[k * n + p];
                    m[k * n + q] = c * akq + s * akp;
                    m[q * n + k] = m[k * n + q];
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = F::zero();
                m[q * n + p] = F::zero();
            }
        }
    }

    let mut ev: Vec<F> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let a = [3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0];
        let ev = symmetric_eigenvalues(&a, 3);
        assert_close(ev[0], 3.0, 1e-14);
        assert_close(ev[1], 2.0, 1e-14);
        assert_close(ev[2], -1.0, 1e-14);
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let a = [2.0, 1.0, 1.0, 2.0];
        let ev = symmetric_eigenvalues(&a, 2);
        assert_close(ev[0], 3.0, 1e-14);
        assert_close(ev[1], 1.0, 1e-14);
    }

    #[test]
    fn matches_nalgebra_on_random_symmetric() {
        use crate::rng::Stream;
        let mut s = Stream::keyed(&[314159]);
        for n in 2..=12usize {
            for _ in 0..8 {
                let mut a = vec![0.0f64; n * n];
                for i in 0..n {
                    for j in i..n {
                        let v = s.normal();
                        a[i * n + j] = v;
                        a[j * n + i] = v;
                    }
                }
                let mine = symmetric_eigenvalues(&a, n);
                let na = nalgebra::DMatrix::from_row_slice(n, n, &a);
                let mut theirs: Vec<f64> =
                    na.symmetric_eigen().eigenvalues.iter().copied().collect();
                theirs.sort_by(|x, y| y.partial_cmp(x).unwrap());
                for (m, t) in mine.iter().zip(&theirs) {
                    assert_close(*m, *t, 1e-10);
                }
            }
        }
    }

    #[test]
    fn mean_rows_simple() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(mean_rows(&rows), vec![2.0, 3.0]);
    }

    #[test]
    fn works_in_f32() {
        let a = [2.0f32, 1.0, 1.0, 2.0];
        let ev = symmetric_eigenvalues(&a, 2);
        assert!((ev[0] - 3.0).abs() < 1e-5);
        assert!((ev[1] - 1.0).abs() < 1e-5);
    }
}
