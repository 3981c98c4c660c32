//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use crate::scalar::{dot, Scalar};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `A = U diag(s) Vᵀ` of an `n × d`
/// matrix, with `r = min(n, d)` components sorted by decreasing singular
/// value. `u` holds `r` columns of length `n`, `v` holds `r` columns of
/// length `d`. Columns belonging to zero singular values are left as zero
/// vectors when they cannot be recovered from the data.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub s: Vec<T>,
    pub u: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// Orthogonalizes the columns of `cols` in place and returns the
/// accumulated rotation, stored as columns.
fn jacobi_orthogonalize<T: Scalar>(cols: &mut [Vec<T>]) -> Vec<Vec<T>> {
    let k = cols.len();
    let mut rot: Vec<Vec<T>> = (0..k)
        .map(|i| {
            let mut e = vec![T::zero(); k];
            e[i] = T::one();
            e
        })
        .collect();
    let tol = T::epsilon() * T::from_count(cols.first().map_or(1, |c| c.len()).max(1)).sqrt();
    let mut norms: Vec<T> = cols.iter().map(|c| dot(c, c)).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(cols, p, q, c, s);
                rotate(&mut rot, p, q, c, s);
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        if !rotated {
            break;
        }
    }
    rot
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

fn unit_or_zero<T: Scalar>(col: &[T]) -> (T, Vec<T>) {
    let n = dot(col, col).sqrt();
    if n == T::zero() {
        (T::zero(), vec![T::zero(); col.len()])
    } else {
        (n, col.iter().map(|&x| x / n).collect())
    }
}

/// Thin SVD of the row-major matrix `rows` (`n` rows of length `d`).
pub fn thin_svd<T: Scalar>(rows: &[Vec<T>]) -> Svd<T> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut comps: Vec<(T, Vec<T>, Vec<T>)> = if n >= d {
        // Columns of A; rotations accumulate V.
        let mut cols: Vec<Vec<T>> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        let v = jacobi_orthogonalize(&mut cols);
        cols.iter()
            .zip(v)
            .map(|(c, vj)| {
                let (s, u) = unit_or_zero(c);
                (s, u, vj)
            })
            .collect()
    } else {
        // Columns of Aᵀ; rotations accumulate U.
        let mut cols: Vec<Vec<T>> = rows.to_vec();
        let u = jacobi_orthogonalize(&mut cols);
        cols.iter()
            .zip(u)
            .map(|(c, uj)| {
                let (s, v) = unit_or_zero(c);
                (s, uj, v)
            })
            .collect()
    };
    comps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut svd = Svd {
        s: Vec::with_capacity(comps.len()),
        u: Vec::with_capacity(comps.len()),
        v: Vec::with_capacity(comps.len()),
    };
    for (s, u, v) in comps {
        svd.s.push(s);
        svd.u.push(u);
        svd.v.push(v);
    }
    svd
}

/// Unit vector orthogonal to every vector in `basis` (assumed orthonormal).
pub fn orthogonal_complement_vector<T: Scalar>(basis: &[Vec<T>], d: usize) -> Vec<T> {
    for k in 0..d {
        let mut e = vec![T::zero(); d];
        e[k] = T::one();
        for b in basis {
            let proj = dot(&e, b);
            for (x, &y) in e.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let n = dot(&e, &e).sqrt();
        if n > T::lit(0.5) {
            return e.into_iter().map(|x| x / n).collect();
        }
    }
    vec![T::zero(); d]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::needless_range_loop)]
    fn reconstruct(svd: &Svd<f64>, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; n];
        for k in 0..svd.s.len() {
            for i in 0..n {
                for j in 0..d {
                    out[i][j] += svd.s[k] * svd.u[k][i] * svd.v[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn reconstructs_tall_and_wide_matrices() {
        let tall = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 7.0]];
        let wide = vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -1.0, 2.0, 0.0]];
        for m in [tall, wide] {
            let (n, d) = (m.len(), m[0].len());
            let svd = thin_svd(&m);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
            let r = reconstruct(&svd, n, d);
            for i in 0..n {
                for j in 0..d {
                    assert!((r[i][j] - m[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diagonal_singular_values() {
        let svd = thin_svd(&[vec![3.0f64, 0.0], vec![0.0, -4.0]]);
        assert!((svd.s[0] - 4.0).abs() < 1e-15 && (svd.s[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn complement_is_orthonormal() {
        let b = vec![vec![0.6f64, 0.8, 0.0]];
        let c = orthogonal_complement_vector(&b, 3);
        assert!(dot(&c, &b[0]).abs() < 1e-15);
        assert!((dot(&c, &c) - 1.0).abs() < 1e-15);
    }
}
