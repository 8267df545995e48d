#![allow(dead_code)]

use kore_core::Matrix;

/// Cyclic two-sided Jacobi eigen-decomposition of a symmetric matrix.
/// Returns eigenvalues ascending and the matching eigenvectors as columns.
pub fn sym_eigen(m: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = idx.iter().map(|&i| a[i][i]).collect();
    let vecs = idx.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

/// Singular values descending, from the eigenvalues of `MᵀM` or `MMᵀ`.
pub fn singular_values_oracle(m: &Matrix) -> Vec<f64> {
    let g = if m.rows() <= m.cols() { m.gram() } else { m.transpose().gram() };
    let (vals, _) = sym_eigen(&g);
    vals.into_iter().rev().map(|l| l.max(0.0).sqrt()).collect()
}

pub fn orthogonality_error(q: &Matrix) -> f64 {
    let qtq = q.transpose().matmul(q).unwrap();
    qtq.sub(&Matrix::identity(q.cols())).unwrap().max_abs()
}
