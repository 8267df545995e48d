//! One-sided (Hestenes) Jacobi SVD.
//!
//! Column pairs of a working copy are rotated until every pair is orthogonal
//! to within [`JACOBI_TOL`] relative to the product of their norms. The
//! accumulated rotations form `V`, the column norms are the singular values
//! and the normalized columns are `U`. Wide inputs are handled by
//! decomposing the transpose.

use super::Matrix;
use crate::error::{KoreError, Result};

/// Relative off-diagonal threshold `|a_p·a_q| ≤ tol·‖a_p‖‖a_q‖`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Columns with a norm below this are treated as exactly zero; their left
/// singular vectors are completed to an orthonormal basis.
const ZERO_COLUMN: f64 = 1e-290;

/// Thin SVD `m = u · diag(sigma) · vt` with `k = min(rows, cols)`.
///
/// `sigma` is descending. For every column of `u`, the entry of largest
/// magnitude (lowest index on ties) is non-negative; the matching row of `vt`
/// carries the same sign flip.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(&self.sigma)
    }

    /// `u · diag(sigma) · vt` with a substitute singular value list.
    pub fn reconstruct_with(&self, sigma: &[f64]) -> Matrix {
        let (m, n, k) = (self.u.rows(), self.vt.cols(), self.k());
        debug_assert_eq!(sigma.len(), k);
        let mut out = vec![0.0; m * n];
        for (r, &s) in sigma.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let vrow = self.vt.row(r);
            for i in 0..m {
                let f = self.u.get(i, r) * s;
                if f == 0.0 {
                    continue;
                }
                for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(vrow) {
                    *o += f * v;
                }
            }
        }
        Matrix::from_parts(m, n, out)
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    svd_with_sweep_cap(m, JACOBI_MAX_SWEEPS)
}

/// [`svd`] with an explicit sweep cap.
pub fn svd_with_sweep_cap(m: &Matrix, max_sweeps: usize) -> Result<SvdResult> {
    if m.is_empty() {
        return Err(KoreError::shape("svd", "empty matrix"));
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(KoreError::NonFinite("svd"));
    }
    if m.rows() >= m.cols() {
        let (u, sigma, v) = tall(m, max_sweeps)?;
        Ok(finish(u, sigma, v))
    } else {
        // m = (mᵀ)ᵀ = (U Σ Vᵀ)ᵀ = V Σ Uᵀ
        let (u, sigma, v) = tall(&m.transpose(), max_sweeps)?;
        Ok(finish(v, sigma, u))
    }
}

/// Column-major working storage for the tall case. Returns `(u_cols, sigma, v_cols)`
/// sorted by descending sigma with orthonormal `u_cols`.
#[allow(clippy::type_complexity)]
fn tall(m: &Matrix, max_sweeps: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let (rows, n) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = n < 2;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(KoreError::NonConvergence { sweeps: max_sweeps });
    }

    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &j in &order {
        let s = norms[j];
        if s < ZERO_COLUMN {
            sigma.push(0.0);
            u_cols.push(None);
        } else {
            sigma.push(s);
            u_cols.push(Some(a[j].iter().map(|x| x / s).collect()));
        }
        v_cols.push(std::mem::take(&mut v[j]));
    }
    let u_cols = complete_basis(u_cols, rows);
    Ok((u_cols, sigma, v_cols))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fills `None` slots with unit vectors orthogonal to every other column,
/// picked from the standard basis by largest residual (lowest index on ties)
/// and orthogonalized with two Gram–Schmidt passes.
fn complete_basis(cols: Vec<Option<Vec<f64>>>, dim: usize) -> Vec<Vec<f64>> {
    if cols.iter().all(Option::is_some) {
        return cols.into_iter().map(Option::unwrap).collect();
    }
    let mut basis: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut out = Vec::with_capacity(cols.len());
    for slot in cols {
        match slot {
            Some(c) => out.push(c),
            None => {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for e in 0..dim {
                    let mut cand = vec![0.0; dim];
                    cand[e] = 1.0;
                    for _ in 0..2 {
                        for b in &basis {
                            let proj = dot(&cand, b);
                            for (c, bv) in cand.iter_mut().zip(b) {
                                *c -= proj * bv;
                            }
                        }
                    }
                    let norm = dot(&cand, &cand).sqrt();
                    if best.as_ref().is_none_or(|(bn, _)| norm > *bn) {
                        best = Some((norm, cand));
                    }
                }
                let (norm, mut cand) = best.expect("dim > 0");
                for c in &mut cand {
                    *c /= norm;
                }
                basis.push(cand.clone());
                out.push(cand);
            }
        }
    }
    out
}

fn finish(u_cols: Vec<Vec<f64>>, sigma: Vec<f64>, v_cols: Vec<Vec<f64>>) -> SvdResult {
    let k = sigma.len();
    let m = u_cols.first().map_or(0, Vec::len);
    let n = v_cols.first().map_or(0, Vec::len);
    let mut u = Matrix::from_fn(m, k, |i, j| u_cols[j][i]);
    let mut vt = Matrix::from_fn(k, n, |i, j| v_cols[i][j]);
    for j in 0..k {
        let mut best = 0;
        for i in 1..m {
            if u.get(i, j).abs() > u.get(best, j).abs() {
                best = i;
            }
        }
        if u.get(best, j) < 0.0 {
            for i in 0..m {
                u.set(i, j, -u.get(i, j));
            }
            for c in 0..n {
                vt.set(j, c, -vt.get(j, c));
            }
        }
    }
    SvdResult { u, sigma, vt }
}
