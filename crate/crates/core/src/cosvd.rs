//! Weight truncation study: how much of a layer's behaviour survives after
//! discarding its smallest singular components, with three decompositions.
//!
//! - plain: `svd(W)`.
//! - asvd: `svd(W·S)` with `S = diag(scale^α)`, mapped back with `S⁻¹`.
//! - cosvd: `svd(W·Ĉ)` with `Ĉ = C/tokens + ρI`, mapped back with `Ĉ⁻¹`.
//!
//! [`retention_report`] applies a truncation to every layer of a model and
//! measures the loss on a set of evaluation tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::CovAccumulator;
use crate::error::{KoreError, Result};
use crate::linalg::{spd_inverse, svd, Matrix};
use crate::model::{Loss, ToyModel};
use crate::trainer::{evaluate_loss, Example};

pub const DEFAULT_ASVD_ALPHA: f64 = 0.5;
/// Ridge default for cosvd, relative to `trace(C/tokens)/d`.
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-6;
pub const HEATMAP_GRID: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Plain,
    Asvd,
    Cosvd,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Plain => "plain",
            Method::Asvd => "asvd",
            Method::Cosvd => "cosvd",
        })
    }
}

impl FromStr for Method {
    type Err = KoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "plain" => Ok(Method::Plain),
            "asvd" => Ok(Method::Asvd),
            "cosvd" => Ok(Method::Cosvd),
            other => Err(KoreError::Contract(format!("unknown truncation method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationResult {
    pub method: Method,
    pub discarded: usize,
    pub w_tilde: Matrix,
    /// `‖W − W̃‖_F / ‖W‖_F`.
    pub recon_err: f64,
    /// Error in the method's own metric: `‖(W − W̃)S‖_F` or `‖(W − W̃)Ĉ‖_F`.
    pub weighted_err: Option<f64>,
}

fn check_k(w: &Matrix, k: usize) -> Result<()> {
    let limit = w.rows().min(w.cols());
    if k >= limit {
        return Err(KoreError::Contract(format!(
            "cannot discard {k} components of a {}x{} weight (limit {})",
            w.rows(),
            w.cols(),
            limit.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Drops the `k` smallest singular triplets of `m`.
fn truncate(m: &Matrix, k: usize) -> Result<Matrix> {
    let dec = svd(m)?;
    let keep = dec.k() - k;
    let sigma: Vec<f64> = dec
        .sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| if i < keep { s } else { 0.0 })
        .collect();
    Ok(dec.reconstruct_with(&sigma))
}

fn relative(w: &Matrix, w_tilde: &Matrix) -> Result<f64> {
    let norm = w.frobenius();
    let diff = w.sub(w_tilde)?.frobenius();
    Ok(if norm == 0.0 { diff } else { diff / norm })
}

pub fn plain_truncate(w: &Matrix, k: usize) -> Result<TruncationResult> {
    check_k(w, k)?;
    let w_tilde = truncate(w, k)?;
    Ok(TruncationResult {
        method: Method::Plain,
        discarded: k,
        recon_err: relative(w, &w_tilde)?,
        w_tilde,
        weighted_err: None,
    })
}

/// `√(Σ of the k smallest σ²) / ‖W‖_F`, the optimal rank-reduction error.
pub fn tail_energy(sigma: &[f64], k: usize, w_norm: f64) -> f64 {
    let tail: f64 = sigma[sigma.len() - k..].iter().map(|s| s * s).sum();
    tail.sqrt() / w_norm
}

fn scale_columns(m: &Matrix, s: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) * s[j])
}

pub fn asvd_truncate(w: &Matrix, act_scale: &[f64], k: usize, alpha: f64) -> Result<TruncationResult> {
    check_k(w, k)?;
    if act_scale.len() != w.cols() {
        return Err(KoreError::shape(
            "asvd_truncate",
            format!("{} scales for {} inputs", act_scale.len(), w.cols()),
        ));
    }
    if let Some(bad) = act_scale.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(KoreError::Contract(format!("activation scale must be positive, got {bad}")));
    }
    let s: Vec<f64> = act_scale.iter().map(|v| v.powf(alpha)).collect();
    let inv: Vec<f64> = s.iter().map(|v| 1.0 / v).collect();
    let truncated = truncate(&scale_columns(w, &s), k)?;
    let w_tilde = scale_columns(&truncated, &inv);
    let weighted_err = scale_columns(&w.sub(&w_tilde)?, &s).frobenius();
    Ok(TruncationResult {
        method: Method::Asvd,
        discarded: k,
        recon_err: relative(w, &w_tilde)?,
        w_tilde,
        weighted_err: Some(weighted_err),
    })
}

/// Per-channel RMS activation `√(C_ii / tokens)`, floored at `1e-12`.
pub fn activation_scale(c: &CovAccumulator) -> Vec<f64> {
    let n = c.normalized();
    (0..c.dim()).map(|i| n.get(i, i).max(0.0).sqrt().max(1e-12)).collect()
}

/// `C/tokens + ρI`, with `ρ = 1e-6·trace(C/tokens)/d` when `ridge` is `None`.
pub fn conditioned_covariance(c: &CovAccumulator, ridge: Option<f64>) -> Matrix {
    let n = c.normalized();
    let d = c.dim();
    let rho = ridge.unwrap_or_else(|| DEFAULT_RIDGE_FACTOR * n.trace() / d.max(1) as f64);
    Matrix::from_fn(d, d, |i, j| n.get(i, j) + if i == j { rho } else { 0.0 })
}

pub fn cosvd_truncate(w: &Matrix, c: &CovAccumulator, k: usize, ridge: Option<f64>) -> Result<TruncationResult> {
    check_k(w, k)?;
    if c.dim() != w.cols() {
        return Err(KoreError::shape(
            "cosvd_truncate",
            format!("covariance dim {} for {} inputs", c.dim(), w.cols()),
        ));
    }
    let c_hat = conditioned_covariance(c, ridge);
    let inv = spd_inverse(&c_hat)?;
    let truncated = truncate(&w.matmul(&c_hat)?, k)?;
    let w_tilde = truncated.matmul(&inv)?;
    let weighted_err = w.sub(&w_tilde)?.matmul(&c_hat)?.frobenius();
    Ok(TruncationResult {
        method: Method::Cosvd,
        discarded: k,
        recon_err: relative(w, &w_tilde)?,
        w_tilde,
        weighted_err: Some(weighted_err),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetentionConfig {
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
    pub loss: Loss,
    pub asvd_alpha: f64,
    pub ridge: Option<f64>,
    /// Evaluation set whose covariance drives asvd/cosvd; used for the finding.
    pub reference_set: String,
}

impl RetentionConfig {
    pub fn new(reference_set: impl Into<String>, ks: Vec<usize>) -> Self {
        RetentionConfig {
            methods: vec![Method::Plain, Method::Asvd, Method::Cosvd],
            ks,
            loss: Loss::Mse,
            asvd_alpha: DEFAULT_ASVD_ALPHA,
            ridge: None,
            reference_set: reference_set.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub method: Method,
    pub k: usize,
    /// Components actually discarded per layer: `min(k, min(d_out, d_in) − 1)`.
    pub discarded: BTreeMap<String, usize>,
    pub losses: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub reference_set: String,
    pub baseline: BTreeMap<String, f64>,
    pub rows: Vec<RetentionRow>,
    pub largest_k: Option<usize>,
    /// At the largest k: cosvd loss on the reference set is strictly below
    /// plain's. `None` unless both methods ran.
    pub cosvd_beats_plain: Option<bool>,
}

impl RetentionReport {
    pub fn loss(&self, method: Method, k: usize, set: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.k == k)
            .and_then(|r| r.losses.get(set).copied())
    }
}

/// Truncates every linear layer of `model` with `method`, discarding
/// `min(k, min_dim − 1)` components per layer.
pub fn truncate_model(
    model: &ToyModel,
    covs: &BTreeMap<String, CovAccumulator>,
    method: Method,
    k: usize,
    alpha: f64,
    ridge: Option<f64>,
) -> Result<(ToyModel, BTreeMap<String, usize>)> {
    let mut discarded = BTreeMap::new();
    let truncated = model.map_weights(|layer, w| {
        let kk = k.min(w.rows().min(w.cols()).saturating_sub(1));
        discarded.insert(layer.layer_id().to_string(), kk);
        let cov = || {
            covs.get(layer.layer_id()).ok_or_else(|| {
                KoreError::Contract(format!("no covariance for layer {}", layer.layer_id()))
            })
        };
        let result = match method {
            Method::Plain => plain_truncate(&w, kk)?,
            Method::Asvd => asvd_truncate(&w, &activation_scale(cov()?), kk, alpha)?,
            Method::Cosvd => cosvd_truncate(&w, cov()?, kk, ridge)?,
        };
        Ok(result.w_tilde)
    })?;
    Ok((truncated, discarded))
}

pub fn retention_report(
    model: &ToyModel,
    covs: &BTreeMap<String, CovAccumulator>,
    eval_sets: &BTreeMap<String, Vec<Example>>,
    cfg: &RetentionConfig,
) -> Result<RetentionReport> {
    if let Some((name, _)) = eval_sets.iter().find(|(_, d)| d.is_empty()) {
        return Err(KoreError::Contract(format!("evaluation set {name} is empty")));
    }
    let eval = |m: &ToyModel| -> Result<BTreeMap<String, f64>> {
        eval_sets
            .iter()
            .map(|(name, data)| Ok((name.clone(), evaluate_loss(m, data, cfg.loss)?)))
            .collect()
    };
    let baseline = eval(model)?;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &k in &cfg.ks {
            let (m, discarded) = truncate_model(model, covs, method, k, cfg.asvd_alpha, cfg.ridge)?;
            rows.push(RetentionRow {
                method,
                k,
                discarded,
                losses: eval(&m)?,
            });
        }
    }
    let largest_k = cfg.ks.iter().copied().max();
    let mut report = RetentionReport {
        reference_set: cfg.reference_set.clone(),
        baseline,
        rows,
        largest_k,
        cosvd_beats_plain: None,
    };
    if let Some(k) = largest_k {
        let co = report.loss(Method::Cosvd, k, &cfg.reference_set);
        let pl = report.loss(Method::Plain, k, &cfg.reference_set);
        if let (Some(co), Some(pl)) = (co, pl) {
            report.cosvd_beats_plain = Some(co < pl);
        }
    }
    Ok(report)
}

/// Block-mean of `|C|` on a `grid × grid` lattice. Block `i` covers rows
/// `⌊i·d/grid⌋ .. max(⌊(i+1)·d/grid⌋, ⌊i·d/grid⌋ + 1)`, so small matrices are
/// upsampled by repetition.
pub fn heatmap(c: &Matrix, grid: usize) -> Matrix {
    let bounds = |n: usize, i: usize| {
        let lo = (i * n / grid).min(n.saturating_sub(1));
        let hi = ((i + 1) * n / grid).max(lo + 1).min(n);
        (lo, hi)
    };
    Matrix::from_fn(grid, grid, |bi, bj| {
        let (r0, r1) = bounds(c.rows(), bi);
        let (c0, c1) = bounds(c.cols(), bj);
        let mut s = 0.0;
        for i in r0..r1 {
            for j in c0..c1 {
                s += c.get(i, j).abs();
            }
        }
        s / ((r1 - r0) * (c1 - c0)) as f64
    })
}

pub fn write_heatmap_csv(path: &Path, heat: &Matrix) -> Result<()> {
    let mut out = String::new();
    for i in 0..heat.rows() {
        let row: Vec<String> = heat.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| KoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn cov_of(x: &Matrix) -> CovAccumulator {
        let mut c = CovAccumulator::new("l", x.rows());
        c.absorb(x).unwrap();
        c
    }

    #[test]
    fn plain_noop_and_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(4, 3, &mut rng);
        let r = plain_truncate(&w, 0).unwrap();
        assert!(r.w_tilde.sub(&w).unwrap().frobenius() <= 1e-10);
        let d = plain_truncate(&Matrix::diag(&[3.0, 1.0]), 1).unwrap();
        assert_eq!(d.w_tilde, Matrix::diag(&[3.0, 0.0]));
        assert!(plain_truncate(&w, 3).is_err());
    }

    #[test]
    fn plain_error_is_tail_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(6, 6, &mut rng);
        let sigma = svd(&w).unwrap().sigma;
        let r = plain_truncate(&w, 2).unwrap();
        let expected = tail_energy(&sigma, 2, w.frobenius());
        assert!((r.recon_err - expected).abs() <= 1e-9);
    }

    #[test]
    fn asvd_unit_scale_is_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(5, 4, &mut rng);
        let a = asvd_truncate(&w, &[1.0; 4], 2, 0.5).unwrap();
        let p = plain_truncate(&w, 2).unwrap();
        assert!(a.w_tilde.sub(&p.w_tilde).unwrap().frobenius() <= 1e-12);
        let z = asvd_truncate(&w, &[0.3, 2.0, 1.0, 5.0], 0, 0.5).unwrap();
        assert!(z.w_tilde.sub(&w).unwrap().frobenius() <= 1e-9);
        assert!(asvd_truncate(&w, &[1.0, 0.0, 1.0, 1.0], 1, 0.5).is_err());
    }

    #[test]
    fn asvd_wins_in_its_own_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(6, 5, &mut rng);
        let scale = [0.1, 3.0, 0.5, 1.5, 0.05];
        let s: Vec<f64> = scale.iter().map(|v: &f64| v.powf(0.5)).collect();
        let a = asvd_truncate(&w, &scale, 3, 0.5).unwrap();
        let p = plain_truncate(&w, 3).unwrap();
        let plain_weighted = scale_columns(&w.sub(&p.w_tilde).unwrap(), &s).frobenius();
        assert!(a.weighted_err.unwrap() <= plain_weighted);
    }

    #[test]
    fn cosvd_with_isotropic_covariance_is_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random(4, 4, &mut rng);
        let c = cov_of(&Matrix::identity(4));
        let co = cosvd_truncate(&w, &c, 2, Some(0.0)).unwrap();
        let p = plain_truncate(&w, 2).unwrap();
        assert!(co.w_tilde.sub(&p.w_tilde).unwrap().frobenius() <= 1e-8);
        let three = cov_of(&Matrix::identity(4).scale(3f64.sqrt() * 2.0));
        let co3 = cosvd_truncate(&w, &three, 2, Some(0.0)).unwrap();
        assert!(co3.w_tilde.sub(&p.w_tilde).unwrap().frobenius() <= 1e-8);
        let z = cosvd_truncate(&w, &cov_of(&random(4, 10, &mut rng)), 0, None).unwrap();
        assert!(z.w_tilde.sub(&w).unwrap().frobenius() <= 1e-8);
    }

    #[test]
    fn cosvd_keeps_the_activation_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random(5, 5, &mut rng);
        let x = random(5, 1, &mut rng);
        let c = cov_of(&x);
        let co = cosvd_truncate(&w, &c, 4, None).unwrap();
        let pl = plain_truncate(&w, 4).unwrap();
        let wx = w.matmul(&x).unwrap();
        let err = |m: &Matrix| m.matmul(&x).unwrap().sub(&wx).unwrap().frobenius() / wx.frobenius();
        assert!(err(&co.w_tilde) <= 1e-6, "{}", err(&co.w_tilde));
        assert!(err(&pl.w_tilde) >= 1e-2);
    }

    #[test]
    fn cosvd_singular_without_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random(3, 3, &mut rng);
        let c = cov_of(&random(3, 1, &mut rng));
        assert!(matches!(cosvd_truncate(&w, &c, 1, Some(0.0)), Err(KoreError::Numeric(_))));
        assert!(cosvd_truncate(&w, &CovAccumulator::new("l", 2), 1, None).is_err());
    }

    #[test]
    fn heatmap_block_means() {
        let c = Matrix::from_fn(64, 64, |i, j| if (i + j) % 2 == 0 { -1.0 } else { 3.0 });
        let h = heatmap(&c, 32);
        assert_eq!(h.shape(), (32, 32));
        assert!(h.as_slice().iter().all(|&v| v == 2.0));
        let small = heatmap(&Matrix::diag(&[1.0, -2.0]), 32);
        assert_eq!(small.get(0, 0), 1.0);
        assert_eq!(small.get(31, 31), 2.0);
        assert_eq!(small.get(0, 31), 0.0);
    }

    #[test]
    fn heatmap_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.heat.csv");
        write_heatmap_csv(&p, &heatmap(&Matrix::identity(32), 32)).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 32);
        assert!(lines.iter().all(|l| l.split(',').count() == 32));
        assert!(lines[0].starts_with("1,0,"));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("cosvd".parse::<Method>().unwrap(), Method::Cosvd);
        assert!("svd".parse::<Method>().is_err());
        assert_eq!(Method::Asvd.to_string(), "asvd");
    }
}
