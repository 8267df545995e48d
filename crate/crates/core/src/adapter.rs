//! Null-space constrained adapter initialization.
//!
//! For a layer with base weight `W₀` and input covariance `C = XXᵀ`:
//!
//! 1. `Û` holds the `r` left singular vectors of `C` with the smallest
//!    singular values, `P = ÛÛᵀ`.
//! 2. `svd(W₀P) = U*Σ*V*ᵀ` truncated to rank `r` gives `B = U*√Σ*` and
//!    `A = √Σ*V*ᵀ`.
//! 3. The base becomes `W₀' = W₀ − BA`, so `W₀' + BA = W₀` at initialization.
//!
//! `A` is frozen. Its rows lie in `span(Û)`, so when `Û` spans an exact null
//! space of `C`, `A·C = 0` and no update of `B` changes the layer's output on
//! the captured activations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::covariance::CovAccumulator;
use crate::error::{KoreError, Result};
use crate::linalg::{relative_error, svd, Matrix};
use crate::model::ToyModel;

/// Relative threshold below which a singular value of `C` counts as zero.
pub const DEFAULT_NULL_EPS: f64 = 1e-10;
pub const DEFAULT_THEOREM_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-8;

/// Low-rank factors `B (d_out×r)` and `A (r×d_in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterPair {
    a: Matrix,
    b: Matrix,
}

impl AdapterPair {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(KoreError::shape(
                "AdapterPair::new",
                format!("b is {:?} but a is {:?}", b.shape(), a.shape()),
            ));
        }
        Ok(AdapterPair { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub(crate) fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.b.rows()
    }

    /// Swaps in a new trainable factor of the same shape.
    pub fn with_b(&self, b: Matrix) -> Result<Self> {
        if b.shape() != self.b.shape() {
            return Err(KoreError::shape(
                "AdapterPair::with_b",
                format!("{:?} vs {:?}", b.shape(), self.b.shape()),
            ));
        }
        Ok(AdapterPair { a: self.a.clone(), b })
    }

    /// `B·A`.
    pub fn delta(&self) -> Matrix {
        self.b.matmul(&self.a).expect("shapes checked on construction")
    }
}

/// The `r` smallest-singular-value directions of a covariance matrix.
#[derive(Clone, Debug)]
pub struct NullBasis {
    /// `d_in × r`, orthonormal columns, ascending singular value.
    pub u_hat: Matrix,
    /// Singular values matching the columns of `u_hat`, ascending.
    pub sigmas: Vec<f64>,
    /// `#{σᵢ ≤ eps·σ_max}` over the whole spectrum.
    pub exact_null_dim: usize,
    pub sigma_max: f64,
}

impl NullBasis {
    pub fn rank(&self) -> usize {
        self.u_hat.cols()
    }

    pub fn dim(&self) -> usize {
        self.u_hat.rows()
    }
}

pub fn null_basis(c: &Matrix, r: usize, eps: f64) -> Result<NullBasis> {
    if !c.is_square() {
        return Err(KoreError::shape("null_basis", format!("{:?} is not square", c.shape())));
    }
    let d = c.rows();
    if r == 0 || r > d {
        return Err(KoreError::shape("null_basis", format!("rank {r} outside 1..={d}")));
    }
    let asym = c.symmetry_error().unwrap_or(0.0);
    if asym > SYMMETRY_TOL * c.frobenius().max(f64::MIN_POSITIVE) {
        return Err(KoreError::Contract(format!(
            "covariance is not symmetric (‖C − Cᵀ‖_F = {asym:e})"
        )));
    }
    let dec = svd(c)?;
    let sigma_max = dec.sigma[0];
    let exact_null_dim = dec.sigma.iter().filter(|&&s| s <= eps * sigma_max).count();
    let idx: Vec<usize> = (d - r..d).rev().collect();
    let u_hat = dec.u.select_columns(&idx);
    let sigmas = idx.iter().map(|&i| dec.sigma[i]).collect();
    Ok(NullBasis {
        u_hat,
        sigmas,
        exact_null_dim,
        sigma_max,
    })
}

/// Orthogonal projector `P = ÛÛᵀ` onto the approximate null space.
#[derive(Clone, Debug)]
pub struct Projector {
    p: Matrix,
    rank: usize,
}

impl Projector {
    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }
}

pub fn projector(nb: &NullBasis) -> Projector {
    Projector {
        p: nb.u_hat.gram(),
        rank: nb.rank(),
    }
}

/// Builds `(B, A)` from `svd(W₀P)` and returns them with the residual base `W₀' = W₀ − BA`.
///
/// If the projector rank exceeds `min(d_out, d_in)` the extra factors are
/// zero. Singular values at numerical-zero level relative to the largest are
/// also zeroed, which keeps `A`'s rows inside `range(P)`.
pub fn init_adapter(w0: &Matrix, p: &Projector) -> Result<(AdapterPair, Matrix)> {
    if w0.cols() != p.dim() {
        return Err(KoreError::shape(
            "init_adapter",
            format!("weight has {} inputs, projector is {}x{}", w0.cols(), p.dim(), p.dim()),
        ));
    }
    let (d_out, d_in) = w0.shape();
    let r = p.rank();
    let dec = svd(&w0.matmul(p.matrix())?)?;
    let k = dec.k();
    let floor = dec.sigma[0] * (d_out.max(d_in) as f64) * f64::EPSILON;
    let roots: Vec<f64> = (0..r)
        .map(|i| match dec.sigma.get(i) {
            Some(&s) if s > floor => s.sqrt(),
            _ => 0.0,
        })
        .collect();
    let b = Matrix::from_fn(d_out, r, |i, j| if j < k { dec.u.get(i, j) * roots[j] } else { 0.0 });
    let a = Matrix::from_fn(r, d_in, |i, j| if i < k { roots[i] * dec.vt.get(i, j) } else { 0.0 });
    let pair = AdapterPair::new(a, b)?;
    let w0_prime = w0.sub(&pair.delta())?;
    Ok((pair, w0_prime))
}

/// Deployable weight `W* = W₀' + BA`.
pub fn merge_adapter(w0_prime: &Matrix, pair: &AdapterPair) -> Result<Matrix> {
    if w0_prime.shape() != (pair.d_out(), pair.d_in()) {
        return Err(KoreError::shape(
            "merge_adapter",
            format!("base {:?} vs adapter {}x{}", w0_prime.shape(), pair.d_out(), pair.d_in()),
        ));
    }
    w0_prime.add(&pair.delta())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    /// `‖A·C‖_F / (‖A‖_F·‖C‖_F)`.
    pub ac_rel: f64,
    /// `‖A − A·ÛÛᵀ‖_F / ‖A‖_F`.
    pub rowspace_resid: f64,
    pub rank: usize,
    pub exact_null_dim: usize,
    pub tolerance: f64,
    pub pass: bool,
    /// Set when the exact null space is smaller than the rank; the measured
    /// values are reported but not judged.
    pub advisory: bool,
}

pub fn verify_theorems(pair: &AdapterPair, c: &Matrix, nb: &NullBasis, tol: f64) -> Result<TheoremReport> {
    let a = pair.a();
    let a_norm = a.frobenius();
    let ac = a.matmul(c)?;
    let ac_rel = ac.frobenius() / (a_norm * c.frobenius() + 1e-300);
    let proj = a.matmul(&nb.u_hat)?.matmul(&nb.u_hat.transpose())?;
    let rowspace_resid = a.sub(&proj)?.frobenius() / (a_norm + 1e-300);
    let judged = nb.exact_null_dim >= pair.rank();
    Ok(TheoremReport {
        ac_rel,
        rowspace_resid,
        rank: pair.rank(),
        exact_null_dim: nb.exact_null_dim,
        tolerance: tol,
        pass: judged && ac_rel <= tol && rowspace_resid <= tol,
        advisory: !judged,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KoreConfig {
    pub rank: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    /// Per-layer rank overrides keyed by layer id.
    #[serde(default)]
    pub rank_overrides: BTreeMap<String, usize>,
}

fn default_eps() -> f64 {
    DEFAULT_NULL_EPS
}

fn default_tol() -> f64 {
    DEFAULT_THEOREM_TOL
}

impl KoreConfig {
    pub fn new(rank: usize) -> Self {
        KoreConfig {
            rank,
            eps: DEFAULT_NULL_EPS,
            tolerance: DEFAULT_THEOREM_TOL,
            rank_overrides: BTreeMap::new(),
        }
    }

    pub fn rank_for(&self, layer_id: &str) -> usize {
        self.rank_overrides.get(layer_id).copied().unwrap_or(self.rank)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerTheoremReport {
    pub layer_id: String,
    #[serde(flatten)]
    pub theorems: TheoremReport,
    /// `‖(W₀' + BA) − W₀‖_F / ‖W₀‖_F` right after initialization.
    pub init_rel: f64,
}

/// Attaches a freshly initialized constrained adapter to every layer.
///
/// Layers that already carry an adapter are rejected; every layer needs a
/// covariance of matching dimension.
pub fn attach_kore_adapters(
    model: &ToyModel,
    covs: &BTreeMap<String, CovAccumulator>,
    cfg: &KoreConfig,
) -> Result<(ToyModel, Vec<LayerTheoremReport>)> {
    let mut out = model.clone();
    let mut reports = Vec::with_capacity(model.layers().len());
    for layer in out.layers_mut() {
        if layer.adapter().is_some() {
            return Err(KoreError::Contract(format!(
                "layer {} already has an adapter",
                layer.layer_id()
            )));
        }
        let cov = covs.get(layer.layer_id()).ok_or_else(|| {
            KoreError::Contract(format!("no covariance for layer {}", layer.layer_id()))
        })?;
        if cov.dim() != layer.d_in() {
            return Err(KoreError::shape(
                "attach_kore_adapters",
                format!("layer {} has d_in {} but covariance dim {}", layer.layer_id(), layer.d_in(), cov.dim()),
            ));
        }
        let r = cfg.rank_for(layer.layer_id());
        let nb = null_basis(cov.matrix(), r, cfg.eps)?;
        let p = projector(&nb);
        let w0 = layer.w().clone();
        let (pair, w0_prime) = init_adapter(&w0, &p)?;
        let theorems = verify_theorems(&pair, cov.matrix(), &nb, cfg.tolerance)?;
        let init_rel = relative_error(&merge_adapter(&w0_prime, &pair)?, &w0)?;
        reports.push(LayerTheoremReport {
            layer_id: layer.layer_id().to_string(),
            theorems,
            init_rel,
        });
        layer.install_adapter(pair, w0_prime)?;
    }
    Ok((out, reports))
}
