//! Per-layer activation covariance `C = XXᵀ`, accumulated over token columns.
//!
//! `C` is kept unnormalized. Sharded captures are combined with [`CovAccumulator::merge`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KoreError, Result};
use crate::linalg::{read_matrix, write_matrix, Matrix};
use crate::model::ToyModel;

#[derive(Clone, Debug, PartialEq)]
pub struct CovAccumulator {
    layer_id: String,
    c: Matrix,
    tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovSidecar {
    pub layer_id: String,
    pub dim: usize,
    pub tokens: u64,
}

impl CovAccumulator {
    pub fn new(layer_id: impl Into<String>, dim: usize) -> Self {
        CovAccumulator {
            layer_id: layer_id.into(),
            c: Matrix::zeros(dim, dim),
            tokens: 0,
        }
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn dim(&self) -> usize {
        self.c.rows()
    }

    pub fn tokens(&self) -> u64 {
        self.tokens
    }

    pub fn matrix(&self) -> &Matrix {
        &self.c
    }

    /// `C / tokens`; the zero matrix when nothing was absorbed.
    pub fn normalized(&self) -> Matrix {
        if self.tokens == 0 {
            return self.c.clone();
        }
        self.c.scale(1.0 / self.tokens as f64)
    }

    /// Adds `X·Xᵀ` for a `dim × T` batch of activation columns.
    pub fn absorb(&mut self, x_batch: &Matrix) -> Result<()> {
        if x_batch.rows() != self.dim() {
            return Err(KoreError::shape(
                "absorb",
                format!("batch has {} rows, accumulator dim is {}", x_batch.rows(), self.dim()),
            ));
        }
        self.c.add_assign(&x_batch.gram())?;
        self.tokens += x_batch.cols() as u64;
        Ok(())
    }

    pub fn merge(&self, other: &CovAccumulator) -> Result<CovAccumulator> {
        if self.layer_id != other.layer_id {
            return Err(KoreError::Identity {
                expected: self.layer_id.clone(),
                got: other.layer_id.clone(),
            });
        }
        if self.dim() != other.dim() {
            return Err(KoreError::shape(
                "merge",
                format!("dims {} vs {}", self.dim(), other.dim()),
            ));
        }
        Ok(CovAccumulator {
            layer_id: self.layer_id.clone(),
            c: self.c.add(&other.c)?,
            tokens: self.tokens + other.tokens,
        })
    }

    pub fn sidecar(&self) -> CovSidecar {
        CovSidecar {
            layer_id: self.layer_id.clone(),
            dim: self.dim(),
            tokens: self.tokens,
        }
    }

    /// Writes `<dir>/<layer_id>.cov` and its `.cov.json` sidecar; returns the matrix path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| KoreError::io(dir, e))?;
        let path = dir.join(format!("{}.cov", self.layer_id));
        write_matrix(&path, &self.c)?;
        let side = sidecar_path(&path);
        let json = serde_json::to_string(&self.sidecar())?;
        fs::write(&side, json + "\n").map_err(|e| KoreError::io(&side, e))?;
        Ok(path)
    }

    /// Loads a `.cov` file and its sidecar.
    pub fn load(path: &Path) -> Result<CovAccumulator> {
        let c = read_matrix(path)?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| KoreError::io(&side, e))?;
        let meta: CovSidecar =
            serde_json::from_str(&text).map_err(|e| KoreError::format(&side, e.to_string()))?;
        if !c.is_square() || c.rows() != meta.dim {
            return Err(KoreError::format(
                path,
                format!("sidecar dim {} but matrix is {:?}", meta.dim, c.shape()),
            ));
        }
        Ok(CovAccumulator {
            layer_id: meta.layer_id,
            c,
            tokens: meta.tokens,
        })
    }
}

fn sidecar_path(cov: &Path) -> PathBuf {
    let mut s = cov.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Loads every `*.cov` file in `dir`, keyed by layer id.
pub fn load_dir(dir: &Path) -> Result<BTreeMap<String, CovAccumulator>> {
    let entries = fs::read_dir(dir).map_err(|e| KoreError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cov"))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let acc = CovAccumulator::load(&p)?;
        out.insert(acc.layer_id.clone(), acc);
    }
    Ok(out)
}

/// A capture batch tagged with the data category it was sampled from.
/// The tag is informational; every category pools into one covariance per layer.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub category: String,
    pub x: Matrix,
}

/// Runs the model on each batch and accumulates every layer's input activations.
///
/// Batches are absorbed in sequence order. An empty sequence yields zero
/// accumulators.
pub fn capture(model: &ToyModel, inputs: &[Matrix]) -> Result<BTreeMap<String, CovAccumulator>> {
    let mut accs: Vec<CovAccumulator> = model
        .layers()
        .iter()
        .map(|l| CovAccumulator::new(l.layer_id(), l.d_in()))
        .collect();
    for x in inputs {
        let pass = model.forward(x, true)?;
        for (acc, h) in accs.iter_mut().zip(pass.layer_inputs.expect("capture requested")) {
            acc.absorb(&h)?;
        }
    }
    Ok(accs.into_iter().map(|a| (a.layer_id.clone(), a)).collect())
}

pub fn capture_labeled(model: &ToyModel, batches: &[LabeledBatch]) -> Result<BTreeMap<String, CovAccumulator>> {
    let xs: Vec<Matrix> = batches.iter().map(|b| b.x.clone()).collect();
    capture(model, &xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LinearLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn absorb_zero_batch_counts_tokens() {
        let mut acc = CovAccumulator::new("l0", 3);
        acc.absorb(&Matrix::zeros(3, 5)).unwrap();
        assert_eq!(acc.tokens(), 5);
        assert_eq!(acc.matrix(), &Matrix::zeros(3, 3));
    }

    #[test]
    fn absorb_unit_column() {
        let mut acc = CovAccumulator::new("l0", 2);
        acc.absorb(&Matrix::column_vector(&[1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(acc.matrix(), &Matrix::diag(&[1.0, 0.0]));
        assert!(acc.absorb(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn two_halves_match_one_shot() {
        let x = random(4, 20, 1);
        let mut whole = CovAccumulator::new("l", 4);
        whole.absorb(&x).unwrap();
        let mut parts = CovAccumulator::new("l", 4);
        parts.absorb(&x.select_columns(&(0..10).collect::<Vec<_>>())).unwrap();
        parts.absorb(&x.select_columns(&(10..20).collect::<Vec<_>>())).unwrap();
        assert!(parts.matrix().sub(whole.matrix()).unwrap().frobenius() <= 1e-12);
        assert_eq!(parts.tokens(), 20);
    }

    #[test]
    fn merge_identity_commutes_and_checks_layer() {
        let mut a = CovAccumulator::new("l", 3);
        a.absorb(&random(3, 7, 2)).unwrap();
        let mut b = CovAccumulator::new("l", 3);
        b.absorb(&random(3, 4, 3)).unwrap();
        assert_eq!(a.merge(&CovAccumulator::new("l", 3)).unwrap(), a);
        assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
        let other = CovAccumulator::new("m", 3);
        assert!(matches!(a.merge(&other), Err(KoreError::Identity { .. })));
        assert!(a.merge(&CovAccumulator::new("l", 2)).is_err());
    }

    #[test]
    fn scaling_by_two_quadruples_exactly() {
        let x = random(3, 9, 4);
        let mut a = CovAccumulator::new("l", 3);
        a.absorb(&x).unwrap();
        let mut b = CovAccumulator::new("l", 3);
        b.absorb(&x.scale(2.0)).unwrap();
        assert_eq!(b.matrix(), &a.matrix().scale(4.0));
    }

    #[test]
    fn capture_on_orthonormal_inputs() {
        let model = ToyModel::new(
            2,
            vec![LinearLayer::new("l0", Matrix::identity(2), None, Activation::Identity).unwrap()],
        )
        .unwrap();
        let covs = capture(&model, &[Matrix::identity(2)]).unwrap();
        assert_eq!(covs["l0"].matrix(), &Matrix::identity(2));
        assert_eq!(covs["l0"].tokens(), 2);
        let empty = capture(&model, &[]).unwrap();
        assert_eq!(empty["l0"].tokens(), 0);
        assert_eq!(empty["l0"].matrix(), &Matrix::zeros(2, 2));
    }

    #[test]
    fn save_load_roundtrip_and_truncation() {
        let mut acc = CovAccumulator::new("blk0.proj", 3);
        acc.absorb(&random(3, 6, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = acc.save(dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "blk0.proj.cov");
        let back = CovAccumulator::load(&path).unwrap();
        assert_eq!(back, acc);
        let all = load_dir(dir.path()).unwrap();
        assert_eq!(all.len(), 1);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(CovAccumulator::load(&path), Err(KoreError::Format { .. })));
    }
}
