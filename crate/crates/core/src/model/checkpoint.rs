//! Checkpoint directories: one `KOREMAT1` file per parameter
//! (`<layer_id>.w`, `.bias`, `.a`, `.b`) plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, LinearLayer, ToyModel};
use crate::adapter::AdapterPair;
use crate::error::{KoreError, Result};
use crate::linalg::{read_matrix, write_matrix, Matrix};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub layer_id: String,
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub bias: bool,
    pub adapter_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub input_dim: usize,
    pub layers: Vec<LayerManifest>,
}

impl Manifest {
    pub fn of(model: &ToyModel) -> Self {
        Manifest {
            input_dim: model.input_dim(),
            layers: model
                .layers()
                .iter()
                .map(|l| LayerManifest {
                    layer_id: l.layer_id().to_string(),
                    d_in: l.d_in(),
                    d_out: l.d_out(),
                    activation: l.activation(),
                    bias: l.bias().is_some(),
                    adapter_rank: l.adapter().map(AdapterPair::rank),
                })
                .collect(),
        }
    }
}

pub fn save_checkpoint(model: &ToyModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| KoreError::io(dir, e))?;
    for l in model.layers() {
        let id = l.layer_id();
        write_matrix(&dir.join(format!("{id}.w")), l.w())?;
        if let Some(b) = l.bias() {
            write_matrix(&dir.join(format!("{id}.bias")), &Matrix::column_vector(b)?)?;
        }
        if let Some(pair) = l.adapter() {
            write_matrix(&dir.join(format!("{id}.a")), pair.a())?;
            write_matrix(&dir.join(format!("{id}.b")), pair.b())?;
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&Manifest::of(model))?;
    fs::write(&path, json + "\n").map_err(|e| KoreError::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<ToyModel> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| KoreError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| KoreError::format(&path, e.to_string()))?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in &manifest.layers {
        let id = &lm.layer_id;
        let w = read_matrix(&dir.join(format!("{id}.w")))?;
        expect_shape(&dir.join(format!("{id}.w")), &w, (lm.d_out, lm.d_in))?;
        let bias = if lm.bias {
            let p = dir.join(format!("{id}.bias"));
            let b = read_matrix(&p)?;
            expect_shape(&p, &b, (lm.d_out, 1))?;
            Some(b.into_vec())
        } else {
            None
        };
        let mut layer = LinearLayer::new(id.clone(), w.clone(), bias, lm.activation)?;
        if let Some(r) = lm.adapter_rank {
            let pa = dir.join(format!("{id}.a"));
            let pb = dir.join(format!("{id}.b"));
            let a = read_matrix(&pa)?;
            let b = read_matrix(&pb)?;
            expect_shape(&pa, &a, (r, lm.d_in))?;
            expect_shape(&pb, &b, (lm.d_out, r))?;
            layer.install_adapter(AdapterPair::new(a, b)?, w)?;
        }
        layers.push(layer);
    }
    ToyModel::new(manifest.input_dim, layers)
}

fn expect_shape(path: &Path, m: &Matrix, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(KoreError::format(
            path,
            format!("manifest says {shape:?}, file holds {:?}", m.shape()),
        ));
    }
    Ok(())
}
