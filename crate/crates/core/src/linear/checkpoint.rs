use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LinearPredictor, RewNplsConfig, RewNplsModel};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    schema_version: u32,
    kind: String,
    config: RewNplsConfig,
    dims: (usize, usize, usize),
    n_outputs: usize,
    selected_factors: usize,
    chunks_seen: usize,
}

/// Writes `model.json` and `model.f64le` (x mean, x scale, y mean, then B
/// row-major) for the model's validated predictor.
pub fn write_checkpoint(dir: &Path, model: &RewNplsModel) -> Result<()> {
    let pred = model.predictor()?;
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_VERSION,
        kind: "rew-npls".into(),
        config: model.config().clone(),
        dims: model.dims(),
        n_outputs: pred.n_outputs(),
        selected_factors: model.selected_factors(),
        chunks_seen: model.chunks_seen(),
    };
    write_atomic(&dir.join("model.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    let mut bytes = Vec::new();
    for v in pred.x_mean.iter().chain(&pred.x_scale).chain(&pred.y_mean).chain(pred.b.data()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&dir.join("model.f64le"), &bytes)
}

/// Loads the frozen predictor stored by [`write_checkpoint`].
pub fn read_checkpoint(dir: &Path) -> Result<LinearPredictor> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join("model.json"))?)?;
    if manifest.schema_version != CHECKPOINT_VERSION || manifest.kind != "rew-npls" {
        return Err(Error::Schema {
            expected: format!("rew-npls/{CHECKPOINT_VERSION}"),
            found: format!("{}/{}", manifest.kind, manifest.schema_version),
        });
    }
    let (a, b, c) = manifest.dims;
    let p = a * b * c;
    let q = manifest.n_outputs;
    let bytes = fs::read(dir.join("model.f64le"))?;
    let expected = (2 * p + q + p * q) * 8;
    if bytes.len() != expected {
        return Err(Error::data(format!("model.f64le has {} bytes, expected {expected}", bytes.len())));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok(LinearPredictor {
        dims: manifest.dims,
        x_mean: vals[..p].to_vec(),
        x_scale: vals[p..2 * p].to_vec(),
        y_mean: vals[2 * p..2 * p + q].to_vec(),
        b: Matrix::from_vec(p, q, vals[2 * p + q..].to_vec())?,
    })
}
