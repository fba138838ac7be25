use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Network, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::io::{schema_line, write_atomic};

pub const NET_CHECKPOINT_VERSION: u32 = 1;
const HISTORY_SCHEMA: &str = "train-history";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub schema_version: u32,
    pub architecture: serde_json::Value,
    pub architecture_hash: String,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub parameter_count: usize,
    pub running_stat_count: usize,
}

fn architecture_hash(arch: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(arch.to_string().as_bytes()))
}

/// Writes `net.json` and `net.f64le` (parameters, then running statistics).
pub fn write_net_checkpoint<N: Network>(dir: &Path, net: &N, config: &TrainConfig, history: &TrainHistory) -> Result<()> {
    fs::create_dir_all(dir)?;
    let arch = net.architecture();
    let stats = net.running_stats();
    let manifest = NetCheckpoint {
        schema_version: NET_CHECKPOINT_VERSION,
        architecture_hash: architecture_hash(&arch),
        architecture: arch,
        train_config: config.clone(),
        seed: config.seed,
        best_epoch: history.best_epoch,
        parameter_count: net.parameter_count(),
        running_stat_count: stats.len(),
    };
    write_atomic(&dir.join("net.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    let mut bytes = Vec::with_capacity((net.parameter_count() + stats.len()) * 8);
    for v in net.params().iter().chain(&stats) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&dir.join("net.f64le"), &bytes)
}

/// Loads parameters into `net`, which must have the same architecture.
pub fn read_net_checkpoint<N: Network>(dir: &Path, net: &mut N) -> Result<NetCheckpoint> {
    let manifest: NetCheckpoint = serde_json::from_slice(&fs::read(dir.join("net.json"))?)?;
    if manifest.schema_version != NET_CHECKPOINT_VERSION {
        return Err(Error::Schema {
            expected: NET_CHECKPOINT_VERSION.to_string(),
            found: manifest.schema_version.to_string(),
        });
    }
    if manifest.architecture_hash != architecture_hash(&net.architecture()) {
        return Err(Error::contract("checkpoint architecture differs from the target network"));
    }
    let bytes = fs::read(dir.join("net.f64le"))?;
    let p = manifest.parameter_count;
    if bytes.len() != (p + manifest.running_stat_count) * 8 || p != net.parameter_count() {
        return Err(Error::data("net.f64le length does not match the manifest"));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    net.params_mut().copy_from_slice(&vals[..p]);
    net.set_running_stats(&vals[p..])?;
    Ok(manifest)
}

/// `epoch,train_cs,val_cs` with a schema line.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = schema_line(HISTORY_SCHEMA, NET_CHECKPOINT_VERSION).into_bytes();
    writeln!(out, "epoch,train_cs,val_cs")?;
    for e in &history.epochs {
        writeln!(out, "{},{},{}", e.epoch, crate::io::sig9(e.train_cs), crate::io::sig9(e.val_cs))?;
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Mlp, MlpConfig};

    #[test]
    fn round_trip_restores_parameters_and_stats() {
        let cfg = MlpConfig { inputs: 7, hidden: 4, outputs: 3, dropout: 0.5 };
        let mut a = Mlp::new(cfg.clone(), 1).unwrap();
        a.set_running_stats(&(0..16).map(|i| i as f64 + 0.5).collect::<Vec<_>>()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hist = TrainHistory { best_epoch: 3, ..Default::default() };
        write_net_checkpoint(dir.path(), &a, &TrainConfig::default(), &hist).unwrap();
        let mut b = Mlp::new(cfg, 2).unwrap();
        let m = read_net_checkpoint(dir.path(), &mut b).unwrap();
        assert_eq!(m.best_epoch, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let a = Mlp::new(MlpConfig { inputs: 7, hidden: 4, outputs: 3, dropout: 0.5 }, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_net_checkpoint(dir.path(), &a, &TrainConfig::default(), &TrainHistory::default()).unwrap();
        let mut b = Mlp::new(MlpConfig { inputs: 7, hidden: 5, outputs: 3, dropout: 0.5 }, 1).unwrap();
        assert!(matches!(read_net_checkpoint(dir.path(), &mut b), Err(Error::Contract(_))));
    }
}
