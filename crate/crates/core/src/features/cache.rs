use std::fs;
use std::io::Write;
use std::path::Path;

use super::extract::{FeatureEpoch, FeatureSet};
use crate::error::{Error, Result};
use crate::io::{schema_line, sig9, strip_schema, write_atomic};
use crate::numerics::Tensor3;
use crate::synth::State;

const MAGIC: &[u8; 8] = b"ECOGFEAT";
pub const FEATURE_CACHE_VERSION: u32 = 1;
const LABELS_SCHEMA: &str = "feature-labels";
const CSV_SCHEMA: &str = "features";
const HEADER_LEN: usize = 8 + 4 + 3 * 4 + 8;

/// Writes `features.bin` (header + little-endian f64 values) and
/// `labels.csv` into `dir`.
pub fn write_feature_set(dir: &Path, set: &FeatureSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (a, b, c) = set.dims();
    let mut bin = Vec::with_capacity(HEADER_LEN + set.len() * set.n_features() * 8);
    bin.extend_from_slice(MAGIC);
    bin.extend_from_slice(&FEATURE_CACHE_VERSION.to_le_bytes());
    for d in [a, b, c] {
        bin.extend_from_slice(&(d as u32).to_le_bytes());
    }
    bin.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for e in &set.epochs {
        for v in e.values.data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join("features.bin"), &bin)?;

    let mut csv = schema_line(LABELS_SCHEMA, FEATURE_CACHE_VERSION).into_bytes();
    writeln!(csv, "epoch_index,session_index,state,tx,ty,tz")?;
    for ((e, s), t) in set.epochs.iter().zip(&set.states).zip(&set.targets) {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            e.epoch_index,
            e.session_index,
            s.as_str(),
            sig9(t[0]),
            sig9(t[1]),
            sig9(t[2])
        )?;
    }
    write_atomic(&dir.join("labels.csv"), &csv)
}

/// Reads a directory written by [`write_feature_set`].
pub fn read_feature_set(dir: &Path) -> Result<FeatureSet> {
    let bin = fs::read(dir.join("features.bin"))?;
    if bin.len() < HEADER_LEN || &bin[..8] != MAGIC {
        return Err(Error::data("features.bin: bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bin[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != FEATURE_CACHE_VERSION {
        return Err(Error::Schema {
            expected: FEATURE_CACHE_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    let dims = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
    let count = u64::from_le_bytes(bin[24..32].try_into().expect("8 bytes")) as usize;
    let per = dims.0 * dims.1 * dims.2;
    if bin.len() != HEADER_LEN + count * per * 8 {
        return Err(Error::data("features.bin: length does not match header"));
    }

    let text = fs::read_to_string(dir.join("labels.csv"))?;
    let body = strip_schema(&text, LABELS_SCHEMA, FEATURE_CACHE_VERSION)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut epochs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if i >= count || rec.len() != 6 {
            return Err(Error::data(format!("labels.csv row {i} malformed or beyond feature count")));
        }
        let num = |k: usize| -> Result<f64> { rec[k].parse().map_err(|_| Error::data(format!("labels.csv row {i}: bad number"))) };
        let start = HEADER_LEN + i * per * 8;
        let values: Vec<f64> = bin[start..start + per * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("features.bin: non-finite value in epoch {i}")));
        }
        epochs.push(FeatureEpoch {
            values: Tensor3::from_vec(dims, values)?,
            epoch_index: num(0)? as usize,
            session_index: num(1)? as usize,
        });
        states.push(State::parse(&rec[2])?);
        targets.push([num(3)?, num(4)?, num(5)?]);
    }
    if epochs.len() != count {
        return Err(Error::data("labels.csv has fewer rows than features.bin"));
    }
    FeatureSet::new(epochs, targets, states)
}

/// Long-format export: one row per (epoch, channel, band, bin).
pub fn write_feature_csv(path: &Path, set: &FeatureSet) -> Result<()> {
    let mut out = schema_line(CSV_SCHEMA, FEATURE_CACHE_VERSION).into_bytes();
    writeln!(out, "epoch_index,channel,band,bin,value")?;
    let (nc, nb, nt) = set.dims();
    for e in &set.epochs {
        for c in 0..nc {
            for b in 0..nb {
                for t in 0..nt {
                    writeln!(out, "{},{c},{b},{t},{}", e.epoch_index, sig9(e.values.get(c, b, t)))?;
                }
            }
        }
    }
    write_atomic(path, &out)
}
