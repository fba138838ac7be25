use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{GeneratorConfig, State};
use crate::error::{Error, Result};
use crate::io::{schema_line, sig9, strip_schema, write_atomic};
use crate::numerics::Matrix;

pub const SESSION_SCHEMA_VERSION: u32 = 1;
const TARGETS_SCHEMA: &str = "targets";

/// Physical position of one channel: implant, row and column on its 8×4 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPosition {
    pub implant: usize,
    pub row: usize,
    pub col: usize,
}

impl GridPosition {
    /// Column on the combined 8×8 grid; implant 0 occupies columns 0–3.
    pub fn grid_col(&self) -> usize {
        self.implant * IMPLANT_COLS + self.col
    }
}

pub const IMPLANT_ROWS: usize = 8;
pub const IMPLANT_COLS: usize = 4;
pub const N_IMPLANTS: usize = 2;

/// Channel → electrode position map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub positions: Vec<GridPosition>,
}

impl GridLayout {
    /// Channels fill implant 0 row by row, then implant 1. Each implant's 32
    /// active electrodes form a chessboard on an 8×8 array and are stored
    /// compacted to 8×4.
    pub fn standard(n_channels: usize) -> Result<GridLayout> {
        let per_implant = IMPLANT_ROWS * IMPLANT_COLS;
        if n_channels > N_IMPLANTS * per_implant {
            return Err(Error::config(format!(
                "at most {} channels fit on two implants",
                N_IMPLANTS * per_implant
            )));
        }
        let positions = (0..n_channels)
            .map(|c| {
                let within = c % per_implant;
                GridPosition {
                    implant: c / per_implant,
                    row: within / IMPLANT_COLS,
                    col: within % IMPLANT_COLS,
                }
            })
            .collect();
        Ok(GridLayout { positions })
    }

    pub fn n_channels(&self) -> usize {
        self.positions.len()
    }

    /// Channels belonging to `implant`.
    pub fn implant_channels(&self, implant: usize) -> Vec<usize> {
        self.positions
            .iter()
            .enumerate()
            .filter(|(_, p)| p.implant == implant)
            .map(|(c, _)| c)
            .collect()
    }

    /// Checks that no two channels share an electrode and all positions are
    /// on the grid.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (c, p) in self.positions.iter().enumerate() {
            if p.implant >= N_IMPLANTS || p.row >= IMPLANT_ROWS || p.col >= IMPLANT_COLS {
                return Err(Error::config(format!("channel {c} placed off-grid at {p:?}")));
            }
            if !seen.insert(*p) {
                return Err(Error::config(format!("layout collision at {p:?} (channel {c})")));
            }
        }
        Ok(())
    }
}

/// One injected connection-loss segment, `[start, end)` in samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactSegment {
    pub start: usize,
    pub end: usize,
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema_version: u32,
    pub session_index: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: GeneratorConfig,
    #[serde(default)]
    pub artifacts: Vec<ArtifactSegment>,
}

/// One contiguous synthetic recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_index: usize,
    pub sampling_rate: f64,
    /// `n_samples × n_channels`.
    pub raw: Matrix,
    /// Optimal movement direction per 100 ms label epoch; zero while idle.
    pub epoch_targets: Vec<[f64; 3]>,
    pub epoch_states: Vec<State>,
    pub grid_layout: GridLayout,
    pub manifest: SessionManifest,
}

impl Session {
    pub fn n_samples(&self) -> usize {
        self.raw.rows()
    }

    pub fn n_channels(&self) -> usize {
        self.raw.cols()
    }

    pub fn label_step(&self) -> f64 {
        self.sampling_rate / 10.0
    }

    /// Label epoch containing sample `t`.
    pub fn label_index(&self, t: usize) -> usize {
        let e = (t as f64 * 10.0 / self.sampling_rate).floor() as usize;
        e.min(self.epoch_states.len().saturating_sub(1))
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate
    }

    /// Writes the session directory: `manifest.json`, `raw.f32le`, `targets.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&dir.join("manifest.json"), &manifest)?;

        let mut raw = Vec::with_capacity(self.raw.data().len() * 4);
        for &v in self.raw.data() {
            raw.extend_from_slice(&(v as f32).to_le_bytes());
        }
        write_atomic(&dir.join("raw.f32le"), &raw)?;

        let mut csv = Vec::new();
        {
            let mut w = BufWriter::new(&mut csv);
            w.write_all(schema_line(TARGETS_SCHEMA, SESSION_SCHEMA_VERSION).as_bytes())?;
            writeln!(w, "epoch_index,state,tx,ty,tz")?;
            for (i, (t, s)) in self.epoch_targets.iter().zip(&self.epoch_states).enumerate() {
                writeln!(
                    w,
                    "{i},{},{},{},{}",
                    s.as_str(),
                    sig9(t[0]),
                    sig9(t[1]),
                    sig9(t[2])
                )?;
            }
        }
        write_atomic(&dir.join("targets.csv"), &csv)?;
        Ok(())
    }

    /// Reads a session directory written by [`Session::write_dir`]. The raw
    /// signal comes back at 32-bit precision.
    pub fn read_dir(dir: &Path) -> Result<Session> {
        let manifest: SessionManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.schema_version != SESSION_SCHEMA_VERSION {
            return Err(Error::Schema {
                expected: SESSION_SCHEMA_VERSION.to_string(),
                found: manifest.schema_version.to_string(),
            });
        }
        let cfg = &manifest.config;
        let n_channels = cfg.n_channels;
        let mut bytes = Vec::new();
        fs::File::open(dir.join("raw.f32le"))?.read_to_end(&mut bytes)?;
        if bytes.len() % (4 * n_channels) != 0 {
            return Err(Error::data("raw.f32le length is not a multiple of the channel count"));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite sample in raw.f32le"));
        }
        let n_samples = data.len() / n_channels;
        let raw = Matrix::from_vec(n_samples, n_channels, data)?;

        let text = fs::read_to_string(dir.join("targets.csv"))?;
        let body = strip_schema(&text, TARGETS_SCHEMA, SESSION_SCHEMA_VERSION)?;
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let mut epoch_targets = Vec::new();
        let mut epoch_states = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::data(format!("targets.csv row {i} has {} fields", rec.len())));
            }
            let idx: usize = rec[0].parse().map_err(|_| Error::data("bad epoch_index"))?;
            if idx != i {
                return Err(Error::data(format!("targets.csv out of order at row {i}")));
            }
            epoch_states.push(State::parse(&rec[1])?);
            let mut t = [0.0; 3];
            for k in 0..3 {
                t[k] = rec[2 + k].parse().map_err(|_| Error::data("bad target component"))?;
            }
            epoch_targets.push(t);
        }
        Ok(Session {
            session_index: manifest.session_index,
            sampling_rate: cfg.sampling_rate,
            raw,
            epoch_targets,
            epoch_states,
            grid_layout: GridLayout::standard(n_channels)?,
            manifest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout_is_bijective_on_two_grids() {
        let l = GridLayout::standard(64).unwrap();
        l.validate().unwrap();
        assert_eq!(l.implant_channels(0).len(), 32);
        assert_eq!(l.implant_channels(1).len(), 32);
        let mut cells: Vec<_> = l.positions.iter().map(|p| (p.row, p.grid_col())).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 64);
        assert!(GridLayout::standard(65).is_err());
    }

    #[test]
    fn collision_detected() {
        let mut l = GridLayout::standard(4).unwrap();
        l.positions[1] = l.positions[0];
        assert!(matches!(l.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.123456789123), "1.23456789e-1");
        assert_eq!(sig9(-1.0), "-1.00000000e0");
    }
}
