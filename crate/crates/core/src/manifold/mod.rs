//! Intrinsic dimensionality, 2-D embeddings and left/right separability of
//! feature clouds.

mod embed;
mod id;

pub use embed::{pca_embed_2d, svm_separability, SvmFit, SVM_C, SVM_STEPS};
pub use id::{ess_local_id, twonn_id, EssCalibration, ESS_DEFAULT_D_MAX, ESS_DEFAULT_SAMPLES};

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::harness::{Dataset, ExperimentResult};
use crate::io::{schema_line, sig9, strip_schema, write_atomic};
use crate::numerics::Matrix;
use crate::stats::{correlation_p_value, pearson};
use crate::synth::State;

pub const DEFAULT_SUBSAMPLE_STEP: usize = 10;
pub const EMBEDDING_SCHEMA: &str = "embedding";
pub const ID_SCHEMA: &str = "intrinsic-dimension";
pub const POINTS_SCHEMA: &str = "points";

/// Flattened feature epochs, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Matrix,
    pub labels: Option<Vec<State>>,
    pub epoch_index: Vec<usize>,
    pub session_index: Vec<usize>,
    pub subsample_step: usize,
}

impl PointCloud {
    pub fn new(points: Matrix) -> Result<PointCloud> {
        if points.rows() < 3 {
            return Err(Error::contract("a point cloud needs at least 3 points"));
        }
        if !points.is_finite() {
            return Err(Error::data("point cloud contains non-finite values"));
        }
        let n = points.rows();
        Ok(PointCloud { points, labels: None, epoch_index: (0..n).collect(), session_index: vec![0; n], subsample_step: 1 })
    }

    /// Every `step`-th epoch of the given sessions, optionally restricted to
    /// hand states first.
    pub fn from_sessions(sets: &[&FeatureSet], step: usize, hand_only: bool) -> Result<PointCloud> {
        if step == 0 {
            return Err(Error::config("subsample step must be positive"));
        }
        let mut data = Vec::new();
        let (mut labels, mut epochs, mut sessions) = (Vec::new(), Vec::new(), Vec::new());
        let mut p = 0;
        for set in sets {
            p = set.n_features();
            let idx: Vec<usize> = if hand_only { set.hand_indices() } else { (0..set.len()).collect() };
            for &i in idx.iter().step_by(step) {
                let e = &set.epochs[i];
                data.extend_from_slice(e.values.data());
                labels.push(set.states[i]);
                epochs.push(e.epoch_index);
                sessions.push(e.session_index);
            }
        }
        let n = labels.len();
        let mut cloud = PointCloud::new(Matrix::from_vec(n, p, data)?)?;
        cloud.labels = Some(labels);
        cloud.epoch_index = epochs;
        cloud.session_index = sessions;
        cloud.subsample_step = step;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMethod {
    Twonn,
    Ess,
}

impl IdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IdMethod::Twonn => "twonn",
            IdMethod::Ess => "ess",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub method: IdMethod,
    pub global_value: f64,
    pub local_values: Option<Vec<f64>>,
    /// Neighbourhood size (2 for TwoNN).
    pub k: usize,
}

/// Exact k-nearest neighbours, ascending by distance, ties to lower index.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

pub fn knn(points: &Matrix, k: usize) -> Result<Neighbors> {
    let n = points.rows();
    if k == 0 || k >= n {
        return Err(Error::contract(format!("k = {k} must lie in 1..{n}")));
    }
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = points.row(i);
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (xi.iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            }
            d.sort_unstable_by(cmp);
            d.into_iter().map(|(s, j)| (j, s.sqrt())).unzip()
        })
        .collect();
    let (indices, distances) = rows.into_iter().unzip();
    Ok(Neighbors { indices, distances })
}

pub fn write_embedding_csv(path: &Path, cloud: &PointCloud, coords: &Matrix) -> Result<()> {
    if coords.rows() != cloud.len() || coords.cols() != 2 {
        return Err(Error::contract("embedding must have one 2-D row per point"));
    }
    let mut out = schema_line(EMBEDDING_SCHEMA, 1).into_bytes();
    writeln!(out, "epoch_index,session_index,x,y,label")?;
    for r in 0..coords.rows() {
        let label = cloud.labels.as_ref().map(|l| l[r].as_str()).unwrap_or("");
        writeln!(
            out,
            "{},{},{},{},{label}",
            cloud.epoch_index[r],
            cloud.session_index[r],
            sig9(coords[(r, 0)]),
            sig9(coords[(r, 1)])
        )?;
    }
    write_atomic(path, &out)
}

/// Reads an embedding CSV, including externally computed ones.
pub fn read_embedding_csv(path: &Path) -> Result<(Matrix, Vec<Option<State>>)> {
    let text = std::fs::read_to_string(path)?;
    let body = strip_schema(&text, EMBEDDING_SCHEMA, 1)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut xy = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::data("embedding rows need 5 fields"));
        }
        for i in [2, 3] {
            xy.push(rec[i].parse::<f64>().map_err(|_| Error::data(format!("bad coordinate '{}'", &rec[i])))?);
        }
        labels.push(if rec[4].is_empty() { None } else { Some(State::parse(&rec[4])?) });
    }
    Ok((Matrix::from_vec(labels.len(), 2, xy)?, labels))
}

/// Plain point cloud: header `x0,x1,…`, one point per row.
pub fn write_points_csv(path: &Path, points: &Matrix) -> Result<()> {
    let mut out = schema_line(POINTS_SCHEMA, 1).into_bytes();
    let header: Vec<String> = (0..points.cols()).map(|c| format!("x{c}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for r in 0..points.rows() {
        let row: Vec<String> = points.row(r).iter().map(|&v| sig9(v)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    write_atomic(path, &out)
}

pub fn read_points_csv(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path)?;
    let body = strip_schema(&text, POINTS_SCHEMA, 1)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let d = reader.headers()?.len();
    let mut data = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != d {
            return Err(Error::data("point rows have inconsistent widths"));
        }
        for f in rec.iter() {
            data.push(f.parse::<f64>().map_err(|_| Error::data(format!("bad coordinate '{f}'")))?);
        }
    }
    let n = data.len() / d.max(1);
    Matrix::from_vec(n, d, data)
}

/// One row per estimate: session_index, method, k, value.
pub fn write_id_csv(path: &Path, rows: &[(usize, IdEstimate)]) -> Result<()> {
    let mut out = schema_line(ID_SCHEMA, 1).into_bytes();
    writeln!(out, "session_index,method,k,value")?;
    for (s, est) in rows {
        writeln!(out, "{s},{},{},{}", est.method.as_str(), est.k, sig9(est.global_value))?;
    }
    write_atomic(path, &out)
}

/// Per-window mean ESS local ID of the training sessions against the
/// window's decoding CS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdCsCorrelation {
    pub window_id: Vec<f64>,
    pub window_cs: Vec<f64>,
    pub r: f64,
    pub p_value: f64,
}

pub fn window_id_correlation(
    data: &Dataset,
    result: &ExperimentResult,
    step: usize,
    k: usize,
    calibration: &EssCalibration,
) -> Result<IdCsCorrelation> {
    let curve = result.curve();
    let mut window_id = Vec::with_capacity(curve.len());
    for s in 0..curve.len() {
        let p = result
            .points
            .iter()
            .find(|p| p.step == s)
            .ok_or_else(|| Error::contract("experiment result has a gap in its steps"))?;
        let (a, b) = p.train_range;
        if a == 0 || b > data.len() {
            return Err(Error::contract("result ranges do not fit the dataset"));
        }
        let sets: Vec<&FeatureSet> = data.sessions[a - 1..b].iter().collect();
        let cloud = PointCloud::from_sessions(&sets, step, true)?;
        window_id.push(ess_local_id(&cloud.points, k, calibration)?.global_value);
    }
    let window_cs: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let r = pearson(&window_id, &window_cs);
    Ok(IdCsCorrelation { p_value: correlation_p_value(r, window_id.len()), window_id, window_cs, r })
}
