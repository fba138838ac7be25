use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use ecoglc_core::curve::{fit_experiment, write_curve_csv, write_fit_json};
use ecoglc_core::features::{
    default_frequencies, extract_features, read_feature_set, repair_artifacts, write_feature_set, FeatureSet,
    WaveletBank,
};
use ecoglc_core::harness::{
    fit_decoder, read_results_csv, run_experiment, write_experiment, Dataset, DecoderSpec, ExperimentKind,
    Selection,
};
use ecoglc_core::io::{schema_line, sig9, strip_schema, write_atomic};
use ecoglc_core::manifold::{
    ess_local_id, pca_embed_2d, read_embedding_csv, read_points_csv, svm_separability, twonn_id, write_embedding_csv,
    write_id_csv, EssCalibration, IdEstimate, PointCloud, ID_SCHEMA,
};
use ecoglc_core::rng::{derive_seed, label};
use ecoglc_core::stats::linear_trend;
use ecoglc_core::synth::{generate_session, linear_schedule, GridLayout, Session, State};

use crate::config::{RunConfig, SvmSpace};
use crate::output::{hash_input, read_manifest, FileHash, RunManifest, Staging, MANIFEST_FILE, MANIFEST_SCHEMA};
use crate::{Command, UsageError};

const SEPARABILITY_SCHEMA: &str = "separability";
const REPORT_SCHEMA: &str = "report";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Folds command-line flags into the configuration so the snapshot alone
/// reproduces the run.
pub fn resolve(mut cfg: RunConfig, command: &Command) -> Result<RunConfig> {
    cfg.generator.seed = cfg.seed;
    cfg.experiment.seed = cfg.seed;
    match command {
        Command::Gen(a) => {
            let g = &mut cfg.generator;
            if let Some(len) = a.length {
                g.session_length = len;
            }
            if let Some(c) = a.channels {
                g.n_channels = c;
            }
            if let Some(n) = a.sessions {
                g.n_sessions = n;
            }
            if a.stationary {
                g.adaptation_schedule = vec![1.0; g.n_sessions];
                g.mixing_drift_rate = 0.0;
                g.pattern_rotation = 0.0;
            } else if g.adaptation_schedule.len() != g.n_sessions {
                let first = g.adaptation_schedule.first().copied().unwrap_or(0.6);
                let last = g.adaptation_schedule.last().copied().unwrap_or(1.4);
                g.adaptation_schedule = linear_schedule(g.n_sessions, first, last);
            }
        }
        Command::Train(a) => {
            if let Some(name) = &a.decoder {
                if name != cfg.decoder.name() {
                    cfg.decoder = DecoderSpec::from_name(name)?;
                }
            }
        }
        Command::Experiment(a) => {
            if let Some(name) = &a.decoder {
                if name != cfg.decoder.name() {
                    cfg.decoder = DecoderSpec::from_name(name)?;
                }
            }
            cfg.experiment.kind = ExperimentKind::parse(&a.kind)?;
            cfg.experiment.decoder = cfg.decoder.clone();
        }
        Command::Idim(a) => {
            if let Some(k) = a.k {
                cfg.manifold.k = k;
            }
        }
        Command::Embed(a) => {
            if let Some(space) = &a.space {
                cfg.manifold.svm_space = if space == "features" { SvmSpace::Features } else { SvmSpace::Embedding };
            }
        }
        Command::Features(_) | Command::FitCurve(_) | Command::Report(_) => {}
    }
    Ok(cfg)
}

/// Runs `command` into a staged directory and commits it to `out`.
pub fn execute(command: &Command, cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let staging = Staging::new(out)?;
    let dir = staging.path();
    let inputs = match command {
        Command::Gen(_) => gen(cfg, dir)?,
        Command::Features(a) => features(cfg, &a.data, dir)?,
        Command::Train(a) => train(cfg, &a.features, &a.train, &a.test, dir)?,
        Command::Experiment(a) => experiment(cfg, &a.features, dir)?,
        Command::FitCurve(a) => fit_curve(cfg, &a.results, dir)?,
        Command::Idim(a) => idim(cfg, &a.method, a.points.as_deref(), a.features.as_deref(), dir)?,
        Command::Embed(a) => embed(cfg, a.features.as_deref(), a.embedding.as_deref(), dir)?,
        Command::Report(a) => report(&a.inputs, dir)?,
    };
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
        config: cfg.clone(),
        seed: cfg.seed,
        inputs,
        outputs: Vec::new(),
    };
    staging.commit(manifest)
}

fn session_dir(i: usize) -> String {
    format!("session_{i:03}")
}

/// Sub-directories named `session_*`, in name order.
fn session_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(usage(format!("{} is not a directory", root.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("session_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(ecoglc_core::Error::InsufficientData(format!("no sessions under {}", root.display())).into());
    }
    Ok(dirs)
}

fn gen(cfg: &RunConfig, dir: &Path) -> Result<Vec<FileHash>> {
    let g = &cfg.generator;
    g.validate()?;
    (0..g.n_sessions).into_par_iter().try_for_each(|i| -> Result<()> {
        let s = generate_session(g, i)?;
        s.write_dir(&dir.join(session_dir(i)))?;
        Ok(())
    })?;
    write_atomic(&dir.join("generator.json"), &serde_json::to_vec_pretty(g)?)?;
    println!("generated {} session(s) of {} s", g.n_sessions, g.session_length);
    Ok(Vec::new())
}

fn features(cfg: &RunConfig, data: &Path, dir: &Path) -> Result<Vec<FileHash>> {
    let dirs = session_dirs(data)?;
    let opts = &cfg.features;
    let mut layout: Option<GridLayout> = None;
    let mut bank_info = None;
    for d in &dirs {
        let mut session = Session::read_dir(d).with_context(|| format!("reading {}", d.display()))?;
        if opts.repair {
            let repaired = repair_artifacts(&session, opts.z_threshold)?;
            session = repaired.session;
        }
        let freqs = opts.frequencies.clone().unwrap_or_else(default_frequencies);
        let bank = WaveletBank::new(session.sampling_rate, &freqs, opts.cycles)?;
        let set = extract_features(&session, &bank)?;
        write_feature_set(&dir.join(d.file_name().expect("named")), &set)?;
        if layout.is_none() {
            layout = Some(session.grid_layout.clone());
            bank_info = Some(serde_json::json!({
                "sampling_rate": session.sampling_rate,
                "frequencies": freqs,
                "cycles": opts.cycles,
                "dims": set.dims(),
            }));
        }
    }
    write_atomic(&dir.join("layout.json"), &serde_json::to_vec_pretty(&layout.expect("at least one session"))?)?;
    let mut info = bank_info.expect("at least one session");
    info["n_sessions"] = dirs.len().into();
    write_atomic(&dir.join("features.json"), &serde_json::to_vec_pretty(&info)?)?;
    println!("extracted features for {} session(s)", dirs.len());
    Ok(vec![hash_input(data)?])
}

fn load_dataset(root: &Path) -> Result<Dataset> {
    let dirs = session_dirs(root)?;
    let layout: GridLayout = serde_json::from_slice(
        &fs::read(root.join("layout.json")).with_context(|| format!("{} is not a feature directory", root.display()))?,
    )?;
    let sessions: Vec<FeatureSet> = dirs
        .iter()
        .map(|d| read_feature_set(d).with_context(|| format!("reading {}", d.display())))
        .collect::<Result<_>>()?;
    Ok(Dataset::new(sessions, layout)?)
}

fn parse_range(s: &str, n: usize) -> Result<(usize, usize)> {
    let bad = || usage(format!("session range '{s}' must look like 3-7 within 1..={n}"));
    let (a, b) = match s.split_once('-') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let v = s.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if a == 0 || a > b || b > n {
        return Err(bad());
    }
    Ok((a, b))
}

fn select(data: &Dataset, r: (usize, usize)) -> Vec<Selection> {
    (r.0 - 1..r.1).map(|s| Selection { session: s, epochs: data.sessions[s].hand_indices() }).collect()
}

fn train(cfg: &RunConfig, features: &Path, train: &str, test: &str, dir: &Path) -> Result<Vec<FileHash>> {
    let data = load_dataset(features)?;
    let tr = parse_range(train, data.len())?;
    let te = parse_range(test, data.len())?;
    if !(tr.1 < te.0 || te.1 < tr.0) {
        return Err(usage("training and test ranges overlap"));
    }
    let train_sel = select(&data, tr);
    let test_sel = select(&data, te);
    let seed = derive_seed(cfg.seed, &[label("train")]);
    let model = fit_decoder(&cfg.decoder, &data.sessions, &data.layout, &train_sel, seed)?;
    let cs = model.evaluate(&data.sessions, &test_sel)?;
    model.write(&dir.join("model"))?;
    let count = |s: &[Selection]| s.iter().map(|x| x.epochs.len()).sum::<usize>();
    let metrics = serde_json::json!({
        "schema": "train-metrics/1",
        "decoder": cfg.decoder.name(),
        "train_range": [tr.0, tr.1],
        "test_range": [te.0, te.1],
        "n_train_epochs": count(&train_sel),
        "n_test_epochs": count(&test_sel),
        "mean_cs": cs,
    });
    write_atomic(&dir.join("metrics.json"), &serde_json::to_vec_pretty(&metrics)?)?;
    println!("{}: sessions {}-{} → {}-{}: mean CS {cs:.4}", cfg.decoder.name(), tr.0, tr.1, te.0, te.1);
    Ok(vec![hash_input(features)?])
}

fn experiment(cfg: &RunConfig, features: &Path, dir: &Path) -> Result<Vec<FileHash>> {
    let data = load_dataset(features)?;
    let plan = &cfg.experiment;
    let result = run_experiment(plan, &data)?;
    write_experiment(dir, plan, &result)?;
    for (x, cs) in result.curve() {
        println!("{:>10.3} min  CS {cs:.4}", x);
    }
    if let Some(t) = &result.trend {
        println!("trend: slope {:.5} intercept {:.4} r {:.3} p {:.3}", t.slope, t.intercept, t.r, t.p_value);
    }
    Ok(vec![hash_input(features)?])
}

fn fit_curve(cfg: &RunConfig, results: &Path, dir: &Path) -> Result<Vec<FileHash>> {
    let (kind, points) = read_results_csv(results)?;
    if kind == ExperimentKind::Translation {
        return Err(usage("fit-curve needs an increase experiment, not a translation run"));
    }
    let fit = fit_experiment(&points, cfg.curve.weighting)?;
    write_fit_json(&dir.join("fit.json"), &fit)?;
    let lo = points.iter().map(|p| p.x_minutes).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.x_minutes).fold(0.0, f64::max);
    write_curve_csv(&dir.join("curve.csv"), &fit, lo, hi, cfg.curve.samples.max(2))?;
    println!("a = {:.4}, b = {:.4}, c = {:.4}, sse = {:.3e}", fit.a, fit.b, fit.c, fit.residual_sse);
    Ok(vec![hash_input(results)?])
}

fn estimate(cfg: &RunConfig, method: &str, points: &ecoglc_core::Matrix) -> Result<IdEstimate> {
    let m = &cfg.manifold;
    Ok(match method {
        "twonn" => twonn_id(points, m.discard_fraction)?,
        _ => {
            let cal = EssCalibration::load_or_build(
                &m.cache_dir(),
                m.calibration_d_max,
                m.calibration_samples,
                m.calibration_seed,
            )?;
            ess_local_id(points, m.k, &cal)?
        }
    })
}

fn idim(
    cfg: &RunConfig,
    method: &str,
    points: Option<&Path>,
    features: Option<&Path>,
    dir: &Path,
) -> Result<Vec<FileHash>> {
    let (rows, input) = match (points, features) {
        (Some(p), None) => {
            let x = read_points_csv(p)?;
            (vec![(0, estimate(cfg, method, &x)?)], p)
        }
        (None, Some(f)) => {
            let data = load_dataset(f)?;
            let mut rows = Vec::new();
            for set in &data.sessions {
                let cloud = PointCloud::from_sessions(&[set], cfg.manifold.subsample_step, true)?;
                let s = set.epochs.first().map(|e| e.session_index).unwrap_or(0);
                rows.push((s, estimate(cfg, method, &cloud.points)?));
            }
            (rows, f)
        }
        _ => return Err(usage("idim needs exactly one of --points or --features")),
    };
    write_id_csv(&dir.join("id.csv"), &rows)?;
    for (s, e) in &rows {
        println!("session {s}: {} = {:.3}", e.method.as_str(), e.global_value);
    }
    Ok(vec![hash_input(input)?])
}

fn embed(cfg: &RunConfig, features: Option<&Path>, embedding: Option<&Path>, dir: &Path) -> Result<Vec<FileHash>> {
    let mut table = schema_line(SEPARABILITY_SCHEMA, 1);
    table.push_str("session_index,n_points,accuracy,w0,w1,b\n");
    let mut per_session = Vec::new();
    let input = match (features, embedding) {
        (None, Some(path)) => {
            let (coords, labels) = read_embedding_csv(path)?;
            let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some_and(|s| s.is_hand())).collect();
            let x = ecoglc_core::Matrix::from_fn(keep.len(), 2, |r, c| coords[(keep[r], c)]);
            let y: Vec<bool> = keep.iter().map(|&i| labels[i] == Some(State::RightHand)).collect();
            let fit = svm_separability(&x, &y)?;
            writeln!(table, "0,{},{},{},{},{}", keep.len(), sig9(fit.accuracy), sig9(fit.w[0]), sig9(fit.w[1]), sig9(fit.b))?;
            per_session.push((0usize, fit.accuracy));
            path
        }
        (Some(root), None) => {
            let data = load_dataset(root)?;
            let mut all_coords = Vec::new();
            let (mut labels, mut epochs, mut sessions) = (Vec::new(), Vec::new(), Vec::new());
            for set in &data.sessions {
                let cloud = PointCloud::from_sessions(&[set], cfg.manifold.subsample_step, true)?;
                let coords = pca_embed_2d(&cloud.points)?;
                let states = cloud.labels.clone().expect("labelled cloud");
                let y: Vec<bool> = states.iter().map(|&s| s == State::RightHand).collect();
                let s = cloud.session_index[0];
                let space = match cfg.manifold.svm_space {
                    SvmSpace::Embedding => &coords,
                    SvmSpace::Features => &cloud.points,
                };
                match svm_separability(space, &y) {
                    Ok(fit) => {
                        let (w0, w1) = (fit.w[0], fit.w.get(1).copied().unwrap_or(0.0));
                        writeln!(table, "{s},{},{},{},{},{}", y.len(), sig9(fit.accuracy), sig9(w0), sig9(w1), sig9(fit.b))?;
                        per_session.push((s, fit.accuracy));
                    }
                    Err(ecoglc_core::Error::Contract(msg)) => log::warn!("session {s} skipped: {msg}"),
                    Err(e) => return Err(e.into()),
                }
                all_coords.extend_from_slice(coords.data());
                labels.extend(states);
                epochs.extend(cloud.epoch_index.iter().copied());
                sessions.extend(cloud.session_index.iter().copied());
            }
            let n = labels.len();
            let coords = ecoglc_core::Matrix::from_vec(n, 2, all_coords)?;
            let combined = PointCloud {
                points: coords.clone(),
                labels: Some(labels),
                epoch_index: epochs,
                session_index: sessions,
                subsample_step: cfg.manifold.subsample_step,
            };
            write_embedding_csv(&dir.join("embedding.csv"), &combined, &coords)?;
            root
        }
        _ => return Err(usage("embed needs exactly one of --features or --embedding")),
    };
    write_atomic(&dir.join("separability.csv"), table.as_bytes())?;
    let trend = (per_session.len() >= 3).then(|| {
        let x: Vec<f64> = (0..per_session.len()).map(|i| i as f64).collect();
        let y: Vec<f64> = per_session.iter().map(|p| p.1).collect();
        linear_trend(&x, &y)
    });
    let summary = serde_json::json!({
        "schema": "separability/1",
        "space": cfg.manifold.svm_space,
        "sessions": per_session.iter().map(|(s, a)| serde_json::json!({"session_index": s, "accuracy": a})).collect::<Vec<_>>(),
        "trend": trend,
    });
    write_atomic(&dir.join("separability.json"), &serde_json::to_vec_pretty(&summary)?)?;
    for (s, a) in &per_session {
        println!("session {s}: accuracy {a:.3}");
    }
    Ok(vec![hash_input(input)?])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Numeric column `col` of a schema-checked CSV.
fn csv_column(path: &Path, schema: &str, col: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let body = strip_schema(&text, schema, 1).with_context(|| path.display().to_string())?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let idx = reader
        .headers()?
        .iter()
        .position(|h| h == col)
        .ok_or_else(|| ecoglc_core::Error::Data(format!("{} has no column {col}", path.display())))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        out.push(rec[idx].parse::<f64>().map_err(|_| ecoglc_core::Error::Data(format!("bad value in {}", path.display())))?);
    }
    Ok(out)
}

fn json_with_schema(path: &Path, schema: &str) -> Result<serde_json::Value> {
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)?;
    let found = v.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
    if found != schema {
        return Err(ecoglc_core::Error::Schema { expected: schema.into(), found: found.into() })
            .with_context(|| path.display().to_string());
    }
    Ok(v)
}

fn report(inputs: &[PathBuf], dir: &Path) -> Result<Vec<FileHash>> {
    let mut rows: Vec<(String, String, String, f64)> = Vec::new();
    let mut hashes = Vec::new();
    for input in inputs {
        let manifest = read_manifest(&input.join(MANIFEST_FILE))?;
        hashes.push(hash_input(input)?);
        let src = input.display().to_string();
        let mut push = |cmd: &str, metric: &str, value: f64| rows.push((src.clone(), cmd.into(), metric.into(), value));
        match &manifest.command {
            Command::Experiment(_) => {
                let (kind, points) = read_results_csv(&input.join("results.csv"))?;
                let summary = json_with_schema(&input.join("experiment.json"), "experiment/1")?;
                let curve: Vec<f64> = summary["curve"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|p| p[1].as_f64()).collect())
                    .unwrap_or_default();
                let cmd = format!("experiment:{}:{}", kind.as_str(), manifest.config.decoder.name());
                push(&cmd, "points", points.len() as f64);
                push(&cmd, "steps", curve.len() as f64);
                if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                    push(&cmd, "first_cs", *first);
                    push(&cmd, "last_cs", *last);
                    push(&cmd, "max_cs", curve.iter().copied().fold(f64::MIN, f64::max));
                }
                if let Some(t) = summary.get("trend").filter(|t| !t.is_null()) {
                    for k in ["slope", "intercept", "r", "p_value"] {
                        push(&cmd, k, t[k].as_f64().unwrap_or(f64::NAN));
                    }
                }
            }
            Command::FitCurve(_) => {
                let fit = json_with_schema(&input.join("fit.json"), "power-law-fit/1")?;
                for k in ["a", "b", "c", "sse"] {
                    push("fit-curve", k, fit[k].as_f64().unwrap_or(f64::NAN));
                }
            }
            Command::Idim(a) => {
                let v = csv_column(&input.join("id.csv"), ID_SCHEMA, "value")?;
                push(&format!("idim:{}", a.method), "mean_id", mean(&v));
            }
            Command::Embed(_) => {
                let v = csv_column(&input.join("separability.csv"), SEPARABILITY_SCHEMA, "accuracy")?;
                push("embed", "mean_accuracy", mean(&v));
            }
            Command::Train(_) => {
                let m = json_with_schema(&input.join("metrics.json"), "train-metrics/1")?;
                push(&format!("train:{}", manifest.config.decoder.name()), "mean_cs", m["mean_cs"].as_f64().unwrap_or(f64::NAN));
            }
            Command::Gen(_) | Command::Features(_) | Command::Report(_) => {
                push("other", "files", manifest.outputs.len() as f64);
            }
        }
    }
    let mut csv = schema_line(REPORT_SCHEMA, 1);
    csv.push_str("source,command,metric,value\n");
    for (s, c, m, v) in &rows {
        writeln!(csv, "{s},{c},{m},{}", sig9(*v))?;
        println!("{s:<30} {c:<40} {m:<14} {v:>12.5}");
    }
    write_atomic(&dir.join("summary.csv"), csv.as_bytes())?;
    Ok(hashes)
}
