use std::io::Write as _;
use std::path::Path;

use super::{CurvePoint, ExperimentKind, ExperimentPlan, ExperimentResult, SessionRange};
use crate::error::{Error, Result};
use crate::io::{schema_line, sig9, strip_schema, write_atomic};

pub const RESULTS_SCHEMA: &str = "experiment-results";
const RESULTS_VERSION: u32 = 1;
const HEADER: &str = "kind,step,x_minutes,window,repetition,mean_cs,train_range,test_range,n_train_epochs";

fn fmt_range(r: SessionRange) -> String {
    format!("{}-{}", r.0, r.1)
}

fn parse_range(s: &str) -> Result<SessionRange> {
    let bad = || Error::data(format!("malformed session range '{s}'"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

pub fn write_results_csv(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut out = schema_line(RESULTS_SCHEMA, RESULTS_VERSION).into_bytes();
    writeln!(out, "{HEADER}")?;
    for p in &result.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            result.kind.as_str(),
            p.step,
            sig9(p.x_minutes),
            p.window.map(|w| w.to_string()).unwrap_or_default(),
            p.repetition,
            sig9(p.mean_cs),
            fmt_range(p.train_range),
            fmt_range(p.test_range),
            p.n_train_epochs
        )?;
    }
    write_atomic(path, &out)
}

/// Reads a results CSV back into its kind and points.
pub fn read_results_csv(path: &Path) -> Result<(ExperimentKind, Vec<CurvePoint>)> {
    let text = std::fs::read_to_string(path)?;
    let body = strip_schema(&text, RESULTS_SCHEMA, RESULTS_VERSION)?;
    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != HEADER {
        return Err(Error::data(format!("unexpected results header '{}'", header.join(","))));
    }
    let mut kind = None;
    let mut points = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| Error::data(format!("bad number '{}'", &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse::<usize>().map_err(|_| Error::data(format!("bad integer '{}'", &rec[i])))
        };
        let k = ExperimentKind::parse(&rec[0]).map_err(|_| Error::data(format!("bad kind '{}'", &rec[0])))?;
        if kind.is_some_and(|prev| prev != k) {
            return Err(Error::data("results file mixes experiment kinds"));
        }
        kind = Some(k);
        points.push(CurvePoint {
            step: int(1)?,
            x_minutes: num(2)?,
            window: if rec[3].is_empty() { None } else { Some(int(3)?) },
            repetition: int(4)?,
            mean_cs: num(5)?,
            train_range: parse_range(&rec[6])?,
            test_range: parse_range(&rec[7])?,
            n_train_epochs: int(8)?,
        });
    }
    let kind = kind.ok_or_else(|| Error::data("results file has no rows"))?;
    Ok((kind, points))
}

/// Writes `results.csv` and `experiment.json` into `dir`.
pub fn write_experiment(dir: &Path, plan: &ExperimentPlan, result: &ExperimentResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_results_csv(&dir.join("results.csv"), result)?;
    let summary = serde_json::json!({
        "schema": format!("experiment/{RESULTS_VERSION}"),
        "plan": plan,
        "plan_hash": result.plan_hash,
        "kind": result.kind,
        "decoder": result.decoder,
        "excluded_sessions": result.excluded_sessions,
        "curve": result.curve(),
        "trend": result.trend,
    });
    write_atomic(&dir.join("experiment.json"), &serde_json::to_vec_pretty(&summary)?)
}
