use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::robust_location_scale;
use crate::synth::Session;

pub const DEFAULT_Z_THRESHOLD: f64 = 8.0;
/// Samples added on each side of every flagged sample.
pub const DILATION: usize = 5;

/// Outcome of [`repair_artifacts`].
#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub session: Session,
    pub mask: ArtifactMask,
}

/// Flagged `[start, end)` runs per channel, sorted and disjoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtifactMask {
    pub runs: Vec<Vec<(usize, usize)>>,
    /// Channels flagged end to end and zero-filled.
    pub unrecoverable: Vec<usize>,
}

impl ArtifactMask {
    pub fn is_empty(&self) -> bool {
        self.runs.iter().all(Vec::is_empty)
    }

    pub fn flagged_samples(&self) -> usize {
        self.runs.iter().flatten().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, channel: usize, t: usize) -> bool {
        let runs = &self.runs[channel];
        let i = runs.partition_point(|&(_, end)| end <= t);
        i < runs.len() && runs[i].0 <= t
    }
}

/// Flags samples whose robust z-score exceeds `z_threshold`, dilates the
/// flags by ±5 samples and bridges each run linearly between its clean
/// neighbours.
pub fn repair_artifacts(session: &Session, z_threshold: f64) -> Result<Repair> {
    if !(z_threshold > 0.0) {
        return Err(Error::contract("z threshold must be positive"));
    }
    let n = session.n_samples();
    let mut out = session.clone();
    let mut mask = ArtifactMask { runs: Vec::with_capacity(session.n_channels()), unrecoverable: Vec::new() };
    for c in 0..session.n_channels() {
        let x = session.raw.column(c);
        let (med, sigma) = robust_location_scale(&x);
        let mut flagged = vec![false; n];
        if sigma > 0.0 {
            for (t, v) in x.iter().enumerate() {
                if ((v - med) / sigma).abs() > z_threshold {
                    let lo = t.saturating_sub(DILATION);
                    let hi = (t + DILATION + 1).min(n);
                    flagged[lo..hi].iter_mut().for_each(|f| *f = true);
                }
            }
        }
        let runs = runs_of(&flagged);
        for &(a, b) in &runs {
            let left = a.checked_sub(1).map(|i| x[i]);
            let right = (b < n).then(|| x[b]);
            match (left, right) {
                (Some(l), Some(r)) => {
                    let span = (b - a + 1) as f64;
                    for t in a..b {
                        let w = (t + 1 - a) as f64 / span;
                        out.raw[(t, c)] = l + w * (r - l);
                    }
                }
                (Some(v), None) | (None, Some(v)) => (a..b).for_each(|t| out.raw[(t, c)] = v),
                (None, None) => {
                    log::warn!("channel {c} of session {} is unrecoverable; zero-filled", session.session_index);
                    mask.unrecoverable.push(c);
                    (a..b).for_each(|t| out.raw[(t, c)] = 0.0);
                }
            }
        }
        mask.runs.push(runs);
    }
    Ok(Repair { session: out, mask })
}

fn runs_of(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, flags.len()));
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_session, inject_artifacts, GeneratorConfig};

    fn clean(seconds: f64) -> Session {
        let mut cfg = GeneratorConfig::stationary(1, seconds, 11);
        cfg.n_channels = 8;
        generate_session(&cfg, 0).unwrap()
    }

    #[test]
    fn clean_session_untouched() {
        let s = clean(20.0);
        let r = repair_artifacts(&s, DEFAULT_Z_THRESHOLD).unwrap();
        assert!(r.mask.is_empty());
        assert_eq!(r.session, s);
    }

    #[test]
    fn injected_samples_are_flagged() {
        let s = inject_artifacts(&clean(120.0), 4.0, (0.05, 0.5)).unwrap();
        let r = repair_artifacts(&s, DEFAULT_Z_THRESHOLD).unwrap();
        let (mut hit, mut total) = (0usize, 0usize);
        for seg in &s.manifest.artifacts {
            for &c in &seg.channels {
                for t in seg.start..seg.end {
                    total += 1;
                    hit += r.mask.contains(c, t) as usize;
                }
            }
        }
        assert!(total > 0);
        assert!(hit as f64 >= 0.9 * total as f64, "recall {hit}/{total}");
    }

    #[test]
    fn bridges_stay_within_flanking_range() {
        let s = inject_artifacts(&clean(60.0), 6.0, (0.05, 0.3)).unwrap();
        let r = repair_artifacts(&s, DEFAULT_Z_THRESHOLD).unwrap();
        for (c, runs) in r.mask.runs.iter().enumerate() {
            for &(a, b) in runs {
                if a == 0 || b >= s.n_samples() {
                    continue;
                }
                let (l, rr) = (s.raw[(a - 1, c)], s.raw[(b, c)]);
                let (lo, hi) = (l.min(rr), l.max(rr));
                for t in a..b {
                    let v = r.session.raw[(t, c)];
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn fully_flagged_channel_zero_filled() {
        let mut s = clean(5.0);
        // an outlier every 11th sample; dilation by ±5 covers everything
        for t in 0..s.n_samples() {
            s.raw[(t, 2)] = if t % 11 == 0 { 1e6 } else { (t as f64).sin() };
        }
        let r = repair_artifacts(&s, DEFAULT_Z_THRESHOLD).unwrap();
        assert_eq!(r.mask.unrecoverable, vec![2]);
        assert!((0..s.n_samples()).all(|t| r.session.raw[(t, 2)] == 0.0));
        assert_eq!(r.session.raw.column(0), s.raw.column(0));
    }

    #[test]
    fn runs_are_maximal() {
        assert_eq!(runs_of(&[false, true, true, false, true]), vec![(1, 3), (4, 5)]);
        assert_eq!(runs_of(&[true; 3]), vec![(0, 3)]);
    }

    #[test]
    fn threshold_must_be_positive() {
        assert!(repair_artifacts(&clean(2.0), 0.0).is_err());
    }
}
