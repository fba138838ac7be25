use rand::Rng as _;
use rand_distr::{Distribution, Exp};

use super::session::{ArtifactSegment, Session, N_IMPLANTS};
use crate::error::{Error, Result};
use crate::rng::{label, rng_for};
use crate::stats::robust_location_scale;

/// Offset of the flat (railed) part of a connection-loss segment, in robust σ.
const FLAT_LEVEL_SIGMA: f64 = 12.0;
/// Size of the closing excursion, in robust σ.
const SPIKE_SIGMA: f64 = 20.0;
const SPIKE_SAMPLES: usize = 3;

/// Inserts connection-loss artifacts at Poisson-distributed times.
///
/// Every segment hits all channels of one implant: the signal rails to a
/// constant, then ends in a ±20σ excursion. Segments never overlap; their
/// sample ranges are appended to the manifest's artifact mask.
pub fn inject_artifacts(session: &Session, rate_per_minute: f64, duration_range: (f64, f64)) -> Result<Session> {
    if !(rate_per_minute >= 0.0) || !rate_per_minute.is_finite() {
        return Err(Error::contract("artifact rate must be non-negative"));
    }
    let (dmin, dmax) = duration_range;
    if !(dmin > 0.0 && dmax >= dmin) {
        return Err(Error::config("artifact duration range must satisfy 0 < min <= max"));
    }
    if dmax > session.duration_seconds() {
        return Err(Error::config("artifact duration range exceeds the session length"));
    }
    let mut out = session.clone();
    if rate_per_minute == 0.0 {
        return Ok(out);
    }
    let fs = session.sampling_rate;
    let n = session.n_samples();
    let n_ch = session.n_channels();
    let stats: Vec<(f64, f64)> = (0..n_ch)
        .map(|c| {
            let (med, sigma) = robust_location_scale(&session.raw.column(c));
            (med, if sigma > 0.0 { sigma } else { 1.0 })
        })
        .collect();

    let mut rng = rng_for(
        session.manifest.seed,
        &[label("artifacts"), session.session_index as u64, session.manifest.artifacts.len() as u64],
    );
    let gap = Exp::new(rate_per_minute / 60.0).expect("positive rate");
    let mut t = gap.sample(&mut rng);
    let mut next_free = session
        .manifest
        .artifacts
        .iter()
        .map(|a| a.end)
        .max()
        .unwrap_or(0);
    let mut segments = Vec::new();
    while (t * fs) < n as f64 {
        let start = ((t * fs) as usize).max(next_free);
        let duration = if dmax > dmin { rng.gen_range(dmin..=dmax) } else { dmin };
        let len = ((duration * fs).round() as usize).max(SPIKE_SAMPLES + 1);
        let end = (start + len).min(n);
        t += gap.sample(&mut rng);
        if start >= n || end <= start {
            continue;
        }
        let implant = rng.gen_range(0..N_IMPLANTS);
        let mut channels = session.grid_layout.implant_channels(implant);
        if channels.is_empty() {
            channels = (0..n_ch).collect();
        }
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for &c in &channels {
            let (med, sigma) = stats[c];
            let flat = med + sign * FLAT_LEVEL_SIGMA * sigma;
            let spike_from = end.saturating_sub(SPIKE_SAMPLES).max(start);
            for s in start..end {
                out.raw[(s, c)] = if s >= spike_from {
                    let alt = if (s - spike_from) % 2 == 0 { -sign } else { sign };
                    med + alt * SPIKE_SIGMA * sigma
                } else {
                    flat
                };
            }
        }
        next_free = end;
        segments.push(ArtifactSegment { start, end, channels });
    }
    out.manifest.artifacts.extend(segments);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_session, GeneratorConfig};

    fn session(minutes: f64) -> Session {
        let cfg = GeneratorConfig {
            n_channels: 8,
            session_length: minutes * 60.0,
            n_sessions: 1,
            adaptation_schedule: vec![1.0],
            seed: 2,
            ..GeneratorConfig::default()
        };
        generate_session(&cfg, 0).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let s = session(0.5);
        let out = inject_artifacts(&s, 0.0, (0.05, 0.2)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn poisson_count_in_range() {
        let s = session(5.0);
        let out = inject_artifacts(&s, 2.0, (0.05, 0.3)).unwrap();
        let k = out.manifest.artifacts.len();
        assert!((3..=20).contains(&k), "got {k} segments");
    }

    #[test]
    fn mask_covers_modified_samples_exactly() {
        let s = session(1.0);
        let out = inject_artifacts(&s, 6.0, (0.05, 0.2)).unwrap();
        assert!(!out.manifest.artifacts.is_empty());
        let mut flagged = vec![false; s.n_samples() * s.n_channels()];
        for seg in &out.manifest.artifacts {
            for t in seg.start..seg.end {
                for &c in &seg.channels {
                    flagged[t * s.n_channels() + c] = true;
                }
            }
        }
        for (i, (a, b)) in s.raw.data().iter().zip(out.raw.data()).enumerate() {
            if !flagged[i] {
                assert_eq!(a, b);
            } else {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn duration_longer_than_session_rejected() {
        let s = session(0.1);
        assert!(matches!(inject_artifacts(&s, 1.0, (1.0, 10.0)), Err(Error::Config(_))));
    }
}
