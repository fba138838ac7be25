use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Behavioural state of one label epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    Idle,
    LeftHand,
    RightHand,
}

impl State {
    pub const ALL: [State; 3] = [State::Idle, State::LeftHand, State::RightHand];

    pub fn as_str(self) -> &'static str {
        match self {
            State::Idle => "idle",
            State::LeftHand => "left_hand",
            State::RightHand => "right_hand",
        }
    }

    pub fn parse(s: &str) -> Result<State> {
        match s {
            "idle" => Ok(State::Idle),
            "left_hand" => Ok(State::LeftHand),
            "right_hand" => Ok(State::RightHand),
            other => Err(Error::data(format!("unknown state label `{other}`"))),
        }
    }

    pub fn is_hand(self) -> bool {
        !matches!(self, State::Idle)
    }
}

/// Amplitude modulation of one oscillation band while a state is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandModulation {
    /// Centre frequency in Hz.
    pub freq: f64,
    /// Relative amplitude increase of the band while the state is active.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandProfiles {
    pub idle: Vec<BandModulation>,
    pub left_hand: Vec<BandModulation>,
    pub right_hand: Vec<BandModulation>,
}

impl BandProfiles {
    pub fn for_state(&self, state: State) -> &[BandModulation] {
        match state {
            State::Idle => &self.idle,
            State::LeftHand => &self.left_hand,
            State::RightHand => &self.right_hand,
        }
    }

    /// Sorted, de-duplicated list of every modulated frequency.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut f: Vec<f64> = State::ALL
            .iter()
            .flat_map(|&s| self.for_state(s).iter().map(|b| b.freq))
            .collect();
        f.sort_by(|a, b| a.partial_cmp(b).unwrap());
        f.dedup();
        f
    }
}

impl Default for BandProfiles {
    fn default() -> Self {
        let bm = |freq, depth| BandModulation { freq, depth };
        BandProfiles {
            idle: vec![bm(10.0, 0.8)],
            left_hand: vec![bm(30.0, 1.0), bm(80.0, 1.5)],
            right_hand: vec![bm(30.0, 1.0), bm(110.0, 1.5)],
        }
    }
}

/// Parameters of the synthetic multi-session recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Hz.
    pub sampling_rate: f64,
    pub n_channels: usize,
    /// Seconds per session.
    pub session_length: f64,
    pub n_sessions: usize,
    pub band_profiles: BandProfiles,
    /// Depth of cosine tuning of the band envelopes to the movement direction.
    pub direction_gain: f64,
    /// Fraction of channels carrying each state's pattern.
    pub subset_fraction: f64,
    /// Per-session relative size of the orthogonal perturbation of the
    /// channel mixing matrix.
    pub mixing_drift_rate: f64,
    /// Per-session multiplier on state-dependent source amplitude. Entry `i`
    /// applies to session `i`; a zero multiplier removes all task signal.
    pub adaptation_schedule: Vec<f64>,
    /// How far the state-specific channel subsets and tuning vectors move
    /// from their early to their late configuration at the top of the
    /// schedule, in `[0, 1]`.
    pub pattern_rotation: f64,
    /// Gain of a direction code on a shared channel subset whose sign flips
    /// between left and right hand. Zero keeps the target map linear.
    pub interaction_gain: f64,
    /// Amplitude of the broadband background activity of each source.
    pub background_amplitude: f64,
    /// Standard deviation of white sensor noise.
    pub noise_floor: f64,
    /// Mean duration of a state block in seconds.
    pub mean_block_seconds: f64,
    /// Simulated hand speed in workspace units per second.
    pub hand_speed: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let n_sessions = 43;
        GeneratorConfig {
            sampling_rate: 586.0,
            n_channels: 64,
            session_length: 420.0,
            n_sessions,
            band_profiles: BandProfiles::default(),
            direction_gain: 0.8,
            subset_fraction: 0.25,
            mixing_drift_rate: 0.02,
            adaptation_schedule: linear_schedule(n_sessions, 0.6, 1.4),
            pattern_rotation: 0.5,
            interaction_gain: 0.0,
            background_amplitude: 1.0,
            noise_floor: 0.5,
            mean_block_seconds: 10.0,
            hand_speed: 0.4,
            seed: 0,
        }
    }
}

/// `n` multipliers evenly spaced from `start` to `end`.
pub fn linear_schedule(n: usize, start: f64, end: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl GeneratorConfig {
    /// A stationary world: flat schedule, no drift, no pattern rotation.
    pub fn stationary(n_sessions: usize, session_length: f64, seed: u64) -> Self {
        GeneratorConfig {
            n_sessions,
            session_length,
            adaptation_schedule: vec![1.0; n_sessions],
            mixing_drift_rate: 0.0,
            pattern_rotation: 0.0,
            seed,
            ..GeneratorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0) || !self.sampling_rate.is_finite() {
            return Err(Error::config("sampling_rate must be positive"));
        }
        if !(self.session_length > 1.0) {
            return Err(Error::config("session_length must exceed 1 s"));
        }
        if self.n_channels == 0 {
            return Err(Error::config("n_channels must be positive"));
        }
        if self.n_sessions == 0 {
            return Err(Error::config("n_sessions must be positive"));
        }
        if self.adaptation_schedule.len() != self.n_sessions {
            return Err(Error::config(format!(
                "adaptation_schedule has {} entries for {} sessions",
                self.adaptation_schedule.len(),
                self.n_sessions
            )));
        }
        if self.adaptation_schedule.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::config("adaptation_schedule entries must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.mixing_drift_rate) {
            return Err(Error::config("mixing_drift_rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.pattern_rotation) {
            return Err(Error::config("pattern_rotation must lie in [0, 1]"));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::config("subset_fraction must lie in (0, 1]"));
        }
        if !(self.direction_gain >= 0.0 && self.direction_gain < 1.0) {
            return Err(Error::config("direction_gain must lie in [0, 1)"));
        }
        if self.interaction_gain < 0.0 || self.background_amplitude < 0.0 || self.noise_floor < 0.0 {
            return Err(Error::config("gains and amplitudes must be non-negative"));
        }
        if !(self.mean_block_seconds > 0.0) || !(self.hand_speed > 0.0) {
            return Err(Error::config("mean_block_seconds and hand_speed must be positive"));
        }
        let nyquist = self.sampling_rate / 2.0;
        for &s in &State::ALL {
            for b in self.band_profiles.for_state(s) {
                if !(b.freq > 0.0 && b.freq < nyquist) {
                    return Err(Error::config(format!(
                        "band {} Hz outside (0, {nyquist}) Hz",
                        b.freq
                    )));
                }
                if b.depth < 0.0 {
                    return Err(Error::config("band depth must be non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn samples_per_session(&self) -> usize {
        (self.session_length * self.sampling_rate).round() as usize
    }

    /// Label epochs are 100 ms long.
    pub fn label_step(&self) -> f64 {
        self.sampling_rate / 10.0
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Fraction of the way from the early to the late pattern configuration
    /// reached at `session_index`.
    pub(crate) fn rotation_progress(&self, session_index: usize) -> f64 {
        let sched = &self.adaptation_schedule;
        let first = sched[0];
        let max = sched.iter().cloned().fold(f64::MIN, f64::max);
        if max - first <= 1e-12 {
            return 0.0;
        }
        let p = ((sched[session_index] - first) / (max - first)).clamp(0.0, 1.0);
        self.pattern_rotation * p
    }
}
