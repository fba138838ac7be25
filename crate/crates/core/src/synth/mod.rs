//! Synthetic multi-session ECoG-like recordings.
//!
//! Each session mixes band-limited oscillators whose envelopes follow the
//! behavioural state and the optimal movement direction (cosine tuning),
//! plus broadband background and sensor noise. A per-session adaptation
//! multiplier scales the task-related modulation and moves the state-specific
//! channel subsets from an overlapping early layout to a separated late one;
//! the channel mixing drifts by a small orthogonal step per session.

mod artifacts;
mod config;
mod generate;
mod session;

pub use artifacts::inject_artifacts;
pub use config::{linear_schedule, BandModulation, BandProfiles, GeneratorConfig, State};
pub use generate::{generate_dataset, generate_session, optimal_direction};
pub use session::{
    ArtifactSegment, GridLayout, GridPosition, Session, SessionManifest, IMPLANT_COLS, IMPLANT_ROWS, N_IMPLANTS,
    SESSION_SCHEMA_VERSION,
};
