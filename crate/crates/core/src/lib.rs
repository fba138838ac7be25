//! Synthetic ECoG trajectory-decoding stack: session generation, wavelet
//! features, multilinear and neural decoders, dataset-size experiments,
//! learning-curve fitting and manifold diagnostics.

pub mod curve;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod linear;
pub mod manifold;
pub mod neural;
pub mod numerics;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use numerics::{Matrix, Tensor3};
