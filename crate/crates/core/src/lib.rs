//! Echo-aware sound source localization with two microphones near a
//! reflective surface.
//!
//! The pipeline simulates shoebox rooms with the image-source method,
//! extracts interchannel level/phase features, regresses the echo-time
//! triple (TDOA, image TDOA, TDOE) with a small fully connected network and
//! aggregates those delays over the virtual four-microphone array formed by
//! the real pair and its mirror image across the close surface. The
//! aggregated angular spectrum yields both azimuth and elevation.
//!
//! Module map:
//!
//! - [`geometry`]: points, rooms, mirror images, closed-form delays and angles
//! - [`roomsim`]: scene sampling, image-source RIRs, RT60
//! - [`dsp`]: signals, STFT, ILD/IPD features, WAV I/O
//! - [`baseline`]: GCC-PHAT TDOA estimation
//! - [`model`]: the MLP regressor, Adam training, model files
//! - [`aggregate`]: Gaussian local spectra and the global DOA search
//! - [`dataset`]: seeded record generation and the binary dataset format
//! - [`eval`]: metrics and report tables

pub mod aggregate;
pub mod baseline;
pub mod dataset;
pub mod dsp;
mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod roomsim;

pub use error::{Error, Result};
pub use geometry::{Constants, Doa, EchoTimes, FaceId, MicPair, RoomBox, Vec3, VirtualArray};
pub use roomsim::{Rir, SceneSpec};
pub use dsp::{FeatureVector, Signal, Spectrogram};
pub use model::{MlpParams, Model, Normalizer, TrainConfig};
pub use aggregate::{AngularSpectrumMap, DoaGrid, GaussianLocal};
pub use dataset::{Condition, Dataset, DatasetRecord};
pub use eval::EvalReport;
