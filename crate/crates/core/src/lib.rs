//! Quantum trajectories of a resonantly driven two-level atom whose fluorescence is
//! detected after spectral filtering.
//!
//! The non-Markovian engine ([`engine`]) evolves the atom alone, conditioning it on
//! photodetections in frequency-selective channels ([`channels`]). A Markovian
//! atom-plus-cavity model ([`cascaded`]) and master-equation references ([`oracles`])
//! provide independent checks; [`analysis`] turns detection records into waiting-time
//! statistics.

pub mod analysis;
pub mod atom;
pub mod batch;
pub mod cascaded;
pub mod channels;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod oracles;
pub mod output;

pub use num_complex::Complex64;

pub use atom::{AtomParams, AtomState};
pub use channels::ChannelResponse;
pub use engine::{DetectionRecord, MemoryWindow};
pub use error::{Error, Result};
pub use output::TrajectoryOutput;
