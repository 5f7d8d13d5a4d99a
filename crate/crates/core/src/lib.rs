//! Voyage efficiency scoring and speed-profile optimization for a
//! fixed-route short-sea vessel.

pub mod clustering;
pub mod dtw;
pub mod efficiency;
pub mod eval;
pub mod error;
pub mod features;
pub mod hmm;
pub mod ingest;
pub mod knn;
pub mod lstm;
pub mod io;
pub mod model;
pub mod synth;
pub mod weather;

pub use error::{Error, Result};
