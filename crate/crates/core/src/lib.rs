//! Unsupervised time-series anomaly detection in two stages.
//!
//! Screening renders rolling windows as line-plot rasters, embeds each into
//! a grid of patch features, and scores every patch by how poorly it matches
//! patches of the other windows. Verification sends one annotated plot of the
//! whole series, with the screening proposals listed in the prompt, to a
//! multimodal model and keeps the intervals it confirms.

pub mod embed;
mod error;
pub mod eval;
pub mod ingest;
pub mod interval;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod screen;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
pub use interval::{DetectionSet, Interval};
pub use par::Parallelism;
