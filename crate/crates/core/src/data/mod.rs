//! Dataset ingestion and preparation.

mod augment;
mod image;
mod manifest;
pub mod pgm;
mod samples;
pub mod synth;

pub use augment::{augment, AugmentationConfig};
pub use image::Image2D;
pub use manifest::{load_manifest, Manifest, ManifestPatient, ManifestViews, PatientRecord, MAX_TYPICAL_SAS};
pub use samples::{enumerate_samples, View, ViewSet};
pub use synth::{generate_synthetic, GroundTruth, SynthConfig, SynthSummary};
