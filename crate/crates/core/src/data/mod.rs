//! Clip segmentation, the clip manifest and the synthetic clip generator.

pub mod manifest;
pub mod segment;
pub mod synth;

pub use manifest::{load_manifest, load_sample, ClipManifestRecord, Manifest, Method, Sample, Split};
pub use segment::segment_clips;
pub use synth::{synth_generate, SynthConfig};
