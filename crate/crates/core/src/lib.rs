//! Listening-deepfake detection at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff core ([`autograd`]), the
//! motion-aware attention module ([`mam`]), the audio-guided cross-attention
//! fusion block ([`agm`]), the assembled detector ([`model`]), a seeded
//! synthetic listener-clip generator ([`data`]) and the training/evaluation
//! harness ([`harness`]).

pub mod agm;
pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod harness;
pub mod mam;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
