//! Real-time inviscid flow on a sphere with embedded obstacles, compact
//! aeroacoustic radiation and additive audio synthesis.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustics;
pub mod band_fields;
pub mod engine;
pub mod error;
pub mod fluid;
pub mod geometry;
pub mod mms;
pub mod synth;

pub use error::{Error, Result};
