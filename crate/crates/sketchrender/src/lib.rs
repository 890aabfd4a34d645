//! Two-stage sketch-then-render image synthesis.
//!
//! Stage one grows a GAN from 4x4 to full resolution to produce binary
//! structural sketches; stage two renders each sketch into a color image
//! with a U-shaped translator trained against a patch discriminator.
//! Everything runs on a tiny in-crate tensor engine, so the whole
//! pipeline — training included — is deterministic given its seeds and
//! needs nothing beyond a CPU.

pub mod data;
pub mod error;
pub mod gray;
pub mod metrics;
pub mod nn;
pub mod progressive;
pub mod render;
pub mod sketch;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
