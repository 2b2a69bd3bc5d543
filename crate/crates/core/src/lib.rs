//! Dense correspondence with per-pixel affine transformations.
//!
//! Every source pixel carries a 2x3 affine map into the target image. The
//! matcher alternates a filter-based discrete search over superpixel label
//! candidates with a closed-form moving-least-squares smoothing step, tied
//! together by a quadratic penalty whose weight grows each iteration, and
//! runs coarse to fine over an image pyramid.

pub mod continuous;
pub mod discrete;
pub mod eaf;
pub mod eval;
pub mod flo;
mod error;
pub mod features;
pub mod image;
pub mod pipeline;
pub mod slic;
pub mod synth;
pub mod textures;
pub mod viz;

pub use error::{Error, Result};
