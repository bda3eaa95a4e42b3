//! Interactive instance segmentation driven by superpixel guidance maps and
//! a superpixel-box localization prior.
//!
//! The crate is organised bottom-up:
//!
//! - [`raster`]: images, masks, IoU, connected components, distance transform, PNG I/O
//! - [`superpixels`]: SLIC and the superpixel lookup/centroid machinery
//! - [`guidance`]: click encoders and the constrained click state
//! - [`simulator`]: seeded user-click simulation
//! - [`segmenter`]: pluggable backends; the reference one is a superpixel graph cut
//! - [`benchmark`]: clicks-to-target protocol, ablations, mask refinement, synthetic corpora
//! - [`service`]: session store behind the interactive HTTP protocol

pub mod benchmark;
pub mod error;
pub mod guidance;
pub mod raster;
pub mod segmenter;
pub mod service;
pub mod simulator;
pub mod superpixels;

pub use error::{Error, Result};
pub use guidance::{BoxMode, BoxPrior, Click, ClickState, GuidanceKind, GuidanceMap, Polarity};
pub use raster::{BinaryMask, Image, PixelPoint};
pub use segmenter::{EncoderVariant, GuidanceBundle, SegmentRequest, SegmentationResult, Segmenter};
pub use superpixels::{SuperpixelId, SuperpixelMap};
