//! Block-based compressive sensing for grayscale images.
//!
//! Images are cut into `B×B` blocks, each block is measured through one
//! channel of a [`sampling::ChannelBank`], and the image is recovered with
//! BCS-SPL, block-wise D-AMP, BCS-Damp or a small unrolled network.

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod denoise;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod recon;
pub mod rng;
pub mod sampling;
pub mod transform;

pub use error::{Error, Result};
pub use image::Image;
pub use linalg::Matrix;
pub use rng::{Rng, Stream};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/allocation.md")]
    mod allocation {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
