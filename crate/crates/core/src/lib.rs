//! Numerical core of a two-stage colorizer: a conditional PixelCNN over a
//! low-resolution discretized chroma grid, followed by a feed-forward
//! refinement network that restores full-resolution chroma from the
//! luminance plane.
//!
//! The crate is `no_std` (with `alloc`). Enable the `std` feature for
//! faster platform math and runtime SIMD dispatch in the GEMM kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod color;
pub mod conditioning;
pub mod conv;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pixelcnn;
pub mod real;
pub mod refine;
pub mod resample;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{ConvSpec, MaskKind};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{truncated_normal, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
