//! Joint beat, downbeat, segment-boundary and functional-label analysis of
//! demixed music with dilated neighborhood attention.
//!
//! The numeric core is generic over [`Scalar`]; `f32` is the production
//! precision and `f64` the verification precision. The aliases below pin the
//! common instantiations.

pub mod attention;
pub mod error;
pub mod frontend;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod postproc;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
pub use scalar::Scalar;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
