//! Dense-tensor arithmetic with reverse-mode automatic differentiation.
//!
//! The crate provides the numeric substrate for the forecasting stack:
//! a flat row-major [`Tensor`], a tape-style [`Graph`] that records
//! primitive ops and replays them in reverse for gradients, an [`Adam`]
//! optimizer with bias correction, counter-based seeded RNG streams,
//! and a binary checkpoint container for named tensors.
//!
//! Tensors are `f32` by default; every op is generic over [`Element`]
//! so gradient-check suites can run the identical code at `f64`.

pub mod adam;
pub mod checkpoint;
pub mod element;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod rng;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use element::Element;
pub use error::TensorError;
pub use graph::{Gradients, Graph, Padding, TensorId};
pub use tensor::Tensor;
