//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D [`Tensor`]. Sequences are stored time-major (one row
//! per step) and batches of variable-length sequences are packed row-wise
//! with a [`Segments`] layout, so sequence operators never see padding.

pub mod check;
pub mod graph;
pub mod init;
pub mod optim;
pub mod params;
pub mod segments;

pub use graph::{log_softmax_rows, sigmoid, softmax_rows, Graph, Var};
pub use optim::Adam;
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use segments::Segments;

pub type Tensor = ndarray::Array2<f64>;
