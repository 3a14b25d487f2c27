//! Sparse graph attention over full graphs, executed either on a single
//! worker or under two graph-parallel strategies (all-gather based and
//! all-to-all based) on a deterministic in-process worker group with exact
//! communication accounting, plus an analytic cost model that picks the
//! best strategy for a given graph and system profile.
//!
//! The numeric kernels are generic over the scalar type (`f32`/`f64` via
//! [`Scalar`]); `f64` is the default used by every tolerance in the test
//! suite. Concrete aliases for the common types live at the crate root.

pub mod agp;
pub mod attention;
pub mod census;
pub mod collectives;
pub mod dense;
pub mod error;
pub mod generate;
pub mod graph;
pub mod io;
pub mod model;
pub mod partition;
pub mod scalar;
pub mod sparse;
pub mod strategies;
pub mod timing;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision dense matrix, the default working type.
pub type DenseMatrixF64 = dense::DenseMatrix<f64>;
/// Single-precision dense matrix (opt-in; excluded from oracle tolerances).
pub type DenseMatrixF32 = dense::DenseMatrix<f32>;
/// Double-precision head-split matrix.
pub type HeadedMatrixF64 = dense::HeadedMatrix<f64>;
/// Double-precision per-edge values.
pub type EdgeValuesF64 = sparse::EdgeValues<f64>;
/// Double-precision attention weights.
pub type SgaWeightsF64 = attention::SgaWeights<f64>;
/// Double-precision graph transformer.
pub type GraphTransformerF64 = model::GraphTransformer<f64>;
