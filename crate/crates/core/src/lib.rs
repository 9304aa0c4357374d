//! Linear bound propagation for transformer encoders: tensors, perturbation
//! sets, operator relaxations, the computation-graph IR with its fusion
//! passes, and model loading.

pub mod bounds;
pub mod error;
pub mod graph;
pub mod model;
pub mod relax;
pub mod scalar;
pub mod tensor;

pub use bounds::{
    check_robust, concretize, input_bounds, BoundSide, ConcreteBounds, LinearBounds, LinearForm, Norm,
    PerturbationSpec,
};
pub use error::{Error, Result};
pub use graph::{evaluate, fuse_all, OpCategory, OpKind, VerGraph};
pub use model::{gen_synthetic, load_embedding, load_model, Embedding, ModelConfig, TransformerSpec};
pub use relax::{Activation, ElementwiseLinearRelaxation};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type LinearBounds64 = LinearBounds<f64>;
pub type LinearBounds32 = LinearBounds<f32>;
pub type ConcreteBounds64 = ConcreteBounds<f64>;
pub type ConcreteBounds32 = ConcreteBounds<f32>;
pub type VerGraph64 = VerGraph<f64>;
pub type VerGraph32 = VerGraph<f32>;
pub type TransformerSpec64 = TransformerSpec<f64>;
pub type TransformerSpec32 = TransformerSpec<f32>;
