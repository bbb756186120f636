pub mod attention;
pub mod autograd;
pub mod boxes;
pub mod checkpoint;
pub mod cka;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod instances;
pub mod layers;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TensorF32 = tensor::Tensor<f32>;
pub type TensorF64 = tensor::Tensor<f64>;
pub type GraphF32 = autograd::Graph<f32>;
pub type GraphF64 = autograd::Graph<f64>;
pub type ModelF32 = network::Model<f32>;
pub type ModelF64 = network::Model<f64>;
