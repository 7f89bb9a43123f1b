//! Toy decoder-only transformer with inspectable MLP key-value memories.

pub mod checkpoint;
mod config;
mod forward;
mod infer;
mod mask;
mod weights;

pub use config::{skip_layers_for, MlpStyle, ModelConfig};
pub(crate) use forward::build_graph;
pub use forward::{
    Batch, Capture, CoefficientTrace, ForwardOutput, LayerRecord, PositionSelector, PAD_ID,
};
pub use infer::{GenerateOptions, Sampler};
pub use mask::MaskSpec;
pub use weights::{LayerWeights, TransformerWeights};
