//! Minimal dense networks with reverse-mode gradients, Adam and target
//! averaging. Everything is `f64`.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use mlp::{bind, forward, Activation, BoundMlp, Mlp, MlpSpec, OutputActivation, FINAL_LAYER_INIT};
pub use params::{soft_update, ParameterSet};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already consumed by backward; record a new one")]
    GraphConsumed,
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// Stand-alone layer norm over the last dimension of `x`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, offset: &Tensor) -> Result<Tensor, NnError> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone())?;
    let gv = g.constant(gain.clone())?;
    let ov = g.constant(offset.clone())?;
    let y = g.layer_norm(xv, gv, ov)?;
    Ok(g.value(y).clone())
}
