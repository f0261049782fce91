//! The enhancement network: dense encoder, four directional LSTMs producing
//! keys and queries, windowed attention looking back `ω` and ahead `ξ` frames,
//! a dense decoder and a sigmoid gain applied to the input features.

mod attention;
mod checkpoint;
mod forward;
mod params;

pub use attention::{attention_window, AttentionConfig, AttentionDump, AttentionWindow};
pub use checkpoint::{Checkpoint, MAGIC};
pub use forward::{export_attention, forward, loss_and_gradients, mse_loss, predict_gains, ForwardTrace, RunMode};
pub use params::{init_params, ModelDims, ModelParams, Params};
