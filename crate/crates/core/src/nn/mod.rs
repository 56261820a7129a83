//! Dense network substrate: flat parameter storage, a fixed-topology MLP with
//! hand-written reverse mode, sinusoidal time embeddings, Adam/AdamW, EMA and
//! a binary checkpoint format.

pub mod arch;
pub mod checkpoint;
pub mod ema;
pub mod embed;
pub mod mlp;
pub mod net;
pub mod optim;
pub mod params;
pub mod train;

pub use arch::Architecture;
pub use checkpoint::Checkpoint;
pub use ema::EmaState;
pub use embed::time_embedding;
pub use mlp::{mlp_backward, mlp_forward, Activation, MlpSpec};
pub use net::{ClassInput, Net, Scratch, TIME_SCALE};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{Layout, ParamVector};
pub use train::{fit, TrainConfig, TrainReport};
