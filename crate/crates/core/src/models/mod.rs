//! The aligner and the penalised low-capacity autoencoder.

pub mod net;
pub mod penalty;
pub mod spec;
pub mod state;

pub use net::{aligner_forward, bind, decode, encode, AlignerOutput, Bound, Trainable};
pub use penalty::{positional_penalty, PenaltyWeights};
pub use spec::{Activation, LayerKind, LayerSpec, NetworkSpec, Shape};
pub use state::{Layout, ModelState, Part, Slot};
