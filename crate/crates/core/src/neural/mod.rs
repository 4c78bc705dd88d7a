//! Minimal neural-network engine: tanh MLPs with a linear bypass encoder,
//! Adam, and a reverse-mode tape for gradients through model rollouts.

pub mod adam;
pub mod encoder;
pub mod io;
pub mod mlp;
pub mod tape;

pub use adam::Adam;
pub use encoder::{EncoderNet, EncoderTapeIds};
pub use mlp::{init_random, Mlp};
pub use tape::{NodeId, Tape, TapeGrads};
