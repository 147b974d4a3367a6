//! Numerical primitives shared by every model component.

pub mod rng;
pub mod special;
pub mod tape;

pub use rng::{sample_gumbel, SeededRng};
pub use tape::{Gradients, Tape, Var};
