//! Small neural-network toolkit with hand-written reverse-mode gradients.

pub mod activations;
pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod lstm;
pub mod mdn;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use dense::Dense;
pub use lstm::{Lstm, LstmCache, LstmState};
pub use mdn::{MdnGrad, MdnParams, SIGMA_FLOOR};
pub use params::{ParamVector, Slice, SliceRef};
pub use tape::Tape;
