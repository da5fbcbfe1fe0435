//! Connectionist Temporal Classification: loss with analytic gradient,
//! greedy decoding, and prefix beam search with optional n-gram fusion.

mod charset;
mod decode;
mod loss;

pub use charset::{Charset, CharsetError};
pub use decode::{greedy_decode, prefix_beam_search, BeamSearchResult, DecodeParams};
pub use loss::{ctc_loss, ctc_loss_batch, CtcError, CtcLoss};
