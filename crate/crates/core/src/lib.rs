//! Wake-word detection toolkit.
//!
//! The pipeline runs from synthetic or prepared corpora ([`corpus`]) through
//! a log-Mel frontend ([`features`]) into a stacked SVDF encoder ([`svdf`])
//! trained with frame-wise cross-entropy, CTC, or a CE-then-CTC hybrid
//! ([`loss`], [`train`]). Emissions are decoded by a rule-based sliding
//! window Max-Pooling Viterbi search ([`decode`]) and scored with DET curves,
//! FRR at a false-alarm budget, and trigger latency ([`eval`]).

pub mod audio;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod features;
pub mod loss;
pub mod math;
pub mod pipeline;
pub mod svdf;
pub mod tokens;
pub mod train;
