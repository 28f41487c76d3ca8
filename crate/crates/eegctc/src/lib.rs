//! End-to-end multilingual EEG/speech-to-text pipeline.
//!
//! The crate covers the full path from raw multichannel recordings to
//! character error rate: IIR preprocessing ([`signal`]), windowed feature
//! banks and MFCC ([`features`]), polynomial-kernel PCA reduction
//! ([`kpca`]), a conv/GRU encoder with CTC loss and beam-search decoding
//! ([`net`], [`ctc`]), a synthetic speech-EEG corpus ([`corpus`]) and
//! evaluation ([`metrics`]). Binary artifact formats live in [`io`] and
//! the training/decoding drivers in [`train`].

pub mod corpus;
pub mod ctc;
pub mod features;
pub mod io;
pub mod kpca;
pub mod metrics;
pub mod net;
pub mod signal;
pub mod train;
