//! Noise-adaptive speech enhancement with domain-adversarial training.
//!
//! An encoder/decoder BLSTM maps noisy log-power spectra to clean ones while
//! an LSTM discriminator tries to identify the noise type from the encoder's
//! features. Training the encoder against the discriminator pushes it toward
//! noise-invariant features, which lets unlabelled noisy recordings of a new
//! noise type adapt the enhancer.
//!
//! Modules:
//! - [`dsp`]: STFT/ISTFT, log-power spectra, segmentation, WAV I/O
//! - [`corpus`]: synthetic speech and noise, exact-SNR mixing, manifests
//! - [`nn`]: tensors, gradient tape, LSTM/BLSTM/dense layers, Adam, checkpoints
//! - [`dat`]: losses, gradient reversal, alternating and GRL training, enhancement
//! - [`eval`]: segmental SNR, STOI, gap coverage, reports

pub mod corpus;
pub mod dat;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod parallel;

pub use error::{Error, Result};
pub use parallel::Exec;
