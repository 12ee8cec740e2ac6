//! GAN-free unsupervised phoneme recognition on discrete speech units.
//!
//! The library trains a convolutional unit-to-phoneme generator and a
//! boundary segmenter jointly, without any paired data, by matching
//! N-skipgram and positional-unigram statistics of the generator's output
//! against statistics of an unpaired text corpus. A differentiable monotonic
//! aligner pools frame-level phoneme probabilities into segment-level ones so
//! the matching happens at the phoneme-sequence level.
//!
//! Modules follow the pipeline:
//!
//! - [`corpus`]: corpora, boundary labels, file formats, and a synthetic
//!   cipher-corpus generator with known ground truth.
//! - [`stats`]: empirical and model-predicted skipgram / positional-unigram
//!   distributions.
//! - [`diffnet`]: the small differentiable-network substrate (tensors, 1-D
//!   convolutions, reverse-mode gradients, Adam, checkpoints).
//! - [`model`]: generator, segmenter, soft monotonic alignment, and pooling.
//! - [`losses`]: the four training losses and their weighted combination.
//! - [`trainer`]: the optimization loop, segment relabeling, and ablations.
//! - [`eval`]: decoding, phone error rate, and boundary metrics.
//! - [`cli`]: the `espum` command-line interface.

pub mod cli;
pub mod corpus;
pub mod diffnet;
pub mod eval;
pub mod losses;
pub mod model;
pub mod stats;
pub mod trainer;
