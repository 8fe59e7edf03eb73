//! Discrete latent-sense bottleneck between sentence pairs and discourse
//! markers.
//!
//! A sentence pair is encoded into a fixed-width vector, projected into a
//! bottleneck state `h_z`, and mapped to a distribution over `K` latent
//! senses. Markers are emitted from senses through a row-stochastic
//! transition matrix, so the marker distribution of a pair is the mixture
//!
//! ```text
//! p(m | s1, s2) = sum_z p(z | s1, s2) * p(m | z)
//! ```
//!
//! Training alternates an exact E-step over `K` with gradient (or closed
//! form) M-steps, see [`em`].
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints
//! and the command-line front end live in the `dmr` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod corpus;
pub mod em;
pub mod encoder;
mod error;
pub mod linalg;
pub mod model;
pub mod probe;
pub mod vocab;

pub use error::{Error, Result};

pub use corpus::{Corpus, PairExample, RawRecord, SyntheticSpec};
pub use em::{PhiUpdateMode, TrainConfig, TrainHistory};
pub use encoder::{EncoderParams, PairRepresentation};
pub use linalg::Matrix;
pub use model::{DmrParams, LatentDistribution, LatentPosterior, MarkerDistribution};
pub use vocab::{LabelVocab, MarkerVocab, TokenVocab};
