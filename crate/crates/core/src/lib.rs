//! Unsupervised few-shot learning with self-attention message passing.
//!
//! The pipeline has two phases. Pre-training ([`pretrain`]) learns an
//! encoder and a message-passing layer ([`samp`]) from unlabeled data with a
//! pair of prototypical contrastive losses. Evaluation ([`episodes`]) embeds
//! each few-shot episode, refines the embeddings over an episode graph
//! ([`graph`]), moves the support embeddings toward the query distribution
//! with entropic optimal transport ([`ot`]), and classifies queries with a
//! briefly fine-tuned nearest-mean head ([`proto`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dataset;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod graph;
pub mod model;
pub mod numcore;
pub mod ot;
pub mod pretrain;
pub mod proto;
pub mod samp;

pub use error::{Error, Result};
pub use model::{Model, Parameterized};
pub use numcore::{Matrix, Rng, Tape, Var};
