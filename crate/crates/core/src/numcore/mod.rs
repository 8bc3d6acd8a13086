//! Numerical foundation: matrices, similarity functions, seeded randomness
//! and reverse-mode gradients with a finite-difference checker.

pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod rng;
pub mod tape;

pub use gradcheck::{compare_gradients, grad_check, GradCheckReport};
pub use matrix::Matrix;
pub use ops::{centered_cosine, pairwise_sq_euclidean, softmax_rows};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
