//! Dense tensors, reverse-mode differentiation, Adam, PCA and a gradient checker.

mod adam;
mod gradcheck;
mod pca;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, DEFAULT_STEP};
pub use pca::{pca_fit, pca_project, symmetric_eigen, SymmetricEigen};
pub use rng::{set_seed, SeededRng};
pub use tape::{backward, Gradients, Tape, Var};
pub use tensor::{bmm, broadcast_shapes, matmul, moving_average, Tensor};
