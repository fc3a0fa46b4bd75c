//! Linear algebra, Chebyshev graph convolution, group normalization,
//! reverse-mode gradients and Adam.

pub mod adam;
pub mod chebyshev;
pub mod dense;
pub mod group_norm;
pub mod sparse;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use chebyshev::{cheb_conv, scaled_laplacian};
pub use dense::DenseMatrix;
pub use group_norm::{group_norm, DEFAULT_GN_EPS};
pub use sparse::{CsrMatrix, SparseAdjacency};
pub use tape::{Gradients, Tape, Var};
