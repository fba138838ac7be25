//! Dense linear-algebra and tensor primitives shared by the decoders and
//! diagnostics. Everything is `f64`.

mod linalg;
mod matrix;
mod tensor;

pub use linalg::{rank1_tensor_approx, solve_least_squares, symmetric_eigen, top_singular_triplet, Rank1};
pub use matrix::{axpy, canonical_sign, cosine, dot, norm, normalize, Matrix};
pub use tensor::Tensor3;
