//! Determinantal row-sparse random integer matrices.
//!
//! The crate samples `A_n = B_n[X_n]`, where `B_n` has one row
//! `e_{b_1} + ... + e_{b_k}` per tuple `(b_1, ..., b_k) ∈ [n]^k` and `X_n` is an
//! `n`-subset of rows drawn with probability `det(B_n[X])^2 / det(B_n^T B_n)`.
//! Around the sampler sit exact tools: Smith normal form and cokernels,
//! finite abelian group counting (automorphisms, surjections, Cohen–Lenstra
//! weights), closed-form moment evaluation over type vectors, and the exact
//! mod-2 kernel defect bounds for constant odd `k`.

pub mod abelian_groups;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod kernel_defect;
pub mod moment_engine;
pub mod snf_cokernel;
pub mod structured_matrix;
pub mod volume_sampler;

pub use error::{Error, Result};
pub use exact::{ExactMatrix, Integer, Rational};
