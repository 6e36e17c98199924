//! Learned inter-frame compression of dynamic point cloud geometry.

pub mod codec;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod octree;
pub mod range_coder;
pub mod sparse;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sparse-tensors.md")]
    mod sparse_tensors {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/entropy-coding.md")]
    mod entropy_coding {}
    #[doc = include_str!("../../../book/src/octree.md")]
    mod octree {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
