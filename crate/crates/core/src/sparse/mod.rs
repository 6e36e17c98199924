//! Sparse voxel tensors and the coordinate-indexed linear operators built
//! on them.

mod conv;
mod coords;
mod kernel_map;
mod prune;
mod tensor;

pub use conv::{
    conv_backward, conv_forward, output_coords, sparse_conv, transpose_conv_up, ConvGrads,
};
pub use coords::{downsample_coords, unit_cube_offsets, Coord, Coords};
pub use kernel_map::{kernel_map, ConvSpec, KernelMap};
pub use prune::{prune, select_rows, topk_indices};
pub use tensor::{build_frame_tensor, build_tensor, check_range, SparseTensor};
