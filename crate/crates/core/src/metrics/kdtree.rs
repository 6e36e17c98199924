//! Median kd-tree partitioning with reusable split planes.

use crate::error::{Error, Result};
use crate::sparse::{Coord, Coords};

/// One split: points with `coord[axis] < threshold` go left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitPlane {
    pub axis: u8,
    pub threshold: i32,
}

/// Planes of a complete binary tree in heap order (children of node `i`
/// are `2i + 1` and `2i + 2`); leaves are the blocks, left to right.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KdSplits {
    pub planes: Vec<SplitPlane>,
}

impl KdSplits {
    pub fn num_blocks(&self) -> usize {
        self.planes.len() + 1
    }
}

fn axis_value(c: &Coord, axis: u8) -> i32 {
    c.to_array()[axis as usize]
}

fn median_plane(points: &[Coord], align: i32) -> SplitPlane {
    if points.is_empty() {
        return SplitPlane { axis: 0, threshold: 0 };
    }
    let widest = (0..3u8)
        .max_by_key(|&a| {
            let (lo, hi) = points.iter().fold((i32::MAX, i32::MIN), |(lo, hi), c| {
                let v = axis_value(c, a);
                (lo.min(v), hi.max(v))
            });
            // Ties favour the lower axis.
            (i64::from(hi) - i64::from(lo), std::cmp::Reverse(a))
        })
        .unwrap();
    let mut values: Vec<i32> = points.iter().map(|c| axis_value(c, widest)).collect();
    let mid = values.len() / 2;
    let (_, &mut median, _) = values.select_nth_unstable(mid);
    let threshold = (median + align / 2).div_euclid(align) * align;
    SplitPlane { axis: widest, threshold }
}

fn split(points: Vec<Coord>, plane: SplitPlane) -> (Vec<Coord>, Vec<Coord>) {
    points.into_iter().partition(|c| axis_value(c, plane.axis) < plane.threshold)
}

/// Recursively splits `cloud` at the median of its widest axis into
/// `num_blocks` (a power of two) blocks.
pub fn kdtree_partition(cloud: &Coords, num_blocks: usize) -> Result<(Vec<Coords>, KdSplits)> {
    kdtree_partition_aligned(cloud, num_blocks, 1)
}

/// Like [`kdtree_partition`], with every threshold rounded to the nearest
/// multiple of `align`. With `align = 2^s` no voxel at scale `s` straddles
/// two blocks.
pub fn kdtree_partition_aligned(cloud: &Coords, num_blocks: usize, align: i32) -> Result<(Vec<Coords>, KdSplits)> {
    if !num_blocks.is_power_of_two() {
        return Err(Error::Usage(format!("block count {num_blocks} is not a power of two")));
    }
    if align < 1 {
        return Err(Error::Usage(format!("alignment {align} must be positive")));
    }
    let mut level = vec![cloud.to_vec()];
    let mut planes = Vec::with_capacity(num_blocks - 1);
    while level.len() < num_blocks {
        let mut next = Vec::with_capacity(level.len() * 2);
        for block in level {
            let plane = median_plane(&block, align);
            planes.push(plane);
            let (l, r) = split(block, plane);
            next.push(l);
            next.push(r);
        }
        level = next;
    }
    let blocks = level.into_iter().map(Coords::from_unsorted).collect();
    Ok((blocks, KdSplits { planes }))
}

/// Partitions another cloud with previously computed planes.
pub fn apply_same_partition(cloud: &Coords, splits: &KdSplits) -> Vec<Coords> {
    let mut level = vec![cloud.to_vec()];
    let mut next_plane = 0;
    while level.len() < splits.num_blocks() {
        let mut next = Vec::with_capacity(level.len() * 2);
        for block in level {
            let (l, r) = split(block, splits.planes[next_plane]);
            next_plane += 1;
            next.push(l);
            next.push(r);
        }
        level = next;
    }
    level.into_iter().map(Coords::from_unsorted).collect()
}
