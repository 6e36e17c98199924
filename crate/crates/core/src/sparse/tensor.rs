use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;

use super::coords::{Coord, Coords};
use crate::error::{Error, Result};

/// Occupied voxels plus one feature row per voxel.
///
/// Row `i` of `feats` belongs to `coords[i]`. Tensors are immutable once
/// built; the coordinate set is reference counted so that tensors derived
/// from each other (stride-1 convolutions, activations) share it.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    coords: Arc<Coords>,
    feats: Array2<f64>,
    scale: u32,
    depth: u32,
}

impl SparseTensor {
    pub fn new(coords: Arc<Coords>, feats: Array2<f64>, depth: u32, scale: u32) -> Result<Self> {
        if feats.nrows() != coords.len() {
            return Err(Error::Shape(format!(
                "{} coordinates but {} feature rows",
                coords.len(),
                feats.nrows()
            )));
        }
        Ok(Self {
            coords,
            feats,
            scale,
            depth,
        })
    }

    /// Geometry-only tensor: one channel, every feature equal to 1.
    pub fn occupancy(coords: Arc<Coords>, depth: u32, scale: u32) -> Self {
        let n = coords.len();
        Self {
            coords,
            feats: Array2::ones((n, 1)),
            scale,
            depth,
        }
    }

    pub fn coords(&self) -> &Arc<Coords> {
        &self.coords
    }

    pub fn feats(&self) -> &Array2<f64> {
        &self.feats
    }

    pub fn into_feats(self) -> Array2<f64> {
        self.feats
    }

    pub fn channels(&self) -> usize {
        self.feats.ncols()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }
}

/// Checks that every coordinate lies in `[0, 2^(depth - scale))^3`.
pub fn check_range(points: &[Coord], depth: u32, scale: u32) -> Result<()> {
    let side = 1i64 << depth.saturating_sub(scale);
    match points.iter().find(|c| !c.in_cube(side)) {
        Some(c) => Err(Error::OutOfRange {
            coord: c.to_array(),
            depth,
            scale,
        }),
        None => Ok(()),
    }
}

/// Builds a canonical tensor from raw points. Duplicate coordinates are
/// merged by averaging their feature rows.
pub fn build_tensor(
    points: &[Coord],
    feats: &Array2<f64>,
    depth: u32,
    scale: u32,
) -> Result<SparseTensor> {
    if points.len() != feats.nrows() {
        return Err(Error::Shape(format!(
            "{} points but {} feature rows",
            points.len(),
            feats.nrows()
        )));
    }
    if scale > depth {
        return Err(Error::Config(format!("scale {scale} exceeds depth {depth}")));
    }
    check_range(points, depth, scale)?;

    let channels = feats.ncols();
    let mut merged: BTreeMap<Coord, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, &p) in points.iter().enumerate() {
        let entry = merged.entry(p).or_insert_with(|| (vec![0.0; channels], 0));
        for (acc, &v) in entry.0.iter_mut().zip(feats.row(i)) {
            *acc += v;
        }
        entry.1 += 1;
    }

    let mut out = Array2::zeros((merged.len(), channels));
    let mut coords = Vec::with_capacity(merged.len());
    for (row, (c, (sum, count))) in merged.into_iter().enumerate() {
        coords.push(c);
        for (dst, s) in out.row_mut(row).iter_mut().zip(sum) {
            *dst = s / count as f64;
        }
    }
    SparseTensor::new(Arc::new(Coords::from_canonical(coords)), out, depth, scale)
}

/// Same as [`build_tensor`] but rejects an empty point list, which the
/// codec cannot represent.
pub fn build_frame_tensor(points: &[Coord], depth: u32) -> Result<SparseTensor> {
    if points.is_empty() {
        return Err(Error::Empty);
    }
    check_range(points, depth, 0)?;
    let coords = Arc::new(Coords::from_unsorted(points.to_vec()));
    Ok(SparseTensor::occupancy(coords, depth, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn singleton() {
        let t = build_tensor(&[Coord::new(0, 0, 0)], &array![[1.0]], 10, 0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.channels(), 1);
    }

    #[test]
    fn duplicates_are_averaged() {
        let p = [Coord::new(1, 2, 3), Coord::new(1, 2, 3)];
        let t = build_tensor(&p, &array![[2.0], [4.0]], 10, 0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.feats()[[0, 0]], 3.0);
    }

    #[test]
    fn out_of_range_rejected() {
        let err = build_tensor(&[Coord::new(8, 0, 0)], &array![[1.0]], 3, 0).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }));
        let err = build_tensor(&[Coord::new(-1, 0, 0)], &array![[1.0]], 3, 0).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }));
        // Scale shrinks the admissible cube.
        assert!(build_tensor(&[Coord::new(4, 0, 0)], &array![[1.0]], 3, 1).is_err());
    }

    #[test]
    fn empty_allowed_for_intermediate_but_not_frames() {
        let t = build_tensor(&[], &Array2::zeros((0, 4)), 6, 2).unwrap();
        assert!(t.is_empty());
        assert!(matches!(build_frame_tensor(&[], 6), Err(Error::Empty)));
    }
}
