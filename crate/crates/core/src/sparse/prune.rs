use std::sync::Arc;

use ndarray::Axis;

use super::coords::Coords;
use super::tensor::SparseTensor;
use crate::error::{Error, Result};

/// Row indices of the `k` largest logits, returned in ascending row order.
/// Equal logits favour the lower row index.
pub fn topk_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    if k < logits.len() {
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        order.truncate(k);
        order.sort_unstable();
    }
    order
}

/// Keeps the rows selected by `rows` (ascending) with their features.
pub fn select_rows(input: &SparseTensor, rows: &[usize]) -> Result<SparseTensor> {
    let coords: Vec<_> = rows.iter().map(|&r| input.coords()[r]).collect();
    let feats = input.feats().select(Axis(0), rows);
    SparseTensor::new(
        Arc::new(Coords::from_canonical(coords)),
        feats,
        input.depth(),
        input.scale(),
    )
}

/// Drops every voxel outside the top `k` occupancy logits.
pub fn prune(input: &SparseTensor, occupancy_logits: &[f64], k: usize) -> Result<SparseTensor> {
    if occupancy_logits.len() != input.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} voxels",
            occupancy_logits.len(),
            input.len()
        )));
    }
    if k == 0 {
        return Err(Error::Usage("prune needs k > 0".into()));
    }
    select_rows(input, &topk_indices(occupancy_logits, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::coords::Coord;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn line(n: usize) -> SparseTensor {
        let coords: Vec<Coord> = (0..n as i32).map(|i| Coord::new(i, 0, 0)).collect();
        let feats = Array2::from_shape_fn((n, 2), |(i, c)| (i * 2 + c) as f64);
        crate::sparse::build_tensor(&coords, &feats, 20, 0).unwrap()
    }

    #[test]
    fn keeps_argmax_rows() {
        let t = line(3);
        let out = prune(&t, &[3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(out.coords().as_slice(), &[Coord::new(0, 0, 0), Coord::new(2, 0, 0)]);
        assert_eq!(out.feats().row(1).to_vec(), vec![4.0, 5.0]);
    }

    #[test]
    fn large_k_is_identity() {
        let t = line(5);
        assert_eq!(prune(&t, &[0.0; 5], 9).unwrap(), t);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(topk_indices(&[1.0, 1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn figure_scale_prune() {
        // 139,244 candidate voxels cut down to 52,612.
        let logits: Vec<f64> = (0..139_244u64).map(|i| ((i * 2_654_435_761) % 1000) as f64).collect();
        assert_eq!(topk_indices(&logits, 52_612).len(), 52_612);
    }

    proptest! {
        #[test]
        fn topk_sets_are_nested(logits in prop::collection::vec(-3i32..3, 1..60), k in 1usize..60) {
            let l: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
            let small = topk_indices(&l, k);
            let big = topk_indices(&l, k + 1);
            prop_assert_eq!(small.len(), k.min(l.len()));
            prop_assert!(small.iter().all(|i| big.contains(i)));
        }
    }
}
