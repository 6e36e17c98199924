//! Dataset I/O and evaluation: PLY files, voxelization, D1 PSNR, BD-rate,
//! and kd-tree blocks.

mod bdrate;
mod d1;
mod kdtree;
mod ply;
mod voxel;

pub use bdrate::{bd_rate, RdPoint};
pub use d1::{d1_mse, d1_psnr, psnr_from_mse, PSNR_CAP};
pub use kdtree::{apply_same_partition, kdtree_partition, kdtree_partition_aligned, KdSplits, SplitPlane};
pub use ply::{points_to_coords, read_ply, write_ply, write_ply_coords, PlyFormat};
pub use voxel::voxelize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One row of the rate-distortion CSV: a single decoded frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub sequence: String,
    /// Operating point the frame was coded at, e.g. a lambda label.
    pub point: String,
    pub frame: usize,
    pub frame_type: String,
    pub bpp_coords: f64,
    pub bpp_feats: f64,
    pub bpp_total: f64,
    pub d1_psnr: f64,
}

/// Averages frames into one [`RdPoint`] per (sequence, point) and returns
/// each sequence's curve sorted by rate.
pub fn rd_curves(rows: &[RdRow]) -> BTreeMap<String, Vec<RdPoint>> {
    let mut sums: BTreeMap<(&str, &str), (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = sums.entry((&r.sequence, &r.point)).or_default();
        e.0 += r.bpp_total;
        e.1 += r.d1_psnr;
        e.2 += 1;
    }
    let mut curves: BTreeMap<String, Vec<RdPoint>> = BTreeMap::new();
    for ((seq, _), (bpp, psnr, n)) in sums {
        curves.entry(seq.to_string()).or_default().push(RdPoint {
            bpp: bpp / n as f64,
            psnr_db: psnr / n as f64,
        });
    }
    for c in curves.values_mut() {
        c.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    }
    curves
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sequence: &str, point: &str, bpp: f64, psnr: f64) -> RdRow {
        RdRow {
            sequence: sequence.into(),
            point: point.into(),
            frame: 0,
            frame_type: "P".into(),
            bpp_coords: 0.0,
            bpp_feats: bpp,
            bpp_total: bpp,
            d1_psnr: psnr,
        }
    }

    #[test]
    fn curves_average_frames_per_point() {
        let rows = [
            row("a", "hi", 2.0, 70.0),
            row("a", "lo", 0.5, 60.0),
            row("a", "hi", 4.0, 72.0),
            row("b", "lo", 1.0, 50.0),
        ];
        let c = rd_curves(&rows);
        assert_eq!(c["a"], vec![RdPoint { bpp: 0.5, psnr_db: 60.0 }, RdPoint { bpp: 3.0, psnr_db: 71.0 }]);
        assert_eq!(c["b"].len(), 1);
    }
}
