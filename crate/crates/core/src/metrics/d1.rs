//! Point-to-point (D1) geometry PSNR.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sparse::{Coord, Coords};

/// Returned when both clouds are identical.
pub const PSNR_CAP: f64 = 999.0;

/// Uniform grid over a point set for exact nearest-neighbour queries.
struct Grid {
    cell: i64,
    cells: HashMap<[i64; 3], Vec<Coord>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl Grid {
    fn new(points: &Coords) -> Self {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for c in points.iter() {
            for (i, v) in c.to_array().into_iter().enumerate() {
                lo[i] = lo[i].min(v as i64);
                hi[i] = hi[i].max(v as i64);
            }
        }
        // About one point per occupied cell for surface-like clouds.
        let extent = (0..3).map(|i| hi[i] - lo[i] + 1).max().unwrap_or(1);
        let cell = ((extent as f64 / (points.len() as f64).sqrt()).ceil() as i64).max(1);
        let mut cells: HashMap<[i64; 3], Vec<Coord>> = HashMap::new();
        for &c in points.iter() {
            cells.entry(Self::key_of(cell, c)).or_default().push(c);
        }
        let lo = lo.map(|v| v.div_euclid(cell));
        let hi = hi.map(|v| v.div_euclid(cell));
        Self { cell, cells, lo, hi }
    }

    fn key_of(cell: i64, c: Coord) -> [i64; 3] {
        c.to_array().map(|v| (v as i64).div_euclid(cell))
    }

    /// Squared distance from `q` to its nearest point. Rings of cells are
    /// searched outward; after ring `r` every unvisited point is at least
    /// `r * cell + 1` away along some axis.
    fn nearest_squared(&self, q: Coord) -> i64 {
        let k = Self::key_of(self.cell, q);
        let reach = (0..3)
            .map(|i| (k[i] - self.lo[i]).abs().max((self.hi[i] - k[i]).abs()))
            .max()
            .unwrap();
        let mut best = i64::MAX;
        for r in 0..=reach {
            // Far from the cloud, rings are mostly empty; scanning every
            // occupied cell is cheaper.
            if r > 0 && 6 * (2 * r + 1) * (2 * r + 1) > self.cells.len() as i64 {
                return self.scan_all(q).min(best);
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    let on_face = dx.abs() == r || dy.abs() == r;
                    let dzs: Vec<i64> = if on_face { (-r..=r).collect() } else { vec![-r, r] };
                    for dz in dzs {
                        if let Some(pts) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &p in pts {
                                best = best.min(q.squared_distance(p));
                            }
                        }
                    }
                }
            }
            let bound = r * self.cell + 1;
            if best <= bound * bound {
                break;
            }
        }
        best
    }

    fn scan_all(&self, q: Coord) -> i64 {
        self.cells
            .values()
            .flatten()
            .map(|&p| q.squared_distance(p))
            .min()
            .unwrap_or(i64::MAX)
    }
}

/// Mean squared distance from each point of `a` to its nearest point in `b`.
pub fn d1_mse(a: &Coords, b: &Coords) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty);
    }
    let grid = Grid::new(b);
    let total: i64 = a.iter().map(|&q| grid.nearest_squared(q)).sum();
    Ok(total as f64 / a.len() as f64)
}

/// Symmetric D1 PSNR with peak `3 (2^depth - 1)^2`, capped at
/// [`PSNR_CAP`].
pub fn d1_psnr(reference: &Coords, decoded: &Coords, depth: u32) -> Result<f64> {
    let mse = d1_mse(reference, decoded)?.max(d1_mse(decoded, reference)?);
    Ok(psnr_from_mse(mse, depth))
}

pub fn psnr_from_mse(mse: f64, depth: u32) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP;
    }
    let p = ((1u64 << depth) - 1) as f64;
    (10.0 * (3.0 * p * p / mse).log10()).min(PSNR_CAP)
}
