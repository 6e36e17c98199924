use crate::error::{Error, Result};
use crate::sparse::{Coord, Coords};

/// Shifts the cloud to the origin, scales it uniformly so its largest extent
/// spans `2^depth - 1`, rounds, and removes duplicates. A cloud whose points
/// all coincide becomes the single voxel at the origin.
pub fn voxelize(points: &[[f64; 3]], depth: u32) -> Result<Coords> {
    if !(1..=16).contains(&depth) {
        return Err(Error::Usage(format!("voxel depth {depth} outside 1..=16")));
    }
    if points.is_empty() {
        return Err(Error::Empty);
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite coordinate".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let extent = (0..3).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
    let max = f64::from((1u32 << depth) - 1);
    let scale = if extent > 0.0 { max / extent } else { 0.0 };
    Ok(points
        .iter()
        .map(|p| {
            let q = |i: usize| ((p[i] - lo[i]) * scale).round().clamp(0.0, max) as i32;
            Coord::new(q(0), q(1), q(2))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integer_cloud_spanning_the_grid_is_unchanged() {
        let pts = [[0.0, 0.0, 0.0], [1023.0, 17.0, 4.0], [5.0, 1000.0, 1023.0], [12.0, 12.0, 12.0]];
        let expected: Coords = pts.iter().map(|p| Coord::new(p[0] as i32, p[1] as i32, p[2] as i32)).collect();
        assert_eq!(voxelize(&pts, 10).unwrap(), expected);
    }

    #[test]
    fn extent_mapping() {
        let v = voxelize(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]], 3).unwrap();
        assert_eq!(v.to_vec(), vec![Coord::new(0, 0, 0), Coord::new(7, 7, 7)]);
    }

    #[test]
    fn degenerate_and_invalid() {
        let v = voxelize(&[[3.5, -2.0, 9.0]; 4], 5).unwrap();
        assert_eq!(v.to_vec(), vec![Coord::new(0, 0, 0)]);
        assert!(voxelize(&[], 5).is_err());
        assert!(voxelize(&[[0.0; 3]], 0).is_err());
        assert!(voxelize(&[[f64::NAN, 0.0, 0.0]], 4).is_err());
    }

    #[test]
    fn random_cloud_in_range_and_deduped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 3]> = (0..5000)
            .map(|_| [rng.random_range(-3.0..7.0), rng.random_range(10.0..12.0), rng.random::<f64>()])
            .collect();
        let v = voxelize(&pts, 6).unwrap();
        assert!(v.iter().all(|c| c.in_cube(64)));
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        // The widest axis reaches both ends of the grid.
        assert_eq!(v.iter().map(|c| c.x).max(), Some(63));
        assert_eq!(v.iter().map(|c| c.x).min(), Some(0));
        // Every input point lands on an emitted voxel.
        let once: std::collections::HashSet<_> = v.iter().collect();
        assert!(once.len() == v.len() && v.len() <= pts.len());
    }
}
