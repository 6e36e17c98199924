//! Lossless octree coding of a coordinate set.
//!
//! Nodes are visited breadth-first; every occupied node emits one byte whose
//! bit `(x << 2) | (y << 1) | z` marks the occupied child. Level sizes are
//! implied by popcounts, so the stream needs only a one-byte header:
//!
//! | bits | meaning                                     |
//! |------|---------------------------------------------|
//! | 0-4  | depth (0..=21)                              |
//! | 5    | empty set (no payload follows)              |
//! | 6    | payload stored raw instead of range-coded   |
//!
//! Bytes are range-coded with an adaptive order-0 model. When that would
//! cost more than the raw bytes (tiny or incompressible trees) the raw
//! bytes are stored instead, so a stream never exceeds one byte per node
//! plus the header.

use crate::error::{Error, Result};
use crate::range_coder::{AdaptiveModel, RangeDecoder, RangeEncoder};
use crate::sparse::{Coord, Coords};

pub const MAX_DEPTH: u32 = 21;

const DEPTH_MASK: u8 = 0x1F;
const EMPTY_FLAG: u8 = 0x20;
const RAW_FLAG: u8 = 0x40;

fn spread(v: u32) -> u64 {
    let mut out = 0u64;
    for b in 0..MAX_DEPTH {
        out |= u64::from((v >> b) & 1) << (3 * b);
    }
    out
}

fn compact(m: u64) -> i32 {
    let mut out = 0u32;
    for b in 0..MAX_DEPTH {
        out |= (((m >> (3 * b)) & 1) as u32) << b;
    }
    out as i32
}

/// Interleaves coordinate bits with x most significant in each triple.
pub fn morton(c: Coord) -> u64 {
    (spread(c.x as u32) << 2) | (spread(c.y as u32) << 1) | spread(c.z as u32)
}

pub fn from_morton(m: u64) -> Coord {
    Coord::new(compact(m >> 2), compact(m >> 1), compact(m))
}

fn check_depth(depth: u32) -> Result<()> {
    if depth > MAX_DEPTH {
        return Err(Error::Usage(format!("octree depth {depth} exceeds {MAX_DEPTH}")));
    }
    Ok(())
}

/// Breadth-first occupancy bytes, one vector per level (root first).
pub fn occupancy_levels(coords: &Coords, depth: u32) -> Result<Vec<Vec<u8>>> {
    check_depth(depth)?;
    let side = 1i64 << depth;
    if let Some(c) = coords.iter().find(|c| !c.in_cube(side)) {
        return Err(Error::OutOfRange {
            coord: c.to_array(),
            depth,
            scale: 0,
        });
    }
    let mut codes: Vec<u64> = coords.iter().map(|&c| morton(c)).collect();
    codes.sort_unstable();

    let mut levels = Vec::with_capacity(depth as usize);
    for level in 0..depth {
        let shift = 3 * (depth - level - 1);
        let mut bytes: Vec<u8> = Vec::new();
        let mut current: Option<u64> = None;
        for &m in &codes {
            let parent = m >> (shift + 3);
            let child = ((m >> shift) & 7) as u8;
            if current != Some(parent) {
                current = Some(parent);
                bytes.push(0);
            }
            *bytes.last_mut().unwrap() |= 1 << child;
        }
        levels.push(bytes);
    }
    Ok(levels)
}

/// Total number of occupied internal nodes, i.e. payload bytes.
pub fn node_count(coords: &Coords, depth: u32) -> Result<usize> {
    Ok(occupancy_levels(coords, depth)?.iter().map(Vec::len).sum())
}

pub fn octree_encode(coords: &Coords, depth: u32) -> Result<Vec<u8>> {
    let levels = occupancy_levels(coords, depth)?;
    let header = depth as u8;
    if coords.is_empty() {
        return Ok(vec![header | EMPTY_FLAG]);
    }
    let raw: Vec<u8> = levels.concat();

    let mut enc = RangeEncoder::new();
    let mut model = AdaptiveModel::new(255);
    for &b in &raw {
        model.encode(&mut enc, usize::from(b) - 1);
    }
    let coded = enc.finish();

    let mut out = Vec::with_capacity(1 + raw.len().min(coded.len()));
    if coded.len() < raw.len() {
        out.push(header);
        out.extend_from_slice(&coded);
    } else {
        out.push(header | RAW_FLAG);
        out.extend_from_slice(&raw);
    }
    Ok(out)
}

pub fn octree_decode(bytes: &[u8]) -> Result<(Coords, u32)> {
    let (&header, payload) = bytes
        .split_first()
        .ok_or_else(|| Error::Decode("empty octree stream".into()))?;
    if header & !(DEPTH_MASK | EMPTY_FLAG | RAW_FLAG) != 0 {
        return Err(Error::Decode(format!("bad octree header {header:#04x}")));
    }
    let depth = u32::from(header & DEPTH_MASK);
    check_depth(depth).map_err(|e| Error::Decode(e.to_string()))?;
    if header & EMPTY_FLAG != 0 {
        return Ok((Coords::default(), depth));
    }

    let raw = header & RAW_FLAG != 0;
    let mut raw_pos = 0usize;
    let mut dec = if raw { None } else { Some(RangeDecoder::new(payload)?) };
    let mut model = AdaptiveModel::new(255);
    let mut next_byte = || -> Result<u8> {
        match dec.as_mut() {
            Some(d) => Ok(model.decode(d)? as u8 + 1),
            None => {
                let b = *payload
                    .get(raw_pos)
                    .ok_or_else(|| Error::Decode("octree stream truncated".into()))?;
                raw_pos += 1;
                if b == 0 {
                    return Err(Error::Decode("zero occupancy byte".into()));
                }
                Ok(b)
            }
        }
    };

    let mut nodes: Vec<u64> = vec![0];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(nodes.len() * 2);
        for &parent in &nodes {
            let occ = next_byte()?;
            for child in 0..8u64 {
                if occ & (1 << child) != 0 {
                    next.push((parent << 3) | child);
                }
            }
        }
        nodes = next;
    }
    if raw && raw_pos != payload.len() {
        return Err(Error::Decode("trailing bytes after octree payload".into()));
    }
    Ok((nodes.into_iter().map(from_morton).collect(), depth))
}

/// Bits per point of a substream, normalized by the original cloud size.
pub fn coords_bpp(coded_bytes: usize, num_points: usize) -> Result<f64> {
    if num_points == 0 {
        return Err(Error::Usage("bits per point of an empty cloud".into()));
    }
    Ok(8.0 * coded_bytes as f64 / num_points as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(points: &[[i32; 3]]) -> Coords {
        points.iter().map(|&p| Coord::from(p)).collect()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, depth: u32) -> Coords {
        let side = 1 << depth;
        (0..n)
            .map(|_| Coord::new(rng.random_range(0..side), rng.random_range(0..side), rng.random_range(0..side)))
            .collect()
    }

    #[test]
    fn morton_round_trip() {
        for c in [[0, 0, 0], [1, 0, 0], [0, 1, 1], [(1 << 21) - 1, 5, 77]] {
            assert_eq!(from_morton(morton(c.into())), Coord::from(c));
        }
        assert_eq!(morton(Coord::new(1, 0, 0)), 4);
        assert_eq!(morton(Coord::new(0, 1, 0)), 2);
        assert_eq!(morton(Coord::new(0, 0, 1)), 1);
    }

    #[test]
    fn single_path_is_one_child_per_level() {
        let levels = occupancy_levels(&set(&[[0, 0, 0]]), 3).unwrap();
        assert_eq!(levels, vec![vec![0x01]; 3]);
        let levels = occupancy_levels(&set(&[[7, 0, 0]]), 3).unwrap();
        assert_eq!(levels, vec![vec![0x10]; 3]);
        let bytes = octree_encode(&set(&[[0, 0, 0]]), 3).unwrap();
        assert_eq!(octree_decode(&bytes).unwrap(), (set(&[[0, 0, 0]]), 3));
    }

    #[test]
    fn full_cube_is_one_ff_byte() {
        let cube: Coords = crate::sparse::unit_cube_offsets().collect();
        assert_eq!(occupancy_levels(&cube, 1).unwrap(), vec![vec![0xFF]]);
        assert_eq!(octree_encode(&cube, 1).unwrap(), vec![RAW_FLAG | 1, 0xFF]);
        assert_eq!(octree_decode(&[RAW_FLAG | 1, 0xFF]).unwrap().0, cube);
    }

    #[test]
    fn level_sizes_follow_popcounts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords = random_set(&mut rng, 500, 6);
        let levels = occupancy_levels(&coords, 6).unwrap();
        for w in levels.windows(2) {
            let pop: u32 = w[0].iter().map(|b| b.count_ones()).sum();
            assert_eq!(pop as usize, w[1].len());
            assert!(w[0].iter().all(|&b| b != 0));
        }
        let leaves: u32 = levels.last().unwrap().iter().map(|b| b.count_ones()).sum();
        assert_eq!(leaves as usize, coords.len());
    }

    #[test]
    fn edge_cases() {
        let empty = Coords::default();
        assert_eq!(octree_decode(&octree_encode(&empty, 4).unwrap()).unwrap(), (empty, 4));
        let origin = set(&[[0, 0, 0]]);
        assert_eq!(octree_decode(&octree_encode(&origin, 0).unwrap()).unwrap(), (origin, 0));
        assert!(matches!(
            octree_encode(&set(&[[8, 0, 0]]), 3),
            Err(Error::OutOfRange { .. })
        ));
        assert!(octree_encode(&set(&[[0, 0, 0]]), 22).is_err());
        assert!(octree_decode(&[]).is_err());
        assert!(octree_decode(&[RAW_FLAG | 2, 0x01]).is_err());
        assert!(octree_decode(&[RAW_FLAG | 1, 0x00]).is_err());
        assert!(octree_decode(&[RAW_FLAG | 1, 0x01, 0x01]).is_err());
        assert!(octree_decode(&[0x80]).is_err());
    }

    #[test]
    fn coded_size_tracks_byte_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords = random_set(&mut rng, 5_000, 7);
        let raw = occupancy_levels(&coords, 7).unwrap().concat();
        let mut hist = [0usize; 256];
        raw.iter().for_each(|&b| hist[b as usize] += 1);
        let n = raw.len() as f64;
        let entropy_bytes: f64 = hist
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| -(c as f64) * (c as f64 / n).log2())
            .sum::<f64>()
            / 8.0;
        let bytes = octree_encode(&coords, 7).unwrap();
        let payload = (bytes.len() - 1) as f64;
        assert!((payload - entropy_bytes).abs() <= 0.2 * entropy_bytes, "{payload} vs {entropy_bytes}");
        assert_eq!(octree_decode(&bytes).unwrap().0, coords);
    }

    #[test]
    fn bits_per_point() {
        assert!((coords_bpp(300, 100_000).unwrap() - 0.024).abs() < 1e-12);
        assert_eq!(coords_bpp(0, 10).unwrap(), 0.0);
        assert_eq!(coords_bpp(20, 7).unwrap(), 2.0 * coords_bpp(10, 7).unwrap());
        assert!(coords_bpp(1, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip_and_size_bound(depth in 1u32..=10, n in 0usize..300, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coords = random_set(&mut rng, n, depth);
            let bytes = octree_encode(&coords, depth).unwrap();
            let (decoded, d) = octree_decode(&bytes).unwrap();
            prop_assert_eq!(d, depth);
            prop_assert_eq!(&decoded, &coords);
            prop_assert!(bytes.len() <= node_count(&coords, depth).unwrap() + 1);
        }
    }
}
