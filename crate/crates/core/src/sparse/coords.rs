use std::collections::HashMap;
use std::ops::{Add, Deref, Mul};

/// Integer voxel coordinate at some scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }

    /// Parent coordinate after `times` halvings (floor division).
    pub fn downsample(self, times: u32) -> Self {
        Self::new(self.x >> times, self.y >> times, self.z >> times)
    }

    pub fn in_cube(self, side: i64) -> bool {
        [self.x, self.y, self.z]
            .iter()
            .all(|&v| v >= 0 && (v as i64) < side)
    }

    pub fn squared_distance(self, other: Coord) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        let dz = (self.z - other.z) as i64;
        dx * dx + dy * dy + dz * dz
    }
}

impl From<[i32; 3]> for Coord {
    fn from(c: [i32; 3]) -> Self {
        Self::new(c[0], c[1], c[2])
    }
}

impl Add for Coord {
    type Output = Coord;
    fn add(self, rhs: Coord) -> Coord {
        Coord::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Mul<i32> for Coord {
    type Output = Coord;
    fn mul(self, rhs: i32) -> Coord {
        Coord::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// A canonical coordinate set: unique and sorted lexicographically by (x, y, z).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Coords(Vec<Coord>);

impl Coords {
    /// Sorts and deduplicates.
    pub fn from_unsorted(mut points: Vec<Coord>) -> Self {
        points.sort_unstable();
        points.dedup();
        Self(points)
    }

    /// Wraps a vector the caller guarantees is already canonical.
    pub(crate) fn from_canonical(points: Vec<Coord>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0] < w[1]));
        Self(points)
    }

    pub fn as_slice(&self) -> &[Coord] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Coord> {
        self.0
    }

    pub fn index_of(&self, c: &Coord) -> Option<usize> {
        self.0.binary_search(c).ok()
    }

    pub fn contains(&self, c: &Coord) -> bool {
        self.index_of(c).is_some()
    }

    pub fn index_map(&self) -> HashMap<Coord, u32> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32))
            .collect()
    }

    /// `floor(c / 2^times)` for every coordinate, deduplicated.
    pub fn downsample(&self, times: u32) -> Coords {
        // Floor division is monotone per axis, so the lexicographic order of
        // the input survives up to runs of duplicates.
        let mut out: Vec<Coord> = self.0.iter().map(|c| c.downsample(times)).collect();
        out.sort_unstable();
        out.dedup();
        Coords(out)
    }

    /// All eight children `2c + {0,1}^3` of every coordinate.
    pub fn upsample_children(&self) -> Coords {
        let mut out = Vec::with_capacity(self.0.len() * 8);
        for &c in &self.0 {
            for o in unit_cube_offsets() {
                out.push(c * 2 + o);
            }
        }
        out.sort_unstable();
        Coords(out)
    }
}

impl Deref for Coords {
    type Target = [Coord];
    fn deref(&self) -> &[Coord] {
        &self.0
    }
}

impl FromIterator<Coord> for Coords {
    fn from_iter<I: IntoIterator<Item = Coord>>(iter: I) -> Self {
        Self::from_unsorted(iter.into_iter().collect())
    }
}

/// `{0,1}^3` in child-index order `(x << 2) | (y << 1) | z`.
pub fn unit_cube_offsets() -> impl Iterator<Item = Coord> {
    (0..8).map(|i| Coord::new((i >> 2) & 1, (i >> 1) & 1, i & 1))
}

/// Free-function form used by the pipeline and tests.
pub fn downsample_coords(coords: &Coords, times: u32) -> Coords {
    coords.downsample(times)
}
