//! Synthetic dynamic sequences: a voxelized surface translating rigidly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{Coord, Coords};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ToyShape {
    /// Ellipsoid shell with the given semi-axes.
    Ellipsoid([f64; 3]),
    /// Hollow axis-aligned box with the given half-extents.
    Box([i32; 3]),
    /// Torus around the z axis.
    Torus { major: f64, minor: f64 },
}

impl ToyShape {
    pub fn random(rng: &mut impl Rng, max_radius: f64) -> Self {
        let r = |rng: &mut dyn rand::RngCore| rng.random_range(0.55..1.0) * max_radius;
        match rng.random_range(0..3) {
            0 => ToyShape::Ellipsoid([r(rng), r(rng), r(rng)]),
            1 => ToyShape::Box([r(rng) as i32, r(rng) as i32, r(rng) as i32]),
            _ => {
                let major = r(rng) * 0.7;
                ToyShape::Torus {
                    major,
                    minor: rng.random_range(0.3..0.45) * major,
                }
            }
        }
    }

    fn radius(&self) -> i32 {
        match *self {
            ToyShape::Ellipsoid(a) => a.iter().cloned().fold(0.0, f64::max).ceil() as i32 + 1,
            ToyShape::Box(h) => *h.iter().max().unwrap() + 1,
            ToyShape::Torus { major, minor } => (major + minor).ceil() as i32 + 1,
        }
    }

    fn contains_surface(&self, p: [f64; 3]) -> bool {
        match *self {
            ToyShape::Ellipsoid(a) => {
                // Distance to the surface estimated from the implicit form.
                let f = (p[0] / a[0]).powi(2) + (p[1] / a[1]).powi(2) + (p[2] / a[2]).powi(2);
                let g = [2.0 * p[0] / (a[0] * a[0]), 2.0 * p[1] / (a[1] * a[1]), 2.0 * p[2] / (a[2] * a[2])];
                let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                norm > 0.0 && ((f - 1.0) / norm).abs() <= 0.5
            }
            ToyShape::Box(h) => {
                let inside = (0..3).all(|i| p[i].abs() <= h[i] as f64);
                inside && (0..3).any(|i| p[i].abs() == h[i] as f64)
            }
            ToyShape::Torus { major, minor } => {
                let q = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                ((q * q + p[2] * p[2]).sqrt() - minor).abs() <= 0.5
            }
        }
    }

    /// Surface voxels relative to the shape's centre.
    pub fn voxels(&self) -> Vec<Coord> {
        let r = self.radius();
        let mut out = Vec::new();
        for x in -r..=r {
            for y in -r..=r {
                for z in -r..=r {
                    if self.contains_surface([x as f64, y as f64, z as f64]) {
                        out.push(Coord::new(x, y, z));
                    }
                }
            }
        }
        out
    }
}

/// A rigid shape moving by `velocity` voxels per frame inside a
/// `2^depth` cube, placed so the whole trajectory stays in range.
pub fn toy_sequence(shape: ToyShape, velocity: [i32; 3], frames: usize, depth: u32, rng: &mut impl Rng) -> Result<Vec<Coords>> {
    let side = 1i32 << depth;
    let r = shape.radius();
    let steps = frames.saturating_sub(1) as i32;
    let mut start = [0i32; 3];
    for i in 0..3 {
        let travel = velocity[i] * steps;
        let lo = r - travel.min(0);
        let hi = side - 1 - r - travel.max(0);
        if lo > hi {
            return Err(Error::Config(format!(
                "shape of radius {r} moving {velocity:?} for {frames} frames does not fit depth {depth}"
            )));
        }
        start[i] = rng.random_range(lo..=hi);
    }
    let body = shape.voxels();
    Ok((0..frames as i32)
        .map(|t| {
            let offset = Coord::new(start[0] + velocity[0] * t, start[1] + velocity[1] * t, start[2] + velocity[2] * t);
            body.iter().map(|&c| c + offset).collect()
        })
        .collect())
}

/// Random shape, random direction, `speed` voxels per frame along one or two
/// axes.
pub fn random_toy_sequence(seed: u64, frames: usize, depth: u32, speed: i32) -> Result<Vec<Coords>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_radius = (1 << depth) as f64 * 0.35;
    let shape = ToyShape::random(&mut rng, max_radius);
    let mut velocity = [0i32; 3];
    let axis = rng.random_range(0..3);
    velocity[axis] = if rng.random_bool(0.5) { speed } else { -speed };
    if speed > 1 && rng.random_bool(0.5) {
        let other = (axis + 1 + rng.random_range(0..2)) % 3;
        velocity[other] = rng.random_range(-1..=1);
    }
    toy_sequence(shape, velocity, frames, depth, &mut rng)
}
