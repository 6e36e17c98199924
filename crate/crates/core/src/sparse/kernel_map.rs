use super::coords::{Coord, Coords};

/// Shape of one sparse convolution layer. Kernels are cubic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: u32,
    pub stride: u32,
    pub transposed: bool,
}

impl ConvSpec {
    /// Stride-1 convolution with an odd cubic kernel.
    pub const fn same(in_channels: usize, out_channels: usize, kernel_size: u32) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            transposed: false,
        }
    }

    /// 2x2x2 stride-2 downsampling convolution.
    pub const fn down(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size: 2,
            stride: 2,
            transposed: false,
        }
    }

    /// 2x2x2 stride-2 generative transposed convolution.
    pub const fn up(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size: 2,
            stride: 2,
            transposed: true,
        }
    }

    pub fn kernel_volume(&self) -> usize {
        (self.kernel_size as usize).pow(3)
    }

    pub fn weight_len(&self) -> usize {
        self.kernel_volume() * self.in_channels * self.out_channels
    }

    /// Kernel support in lexicographic order. Odd kernels are centred on the
    /// origin; even kernels span `[0, k)` per axis.
    pub fn offsets(&self) -> Vec<Coord> {
        let k = self.kernel_size as i32;
        let (lo, hi) = if k % 2 == 1 { (-(k / 2), k / 2) } else { (0, k - 1) };
        let mut out = Vec::with_capacity(self.kernel_volume());
        for x in lo..=hi {
            for y in lo..=hi {
                for z in lo..=hi {
                    out.push(Coord::new(x, y, z));
                }
            }
        }
        out
    }
}

/// Input/output row pairs linked by each kernel offset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KernelMap {
    pub offsets: Vec<Coord>,
    /// `pairs[k]` holds `(input_row, output_row)` for `offsets[k]`.
    pub pairs: Vec<Vec<(u32, u32)>>,
    pub n_in: usize,
    pub n_out: usize,
}

impl KernelMap {
    pub fn num_pairs(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

/// Builds the kernel map linking `input` to `output` under `spec`.
///
/// Regular convolutions pair `input[i] == stride * output[j] + o`;
/// transposed ones pair `output[j] == stride * input[i] + o`.
pub fn kernel_map(input: &Coords, output: &Coords, spec: &ConvSpec) -> KernelMap {
    let offsets = spec.offsets();
    let stride = spec.stride as i32;
    let pairs = if spec.transposed {
        let lookup = output.index_map();
        offsets
            .iter()
            .map(|&o| {
                input
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &c)| lookup.get(&(c * stride + o)).map(|&j| (i as u32, j)))
                    .collect()
            })
            .collect()
    } else {
        let lookup = input.index_map();
        offsets
            .iter()
            .map(|&o| {
                output
                    .iter()
                    .enumerate()
                    .filter_map(|(j, &c)| lookup.get(&(c * stride + o)).map(|&i| (i, j as u32)))
                    .collect()
            })
            .collect()
    };
    KernelMap {
        offsets,
        pairs,
        n_in: input.len(),
        n_out: output.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn set(pts: &[[i32; 3]]) -> Coords {
        pts.iter().map(|&p| Coord::from(p)).collect()
    }

    #[test]
    fn singleton_identity() {
        let c = set(&[[0, 0, 0]]);
        let map = kernel_map(&c, &c, &ConvSpec::same(1, 1, 3));
        assert_eq!(map.num_pairs(), 1);
        let k = map.offsets.iter().position(|&o| o == Coord::default()).unwrap();
        assert_eq!(map.pairs[k], vec![(0, 0)]);
    }

    #[test]
    fn two_inputs_one_output() {
        let input = set(&[[0, 0, 0], [1, 0, 0]]);
        let output = set(&[[0, 0, 0]]);
        let map = kernel_map(&input, &output, &ConvSpec::same(1, 1, 3));
        let found: BTreeSet<(Coord, u32, u32)> = map
            .offsets
            .iter()
            .zip(&map.pairs)
            .flat_map(|(&o, p)| p.iter().map(move |&(i, j)| (o, i, j)))
            .collect();
        let expected: BTreeSet<_> = [(Coord::new(0, 0, 0), 0, 0), (Coord::new(1, 0, 0), 1, 0)]
            .into_iter()
            .collect();
        assert_eq!(found, expected);
    }

    fn brute_force(input: &Coords, output: &Coords, spec: &ConvSpec) -> BTreeSet<(usize, u32, u32)> {
        let s = spec.stride as i32;
        let mut out = BTreeSet::new();
        for (k, &o) in spec.offsets().iter().enumerate() {
            for (i, &a) in input.iter().enumerate() {
                for (j, &b) in output.iter().enumerate() {
                    let hit = if spec.transposed { b == a * s + o } else { a == b * s + o };
                    if hit {
                        out.insert((k, i as u32, j as u32));
                    }
                }
            }
        }
        out
    }

    fn flatten(map: &KernelMap) -> BTreeSet<(usize, u32, u32)> {
        map.pairs
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.iter().map(move |&(i, j)| (k, i, j)))
            .collect()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, side: i32) -> Coords {
        (0..n)
            .map(|_| {
                Coord::new(
                    rng.random_range(0..side),
                    rng.random_range(0..side),
                    rng.random_range(0..side),
                )
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_set(&mut rng, 50, 6);
            let b = random_set(&mut rng, 50, 6);
            for spec in [ConvSpec::same(1, 1, 3), ConvSpec::same(1, 1, 1), ConvSpec::same(1, 1, 5)] {
                let map = kernel_map(&a, &b, &spec);
                assert_eq!(flatten(&map), brute_force(&a, &b, &spec));
                let total = map.num_pairs();
                // Each (offset, output) pair admits at most one input.
                assert_eq!(total, flatten(&map).len());
            }
            let coarse = a.downsample(1);
            let down = ConvSpec::down(1, 1);
            assert_eq!(flatten(&kernel_map(&a, &coarse, &down)), brute_force(&a, &coarse, &down));
            let fine = a.upsample_children();
            let up = ConvSpec::up(1, 1);
            assert_eq!(flatten(&kernel_map(&a, &fine, &up)), brute_force(&a, &fine, &up));
        }
    }
}
