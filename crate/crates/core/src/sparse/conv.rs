//! Sparse convolution over a kernel map.
//!
//! Every variant (stride 1, stride-2 down, generative transposed, and
//! convolution onto an arbitrary target coordinate set) reduces to the same
//! gather / multiply / scatter loop once the kernel map is known. Per-offset
//! products run in parallel; the scatter into output rows is sequential in
//! offset order, so results do not depend on the thread count.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::coords::Coords;
use super::kernel_map::{kernel_map, ConvSpec, KernelMap};
use super::tensor::SparseTensor;
use crate::error::{Error, Result};

fn weight_block(weights: &[f64], k: usize, cin: usize, cout: usize) -> ArrayView2<'_, f64> {
    let stride = cin * cout;
    ArrayView2::from_shape((cin, cout), &weights[k * stride..(k + 1) * stride])
        .expect("weight block shape")
}

fn gather_rows(src: &ArrayView2<f64>, rows: impl ExactSizeIterator<Item = usize>) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), src.ncols()));
    for (dst, r) in out.outer_iter_mut().zip(rows) {
        dst.into_slice().unwrap().copy_from_slice(src.row(r).as_slice().unwrap());
    }
    out
}

fn scatter_add(dst: &mut Array2<f64>, rows: impl Iterator<Item = usize>, src: &Array2<f64>) {
    for (r, s) in rows.zip(src.outer_iter()) {
        let d = dst.row_mut(r).into_slice().unwrap();
        for (a, b) in d.iter_mut().zip(s.iter()) {
            *a += b;
        }
    }
}

/// `out[j] = bias + sum_k sum_{(i,j) in map[k]} x[i] W[k]`.
///
/// `weights` is laid out offset-major as `[kernel_volume][cin][cout]`.
pub fn conv_forward(
    map: &KernelMap,
    x: ArrayView2<f64>,
    weights: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
) -> Array2<f64> {
    let cin = x.ncols();
    assert_eq!(weights.len(), map.offsets.len() * cin * cout, "weight length");
    let x = x.as_standard_layout();
    let xv = x.view();
    let products: Vec<Option<Array2<f64>>> = map
        .pairs
        .par_iter()
        .enumerate()
        .map(|(k, pairs)| {
            if pairs.is_empty() {
                return None;
            }
            let a = gather_rows(&xv, pairs.iter().map(|p| p.0 as usize));
            Some(a.dot(&weight_block(weights, k, cin, cout)))
        })
        .collect();

    let mut out = Array2::zeros((map.n_out, cout));
    if let Some(b) = bias {
        for mut row in out.outer_iter_mut() {
            row.iter_mut().zip(b).for_each(|(o, &v)| *o = v);
        }
    }
    for (pairs, prod) in map.pairs.iter().zip(&products) {
        if let Some(prod) = prod {
            scatter_add(&mut out, pairs.iter().map(|p| p.1 as usize), prod);
        }
    }
    out
}

/// Gradients of [`conv_forward`] given the output cotangent.
pub struct ConvGrads {
    pub input: Array2<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv_backward(
    map: &KernelMap,
    x: ArrayView2<f64>,
    weights: &[f64],
    grad_out: ArrayView2<f64>,
) -> ConvGrads {
    let cin = x.ncols();
    let cout = grad_out.ncols();
    let x = x.as_standard_layout();
    let g = grad_out.as_standard_layout();
    let (xv, gv) = (x.view(), g.view());

    let per_offset: Vec<Option<(Array2<f64>, Array2<f64>)>> = map
        .pairs
        .par_iter()
        .enumerate()
        .map(|(k, pairs)| {
            if pairs.is_empty() {
                return None;
            }
            let a = gather_rows(&xv, pairs.iter().map(|p| p.0 as usize));
            let go = gather_rows(&gv, pairs.iter().map(|p| p.1 as usize));
            let w = weight_block(weights, k, cin, cout);
            let gx = go.dot(&w.t());
            let gw = a.t().dot(&go);
            Some((gx, gw))
        })
        .collect();

    let mut grad_x = Array2::zeros((map.n_in, cin));
    let mut grad_w = vec![0.0; weights.len()];
    for (k, (pairs, entry)) in map.pairs.iter().zip(per_offset).enumerate() {
        if let Some((gx, gw)) = entry {
            scatter_add(&mut grad_x, pairs.iter().map(|p| p.0 as usize), &gx);
            let block = &mut grad_w[k * cin * cout..(k + 1) * cin * cout];
            block
                .iter_mut()
                .zip(gw.as_standard_layout().iter())
                .for_each(|(d, s)| *d = *s);
        }
    }
    let grad_b = g.sum_axis(Axis(0)).to_vec();
    ConvGrads {
        input: grad_x,
        weights: grad_w,
        bias: grad_b,
    }
}

/// Output coordinates implied by `spec` when no target set is given.
pub fn output_coords(input: &SparseTensor, spec: &ConvSpec) -> Result<(Arc<Coords>, u32)> {
    match (spec.stride, spec.transposed) {
        (1, false) => Ok((input.coords().clone(), input.scale())),
        (2, false) => Ok((Arc::new(input.coords().downsample(1)), input.scale() + 1)),
        (2, true) => {
            if input.scale() == 0 {
                return Err(Error::Shape("cannot upsample a scale-0 tensor".into()));
            }
            Ok((Arc::new(input.coords().upsample_children()), input.scale() - 1))
        }
        (s, t) => Err(Error::Shape(format!("unsupported stride {s} (transposed: {t})"))),
    }
}

fn check_params(input: &SparseTensor, spec: &ConvSpec, weights: &[f64], bias: &[f64]) -> Result<()> {
    if input.channels() != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, layer expects {}",
            input.channels(),
            spec.in_channels
        )));
    }
    if weights.len() != spec.weight_len() {
        return Err(Error::Shape(format!(
            "weights have {} entries, layer expects {}",
            weights.len(),
            spec.weight_len()
        )));
    }
    if bias.len() != spec.out_channels {
        return Err(Error::Shape(format!(
            "bias has {} entries, layer expects {}",
            bias.len(),
            spec.out_channels
        )));
    }
    Ok(())
}

/// Generalized sparse convolution.
///
/// With `target` given, the output lives exactly on `target` (same scale as
/// the input); output rows that no input reaches receive the bias alone.
pub fn sparse_conv(
    input: &SparseTensor,
    spec: &ConvSpec,
    weights: &[f64],
    bias: &[f64],
    target: Option<Arc<Coords>>,
) -> Result<SparseTensor> {
    check_params(input, spec, weights, bias)?;
    let (out_coords, out_scale) = match target {
        Some(t) => (t, input.scale()),
        None => output_coords(input, spec)?,
    };
    let map = kernel_map(input.coords(), &out_coords, spec);
    let feats = conv_forward(&map, input.feats().view(), weights, Some(bias), spec.out_channels);
    SparseTensor::new(out_coords, feats, input.depth(), out_scale)
}

/// Generative 2x2x2 transposed convolution: every occupied voxel spawns all
/// eight children one scale finer.
pub fn transpose_conv_up(
    input: &SparseTensor,
    spec: &ConvSpec,
    weights: &[f64],
    bias: &[f64],
) -> Result<SparseTensor> {
    if !(spec.transposed && spec.stride == 2 && spec.kernel_size == 2) {
        return Err(Error::Shape("transpose_conv_up needs k=2, s=2, transposed".into()));
    }
    sparse_conv(input, spec, weights, bias, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::coords::Coord;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(points: &[[i32; 3]], feats: Array2<f64>, scale: u32) -> SparseTensor {
        let coords: Vec<Coord> = points.iter().map(|&p| p.into()).collect();
        crate::sparse::build_tensor(&coords, &feats, 10, scale).unwrap()
    }

    #[test]
    fn identity_pointwise_kernel() {
        let t = tensor(&[[0, 0, 0], [1, 2, 3], [4, 4, 4]], array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], 0);
        let spec = ConvSpec::same(2, 2, 1);
        let out = sparse_conv(&t, &spec, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], Some(t.coords().clone())).unwrap();
        assert_eq!(out.feats(), t.feats());
    }

    #[test]
    fn target_coordinate_single_pair() {
        let t = tensor(&[[0, 0, 0]], array![[1.0]], 0);
        let spec = ConvSpec::same(1, 2, 3);
        let weights = vec![1.0; spec.weight_len()];
        let target = Arc::new(Coords::from_unsorted(vec![Coord::new(1, 1, 1)]));
        let out = sparse_conv(&t, &spec, &weights, &[0.0, 0.0], Some(target.clone())).unwrap();
        assert_eq!(out.coords(), &target);
        assert_eq!(out.feats(), &array![[1.0, 1.0]]);
    }

    #[test]
    fn unreached_target_rows_get_bias() {
        let t = tensor(&[[0, 0, 0]], array![[5.0]], 0);
        let spec = ConvSpec::same(1, 1, 3);
        let target = Arc::new(Coords::from_unsorted(vec![Coord::new(9, 9, 9)]));
        let out = sparse_conv(&t, &spec, &vec![1.0; 27], &[0.25], Some(target)).unwrap();
        assert_eq!(out.feats(), &array![[0.25]]);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let t = tensor(&[[0, 0, 0]], array![[1.0, 1.0]], 0);
        let spec = ConvSpec::same(1, 1, 3);
        assert!(matches!(
            sparse_conv(&t, &spec, &vec![0.0; 27], &[0.0], None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn stride_two_outputs_follow_downsample_rule() {
        let t = tensor(&[[0, 0, 0], [1, 1, 1], [2, 2, 2], [5, 0, 3]], Array2::ones((4, 1)), 0);
        let spec = ConvSpec::down(1, 1);
        let out = sparse_conv(&t, &spec, &[1.0; 8], &[0.0], None).unwrap();
        assert_eq!(**out.coords(), t.coords().downsample(1));
        assert_eq!(out.scale(), 1);
        // Each parent sums its children with an all-ones kernel.
        assert_eq!(out.feats().column(0).to_vec(), vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn transposed_children() {
        let t = tensor(&[[0, 0, 0]], array![[1.0]], 1);
        let spec = ConvSpec::up(1, 1);
        let w: Vec<f64> = (0..8).map(f64::from).collect();
        let out = transpose_conv_up(&t, &spec, &w, &[0.0]).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out.scale(), 0);
        // Child with index (x<<2)|(y<<1)|z receives weight of the same offset.
        assert_eq!(out.feats().column(0).to_vec(), w);

        let t2 = tensor(&[[0, 0, 0], [1, 0, 0]], array![[1.0], [1.0]], 1);
        assert_eq!(transpose_conv_up(&t2, &spec, &w, &[0.0]).unwrap().len(), 16);
        assert!(transpose_conv_up(&tensor(&[[0, 0, 0]], array![[1.0]], 0), &spec, &w, &[0.0]).is_err());
    }

    /// Dense reference: materialize an 8^3 grid and evaluate the convolution
    /// definition directly, one output voxel at a time.
    fn dense_reference(input: &SparseTensor, spec: &ConvSpec, w: &[f64], b: &[f64], out: &Coords) -> Array2<f64> {
        const N: i32 = 8;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let cell = |c: Coord| ((c.x * N + c.y) * N + c.z) as usize;
        let mut grid = vec![0.0; (N * N * N) as usize * cin];
        for (c, row) in input.coords().iter().zip(input.feats().outer_iter()) {
            for ch in 0..cin {
                grid[cell(*c) * cin + ch] = row[ch];
            }
        }
        let k = spec.kernel_size as i32;
        let lo = if k % 2 == 1 { -(k / 2) } else { 0 };
        let s = spec.stride as i32;
        let inside = |c: Coord| (0..N).contains(&c.x) && (0..N).contains(&c.y) && (0..N).contains(&c.z);
        let mut result = Array2::zeros((out.len(), cout));
        for (j, &o) in out.iter().enumerate() {
            for co in 0..cout {
                let mut acc = b[co];
                let mut idx = 0;
                for dx in lo..lo + k {
                    for dy in lo..lo + k {
                        for dz in lo..lo + k {
                            let d = Coord::new(dx, dy, dz);
                            if spec.transposed {
                                // o = s * i + d must hold for an integral i.
                                let r = Coord::new(o.x - dx, o.y - dy, o.z - dz);
                                if r.x % s == 0 && r.y % s == 0 && r.z % s == 0 {
                                    let i = Coord::new(r.x / s, r.y / s, r.z / s);
                                    if inside(i) {
                                        for ci in 0..cin {
                                            acc += grid[cell(i) * cin + ci] * w[(idx * cin + ci) * cout + co];
                                        }
                                    }
                                }
                            } else {
                                let i = o * s + d;
                                if inside(i) {
                                    for ci in 0..cin {
                                        acc += grid[cell(i) * cin + ci] * w[(idx * cin + ci) * cout + co];
                                    }
                                }
                            }
                            idx += 1;
                        }
                    }
                }
                result[[j, co]] = acc;
            }
        }
        result
    }

    fn random_tensor(rng: &mut impl Rng, n: usize, side: i32, cin: usize, scale: u32) -> SparseTensor {
        let pts: Vec<Coord> = (0..n)
            .map(|_| Coord::new(rng.random_range(0..side), rng.random_range(0..side), rng.random_range(0..side)))
            .collect();
        let coords = Coords::from_unsorted(pts);
        let feats = Array2::from_shape_fn((coords.len(), cin), |_| rng.random_range(-1.0..1.0));
        SparseTensor::new(Arc::new(coords), feats, 10, scale).unwrap()
    }

    #[test]
    fn matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
            let spec = match trial % 4 {
                0 => ConvSpec::same(cin, cout, 3),
                1 => ConvSpec::same(cin, cout, 1),
                2 => ConvSpec::down(cin, cout),
                _ => ConvSpec::up(cin, cout),
            };
            let side = if spec.transposed { 4 } else { 8 };
            let t = random_tensor(&mut rng, 40, side, cin, 1);
            let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = sparse_conv(&t, &spec, &w, &b, None).unwrap();
            let reference = dense_reference(&t, &spec, &w, &b, out.coords());
            let err = (out.feats() - &reference).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-9, "trial {trial} ({spec:?}): {err}");

            if !spec.transposed && spec.stride == 1 {
                // Convolution onto an unrelated target set.
                let target = random_tensor(&mut rng, 30, 8, 1, 1).coords().clone();
                let out = sparse_conv(&t, &spec, &w, &b, Some(target.clone())).unwrap();
                let reference = dense_reference(&t, &spec, &w, &b, &target);
                let err = (out.feats() - &reference).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(err < 1e-9, "target trial {trial}: {err}");
            }
        }
    }

    #[test]
    fn input_gradient_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let spec = [ConvSpec::same(3, 2, 3), ConvSpec::down(3, 2), ConvSpec::up(3, 2)][trial % 3];
            let t = random_tensor(&mut rng, 60, 8, 3, 1);
            let (out_coords, _) = output_coords(&t, &spec).unwrap();
            let map = kernel_map(t.coords(), &out_coords, &spec);
            let w: Vec<f64> = (0..spec.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = Array2::from_shape_fn((out_coords.len(), 2), |_| rng.random_range(-1.0..1.0));
            let ax = conv_forward(&map, t.feats().view(), &w, None, 2);
            let aty = conv_backward(&map, t.feats().view(), &w, y.view()).input;
            let lhs = (&ax * &y).sum();
            let rhs = (t.feats() * &aty).sum();
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    proptest::proptest! {
        #[test]
        fn strided_downsampling_composes(
            pts in proptest::collection::vec((0i32..64, 0i32..64, 0i32..64), 1..200),
        ) {
            let coords: Vec<Coord> = pts.into_iter().map(|(x, y, z)| Coord::new(x, y, z)).collect();
            let t = crate::sparse::build_tensor(&coords, &Array2::ones((coords.len(), 1)), 6, 0).unwrap();
            let spec = ConvSpec::down(1, 1);
            let once = sparse_conv(&t, &spec, &[1.0; 8], &[0.0], None).unwrap();
            let twice = sparse_conv(&once, &spec, &[1.0; 8], &[0.0], None).unwrap();
            proptest::prop_assert_eq!(&**twice.coords(), &t.coords().downsample(2));
            proptest::prop_assert_eq!(twice.scale(), 2);
            // All-ones kernels count the voxels under each parent.
            proptest::prop_assert_eq!(twice.feats().sum(), t.len() as f64);
        }
    }
}
