//! Tape-based reverse-mode differentiation over feature matrices.
//!
//! Each node holds one dense matrix (rows = voxels, columns = channels, or
//! 1x1 for scalar losses). Coordinates never enter the tape: they are
//! discrete side information carried next to the node ids by [`SparseVar`].
//! Backward walks the node list in exact reverse order of recording.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

use super::loss::{bce_with_logits, bce_with_logits_grad};
use super::params::{ParamId, ParamStore};
use crate::entropy::FactorizedPrior;
use crate::error::{Error, Result};
use crate::sparse::{conv_backward, conv_forward, kernel_map, ConvSpec, Coords, KernelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// A tape node together with the coordinate set its rows live on.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVar {
    pub node: NodeId,
    pub coords: Arc<Coords>,
    pub scale: u32,
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Input,
    Conv {
        x: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        map: Arc<KernelMap>,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Gather {
        x: NodeId,
        rows: Arc<Vec<usize>>,
    },
    Bce {
        logits: NodeId,
        targets: Arc<Vec<f64>>,
    },
    Rate {
        y: NodeId,
        prior: FactorizedPrior,
    },
    WeightedSum(Vec<(NodeId, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

type MapKey = (usize, usize, u32, u32, bool);

#[derive(Default)]
struct MapCache {
    maps: HashMap<MapKey, Arc<KernelMap>>,
    // Holds the coordinate sets alive so pointer keys stay unique.
    keep: Vec<Arc<Coords>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    cache: MapCache,
}

impl PartialEq for Tape {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.consumed == other.consumed
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("consumed", &self.consumed)
            .finish()
    }
}

/// Gradients of every node reached by a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    /// A leaf. Its gradient is reported by [`Gradients::get`] but nothing
    /// flows further back, so it doubles as a stop-gradient.
    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn kernel_map(&mut self, input: &Arc<Coords>, output: &Arc<Coords>, spec: &ConvSpec) -> Arc<KernelMap> {
        let key = (
            Arc::as_ptr(input) as usize,
            Arc::as_ptr(output) as usize,
            spec.kernel_size,
            spec.stride,
            spec.transposed,
        );
        if let Some(m) = self.cache.maps.get(&key) {
            return m.clone();
        }
        let map = Arc::new(kernel_map(input, output, spec));
        self.cache.keep.push(input.clone());
        self.cache.keep.push(output.clone());
        self.cache.maps.insert(key, map.clone());
        map
    }

    pub fn conv(
        &mut self,
        params: &ParamStore,
        x: NodeId,
        map: Arc<KernelMap>,
        weight: ParamId,
        bias: Option<ParamId>,
        out_channels: usize,
    ) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let w = params.value(weight);
        if xv.nrows() != map.n_in || w.len() != map.offsets.len() * xv.ncols() * out_channels {
            return Err(Error::Shape(format!(
                "conv: input {}x{}, kernel map expects {} rows, weight has {} values",
                xv.nrows(),
                xv.ncols(),
                map.n_in,
                w.len()
            )));
        }
        let b = bias.map(|b| params.value(b));
        if let Some(b) = b {
            if b.len() != out_channels {
                return Err(Error::Shape("conv: bias length".into()));
            }
        }
        let value = conv_forward(&map, xv.view(), w, b, out_channels);
        Ok(self.push(value, Op::Conv { x, weight, bias, map }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.dim() != vb.dim() {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", va.dim(), vb.dim())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Channel-wise concatenation of two matrices with the same rows.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.nrows() != vb.nrows() {
            return Err(Error::Shape(format!("concat: {} vs {} rows", va.nrows(), vb.nrows())));
        }
        let value = concatenate(Axis(1), &[va.view(), vb.view()]).expect("concat");
        Ok(self.push(value, Op::Concat(a, b)))
    }

    /// Keeps the given rows (the differentiable half of pruning).
    pub fn gather(&mut self, x: NodeId, rows: Arc<Vec<usize>>) -> NodeId {
        let value = self.nodes[x.0].value.select(Axis(0), &rows);
        self.push(value, Op::Gather { x, rows })
    }

    /// Mean binary cross-entropy of a single-column logit matrix.
    pub fn bce(&mut self, logits: NodeId, targets: Arc<Vec<f64>>) -> Result<NodeId> {
        let l = &self.nodes[logits.0].value;
        if l.ncols() != 1 || l.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "bce: logits {:?}, {} targets",
                l.dim(),
                targets.len()
            )));
        }
        let loss = bce_with_logits(l.column(0).as_slice().expect("contiguous column"), &targets);
        Ok(self.push(scalar(loss), Op::Bce { logits, targets }))
    }

    /// Total bits of `y` under the factorized prior.
    pub fn rate(&mut self, params: &ParamStore, y: NodeId, prior: &FactorizedPrior) -> Result<NodeId> {
        let bits = prior.bits(params, self.nodes[y.0].value.view())?;
        Ok(self.push(scalar(bits), Op::Rate { y, prior: prior.clone() }))
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, w) in &terms {
            let v = &self.nodes[id.0].value;
            if v.dim() != (1, 1) {
                return Err(Error::Shape("weighted_sum takes scalar nodes".into()));
            }
            total += w * v[[0, 0]];
        }
        Ok(self.push(scalar(total), Op::WeightedSum(terms)))
    }

    /// Propagates `cotangent` from `output` back through the tape,
    /// accumulating parameter gradients into `params`. A tape can be
    /// differentiated once.
    pub fn backward(
        &mut self,
        params: &mut ParamStore,
        output: NodeId,
        cotangent: Array2<f64>,
    ) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage("tape already consumed by a backward pass".into()));
        }
        if self.nodes[output.0].value.dim() != cotangent.dim() {
            return Err(Error::Shape("cotangent shape differs from output".into()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(cotangent);

        fn acc(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
            match &mut grads[id.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Conv { x, weight, bias, map } => {
                    let cg = conv_backward(
                        map,
                        self.nodes[x.0].value.view(),
                        params.value(*weight),
                        g.view(),
                    );
                    params.accumulate_grad(*weight, &cg.weights);
                    if let Some(b) = bias {
                        params.accumulate_grad(*b, &cg.bias);
                    }
                    acc(&mut grads, *x, cg.input);
                }
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&node.value, |d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Concat(a, b) => {
                    let ca = self.nodes[a.0].value.ncols();
                    acc(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::Gather { x, rows } => {
                    let mut gx = Array2::zeros(self.nodes[x.0].value.dim());
                    for (src, &r) in g.outer_iter().zip(rows.iter()) {
                        let mut dst = gx.row_mut(r);
                        dst += &src;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Bce { logits, targets } => {
                    let l = &self.nodes[logits.0].value;
                    let dl = bce_with_logits_grad(l.column(0).as_slice().unwrap(), targets);
                    let scale = g[[0, 0]];
                    let gl = Array2::from_shape_fn((dl.len(), 1), |(i, _)| dl[i] * scale);
                    acc(&mut grads, *logits, gl);
                }
                Op::Rate { y, prior } => {
                    let gy = prior.bits_backward(params, self.nodes[y.0].value.view(), g[[0, 0]])?;
                    acc(&mut grads, *y, gy);
                }
                Op::WeightedSum(terms) => {
                    for &(id, w) in terms {
                        acc(&mut grads, id, scalar(w * g[[0, 0]]));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn second_backward_is_usage_error() {
        let mut params = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0]]);
        let y = tape.relu(x);
        tape.backward(&mut params, y, array![[1.0]]).unwrap();
        assert!(matches!(
            tape.backward(&mut params, y, array![[1.0]]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn elementwise_gradients() {
        let mut params = ParamStore::new();
        let mut tape = Tape::new();
        let a = tape.input(array![[1.0, -2.0]]);
        let b = tape.input(array![[3.0, 4.0]]);
        let d = tape.sub(a, b).unwrap();
        let r = tape.relu(a);
        let c = tape.concat(d, r).unwrap();
        let g = tape
            .backward(&mut params, c, array![[1.0, 1.0, 1.0, 1.0]])
            .unwrap();
        assert_eq!(g.get(a).unwrap(), &array![[2.0, 1.0]]);
        assert_eq!(g.get(b).unwrap(), &array![[-1.0, -1.0]]);
    }

    #[test]
    fn gather_scatters_back() {
        let mut params = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0], [2.0], [3.0]]);
        let y = tape.gather(x, Arc::new(vec![0, 2]));
        assert_eq!(tape.value(y), &array![[1.0], [3.0]]);
        let g = tape.backward(&mut params, y, array![[5.0], [7.0]]).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[5.0], [0.0], [7.0]]);
    }
}
