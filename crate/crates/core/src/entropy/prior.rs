//! Fully factorized density model.
//!
//! Each channel owns a chain of four monotone stages mapping a scalar to a
//! logit: `v <- softplus(H_k) v + b_k`, followed for the first three stages
//! by `v <- v + tanh(a_k) * tanh(v)`. The channel CDF is `sigmoid(logit)`.
//! Positive matrices and gates bounded below by -1 keep every stage
//! increasing, so the CDF is strictly monotone for any parameter values.
#![allow(clippy::needless_range_loop)]

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{sigmoid, ParamId, ParamStore};

/// Hidden widths of the chain: 1 -> 3 -> 3 -> 3 -> 1.
const WIDTHS: [usize; 5] = [1, 3, 3, 3, 1];
const STAGES: usize = 4;
const W: usize = 3;

/// Probabilities below this are clamped before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPrior {
    pub channels: usize,
    matrices: [ParamId; STAGES],
    biases: [ParamId; STAGES],
    gates: [ParamId; STAGES - 1],
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Per-channel parameter snapshot, transformed once per evaluation.
#[derive(Clone, Copy, Debug)]
struct Chain {
    raw: [[[f64; W]; W]; STAGES],
    pos: [[[f64; W]; W]; STAGES],
    bias: [[f64; W]; STAGES],
    gate_tanh: [[f64; W]; STAGES - 1],
}

/// Activations saved by a forward evaluation for the backward pass.
#[derive(Clone, Copy, Debug, Default)]
struct Trace {
    input: [[f64; W]; STAGES],
    pre: [[f64; W]; STAGES],
}

#[derive(Clone, Copy, Debug, Default)]
struct ChainGrad {
    raw: [[[f64; W]; W]; STAGES],
    bias: [[f64; W]; STAGES],
    gate: [[f64; W]; STAGES - 1],
}

impl ChainGrad {
    fn add(&mut self, o: &ChainGrad) {
        for k in 0..STAGES {
            for i in 0..W {
                self.bias[k][i] += o.bias[k][i];
                for j in 0..W {
                    self.raw[k][i][j] += o.raw[k][i][j];
                }
                if k < STAGES - 1 {
                    self.gate[k][i] += o.gate[k][i];
                }
            }
        }
    }
}

impl Chain {
    fn logit(&self, x: f64) -> f64 {
        self.logit_traced(x, None)
    }

    fn logit_traced(&self, x: f64, mut trace: Option<&mut Trace>) -> f64 {
        let mut v = [0.0; W];
        v[0] = x;
        for k in 0..STAGES {
            let (n_in, n_out) = (WIDTHS[k], WIDTHS[k + 1]);
            let mut pre = [0.0; W];
            for o in 0..n_out {
                let mut acc = self.bias[k][o];
                for i in 0..n_in {
                    acc += self.pos[k][o][i] * v[i];
                }
                pre[o] = acc;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.input[k] = v;
                t.pre[k] = pre;
            }
            v = pre;
            if k < STAGES - 1 {
                for o in 0..n_out {
                    v[o] += self.gate_tanh[k][o] * pre[o].tanh();
                }
            }
        }
        v[0]
    }

    /// Given `d loss / d logit` at `x`, accumulates parameter gradients and
    /// returns `d loss / d x`.
    fn backward(&self, trace: &Trace, upstream: f64, grad: &mut ChainGrad) -> f64 {
        let mut g = [0.0; W];
        g[0] = upstream;
        for k in (0..STAGES).rev() {
            let (n_in, n_out) = (WIDTHS[k], WIDTHS[k + 1]);
            let mut g_pre = g;
            if k < STAGES - 1 {
                for o in 0..n_out {
                    let th = trace.pre[k][o].tanh();
                    let ga = self.gate_tanh[k][o];
                    g_pre[o] = g[o] * (1.0 + ga * (1.0 - th * th));
                    grad.gate[k][o] += g[o] * th * (1.0 - ga * ga);
                }
            }
            let mut g_in = [0.0; W];
            for o in 0..n_out {
                grad.bias[k][o] += g_pre[o];
                for i in 0..n_in {
                    grad.raw[k][o][i] += g_pre[o] * trace.input[k][i] * sigmoid(self.raw[k][o][i]);
                    g_in[i] += self.pos[k][o][i] * g_pre[o];
                }
            }
            g = g_in;
        }
        g[0]
    }
}

/// Mass of the unit bin centred on `y`, from the logits at its edges.
fn bin_probability(lower: f64, upper: f64) -> (f64, f64) {
    // Reflect into the left tail where sigmoid differences keep precision.
    let s = if lower + upper > 0.0 { -1.0 } else { 1.0 };
    let diff = sigmoid(s * upper) - sigmoid(s * lower);
    (diff.abs(), s * diff.signum())
}

impl FactorizedPrior {
    /// Registers the prior's parameters. `init_scale` sets the initial
    /// spread: the chain starts as a logistic of roughly that scale.
    pub fn new<R: Rng>(
        params: &mut ParamStore,
        name: &str,
        channels: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("prior needs at least one channel".into()));
        }
        let per_stage = init_scale.powf(1.0 / STAGES as f64);
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut gates = Vec::new();
        for k in 0..STAGES {
            let (n_in, n_out) = (WIDTHS[k], WIDTHS[k + 1]);
            let init = (1.0 / per_stage / n_in as f64).exp_m1().ln();
            let n = channels * n_out * n_in;
            matrices.push(params.add(format!("{name}.matrix{k}"), &[channels, n_out, n_in], vec![init; n])?);
            let b = (0..channels * n_out).map(|_| rng.random_range(-0.5..0.5)).collect();
            biases.push(params.add(format!("{name}.bias{k}"), &[channels, n_out], b)?);
            if k < STAGES - 1 {
                gates.push(params.add_zeros(format!("{name}.gate{k}"), &[channels, n_out])?);
            }
        }
        Ok(Self {
            channels,
            matrices: matrices.try_into().unwrap(),
            biases: biases.try_into().unwrap(),
            gates: gates.try_into().unwrap(),
        })
    }

    fn chain(&self, params: &ParamStore, c: usize) -> Chain {
        let mut ch = Chain {
            raw: [[[0.0; W]; W]; STAGES],
            pos: [[[0.0; W]; W]; STAGES],
            bias: [[0.0; W]; STAGES],
            gate_tanh: [[0.0; W]; STAGES - 1],
        };
        for k in 0..STAGES {
            let (n_in, n_out) = (WIDTHS[k], WIDTHS[k + 1]);
            let m = params.value(self.matrices[k]);
            let b = params.value(self.biases[k]);
            for o in 0..n_out {
                ch.bias[k][o] = b[c * n_out + o];
                for i in 0..n_in {
                    let r = m[(c * n_out + o) * n_in + i];
                    ch.raw[k][o][i] = r;
                    ch.pos[k][o][i] = softplus(r);
                }
                if k < STAGES - 1 {
                    let a = params.value(self.gates[k])[c * n_out + o];
                    ch.gate_tanh[k][o] = a.tanh();
                }
            }
        }
        ch
    }

    fn chains(&self, params: &ParamStore) -> Vec<Chain> {
        (0..self.channels).map(|c| self.chain(params, c)).collect()
    }

    /// Logit of the channel CDF at `x`.
    pub fn logit(&self, params: &ParamStore, channel: usize, x: f64) -> f64 {
        self.chain(params, channel).logit(x)
    }

    pub fn cdf(&self, params: &ParamStore, channel: usize, x: f64) -> f64 {
        sigmoid(self.logit(params, channel, x))
    }

    /// `cdf(y + 1/2) - cdf(y - 1/2)` without the floor applied.
    pub fn bin_mass(&self, params: &ParamStore, channel: usize, y: f64) -> f64 {
        let ch = self.chain(params, channel);
        bin_probability(ch.logit(y - 0.5), ch.logit(y + 0.5)).0
    }

    fn check(&self, y: &ArrayView2<f64>) -> Result<()> {
        if y.ncols() != self.channels && y.nrows() > 0 {
            return Err(Error::Shape(format!(
                "prior has {} channels, features have {}",
                self.channels,
                y.ncols()
            )));
        }
        Ok(())
    }

    /// Per-element likelihoods, floored at [`LIKELIHOOD_FLOOR`].
    pub fn likelihood(&self, params: &ParamStore, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&y)?;
        let chains = self.chains(params);
        let mut out = Array2::zeros(y.dim());
        for ((r, c), v) in out.indexed_iter_mut() {
            let ch = &chains[c];
            let p = bin_probability(ch.logit(y[[r, c]] - 0.5), ch.logit(y[[r, c]] + 0.5)).0;
            *v = p.max(LIKELIHOOD_FLOOR);
        }
        Ok(out)
    }

    /// `sum -log2 p(y)` over all elements.
    pub fn bits(&self, params: &ParamStore, y: ArrayView2<f64>) -> Result<f64> {
        self.check(&y)?;
        let chains = self.chains(params);
        let rows: Vec<f64> = (0..y.nrows())
            .into_par_iter()
            .map(|r| {
                let mut acc = 0.0;
                for (c, ch) in chains.iter().enumerate() {
                    let p = bin_probability(ch.logit(y[[r, c]] - 0.5), ch.logit(y[[r, c]] + 0.5)).0;
                    acc -= p.max(LIKELIHOOD_FLOOR).log2();
                }
                acc
            })
            .collect();
        Ok(rows.iter().sum())
    }

    /// Backward of `scale * bits(y)`: accumulates parameter gradients into
    /// `params` and returns the gradient with respect to `y`.
    pub fn bits_backward(&self, params: &mut ParamStore, y: ArrayView2<f64>, scale: f64) -> Result<Array2<f64>> {
        self.check(&y)?;
        let chains = self.chains(params);
        let per_row: Vec<(Vec<f64>, Vec<ChainGrad>)> = (0..y.nrows())
            .into_par_iter()
            .map(|r| {
                let mut gy = vec![0.0; self.channels];
                let mut grads = vec![ChainGrad::default(); self.channels];
                for (c, ch) in chains.iter().enumerate() {
                    let (mut tl, mut tu) = (Trace::default(), Trace::default());
                    let lower = ch.logit_traced(y[[r, c]] - 0.5, Some(&mut tl));
                    let upper = ch.logit_traced(y[[r, c]] + 0.5, Some(&mut tu));
                    let (p, sign) = bin_probability(lower, upper);
                    if p < LIKELIHOOD_FLOOR {
                        continue;
                    }
                    // p = |sigmoid(s u) - sigmoid(s l)|, so dp/du = sign * sigmoid'(s u)
                    // where `sign` already folds in the reflection s.
                    let dp = -scale / (p * std::f64::consts::LN_2);
                    let s = if lower + upper > 0.0 { -1.0 } else { 1.0 };
                    let su = sigmoid(s * upper);
                    let sl = sigmoid(s * lower);
                    let du = dp * sign * su * (1.0 - su);
                    let dl = -dp * sign * sl * (1.0 - sl);
                    gy[c] = ch.backward(&tu, du, &mut grads[c]) + ch.backward(&tl, dl, &mut grads[c]);
                }
                (gy, grads)
            })
            .collect();

        let mut gy = Array2::zeros(y.dim());
        let mut total = vec![ChainGrad::default(); self.channels];
        for (r, (row, grads)) in per_row.into_iter().enumerate() {
            for c in 0..self.channels {
                gy[[r, c]] = row[c];
                total[c].add(&grads[c]);
            }
        }
        self.scatter_grads(params, &total);
        Ok(gy)
    }

    fn scatter_grads(&self, params: &mut ParamStore, grads: &[ChainGrad]) {
        for k in 0..STAGES {
            let (n_in, n_out) = (WIDTHS[k], WIDTHS[k + 1]);
            let mut gm = vec![0.0; self.channels * n_out * n_in];
            let mut gb = vec![0.0; self.channels * n_out];
            let mut ga = vec![0.0; self.channels * n_out];
            for (c, g) in grads.iter().enumerate() {
                for o in 0..n_out {
                    gb[c * n_out + o] = g.bias[k][o];
                    if k < STAGES - 1 {
                        ga[c * n_out + o] = g.gate[k][o];
                    }
                    for i in 0..n_in {
                        gm[(c * n_out + o) * n_in + i] = g.raw[k][o][i];
                    }
                }
            }
            params.accumulate_grad(self.matrices[k], &gm);
            params.accumulate_grad(self.biases[k], &gb);
            if k < STAGES - 1 {
                params.accumulate_grad(self.gates[k], &ga);
            }
        }
    }

    /// Ids of every parameter owned by the prior.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.matrices
            .iter()
            .chain(&self.biases)
            .chain(&self.gates)
            .copied()
            .collect()
    }
}
