use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{keep_rows, Model};
use super::pipeline::{block_pairs, encode_intra};
use crate::error::{Error, Result};
use crate::nn::{Adam, SparseVar, Tape};
use crate::sparse::{check_range, topk_indices, Coords};

/// Loss components of one training step. Rates are in bits per input point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub rate_bpp: f64,
    /// BCE at scales 2, 1 and 0.
    pub bce: [f64; 3],
    pub distortion: f64,
    pub lambda: f64,
    /// `rate_bpp + lambda * distortion`.
    pub j: f64,
    /// Rate of the bottleneck under the intra prior (trained alongside,
    /// without feeding gradients back into the encoder).
    pub intra_bpp: f64,
}

/// 1 where a candidate coordinate is occupied in the ground truth.
pub fn bce_target_occupancy(pred: &Coords, truth: &Coords) -> Vec<f64> {
    let truth: HashSet<_> = truth.iter().collect();
    pred.iter().map(|c| f64::from(u8::from(truth.contains(c)))).collect()
}

fn uniform_noise(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-0.5..0.5))
}

/// One optimizer step on the frame pair `(prev, cur)`.
///
/// The predictor sees the encoder features of the original previous frame
/// (open loop). The decoder receives `prediction + residual + noise` and is
/// scored against the true occupancy at every scale; candidate pruning keeps
/// the top-k voxels together with all true ones so each stage sees the full
/// ground truth.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    prev: &Coords,
    cur: &Coords,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossTerms> {
    if prev.is_empty() || cur.is_empty() {
        return Err(Error::Empty);
    }
    check_range(prev, model.config.depth, 0)?;
    check_range(cur, model.config.depth, 0)?;
    let params = &model.params;
    let n = cur.len() as f64;
    let mut tape = Tape::new();
    let input = |tape: &mut Tape, c: &Coords| SparseVar {
        node: tape.input(Array2::ones((c.len(), 1))),
        coords: Arc::new(c.clone()),
        scale: 0,
    };
    let x1 = input(&mut tape, prev);
    let x2 = input(&mut tape, cur);
    let ms1 = model.encoder.forward(&mut tape, params, &x1)?;
    let ms2 = model.encoder.forward(&mut tape, params, &x2)?;
    let bottleneck = &ms2[3];
    let pred = model
        .predictor
        .forward(&mut tape, params, &ms1, bottleneck.coords.clone())?;

    let shape = tape.value(bottleneck.node).dim();
    let residual = tape.sub(bottleneck.node, pred.node)?;
    let noise = tape.input(uniform_noise(rng, shape));
    let noisy = tape.add(residual, noise)?;
    let rate = tape.rate(params, noisy, &model.inter_prior)?;
    let recon = tape.add(pred.node, noisy)?;

    let detached = tape.value(bottleneck.node) + &uniform_noise(rng, shape);
    let detached = tape.input(detached);
    let intra = tape.rate(params, detached, &model.intra_prior)?;

    let truths = [cur.downsample(2), cur.downsample(1), cur.clone()];
    let mut x = SparseVar {
        node: recon,
        coords: bottleneck.coords.clone(),
        scale: 3,
    };
    let mut bce_nodes = Vec::with_capacity(3);
    for (i, truth) in truths.iter().enumerate() {
        let out = model.decoder.stage(i, &mut tape, params, &x)?;
        let labels = bce_target_occupancy(&out.features.coords, truth);
        let logits = tape.value(out.logits).column(0).to_vec();
        bce_nodes.push(tape.bce(out.logits, Arc::new(labels.clone()))?);
        if i < 2 {
            let mut keep: BTreeSet<usize> = topk_indices(&logits, truth.len()).into_iter().collect();
            keep.extend(labels.iter().enumerate().filter(|(_, &l)| l == 1.0).map(|(r, _)| r));
            x = keep_rows(&mut tape, &out.features, keep.into_iter().collect());
        }
    }

    let mut terms = vec![(rate, 1.0 / n)];
    terms.extend(bce_nodes.iter().map(|&b| (b, lambda)));
    let j = tape.weighted_sum(terms)?;
    let total = tape.weighted_sum(vec![(j, 1.0), (intra, 1.0 / n)])?;

    let bce = [0, 1, 2].map(|i| tape.scalar(bce_nodes[i]));
    let terms = LossTerms {
        rate_bpp: tape.scalar(rate) / n,
        bce,
        distortion: bce.iter().sum(),
        lambda,
        j: tape.scalar(j),
        intra_bpp: tape.scalar(intra) / n,
    };
    tape.backward(&mut model.params, total, Array2::ones((1, 1)))?;
    adam.step(&mut model.params);
    Ok(terms)
}

/// Owns the optimizer state and noise stream for a training run.
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let adam = Adam::new(model.config.adam);
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x7261_6e64);
        Self { model, adam, rng }
    }

    /// Trains on `(prev, cur)`. With probability `decoded_reference_prob`
    /// the predictor sees the current model's intra reconstruction of
    /// `prev`, which is what it receives when coding.
    pub fn step(&mut self, prev: &Coords, cur: &Coords) -> Result<LossTerms> {
        let lambda = self.model.config.lambda;
        let decoded;
        let reference = if !prev.is_empty() && self.rng.random_bool(self.model.config.decoded_reference_prob) {
            decoded = encode_intra(&self.model, prev)?.reconstruction;
            &decoded
        } else {
            prev
        };
        train_step(&mut self.model, &mut self.adam, reference, cur, lambda, &mut self.rng)
    }

    /// Picks a random pair from `pairs` and trains on it.
    pub fn step_random(&mut self, pairs: &[(Coords, Coords)]) -> Result<LossTerms> {
        if pairs.is_empty() {
            return Err(Error::Empty);
        }
        let i = self.rng.random_range(0..pairs.len());
        self.step(&pairs[i].0, &pairs[i].1)
    }

    /// Picks a group uniformly, then a pair within it. Lets whole frames and
    /// their many small blocks carry equal weight.
    pub fn step_grouped(&mut self, groups: &[Vec<(Coords, Coords)>]) -> Result<LossTerms> {
        let groups: Vec<&Vec<_>> = groups.iter().filter(|g| !g.is_empty()).collect();
        if groups.is_empty() {
            return Err(Error::Empty);
        }
        let g = self.rng.random_range(0..groups.len());
        let i = self.rng.random_range(0..groups[g].len());
        self.step(&groups[g][i].0, &groups[g][i].1)
    }

    /// Finishes training; weights are rounded to checkpoint precision.
    pub fn into_model(mut self) -> Model {
        self.model.freeze();
        self.model
    }
}

/// Consecutive frame pairs of every sequence, split into `num_blocks`
/// co-located blocks with planes taken from the earlier frame.
pub fn training_pairs(sequences: &[Vec<Coords>], num_blocks: usize) -> Result<Vec<(Coords, Coords)>> {
    let mut out = Vec::new();
    for seq in sequences {
        for w in seq.windows(2) {
            if num_blocks == 1 {
                out.push((w[0].clone(), w[1].clone()));
            } else {
                out.extend(block_pairs(&w[0], &w[1], num_blocks)?);
            }
        }
    }
    Ok(out)
}

/// Trailing moving average with the given window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
