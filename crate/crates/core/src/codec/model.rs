use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::CodecConfig;
use crate::entropy::FactorizedPrior;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_into, read_archive, write_archive};
use crate::nn::{conv_relu, Conv, IrbStack, NodeId, ParamStore, SparseVar, Tape};
use crate::sparse::{topk_indices, ConvSpec, Coords, SparseTensor};

/// Encoder outputs at scales 0 through 3.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiscaleFeatures {
    pub scales: [SparseTensor; 4],
}

impl MultiscaleFeatures {
    pub fn bottleneck(&self) -> &SparseTensor {
        &self.scales[3]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    stem: Conv,
    stem_blocks: IrbStack,
    downs: [Conv; 3],
    blocks: [IrbStack; 3],
    head: Conv,
}

impl Encoder {
    fn new(params: &mut ParamStore, c: &CodecConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let [w0, w1, w2] = c.encoder_widths;
        let n = c.irb_blocks;
        Ok(Self {
            stem: Conv::new(params, "enc.stem", ConvSpec::same(1, w0, 3), rng)?,
            stem_blocks: IrbStack::new(params, "enc.stem_irb", w0, n, rng)?,
            downs: [
                Conv::new(params, "enc.down1", ConvSpec::down(w0, w1), rng)?,
                Conv::new(params, "enc.down2", ConvSpec::down(w1, w2), rng)?,
                Conv::new(params, "enc.down3", ConvSpec::down(w2, w2), rng)?,
            ],
            blocks: [
                IrbStack::new(params, "enc.irb1", w1, n, rng)?,
                IrbStack::new(params, "enc.irb2", w2, n, rng)?,
                IrbStack::new(params, "enc.irb3", w2, n, rng)?,
            ],
            head: Conv::new(params, "enc.head", ConvSpec::same(w2, c.bottleneck_channels, 3), rng)?,
        })
    }

    /// `x` is a one-channel occupancy tensor at scale 0.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: &SparseVar) -> Result<[SparseVar; 4]> {
        let p0 = conv_relu(&self.stem, tape, params, x)?;
        let p0 = self.stem_blocks.forward(tape, params, &p0)?;
        let p1 = conv_relu(&self.downs[0], tape, params, &p0)?;
        let p1 = self.blocks[0].forward(tape, params, &p1)?;
        let p2 = conv_relu(&self.downs[1], tape, params, &p1)?;
        let p2 = self.blocks[1].forward(tape, params, &p2)?;
        let p3 = conv_relu(&self.downs[2], tape, params, &p2)?;
        let p3 = self.blocks[2].forward(tape, params, &p3)?;
        let p3 = self.head.forward(tape, params, &p3, None)?;
        Ok([p0, p1, p2, p3])
    }
}

/// Maps the previous frame's multiscale features onto the current frame's
/// bottleneck coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    downs: [Conv; 3],
    blocks: [IrbStack; 3],
    pub target: Conv,
}

impl Predictor {
    fn new(params: &mut ParamStore, c: &CodecConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let [w0, w1, w2] = c.encoder_widths;
        let (h, b, n) = (c.predictor_hidden, c.bottleneck_channels, c.irb_blocks);
        Ok(Self {
            downs: [
                Conv::new(params, "pred.down1", ConvSpec::down(w0, h), rng)?,
                Conv::new(params, "pred.down2", ConvSpec::down(h + w1, h), rng)?,
                Conv::new(params, "pred.down3", ConvSpec::down(h + w2, h), rng)?,
            ],
            blocks: [
                IrbStack::new(params, "pred.irb1", h + w1, n, rng)?,
                IrbStack::new(params, "pred.irb2", h + w2, n, rng)?,
                IrbStack::new(params, "pred.irb3", h + b, n, rng)?,
            ],
            target: Self::target_conv(params, h, b, rng)?,
        })
    }

    /// The centre tap starts as a pass-through of the previous bottleneck
    /// channels, so an untrained predictor already copies co-located
    /// features.
    fn target_conv(params: &mut ParamStore, h: usize, b: usize, rng: &mut ChaCha8Rng) -> Result<Conv> {
        let conv = Conv::new(params, "pred.target", ConvSpec::same(h + b, b, 3), rng)?;
        let centre = conv.spec.kernel_volume() / 2;
        let w = &mut params.get_mut(conv.weight).value;
        for j in 0..b {
            w[(centre * (h + b) + h + j) * b + j] += 1.0;
        }
        Ok(conv)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        prev: &[SparseVar; 4],
        target: Arc<Coords>,
    ) -> Result<SparseVar> {
        if prev[3].scale != 3 {
            return Err(Error::Shape("predictor expects scale-3 previous features".into()));
        }
        let mut h = prev[0].clone();
        for i in 0..3 {
            let d = conv_relu(&self.downs[i], tape, params, &h)?;
            debug_assert_eq!(d.coords, prev[i + 1].coords);
            let node = tape.concat(d.node, prev[i + 1].node)?;
            h = self.blocks[i].forward(tape, params, &SparseVar { node, ..d })?;
        }
        self.target.forward(tape, params, &h, Some(target))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderStage {
    up: Conv,
    conv: Conv,
    blocks: IrbStack,
    head: Conv,
}

/// One upsampling stage's output before pruning.
pub struct StageOutput {
    pub features: SparseVar,
    pub logits: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    stages: [DecoderStage; 3],
}

impl Decoder {
    fn new(params: &mut ParamStore, c: &CodecConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let widths = c.decoder_widths;
        let inputs = [c.bottleneck_channels, widths[0], widths[1]];
        let mut stages = Vec::with_capacity(3);
        for (i, (&cin, &w)) in inputs.iter().zip(&widths).enumerate() {
            stages.push(DecoderStage {
                up: Conv::new(params, &format!("dec{i}.up"), ConvSpec::up(cin, w), rng)?,
                conv: Conv::new(params, &format!("dec{i}.conv"), ConvSpec::same(w, w, 3), rng)?,
                blocks: IrbStack::new(params, &format!("dec{i}.irb"), w, c.irb_blocks, rng)?,
                head: Conv::new(params, &format!("dec{i}.head"), ConvSpec::same(w, 1, 3), rng)?,
            });
        }
        Ok(Self {
            stages: stages.try_into().expect("three stages"),
        })
    }

    /// Upsamples `x` one scale and scores every candidate child.
    pub fn stage(&self, i: usize, tape: &mut Tape, params: &ParamStore, x: &SparseVar) -> Result<StageOutput> {
        let s = &self.stages[i];
        let h = conv_relu(&s.up, tape, params, x)?;
        let h = conv_relu(&s.conv, tape, params, &h)?;
        let h = s.blocks.forward(tape, params, &h)?;
        let logits = s.head.forward(tape, params, &h, None)?.node;
        Ok(StageOutput { features: h, logits })
    }
}

/// Keeps the given candidate rows (ascending) of a stage output.
pub fn keep_rows(tape: &mut Tape, x: &SparseVar, rows: Vec<usize>) -> SparseVar {
    debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
    let coords = Coords::from_canonical(rows.iter().map(|&r| x.coords[r]).collect());
    let node = tape.gather(x.node, Arc::new(rows));
    SparseVar {
        node,
        coords: Arc::new(coords),
        scale: x.scale,
    }
}

/// The complete learned codec: shared encoder, predictor, decoder, and the
/// priors for residual (inter) and direct (intra) bottleneck features.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: CodecConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub predictor: Predictor,
    pub decoder: Decoder,
    pub inter_prior: FactorizedPrior,
    pub intra_prior: FactorizedPrior,
}

impl Model {
    /// Freshly initialized network; identical configs give identical weights.
    pub fn new(config: CodecConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &config, &mut rng)?;
        let predictor = Predictor::new(&mut params, &config, &mut rng)?;
        let decoder = Decoder::new(&mut params, &config, &mut rng)?;
        let b = config.bottleneck_channels;
        let inter_prior = FactorizedPrior::new(&mut params, "prior.inter", b, config.prior_init_scale, &mut rng)?;
        let intra_prior = FactorizedPrior::new(&mut params, "prior.intra", b, config.prior_init_scale, &mut rng)?;
        Ok(Self {
            config,
            params,
            encoder,
            predictor,
            decoder,
            inter_prior,
            intra_prior,
        })
    }

    /// SHA-256 over the config and the f32 weights, truncated to 64 bits.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.config.to_toml().as_bytes());
        for p in self.params.iter() {
            h.update(p.name.as_bytes());
            for &d in &p.shape {
                h.update((d as u32).to_le_bytes());
            }
            for &v in &p.value {
                h.update((v as f32).to_le_bytes());
            }
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    /// Rounds weights to their stored precision so a model in memory codes
    /// exactly like one reloaded from its checkpoint.
    pub fn freeze(&mut self) {
        self.params.round_to_f32();
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_archive(&mut w, &self.config.to_toml(), &self.params)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, archived) = read_archive(BufReader::new(File::open(path)?))?;
        let mut model = Self::new(CodecConfig::from_toml(&manifest)?)?;
        load_into(&mut model.params, &archived)?;
        Ok(model)
    }

    fn occupancy_input(tape: &mut Tape, coords: Arc<Coords>) -> SparseVar {
        let node = tape.input(Array2::ones((coords.len(), 1)));
        SparseVar { node, coords, scale: 0 }
    }

    fn check_frame(&self, coords: &Coords) -> Result<()> {
        if coords.is_empty() {
            return Err(Error::Empty);
        }
        crate::sparse::check_range(coords, self.config.depth, 0)
    }

    pub fn encode_multiscale(&self, coords: &Arc<Coords>) -> Result<MultiscaleFeatures> {
        self.check_frame(coords)?;
        let mut tape = Tape::new();
        let x = Self::occupancy_input(&mut tape, coords.clone());
        let vars = self.encoder.forward(&mut tape, &self.params, &x)?;
        self.materialize(&tape, &vars)
    }

    fn materialize(&self, tape: &Tape, vars: &[SparseVar; 4]) -> Result<MultiscaleFeatures> {
        let depth = self.config.depth;
        let t = |v: &SparseVar| SparseTensor::new(v.coords.clone(), tape.value(v.node).clone(), depth, v.scale);
        Ok(MultiscaleFeatures {
            scales: [t(&vars[0])?, t(&vars[1])?, t(&vars[2])?, t(&vars[3])?],
        })
    }

    /// Predicted bottleneck features on `target` (scale 3).
    pub fn predict(&self, prev: &MultiscaleFeatures, target: Arc<Coords>) -> Result<Array2<f64>> {
        if prev.scales.iter().enumerate().any(|(i, t)| t.scale() != i as u32) {
            return Err(Error::Shape("previous features are not at scales 0..3".into()));
        }
        let mut tape = Tape::new();
        let vars: Vec<SparseVar> = prev
            .scales
            .iter()
            .map(|t| SparseVar {
                node: tape.input(t.feats().clone()),
                coords: t.coords().clone(),
                scale: t.scale(),
            })
            .collect();
        let vars: [SparseVar; 4] = vars.try_into().expect("four scales");
        let out = self.predictor.forward(&mut tape, &self.params, &vars, target)?;
        Ok(tape.value(out.node).clone())
    }

    /// Reconstructs the scale-0 coordinates from bottleneck features, pruning
    /// each stage to the transmitted count (`[n_2ds, n_1ds, n_full]`).
    pub fn decode_bottleneck(&self, coords: Arc<Coords>, feats: Array2<f64>, counts: [usize; 3]) -> Result<Coords> {
        if feats.nrows() != coords.len() || feats.ncols() != self.config.bottleneck_channels {
            return Err(Error::Shape(format!(
                "bottleneck {:?} for {} coordinates",
                feats.dim(),
                coords.len()
            )));
        }
        let mut tape = Tape::new();
        let mut x = SparseVar {
            node: tape.input(feats),
            coords,
            scale: 3,
        };
        for (i, &k) in counts.iter().enumerate() {
            let out = self.decoder.stage(i, &mut tape, &self.params, &x)?;
            let candidates = out.features.coords.len();
            if k == 0 || k > candidates {
                return Err(Error::Decode(format!(
                    "point count {k} impossible with {candidates} candidates"
                )));
            }
            let logits = tape.value(out.logits).column(0).to_vec();
            x = keep_rows(&mut tape, &out.features, topk_indices(&logits, k));
        }
        Ok(Arc::unwrap_or_clone(x.coords))
    }
}
