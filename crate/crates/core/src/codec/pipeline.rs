use std::sync::Arc;

use ndarray::Array2;

use super::bitstream::{EntropyHeader, FrameBitstream, FrameType, PointCounts};
use super::model::{Model, MultiscaleFeatures};
use crate::entropy::{build_cdf_tables, build_tables, quantize, FactorizedPrior};
use crate::error::{Error, Result};
use crate::metrics::{apply_same_partition, kdtree_partition_aligned};
use crate::octree::{octree_decode, octree_encode};
use crate::sparse::Coords;

/// Block split planes sit on the bottleneck grid, so no scale-3 voxel
/// straddles two blocks.
pub const BLOCK_ALIGN: i32 = 1 << 3;

/// Splits a consecutive frame pair into co-located block pairs using planes
/// computed on `prev`. Pairs where either side is empty are dropped.
pub fn block_pairs(prev: &Coords, cur: &Coords, num_blocks: usize) -> Result<Vec<(Coords, Coords)>> {
    let (ref_blocks, splits) = kdtree_partition_aligned(prev, num_blocks, BLOCK_ALIGN)?;
    let blocks = apply_same_partition(cur, &splits);
    Ok(ref_blocks
        .into_iter()
        .zip(blocks)
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .collect())
}

/// A coded frame together with the reconstruction the decoder will produce.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedFrame {
    pub bitstream: FrameBitstream,
    pub reconstruction: Coords,
    /// Quantized symbols that went into the feature substream.
    pub symbols: Array2<i32>,
}

fn count(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Usage(format!("{n} points exceed the format limit")))
}

fn prior_of(model: &Model, t: FrameType) -> &FactorizedPrior {
    match t {
        FrameType::Intra => &model.intra_prior,
        FrameType::Inter => &model.inter_prior,
    }
}

fn prediction(model: &Model, prev_decoded: &Coords, target: &Arc<Coords>) -> Result<Array2<f64>> {
    let prev: MultiscaleFeatures = model.encode_multiscale(&Arc::new(prev_decoded.clone()))?;
    model.predict(&prev, target.clone())
}

fn encode_frame(model: &Model, frame: &Coords, prev_decoded: Option<&Coords>) -> Result<EncodedFrame> {
    let frame = Arc::new(frame.clone());
    let ms = model.encode_multiscale(&frame)?;
    let bottleneck = ms.bottleneck();
    let c3 = bottleneck.coords().clone();
    let (frame_type, base) = match prev_decoded {
        Some(prev) => (FrameType::Inter, Some(prediction(model, prev, &c3)?)),
        None => (FrameType::Intra, None),
    };
    let signal = match &base {
        Some(pred) => bottleneck.feats() - pred,
        None => bottleneck.feats().clone(),
    };
    let symbols = quantize(signal.view());
    let tables = build_cdf_tables(prior_of(model, frame_type), &model.params, model.config.tail_mass)?;
    let features = tables.encode(&symbols)?;

    let counts = PointCounts {
        n_full: count(frame.len())?,
        n_1ds: count(ms.scales[1].len())?,
        n_2ds: count(ms.scales[2].len())?,
        n_3ds: count(c3.len())?,
    };
    let reconstruction = reconstruct(model, c3.clone(), &symbols, base, counts)?;
    let bitstream = FrameBitstream {
        frame_type,
        depth: model.config.depth as u8,
        bottleneck_channels: model.config.bottleneck_channels as u8,
        checkpoint_hash: model.hash(),
        counts,
        coords: octree_encode(&c3, model.config.depth - 3)?,
        entropy: EntropyHeader {
            supports: tables.supports(),
            elements: count(symbols.len())?,
        },
        features,
    };
    Ok(EncodedFrame {
        bitstream,
        reconstruction,
        symbols,
    })
}

/// Shared by encoder and decoder, so both produce identical output.
fn reconstruct(
    model: &Model,
    c3: Arc<Coords>,
    symbols: &Array2<i32>,
    base: Option<Array2<f64>>,
    counts: PointCounts,
) -> Result<Coords> {
    let mut feats = symbols.mapv(f64::from);
    if let Some(pred) = base {
        feats += &pred;
    }
    let k = [counts.n_2ds, counts.n_1ds, counts.n_full].map(|n| n as usize);
    model.decode_bottleneck(c3, feats, k)
}

pub fn encode_intra(model: &Model, frame: &Coords) -> Result<EncodedFrame> {
    encode_frame(model, frame, None)
}

/// Codes `frame` against the previously decoded frame. The prediction is
/// computed from `prev_decoded`, exactly as the decoder will.
pub fn encode_inter(model: &Model, frame: &Coords, prev_decoded: &Coords) -> Result<EncodedFrame> {
    encode_frame(model, frame, Some(prev_decoded))
}

/// Decodes one frame. Inter frames need the previously decoded frame.
pub fn decode_frame(model: &Model, bits: &FrameBitstream, prev_decoded: Option<&Coords>) -> Result<Coords> {
    let hash = model.hash();
    if bits.checkpoint_hash != hash {
        return Err(Error::CheckpointMismatch {
            expected: bits.checkpoint_hash,
            actual: hash,
        });
    }
    if u32::from(bits.depth) != model.config.depth
        || usize::from(bits.bottleneck_channels) != model.config.bottleneck_channels
    {
        return Err(Error::Decode(format!(
            "stream is depth {} with {} channels; model is depth {} with {}",
            bits.depth, bits.bottleneck_channels, model.config.depth, model.config.bottleneck_channels
        )));
    }
    let (c3, depth) = octree_decode(&bits.coords)?;
    let n3 = bits.counts.n_3ds as usize;
    if depth != model.config.depth - 3 || c3.len() != n3 {
        return Err(Error::Decode(format!(
            "coordinate substream holds {} points at depth {depth}, header says {n3}",
            c3.len()
        )));
    }
    let channels = model.config.bottleneck_channels;
    if bits.entropy.supports.len() != channels || bits.entropy.elements as usize != n3 * channels {
        return Err(Error::Decode("entropy header does not match the bottleneck".into()));
    }
    let prior = prior_of(model, bits.frame_type);
    let tables = build_tables(prior, &model.params, &bits.entropy.supports)?;
    let symbols = tables.decode(&bits.features, n3)?;
    let c3 = Arc::new(c3);
    let base = match bits.frame_type {
        FrameType::Intra => None,
        FrameType::Inter => {
            let prev = prev_decoded.ok_or_else(|| Error::Usage("P-frame without a reference frame".into()))?;
            Some(prediction(model, prev, &c3)?)
        }
    };
    reconstruct(model, c3, &symbols, base, bits.counts)
}

/// Codes a sequence as GOPs of `I P P ...`; each P-frame references the
/// previous reconstruction.
pub fn encode_sequence(model: &Model, frames: &[Coords], gop: usize) -> Result<Vec<EncodedFrame>> {
    if gop == 0 {
        return Err(Error::Usage("gop must be at least 1".into()));
    }
    let mut out: Vec<EncodedFrame> = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let encoded = if i % gop == 0 {
            encode_intra(model, frame)?
        } else {
            encode_inter(model, frame, &out[i - 1].reconstruction)?
        };
        out.push(encoded);
    }
    Ok(out)
}

pub fn decode_sequence(model: &Model, frames: &[FrameBitstream]) -> Result<Vec<Coords>> {
    let mut out: Vec<Coords> = Vec::with_capacity(frames.len());
    for f in frames {
        let decoded = decode_frame(model, f, out.last())?;
        out.push(decoded);
    }
    Ok(out)
}

/// Codes `frame` as `num_blocks` kd-tree blocks. With a reference frame the
/// split planes are computed on the reference (available to both sides) and
/// block `i` is predicted from reference block `i`; blocks without a
/// reference fall back to intra coding. Empty blocks are skipped.
pub fn encode_blocks(
    model: &Model,
    frame: &Coords,
    prev_decoded: Option<&Coords>,
    num_blocks: usize,
) -> Result<(Vec<EncodedFrame>, Coords)> {
    let align = BLOCK_ALIGN;
    let (blocks, refs): (Vec<Coords>, Vec<Option<Coords>>) = match prev_decoded {
        Some(prev) => {
            let (ref_blocks, splits) = kdtree_partition_aligned(prev, num_blocks, align)?;
            let blocks = apply_same_partition(frame, &splits);
            (blocks, ref_blocks.into_iter().map(Some).collect())
        }
        None => (kdtree_partition_aligned(frame, num_blocks, align)?.0, vec![None; num_blocks]),
    };
    let mut coded = Vec::new();
    let mut merged = Vec::new();
    for (block, reference) in blocks.iter().zip(&refs) {
        if block.is_empty() {
            continue;
        }
        let e = match reference.as_ref().filter(|r| !r.is_empty()) {
            Some(r) => encode_inter(model, block, r)?,
            None => encode_intra(model, block)?,
        };
        merged.extend(e.reconstruction.iter().copied());
        coded.push(e);
    }
    Ok((coded, Coords::from_unsorted(merged)))
}
