//! Frame and sequence containers.
//!
//! Frame layout, little-endian:
//!
//! ```text
//! "DPCC" | version u8 | frame_type u8 (0 = I, 1 = P) | depth u8 | bottleneck_channels u8
//! checkpoint hash u64 | n_full u32 | n_1ds u32 | n_2ds u32 | n_3ds u32
//! coord substream: len u32 + bytes
//! entropy header:  len u16 + bytes (per channel v_min i16, v_max i16; then element count u32)
//! feature substream: len u32 + bytes
//! ```
//!
//! A sequence is a `u32` frame count followed by the frames back to back.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DPCC";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameType {
    Intra = 0,
    Inter = 1,
}

/// Ground-truth point counts at scales 0 to 3; the decoder prunes to them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PointCounts {
    pub n_full: u32,
    pub n_1ds: u32,
    pub n_2ds: u32,
    pub n_3ds: u32,
}

impl PointCounts {
    pub fn is_consistent(&self) -> bool {
        self.n_full >= self.n_1ds && self.n_1ds >= self.n_2ds && self.n_2ds >= self.n_3ds && self.n_3ds > 0
    }
}

/// Per-channel coded support plus the number of coded elements.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntropyHeader {
    pub supports: Vec<(i16, i16)>,
    pub elements: u32,
}

impl EntropyHeader {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.supports.len() + 4);
        for &(lo, hi) in &self.supports {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        out.extend_from_slice(&self.elements.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || !bytes.len().is_multiple_of(4) {
            return Err(Error::Decode(format!("entropy header of {} bytes", bytes.len())));
        }
        let (table, count) = bytes.split_at(bytes.len() - 4);
        let supports = table
            .chunks_exact(4)
            .map(|c| {
                let lo = i16::from_le_bytes([c[0], c[1]]);
                let hi = i16::from_le_bytes([c[2], c[3]]);
                if lo > hi {
                    Err(Error::Decode(format!("empty support [{lo}, {hi}]")))
                } else {
                    Ok((lo, hi))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            supports,
            elements: u32::from_le_bytes(count.try_into().unwrap()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameBitstream {
    pub frame_type: FrameType,
    pub depth: u8,
    pub bottleneck_channels: u8,
    pub checkpoint_hash: u64,
    pub counts: PointCounts,
    pub coords: Vec<u8>,
    pub entropy: EntropyHeader,
    pub features: Vec<u8>,
}

/// Bytes of the fixed-size part of a frame.
pub const FIXED_HEADER_BYTES: usize = 4 + 4 + 8 + 16;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Decode("frame truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl FrameBitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entropy = self.entropy.to_bytes();
        let too_long = |what: &str| Error::Usage(format!("{what} substream too long"));
        let coord_len = u32::try_from(self.coords.len()).map_err(|_| too_long("coordinate"))?;
        let entropy_len = u16::try_from(entropy.len()).map_err(|_| too_long("entropy header"))?;
        let feature_len = u32::try_from(self.features.len()).map_err(|_| too_long("feature"))?;

        let mut out = Vec::with_capacity(self.size_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[VERSION, self.frame_type as u8, self.depth, self.bottleneck_channels]);
        out.extend_from_slice(&self.checkpoint_hash.to_le_bytes());
        let c = self.counts;
        for n in [c.n_full, c.n_1ds, c.n_2ds, c.n_3ds] {
            out.extend_from_slice(&n.to_le_bytes());
        }
        out.extend_from_slice(&coord_len.to_le_bytes());
        out.extend_from_slice(&self.coords);
        out.extend_from_slice(&entropy_len.to_le_bytes());
        out.extend_from_slice(&entropy);
        out.extend_from_slice(&feature_len.to_le_bytes());
        out.extend_from_slice(&self.features);
        Ok(out)
    }

    /// Serialized size, without serializing.
    pub fn size_bytes(&self) -> usize {
        FIXED_HEADER_BYTES + 4 + self.coords.len() + 2 + 4 * self.entropy.supports.len() + 4 + 4 + self.features.len()
    }

    /// Parses one frame from the front of `bytes`; returns it with the number
    /// of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Decode("bad frame magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Decode(format!("unsupported version {version}")));
        }
        let frame_type = match r.u8()? {
            0 => FrameType::Intra,
            1 => FrameType::Inter,
            t => return Err(Error::Decode(format!("unknown frame type {t}"))),
        };
        let depth = r.u8()?;
        let bottleneck_channels = r.u8()?;
        let checkpoint_hash = r.u64()?;
        let counts = PointCounts {
            n_full: r.u32()?,
            n_1ds: r.u32()?,
            n_2ds: r.u32()?,
            n_3ds: r.u32()?,
        };
        if !counts.is_consistent() {
            return Err(Error::Decode(format!("inconsistent point counts {counts:?}")));
        }
        let n = r.u32()? as usize;
        let coords = r.take(n)?.to_vec();
        let n = r.u16()? as usize;
        let entropy = EntropyHeader::from_bytes(r.take(n)?)?;
        let n = r.u32()? as usize;
        let features = r.take(n)?.to_vec();
        let frame = Self {
            frame_type,
            depth,
            bottleneck_channels,
            checkpoint_hash,
            counts,
            coords,
            entropy,
            features,
        };
        Ok((frame, r.pos))
    }

    /// Bits per input point of the coordinate substream, the feature
    /// substream, and the whole frame.
    pub fn bpp(&self) -> (f64, f64, f64) {
        let n = f64::from(self.counts.n_full.max(1));
        (
            8.0 * self.coords.len() as f64 / n,
            8.0 * self.features.len() as f64 / n,
            8.0 * self.size_bytes() as f64 / n,
        )
    }
}

pub fn write_sequence(frames: &[FrameBitstream]) -> Result<Vec<u8>> {
    let count = u32::try_from(frames.len()).map_err(|_| Error::Usage("too many frames".into()))?;
    let mut out = count.to_le_bytes().to_vec();
    for f in frames {
        out.extend(f.to_bytes()?);
    }
    Ok(out)
}

pub fn read_sequence(bytes: &[u8]) -> Result<Vec<FrameBitstream>> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u32()? as usize;
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let (frame, used) = FrameBitstream::from_bytes(&bytes[r.pos..])?;
        r.pos += used;
        frames.push(frame);
    }
    if r.pos != bytes.len() {
        return Err(Error::Decode("trailing bytes after last frame".into()));
    }
    Ok(frames)
}
