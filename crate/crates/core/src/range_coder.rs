//! 32-bit range coder with byte-wise renormalisation and carry propagation.
//!
//! The encoder keeps a 33-bit `low` so a carry out of the top byte can be
//! pushed into bytes already queued (the pending `0xFF` run). All state is
//! integer; output depends only on the symbols and the frequency tables.
//! Totals are at most `2^16`.

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;

/// Cumulative frequency table: `cum[0] = 0`, `cum[n] = total`, strictly
/// increasing, so symbol `s` owns `[cum[s], cum[s+1])`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cdf {
    cum: Vec<u32>,
}

impl Cdf {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Usage("empty frequency table".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0u32);
        let mut total = 0u32;
        for &f in freqs {
            if f == 0 {
                return Err(Error::Usage("zero-frequency symbol".into()));
            }
            total = total
                .checked_add(f)
                .filter(|&t| t <= PROB_TOTAL)
                .ok_or_else(|| Error::Usage("frequency total exceeds 2^16".into()))?;
            cum.push(total);
        }
        Ok(Self { cum })
    }

    pub fn num_symbols(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().unwrap()
    }

    pub fn interval(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.cum[symbol + 1] - self.cum[symbol])
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    /// Symbol whose interval contains `target`.
    pub fn find(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        self.interval(symbol).1 as f64 / self.total() as f64
    }
}

#[derive(Clone, Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = ((self.low as u32) << 8) as u64;
    }

    /// Codes the interval `[start, start + size)` out of `total`.
    pub fn encode(&mut self, start: u32, size: u32, total: u32) {
        debug_assert!(size > 0 && start + size <= total && total <= PROB_TOTAL);
        let r = self.range / total;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_symbol(&mut self, cdf: &Cdf, symbol: usize) {
        let (start, size) = cdf.interval(symbol);
        self.encode(start, size, cdf.total());
    }

    /// `bits` raw bits (at most 16) under a uniform model.
    pub fn encode_uniform(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= PROB_BITS && value < (1 << bits));
        self.encode(value, 1, 1 << bits);
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Clone, Debug)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
    pending: Option<(u32, u32)>,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
            pending: None,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or_else(|| Error::Decode("range coder stream truncated".into()))?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Target frequency in `[0, total)`; must be followed by [`Self::consume`].
    pub fn decode_freq(&mut self, total: u32) -> Result<u32> {
        let r = self.range / total;
        let v = self.code / r;
        if v >= total {
            return Err(Error::Decode("range coder value out of bounds".into()));
        }
        self.pending = Some((r, total));
        Ok(v)
    }

    pub fn consume(&mut self, start: u32, size: u32) -> Result<()> {
        let (r, _) = self
            .pending
            .take()
            .ok_or_else(|| Error::Usage("consume without decode_freq".into()))?;
        self.code -= r * start;
        self.range = r * size;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_symbol(&mut self, cdf: &Cdf) -> Result<usize> {
        let target = self.decode_freq(cdf.total())?;
        let s = cdf.find(target);
        let (start, size) = cdf.interval(s);
        self.consume(start, size)?;
        Ok(s)
    }

    pub fn decode_uniform(&mut self, bits: u32) -> Result<u32> {
        let v = self.decode_freq(1 << bits)?;
        self.consume(v, 1)?;
        Ok(v)
    }
}

/// Codes `symbols[i]` under `cdfs[i]`.
pub fn encode_symbols(symbols: &[usize], cdfs: &[&Cdf]) -> Result<Vec<u8>> {
    if symbols.len() != cdfs.len() {
        return Err(Error::Shape(format!("{} symbols, {} tables", symbols.len(), cdfs.len())));
    }
    let mut enc = RangeEncoder::new();
    for (&s, cdf) in symbols.iter().zip(cdfs) {
        if s >= cdf.num_symbols() {
            return Err(Error::Usage(format!("symbol {s} outside table of {}", cdf.num_symbols())));
        }
        enc.encode_symbol(cdf, s);
    }
    Ok(enc.finish())
}

/// Inverse of [`encode_symbols`] for `cdfs.len()` symbols.
pub fn decode_symbols(bytes: &[u8], cdfs: &[&Cdf]) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    cdfs.iter().map(|cdf| dec.decode_symbol(cdf)).collect()
}

/// Order-0 adaptive frequency model: every coded symbol gains `INCREMENT`,
/// and all counts are halved once the total passes `LIMIT`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveModel {
    freqs: Vec<u32>,
    total: u32,
}

impl AdaptiveModel {
    pub const INCREMENT: u32 = 32;
    pub const LIMIT: u32 = 1 << 15;

    pub fn new(num_symbols: usize) -> Self {
        assert!(num_symbols > 0 && (num_symbols as u32) < Self::LIMIT);
        Self {
            freqs: vec![1; num_symbols],
            total: num_symbols as u32,
        }
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    fn interval(&self, symbol: usize) -> (u32, u32) {
        let start: u32 = self.freqs[..symbol].iter().sum();
        (start, self.freqs[symbol])
    }

    pub fn update(&mut self, symbol: usize) {
        self.freqs[symbol] += Self::INCREMENT;
        self.total += Self::INCREMENT;
        if self.total > Self::LIMIT {
            self.total = 0;
            for f in &mut self.freqs {
                *f = f.div_ceil(2);
                self.total += *f;
            }
        }
    }

    pub fn encode(&mut self, enc: &mut RangeEncoder, symbol: usize) {
        let (start, size) = self.interval(symbol);
        enc.encode(start, size, self.total);
        self.update(symbol);
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<usize> {
        let target = dec.decode_freq(self.total)?;
        let mut start = 0;
        let mut symbol = 0;
        while start + self.freqs[symbol] <= target {
            start += self.freqs[symbol];
            symbol += 1;
        }
        dec.consume(start, self.freqs[symbol])?;
        self.update(symbol);
        Ok(symbol)
    }
}
