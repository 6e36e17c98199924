//! Integer CDF tables derived from a trained prior, and the feature
//! substream coded with them.

use ndarray::{Array2, ArrayView2};

use super::prior::FactorizedPrior;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, ParamStore};
use crate::range_coder::{Cdf, RangeDecoder, RangeEncoder, PROB_TOTAL};

/// Default tail mass left outside the coded support (split over both tails).
pub const DEFAULT_TAIL_MASS: f64 = 1e-6;
/// Largest support (in symbols) a single channel may use.
pub const MAX_SUPPORT: i32 = 4096;
const SEARCH_LIMIT: i32 = i16::MAX as i32;

/// Round half away from zero.
pub fn quantize(y: ArrayView2<f64>) -> Array2<i32> {
    y.mapv(|v| v.round() as i32)
}

/// One channel's table over `[v_min, v_max]` plus a trailing escape symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelTable {
    pub v_min: i32,
    pub v_max: i32,
    pub cdf: Cdf,
}

impl ChannelTable {
    pub fn escape_symbol(&self) -> usize {
        (self.v_max - self.v_min + 1) as usize
    }

    /// Code length of `v` in bits, escapes included.
    pub fn cost_bits(&self, v: i32) -> f64 {
        if (self.v_min..=self.v_max).contains(&v) {
            -self.cdf.probability((v - self.v_min) as usize).log2()
        } else {
            -self.cdf.probability(self.escape_symbol()).log2() + 32.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    pub channels: Vec<ChannelTable>,
}

/// Support bounds covering all but `tail_mass` of each channel's prior.
pub fn support_bounds(prior: &FactorizedPrior, params: &ParamStore, tail_mass: f64) -> Vec<(i16, i16)> {
    let half = tail_mass / 2.0;
    (0..prior.channels)
        .map(|c| {
            let lower_tail = |v: i32| sigmoid(prior.logit(params, c, v as f64 - 0.5));
            let upper_tail = |v: i32| sigmoid(-prior.logit(params, c, v as f64 + 0.5));
            // Largest v whose lower tail is still below `half`.
            let v_min = last_true(-SEARCH_LIMIT, SEARCH_LIMIT, |v| lower_tail(v) <= half);
            // Smallest v whose upper tail is below `half`.
            let v_max = first_true(-SEARCH_LIMIT, SEARCH_LIMIT, |v| upper_tail(v) <= half);
            let (mut lo, mut hi) = (v_min.min(v_max), v_max.max(v_min));
            if lo == hi {
                // Near-deterministic channel: widen rather than starve neighbours.
                lo -= 1;
                hi += 1;
            }
            if hi - lo + 1 > MAX_SUPPORT {
                let mid = lo + (hi - lo) / 2;
                lo = mid - MAX_SUPPORT / 2;
                hi = lo + MAX_SUPPORT - 1;
            }
            (lo.max(-SEARCH_LIMIT) as i16, hi.min(SEARCH_LIMIT) as i16)
        })
        .collect()
}

fn first_true(mut lo: i32, mut hi: i32, pred: impl Fn(i32) -> bool) -> i32 {
    if !pred(hi) {
        return hi;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

fn last_true(mut lo: i32, mut hi: i32, pred: impl Fn(i32) -> bool) -> i32 {
    if !pred(lo) {
        return lo;
    }
    while lo < hi {
        let mid = lo + (hi - lo + 1) / 2;
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Quantizes a probability vector to integer frequencies summing to `2^16`,
/// each at least 1. Deterministic for identical inputs.
pub fn quantize_pmf(pmf: &[f64]) -> Vec<u32> {
    let n = pmf.len();
    assert!(n > 0 && n < PROB_TOTAL as usize);
    let sum: f64 = pmf.iter().sum();
    let budget = (PROB_TOTAL as usize - n) as f64;
    let mut freqs: Vec<u32> = pmf
        .iter()
        .map(|&p| 1 + (p / sum * budget).floor() as u32)
        .collect();
    let mut total: i64 = freqs.iter().map(|&f| f as i64).sum();
    // Hand the rounding remainder to the largest bins, in index order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pmf[b].total_cmp(&pmf[a]).then(a.cmp(&b)));
    let mut i = 0;
    while total < PROB_TOTAL as i64 {
        freqs[order[i % n]] += 1;
        total += 1;
        i += 1;
    }
    debug_assert_eq!(total, PROB_TOTAL as i64);
    freqs
}

/// Builds a channel table over a fixed support.
pub fn channel_table(prior: &FactorizedPrior, params: &ParamStore, channel: usize, v_min: i32, v_max: i32) -> Result<ChannelTable> {
    if v_max < v_min || v_max - v_min + 1 > MAX_SUPPORT {
        return Err(Error::Decode(format!("invalid support [{v_min}, {v_max}]")));
    }
    let mut pmf: Vec<f64> = (v_min..=v_max)
        .map(|v| prior.bin_mass(params, channel, v as f64))
        .collect();
    let inside: f64 = pmf.iter().sum();
    let escape = (1.0 - inside).max(0.0);
    pmf.push(escape);
    let cdf = Cdf::from_frequencies(&quantize_pmf(&pmf))?;
    Ok(ChannelTable { v_min, v_max, cdf })
}

/// Tables for every channel over the given supports.
pub fn build_tables(prior: &FactorizedPrior, params: &ParamStore, supports: &[(i16, i16)]) -> Result<CdfTable> {
    if supports.len() != prior.channels {
        return Err(Error::Decode(format!(
            "{} support bounds for {} channels",
            supports.len(),
            prior.channels
        )));
    }
    let channels = supports
        .iter()
        .enumerate()
        .map(|(c, &(lo, hi))| channel_table(prior, params, c, lo as i32, hi as i32))
        .collect::<Result<_>>()?;
    Ok(CdfTable { channels })
}

/// Tables whose support covers at least `1 - tail_mass` of each channel.
pub fn build_cdf_tables(prior: &FactorizedPrior, params: &ParamStore, tail_mass: f64) -> Result<CdfTable> {
    build_tables(prior, params, &support_bounds(prior, params, tail_mass))
}

impl CdfTable {
    pub fn supports(&self) -> Vec<(i16, i16)> {
        self.channels
            .iter()
            .map(|t| (t.v_min as i16, t.v_max as i16))
            .collect()
    }

    /// Exact code length of `q` in bits (before range coder flush).
    pub fn cost_bits(&self, q: &Array2<i32>) -> f64 {
        q.indexed_iter()
            .map(|((_, c), &v)| self.channels[c].cost_bits(v))
            .sum()
    }

    /// Range-codes `q` row by row. Values outside a channel's support are
    /// sent as the escape symbol followed by the raw 32-bit value.
    pub fn encode(&self, q: &Array2<i32>) -> Result<Vec<u8>> {
        if q.nrows() > 0 && q.ncols() != self.channels.len() {
            return Err(Error::Shape(format!(
                "{} channels to code with {} tables",
                q.ncols(),
                self.channels.len()
            )));
        }
        let mut enc = RangeEncoder::new();
        for row in q.outer_iter() {
            for (t, &v) in self.channels.iter().zip(row.iter()) {
                if (t.v_min..=t.v_max).contains(&v) {
                    enc.encode_symbol(&t.cdf, (v - t.v_min) as usize);
                } else {
                    enc.encode_symbol(&t.cdf, t.escape_symbol());
                    let raw = v as u32;
                    enc.encode_uniform(raw >> 16, 16);
                    enc.encode_uniform(raw & 0xFFFF, 16);
                }
            }
        }
        Ok(enc.finish())
    }

    pub fn decode(&self, bytes: &[u8], rows: usize) -> Result<Array2<i32>> {
        let mut dec = RangeDecoder::new(bytes)?;
        let mut out = Array2::zeros((rows, self.channels.len()));
        for mut row in out.outer_iter_mut() {
            for (t, v) in self.channels.iter().zip(row.iter_mut()) {
                let s = dec.decode_symbol(&t.cdf)?;
                *v = if s == t.escape_symbol() {
                    let hi = dec.decode_uniform(16)?;
                    let lo = dec.decode_uniform(16)?;
                    ((hi << 16) | lo) as i32
                } else {
                    t.v_min + s as i32
                };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prior(channels: usize, seed: u64, jitter: f64) -> (ParamStore, FactorizedPrior) {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = FactorizedPrior::new(&mut params, "p", channels, 2.0, &mut rng).unwrap();
        if jitter > 0.0 {
            for p in params.iter_mut() {
                p.value.iter_mut().for_each(|v| *v += rng.random_range(-jitter..jitter));
            }
        }
        (params, prior)
    }

    #[test]
    fn rounding_rule() {
        let q = quantize(ndarray::array![[0.4, 0.5, -0.5, -1.49, 2.5]].view());
        assert_eq!(q, ndarray::array![[0, 1, -1, -1, 3]]);
        let y = Array2::from_shape_fn((50, 3), |(r, c)| (r as f64 - 25.0) * 0.37 + c as f64 * 0.11);
        let q = quantize(y.view());
        assert_eq!(quantize(q.mapv(|v| v as f64).view()), q);
        assert!(y.iter().zip(q.iter()).all(|(&a, &b)| (a - b as f64).abs() <= 0.5));
    }

    #[test]
    fn symmetric_prior_gives_symmetric_support() {
        let (mut params, prior) = prior(2, 1, 0.0);
        // Zero biases make every stage odd, hence the density symmetric.
        for p in params.iter_mut().filter(|p| p.name.contains("bias")) {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        for (lo, hi) in support_bounds(&prior, &params, DEFAULT_TAIL_MASS) {
            assert_eq!(lo, -hi);
            assert!(hi > 0);
        }
    }

    #[test]
    fn tables_are_valid_and_cover_mass() {
        let (params, prior) = prior(4, 2, 0.3);
        let table = build_cdf_tables(&prior, &params, DEFAULT_TAIL_MASS).unwrap();
        for (c, t) in table.channels.iter().enumerate() {
            assert_eq!(t.cdf.total(), PROB_TOTAL);
            assert!(t.cdf.cumulative().windows(2).all(|w| w[1] > w[0]));
            let covered: f64 = (t.v_min..=t.v_max).map(|v| prior.bin_mass(&params, c, v as f64)).sum();
            assert!(covered >= 1.0 - DEFAULT_TAIL_MASS, "channel {c}: {covered}");
        }
        // Rebuilding from the same parameters is bit-identical.
        assert_eq!(table, build_tables(&prior, &params, &table.supports()).unwrap());
    }

    #[test]
    fn near_deterministic_channel_keeps_nonzero_frequencies() {
        let (mut params, prior) = prior(1, 3, 0.0);
        // Very steep CDF: almost all mass in one bin.
        let id = params.id("p.matrix0").unwrap();
        params.get_mut(id).value.iter_mut().for_each(|v| *v = 8.0);
        let table = build_cdf_tables(&prior, &params, DEFAULT_TAIL_MASS).unwrap();
        let t = &table.channels[0];
        assert!(t.v_max > t.v_min);
        assert!((0..t.cdf.num_symbols()).all(|s| t.cdf.interval(s).1 >= 1));
    }

    #[test]
    fn coded_size_tracks_table_entropy() {
        let (params, prior) = prior(1, 4, 0.3);
        let table = build_cdf_tables(&prior, &params, DEFAULT_TAIL_MASS).unwrap();
        let t = &table.channels[0];
        let n_sym = t.escape_symbol();
        let probs: Vec<f64> = (0..n_sym).map(|s| t.cdf.probability(s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let q = Array2::from_shape_fn((n, 1), |_| {
            let target = rng.random_range(0..PROB_TOTAL - t.cdf.interval(n_sym).1);
            t.v_min + t.cdf.find(target) as i32
        });
        let entropy_bytes = n as f64 * probs.iter().map(|&p| -p * p.log2()).sum::<f64>() / 8.0;
        let bytes = table.encode(&q).unwrap();
        assert!(
            (bytes.len() as f64 - entropy_bytes).abs() <= 0.01 * entropy_bytes + 32.0,
            "{} vs {entropy_bytes}",
            bytes.len()
        );
        assert_eq!(table.decode(&bytes, n).unwrap(), q);
    }

    #[test]
    fn escapes_round_trip() {
        let (params, prior) = prior(3, 6, 0.2);
        let table = build_cdf_tables(&prior, &params, DEFAULT_TAIL_MASS).unwrap();
        let q = ndarray::array![[0, 1, -1], [70_000, -2_000_000_000, i32::MAX], [i32::MIN, 5, -9]];
        let bytes = table.encode(&q).unwrap();
        assert_eq!(table.decode(&bytes, 3).unwrap(), q);
        assert!(table.decode(&bytes[..bytes.len() - 3], 3).is_err());
    }

    #[test]
    fn estimate_agrees_with_coded_size() {
        let (params, prior) = prior(8, 7, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = Array2::from_shape_fn((2_000, 8), |_| rng.random_range(-3.0f64..3.0) * rng.random::<f64>());
        let q = quantize(y.view());
        let estimate = prior.bits(&params, q.mapv(|v| v as f64).view()).unwrap() / 8.0;
        let table = build_cdf_tables(&prior, &params, DEFAULT_TAIL_MASS).unwrap();
        let actual = table.encode(&q).unwrap().len() as f64;
        assert!((actual - estimate).abs() <= 0.02 * estimate + 64.0, "{actual} vs {estimate}");
    }
}
