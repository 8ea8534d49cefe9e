//! Carry-less 32-bit range coder plus the CDF models that drive it.
//!
//! The coder keeps a `[low, low + range)` interval in 32-bit wrapping
//! arithmetic. Whenever the top byte of the interval is settled it is
//! emitted; when the interval shrinks below 2^16 without settling, the
//! range is clipped to the next 2^16 boundary so a byte can be emitted
//! anyway (this sidesteps carry propagation at a cost of a fraction of a
//! bit per forced renormalization). Model totals are capped at 2^16 so the
//! `range / total` quotient never reaches zero.

use super::EntropyError;

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;

/// Fixed-point precision used for probability-derived tables. Totals of
/// frequency-derived tables may be anything up to `1 << PRECISION_BITS`.
pub const PRECISION_BITS: u8 = 16;

/// Cumulative frequency table for one symbol distribution.
///
/// `cdf` has one more entry than the alphabet: `cdf[0] == 0`,
/// `cdf[s+1] - cdf[s]` is symbol `s`'s frequency (always nonzero), and the
/// final entry is the total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cdf: Vec<u32>,
    precision_bits: u8,
}

impl CdfTable {
    /// Builds a table from raw integer frequencies. Every frequency must be
    /// nonzero and the total must fit in 16 bits.
    pub fn from_freqs(freqs: &[u32]) -> Result<Self, EntropyError> {
        if freqs.is_empty() {
            return Err(EntropyError::InvalidTable("empty alphabet".into()));
        }
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        let mut acc: u32 = 0;
        cdf.push(0);
        for (i, &f) in freqs.iter().enumerate() {
            if f == 0 {
                return Err(EntropyError::InvalidTable(format!(
                    "symbol {i} has zero frequency"
                )));
            }
            acc = acc.checked_add(f).ok_or_else(|| {
                EntropyError::InvalidTable("frequency total overflows u32".into())
            })?;
            cdf.push(acc);
        }
        if acc > 1 << PRECISION_BITS {
            return Err(EntropyError::InvalidTable(format!(
                "total {acc} exceeds 2^{PRECISION_BITS}"
            )));
        }
        let precision_bits = (32 - acc.leading_zeros()).max(1) as u8;
        Ok(CdfTable { cdf, precision_bits })
    }

    /// Quantizes a probability vector to fixed point at `precision_bits`,
    /// guaranteeing every symbol at least one count. The rounding surplus or
    /// deficit is absorbed by the heaviest bins so the total is exactly
    /// `1 << precision_bits`.
    pub fn from_probabilities(probs: &[f64], precision_bits: u8) -> Result<Self, EntropyError> {
        if precision_bits == 0 || precision_bits > PRECISION_BITS {
            return Err(EntropyError::InvalidTable(format!(
                "precision {precision_bits} outside 1..={PRECISION_BITS}"
            )));
        }
        let target: u64 = 1 << precision_bits;
        if probs.len() as u64 > target {
            return Err(EntropyError::AlphabetTooLarge {
                n: probs.len(),
                precision: precision_bits,
            });
        }
        if probs.is_empty() {
            return Err(EntropyError::InvalidTable("empty alphabet".into()));
        }
        let mut freqs: Vec<u64> = Vec::with_capacity(probs.len());
        for &p in probs {
            if !p.is_finite() || p < 0.0 {
                return Err(EntropyError::InvalidTable(format!(
                    "probability {p} is not a finite non-negative number"
                )));
            }
            freqs.push(((p.min(1.0) * target as f64).round() as u64).max(1));
        }
        // Settle the total onto the target by nudging the largest bins;
        // repeats until the rounding error is fully absorbed.
        loop {
            let sum: u64 = freqs.iter().sum();
            if sum == target {
                break;
            }
            let idx = (0..freqs.len())
                .max_by_key(|&i| freqs[i])
                .expect("nonempty");
            if sum < target {
                freqs[idx] += target - sum;
            } else {
                let excess = sum - target;
                let take = excess.min(freqs[idx] - 1);
                if take == 0 {
                    // Every bin is already at 1; unreachable because
                    // n <= target, but fail loudly rather than spin.
                    return Err(EntropyError::AlphabetTooLarge {
                        n: freqs.len(),
                        precision: precision_bits,
                    });
                }
                freqs[idx] -= take;
            }
        }
        let freqs32: Vec<u32> = freqs.into_iter().map(|f| f as u32).collect();
        let mut table = Self::from_freqs(&freqs32)?;
        table.precision_bits = precision_bits;
        Ok(table)
    }

    /// Uniform table over `n` symbols with one count each.
    pub fn uniform(n: usize) -> Result<Self, EntropyError> {
        if n == 0 || n > 1 << PRECISION_BITS {
            return Err(EntropyError::InvalidTable(format!(
                "uniform alphabet of {n} symbols"
            )));
        }
        Self::from_freqs(&vec![1u32; n])
    }

    pub fn alphabet_len(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn total(&self) -> u32 {
        *self.cdf.last().unwrap()
    }

    pub fn precision_bits(&self) -> u8 {
        self.precision_bits
    }

    /// `[cum_lo, cum_hi)` slice of the total assigned to `symbol`.
    pub fn bounds(&self, symbol: usize) -> Result<(u32, u32), EntropyError> {
        if symbol + 1 >= self.cdf.len() {
            return Err(EntropyError::ModelMismatch {
                symbol,
                alphabet: self.alphabet_len(),
            });
        }
        Ok((self.cdf[symbol], self.cdf[symbol + 1]))
    }

    /// Maps a cumulative-frequency offset back to its symbol.
    fn lookup(&self, dv: u32) -> usize {
        // partition_point finds the first index with cdf[i] > dv; the
        // owning symbol is one before it.
        self.cdf.partition_point(|&c| c <= dv) - 1
    }

    /// Model probability of `symbol` (frequency over total).
    pub fn probability(&self, symbol: usize) -> Result<f64, EntropyError> {
        let (lo, hi) = self.bounds(symbol)?;
        Ok((hi - lo) as f64 / self.total() as f64)
    }
}

/// Streaming range encoder. Feed `(cum_lo, cum_hi, total)` triples from any
/// model, then `finish()` to flush the final 4 bytes.
pub struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    /// Narrows the interval to the symbol occupying `[cum_lo, cum_hi)` of
    /// `total`. The final symbol of a table absorbs the division remainder,
    /// so no probability mass is wasted.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32, total: u32) -> Result<(), EntropyError> {
        debug_assert!(total > 0 && total <= BOT);
        if cum_lo >= cum_hi || cum_hi > total {
            return Err(EntropyError::ModelMismatch {
                symbol: cum_lo as usize,
                alphabet: total as usize,
            });
        }
        let r = self.range / total;
        self.low = self.low.wrapping_add(r * cum_lo);
        self.range = if cum_hi == total {
            self.range - r * cum_lo
        } else {
            r * (cum_hi - cum_lo)
        };
        self.normalize();
        Ok(())
    }

    pub fn encode_symbol(&mut self, symbol: usize, table: &CdfTable) -> Result<(), EntropyError> {
        let (lo, hi) = table.bounds(symbol)?;
        self.encode(lo, hi, table.total())
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) < TOP {
                // Top byte agrees across the whole interval: emit it.
            } else if self.range < BOT {
                // Underflow: the interval straddles a 2^24 boundary but is
                // too small to settle. Clip it to the boundary below; the
                // clipped range is provably nonzero.
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                break;
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes the interval and returns the coded bytes.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

/// Streaming range decoder over a byte slice. Mirrors the encoder's
/// interval arithmetic exactly; `decode_freq`/`decode_update` are split so
/// the caller's model can map the returned offset to a symbol in between.
pub struct RangeDecoder<'a> {
    low: u32,
    range: u32,
    code: u32,
    quotient: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, EntropyError> {
        let mut dec = RangeDecoder {
            low: 0,
            range: u32::MAX,
            code: 0,
            quotient: 0,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte()?;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u32, EntropyError> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or(EntropyError::TruncatedStream { at: self.pos })?;
        self.pos += 1;
        Ok(b as u32)
    }

    /// Returns the cumulative-frequency offset of the next symbol under a
    /// model with the given total. Must be followed by `decode_update` with
    /// that symbol's bounds.
    pub fn decode_freq(&mut self, total: u32) -> u32 {
        debug_assert!(total > 0 && total <= BOT);
        self.quotient = self.range / total;
        let dv = self.code.wrapping_sub(self.low) / self.quotient;
        dv.min(total - 1)
    }

    pub fn decode_update(
        &mut self,
        cum_lo: u32,
        cum_hi: u32,
        total: u32,
    ) -> Result<(), EntropyError> {
        if cum_lo >= cum_hi || cum_hi > total {
            return Err(EntropyError::ModelMismatch {
                symbol: cum_lo as usize,
                alphabet: total as usize,
            });
        }
        let r = self.quotient;
        self.low = self.low.wrapping_add(r * cum_lo);
        self.range = if cum_hi == total {
            self.range - r * cum_lo
        } else {
            r * (cum_hi - cum_lo)
        };
        self.normalize()
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<usize, EntropyError> {
        let dv = self.decode_freq(table.total());
        let sym = table.lookup(dv);
        let (lo, hi) = table.bounds(sym)?;
        self.decode_update(lo, hi, table.total())?;
        Ok(sym)
    }

    fn normalize(&mut self) -> Result<(), EntropyError> {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) < TOP {
            } else if self.range < BOT {
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                break;
            }
            self.code = (self.code << 8) | self.next_byte()?;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(())
    }
}

/// Order-0 adaptive byte model: starts uniform, bumps the coded symbol's
/// count after every step, and halves all counts when the total crosses
/// 2^15 so the model keeps tracking local statistics. Encoder and decoder
/// stay in lockstep because both update after each symbol.
#[derive(Debug, Clone)]
pub struct AdaptiveModel {
    freqs: Vec<u32>,
    total: u32,
}

const ADAPT_INCREMENT: u32 = 24;
const ADAPT_LIMIT: u32 = 1 << 15;

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        assert!(
            alphabet > 0 && alphabet as u32 <= ADAPT_LIMIT,
            "adaptive alphabet of {alphabet} symbols"
        );
        AdaptiveModel {
            freqs: vec![1; alphabet],
            total: alphabet as u32,
        }
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    fn bounds(&self, symbol: usize) -> Result<(u32, u32), EntropyError> {
        if symbol >= self.freqs.len() {
            return Err(EntropyError::ModelMismatch {
                symbol,
                alphabet: self.freqs.len(),
            });
        }
        let lo: u32 = self.freqs[..symbol].iter().sum();
        Ok((lo, lo + self.freqs[symbol]))
    }

    fn lookup(&self, dv: u32) -> (usize, u32, u32) {
        let mut lo = 0u32;
        for (i, &f) in self.freqs.iter().enumerate() {
            if dv < lo + f {
                return (i, lo, lo + f);
            }
            lo += f;
        }
        unreachable!("decode_freq clamps below the model total");
    }

    fn update(&mut self, symbol: usize) {
        self.freqs[symbol] += ADAPT_INCREMENT;
        self.total += ADAPT_INCREMENT;
        if self.total > ADAPT_LIMIT {
            self.total = 0;
            for f in &mut self.freqs {
                *f = (*f >> 1).max(1);
                self.total += *f;
            }
        }
    }

    pub fn encode(&mut self, symbol: usize, enc: &mut RangeEncoder) -> Result<(), EntropyError> {
        let (lo, hi) = self.bounds(symbol)?;
        enc.encode(lo, hi, self.total)?;
        self.update(symbol);
        Ok(())
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<usize, EntropyError> {
        let dv = dec.decode_freq(self.total);
        let (sym, lo, hi) = self.lookup(dv);
        dec.decode_update(lo, hi, self.total)?;
        self.update(sym);
        Ok(sym)
    }
}
