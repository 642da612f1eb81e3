//! Bit-granular range coder with a 48-bit window, carry propagation and
//! 16-bit frequency tables.
//!
//! The encoder emits one bit per normalization shift, and the decoder counts the
//! same shifts, so both sides agree on how many payload bits have been used after
//! every symbol.

use super::bits::{BitBuf, BitReader};
use crate::density::{PmfTable, FREQ_BITS, FREQ_TOTAL};

const WINDOW: u32 = 48;
const TOP: u64 = 1 << WINDOW;
const MASK: u64 = TOP - 1;
const BOTTOM: u64 = 1 << 32;

/// Outcome of coding one integer against a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coded {
    /// Value was inside the table support.
    InSupport,
    /// Value was sent as escape symbol plus its distance past the support edge.
    Escaped,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoderError {
    #[error("value {0} is outside a table that has no escape symbol")]
    NoEscape(i64),
    #[error("value {0} is beyond the escape reach of the table")]
    EscapeOverflow(i64),
}

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: BitBuf,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: TOP, out: BitBuf::new() }
    }

    /// Narrows the interval to slot `[cum, cum + freq)` out of `2^16`.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= FREQ_TOTAL);
        let r = self.range >> FREQ_BITS;
        self.low += r * cum as u64;
        self.range = r * freq as u64;
        if self.low >= TOP {
            self.low -= TOP;
            let ok = self.out.increment();
            debug_assert!(ok, "carry past the start of the stream");
        }
        while self.range < BOTTOM {
            self.out.push(self.low >> (WINDOW - 1) & 1 == 1);
            self.low = (self.low << 1) & MASK;
            self.range <<= 1;
        }
    }

    /// Codes the low `w` bits of `v` as uniform raw bits, `w <= 16`.
    pub fn encode_bits(&mut self, v: u32, w: u32) {
        debug_assert!(w <= FREQ_BITS && v < 1 << w);
        let shift = FREQ_BITS - w;
        self.encode(v << shift, 1 << shift);
    }

    /// Codes integer `k` under `table`. Off-support values send the escape symbol,
    /// then a side bit, the bit length of the distance past the edge (5 bits) and
    /// the distance without its leading one.
    pub fn encode_value(&mut self, table: &PmfTable, k: i64) -> Result<Coded, CoderError> {
        let cum = table.cumulative();
        if let Some(i) = table.index_of(k) {
            self.encode(cum[i], cum[i + 1] - cum[i]);
            return Ok(Coded::InSupport);
        }
        let esc = table.escape_symbol().ok_or(CoderError::NoEscape(k))?;
        let (above, off) = escape_offset(table, k).ok_or(CoderError::EscapeOverflow(k))?;
        self.encode(cum[esc], cum[esc + 1] - cum[esc]);
        let nb = 64 - off.leading_zeros();
        self.encode_bits(above as u32, 1);
        self.encode_bits(nb - 1, 5);
        let mut rest = nb - 1;
        while rest > 0 {
            let w = rest.min(FREQ_BITS);
            rest -= w;
            self.encode_bits((off >> rest) as u32 & ((1 << w) - 1), w);
        }
        Ok(Coded::Escaped)
    }

    /// Bits emitted so far (not counting the termination).
    pub fn emitted(&self) -> usize {
        self.out.len()
    }

    /// Terminates with the shortest prefix whose whole dyadic cell lies in the
    /// final interval, so every continuation (including zero padding) decodes.
    pub fn finish(mut self) -> BitBuf {
        let end = self.low + self.range;
        let mut chosen = (WINDOW, self.low);
        for t in 0..=WINDOW {
            let shift = WINDOW - t;
            let cell = 1u64 << shift;
            let w = ((self.low + cell - 1) >> shift) << shift;
            if w + cell <= end {
                chosen = (t, w);
                break;
            }
        }
        let (t, mut w) = chosen;
        if w >= TOP {
            w -= TOP;
            let ok = self.out.increment();
            debug_assert!(ok, "carry past the start of the stream");
        }
        for i in 0..t {
            self.out.push(w >> (WINDOW - 1 - i) & 1 == 1);
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    src: BitReader<'a>,
    next: usize,
    range: u64,
    diff: u64,
    shifted: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(src: BitReader<'a>) -> Self {
        let mut diff = 0u64;
        for i in 0..WINDOW as usize {
            diff = (diff << 1) | src.bit(i) as u64;
        }
        Self { src, next: WINDOW as usize, range: TOP, diff, shifted: 0 }
    }

    /// Bits shifted in beyond the initial window; mirrors [`RangeEncoder::emitted`].
    pub fn consumed(&self) -> usize {
        self.shifted
    }

    fn target(&self) -> (u64, u32) {
        let r = self.range >> FREQ_BITS;
        let q = (self.diff / r).min(FREQ_TOTAL as u64 - 1) as u32;
        (r, q)
    }

    fn consume(&mut self, r: u64, cum: u32, freq: u32) {
        self.diff -= r * cum as u64;
        self.range = r * freq as u64;
        if self.diff >= self.range {
            // only reachable on corrupted input
            self.diff = self.range - 1;
        }
        while self.range < BOTTOM {
            self.diff = (self.diff << 1) | self.src.bit(self.next) as u64;
            self.next += 1;
            self.range <<= 1;
            self.shifted += 1;
        }
    }

    pub fn decode_bits(&mut self, w: u32) -> u32 {
        let shift = FREQ_BITS - w;
        let (r, q) = self.target();
        let v = q >> shift;
        self.consume(r, v << shift, 1 << shift);
        v
    }

    /// Decodes one table symbol, resolving escapes back to their value.
    pub fn decode_value(&mut self, table: &PmfTable) -> (i64, Coded) {
        let (r, q) = self.target();
        let s = table.symbol_for(q);
        let cum = table.cumulative();
        self.consume(r, cum[s], cum[s + 1] - cum[s]);
        if Some(s) == table.escape_symbol() {
            let above = self.decode_bits(1) == 1;
            let mut rest = self.decode_bits(5);
            let mut off = 1u64;
            while rest > 0 {
                let w = rest.min(FREQ_BITS);
                rest -= w;
                off = off << w | self.decode_bits(w) as u64;
            }
            let off = (off as i64).min(escape_reach(table));
            let v = if above { table.k_max() + off } else { table.k_min() - off };
            (v, Coded::Escaped)
        } else {
            (table.k_min() + s as i64, Coded::InSupport)
        }
    }
}

/// Smallest escape reach in steps past either support edge.
pub const MIN_ESCAPE_REACH: i64 = 1024;

/// How far past the support an escape can go: four support widths, at least
/// [`MIN_ESCAPE_REACH`] steps. Decoded escapes are clamped to it, which bounds the
/// damage of a corrupted escape payload.
pub fn escape_reach(table: &PmfTable) -> i64 {
    (4 * (table.k_max() - table.k_min() + 1)).max(MIN_ESCAPE_REACH)
}

/// Side and distance past the support edge for an off-support `k`; `None` when
/// `k` is beyond the escape reach.
fn escape_offset(table: &PmfTable, k: i64) -> Option<(bool, u64)> {
    let (above, off) = if k > table.k_max() { (true, k - table.k_max()) } else { (false, table.k_min() - k) };
    (off > 0 && off <= escape_reach(table)).then_some((above, off as u64))
}

/// Raw bits that follow the escape symbol for an off-support `k`.
pub fn escape_bits(table: &PmfTable, k: i64) -> f64 {
    match escape_offset(table, k) {
        Some((_, off)) => (5 + 64 - off.leading_zeros()) as f64,
        None => f64::INFINITY,
    }
}

/// Code length in bits of `k` under the quantized frequencies of `table`.
pub fn quantized_code_length(table: &PmfTable, k: i64) -> f64 {
    let f = |s: usize| table.frequencies()[s] as f64 / FREQ_TOTAL as f64;
    match table.index_of(k) {
        Some(i) => -f(i).log2(),
        None => match table.escape_symbol() {
            Some(e) => escape_bits(table, k) - f(e).log2(),
            None => f64::INFINITY,
        },
    }
}
