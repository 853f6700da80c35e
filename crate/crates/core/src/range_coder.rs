//! 32-bit renormalizing range coder over 16-bit frequency tables.
//!
//! The encoder follows the LZMA carry-propagating design (64-bit `low`, byte
//! cache for pending carries). Its first output byte is always zero and is not
//! written; the decoder starts from four bytes instead of five.

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;

/// Cumulative frequencies for one coding position. `cum[0] == 0`,
/// `cum[n] == 65536`, every symbol frequency is at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cum: Vec<u32>,
}

impl CdfTable {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Domain("empty alphabet".into()));
        }
        if freqs.len() > PROB_TOTAL as usize {
            return Err(Error::Capacity { size: freqs.len(), max: PROB_TOTAL as usize });
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for (i, &f) in freqs.iter().enumerate() {
            if f == 0 {
                return Err(Error::Domain(format!("symbol {i} has zero frequency")));
            }
            acc += f as u64;
            cum.push(acc.min(u32::MAX as u64) as u32);
        }
        if acc != PROB_TOTAL as u64 {
            return Err(Error::Domain(format!("frequencies sum to {acc}, expected {PROB_TOTAL}")));
        }
        Ok(Self { cum })
    }

    pub fn alphabet_size(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    pub fn frequency(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Probability the coder actually assigns to `symbol`.
    pub fn probability(&self, symbol: usize) -> f64 {
        self.frequency(symbol) as f64 / PROB_TOTAL as f64
    }

    fn find(&self, target: u32) -> usize {
        // largest s with cum[s] <= target
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

/// Quantize a pmf to 16-bit frequencies.
///
/// Each probability is scaled by 65536 and floored; the leftover units go one
/// each to the most probable symbols (lower index first on ties). Symbols left
/// at zero then take one unit each from the currently largest bin.
pub fn build_cdf(pmf: &[f64]) -> Result<CdfTable> {
    let n = pmf.len();
    if n == 0 {
        return Err(Error::Domain("empty pmf".into()));
    }
    if n > PROB_TOTAL as usize {
        return Err(Error::Capacity { size: n, max: PROB_TOTAL as usize });
    }
    if let Some(i) = pmf.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain(format!("pmf entry {i} is {}", pmf[i])));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("pmf sums to {total}, expected 1")));
    }

    let scale = PROB_TOTAL as f64;
    let mut freq: Vec<u32> = pmf.iter().map(|&p| (p * scale).floor().min(scale) as u32).collect();
    let assigned: u64 = freq.iter().map(|&f| f as u64).sum();
    if assigned > PROB_TOTAL as u64 {
        // only reachable through the 1e-6 slack; trim from the largest bins
        let mut excess = assigned - PROB_TOTAL as u64;
        while excess > 0 {
            let m = argmax(&freq);
            freq[m] -= 1;
            excess -= 1;
        }
    } else {
        let remainder = (PROB_TOTAL as u64 - assigned) as usize;
        if remainder > 0 {
            let by_prob = |a: &usize, b: &usize| pmf[*b].total_cmp(&pmf[*a]).then(a.cmp(b));
            let mut order: Vec<usize> = (0..n).collect();
            let full_rounds = remainder / n;
            let partial = remainder % n;
            if full_rounds > 0 {
                freq.iter_mut().for_each(|f| *f += full_rounds as u32);
            }
            if partial > 0 {
                if partial < n {
                    order.select_nth_unstable_by(partial - 1, by_prob);
                }
                for &i in &order[..partial] {
                    freq[i] += 1;
                }
            }
        }
    }

    let zeros: Vec<usize> = (0..n).filter(|&i| freq[i] == 0).collect();
    if !zeros.is_empty() {
        steal_for_zeros(&mut freq, zeros.len());
        for i in zeros {
            freq[i] = 1;
        }
    }
    CdfTable::from_frequencies(&freq)
}

fn argmax(freq: &[u32]) -> usize {
    let mut best = 0;
    for (i, &f) in freq.iter().enumerate() {
        if f > freq[best] {
            best = i;
        }
    }
    best
}

/// Take `count` units one at a time from the current largest bin (lowest index on ties).
///
/// Computed in closed form: every bin above some level `L` is cut down to `L`,
/// and the leftover units come off the lowest-index bins sitting at `L`.
fn steal_for_zeros(freq: &mut [u32], count: usize) {
    if count == 0 {
        return;
    }
    let excess = |level: u32| -> u64 { freq.iter().map(|&f| f.saturating_sub(level) as u64).sum() };
    // smallest level whose excess fits in `count`
    let (mut lo, mut hi) = (0u32, freq.iter().copied().max().unwrap_or(0));
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if excess(mid) <= count as u64 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let level = lo;
    let mut left = count as u64 - excess(level);
    for f in freq.iter_mut() {
        if *f >= level {
            *f = level;
            if left > 0 && level > 0 {
                *f -= 1;
                left -= 1;
            }
        }
    }
}

/// Streaming range encoder.
#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, started: false, out: Vec::new() }
    }

    /// Encode `symbol` (an index into the table's alphabet).
    pub fn encode(&mut self, symbol: usize, table: &CdfTable) -> Result<()> {
        if symbol >= table.alphabet_size() {
            return Err(Error::Coding { index: 0, symbol: symbol as u32, alphabet: table.alphabet_size() });
        }
        let start = table.cum[symbol];
        let freq = table.cum[symbol + 1] - start;
        let r = self.range >> PROB_BITS;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                let byte = temp.wrapping_add(carry);
                if self.started {
                    self.out.push(byte);
                } else {
                    self.started = true;
                }
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

/// Streaming range decoder over a borrowed byte slice.
#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut dec = Self { bytes, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| {
            Error::Truncated(format!("range coder stream exhausted after {} bytes", self.bytes.len()))
        })?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<usize> {
        let r = self.range >> PROB_BITS;
        let target = (self.code / r).min(PROB_TOTAL - 1);
        let symbol = table.find(target);
        let start = table.cum[symbol];
        let freq = table.cum[symbol + 1] - start;
        self.code = self.code.wrapping_sub(r * start);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(symbol)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Encode `symbols[i]` against `tables[i]`.
pub fn encode_symbols(symbols: &[u32], tables: &[CdfTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(Error::Shape(format!(
            "{} symbols but {} tables",
            symbols.len(),
            tables.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (index, (&s, t)) in symbols.iter().zip(tables).enumerate() {
        enc.encode(s as usize, t).map_err(|e| match e {
            Error::Coding { symbol, alphabet, .. } => Error::Coding { index, symbol, alphabet },
            other => other,
        })?;
    }
    Ok(enc.finish())
}

pub fn decode_symbols(bytes: &[u8], tables: &[CdfTable], count: usize) -> Result<Vec<u32>> {
    if tables.len() != count {
        return Err(Error::Shape(format!("{count} symbols requested but {} tables", tables.len())));
    }
    let mut dec = RangeDecoder::new(bytes)?;
    tables.iter().map(|t| dec.decode(t).map(|s| s as u32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_halves() {
        assert_eq!(build_cdf(&[0.5, 0.5]).unwrap().cumulative(), &[0, 32768, 65536]);
    }

    #[test]
    fn floor_enforcement() {
        assert_eq!(build_cdf(&[1.0, 0.0]).unwrap().frequencies(), vec![65535, 1]);
        assert_eq!(build_cdf(&[0.0, 1.0, 0.0]).unwrap().frequencies(), vec![1, 65534, 1]);
    }

    #[test]
    fn floor_and_remainder_rule() {
        // floors 39321 / 19660 / 6553 leave 2 units, which go to the two most probable symbols
        let t = build_cdf(&[0.6, 0.3, 0.1]).unwrap();
        assert_eq!(t.frequencies(), vec![39322, 19661, 6553]);
        assert_eq!(t.cumulative().last(), Some(&65536));
    }

    #[test]
    fn remainder_ties_prefer_lower_index() {
        let t = build_cdf(&[0.25; 4].map(|p| p - 1e-9)).unwrap();
        // each floors to 16383 leaving 4 units, one each
        assert_eq!(t.frequencies(), vec![16384; 4]);
        let p = [1.0 / 3.0; 3];
        let t = build_cdf(&p).unwrap();
        assert_eq!(t.frequencies(), vec![21846, 21845, 21845]);
    }

    #[test]
    fn steal_tie_break() {
        let mut f = vec![10, 10, 0];
        steal_for_zeros(&mut f, 3);
        assert_eq!(f, vec![8, 9, 0]);
        let mut f = vec![5, 9, 9, 0];
        steal_for_zeros(&mut f, 7);
        assert_eq!(f, vec![5, 5, 6, 0]);
    }

    /// The literal one-unit-at-a-time process.
    fn steal_naive(freq: &mut [u32], count: usize) {
        for _ in 0..count {
            let m = argmax(freq);
            freq[m] -= 1;
        }
    }

    proptest::proptest! {
        #[test]
        fn steal_matches_naive(mut f in proptest::collection::vec(0u32..40, 1..30), frac in 0.0f64..1.0) {
            let total: u32 = f.iter().sum();
            let count = (frac * total as f64) as usize;
            let mut expect = f.clone();
            steal_naive(&mut expect, count);
            steal_for_zeros(&mut f, count);
            proptest::prop_assert_eq!(f, expect);
        }
    }

    #[test]
    fn rejects_bad_pmfs() {
        assert!(build_cdf(&[0.5, 0.4]).is_err());
        assert!(build_cdf(&[]).is_err());
        assert!(matches!(build_cdf(&vec![1.0 / 70000.0; 70000]), Err(Error::Capacity { .. })));
    }

    #[test]
    fn empty_sequence_roundtrip() {
        let bytes = encode_symbols(&[], &[]).unwrap();
        assert_eq!(decode_symbols(&bytes, &[], 0).unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn random_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = build_cdf(&[0.1, 0.2, 0.3, 0.05, 0.35]).unwrap();
        let symbols: Vec<u32> = (0..10_000).map(|_| rng.gen_range(0..5)).collect();
        let tables = vec![table; symbols.len()];
        let bytes = encode_symbols(&symbols, &tables).unwrap();
        assert_eq!(decode_symbols(&bytes, &tables, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn uniform_four_symbol_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = build_cdf(&[0.25; 4]).unwrap();
        let symbols: Vec<u32> = (0..1024).map(|_| rng.gen_range(0..4)).collect();
        let tables = vec![table; 1024];
        let bytes = encode_symbols(&symbols, &tables).unwrap();
        assert!((256..=262).contains(&bytes.len()), "{} bytes", bytes.len());
    }

    #[test]
    fn out_of_alphabet_reports_index() {
        let t = build_cdf(&[0.5, 0.5]).unwrap();
        match encode_symbols(&[0, 1, 2], &vec![t; 3]) {
            Err(Error::Coding { index, symbol, alphabet }) => assert_eq!((index, symbol, alphabet), (2, 2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_stream_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = build_cdf(&[0.25; 4]).unwrap();
        let symbols: Vec<u32> = (0..400).map(|_| rng.gen_range(0..4)).collect();
        let tables = vec![table; symbols.len()];
        let bytes = encode_symbols(&symbols, &tables).unwrap();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_symbols(cut, &tables, symbols.len()), Err(Error::Truncated(_))));
        assert!(matches!(decode_symbols(&[1, 2], &[], 0), Err(Error::Truncated(_))));
    }

    #[test]
    fn decoder_consumes_whole_stream() {
        let table = build_cdf(&[0.7, 0.2, 0.1]).unwrap();
        let symbols = vec![0u32, 2, 1, 1, 0, 0, 2, 0, 1, 0, 0, 0, 2];
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            enc.encode(s as usize, &table).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &symbols {
            assert_eq!(dec.decode(&table).unwrap() as u32, s);
        }
        assert!(dec.position() <= bytes.len());
    }
}
