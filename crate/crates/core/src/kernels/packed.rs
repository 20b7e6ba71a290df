//! Bit-packed sequences for fast terminal-padded Hamming distances.
//!
//! Each token occupies a fixed-width lane of a `u64`; the terminal code `0`
//! doubles as padding, so words past the end of a sequence are zero and
//! padded positions compare equal only against padding.

use crate::sequence::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LaneWidth(u32);

impl LaneWidth {
    /// Smallest supported lane width able to hold codes `0..=alphabet_size`.
    pub(crate) fn for_alphabet(alphabet_size: usize) -> Self {
        let bits = match alphabet_size {
            0..=3 => 2,
            4..=15 => 4,
            16..=255 => 8,
            _ => 16,
        };
        LaneWidth(bits)
    }

    fn lanes_per_word(self) -> usize {
        (64 / self.0) as usize
    }

    /// Number of lanes holding a nonzero value.
    #[inline]
    pub(crate) fn nonzero_lanes(self, x: u64) -> u32 {
        let folded = match self.0 {
            2 => (x | x >> 1) & 0x5555_5555_5555_5555,
            4 => {
                let x = x | x >> 1;
                (x | x >> 2) & 0x1111_1111_1111_1111
            }
            8 => {
                let x = x | x >> 1;
                let x = x | x >> 2;
                (x | x >> 4) & 0x0101_0101_0101_0101
            }
            _ => {
                let x = x | x >> 1;
                let x = x | x >> 2;
                let x = x | x >> 4;
                (x | x >> 8) & 0x0001_0001_0001_0001
            }
        };
        folded.count_ones()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PackedSeq {
    words: Vec<u64>,
    len: u32,
}

impl PackedSeq {
    pub(crate) fn new(seq: &Sequence, width: LaneWidth) -> Self {
        let per = width.lanes_per_word();
        let mut words = vec![0u64; seq.len().div_ceil(per)];
        for (i, &c) in seq.codes().iter().enumerate() {
            words[i / per] |= (c as u64) << ((i % per) as u32 * width.0);
        }
        PackedSeq {
            words,
            len: seq.len() as u32,
        }
    }

    pub(crate) fn len(&self) -> u32 {
        self.len
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    /// Terminal-padded Hamming distance.
    #[inline]
    pub(crate) fn hamming(&self, other: &PackedSeq, width: LaneWidth) -> u32 {
        hamming_words(&self.words, &other.words, width)
    }
}

/// Terminal-padded Hamming distance between packed word slices; missing
/// trailing words count as padding.
#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64], width: LaneWidth) -> u32 {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut d = 0;
    for (x, y) in short.iter().zip(long) {
        d += width.nonzero_lanes(x ^ y);
    }
    for &y in &long[short.len()..] {
        d += width.nonzero_lanes(y);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::Alphabet;
    use std::sync::Arc;

    fn naive(a: &[u16], b: &[u16]) -> u32 {
        let n = a.len().max(b.len());
        (0..n)
            .filter(|&i| a.get(i).copied().unwrap_or(0) != b.get(i).copied().unwrap_or(0))
            .count() as u32
    }

    #[test]
    fn matches_naive_for_every_width() {
        for size in [2usize, 3, 7, 15, 40, 300] {
            let symbols: Vec<String> = (0..size).map(|i| format!("t{i}")).collect();
            let alpha = Arc::new(Alphabet::new(&symbols, None).unwrap());
            let width = LaneWidth::for_alphabet(size);
            let mut state = 12345u64;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 33) as usize
            };
            for _ in 0..200 {
                let la = next() % 70;
                let lb = next() % 70;
                let a: Vec<u16> = (0..la).map(|_| (next() % size + 1) as u16).collect();
                let b: Vec<u16> = (0..lb).map(|_| (next() % size + 1) as u16).collect();
                let pa = PackedSeq::new(&Sequence::from_codes(&alpha, a.clone()).unwrap(), width);
                let pb = PackedSeq::new(&Sequence::from_codes(&alpha, b.clone()).unwrap(), width);
                assert_eq!(pa.hamming(&pb, width), naive(&a, &b));
                assert_eq!(pb.hamming(&pa, width), naive(&a, &b));
            }
        }
    }
}
