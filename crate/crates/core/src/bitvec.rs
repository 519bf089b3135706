//! Length-`n` binary request vectors.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

const WORD: usize = 64;

/// A packed bit vector. Bits past `len` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(WORD)], len }
    }

    /// The query vector `e_q`.
    pub fn unit(len: usize, q: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(q, true);
        v
    }

    /// Each bit an independent fair coin.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(WORD)).map(|_| rng.gen()).collect();
        let tail = len % WORD;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Self { words, len }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor_assign(&mut self, other: &BitVector) -> Result<()> {
        if self.len != other.len {
            return Err(Error::Contract(format!(
                "bit vector length mismatch: {} vs {}",
                self.len, other.len
            )));
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
        Ok(())
    }

    pub fn xor(&self, other: &BitVector) -> Result<BitVector> {
        let mut out = self.clone();
        out.xor_assign(other)?;
        Ok(out)
    }

    /// Positions of the set bits, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD + tz)
            })
        })
    }

    /// Packs bit `k` into bit `k % 8` of byte `k / 8`.
    pub fn to_lsb_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    /// Inverse of [`to_lsb_bytes`](Self::to_lsb_bytes). Padding bits must be zero.
    pub fn from_lsb_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Contract(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        if !len.is_multiple_of(8) {
            let last = bytes[bytes.len() - 1];
            if last >> (len % 8) != 0 {
                return Err(Error::Contract("non-zero padding bits".into()));
            }
        }
        let mut words = vec![0u64; len.div_ceil(WORD)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        Ok(Self { words, len })
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector[")?;
        for i in 0..self.len {
            write!(f, "{}", self.get(i) as u8)?;
        }
        write!(f, "]")
    }
}
