//! Fixed-size records and the replicated database that stores them.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// One database record of `b / 8` bytes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Record(Vec<u8>);

impl Record {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn zeroed(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut bytes = vec![0; len];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    /// In-place `self ^= other`.
    pub fn xor_assign(&mut self, other: &[u8]) -> Result<()> {
        if self.0.len() != other.len() {
            return Err(Error::Contract(format!(
                "record length mismatch: {} vs {}",
                self.0.len(),
                other.len()
            )));
        }
        xor_into(&mut self.0, other);
        Ok(())
    }
}

impl fmt::Debug for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Record(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

impl AsRef<[u8]> for Record {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Bytewise XOR of two records of equal length.
pub fn xor_records(a: &Record, b: &Record) -> Result<Record> {
    let mut out = a.clone();
    out.xor_assign(b.as_bytes())?;
    Ok(out)
}

#[inline]
pub(crate) fn xor_into(acc: &mut [u8], src: &[u8]) {
    debug_assert_eq!(acc.len(), src.len());
    for (a, s) in acc.iter_mut().zip(src) {
        *a ^= s;
    }
}

/// A replica of the `n` records, with a counter of record accesses.
///
/// The counter is the measured input to the computation cost: every record
/// fetched or folded into an XOR counts once.
pub struct Database {
    data: Vec<u8>,
    record_len: usize,
    n: usize,
    accesses: AtomicU64,
}

impl Database {
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let record_len = records.first().map(Record::len).unwrap_or(0);
        if record_len == 0 {
            return Err(Error::Parameter("database needs at least one non-empty record".into()));
        }
        let n = records.len();
        let mut data = Vec::with_capacity(n * record_len);
        for (i, r) in records.iter().enumerate() {
            if r.len() != record_len {
                return Err(Error::Contract(format!(
                    "record {i} has {} bytes, expected {record_len}",
                    r.len()
                )));
            }
            data.extend_from_slice(r.as_bytes());
        }
        Ok(Self { data, record_len, n, accesses: AtomicU64::new(0) })
    }

    /// Splits a raw concatenation of records; `n` is inferred from the length.
    pub fn from_bytes(data: Vec<u8>, record_len: usize) -> Result<Self> {
        if record_len == 0 {
            return Err(Error::Parameter("record size must be positive".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(record_len) {
            return Err(Error::Parameter(format!(
                "{} bytes is not a whole number of {record_len}-byte records",
                data.len()
            )));
        }
        let n = data.len() / record_len;
        Ok(Self { data, record_len, n, accesses: AtomicU64::new(0) })
    }

    pub fn random<R: RngCore + ?Sized>(n: usize, record_len: usize, rng: &mut R) -> Result<Self> {
        let mut data = vec![0u8; n * record_len];
        rng.fill_bytes(&mut data);
        Self::from_bytes(data, record_len)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn record_len(&self) -> usize {
        self.record_len
    }

    /// Raw bytes of record `i`. Does not count as an access.
    pub fn peek(&self, i: usize) -> &[u8] {
        &self.data[i * self.record_len..(i + 1) * self.record_len]
    }

    pub fn record(&self, i: usize) -> Record {
        Record(self.peek(i).to_vec())
    }

    pub fn accesses(&self) -> u64 {
        self.accesses.load(Ordering::Relaxed)
    }

    pub fn reset_accesses(&self) -> u64 {
        self.accesses.swap(0, Ordering::Relaxed)
    }

    pub(crate) fn count_accesses(&self, k: u64) {
        self.accesses.fetch_add(k, Ordering::Relaxed);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }
}

impl fmt::Debug for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Database")
            .field("n", &self.n)
            .field("record_len", &self.record_len)
            .field("accesses", &self.accesses())
            .finish()
    }
}
