//! System-wide configuration shared by every experiment.

use crate::error::{param_err, Result};

/// Index of a database server, `0..d`.
pub type ServerId = usize;

/// Index of a user taking part in a round, `0..u`.
pub type UserId = usize;

/// The tuple `(n, d, d_a, u, b)` describing one deployment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SystemParams {
    /// Number of records.
    pub n: usize,
    /// Number of replicated database servers.
    pub d: usize,
    /// Number of corrupt servers.
    pub d_a: usize,
    /// Number of users.
    pub u: usize,
    /// Record size in bits.
    pub b: usize,
}

impl SystemParams {
    pub fn new(n: usize, d: usize, d_a: usize, u: usize, b: usize) -> Result<Self> {
        let params = Self { n, d, d_a, u, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return param_err(format!("n must be at least 2, got {}", self.n));
        }
        if self.d < 1 {
            return param_err("d must be at least 1");
        }
        if self.d_a > self.d {
            return param_err(format!("d_a = {} exceeds d = {}", self.d_a, self.d));
        }
        if self.u < 1 {
            return param_err("u must be at least 1");
        }
        if self.b == 0 || !self.b.is_multiple_of(8) {
            return param_err(format!("record size must be a positive multiple of 8 bits, got {}", self.b));
        }
        Ok(())
    }

    /// Record size in bytes.
    pub fn record_bytes(&self) -> usize {
        self.b / 8
    }

    pub fn honest(&self) -> usize {
        self.d - self.d_a
    }
}
