//! Parity of binomial counts.
//!
//! Sparse request matrices condition each column on the parity of its
//! Hamming weight, so the column sampler and the privacy analysis both need
//! the probability that a `Binomial(trials, theta)` count is even.

use crate::error::{param_err, Result};

/// `P[Binomial(trials, theta) is even] = 1/2 + 1/2 (1 - 2 theta)^trials`.
pub fn parity_probability(trials: u32, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(even_probability(trials, theta))
}

pub(crate) fn even_probability(trials: u32, theta: f64) -> f64 {
    0.5 + 0.5 * (1.0 - 2.0 * theta).powi(trials as i32)
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 0.5) {
        return param_err(format!("theta must lie in (0, 1/2], got {theta}"));
    }
    Ok(())
}

/// Distribution of the Hamming weight of `d` Bernoulli(theta) trials
/// conditioned on the weight having the given parity. Entry `k` is
/// `P[w = k | w ≡ odd (mod 2)]`; entries of the wrong parity are zero.
pub(crate) fn conditioned_weights(d: usize, theta: f64, odd: bool) -> Vec<f64> {
    let mut pmf = vec![0.0; d + 1];
    // Walk C(d, k) theta^k (1-theta)^(d-k) upward in log space.
    let (lt, lq) = (theta.ln(), (1.0 - theta).ln());
    let mut log_binom = 0.0f64;
    for (k, slot) in pmf.iter_mut().enumerate() {
        if k > 0 {
            log_binom += ((d - k + 1) as f64).ln() - (k as f64).ln();
        }
        if (k % 2 == 1) == odd {
            *slot = (log_binom + k as f64 * lt + (d - k) as f64 * lq).exp();
        }
    }
    let total: f64 = pmf.iter().sum();
    for p in &mut pmf {
        *p /= total;
    }
    pmf
}
