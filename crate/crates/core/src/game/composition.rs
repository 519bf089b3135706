//! Likelihood of a mixed round as an exact sum over all `u!` matchings of
//! observations to users.

use crate::error::{param_err, Result};

/// Largest `u` accepted by the permutation sum.
pub const MAX_FOLD_USERS: usize = 10;

/// `(1 / u!) * sum over permutations s of prod_k likelihood(k, s(k))`,
/// where `likelihood(k, o)` is the probability that user `k` produced
/// observation `o`.
pub fn permutation_fold(u: usize, likelihood: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if u == 0 || u > MAX_FOLD_USERS {
        return param_err(format!("permutation sum needs 1 <= u <= {MAX_FOLD_USERS}, got {u}"));
    }
    let table: Vec<Vec<f64>> = (0..u).map(|k| (0..u).map(|o| likelihood(k, o)).collect()).collect();
    let mut used = vec![false; u];
    fn rec(k: usize, prod: f64, table: &[Vec<f64>], used: &mut [bool]) -> f64 {
        if k == table.len() {
            return prod;
        }
        let mut sum = 0.0;
        for o in 0..table.len() {
            if !used[o] {
                used[o] = true;
                sum += rec(k + 1, prod * table[k][o], table, used);
                used[o] = false;
            }
        }
        sum
    }
    let sum = rec(0, 1.0, &table, &mut used);
    let factorial: f64 = (1..=u).map(|k| k as f64).product();
    Ok(sum / factorial)
}

/// Per-user likelihoods taking one of two values: `mu` when an observation
/// matches its user's query, `nu` otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPointModel {
    pub mu: f64,
    pub nu: f64,
}

/// How the denominator arm (`q_j`) scores the target's own observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldTable {
    /// `nu^2 / mu`, the value under which the closed form is an equality.
    Substituted,
    /// `nu`, the plain two-point assignment.
    Literal,
}

impl TwoPointModel {
    pub fn from_epsilon(eps: f64) -> Self {
        let r = eps.exp();
        Self { mu: r / (1.0 + r), nu: 1.0 / (1.0 + r) }
    }

    /// Ratio of the round likelihoods with the target on `q_i` versus `q_j`.
    /// Observation 0 is the target's; users `1..u` run `q_0`.
    pub fn composed_ratio(&self, u: usize, table: FoldTable) -> Result<f64> {
        let (mu, nu) = (self.mu, self.nu);
        let q0 = |o: usize| if o == 0 { nu } else { mu };
        let num = permutation_fold(u, |k, o| match k {
            0 if o == 0 => mu,
            0 => nu,
            _ => q0(o),
        })?;
        let den = permutation_fold(u, |k, o| match k {
            0 if o == 0 => match table {
                FoldTable::Substituted => nu * nu / mu,
                FoldTable::Literal => nu,
            },
            0 => nu,
            _ => q0(o),
        })?;
        Ok(num / den)
    }
}
