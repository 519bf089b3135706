//! Closed-form privacy bounds and the cost model.

use crate::error::{param_err, Result};
use crate::mechanisms::MechanismParams;
use crate::params::SystemParams;
use crate::parity::check_theta;

/// `x` this close to 1 makes `atanh(x)` infinite for our purposes.
const ATANH_EDGE: f64 = 1.0 - 1e-15;

/// An `(epsilon, delta)` guarantee. `epsilon = inf` means no finite bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBound {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBound {
    pub const PERFECT: PrivacyBound = PrivacyBound { epsilon: 0.0, delta: 0.0 };
    pub const NONE: PrivacyBound = PrivacyBound { epsilon: f64::INFINITY, delta: 0.0 };

    pub fn pure(epsilon: f64) -> Self {
        debug_assert!(epsilon >= 0.0 || epsilon.is_nan());
        Self { epsilon, delta: 0.0 }
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEstimate {
    /// Record blocks sent to the client.
    pub cm_records: u64,
    /// Expected record accesses summed over servers.
    pub cp_accesses: f64,
    pub cp_weighted: f64,
}

fn check_corruption(d: usize, d_a: usize) -> Result<()> {
    if d == 0 {
        return param_err("need at least one server");
    }
    if d_a > d {
        return param_err(format!("d_a = {d_a} exceeds d = {d}"));
    }
    Ok(())
}

fn check_request_count(n: usize, d: usize, p: usize) -> Result<()> {
    if p <= 1 || p > n {
        return param_err(format!("p must satisfy 1 < p <= n = {n}, got {p}"));
    }
    if !p.is_multiple_of(d) {
        return param_err(format!("p = {p} is not a multiple of d = {d}"));
    }
    Ok(())
}

/// `atanh(x) = ln((1 + x) / (1 - x)) / 2`, infinite at the edge.
fn atanh_capped(x: f64) -> f64 {
    if x >= ATANH_EDGE {
        f64::INFINITY
    } else {
        0.5 * (x.ln_1p() - (-x).ln_1p())
    }
}

/// `ln(e^l + u - 1) - ln u` for `l >= 0`.
fn compose_log(l: f64, u: usize) -> f64 {
    if l.is_infinite() {
        return f64::INFINITY;
    }
    if u == 1 {
        return l;
    }
    let u = u as f64;
    if l > 30.0 {
        l + ((u - 1.0) * (-l).exp()).ln_1p() - u.ln()
    } else {
        (l.exp_m1() / u).ln_1p()
    }
}

/// The ratio whose log is the direct-request epsilon.
fn direct_ratio(n: usize, d: usize, d_a: usize, p: usize) -> f64 {
    let (n, d, d_a, p) = (n as f64, d as f64, d_a as f64, p as f64);
    (d * (n - 1.0) / (p - 1.0) - d_a) / (d - d_a)
}

pub fn eps_direct(n: usize, d: usize, d_a: usize, p: usize) -> Result<PrivacyBound> {
    check_corruption(d, d_a)?;
    check_request_count(n, d, p)?;
    if d_a == d {
        return Ok(PrivacyBound::NONE);
    }
    Ok(PrivacyBound::pure(direct_ratio(n, d, d_a, p).ln().max(0.0)))
}

pub fn eps_bundled(n: usize, d: usize, d_a: usize, p: usize, u: usize) -> Result<PrivacyBound> {
    check_corruption(d, d_a)?;
    check_request_count(n, d, p)?;
    check_users(u)?;
    if d_a == d {
        return Ok(PrivacyBound::NONE);
    }
    let log_squared = 2.0 * direct_ratio(n, d, d_a, p).ln().max(0.0);
    Ok(PrivacyBound::pure(compose_log(log_squared, u)))
}

pub fn eps_sparse(theta: f64, d: usize, d_a: usize) -> Result<PrivacyBound> {
    check_theta(theta)?;
    check_corruption(d, d_a)?;
    if d_a == d {
        return Ok(PrivacyBound::NONE);
    }
    let x = (1.0 - 2.0 * theta).powi((d - d_a) as i32);
    Ok(PrivacyBound::pure(4.0 * atanh_capped(x)))
}

/// Epsilon of `u` users running an `eps1`-private mechanism through the
/// anonymity system.
pub fn eps_compose(eps1: f64, u: usize) -> Result<f64> {
    if eps1.is_nan() || eps1 < 0.0 {
        return param_err(format!("epsilon must be non-negative, got {eps1}"));
    }
    check_users(u)?;
    Ok(compose_log(2.0 * eps1, u))
}

pub fn eps_anon_sparse(theta: f64, d: usize, d_a: usize, u: usize) -> Result<PrivacyBound> {
    check_theta(theta)?;
    check_corruption(d, d_a)?;
    check_users(u)?;
    if d_a == d {
        return Ok(PrivacyBound::NONE);
    }
    let x = (1.0 - 2.0 * theta).powi((d - d_a) as i32);
    if x >= ATANH_EDGE {
        return Ok(PrivacyBound::NONE);
    }
    // ln(((1 + x) / (1 - x))^4)
    let l = 4.0 * (x.ln_1p() - (-x).ln_1p());
    Ok(PrivacyBound::pure(compose_log(l, u)))
}

/// Probability that all `t` contacted servers are corrupt.
pub fn delta_subset(d: usize, d_a: usize, t: usize) -> Result<PrivacyBound> {
    check_corruption(d, d_a)?;
    if t == 0 || t > d {
        return param_err(format!("t must satisfy 1 <= t <= d = {d}, got {t}"));
    }
    let delta = if t > d_a { 0.0 } else { corrupt_subset_probability(d, d_a, t) };
    Ok(PrivacyBound { epsilon: 0.0, delta })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `prod_{i<t} (d_a - i) / (d - i)` as a reduced fraction divided once, so
/// terminating values come out exact; a float product past `u128` range.
fn corrupt_subset_probability(d: usize, d_a: usize, t: usize) -> f64 {
    let (mut num, mut den) = (1u128, 1u128);
    for i in 0..t {
        let (a, b) = ((d_a - i) as u128, (d - i) as u128);
        match (num.checked_mul(a), den.checked_mul(b)) {
            (Some(x), Some(y)) => {
                let g = gcd(x, y);
                (num, den) = (x / g, y / g);
            }
            _ => return (0..t).map(|i| (d_a - i) as f64 / (d - i) as f64).product(),
        }
    }
    num as f64 / den as f64
}

/// Bounds on the chance that `u` naive-dummy users all request the target's
/// candidate record (`delta_u`) or none of them do (`delta_0`).
pub fn naive_composition_deltas(n: usize, p: usize, u: usize) -> Result<(f64, f64)> {
    if n < 2 || p <= 1 || p > n {
        return param_err(format!("need 1 < p <= n, got p = {p}, n = {n}"));
    }
    check_users(u)?;
    let exp = (u - 1) as i32;
    let denom = (n - 1) as f64;
    let delta_u = ((p - 1) as f64 / denom).powi(exp);
    let delta_0 = ((n - p) as f64 / denom).powi(exp);
    Ok((delta_0, delta_u))
}

fn check_users(u: usize) -> Result<()> {
    if u == 0 {
        return param_err("need at least one user");
    }
    Ok(())
}

pub fn cost_model(
    mechanism: &MechanismParams,
    params: &SystemParams,
    c_acc: f64,
    c_prc: f64,
) -> Result<CostEstimate> {
    if !(c_acc >= 0.0 && c_prc >= 0.0) {
        return param_err("unit costs must be non-negative");
    }
    mechanism.validate(params)?;
    let (n, d) = (params.n as f64, params.d as f64);
    let scan = |blocks: usize, accesses: f64| CostEstimate {
        cm_records: blocks as u64,
        cp_accesses: accesses,
        cp_weighted: accesses * (c_acc + c_prc),
    };
    match *mechanism {
        MechanismParams::Chor => Ok(scan(params.d, 0.5 * d * n)),
        MechanismParams::Direct { p }
        | MechanismParams::BundledAnon { p }
        | MechanismParams::SeparatedAnon { p } => Ok(CostEstimate {
            cm_records: p as u64,
            cp_accesses: p as f64,
            cp_weighted: p as f64 * c_acc,
        }),
        MechanismParams::Sparse { theta } | MechanismParams::AnonSparse { theta } => {
            Ok(scan(params.d, theta * d * n))
        }
        MechanismParams::Subset { t } => Ok(scan(t, 0.5 * t as f64 * n)),
        MechanismParams::NaiveDummy { .. } | MechanismParams::NaiveAnon => {
            param_err(format!("no cost model for mechanism {}", mechanism.name()))
        }
    }
}

/// The analytic guarantee for a mechanism in a deployment.
pub fn analytic_bound(mechanism: &MechanismParams, params: &SystemParams) -> Result<PrivacyBound> {
    mechanism.validate(params)?;
    let SystemParams { n, d, d_a, u, .. } = *params;
    match *mechanism {
        MechanismParams::NaiveDummy { p } => {
            Ok(if p == n { PrivacyBound::PERFECT } else { PrivacyBound::NONE })
        }
        MechanismParams::NaiveAnon => Ok(PrivacyBound::NONE),
        MechanismParams::Direct { p } => eps_direct(n, d, d_a, p),
        // The bundled bound also covers separated requests, which leak less.
        MechanismParams::BundledAnon { p } | MechanismParams::SeparatedAnon { p } => {
            eps_bundled(n, d, d_a, p, u)
        }
        MechanismParams::Sparse { theta } => eps_sparse(theta, d, d_a),
        MechanismParams::AnonSparse { theta } => eps_anon_sparse(theta, d, d_a, u),
        MechanismParams::Subset { t } => delta_subset(d, d_a, t),
        MechanismParams::Chor => delta_subset(d, d_a, d),
    }
}
