//! Client-side query generation and answer reconstruction.
//!
//! Nine mechanisms are covered: the two naive designs (dummy requests to a
//! single server, a plain request through the anonymity channel), direct
//! requests split across servers and their two anonymous compositions, the
//! sparse XOR scheme with and without the anonymity channel, and the subset
//! optimisation of Chor's scheme (Chor itself being the full subset).

use std::collections::HashSet;
use std::fmt;

use rand::distributions::{Bernoulli, Distribution};
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::bitvec::BitVector;
use crate::error::{param_err, Error, Result};
use crate::params::{ServerId, SystemParams};
use crate::parity::{check_theta, conditioned_weights};
use crate::record::Record;
use crate::rng::sample_uniform_index;
use crate::server::ServerResponse;

/// Attempts per column before the rejection sampler gives up.
pub const REJECTION_CAP: usize = 1_000_000;

/// What one server is asked to do.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ServerRequest {
    /// Return these records, in this order.
    FetchIndices(Vec<usize>),
    /// Return the XOR of the records selected by the vector.
    XorSelect(BitVector),
}

impl ServerRequest {
    /// Number of record blocks the request makes a server touch.
    pub fn access_count(&self) -> usize {
        match self {
            ServerRequest::FetchIndices(ix) => ix.len(),
            ServerRequest::XorSelect(v) => v.count_ones(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MechanismParams {
    NaiveDummy { p: usize },
    NaiveAnon,
    Direct { p: usize },
    BundledAnon { p: usize },
    SeparatedAnon { p: usize },
    Sparse { theta: f64 },
    AnonSparse { theta: f64 },
    Subset { t: usize },
    Chor,
}

impl MechanismParams {
    pub const NAMES: [&'static str; 9] = [
        "naive-dummy",
        "naive-anon",
        "direct",
        "bundled-anon",
        "separated-anon",
        "sparse",
        "anon-sparse",
        "subset",
        "chor",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MechanismParams::NaiveDummy { .. } => "naive-dummy",
            MechanismParams::NaiveAnon => "naive-anon",
            MechanismParams::Direct { .. } => "direct",
            MechanismParams::BundledAnon { .. } => "bundled-anon",
            MechanismParams::SeparatedAnon { .. } => "separated-anon",
            MechanismParams::Sparse { .. } => "sparse",
            MechanismParams::AnonSparse { .. } => "anon-sparse",
            MechanismParams::Subset { .. } => "subset",
            MechanismParams::Chor => "chor",
        }
    }

    /// The tunable parameter, as `(name, value)`.
    pub fn parameter(&self) -> Option<(&'static str, f64)> {
        match *self {
            MechanismParams::NaiveDummy { p }
            | MechanismParams::Direct { p }
            | MechanismParams::BundledAnon { p }
            | MechanismParams::SeparatedAnon { p } => Some(("p", p as f64)),
            MechanismParams::Sparse { theta } | MechanismParams::AnonSparse { theta } => {
                Some(("theta", theta))
            }
            MechanismParams::Subset { t } => Some(("t", t as f64)),
            MechanismParams::NaiveAnon | MechanismParams::Chor => None,
        }
    }

    pub fn transport(&self) -> Transport {
        match self {
            MechanismParams::NaiveDummy { .. }
            | MechanismParams::Direct { .. }
            | MechanismParams::Sparse { .. }
            | MechanismParams::Subset { .. }
            | MechanismParams::Chor => Transport::Direct,
            MechanismParams::BundledAnon { .. } | MechanismParams::AnonSparse { .. } => {
                Transport::AnonBundle
            }
            MechanismParams::NaiveAnon | MechanismParams::SeparatedAnon { .. } => {
                Transport::AnonSeparate
            }
        }
    }

    pub fn is_anonymous(&self) -> bool {
        self.transport() != Transport::Direct
    }

    /// Checks the mechanism's preconditions against the deployment.
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        params.validate()?;
        match *self {
            MechanismParams::NaiveDummy { p } => check_dummy_count(p, params.n),
            MechanismParams::NaiveAnon => Ok(()),
            MechanismParams::Direct { p }
            | MechanismParams::BundledAnon { p }
            | MechanismParams::SeparatedAnon { p } => check_partitioned(p, params),
            MechanismParams::Sparse { theta } | MechanismParams::AnonSparse { theta } => {
                check_theta(theta)?;
                if params.d < 2 {
                    return param_err("sparse requests need at least two servers");
                }
                Ok(())
            }
            MechanismParams::Subset { t } => check_subset(t, params.d),
            MechanismParams::Chor => check_subset(params.d, params.d),
        }
    }
}

impl fmt::Display for MechanismParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parameter() {
            Some((k, v)) => write!(f, "{}({k}={v})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// How a plan's requests leave the client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transport {
    /// Straight to each server over an encrypted channel.
    Direct,
    /// One anonymous message carrying every request; requests stay linkable.
    AnonBundle,
    /// One anonymous message per request; requests are unlinkable.
    AnonSeparate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reconstruction {
    PickIndex(usize),
    XorAll,
}

/// Requests produced for one query, plus what the client needs to finish it.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub mechanism: MechanismParams,
    pub transport: Transport,
    /// `(server, request)` pairs in dispatch order. Partitioned mechanisms
    /// list each server once; separated requests may repeat a server.
    pub dispatches: Vec<(ServerId, ServerRequest)>,
    pub target: usize,
    pub reconstruction: Reconstruction,
}

impl QueryPlan {
    /// All indices requested across servers (fetch mechanisms only).
    pub fn requested_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .dispatches
            .iter()
            .filter_map(|(_, r)| match r {
                ServerRequest::FetchIndices(ix) => Some(ix.iter().copied()),
                ServerRequest::XorSelect(_) => None,
            })
            .flatten()
            .collect();
        out.sort_unstable();
        out
    }
}

/// Order in which the partitioned mechanisms pop the request set onto servers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PopOrder {
    /// Uniformly random order: each server gets a uniformly random `p/d`
    /// slice of the request set.
    #[default]
    Shuffled,
    /// Smallest index first. Leaks the target's rank within the request set
    /// to the servers; kept for comparison.
    Ascending,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SparseSampler {
    /// Redraw the `d` Bernoulli trials until the parity matches.
    #[default]
    Rejection,
    /// Draw the Hamming weight from the parity-conditioned law, then a
    /// uniformly random column of that weight.
    WeightFirst,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenOptions {
    pub pop_order: PopOrder,
    pub sparse_sampler: SparseSampler,
}

fn check_target(q: usize, n: usize) -> Result<()> {
    if q >= n {
        return param_err(format!("query index {q} outside [0, {n})"));
    }
    Ok(())
}

fn check_dummy_count(p: usize, n: usize) -> Result<()> {
    if p <= 1 {
        return param_err(format!("p must exceed 1, got {p}"));
    }
    if p > n {
        return param_err(format!("cannot draw {p} distinct indices from {n} records"));
    }
    Ok(())
}

fn check_partitioned(p: usize, params: &SystemParams) -> Result<()> {
    check_dummy_count(p, params.n)?;
    if !p.is_multiple_of(params.d) {
        return param_err(format!("p = {p} is not a multiple of d = {}", params.d));
    }
    Ok(())
}

fn check_subset(t: usize, d: usize) -> Result<()> {
    if t < 2 || t > d {
        return param_err(format!("t must satisfy 2 <= t <= d = {d}, got {t}"));
    }
    Ok(())
}

/// `{q}` plus `p - 1` distinct dummies, redrawing on collision.
fn draw_request_set<R: Rng + ?Sized>(q: usize, p: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mut set = Vec::with_capacity(p);
    let mut seen = HashSet::with_capacity(p);
    set.push(q);
    seen.insert(q);
    while set.len() < p {
        let candidate = sample_uniform_index(rng, n)?;
        if seen.insert(candidate) {
            set.push(candidate);
        }
    }
    Ok(set)
}

pub fn gen_naive_dummy<R: Rng + ?Sized>(q: usize, p: usize, n: usize, rng: &mut R) -> Result<QueryPlan> {
    check_target(q, n)?;
    check_dummy_count(p, n)?;
    let mut set = draw_request_set(q, p, n, rng)?;
    set.sort_unstable();
    Ok(QueryPlan {
        mechanism: MechanismParams::NaiveDummy { p },
        transport: Transport::Direct,
        dispatches: vec![(0, ServerRequest::FetchIndices(set))],
        target: q,
        reconstruction: Reconstruction::PickIndex(q),
    })
}

pub fn gen_naive_anon(q: usize, n: usize) -> Result<QueryPlan> {
    check_target(q, n)?;
    Ok(QueryPlan {
        mechanism: MechanismParams::NaiveAnon,
        transport: Transport::AnonSeparate,
        dispatches: vec![(0, ServerRequest::FetchIndices(vec![q]))],
        target: q,
        reconstruction: Reconstruction::PickIndex(q),
    })
}

/// Draws the request set and pops `p / d` indices onto each server in turn.
fn partitioned_dispatches<R: Rng + ?Sized>(
    q: usize,
    p: usize,
    params: &SystemParams,
    order: PopOrder,
    rng: &mut R,
) -> Result<Vec<(ServerId, ServerRequest)>> {
    check_target(q, params.n)?;
    check_partitioned(p, params)?;
    let mut set = draw_request_set(q, p, params.n, rng)?;
    match order {
        PopOrder::Ascending => set.sort_unstable(),
        PopOrder::Shuffled => set.shuffle(rng),
    }
    let per_server = p / params.d;
    Ok(set
        .chunks(per_server)
        .enumerate()
        .map(|(server, chunk)| {
            let mut ix = chunk.to_vec();
            ix.sort_unstable();
            (server, ServerRequest::FetchIndices(ix))
        })
        .collect())
}

pub fn gen_direct<R: Rng + ?Sized>(q: usize, p: usize, params: &SystemParams, rng: &mut R) -> Result<QueryPlan> {
    gen_direct_with(q, p, params, PopOrder::default(), rng)
}

pub fn gen_direct_with<R: Rng + ?Sized>(
    q: usize,
    p: usize,
    params: &SystemParams,
    order: PopOrder,
    rng: &mut R,
) -> Result<QueryPlan> {
    Ok(QueryPlan {
        mechanism: MechanismParams::Direct { p },
        transport: Transport::Direct,
        dispatches: partitioned_dispatches(q, p, params, order, rng)?,
        target: q,
        reconstruction: Reconstruction::PickIndex(q),
    })
}

pub fn gen_bundled_anon<R: Rng + ?Sized>(q: usize, p: usize, params: &SystemParams, rng: &mut R) -> Result<QueryPlan> {
    gen_bundled_anon_with(q, p, params, PopOrder::default(), rng)
}

pub fn gen_bundled_anon_with<R: Rng + ?Sized>(
    q: usize,
    p: usize,
    params: &SystemParams,
    order: PopOrder,
    rng: &mut R,
) -> Result<QueryPlan> {
    Ok(QueryPlan {
        mechanism: MechanismParams::BundledAnon { p },
        transport: Transport::AnonBundle,
        dispatches: partitioned_dispatches(q, p, params, order, rng)?,
        target: q,
        reconstruction: Reconstruction::PickIndex(q),
    })
}

/// Every index becomes its own anonymous message to an independently,
/// uniformly chosen server.
pub fn gen_separated_anon<R: Rng + ?Sized>(
    q: usize,
    p: usize,
    params: &SystemParams,
    rng: &mut R,
) -> Result<QueryPlan> {
    check_target(q, params.n)?;
    check_partitioned(p, params)?;
    let mut set = draw_request_set(q, p, params.n, rng)?;
    set.sort_unstable();
    let mut dispatches = Vec::with_capacity(p);
    for r in set {
        let server = sample_uniform_index(rng, params.d)?;
        dispatches.push((server, ServerRequest::FetchIndices(vec![r])));
    }
    Ok(QueryPlan {
        mechanism: MechanismParams::SeparatedAnon { p },
        transport: Transport::AnonSeparate,
        dispatches,
        target: q,
        reconstruction: Reconstruction::PickIndex(q),
    })
}

/// Samples columns of a sparse request matrix: `d` Bernoulli(theta) trials
/// conditioned on the parity of their sum.
#[derive(Clone, Debug)]
pub struct SparseColumnSampler {
    d: usize,
    strategy: SparseSampler,
    bernoulli: Bernoulli,
    even_cdf: Vec<f64>,
    odd_cdf: Vec<f64>,
}

impl SparseColumnSampler {
    pub fn new(d: usize, theta: f64, strategy: SparseSampler) -> Result<Self> {
        check_theta(theta)?;
        if d == 0 {
            return param_err("a column needs at least one row");
        }
        let bernoulli = Bernoulli::new(theta).map_err(|e| Error::Parameter(e.to_string()))?;
        let cdf = |odd| {
            let mut acc = 0.0;
            conditioned_weights(d, theta, odd)
                .into_iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect()
        };
        Ok(Self { d, strategy, bernoulli, even_cdf: cdf(false), odd_cdf: cdf(true) })
    }

    pub fn rows(&self) -> usize {
        self.d
    }

    /// Fills `column` (length `d`) with a sample of the requested parity.
    pub fn sample<R: Rng + ?Sized>(&self, odd: bool, column: &mut [bool], rng: &mut R) -> Result<()> {
        debug_assert_eq!(column.len(), self.d);
        match self.strategy {
            SparseSampler::Rejection => {
                for _ in 0..REJECTION_CAP {
                    let mut parity = false;
                    for bit in column.iter_mut() {
                        *bit = self.bernoulli.sample(rng);
                        parity ^= *bit;
                    }
                    if parity == odd {
                        return Ok(());
                    }
                }
                Err(Error::Parameter(format!(
                    "rejection sampler exceeded {REJECTION_CAP} attempts"
                )))
            }
            SparseSampler::WeightFirst => {
                let cdf = if odd { &self.odd_cdf } else { &self.even_cdf };
                let u: f64 = rng.gen();
                let mut weight = cdf.partition_point(|&c| c <= u).min(self.d);
                // Guard against the CDF's last entry rounding below 1.
                if (weight % 2 == 1) != odd {
                    weight = if weight == 0 { 1 } else { weight - 1 };
                }
                column.fill(false);
                for row in index::sample(rng, self.d, weight) {
                    column[row] = true;
                }
                Ok(())
            }
        }
    }
}

pub fn gen_sparse<R: Rng + ?Sized>(q: usize, theta: f64, params: &SystemParams, rng: &mut R) -> Result<QueryPlan> {
    gen_sparse_with(q, theta, params, SparseSampler::default(), rng)
}

pub fn gen_sparse_with<R: Rng + ?Sized>(
    q: usize,
    theta: f64,
    params: &SystemParams,
    strategy: SparseSampler,
    rng: &mut R,
) -> Result<QueryPlan> {
    let rows = sparse_rows(q, theta, params, strategy, rng)?;
    Ok(QueryPlan {
        mechanism: MechanismParams::Sparse { theta },
        transport: Transport::Direct,
        dispatches: rows.into_iter().enumerate().map(|(i, r)| (i, ServerRequest::XorSelect(r))).collect(),
        target: q,
        reconstruction: Reconstruction::XorAll,
    })
}

pub fn gen_anon_sparse<R: Rng + ?Sized>(
    q: usize,
    theta: f64,
    params: &SystemParams,
    strategy: SparseSampler,
    rng: &mut R,
) -> Result<QueryPlan> {
    let mut plan = gen_sparse_with(q, theta, params, strategy, rng)?;
    plan.mechanism = MechanismParams::AnonSparse { theta };
    plan.transport = Transport::AnonBundle;
    Ok(plan)
}

/// The `d x n` matrix built column by column, returned as its rows.
fn sparse_rows<R: Rng + ?Sized>(
    q: usize,
    theta: f64,
    params: &SystemParams,
    strategy: SparseSampler,
    rng: &mut R,
) -> Result<Vec<BitVector>> {
    check_target(q, params.n)?;
    if params.d < 2 {
        return param_err("sparse requests need at least two servers");
    }
    let sampler = SparseColumnSampler::new(params.d, theta, strategy)?;
    let mut rows = vec![BitVector::zeros(params.n); params.d];
    let mut column = vec![false; params.d];
    for col in 0..params.n {
        sampler.sample(col == q, &mut column, rng)?;
        for (row, &bit) in rows.iter_mut().zip(&column) {
            if bit {
                row.set(col, true);
            }
        }
    }
    Ok(rows)
}

pub fn gen_subset<R: Rng + ?Sized>(q: usize, t: usize, params: &SystemParams, rng: &mut R) -> Result<QueryPlan> {
    check_target(q, params.n)?;
    check_subset(t, params.d)?;
    let mut vectors: Vec<BitVector> = (0..t - 1).map(|_| BitVector::random(params.n, rng)).collect();
    let mut last = BitVector::unit(params.n, q);
    for v in &vectors {
        last.xor_assign(v)?;
    }
    vectors.push(last);

    let mut servers: Vec<ServerId> = Vec::with_capacity(t);
    while servers.len() < t {
        let s = sample_uniform_index(rng, params.d)?;
        if !servers.contains(&s) {
            servers.push(s);
        }
    }
    Ok(QueryPlan {
        mechanism: MechanismParams::Subset { t },
        transport: Transport::Direct,
        dispatches: servers.into_iter().zip(vectors.into_iter().map(ServerRequest::XorSelect)).collect(),
        target: q,
        reconstruction: Reconstruction::XorAll,
    })
}

pub fn gen_chor<R: Rng + ?Sized>(q: usize, params: &SystemParams, rng: &mut R) -> Result<QueryPlan> {
    if params.d < 2 {
        return param_err("Chor's scheme needs at least two servers");
    }
    let mut plan = gen_subset(q, params.d, params, rng)?;
    plan.mechanism = MechanismParams::Chor;
    Ok(plan)
}

/// Builds the plan for any mechanism.
pub fn generate<R: Rng + ?Sized>(
    mechanism: &MechanismParams,
    q: usize,
    params: &SystemParams,
    options: &GenOptions,
    rng: &mut R,
) -> Result<QueryPlan> {
    match *mechanism {
        MechanismParams::NaiveDummy { p } => gen_naive_dummy(q, p, params.n, rng),
        MechanismParams::NaiveAnon => gen_naive_anon(q, params.n),
        MechanismParams::Direct { p } => gen_direct_with(q, p, params, options.pop_order, rng),
        MechanismParams::BundledAnon { p } => gen_bundled_anon_with(q, p, params, options.pop_order, rng),
        MechanismParams::SeparatedAnon { p } => gen_separated_anon(q, p, params, rng),
        MechanismParams::Sparse { theta } => gen_sparse_with(q, theta, params, options.sparse_sampler, rng),
        MechanismParams::AnonSparse { theta } => {
            gen_anon_sparse(q, theta, params, options.sparse_sampler, rng)
        }
        MechanismParams::Subset { t } => gen_subset(q, t, params, rng),
        MechanismParams::Chor => gen_chor(q, params, rng),
    }
}

/// Recovers the target record from one response per dispatched request,
/// given in dispatch order.
pub fn reconstruct(plan: &QueryPlan, responses: &[ServerResponse]) -> Result<Record> {
    if responses.len() != plan.dispatches.len() {
        return Err(Error::Reconstruction(format!(
            "expected {} responses, got {}",
            plan.dispatches.len(),
            responses.len()
        )));
    }
    match plan.reconstruction {
        Reconstruction::PickIndex(q) => {
            let mut found = None;
            for ((server, req), resp) in plan.dispatches.iter().zip(responses) {
                let (ServerRequest::FetchIndices(asked), ServerResponse::Records(got)) = (req, resp) else {
                    return Err(Error::Reconstruction(format!(
                        "server {server} answered a fetch with the wrong response kind"
                    )));
                };
                if asked.len() != got.len() || asked.iter().zip(got).any(|(a, (g, _))| a != g) {
                    return Err(Error::Reconstruction(format!(
                        "server {server} returned records that do not match the request"
                    )));
                }
                if let Some((_, rec)) = got.iter().find(|(i, _)| *i == q) {
                    found.get_or_insert_with(|| rec.clone());
                }
            }
            found.ok_or_else(|| Error::Reconstruction(format!("record {q} missing from responses")))
        }
        Reconstruction::XorAll => {
            let mut acc: Option<Record> = None;
            for ((server, _), resp) in plan.dispatches.iter().zip(responses) {
                let ServerResponse::XorBlock(block) = resp else {
                    return Err(Error::Reconstruction(format!(
                        "server {server} answered a selector with the wrong response kind"
                    )));
                };
                match acc.as_mut() {
                    None => acc = Some(block.clone()),
                    Some(a) => a
                        .xor_assign(block.as_bytes())
                        .map_err(|e| Error::Reconstruction(e.to_string()))?,
                }
            }
            acc.ok_or_else(|| Error::Reconstruction("no responses to combine".into()))
        }
    }
}
