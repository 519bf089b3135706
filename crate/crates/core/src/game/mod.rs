//! The adversary's distinguishing game.
//!
//! The adversary hands the target user two queries `q_i`, `q_j` and every
//! other user the query `q_0`, then watches the corrupt servers. A mechanism
//! is epsilon-private when no observation is more than `e^epsilon` times as
//! likely under one of the target's queries as under the other.
//!
//! Trials are reduced to a per-mechanism statistic before tallying. Within a
//! bundle or a single user's requests the likelihood of a view depends only on
//! that statistic, so the reduction loses nothing for the ratio.

pub mod composition;
pub mod oracle;
mod report;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::anonymity::{AnonBatch, Destination, SlotId};
use crate::error::{param_err, Result};
use crate::exec::Execution;
use crate::mechanisms::{generate, GenOptions, MechanismParams, ServerRequest, Transport};
use crate::params::{ServerId, SystemParams, UserId};
use crate::rng::RngStream;

pub use report::{ArmPair, LikelihoodReport};

/// Which of its two queries the target runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    #[default]
    Qi,
    Qj,
}

impl Arm {
    fn lane(self) -> u32 {
        match self {
            Arm::Qi => 0,
            Arm::Qj => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameConfig {
    pub mechanism: MechanismParams,
    pub params: SystemParams,
    pub q_i: usize,
    pub q_j: usize,
    pub q_0: usize,
    pub target_choice: Arm,
    pub trials: usize,
    /// Sorted, distinct, `d_a` entries.
    pub corrupt_set: Vec<ServerId>,
    pub options: GenOptions,
}

impl GameConfig {
    /// Queries `q_i = 0`, `q_j = 1`, `q_0 = 2` (or `0` when `n = 2`), servers
    /// `0..d_a` corrupt, `10^5` trials.
    pub fn new(mechanism: MechanismParams, params: SystemParams) -> Result<Self> {
        let cfg = Self {
            mechanism,
            params,
            q_i: 0,
            q_j: 1,
            q_0: if params.n > 2 { 2 } else { 0 },
            target_choice: Arm::Qi,
            trials: 100_000,
            corrupt_set: (0..params.d_a).collect(),
            options: GenOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_queries(mut self, q_i: usize, q_j: usize, q_0: usize) -> Result<Self> {
        (self.q_i, self.q_j, self.q_0) = (q_i, q_j, q_0);
        self.validate()?;
        Ok(self)
    }

    pub fn with_corrupt_set(mut self, mut corrupt: Vec<ServerId>) -> Result<Self> {
        corrupt.sort_unstable();
        self.corrupt_set = corrupt;
        self.validate()?;
        Ok(self)
    }

    pub fn with_arm(mut self, arm: Arm) -> Self {
        self.target_choice = arm;
        self
    }

    pub fn with_options(mut self, options: GenOptions) -> Self {
        self.options = options;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.mechanism.validate(&self.params)?;
        let n = self.params.n;
        if self.q_i >= n || self.q_j >= n || self.q_0 >= n {
            return param_err(format!("game queries must lie in [0, {n})"));
        }
        if self.q_i == self.q_j {
            return param_err("q_i and q_j must differ");
        }
        if self.trials == 0 {
            return param_err("need at least one trial");
        }
        if self.corrupt_set.len() != self.params.d_a {
            return param_err(format!(
                "corrupt set has {} servers, d_a = {}",
                self.corrupt_set.len(),
                self.params.d_a
            ));
        }
        if self.corrupt_set.windows(2).any(|w| w[0] >= w[1]) {
            return param_err("corrupt set must be sorted and distinct");
        }
        if self.corrupt_set.last().is_some_and(|&s| s >= self.params.d) {
            return param_err("corrupt set names a server that does not exist");
        }
        Ok(())
    }

    pub fn target_query(&self) -> usize {
        match self.target_choice {
            Arm::Qi => self.q_i,
            Arm::Qj => self.q_j,
        }
    }

    pub(crate) fn corrupt_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.d];
        for &s in &self.corrupt_set {
            mask[s] = true;
        }
        mask
    }
}

/// Who a view is attributed to. Direct channels reveal the user; anonymous
/// ones only the delivery slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sender {
    User(UserId),
    Slot(SlotId),
}

/// Requests that reached corrupt servers from one sender, kept together
/// exactly as far as the mechanism links them.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub sender: Sender,
    pub requests: Vec<(ServerId, ServerRequest)>,
}

/// Everything the adversary sees in one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTrace {
    pub corrupt_views: Vec<View>,
    /// Message count per honest server.
    pub honest_meta: Vec<(ServerId, usize)>,
    /// Number of messages mixed by the anonymity system (0 if unused).
    pub as_meta: usize,
}

/// One round: the target runs its chosen query, the other `u - 1` users run
/// `q_0`, and the adversary's view is returned.
pub fn run_trial<R: Rng + ?Sized>(cfg: &GameConfig, rng: &mut R) -> Result<ObservationTrace> {
    let params = &cfg.params;
    let corrupt = cfg.corrupt_mask();
    let mut plans = Vec::with_capacity(params.u);
    for user in 0..params.u {
        let q = if user == 0 { cfg.target_query() } else { cfg.q_0 };
        plans.push(generate(&cfg.mechanism, q, params, &cfg.options, rng)?);
    }

    let mut honest = vec![0usize; params.d];
    let mut views = Vec::new();
    let mut as_meta = 0;
    let split = |sender, dispatches: Vec<(ServerId, ServerRequest)>, honest: &mut [usize]| {
        let mut seen = Vec::new();
        for (s, req) in dispatches {
            if corrupt[s] {
                seen.push((s, req));
            } else {
                honest[s] += 1;
            }
        }
        View { sender, requests: seen }
    };

    match cfg.mechanism.transport() {
        Transport::Direct => {
            for (user, plan) in plans.into_iter().enumerate() {
                views.push(split(Sender::User(user), plan.dispatches, &mut honest));
            }
        }
        Transport::AnonBundle => {
            let mut batch = AnonBatch::new();
            for (user, plan) in plans.into_iter().enumerate() {
                batch.push(user, Destination::Fanout, plan.dispatches);
            }
            as_meta = batch.len();
            for d in batch.mix(rng)?.into_delivered().0 {
                let view = split(Sender::Slot(d.slot), d.payload, &mut honest);
                if !view.requests.is_empty() {
                    views.push(view);
                }
            }
        }
        Transport::AnonSeparate => {
            let mut batch = AnonBatch::new();
            for (user, plan) in plans.into_iter().enumerate() {
                for (s, req) in plan.dispatches {
                    batch.push(user, Destination::Server(s), req);
                }
            }
            as_meta = batch.len();
            for d in batch.mix(rng)?.into_delivered().0 {
                let Destination::Server(s) = d.destination else { unreachable!() };
                let view = split(Sender::Slot(d.slot), vec![(s, d.payload)], &mut honest);
                if !view.requests.is_empty() {
                    views.push(view);
                }
            }
        }
    }

    let honest_meta = honest
        .into_iter()
        .enumerate()
        .filter(|(s, _)| !corrupt[*s])
        .collect();
    Ok(ObservationTrace { corrupt_views: views, honest_meta, as_meta })
}

/// Reduced observation used to tally trials.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Statistic {
    /// Whether `q_i` / `q_j` appear among the target's corrupt-side indices.
    Seen { qi: bool, qj: bool },
    /// Parity of the target's corrupt sub-columns `q_i` and `q_j`.
    Parity { oi: bool, oj: bool },
    /// Whether every contacted server is corrupt, and the parity of the
    /// corrupt vectors at `q_i` and `q_j`.
    Subset { all_corrupt: bool, parity_i: bool, parity_j: bool },
    /// Sorted multiset of indices seen at corrupt servers.
    Indices(Vec<usize>),
    /// Counts of per-slot observation types.
    Composite(Vec<u32>),
    /// An unreduced observation, flattened.
    Full(Vec<u64>),
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = |x: &bool| *x as u8;
        match self {
            Statistic::Seen { qi, qj } => write!(f, "seen(i={},j={})", b(qi), b(qj)),
            Statistic::Parity { oi, oj } => write!(f, "parity(i={},j={})", b(oi), b(oj)),
            Statistic::Subset { all_corrupt, parity_i, parity_j } => {
                write!(f, "subset(all={},i={},j={})", b(all_corrupt), b(parity_i), b(parity_j))
            }
            Statistic::Indices(ix) => write!(f, "indices{ix:?}"),
            Statistic::Composite(c) => write!(f, "types{c:?}"),
            Statistic::Full(v) => write!(f, "full{v:?}"),
        }
    }
}

fn fetched(requests: &[(ServerId, ServerRequest)]) -> impl Iterator<Item = usize> + '_ {
    requests.iter().flat_map(|(_, r)| match r {
        ServerRequest::FetchIndices(ix) => ix.as_slice(),
        ServerRequest::XorSelect(_) => &[],
    })
    .copied()
}

fn column_parity(requests: &[(ServerId, ServerRequest)], col: usize) -> bool {
    requests.iter().fold(false, |acc, (_, r)| match r {
        ServerRequest::XorSelect(v) => acc ^ v.get(col),
        ServerRequest::FetchIndices(_) => acc,
    })
}

fn type_index(bits: [bool; 3]) -> usize {
    bits.iter().enumerate().map(|(k, &b)| (b as usize) << k).sum()
}

/// Reduces a trace to the statistic tallied for `cfg.mechanism`.
pub fn observation_statistic(trace: &ObservationTrace, cfg: &GameConfig) -> Statistic {
    let target = || {
        trace
            .corrupt_views
            .iter()
            .find(|v| v.sender == Sender::User(0))
            .map(|v| v.requests.as_slice())
            .unwrap_or(&[])
    };
    let (qi, qj, q0) = (cfg.q_i, cfg.q_j, cfg.q_0);
    match cfg.mechanism {
        MechanismParams::NaiveDummy { .. } | MechanismParams::Direct { .. } => {
            let seen = target();
            Statistic::Seen { qi: fetched(seen).any(|x| x == qi), qj: fetched(seen).any(|x| x == qj) }
        }
        MechanismParams::Sparse { .. } => {
            let seen = target();
            Statistic::Parity { oi: column_parity(seen, qi), oj: column_parity(seen, qj) }
        }
        MechanismParams::Subset { .. } | MechanismParams::Chor => {
            let t = match cfg.mechanism {
                MechanismParams::Subset { t } => t,
                _ => cfg.params.d,
            };
            let seen = target();
            Statistic::Subset {
                all_corrupt: seen.len() == t,
                parity_i: column_parity(seen, qi),
                parity_j: column_parity(seen, qj),
            }
        }
        MechanismParams::NaiveAnon => {
            let mut all: Vec<usize> = trace.corrupt_views.iter().flat_map(|v| fetched(&v.requests)).collect();
            all.sort_unstable();
            Statistic::Indices(all)
        }
        MechanismParams::BundledAnon { .. } => {
            let mut counts = vec![0u32; 8];
            for v in &trace.corrupt_views {
                let has = |q| fetched(&v.requests).any(|x| x == q);
                counts[type_index([has(qi), has(qj), has(q0)])] += 1;
            }
            Statistic::Composite(counts)
        }
        MechanismParams::SeparatedAnon { .. } => {
            let mut counts = vec![0u32; 4];
            for x in trace.corrupt_views.iter().flat_map(|v| fetched(&v.requests)) {
                counts[0] += (x == qi) as u32;
                counts[1] += (x == qj) as u32;
                counts[2] += (x == q0) as u32;
                counts[3] += 1;
            }
            Statistic::Composite(counts)
        }
        MechanismParams::AnonSparse { .. } => {
            let mut counts = vec![0u32; 8];
            for v in &trace.corrupt_views {
                let p = |q| column_parity(&v.requests, q);
                counts[type_index([p(qi), p(qj), p(q0)])] += 1;
            }
            Statistic::Composite(counts)
        }
    }
}

type Tally = BTreeMap<Statistic, u64>;

fn merge_tallies(mut a: Tally, b: Tally) -> Tally {
    for (k, v) in b {
        *a.entry(k).or_default() += v;
    }
    a
}

/// Tallies the statistic over `trials` independent rounds of one arm.
/// Trial `t` of arm `a` draws from stream `(seed, lane a, index t)`.
pub fn tally_arm(cfg: &GameConfig, arm: Arm, trials: usize, seed: u64, exec: Execution) -> Result<BTreeMap<Statistic, u64>> {
    let cfg = cfg.clone().with_arm(arm);
    cfg.validate()?;
    exec.try_fold(
        trials,
        Tally::new,
        |acc, t| {
            let mut rng = RngStream::lane(seed, arm.lane(), t as u64);
            let trace = run_trial(&cfg, &mut rng)?;
            *acc.entry(observation_statistic(&trace, &cfg)).or_default() += 1;
            Ok(())
        },
        merge_tallies,
    )
}

/// Runs both arms and estimates the worst-case likelihood ratio.
pub fn monte_carlo_estimate(
    cfg: &GameConfig,
    trials_per_arm: usize,
    seed: u64,
    exec: Execution,
) -> Result<LikelihoodReport> {
    if trials_per_arm < 1000 {
        return param_err(format!("need at least 1000 trials per arm, got {trials_per_arm}"));
    }
    let a = tally_arm(cfg, Arm::Qi, trials_per_arm, seed, exec)?;
    let b = tally_arm(cfg, Arm::Qj, trials_per_arm, seed, exec)?;
    Ok(LikelihoodReport::from_counts(&a, &b, trials_per_arm as u64))
}

/// Frequency of an event over independent trials, with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyEstimate {
    pub estimate: f64,
    pub sigma: f64,
    pub trials: u64,
}

impl FrequencyEstimate {
    fn from_hits(hits: u64, trials: u64) -> Self {
        let p = hits as f64 / trials as f64;
        Self { estimate: p, sigma: (p * (1.0 - p) / trials as f64).sqrt(), trials }
    }

    /// Standard error at the hypothesised probability `p`.
    pub fn sigma_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Frequency with which a subset query contacts only corrupt servers.
pub fn subset_delta_estimate(cfg: &GameConfig, trials: usize, seed: u64, exec: Execution) -> Result<FrequencyEstimate> {
    if !matches!(cfg.mechanism, MechanismParams::Subset { .. } | MechanismParams::Chor) {
        return param_err("delta estimation needs the subset mechanism");
    }
    let tally = tally_arm(cfg, cfg.target_choice, trials, seed, exec)?;
    let hits = tally
        .iter()
        .filter(|(s, _)| matches!(s, Statistic::Subset { all_corrupt: true, .. }))
        .map(|(_, c)| c)
        .sum();
    Ok(FrequencyEstimate::from_hits(hits, trials as u64))
}

/// Naive dummy requests composed with the anonymity system, observed at the
/// single corrupt server.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NaiveCompositionEstimate {
    /// Every one of the `u` requests contains `q_i` (target runs `q_i`).
    pub all_qi: FrequencyEstimate,
    /// None of the `u` requests contains `q_i` (target runs `q_j`).
    pub no_qi: FrequencyEstimate,
}

pub fn naive_composition_estimate(
    n: usize,
    p: usize,
    u: usize,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<NaiveCompositionEstimate> {
    if n < 3 {
        return param_err("need n >= 3 for distinct q_i, q_j, q_0");
    }
    let params = SystemParams::new(n, 1, 1, u, 8)?;
    let cfg = GameConfig::new(MechanismParams::NaiveDummy { p }, params)?;
    let count_qi = |arm: Arm, want: usize| -> Result<u64> {
        let cfg = cfg.clone().with_arm(arm);
        exec.try_fold(
            trials,
            || 0u64,
            |hits, t| {
                let mut rng = RngStream::lane(seed, 2 + arm.lane(), t as u64);
                let mut batch = AnonBatch::new();
                for user in 0..u {
                    let q = if user == 0 { cfg.target_query() } else { cfg.q_0 };
                    let plan = generate(&cfg.mechanism, q, &params, &cfg.options, &mut rng)?;
                    batch.push(user, Destination::Server(0), plan.requested_indices());
                }
                let with_qi = batch
                    .mix(&mut rng)?
                    .delivered()
                    .iter()
                    .filter(|d| d.payload.contains(&cfg.q_i))
                    .count();
                *hits += (with_qi == want) as u64;
                Ok(())
            },
            |a, b| a + b,
        )
    };
    let all = count_qi(Arm::Qi, u)?;
    let none = count_qi(Arm::Qj, 0)?;
    Ok(NaiveCompositionEstimate {
        all_qi: FrequencyEstimate::from_hits(all, trials as u64),
        no_qi: FrequencyEstimate::from_hits(none, trials as u64),
    })
}
