//! Exact observation distributions by enumerating all mechanism randomness.
//!
//! Only small instances are accepted: every enumeration is checked against
//! [`ORACLE_BUDGET`] before it starts.

use std::collections::BTreeMap;

use super::{Arm, GameConfig, LikelihoodReport, Statistic};
use crate::error::{param_err, Error, Result};
use crate::mechanisms::{MechanismParams, PopOrder};

/// Maximum number of enumerated outcomes per arm.
pub const ORACLE_BUDGET: u128 = 1 << 24;

/// Whether observations are reduced to the tallied statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Detail {
    Reduced,
    Full,
}

type Dist = BTreeMap<Statistic, f64>;

/// Exact likelihood report on the reduced statistic.
pub fn exact_oracle(cfg: &GameConfig) -> Result<LikelihoodReport> {
    report(cfg, Detail::Reduced)
}

/// Exact likelihood report on unreduced observations. Available for the
/// single-user mechanisms whose views are enumerable directly.
pub fn exact_oracle_full(cfg: &GameConfig) -> Result<LikelihoodReport> {
    report(cfg, Detail::Full)
}

fn report(cfg: &GameConfig, detail: Detail) -> Result<LikelihoodReport> {
    cfg.validate()?;
    let a = observation_distribution(cfg, Arm::Qi, detail)?;
    let b = observation_distribution(cfg, Arm::Qj, detail)?;
    Ok(LikelihoodReport::from_probabilities(&a, &b))
}

/// `P(observation | target runs arm)` for every reachable observation.
pub fn observation_distribution(cfg: &GameConfig, arm: Arm, detail: Detail) -> Result<Dist> {
    let cfg = cfg.clone().with_arm(arm);
    let q = cfg.target_query();
    let corrupt = cfg.corrupt_mask();
    match cfg.mechanism {
        MechanismParams::NaiveDummy { p } => {
            let mut dist = Dist::new();
            enumerate_fetch(cfg.params.n, q, p, 1, PopOrder::Ascending, |groups, w| {
                let view: &[usize] = if corrupt[0] { &groups[0] } else { &[] };
                *dist.entry(fetch_statistic(&cfg, &[view], detail)).or_default() += w;
            })?;
            Ok(dist)
        }
        MechanismParams::Direct { p } => {
            let mut dist = Dist::new();
            enumerate_fetch(cfg.params.n, q, p, cfg.params.d, cfg.options.pop_order, |groups, w| {
                let views: Vec<&[usize]> =
                    groups.iter().enumerate().map(|(s, g)| if corrupt[s] { g.as_slice() } else { &[] }).collect();
                *dist.entry(fetch_statistic(&cfg, &views, detail)).or_default() += w;
            })?;
            Ok(dist)
        }
        MechanismParams::NaiveAnon => {
            let mut seen = Vec::new();
            if corrupt[0] {
                seen.push(q);
                seen.extend(std::iter::repeat_n(cfg.q_0, cfg.params.u - 1));
                seen.sort_unstable();
            }
            Ok(Dist::from([(Statistic::Indices(seen), 1.0)]))
        }
        MechanismParams::Sparse { theta } => sparse_distribution(&cfg, theta, detail),
        MechanismParams::Subset { t } => subset_distribution(&cfg, t, detail),
        MechanismParams::Chor => subset_distribution(&cfg, cfg.params.d, detail),
        MechanismParams::BundledAnon { .. } | MechanismParams::AnonSparse { .. } => {
            if detail == Detail::Full {
                return Err(Error::Unsupported(
                    "composed mechanisms are enumerated on per-slot types only".into(),
                ));
            }
            composed_distribution(&cfg)
        }
        MechanismParams::SeparatedAnon { .. } => Err(Error::Unsupported(
            "no exact oracle for separated anonymous requests".into(),
        )),
    }
}

fn fetch_statistic(cfg: &GameConfig, views: &[&[usize]], detail: Detail) -> Statistic {
    match detail {
        Detail::Reduced => {
            let has = |q| views.iter().any(|v| v.contains(&q));
            Statistic::Seen { qi: has(cfg.q_i), qj: has(cfg.q_j) }
        }
        Detail::Full => {
            let mut flat = Vec::new();
            for (s, v) in views.iter().enumerate() {
                if !v.is_empty() {
                    flat.push(s as u64);
                    flat.extend(v.iter().map(|&x| x as u64));
                    flat.push(u64::MAX);
                }
            }
            Statistic::Full(flat)
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn check_budget(outcomes: Option<u128>, what: &str) -> Result<u128> {
    match outcomes {
        Some(c) if c <= ORACLE_BUDGET => Ok(c),
        _ => Err(Error::Size(format!(
            "{what} needs more than {ORACLE_BUDGET} outcomes; shrink n, p, d or t"
        ))),
    }
}

fn for_each_combination(pool: &[usize], k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..=pool.len() - (k - cur.len()) {
            cur.push(pool[i]);
            rec(pool, k, i + 1, cur, f);
            cur.pop();
        }
    }
    rec(pool, k, 0, &mut Vec::with_capacity(k), f);
}

/// Every assignment of the sorted `set` to `groups.len()` servers holding
/// `per` indices each.
fn for_each_partition(set: &[usize], groups: &mut Vec<Vec<usize>>, per: usize, f: &mut impl FnMut(&[Vec<usize>])) {
    fn rec(set: &[usize], i: usize, groups: &mut Vec<Vec<usize>>, per: usize, f: &mut impl FnMut(&[Vec<usize>])) {
        if i == set.len() {
            f(groups);
            return;
        }
        for s in 0..groups.len() {
            if groups[s].len() < per {
                groups[s].push(set[i]);
                rec(set, i + 1, groups, per, f);
                groups[s].pop();
            }
        }
    }
    rec(set, 0, groups, per, f);
}

/// Enumerates the dummy sets and server assignments of the fetch-based
/// mechanisms, calling `emit(groups, probability)`.
fn enumerate_fetch(
    n: usize,
    q: usize,
    p: usize,
    servers: usize,
    order: PopOrder,
    mut emit: impl FnMut(&[Vec<usize>], f64),
) -> Result<()> {
    let per = p / servers;
    let sets = binomial(n - 1, p - 1);
    let assignments = match order {
        PopOrder::Ascending => 1,
        // p! / (per!)^servers
        PopOrder::Shuffled => (0..servers).fold(1u128, |acc, s| acc * binomial(p - s * per, per)),
    };
    let total = check_budget(sets.checked_mul(assignments), "fetch enumeration")?;
    let w = 1.0 / total as f64;
    let pool: Vec<usize> = (0..n).filter(|&x| x != q).collect();
    let mut groups = vec![Vec::with_capacity(per); servers];
    for_each_combination(&pool, p - 1, &mut |combo| {
        let mut set = combo.to_vec();
        set.push(q);
        set.sort_unstable();
        match order {
            PopOrder::Ascending => {
                let chunks: Vec<Vec<usize>> = set.chunks(per).map(<[usize]>::to_vec).collect();
                emit(&chunks, w);
            }
            PopOrder::Shuffled => for_each_partition(&set, &mut groups, per, &mut |g| emit(g, w)),
        }
    });
    Ok(())
}

fn column_probability(bits: u64, d: usize, theta: f64, odd: bool) -> f64 {
    let w = bits.count_ones() as i32;
    if (w % 2 == 1) != odd {
        return 0.0;
    }
    let even = 0.5 + 0.5 * (1.0 - 2.0 * theta).powi(d as i32);
    let parity_mass = if odd { 1.0 - even } else { even };
    theta.powi(w) * (1.0 - theta).powi(d as i32 - w) / parity_mass
}

fn corrupt_bits(cfg: &GameConfig) -> u64 {
    cfg.corrupt_set.iter().fold(0, |m, &s| m | 1 << s)
}

fn sparse_distribution(cfg: &GameConfig, theta: f64, detail: Detail) -> Result<Dist> {
    let d = cfg.params.d;
    check_budget(1u128.checked_shl(2 * d as u32), "sparse enumeration")?;
    let cmask = corrupt_bits(cfg);
    let target_is_i = cfg.target_query() == cfg.q_i;
    let mut dist = Dist::new();
    for a in 0..1u64 << d {
        let pa = column_probability(a, d, theta, target_is_i);
        if pa == 0.0 {
            continue;
        }
        for b in 0..1u64 << d {
            let pb = column_probability(b, d, theta, !target_is_i);
            if pb == 0.0 {
                continue;
            }
            let (va, vb) = (a & cmask, b & cmask);
            let stat = match detail {
                Detail::Full => Statistic::Full(vec![va, vb]),
                Detail::Reduced => Statistic::Parity { oi: va.count_ones() % 2 == 1, oj: vb.count_ones() % 2 == 1 },
            };
            *dist.entry(stat).or_default() += pa * pb;
        }
    }
    Ok(dist)
}

fn subset_distribution(cfg: &GameConfig, t: usize, detail: Detail) -> Result<Dist> {
    let (n, d) = (cfg.params.n, cfg.params.d);
    if n > 64 {
        return Err(Error::Size("subset enumeration needs n <= 64".into()));
    }
    let orderings = (0..t).map(|i| (d - i) as u128).product::<u128>();
    let free_bits = n * (t - 1);
    let vectors = 1u128.checked_shl(free_bits as u32).filter(|_| free_bits < 128);
    let total = check_budget(vectors.and_then(|v| v.checked_mul(orderings)), "subset enumeration")?;
    let w = 1.0 / total as f64;
    let corrupt = cfg.corrupt_mask();
    let q = cfg.target_query();
    let lane = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };

    let mut sequences = Vec::new();
    let mut cur = Vec::with_capacity(t);
    fn servers(d: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            out.push(cur.clone());
            return;
        }
        for s in 0..d {
            if !cur.contains(&s) {
                cur.push(s);
                servers(d, t, cur, out);
                cur.pop();
            }
        }
    }
    servers(d, t, &mut cur, &mut sequences);

    let mut dist = Dist::new();
    let mut vecs = vec![0u64; t];
    for code in 0..(1u128 << free_bits) {
        let mut acc = 1u64 << q;
        for (k, v) in vecs.iter_mut().take(t - 1).enumerate() {
            *v = (code >> (k * n)) as u64 & lane;
            acc ^= *v;
        }
        vecs[t - 1] = acc;
        for seq in &sequences {
            let mut seen: Vec<(usize, u64)> =
                seq.iter().zip(&vecs).filter(|(s, _)| corrupt[**s]).map(|(&s, &v)| (s, v)).collect();
            let stat = match detail {
                Detail::Full => {
                    seen.sort_unstable();
                    Statistic::Full(seen.into_iter().flat_map(|(s, v)| [s as u64, v]).collect())
                }
                Detail::Reduced => {
                    let x = seen.iter().fold(0u64, |m, (_, v)| m ^ v);
                    Statistic::Subset {
                        all_corrupt: seen.len() == t,
                        parity_i: x >> cfg.q_i & 1 == 1,
                        parity_j: x >> cfg.q_j & 1 == 1,
                    }
                }
            };
            *dist.entry(stat).or_default() += w;
        }
    }
    Ok(dist)
}

/// Distribution of one bundle's type (membership or parity of `q_i`, `q_j`,
/// `q_0` in its corrupt part) when its sender queries `q`.
fn slot_types(cfg: &GameConfig, q: usize) -> Result<[f64; 8]> {
    let corrupt = cfg.corrupt_mask();
    let keys = [cfg.q_i, cfg.q_j, cfg.q_0];
    let mut pi = [0.0; 8];
    match cfg.mechanism {
        MechanismParams::BundledAnon { p } => {
            enumerate_fetch(cfg.params.n, q, p, cfg.params.d, cfg.options.pop_order, |groups, w| {
                let has = |x| groups.iter().enumerate().any(|(s, g)| corrupt[s] && g.contains(&x));
                let ty: usize = keys.iter().enumerate().map(|(k, &x)| (has(x) as usize) << k).sum();
                pi[ty] += w;
            })?;
        }
        MechanismParams::AnonSparse { theta } => {
            let d = cfg.params.d;
            check_budget(1u128.checked_shl(d as u32), "column enumeration")?;
            let cmask = corrupt_bits(cfg);
            // odd_given[c] = P(corrupt sub-column odd | column parity c)
            let mut odd_given = [0.0; 2];
            for (c, slot) in odd_given.iter_mut().enumerate() {
                for v in 0..1u64 << d {
                    if (v & cmask).count_ones() % 2 == 1 {
                        *slot += column_probability(v, d, theta, c == 1);
                    }
                }
            }
            for (ty, slot) in pi.iter_mut().enumerate() {
                *slot = keys
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        let odd = odd_given[(x == q) as usize];
                        if ty >> k & 1 == 1 { odd } else { 1.0 - odd }
                    })
                    .product();
            }
        }
        _ => unreachable!("slot types only exist for bundled mechanisms"),
    }
    Ok(pi)
}

fn for_each_count_vector(total: u32, parts: usize, f: &mut impl FnMut(&[u32])) {
    fn rec(left: u32, i: usize, cur: &mut Vec<u32>, f: &mut impl FnMut(&[u32])) {
        if i + 1 == cur.len() {
            cur[i] = left;
            f(cur);
            return;
        }
        for c in 0..=left {
            cur[i] = c;
            rec(left - c, i + 1, cur, f);
        }
    }
    rec(total, 0, &mut vec![0; parts], f);
}

fn multinomial_pmf(counts: &[u32], probs: &[f64]) -> f64 {
    let mut log = 0.0;
    let mut m = 0u32;
    for (&c, &p) in counts.iter().zip(probs) {
        if c > 0 {
            if p == 0.0 {
                return 0.0;
            }
            for k in 1..=c {
                m += 1;
                log += (m as f64).ln() - (k as f64).ln();
            }
            log += c as f64 * p.ln();
        }
    }
    log.exp()
}

/// `P(type counts | x) = sum_tau pi_x(tau) Mult(counts - e_tau; u - 1, pi_0)`:
/// the uniform matching of bundles to users, summed in closed form.
fn composed_distribution(cfg: &GameConfig) -> Result<Dist> {
    if cfg.q_0 == cfg.q_i || cfg.q_0 == cfg.q_j {
        return param_err("the composed oracle needs q_0 distinct from q_i and q_j");
    }
    let u = cfg.params.u;
    check_budget(binomial(u + 7, 7).checked_mul(8), "type-count enumeration")?;
    let target = slot_types(cfg, cfg.target_query())?;
    let others = slot_types(cfg, cfg.q_0)?;
    let mut dist = Dist::new();
    let mut rest = vec![0u32; 8];
    for_each_count_vector(u as u32, 8, &mut |counts| {
        let mut prob = 0.0;
        for tau in 0..8 {
            if counts[tau] == 0 || target[tau] == 0.0 {
                continue;
            }
            rest.copy_from_slice(counts);
            rest[tau] -= 1;
            prob += target[tau] * multinomial_pmf(&rest, &others);
        }
        if prob > 0.0 {
            dist.insert(Statistic::Composite(counts.to_vec()), prob);
        }
    });
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{eps_direct, eps_sparse};
    use crate::mechanisms::GenOptions;
    use crate::params::SystemParams;

    fn cfg(m: MechanismParams, n: usize, d: usize, d_a: usize, u: usize) -> GameConfig {
        GameConfig::new(m, SystemParams::new(n, d, d_a, u, 64).unwrap()).unwrap()
    }

    fn total(dist: &Dist) -> f64 {
        dist.values().sum()
    }

    #[test]
    fn distributions_sum_to_one() {
        let cases = [
            cfg(MechanismParams::Direct { p: 4 }, 7, 2, 1, 1),
            cfg(MechanismParams::NaiveDummy { p: 3 }, 6, 1, 1, 1),
            cfg(MechanismParams::Sparse { theta: 0.2 }, 4, 4, 2, 1),
            cfg(MechanismParams::Subset { t: 2 }, 3, 3, 2, 1),
            cfg(MechanismParams::BundledAnon { p: 2 }, 5, 2, 1, 3),
            cfg(MechanismParams::AnonSparse { theta: 0.3 }, 4, 3, 1, 4),
        ];
        for c in cases {
            for arm in [Arm::Qi, Arm::Qj] {
                let dist = observation_distribution(&c, arm, Detail::Reduced).unwrap();
                assert!((total(&dist) - 1.0).abs() < 1e-12, "{:?}", c.mechanism);
            }
        }
    }

    #[test]
    fn sparse_example_is_tight() {
        let r = exact_oracle(&cfg(MechanismParams::Sparse { theta: 0.25 }, 4, 3, 2, 1)).unwrap();
        let bound = eps_sparse(0.25, 3, 2).unwrap().epsilon.exp();
        assert!((r.max_ratio - bound).abs() < 1e-9, "{} vs {bound}", r.max_ratio);
    }

    #[test]
    fn sparse_half_is_perfect() {
        let r = exact_oracle(&cfg(MechanismParams::Sparse { theta: 0.5 }, 4, 4, 3, 1)).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direct_example_within_bound() {
        let c = cfg(MechanismParams::Direct { p: 2 }, 5, 2, 1, 1);
        let r = exact_oracle(&c).unwrap();
        let bound = eps_direct(5, 2, 1, 2).unwrap().epsilon.exp();
        assert!((bound - 7.0).abs() < 1e-12);
        assert!(r.max_ratio <= bound + 1e-12, "{}", r.max_ratio);
        // Shuffled pop: k = d_a p / d corrupt-side indices give (n - k) / (p - k).
        assert!((r.max_ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ascending_pop_leaks_rank() {
        let c = cfg(MechanismParams::Direct { p: 2 }, 5, 2, 1, 1)
            .with_queries(2, 3, 0)
            .unwrap()
            .with_options(GenOptions { pop_order: PopOrder::Ascending, ..GenOptions::default() });
        let r = exact_oracle_full(&c).unwrap();
        assert!(r.zero_support_witness.is_some());
    }

    #[test]
    fn reduction_matches_full_observation() {
        let cases = [
            cfg(MechanismParams::Direct { p: 4 }, 7, 2, 1, 1),
            cfg(MechanismParams::Direct { p: 4 }, 6, 4, 2, 1),
            cfg(MechanismParams::NaiveDummy { p: 3 }, 6, 1, 1, 1),
            cfg(MechanismParams::Sparse { theta: 0.1 }, 4, 5, 3, 1),
            cfg(MechanismParams::Sparse { theta: 0.4 }, 4, 3, 1, 1),
            cfg(MechanismParams::Subset { t: 2 }, 3, 3, 1, 1),
        ];
        for c in cases {
            let reduced = exact_oracle(&c).unwrap();
            let full = exact_oracle_full(&c).unwrap();
            assert_eq!(reduced.zero_support_witness.is_some(), full.zero_support_witness.is_some());
            if reduced.max_ratio.is_finite() {
                assert!((reduced.max_ratio - full.max_ratio).abs() < 1e-9, "{:?}", c.mechanism);
            }
        }
    }

    #[test]
    fn naive_schemes_have_witnesses() {
        for p in 2..6 {
            let r = exact_oracle(&cfg(MechanismParams::NaiveDummy { p }, 6, 1, 1, 1)).unwrap();
            let w = r.zero_support_witness.clone().expect("witness");
            let pair = r.classes[&w];
            assert!(pair.qi > 0.0 && pair.qj == 0.0 || pair.qj > 0.0 && pair.qi == 0.0);
        }
        let full = exact_oracle(&cfg(MechanismParams::NaiveDummy { p: 6 }, 6, 1, 1, 1)).unwrap();
        assert_eq!(full.max_ratio, 1.0);
        for u in [1, 3, 10] {
            let r = exact_oracle(&cfg(MechanismParams::NaiveAnon, 6, 1, 1, u)).unwrap();
            assert!(r.zero_support_witness.is_some());
        }
    }

    #[test]
    fn arm_swap_transposes() {
        let c = cfg(MechanismParams::Sparse { theta: 0.2 }, 5, 4, 2, 1);
        let swapped = c.clone().with_queries(c.q_j, c.q_i, c.q_0).unwrap();
        let a = exact_oracle(&c).unwrap();
        let b = exact_oracle(&swapped).unwrap();
        // Statistic fields follow (q_i, q_j), so swap them back as well.
        for (k, pair) in &a.classes {
            let Statistic::Parity { oi, oj } = k else { panic!() };
            let mirror = b.classes[&Statistic::Parity { oi: *oj, oj: *oi }];
            assert!((pair.qi - mirror.qj).abs() < 1e-15 && (pair.qj - mirror.qi).abs() < 1e-15);
        }
    }

    #[test]
    fn subset_delta_from_oracle() {
        let r = exact_oracle(&cfg(MechanismParams::Subset { t: 2 }, 3, 4, 3, 1)).unwrap();
        assert!(r.zero_support_witness.is_some());
        assert!((r.delta_at(0.0) - 0.5).abs() < 1e-12);
        let safe = exact_oracle(&cfg(MechanismParams::Chor, 3, 3, 2, 1)).unwrap();
        assert!((safe.max_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composed_single_user_matches_base() {
        let base = exact_oracle(&cfg(MechanismParams::Sparse { theta: 0.2 }, 4, 3, 2, 1)).unwrap();
        let comp = exact_oracle(&cfg(MechanismParams::AnonSparse { theta: 0.2 }, 4, 3, 2, 1)).unwrap();
        // The composed type also carries q_0's column, which is uninformative.
        assert!((base.max_ratio - comp.max_ratio).abs() < 1e-9);
    }

    #[test]
    fn composed_within_bound() {
        use crate::analysis::eps_anon_sparse;
        let base = exact_oracle(&cfg(MechanismParams::AnonSparse { theta: 0.2 }, 4, 3, 2, 1)).unwrap();
        for u in 1..=6 {
            let r = exact_oracle(&cfg(MechanismParams::AnonSparse { theta: 0.2 }, 4, 3, 2, u)).unwrap();
            let bound = eps_anon_sparse(0.2, 3, 2, u).unwrap().epsilon.exp();
            assert!(r.max_ratio <= bound * (1.0 + 1e-12), "u={u}");
            // Two bundles of the most revealing type keep the single-user ratio.
            assert!((r.max_ratio - base.max_ratio).abs() < 1e-9 * base.max_ratio);
        }
    }

    #[test]
    fn oversize_and_unsupported() {
        let big = cfg(MechanismParams::Direct { p: 20 }, 60, 2, 1, 1);
        assert!(matches!(exact_oracle(&big), Err(Error::Size(_))));
        let sep = cfg(MechanismParams::SeparatedAnon { p: 2 }, 6, 2, 1, 2);
        assert!(matches!(exact_oracle(&sep), Err(Error::Unsupported(_))));
    }
}
