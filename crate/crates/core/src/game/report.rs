use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, Normal};

use super::Statistic;

/// Per-class weight under each arm: counts for Monte-Carlo reports,
/// probabilities for exact ones.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ArmPair {
    pub qi: f64,
    pub qj: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodReport {
    pub classes: BTreeMap<Statistic, ArmPair>,
    /// Zero for an exact report.
    pub trials_per_arm: u64,
    /// `inf` when a zero-support witness exists.
    pub max_ratio: f64,
    pub epsilon_empirical: f64,
    pub eps_ci_low: f64,
    pub eps_ci_high: f64,
    /// Standard error of the log ratio of the maximising class.
    pub sigma: f64,
    pub argmax: Option<Statistic>,
    pub zero_support_witness: Option<Statistic>,
}

/// Two-sided 95% normal quantile, Bonferroni-corrected over `tests`.
fn bonferroni_z(tests: usize) -> f64 {
    let alpha = 0.05 / tests.max(1) as f64;
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

impl LikelihoodReport {
    pub fn is_exact(&self) -> bool {
        self.trials_per_arm == 0
    }

    /// Monte-Carlo report from the two arms' tallies. Ratios use +1 smoothing
    /// per class and arm; zero-support classes are detected on raw counts.
    pub fn from_counts(a: &BTreeMap<Statistic, u64>, b: &BTreeMap<Statistic, u64>, trials: u64) -> Self {
        let mut classes: BTreeMap<Statistic, ArmPair> = BTreeMap::new();
        for (k, &c) in a {
            classes.entry(k.clone()).or_default().qi = c as f64;
        }
        for (k, &c) in b {
            classes.entry(k.clone()).or_default().qj = c as f64;
        }

        let threshold = (trials / 1000).max(10) as f64;
        let mut best = (0.0f64, 0.0f64, None);
        let mut witness: Option<(f64, Statistic)> = None;
        for (k, pair) in &classes {
            let (x, y) = (pair.qi + 1.0, pair.qj + 1.0);
            let log_ratio = (x / y).ln().abs();
            if log_ratio > best.0 || best.2.is_none() {
                best = (log_ratio, (1.0 / x + 1.0 / y).sqrt(), Some(k.clone()));
            }
            let (lo, hi) = (pair.qi.min(pair.qj), pair.qi.max(pair.qj));
            if lo == 0.0 && hi >= threshold && witness.as_ref().is_none_or(|(w, _)| hi > *w) {
                witness = Some((hi, k.clone()));
            }
        }

        let (log_ratio, sigma, argmax) = best;
        let z = bonferroni_z(2 * classes.len());
        let witness = witness.map(|(_, k)| k);
        let epsilon = if witness.is_some() { f64::INFINITY } else { log_ratio };
        Self {
            trials_per_arm: trials,
            max_ratio: epsilon.exp(),
            epsilon_empirical: epsilon,
            eps_ci_low: log_ratio - z * sigma,
            eps_ci_high: epsilon + z * sigma,
            sigma,
            argmax,
            zero_support_witness: witness,
            classes,
        }
    }

    /// Exact report from the two arms' observation distributions.
    pub fn from_probabilities(a: &BTreeMap<Statistic, f64>, b: &BTreeMap<Statistic, f64>) -> Self {
        let mut classes: BTreeMap<Statistic, ArmPair> = BTreeMap::new();
        for (k, &p) in a {
            classes.entry(k.clone()).or_default().qi = p;
        }
        for (k, &p) in b {
            classes.entry(k.clone()).or_default().qj = p;
        }

        let mut max_ratio = 1.0f64;
        let mut argmax = None;
        let mut witness: Option<(f64, Statistic)> = None;
        for (k, pair) in &classes {
            if pair.qi > 0.0 && pair.qj > 0.0 {
                let r = (pair.qi / pair.qj).max(pair.qj / pair.qi);
                if r > max_ratio || argmax.is_none() {
                    max_ratio = r;
                    argmax = Some(k.clone());
                }
            } else {
                let mass = pair.qi.max(pair.qj);
                if mass > 0.0 && witness.as_ref().is_none_or(|(w, _)| mass > *w) {
                    witness = Some((mass, k.clone()));
                }
            }
        }
        let witness = witness.map(|(_, k)| k);
        if witness.is_some() {
            max_ratio = f64::INFINITY;
        }
        let epsilon = max_ratio.ln();
        Self {
            classes,
            trials_per_arm: 0,
            max_ratio,
            epsilon_empirical: epsilon,
            eps_ci_low: epsilon,
            eps_ci_high: epsilon,
            sigma: 0.0,
            argmax,
            zero_support_witness: witness,
        }
    }

    /// Smallest delta with `P(O | q_x) <= e^eps P(O | q_y) + delta` summed
    /// over the observed classes, worst direction.
    pub fn delta_at(&self, eps: f64) -> f64 {
        let scale = if self.is_exact() { 1.0 } else { self.trials_per_arm as f64 };
        let factor = eps.exp();
        let one_way = |f: fn(&ArmPair) -> (f64, f64)| -> f64 {
            self.classes
                .values()
                .map(|p| {
                    let (x, y) = f(p);
                    (x / scale - factor * y / scale).max(0.0)
                })
                .sum()
        };
        one_way(|p| (p.qi, p.qj)).max(one_way(|p| (p.qj, p.qi)))
    }

    /// The report with the arms swapped.
    pub fn transposed(&self) -> Self {
        let mut out = self.clone();
        for pair in out.classes.values_mut() {
            std::mem::swap(&mut pair.qi, &mut pair.qj);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(qi: bool, qj: bool) -> Statistic {
        Statistic::Seen { qi, qj }
    }

    #[test]
    fn exact_ratio_and_witness() {
        let a = BTreeMap::from([(s(true, false), 0.75), (s(false, false), 0.25)]);
        let b = BTreeMap::from([(s(true, false), 0.25), (s(false, false), 0.75)]);
        let r = LikelihoodReport::from_probabilities(&a, &b);
        assert!((r.max_ratio - 3.0).abs() < 1e-15);
        assert!(r.zero_support_witness.is_none());
        assert!((r.delta_at(0.0) - 0.5).abs() < 1e-15);

        let b = BTreeMap::from([(s(false, false), 1.0)]);
        let r = LikelihoodReport::from_probabilities(&a, &b);
        assert!(r.max_ratio.is_infinite());
        assert_eq!(r.zero_support_witness, Some(s(true, false)));
    }

    #[test]
    fn witness_needs_enough_hits() {
        let a = BTreeMap::from([(s(true, false), 9), (s(false, false), 991)]);
        let b = BTreeMap::from([(s(false, false), 1000)]);
        let r = LikelihoodReport::from_counts(&a, &b, 1000);
        assert!(r.zero_support_witness.is_none());
        assert!((r.epsilon_empirical - 10f64.ln()).abs() < 1e-12);

        let a = BTreeMap::from([(s(true, false), 10), (s(false, false), 990)]);
        let r = LikelihoodReport::from_counts(&a, &b, 1000);
        assert_eq!(r.zero_support_witness, Some(s(true, false)));
        assert!(r.epsilon_empirical.is_infinite());
    }

    #[test]
    fn bonferroni_quantiles() {
        assert!((bonferroni_z(1) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(bonferroni_z(8) > bonferroni_z(2));
    }
}
