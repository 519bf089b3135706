//! Sweep specifications: `name=start:stop:steps[lin|log]`.

use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub spacing: Spacing,
}

/// Parses a count such as `1000`, `1e6` or `2.5e3`; it must be integral.
pub fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    let x: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !(x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(53)) {
        return Err(format!("{s:?} is not a non-negative integer"));
    }
    Ok(x as usize)
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (param, range) = s.split_once('=').ok_or_else(|| format!("sweep {s:?} lacks '='"))?;
        let parts: Vec<&str> = range.split(':').collect();
        let [start, stop, steps] = parts[..] else {
            return Err(format!("sweep range {range:?} is not start:stop:steps"));
        };
        let (steps, spacing) = if let Some(k) = steps.strip_suffix("log") {
            (k, Some(Spacing::Log))
        } else if let Some(k) = steps.strip_suffix("lin") {
            (k, Some(Spacing::Linear))
        } else {
            (steps, None)
        };
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("{v:?} is not a number"));
        let sweep = Sweep {
            param: param.to_owned(),
            start: num(start)?,
            stop: num(stop)?,
            steps: parse_count(steps)?,
            spacing: spacing.unwrap_or(if param == "theta" { Spacing::Linear } else { Spacing::Log }),
        };
        if !(sweep.start.is_finite() && sweep.stop.is_finite() && sweep.start <= sweep.stop) {
            return Err(format!("sweep needs finite start <= stop, got {start}:{stop}"));
        }
        if sweep.steps == 0 {
            return Err("sweep needs at least one step".into());
        }
        if sweep.spacing == Spacing::Log && sweep.start <= 0.0 {
            return Err("log spacing needs a positive start".into());
        }
        Ok(sweep)
    }
}

impl Sweep {
    /// `steps` points from `start` to `stop` inclusive.
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.start];
        }
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                if k + 1 == self.steps {
                    return self.stop;
                }
                let f = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.start + f * (self.stop - self.start),
                    Spacing::Log => self.start * (self.stop / self.start).powf(f),
                }
            })
            .collect()
    }

    /// Grid points rounded to positive multiples of `multiple`, deduplicated.
    /// When the range holds no more candidates than `steps`, all of them.
    pub fn integer_values(&self, multiple: usize) -> Vec<usize> {
        let m = multiple.max(1) as f64;
        let lo = (self.start / m).ceil().max(1.0) as usize;
        let hi = (self.stop / m).floor() as usize;
        if hi < lo {
            return Vec::new();
        }
        if hi - lo < self.steps {
            return (lo..=hi).map(|k| k * multiple.max(1)).collect();
        }
        let mut out: Vec<usize> = self
            .values()
            .into_iter()
            .map(|v| ((v / m).round() as usize).clamp(lo, hi) * multiple.max(1))
            .collect();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        let s: Sweep = "p=100:1e6:200log".parse().unwrap();
        assert_eq!((s.start, s.stop, s.steps, s.spacing), (100.0, 1e6, 200, Spacing::Log));
        let s: Sweep = "theta=0.01:0.5:100".parse().unwrap();
        assert_eq!(s.spacing, Spacing::Linear);
        let s: Sweep = "t=1:100:100".parse().unwrap();
        assert_eq!(s.spacing, Spacing::Log);
        for bad in ["p100:1e6:5", "p=1:2", "p=5:1:3", "p=0:10:3log", "p=1:10:0", "p=a:2:3"] {
            assert!(bad.parse::<Sweep>().is_err(), "{bad}");
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let s: Sweep = "theta=0.01:0.5:100".parse().unwrap();
        let v = s.values();
        assert_eq!((v[0], v[99], v.len()), (0.01, 0.5, 100));
        let s: Sweep = "p=100:1e6:200log".parse().unwrap();
        let p = s.integer_values(100);
        assert_eq!((p[0], *p.last().unwrap()), (100, 1_000_000));
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert!(p.contains(&1000));
        assert!(p.iter().all(|x| x % 100 == 0));
    }

    #[test]
    fn small_ranges_enumerate() {
        let s: Sweep = "t=1:100:100".parse().unwrap();
        assert_eq!(s.integer_values(1), (1..=100).collect::<Vec<_>>());
    }

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("64"), Ok(64));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-2").is_err());
    }
}
