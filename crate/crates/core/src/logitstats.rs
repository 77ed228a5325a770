//! Per-sample logit statistics and the temperature rules built on them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::kernels;
pub use crate::numcore::StdKind;

/// Floor applied to degenerate per-sample statistics.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Number of uniform bins in [`LogitSummary::sigma_histogram`].
pub const HISTOGRAM_BINS: usize = 50;

/// One sample's raw class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub sample_id: u32,
    pub label: usize,
    pub logits: Vec<f64>,
}

impl LogitRecord {
    pub fn new(sample_id: u32, label: usize, logits: Vec<f64>) -> Result<Self> {
        let rec = Self {
            sample_id,
            label,
            logits,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label >= self.logits.len() {
            return Err(Error::contract(format!(
                "sample {}: label {} outside [0, {})",
                self.sample_id,
                self.label,
                self.logits.len()
            )));
        }
        if let Some(i) = self.logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "sample {}: logit {i} is not finite",
                self.sample_id
            )));
        }
        Ok(())
    }
}

/// How a logit vector is mapped to its softening temperature.
#[derive(Debug, Clone, PartialEq)]
pub enum TemperatureRule {
    /// One temperature for every sample.
    Fixed(f64),
    /// Average of predictions softened at each temperature.
    MultiSet(Vec<f64>),
    /// `max(sigma, epsilon) * t_norm`, per sample.
    NormStd { t_norm: f64, epsilon: f64 },
    /// `max(V_max, epsilon) * t_v`, per sample.
    MaxVal { t_v: f64, epsilon: f64 },
    /// `max(V_max - V_min, epsilon) * t_v`, per sample.
    Range { t_v: f64, epsilon: f64 },
}

/// Output of [`temperature_for`].
#[derive(Debug, Clone, PartialEq)]
pub enum Temperatures {
    Single(f64),
    Set(Vec<f64>),
}

impl TemperatureRule {
    pub fn norm_std(t_norm: f64) -> Self {
        TemperatureRule::NormStd {
            t_norm,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::contract(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match self {
            TemperatureRule::Fixed(t) => positive("temperature", *t),
            TemperatureRule::MultiSet(ts) => {
                if ts.is_empty() {
                    return Err(Error::contract("temperature set is empty"));
                }
                ts.iter().try_for_each(|&t| positive("temperature", t))
            }
            TemperatureRule::NormStd { t_norm, epsilon } => {
                positive("T_norm", *t_norm)?;
                positive("epsilon", *epsilon)
            }
            TemperatureRule::MaxVal { t_v, epsilon } | TemperatureRule::Range { t_v, epsilon } => {
                positive("T_v", *t_v)?;
                positive("epsilon", *epsilon)
            }
        }
    }

    /// Whether the temperature depends on the sample.
    pub fn is_per_sample(&self) -> bool {
        matches!(
            self,
            TemperatureRule::NormStd { .. } | TemperatureRule::MaxVal { .. } | TemperatureRule::Range { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            TemperatureRule::Fixed(_) => "fixed",
            TemperatureRule::MultiSet(_) => "multiset",
            TemperatureRule::NormStd { .. } => "normstd",
            TemperatureRule::MaxVal { .. } => "maxval",
            TemperatureRule::Range { .. } => "range",
        }
    }

    /// Human-readable parameter list, e.g. `T_norm=2 eps=0.00000001`.
    pub fn params(&self) -> String {
        match self {
            TemperatureRule::Fixed(t) => format!("T={t}"),
            TemperatureRule::MultiSet(ts) => {
                let list: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
                format!("temps={}", list.join(" "))
            }
            TemperatureRule::NormStd { t_norm, epsilon } => format!("T_norm={t_norm} eps={epsilon:e}"),
            TemperatureRule::MaxVal { t_v, epsilon } | TemperatureRule::Range { t_v, epsilon } => {
                format!("T_v={t_v} eps={epsilon:e}")
            }
        }
    }

    /// Replaces the floor of per-sample rules; fixed rules are unchanged.
    pub fn with_epsilon(self, eps: f64) -> Self {
        match self {
            TemperatureRule::NormStd { t_norm, .. } => TemperatureRule::NormStd { t_norm, epsilon: eps },
            TemperatureRule::MaxVal { t_v, .. } => TemperatureRule::MaxVal { t_v, epsilon: eps },
            TemperatureRule::Range { t_v, .. } => TemperatureRule::Range { t_v, epsilon: eps },
            other => other,
        }
    }
}

impl fmt::Display for TemperatureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemperatureRule::Fixed(t) => write!(f, "fixed:{t}"),
            TemperatureRule::MultiSet(ts) => {
                let list: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
                write!(f, "multiset:{}", list.join(","))
            }
            TemperatureRule::NormStd { t_norm, .. } => write!(f, "normstd:{t_norm}"),
            TemperatureRule::MaxVal { t_v, .. } => write!(f, "maxval:{t_v}"),
            TemperatureRule::Range { t_v, .. } => write!(f, "range:{t_v}"),
        }
    }
}

/// Parses `fixed:4`, `multiset:1,2,4`, `normstd:2`, `maxval:1`, `range:1`.
/// Per-sample rules get [`DEFAULT_EPSILON`].
impl FromStr for TemperatureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::config(format!("rule `{s}` must look like name:value")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("rule `{s}`: `{v}` is not a number")))
        };
        let rule = match name.trim().to_ascii_lowercase().as_str() {
            "fixed" => TemperatureRule::Fixed(num(arg)?),
            "multiset" => TemperatureRule::MultiSet(arg.split(',').map(num).collect::<Result<_>>()?),
            "normstd" => TemperatureRule::NormStd {
                t_norm: num(arg)?,
                epsilon: DEFAULT_EPSILON,
            },
            "maxval" => TemperatureRule::MaxVal {
                t_v: num(arg)?,
                epsilon: DEFAULT_EPSILON,
            },
            "range" => TemperatureRule::Range {
                t_v: num(arg)?,
                epsilon: DEFAULT_EPSILON,
            },
            other => return Err(Error::config(format!("unknown temperature rule `{other}`"))),
        };
        rule.validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(rule)
    }
}

/// Bessel-corrected standard deviation of a logit vector.
pub fn sample_std(logits: &[f64]) -> Result<f64> {
    std_with(logits, StdKind::Corrected)
}

pub fn std_with(logits: &[f64], kind: StdKind) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::contract(format!(
            "standard deviation needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    Ok(kernels::std_dev(logits, kind))
}

fn max_min(logits: &[f64]) -> (f64, f64) {
    logits.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &v| {
        (hi.max(v), lo.min(v))
    })
}

/// Temperature(s) the rule assigns to this logit vector.
pub fn temperature_for(rule: &TemperatureRule, logits: &[f64]) -> Result<Temperatures> {
    temperature_with(rule, logits, StdKind::Corrected)
}

pub fn temperature_with(rule: &TemperatureRule, logits: &[f64], kind: StdKind) -> Result<Temperatures> {
    rule.validate()?;
    if logits.is_empty() {
        return Err(Error::contract("empty logit vector"));
    }
    Ok(match rule {
        TemperatureRule::Fixed(t) => Temperatures::Single(*t),
        TemperatureRule::MultiSet(ts) => Temperatures::Set(ts.clone()),
        TemperatureRule::NormStd { t_norm, epsilon } => {
            Temperatures::Single(std_with(logits, kind)?.max(*epsilon) * t_norm)
        }
        TemperatureRule::MaxVal { t_v, epsilon } => Temperatures::Single(max_min(logits).0.max(*epsilon) * t_v),
        TemperatureRule::Range { t_v, epsilon } => {
            let (hi, lo) = max_min(logits);
            Temperatures::Single((hi - lo).max(*epsilon) * t_v)
        }
    })
}

/// Fixed-bin histogram over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` uniform bins spanning the min and max of `values`. When all
    /// values coincide every sample lands in the first bin.
    pub fn uniform(values: &[f64], bins: usize) -> Self {
        let (hi, lo) = max_min(values);
        let mut counts = vec![0; bins];
        let width = hi - lo;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) * bins as f64) as usize
            } else {
                0
            };
            counts[b.min(bins - 1)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

/// Per-sample statistics for a list of records.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSummary {
    pub sample_ids: Vec<u32>,
    pub sigma: Vec<f64>,
    pub mean: Vec<f64>,
    pub v_max: Vec<f64>,
    pub v_min: Vec<f64>,
    /// Entropy of the softmax at `T = 1`, in nats.
    pub entropy: Vec<f64>,
    pub sigma_histogram: Histogram,
}

pub fn summarize(records: &[LogitRecord]) -> Result<LogitSummary> {
    summarize_with(records, StdKind::Corrected)
}

pub fn summarize_with(records: &[LogitRecord], kind: StdKind) -> Result<LogitSummary> {
    let first = records
        .first()
        .ok_or_else(|| Error::contract("cannot summarize an empty record list"))?;
    let classes = first.logits.len();
    let mut s = LogitSummary {
        sample_ids: Vec::with_capacity(records.len()),
        sigma: Vec::with_capacity(records.len()),
        mean: Vec::with_capacity(records.len()),
        v_max: Vec::with_capacity(records.len()),
        v_min: Vec::with_capacity(records.len()),
        entropy: Vec::with_capacity(records.len()),
        sigma_histogram: Histogram {
            lo: 0.0,
            hi: 0.0,
            counts: Vec::new(),
        },
    };
    for (i, r) in records.iter().enumerate() {
        if r.logits.len() != classes {
            return Err(Error::Dimension {
                op: "summarize",
                left: (i, r.logits.len()),
                right: (0, classes),
            });
        }
        let (hi, lo) = max_min(&r.logits);
        s.sample_ids.push(r.sample_id);
        s.sigma.push(std_with(&r.logits, kind)?);
        s.mean.push(kernels::mean(&r.logits));
        s.v_max.push(hi);
        s.v_min.push(lo);
        s.entropy.push(entropy(&r.logits));
    }
    s.sigma_histogram = Histogram::uniform(&s.sigma, HISTOGRAM_BINS);
    Ok(s)
}

/// Shannon entropy of `softmax(logits)`, clamped to `[0, ln C]`.
pub fn entropy(logits: &[f64]) -> f64 {
    let logp = kernels::log_softmax(logits);
    let h: f64 = -logp.iter().map(|&l| l.exp() * l).sum::<f64>();
    h.clamp(0.0, (logits.len() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_examples() {
        assert_eq!(sample_std(&[3.5; 6]).unwrap(), 0.0);
        assert_eq!(sample_std(&[2.0, 0.0, -2.0]).unwrap(), 2.0);
        // sqrt(0.5) to 40 digits: 0.70710678118654752440...
        assert!((sample_std(&[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-16);
        assert!(sample_std(&[1.0]).is_err());
    }

    #[test]
    fn temperature_examples() {
        let z = [2.0, 0.0, -2.0];
        assert_eq!(
            temperature_for(&TemperatureRule::Fixed(4.0), &z).unwrap(),
            Temperatures::Single(4.0)
        );
        let norm = TemperatureRule::NormStd {
            t_norm: 2.0,
            epsilon: 1e-8,
        };
        assert_eq!(temperature_for(&norm, &z).unwrap(), Temperatures::Single(4.0));
        let range = TemperatureRule::Range {
            t_v: 1.0,
            epsilon: 1e-8,
        };
        assert_eq!(
            temperature_for(&range, &[3.0, -1.0, 0.0]).unwrap(),
            Temperatures::Single(4.0)
        );
        let set = TemperatureRule::MultiSet(vec![1.0, 2.0]);
        assert_eq!(temperature_for(&set, &z).unwrap(), Temperatures::Set(vec![1.0, 2.0]));
    }

    #[test]
    fn degenerate_statistics_are_floored() {
        let flat = [5.0, 5.0, 5.0];
        let neg = [-3.0, -4.0, -5.0];
        let eps = 1e-8;
        let cases = [
            (
                TemperatureRule::NormStd {
                    t_norm: 2.0,
                    epsilon: eps,
                },
                &flat,
                2e-8,
            ),
            (TemperatureRule::Range { t_v: 3.0, epsilon: eps }, &flat, 3e-8),
            (TemperatureRule::MaxVal { t_v: 1.0, epsilon: eps }, &neg, 1e-8),
        ];
        for (rule, z, want) in cases {
            let Temperatures::Single(t) = temperature_for(&rule, z).unwrap() else {
                panic!("per-sample rule returned a set")
            };
            assert!((t - want).abs() < 1e-22, "{rule}: {t}");
        }
    }

    #[test]
    fn maxval_is_not_shift_invariant() {
        let rule = TemperatureRule::MaxVal {
            t_v: 1.0,
            epsilon: 1e-8,
        };
        let a = temperature_for(&rule, &[3.0, 1.0, 0.0]).unwrap();
        let b = temperature_for(&rule, &[4.0, 2.0, 1.0]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(TemperatureRule::Fixed(0.0).validate().is_err());
        assert!(TemperatureRule::MultiSet(vec![]).validate().is_err());
        assert!(TemperatureRule::MultiSet(vec![1.0, -2.0]).validate().is_err());
        assert!(TemperatureRule::NormStd {
            t_norm: 1.0,
            epsilon: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rule_text_round_trip() {
        for s in ["fixed:4", "multiset:1,2,4", "normstd:2", "maxval:1.5", "range:0.5"] {
            let rule: TemperatureRule = s.parse().unwrap();
            assert_eq!(rule.to_string(), s);
        }
        assert!("bogus:1".parse::<TemperatureRule>().is_err());
        assert!("fixed".parse::<TemperatureRule>().is_err());
        assert!("fixed:-1".parse::<TemperatureRule>().is_err());
    }

    #[test]
    fn summary_of_uniform_record() {
        let recs = [LogitRecord::new(0, 0, vec![0.0; 4]).unwrap()];
        let s = summarize(&recs).unwrap();
        assert_eq!(s.sigma, vec![0.0]);
        assert!((s.entropy[0] - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn summary_extremes() {
        let recs = [LogitRecord::new(7, 1, vec![2.0, 0.0, -2.0]).unwrap()];
        let s = summarize(&recs).unwrap();
        assert_eq!(s.sigma, vec![2.0]);
        assert_eq!(s.v_max, vec![2.0]);
        assert_eq!(s.v_min, vec![-2.0]);
        assert_eq!(s.sample_ids, vec![7]);
    }

    #[test]
    fn identical_records_fill_one_bin() {
        let r = LogitRecord::new(0, 0, vec![1.0, 3.0, -2.0]).unwrap();
        let s = summarize(&[r.clone(), LogitRecord { sample_id: 1, ..r }]).unwrap();
        let nonzero: Vec<_> = s.sigma_histogram.counts.iter().filter(|&&c| c > 0).collect();
        assert_eq!(nonzero, vec![&2]);
        assert_eq!(s.sigma_histogram.counts.len(), HISTOGRAM_BINS);
    }

    #[test]
    fn summarize_errors() {
        assert!(matches!(summarize(&[]), Err(Error::Contract(_))));
        let a = LogitRecord::new(0, 0, vec![1.0, 2.0]).unwrap();
        let b = LogitRecord::new(1, 0, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(summarize(&[a, b]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn histogram_max_lands_in_last_bin() {
        let h = Histogram::uniform(&[0.0, 0.5, 1.0], 4);
        assert_eq!(h.counts, vec![1, 0, 1, 1]);
        assert_eq!(h.edges(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
