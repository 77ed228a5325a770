//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Keys may appear once; unknown
//! keys are rejected. Relative paths resolve against the config file's
//! directory. Cache paths may contain `{seed}`, replaced per run.
//!
//! | key | required | meaning |
//! |-----|----------|---------|
//! | `train`, `val` | yes | dataset files |
//! | `output` | yes | output directory |
//! | `student_widths` | yes | e.g. `16,8,10` |
//! | `rule` | yes | `;`-separated list of `none`, `fixed:T`, `multiset:T1,T2`, `normstd:T`, `maxval:T`, `range:T` |
//! | `teacher_widths` | one of | train a teacher per seed |
//! | `teacher_cache_train` | one of | pre-computed teacher logits |
//! | `teacher_cache_val` | no | teacher logits for the val split |
//! | `seeds` | no | comma-separated, default `0`; `NORMKD_SEED` overrides |
//! | `epochs`, `batch_size`, `learning_rate`, `momentum`, `weight_decay`, `lr_decay_epochs`, `lr_decay_rate`, `alpha`, `beta` | no | student recipe |
//! | `teacher_epochs`, `teacher_batch_size`, `teacher_learning_rate`, `teacher_lr_decay_epochs` | no | teacher overrides, defaulting to the student's |
//! | `epsilon` | no | floor for per-sample rules, default `1e-8` |
//! | `std` | no | `corrected` (default) or `population` |
//! | `detach_student_std` | no | `true` stops gradient through the student's temperature |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::logitstats::{StdKind, TemperatureRule, DEFAULT_EPSILON};
use crate::trainer::TrainConfig;

const KEYS: &[&str] = &[
    "train",
    "val",
    "output",
    "student_widths",
    "rule",
    "teacher_widths",
    "teacher_cache_train",
    "teacher_cache_val",
    "seeds",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "weight_decay",
    "lr_decay_epochs",
    "lr_decay_rate",
    "alpha",
    "beta",
    "teacher_epochs",
    "teacher_batch_size",
    "teacher_learning_rate",
    "teacher_lr_decay_epochs",
    "epsilon",
    "std",
    "detach_student_std",
];

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherSource {
    Train { widths: Vec<usize>, config: TrainConfig },
    Cache { train: String, val: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: PathBuf,
    pub val: PathBuf,
    pub output: PathBuf,
    pub student_widths: Vec<usize>,
    pub teacher: TeacherSource,
    /// Student recipe; `rule` and `seed` are filled in per run.
    pub student: TrainConfig,
    /// `None` is the no-distillation baseline.
    pub rules: Vec<Option<TemperatureRule>>,
    pub seeds: Vec<u64>,
}

/// Parses `none` or a [`TemperatureRule`].
pub fn parse_rule_choice(s: &str) -> Result<Option<TemperatureRule>> {
    if s.trim().eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// Directory-safe name of a rule, e.g. `fixed_4`, `multiset_1-2-4`.
pub fn rule_slug(rule: Option<&TemperatureRule>) -> String {
    match rule {
        None => "none".into(),
        Some(r) => r.to_string().replace(':', "_").replace(',', "-").replace(
            |c: char| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')),
            "",
        ),
    }
}

/// `(rule, params)` columns of the summary file.
pub fn rule_columns(rule: Option<&TemperatureRule>) -> (String, String) {
    match rule {
        None => ("none".into(), String::new()),
        Some(r) => (r.name().into(), r.params()),
    }
}

/// Parses a comma-separated seed list as used by `seeds` and `NORMKD_SEED`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("seed `{}` is not a non-negative integer", v.trim())))
        })
        .collect::<Result<_>>()?;
    Ok(seeds)
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: `{}` is not a valid entry", x.trim())))
        })
        .collect()
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.take(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
            })
            .transpose()
    }
}

impl ExperimentConfig {
    /// Reads and parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim().to_string();
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        let mut e = Entries { map };
        let path = |v: String| base.join(v);

        let train = path(e.required("train")?);
        let val = path(e.required("val")?);
        let output = path(e.required("output")?);
        let student_widths = parse_list("student_widths", &e.required("student_widths")?)?;
        let rules = e
            .required("rule")?
            .split(';')
            .map(parse_rule_choice)
            .collect::<Result<Vec<_>>>()?;

        let mut student = TrainConfig::default();
        if let Some(v) = e.parsed("epochs")? {
            student.epochs = v;
        }
        if let Some(v) = e.parsed("batch_size")? {
            student.batch_size = v;
        }
        if let Some(v) = e.parsed("learning_rate")? {
            student.learning_rate = v;
        }
        if let Some(v) = e.parsed("momentum")? {
            student.momentum = v;
        }
        if let Some(v) = e.parsed("weight_decay")? {
            student.weight_decay = v;
        }
        if let Some(v) = e.take("lr_decay_epochs") {
            student.lr_decay_epochs = parse_list("lr_decay_epochs", &v)?;
        }
        if let Some(v) = e.parsed("lr_decay_rate")? {
            student.lr_decay_rate = v;
        }
        if let Some(v) = e.parsed("alpha")? {
            student.alpha = v;
        }
        if let Some(v) = e.parsed("beta")? {
            student.beta = v;
        }
        if let Some(v) = e.take("std") {
            student.std_kind = match v.as_str() {
                "corrected" => StdKind::Corrected,
                "population" => StdKind::Population,
                other => {
                    return Err(Error::Config(format!(
                        "std: expected corrected|population, got `{other}`"
                    )))
                }
            };
        }
        if let Some(v) = e.parsed("detach_student_std")? {
            student.detach_student_temperature = v;
        }
        let epsilon: f64 = e.parsed("epsilon")?.unwrap_or(DEFAULT_EPSILON);
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        let rules: Vec<_> = rules.into_iter().map(|r| r.map(|r| r.with_epsilon(epsilon))).collect();

        let mut tcfg = TrainConfig {
            rule: None,
            ..student.clone()
        };
        if let Some(v) = e.parsed("teacher_epochs")? {
            tcfg.epochs = v;
        }
        if let Some(v) = e.parsed("teacher_batch_size")? {
            tcfg.batch_size = v;
        }
        if let Some(v) = e.parsed("teacher_learning_rate")? {
            tcfg.learning_rate = v;
        }
        if let Some(v) = e.take("teacher_lr_decay_epochs") {
            tcfg.lr_decay_epochs = parse_list("teacher_lr_decay_epochs", &v)?;
        }
        let teacher = match (
            e.take("teacher_widths"),
            e.take("teacher_cache_train"),
            e.take("teacher_cache_val"),
        ) {
            (Some(w), None, None) => TeacherSource::Train {
                widths: parse_list("teacher_widths", &w)?,
                config: tcfg,
            },
            (None, Some(t), v) => TeacherSource::Cache {
                train: base.join(t).to_string_lossy().into_owned(),
                val: v.map(|v| base.join(v).to_string_lossy().into_owned()),
            },
            (None, None, _) => {
                return Err(Error::Config(
                    "one of `teacher_widths` or `teacher_cache_train` is required".into(),
                ))
            }
            _ => {
                return Err(Error::Config(
                    "`teacher_widths` cannot be combined with teacher cache paths".into(),
                ))
            }
        };
        let seeds = match e.take("seeds") {
            Some(s) => parse_seeds(&s)?,
            None => vec![0],
        };
        debug_assert!(e.map.is_empty(), "unhandled keys {:?}", e.map.keys());

        let cfg = Self {
            train,
            val,
            output,
            student_widths,
            teacher,
            student,
            rules,
            seeds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the seed list with the value of `NORMKD_SEED`, if given.
    pub fn apply_seed_override(&mut self, env: Option<&str>) -> Result<()> {
        if let Some(s) = env {
            self.seeds = parse_seeds(s)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::Config("no rule given".into()));
        }
        let slugs: std::collections::BTreeSet<_> = self.rules.iter().map(|r| rule_slug(r.as_ref())).collect();
        if slugs.len() != self.rules.len() {
            return Err(Error::Config("rule list contains duplicates".into()));
        }
        crate::trainer::MlpSpec::new(self.student_widths.clone(), 0).map_err(cfg_err)?;
        self.student.validate().map_err(cfg_err)?;
        for r in self.rules.iter().flatten() {
            r.validate().map_err(cfg_err)?;
        }
        if !(self.student.alpha >= 0.0 && self.student.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if let TeacherSource::Train { widths, config } = &self.teacher {
            crate::trainer::MlpSpec::new(widths.clone(), 0).map_err(cfg_err)?;
            config.validate().map_err(cfg_err)?;
            if widths.first() != self.student_widths.first() || widths.last() != self.student_widths.last() {
                return Err(Error::Config(format!(
                    "teacher widths {widths:?} and student widths {:?} disagree on input or class count",
                    self.student_widths
                )));
            }
        }
        Ok(())
    }
}

/// Substitutes `{seed}` in a cache path pattern.
pub fn seed_path(pattern: &str, seed: u64) -> PathBuf {
    PathBuf::from(pattern.replace("{seed}", &seed.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "train = d/train.csv\nval = d/val.csv\noutput = out\nstudent_widths = 4,3\nteacher_widths = 4,8,3\nrule = normstd:2\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(c.train, PathBuf::from("/base/d/train.csv"));
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.rules, vec![Some(TemperatureRule::norm_std(2.0))]);
        assert_eq!(c.student.epochs, 120);
        assert_eq!(c.student.alpha, 0.1);
        match c.teacher {
            TeacherSource::Train { widths, config } => {
                assert_eq!(widths, vec![4, 8, 3]);
                assert_eq!(config.rule, None);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rule_lists_and_overrides() {
        let text = format!("{MINIMAL}epochs = 3 # short\nlr_decay_epochs = 1,2\nseeds = 4,5\n")
            .replace("rule = normstd:2", "rule = none; fixed:4; multiset:1,2,4");
        let mut c = ExperimentConfig::parse(&text, Path::new("")).unwrap();
        assert_eq!(c.rules.len(), 3);
        assert_eq!(c.rules[0], None);
        assert_eq!(rule_slug(c.rules[2].as_ref()), "multiset_1-2-4");
        assert_eq!(c.seeds, vec![4, 5]);
        c.apply_seed_override(Some("9, 10")).unwrap();
        assert_eq!(c.seeds, vec![9, 10]);
        assert!(c.apply_seed_override(Some("x")).is_err());
    }

    #[test]
    fn errors_are_config_errors() {
        let cases = [
            MINIMAL.replace("rule = normstd:2\n", ""),
            format!("{MINIMAL}colour = blue\n"),
            format!("{MINIMAL}train = again\n"),
            format!("{MINIMAL}no equals sign\n"),
            format!("{MINIMAL}epochs = many\n"),
            MINIMAL.replace("normstd:2", "normstd:-1"),
            MINIMAL.replace("normstd:2", "bogus:1"),
            MINIMAL.replace("teacher_widths = 4,8,3", "teacher_widths = 5,8,3"),
            MINIMAL.replace("teacher_widths = 4,8,3\n", ""),
            format!("{MINIMAL}teacher_cache_train = t.nkdl\n"),
            format!("{MINIMAL}std = sloppy\n"),
            MINIMAL.replace("rule = normstd:2", "rule = fixed:4; fixed:4"),
        ];
        for text in cases {
            let err = ExperimentConfig::parse(&text, Path::new("")).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn cache_source_and_seed_paths() {
        let text = MINIMAL.replace("teacher_widths = 4,8,3", "teacher_cache_train = c/t{seed}.nkdl");
        let c = ExperimentConfig::parse(&text, Path::new("b")).unwrap();
        match &c.teacher {
            TeacherSource::Cache { train, val } => {
                assert_eq!(seed_path(train, 7), PathBuf::from("b/c/t7.nkdl"));
                assert!(val.is_none());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epsilon_applies_to_rules() {
        let c = ExperimentConfig::parse(&format!("{MINIMAL}epsilon = 0.001\n"), Path::new("")).unwrap();
        assert_eq!(
            c.rules[0],
            Some(TemperatureRule::NormStd {
                t_norm: 2.0,
                epsilon: 1e-3
            })
        );
    }
}
