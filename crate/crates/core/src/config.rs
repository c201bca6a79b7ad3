//! `key = value` experiment descriptions.
//!
//! One assignment per line, `#` starts a comment, values may be wrapped in
//! double quotes. Unknown and repeated keys are rejected. A `preset` line
//! fills in defaults that later keys override, regardless of line order.
//!
//! Experiment keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `preset` | `sec5a`, `sec5b-rosenbrock`, `sec5c-mnist`, `sec5c-fashion` |
//! | `dataset` | `synthetic`, `rosenbrock` or `idx` |
//! | `m`, `feature_dim`, `feature_std`, `noise_std`, `data_seed` | synthetic data |
//! | `images`, `labels`, `class_a`, `class_b`, `subset_m` | IDX data (`data_seed` picks the subset) |
//! | `methods` | comma list of `onebit_gc`, `sgc`, `ignore_stragglers` |
//! | `n`, `p` | workers and straggler probability |
//! | `d` | `15` for every sample, or blocks `10:500,20:500` (`d:count`) |
//! | `schedule` | `inverse_lambda_t` (`lambda`), `constant` (`smoothness`, horizon = run length), `decaying` (`smoothness`, `gamma0`), `fixed` (`gamma`) |
//! | `iterations` or `bit_budget` | run length; a bit budget gives each method `ceil(budget / rho)` iterations |
//! | `seeds` | comma list, or a range `1..5` (inclusive) |
//! | `zeta` | bits per real scalar, default 64 |
//! | `beta0` | `normal` (default) or a comma list |
//! | `output` | output directory |
//! | `allow_divergence` | `true`/`false` |
//! | `summary_points` | checkpoints in the summary grid, default 50 |

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use crate::distribution::RedundancySpec;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::quantization::DEFAULT_ZETA;
use crate::simulation::{InitialParams, LearningRateSchedule, Method};

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    SyntheticRegression {
        m: usize,
        feature_dim: usize,
        feature_std: f64,
        noise_std: f64,
        data_seed: u64,
    },
    Rosenbrock {
        m: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        class_a: u8,
        class_b: u8,
        subset_m: usize,
        data_seed: u64,
    },
}

impl DatasetSource {
    pub fn m(&self) -> usize {
        match *self {
            DatasetSource::SyntheticRegression { m, .. } | DatasetSource::Rosenbrock { m } => m,
            DatasetSource::Idx { subset_m, .. } => subset_m,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            DatasetSource::SyntheticRegression { .. } => LossKind::LinearRegression,
            DatasetSource::Rosenbrock { .. } => LossKind::Rosenbrock,
            DatasetSource::Idx { .. } => LossKind::Logistic,
        }
    }
}

/// Replication as written in the config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RedundancyLayout {
    Uniform(usize),
    Blocks(Vec<(usize, usize)>),
}

impl RedundancyLayout {
    pub fn resolve(&self, m: usize) -> Result<RedundancySpec> {
        match self {
            RedundancyLayout::Uniform(d) => RedundancySpec::homogeneous(m, *d),
            RedundancyLayout::Blocks(blocks) => {
                let total: usize = blocks.iter().map(|b| b.1).sum();
                if total != m {
                    return Err(Error::config("d", format!("blocks cover {total} samples, m = {m}")));
                }
                RedundancySpec::blocks(blocks)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleKind {
    InverseLambdaT { lambda: f64 },
    /// Horizon is the run's own iteration count.
    Constant { smoothness: f64 },
    Decaying { smoothness: f64, gamma0: f64 },
    Fixed { gamma: f64 },
}

impl ScheduleKind {
    pub fn for_horizon(&self, iterations: u64) -> LearningRateSchedule {
        match *self {
            ScheduleKind::InverseLambdaT { lambda } => LearningRateSchedule::InverseLambdaT { lambda },
            ScheduleKind::Constant { smoothness } => LearningRateSchedule::Constant {
                smoothness,
                horizon: iterations,
            },
            ScheduleKind::Decaying { smoothness, gamma0 } => LearningRateSchedule::Decaying { smoothness, gamma0 },
            ScheduleKind::Fixed { gamma } => LearningRateSchedule::FixedGamma { gamma },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunLength {
    Iterations(u64),
    BitBudget(u64),
}

impl RunLength {
    /// Iterations for a method sending `rho` bits per iteration.
    pub fn iterations(&self, rho: u64) -> u64 {
        match *self {
            RunLength::Iterations(t) => t,
            RunLength::BitBudget(b) => b.div_ceil(rho),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub source: DatasetSource,
    pub methods: Vec<Method>,
    pub n: usize,
    pub d: RedundancyLayout,
    pub p: f64,
    pub schedule: ScheduleKind,
    pub length: RunLength,
    pub seeds: Vec<u64>,
    pub zeta: u64,
    pub init: InitialParams,
    pub output: PathBuf,
    pub allow_divergence: bool,
    pub summary_points: usize,
}

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Split text into entries, rejecting malformed and repeated keys.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got {content:?}"),
        })?;
        let key = key.trim().to_string();
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if key.is_empty() {
            return Err(Error::Parse { line, message: "empty key".into() });
        }
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(Error::Parse {
                line,
                message: format!("key `{key}` already set on line {first}"),
            });
        }
        out.push(Entry {
            line,
            key,
            value: value.to_string(),
        });
    }
    Ok(out)
}

/// Typed access to parsed entries, remembering line numbers for errors.
pub(crate) struct Fields {
    values: BTreeMap<String, (usize, String)>,
    last_line: usize,
}

impl Fields {
    pub(crate) fn new(text: &str, allowed: &[&str]) -> Result<Self> {
        let entries = parse_entries(text)?;
        let mut values = BTreeMap::new();
        for e in entries {
            if !allowed.contains(&e.key.as_str()) {
                return Err(Error::Parse {
                    line: e.line,
                    message: format!("unknown key `{}`", e.key),
                });
            }
            values.insert(e.key, (e.line, e.value));
        }
        Ok(Self {
            values,
            last_line: text.lines().count(),
        })
    }

    pub(crate) fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    pub(crate) fn line_of(&self, key: &str) -> usize {
        self.values.get(key).map_or(self.last_line, |(l, _)| *l)
    }

    pub(crate) fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_of(key),
            message: format!("{key}: {}", message.into()),
        }
    }

    pub(crate) fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| self.error(key, format!("invalid value {v:?}: {e}"))))
            .transpose()
    }

    pub(crate) fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|tok| {
                        tok.trim()
                            .parse::<T>()
                            .map_err(|e| self.error(key, format!("invalid item {tok:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }
}

const EXPERIMENT_KEYS: &[&str] = &[
    "preset",
    "dataset",
    "m",
    "feature_dim",
    "feature_std",
    "noise_std",
    "data_seed",
    "images",
    "labels",
    "class_a",
    "class_b",
    "subset_m",
    "methods",
    "n",
    "d",
    "p",
    "schedule",
    "lambda",
    "smoothness",
    "gamma0",
    "gamma",
    "iterations",
    "bit_budget",
    "seeds",
    "zeta",
    "beta0",
    "output",
    "allow_divergence",
    "summary_points",
];

/// Keys every config needs once presets are applied.
pub const REQUIRED_KEYS: &[&str] = &["dataset", "methods", "n", "d", "p", "schedule", "seeds"];

/// Default key values of a named preset.
pub fn preset_defaults(name: &str) -> Option<&'static [(&'static str, &'static str)]> {
    let table: &'static [(&str, &str)] = match name {
        "sec5a" => &[
            ("dataset", "synthetic"),
            ("m", "1000"),
            ("feature_dim", "100"),
            ("feature_std", "10"),
            ("noise_std", "1"),
            ("data_seed", "0"),
            ("methods", "onebit_gc,sgc,ignore_stragglers"),
            ("n", "100"),
            ("d", "20"),
            ("p", "0.1"),
            ("schedule", "inverse_lambda_t"),
            ("lambda", "100000"),
            ("bit_budget", "1280000"),
            ("seeds", "1..5"),
            ("output", "out/sec5a"),
        ],
        "sec5b-rosenbrock" => &[
            ("dataset", "rosenbrock"),
            ("m", "1000"),
            ("methods", "onebit_gc,sgc,ignore_stragglers"),
            ("n", "100"),
            ("d", "10"),
            ("p", "0.1"),
            ("schedule", "fixed"),
            ("gamma", "0.00001"),
            ("bit_budget", "3280000"),
            ("seeds", "1..5"),
            ("allow_divergence", "true"),
            ("output", "out/sec5b"),
        ],
        "sec5c-mnist" | "sec5c-fashion" => {
            if name == "sec5c-mnist" {
                &[
                    ("dataset", "idx"),
                    ("class_a", "0"),
                    ("class_b", "2"),
                    ("subset_m", "100"),
                    ("data_seed", "0"),
                    ("methods", "onebit_gc,sgc,ignore_stragglers"),
                    ("n", "10"),
                    ("d", "2"),
                    ("p", "0.1"),
                    ("schedule", "inverse_lambda_t"),
                    ("lambda", "1000"),
                    ("bit_budget", "10048000"),
                    ("seeds", "1..5"),
                    ("output", "out/sec5c-mnist"),
                ]
            } else {
                &[
                    ("dataset", "idx"),
                    ("class_a", "0"),
                    ("class_b", "1"),
                    ("subset_m", "100"),
                    ("data_seed", "0"),
                    ("methods", "onebit_gc,sgc,ignore_stragglers"),
                    ("n", "10"),
                    ("d", "2"),
                    ("p", "0.1"),
                    ("schedule", "inverse_lambda_t"),
                    ("lambda", "1000"),
                    ("bit_budget", "10048000"),
                    ("seeds", "1..5"),
                    ("output", "out/sec5c-fashion"),
                ]
            }
        }
        _ => return None,
    };
    Some(table)
}

pub fn parse_seeds(value: &str) -> std::result::Result<Vec<u64>, String> {
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
        let hi: u64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
        if hi < lo {
            return Err(format!("empty range {lo}..{hi}"));
        }
        return Ok((lo..=hi).collect());
    }
    value
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

fn parse_layout(value: &str) -> std::result::Result<RedundancyLayout, String> {
    if !value.contains(':') {
        return value
            .trim()
            .parse::<usize>()
            .map(RedundancyLayout::Uniform)
            .map_err(|e| e.to_string());
    }
    value
        .split(',')
        .map(|block| {
            let (d, count) = block
                .split_once(':')
                .ok_or_else(|| format!("block {block:?} is not `d:count`"))?;
            Ok((
                d.trim().parse().map_err(|e| format!("{e}"))?,
                count.trim().parse().map_err(|e| format!("{e}"))?,
            ))
        })
        .collect::<std::result::Result<Vec<_>, String>>()
        .map(RedundancyLayout::Blocks)
}

impl ExperimentConfig {
    /// Parse and validate an experiment description.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = Fields::new(text, EXPERIMENT_KEYS)?;
        let explicit: Vec<String> = fields.values.keys().cloned().collect();
        if let Some(name) = fields.raw("preset").map(str::to_string) {
            let defaults = preset_defaults(&name)
                .ok_or_else(|| fields.error("preset", format!("unknown preset {name:?}")))?;
            let line = fields.line_of("preset");
            for (k, v) in defaults {
                fields
                    .values
                    .entry(k.to_string())
                    .or_insert_with(|| (line, v.to_string()));
            }
        }

        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|k| fields.raw(k).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Parse {
                line: fields.last_line,
                message: format!("missing required keys: {}", missing.join(", ")),
            });
        }
        let require = |key: &str| -> Result<()> {
            if fields.raw(key).is_none() {
                Err(fields.error(key, "required by this configuration"))
            } else {
                Ok(())
            }
        };

        let dataset = fields.raw("dataset").unwrap_or_default().to_string();
        let source = match dataset.as_str() {
            "synthetic" => {
                require("m")?;
                require("feature_dim")?;
                DatasetSource::SyntheticRegression {
                    m: fields.get("m")?.unwrap(),
                    feature_dim: fields.get("feature_dim")?.unwrap(),
                    feature_std: fields.get("feature_std")?.unwrap_or(1.0),
                    noise_std: fields.get("noise_std")?.unwrap_or(1.0),
                    data_seed: fields.get("data_seed")?.unwrap_or(0),
                }
            }
            "rosenbrock" => {
                require("m")?;
                DatasetSource::Rosenbrock {
                    m: fields.get("m")?.unwrap(),
                }
            }
            "idx" => {
                for key in ["images", "labels", "class_a", "class_b", "subset_m"] {
                    require(key)?;
                }
                DatasetSource::Idx {
                    images: PathBuf::from(fields.raw("images").unwrap()),
                    labels: PathBuf::from(fields.raw("labels").unwrap()),
                    class_a: fields.get("class_a")?.unwrap(),
                    class_b: fields.get("class_b")?.unwrap(),
                    subset_m: fields.get("subset_m")?.unwrap(),
                    data_seed: fields.get("data_seed")?.unwrap_or(0),
                }
            }
            other => return Err(fields.error("dataset", format!("unknown dataset {other:?}"))),
        };
        if source.m() == 0 {
            let key = if matches!(source, DatasetSource::Idx { .. }) { "subset_m" } else { "m" };
            return Err(fields.error(key, "must be at least 1"));
        }
        if let DatasetSource::SyntheticRegression {
            feature_dim,
            feature_std,
            noise_std,
            ..
        } = source
        {
            if feature_dim == 0 {
                return Err(fields.error("feature_dim", "must be at least 1"));
            }
            if !(feature_std.is_finite() && feature_std >= 0.0) {
                return Err(fields.error("feature_std", "must be finite and nonnegative"));
            }
            if !(noise_std.is_finite() && noise_std >= 0.0) {
                return Err(fields.error("noise_std", "must be finite and nonnegative"));
            }
        }
        if let DatasetSource::Idx { class_a, class_b, .. } = source {
            if class_a == class_b {
                return Err(fields.error("class_b", "must differ from class_a"));
            }
        }

        let methods: Vec<Method> = fields.list("methods")?.unwrap();
        if methods.is_empty() {
            return Err(fields.error("methods", "at least one method is required"));
        }
        let n: usize = fields.get("n")?.unwrap();
        if n == 0 {
            return Err(fields.error("n", "must be at least 1"));
        }
        let d = parse_layout(fields.raw("d").unwrap()).map_err(|e| fields.error("d", e))?;
        let spec = d.resolve(source.m()).map_err(|e| fields.error("d", e.to_string()))?;
        if methods.iter().any(|m| *m != Method::IgnoreStragglers1Bit) {
            spec.validate_for(n).map_err(|e| fields.error("d", e.to_string()))?;
        }
        let p: f64 = fields.get("p")?.unwrap();
        if !(0.0..1.0).contains(&p) {
            return Err(fields.error("p", format!("must lie in [0, 1), got {p}")));
        }

        let schedule = match fields.raw("schedule").unwrap() {
            "inverse_lambda_t" => {
                require("lambda")?;
                ScheduleKind::InverseLambdaT {
                    lambda: fields.get("lambda")?.unwrap(),
                }
            }
            "constant" => {
                require("smoothness")?;
                ScheduleKind::Constant {
                    smoothness: fields.get("smoothness")?.unwrap(),
                }
            }
            "decaying" => {
                require("smoothness")?;
                require("gamma0")?;
                ScheduleKind::Decaying {
                    smoothness: fields.get("smoothness")?.unwrap(),
                    gamma0: fields.get("gamma0")?.unwrap(),
                }
            }
            "fixed" => {
                require("gamma")?;
                ScheduleKind::Fixed {
                    gamma: fields.get("gamma")?.unwrap(),
                }
            }
            other => return Err(fields.error("schedule", format!("unknown schedule {other:?}"))),
        };

        let is_explicit = |key: &str| explicit.iter().any(|k| k == key);
        let length = match (fields.get::<u64>("iterations")?, fields.get::<u64>("bit_budget")?) {
            (Some(t), Some(b)) => match (is_explicit("iterations"), is_explicit("bit_budget")) {
                (true, false) => RunLength::Iterations(t),
                (false, true) => RunLength::BitBudget(b),
                _ => return Err(fields.error("bit_budget", "set either iterations or bit_budget, not both")),
            },
            (Some(t), None) => RunLength::Iterations(t),
            (None, Some(b)) => RunLength::BitBudget(b),
            (None, None) => {
                return Err(Error::Parse {
                    line: fields.last_line,
                    message: "missing required keys: iterations or bit_budget".into(),
                })
            }
        };

        let seeds = parse_seeds(fields.raw("seeds").unwrap()).map_err(|e| fields.error("seeds", e))?;
        if seeds.is_empty() {
            return Err(fields.error("seeds", "at least one seed is required"));
        }
        let zeta: u64 = fields.get("zeta")?.unwrap_or(DEFAULT_ZETA);
        if zeta == 0 {
            return Err(fields.error("zeta", "must be at least 1"));
        }
        let init = match fields.raw("beta0") {
            None | Some("normal") => InitialParams::StandardNormal,
            Some(_) => InitialParams::Explicit(fields.list("beta0")?.unwrap()),
        };
        let summary_points: usize = fields.get("summary_points")?.unwrap_or(50);
        if summary_points == 0 {
            return Err(fields.error("summary_points", "must be at least 1"));
        }

        let config = Self {
            preset: fields.raw("preset").map(str::to_string),
            source,
            methods,
            n,
            d,
            p,
            schedule,
            length,
            seeds,
            zeta,
            init,
            output: PathBuf::from(fields.raw("output").unwrap_or("out")),
            allow_divergence: fields.get("allow_divergence")?.unwrap_or(false),
            summary_points,
        };
        // With a bit budget the horizon depends on the model dimension, so the
        // constant schedule is rechecked once the dataset is loaded.
        let horizon = match config.length {
            RunLength::Iterations(t) => t,
            RunLength::BitBudget(_) => u64::MAX,
        };
        config.schedule.for_horizon(horizon).validate().map_err(|e| match e {
            Error::InvalidConfig { field, reason } => {
                let key = match field.as_str() {
                    "S" => "smoothness",
                    "T" => "iterations",
                    f => f,
                };
                fields.error(key, reason)
            }
            other => other,
        })?;
        Ok(config)
    }
}

/// Constants for the `bounds` subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsConfig {
    pub params: crate::theory::TheoryParams,
    /// Replication for the strongly convex bounds; homogeneous `D` if absent.
    pub d: Option<RedundancyLayout>,
    pub horizons: Vec<u64>,
    pub bounds: Vec<BoundKind>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    SecondMoment,
    Theorem1,
    Theorem2,
    Theorem3,
}

impl BoundKind {
    pub const ALL: [BoundKind; 4] = [
        BoundKind::SecondMoment,
        BoundKind::Theorem1,
        BoundKind::Theorem2,
        BoundKind::Theorem3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::SecondMoment => "second_moment",
            BoundKind::Theorem1 => "theorem1",
            BoundKind::Theorem2 => "theorem2",
            BoundKind::Theorem3 => "theorem3",
        }
    }
}

impl std::str::FromStr for BoundKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        BoundKind::ALL
            .into_iter()
            .find(|b| b.name() == s.trim())
            .ok_or_else(|| format!("unknown bound {s:?}"))
    }
}

const BOUNDS_KEYS: &[&str] = &[
    "C", "lambda", "S", "m", "n", "w", "p", "D", "d", "gamma0", "L0", "Lstar", "T", "bounds", "output",
];

impl BoundsConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let fields = Fields::new(text, BOUNDS_KEYS)?;
        let bounds: Vec<BoundKind> = fields.list("bounds")?.unwrap_or_else(|| BoundKind::ALL.to_vec());
        let needed: &[&str] = &["C", "m", "n", "w", "p", "T"];
        let missing: Vec<&str> = needed.iter().copied().filter(|k| fields.raw(k).is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::Parse {
                line: fields.last_line,
                message: format!("missing required keys: {}", missing.join(", ")),
            });
        }
        let d = fields
            .raw("d")
            .map(|v| parse_layout(v).map_err(|e| fields.error("d", e)))
            .transpose()?;
        let params = crate::theory::TheoryParams {
            c: fields.get("C")?.unwrap(),
            lambda: fields.get("lambda")?.unwrap_or(f64::NAN),
            s: fields.get("S")?.unwrap_or(f64::NAN),
            m: fields.get("m")?.unwrap(),
            n: fields.get("n")?.unwrap(),
            w: fields.get("w")?.unwrap(),
            p: fields.get("p")?.unwrap(),
            d: fields.get("D")?.unwrap_or(f64::NAN),
            gamma0: fields.get("gamma0")?.unwrap_or(f64::NAN),
            l0: fields.get("L0")?.unwrap_or(f64::NAN),
            lstar: fields.get("Lstar")?.unwrap_or(0.0),
        };
        if !(params.c > 0.0 && params.c.is_finite()) {
            return Err(fields.error("C", "must be positive"));
        }
        if !(0.0..1.0).contains(&params.p) {
            return Err(fields.error("p", "must lie in [0, 1)"));
        }
        if bounds.contains(&BoundKind::Theorem1) && !(params.lambda > 0.0 && params.lambda.is_finite()) {
            return Err(fields.error("lambda", "theorem1 needs lambda > 0"));
        }
        let nonconvex = bounds.iter().any(|b| matches!(b, BoundKind::Theorem2 | BoundKind::Theorem3));
        if nonconvex {
            for key in ["S", "D", "L0"] {
                if fields.raw(key).is_none() {
                    return Err(fields.error(key, "required by theorem2/theorem3"));
                }
            }
        }
        if bounds.contains(&BoundKind::Theorem3) && fields.raw("gamma0").is_none() {
            return Err(fields.error("gamma0", "required by theorem3"));
        }
        if d.is_none() && bounds.iter().any(|b| matches!(b, BoundKind::SecondMoment | BoundKind::Theorem1)) {
            if fields.raw("D").is_none() {
                return Err(fields.error("D", "give D or d for second_moment/theorem1"));
            }
            if params.d.fract() != 0.0 || params.d < 1.0 {
                return Err(fields.error("D", "must be a positive integer when d is not given"));
            }
        }
        let horizons: Vec<u64> = fields.list("T")?.unwrap();
        Ok(Self {
            params,
            d,
            horizons,
            bounds,
            output: fields.raw("output").map(PathBuf::from),
        })
    }
}
