//! Data-distribution stage: replicate each sample onto `d_i` workers.
//!
//! A pair-wise balanced layout has exactly `d_i * d_k / n` workers holding
//! both samples `i` and `k`. No deterministic construction is used here;
//! each sample instead picks a uniformly random `d_i`-subset of workers,
//! which meets the balance condition in expectation.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Pairs examined by [`verify_pairwise_balance`] when `m` is too large for
/// the exhaustive pass.
const SAMPLED_PAIRS: usize = 2_000_000;
const EXHAUSTIVE_LIMIT: usize = 2000;

/// Replication factor `d_i` of every sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RedundancySpec {
    d: Vec<usize>,
}

impl RedundancySpec {
    pub fn new(d: Vec<usize>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::invalid("redundancy spec is empty"));
        }
        if let Some(i) = d.iter().position(|&x| x == 0) {
            return Err(Error::invalid(format!("d[{i}] must be at least 1")));
        }
        Ok(Self { d })
    }

    /// `d_i = d` for all `m` samples.
    pub fn homogeneous(m: usize, d: usize) -> Result<Self> {
        Self::new(vec![d; m])
    }

    /// Consecutive blocks `(d, count)`, e.g. `[(10, 500), (20, 500)]`.
    pub fn blocks(blocks: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            blocks
                .iter()
                .flat_map(|&(d, count)| std::iter::repeat_n(d, count))
                .collect(),
        )
    }

    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn d(&self, i: usize) -> usize {
        self.d[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.d
    }

    pub fn max(&self) -> usize {
        self.d.iter().copied().max().unwrap_or(0)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.d.windows(2).all(|w| w[0] == w[1])
    }

    /// Check `d_i <= n` for every sample.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        match self.d.iter().position(|&x| x > n) {
            Some(i) => Err(Error::invalid(format!(
                "d[{i}] = {} exceeds the worker count {n}",
                self.d[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Mean replication `(1/m) sum_i d_i`.
pub fn average_redundancy(spec: &RedundancySpec) -> f64 {
    spec.d.iter().map(|&d| d as f64).sum::<f64>() / spec.m() as f64
}

/// `sum_i 1/d_i`, the only spec-dependent term of the strongly convex bound.
pub fn inverse_redundancy_objective(spec: &RedundancySpec) -> f64 {
    spec.d.iter().map(|&d| 1.0 / d as f64).sum()
}

/// Realized placement: `worker_sets[j]` is the sorted list of samples on
/// worker `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    worker_sets: Vec<Vec<usize>>,
    sample_counts: Vec<usize>,
    m: usize,
}

impl Assignment {
    /// Build an assignment from explicit worker sets over `m` samples.
    pub fn from_worker_sets(m: usize, mut worker_sets: Vec<Vec<usize>>) -> Result<Self> {
        if worker_sets.is_empty() {
            return Err(Error::invalid("assignment needs at least one worker"));
        }
        let mut sample_counts = vec![0usize; m];
        for (j, set) in worker_sets.iter_mut().enumerate() {
            set.sort_unstable();
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("worker {j} holds a sample twice")));
            }
            for &i in set.iter() {
                if i >= m {
                    return Err(Error::invalid(format!(
                        "worker {j} holds sample {i}, but m = {m}"
                    )));
                }
                sample_counts[i] += 1;
            }
        }
        Ok(Self {
            worker_sets,
            sample_counts,
            m,
        })
    }

    pub fn n(&self) -> usize {
        self.worker_sets.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn worker_set(&self, j: usize) -> &[usize] {
        &self.worker_sets[j]
    }

    pub fn worker_sets(&self) -> &[Vec<usize>] {
        &self.worker_sets
    }

    /// Realized `d_i`.
    pub fn sample_counts(&self) -> &[usize] {
        &self.sample_counts
    }

    /// True when the realized counts equal `spec` exactly.
    pub fn matches(&self, spec: &RedundancySpec) -> bool {
        self.sample_counts == spec.d
    }

    /// Per-sample worker membership as bitsets.
    fn membership(&self) -> Vec<Vec<u64>> {
        let words = self.n().div_ceil(64);
        let mut bits = vec![vec![0u64; words]; self.m];
        for (j, set) in self.worker_sets.iter().enumerate() {
            for &i in set {
                bits[i][j / 64] |= 1u64 << (j % 64);
            }
        }
        bits
    }

    /// Number of workers holding both `i` and `k`.
    pub fn overlap(&self, i: usize, k: usize) -> usize {
        self.worker_sets
            .iter()
            .filter(|s| s.binary_search(&i).is_ok() && s.binary_search(&k).is_ok())
            .count()
    }

    /// Parse the text form produced by `Display` (one line per worker).
    pub fn from_text(m: usize, text: &str) -> Result<Self> {
        let sets = text
            .lines()
            .enumerate()
            .map(|(line, l)| {
                l.split_whitespace()
                    .map(|tok| {
                        tok.parse::<usize>().map_err(|e| Error::Parse {
                            line: line + 1,
                            message: format!("bad sample index {tok:?}: {e}"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_worker_sets(m, sets)
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for set in &self.worker_sets {
            let mut first = true;
            for i in set {
                if !first {
                    f.write_str(" ")?;
                }
                write!(f, "{i}")?;
                first = false;
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

/// Place each sample on a uniformly random `d_i`-subset of the `n` workers,
/// independently across samples.
pub fn assign_uniform_random(m: usize, n: usize, spec: &RedundancySpec, seed: u64) -> Result<Assignment> {
    if n == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    if spec.m() != m {
        return Err(Error::invalid(format!(
            "spec covers {} samples, dataset has {m}",
            spec.m()
        )));
    }
    spec.validate_for(n)?;

    let mut stream = rng::stream(seed, Purpose::Assign, 0, 0);
    let mut workers: Vec<usize> = (0..n).collect();
    let mut sets = vec![Vec::new(); n];
    for (i, &d) in spec.as_slice().iter().enumerate() {
        // partial Fisher-Yates: the first d slots become a uniform d-subset
        workers.iter_mut().enumerate().for_each(|(k, w)| *w = k);
        for slot in 0..d {
            let pick = stream.random_range(slot..n);
            workers.swap(slot, pick);
            sets[workers[slot]].push(i);
        }
    }
    Assignment::from_worker_sets(m, sets)
}

/// Pairwise overlap statistics against the balanced target `d_i d_k / n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapStats {
    pub pairs: u64,
    pub mean_overlap: f64,
    pub mean_target: f64,
    /// Largest `|overlap - d_i d_k / n|` over the examined pairs.
    pub max_deviation: f64,
    /// Standard error of `mean_overlap - mean_target`.
    pub std_error: f64,
    pub exhaustive: bool,
}

/// Compare realized pair overlaps with `d_i d_k / n`. All pairs are examined
/// for `m <= 2000`, a fixed random sample of pairs otherwise.
pub fn verify_pairwise_balance(assignment: &Assignment, spec: &RedundancySpec) -> OverlapStats {
    let m = assignment.m();
    let n = assignment.n() as f64;
    let bits = assignment.membership();
    let overlap = |i: usize, k: usize| -> u32 {
        bits[i]
            .iter()
            .zip(&bits[k])
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    };

    let mut pairs = 0u64;
    let (mut sum_o, mut sum_t, mut sum_dev, mut sum_dev2, mut max_dev) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    let mut visit = |i: usize, k: usize| {
        let o = overlap(i, k) as f64;
        let target = spec.d(i) as f64 * spec.d(k) as f64 / n;
        let dev = o - target;
        pairs += 1;
        sum_o += o;
        sum_t += target;
        sum_dev += dev;
        sum_dev2 += dev * dev;
        max_dev = max_dev.max(dev.abs());
    };

    let exhaustive = m <= EXHAUSTIVE_LIMIT;
    if exhaustive {
        for i in 0..m {
            for k in i + 1..m {
                visit(i, k);
            }
        }
    } else {
        let mut stream = rng::stream(0, Purpose::Oracle, m as u64, assignment.n() as u64);
        for _ in 0..SAMPLED_PAIRS {
            let i = stream.random_range(0..m);
            let mut k = stream.random_range(0..m - 1);
            if k >= i {
                k += 1;
            }
            visit(i, k);
        }
    }

    if pairs == 0 {
        return OverlapStats {
            pairs: 0,
            mean_overlap: 0.0,
            mean_target: 0.0,
            max_deviation: 0.0,
            std_error: 0.0,
            exhaustive,
        };
    }
    let count = pairs as f64;
    let mean_dev = sum_dev / count;
    let var = (sum_dev2 / count - mean_dev * mean_dev).max(0.0);
    OverlapStats {
        pairs,
        mean_overlap: sum_o / count,
        mean_target: sum_t / count,
        max_deviation: max_dev,
        std_error: (var / count).sqrt(),
        exhaustive,
    }
}
