//! Running configured experiments and writing their CSV output.
//!
//! Every `(method, seed)` pair is an independent run, so runs execute in
//! parallel; output is identical to a sequential execution because each run
//! draws only from its own seeded streams.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{BoundKind, BoundsConfig, DatasetSource, ExperimentConfig, RunLength};
use crate::distribution::RedundancySpec;
use crate::error::{Error, Result};
use crate::idx::load_idx_subset;
use crate::losses::{generate_regression_data, Dataset, LossModel, ParameterVector};
use crate::quantization::BitBudget;
use crate::simulation::{run, Method, RunOutcome, SimConfig, TraceRow};
use crate::theory;

pub const TRACE_HEADER: &str = "method,seed,t,cumulative_bits,loss,sqrt_two_loss,param_error,grad_norm_sq";
pub const SUMMARY_HEADER: &str =
    "method,cumulative_bits,runs,mean_loss,mean_sqrt_two_loss,std_sqrt_two_loss,mean_param_error,std_param_error";
pub const RUNS_HEADER: &str = "method,seed,iterations,bits_per_iteration,diverged_at,max_sample_grad_sq";

/// Dataset, model and (for synthetic data) the generating parameters.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub model: LossModel,
    pub beta_star: Option<ParameterVector>,
}

pub fn load_data(source: &DatasetSource) -> Result<LoadedData> {
    let kind = source.loss_kind();
    let (dataset, beta_star) = match source {
        DatasetSource::SyntheticRegression {
            m,
            feature_dim,
            feature_std,
            noise_std,
            data_seed,
        } => {
            let (ds, star) = generate_regression_data(*m, *feature_dim, *feature_std, *noise_std, *data_seed)?;
            (ds, Some(star))
        }
        DatasetSource::Rosenbrock { m } => (Dataset::rosenbrock(*m), None),
        DatasetSource::Idx {
            images,
            labels,
            class_a,
            class_b,
            subset_m,
            data_seed,
        } => (
            load_idx_subset(images, labels, *class_a, *class_b, *subset_m, *data_seed)?,
            None,
        ),
    };
    let dim = match kind {
        crate::losses::LossKind::Rosenbrock => dataset.m() + 1,
        _ => dataset.feature_len(),
    };
    let model = LossModel::new(kind, dim);
    model.check_dataset(&dataset)?;
    Ok(LoadedData {
        dataset,
        model,
        beta_star,
    })
}

/// Simulation settings of one run.
pub fn sim_config(config: &ExperimentConfig, data: &LoadedData, method: Method, seed: u64) -> Result<SimConfig> {
    let budget = BitBudget::new(data.model.dim as u64, config.zeta)?;
    let rho = crate::quantization::payload_bits(method, budget);
    let iterations = config.length.iterations(rho);
    let sim = SimConfig {
        method,
        model: data.model,
        spec: config.d.resolve(data.dataset.m())?,
        n: config.n,
        p: config.p,
        schedule: config.schedule.for_horizon(iterations),
        iterations,
        seed,
        budget,
        init: config.init.clone(),
    };
    sim.validate()?;
    Ok(sim)
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub iterations: u64,
    pub bits_per_iteration: u64,
    pub outcome: RunOutcome,
}

/// Execute every `(method, seed)` run of `config`.
pub fn run_all(config: &ExperimentConfig, data: &LoadedData) -> Result<Vec<RunRecord>> {
    let jobs: Vec<(Method, u64)> = config
        .methods
        .iter()
        .flat_map(|&m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let sims = jobs
        .iter()
        .map(|&(method, seed)| sim_config(config, data, method, seed))
        .collect::<Result<Vec<_>>>()?;
    let star = data.beta_star.as_ref().map(|b| b.as_slice());
    sims.par_iter()
        .map(|sim| {
            Ok(RunRecord {
                method: sim.method,
                seed: sim.seed,
                iterations: sim.iterations,
                bits_per_iteration: sim.bits_per_iteration(),
                outcome: run(sim, &data.dataset, star)?,
            })
        })
        .collect()
}

fn sci(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn trace_csv(method: Method, seed: u64, rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(96 * (rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let err = r.param_error.map(sci).unwrap_or_default();
        let _ = writeln!(
            out,
            "{method},{seed},{},{},{},{},{err},{}",
            r.t,
            r.cumulative_bits,
            sci(r.loss),
            sci(r.sqrt_two_loss),
            sci(r.grad_norm_sq)
        );
    }
    out
}

pub fn trace_file_name(method: Method, seed: u64) -> String {
    format!("trace_{method}_seed{seed}.csv")
}

/// Last trace row sent within `bits`, or `None` once `bits` lies past the
/// end of the run.
pub fn row_at_bits(rows: &[TraceRow], bits: u64) -> Option<&TraceRow> {
    let last = rows.last()?;
    if bits > last.cumulative_bits {
        return None;
    }
    let k = rows.partition_point(|r| r.cumulative_bits <= bits);
    rows.get(k.checked_sub(1)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub cumulative_bits: u64,
    pub runs: usize,
    pub mean_loss: f64,
    pub mean_sqrt_two_loss: f64,
    pub std_sqrt_two_loss: f64,
    pub mean_param_error: Option<f64>,
    pub std_param_error: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate the runs of one method at a given bit count. Runs that ended
/// before `bits` do not contribute.
pub fn summarize_at(records: &[RunRecord], method: Method, bits: u64) -> Option<SummaryRow> {
    let rows: Vec<&TraceRow> = records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| row_at_bits(&r.outcome.rows, bits))
        .collect();
    if rows.is_empty() {
        return None;
    }
    let losses: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let s2l: Vec<f64> = rows.iter().map(|r| r.sqrt_two_loss).collect();
    let errs: Option<Vec<f64>> = rows.iter().map(|r| r.param_error).collect();
    let (mean_sqrt_two_loss, std_sqrt_two_loss) = mean_std(&s2l);
    let err_stats = errs.map(|e| mean_std(&e));
    Some(SummaryRow {
        method,
        cumulative_bits: bits,
        runs: rows.len(),
        mean_loss: mean_std(&losses).0,
        mean_sqrt_two_loss,
        std_sqrt_two_loss,
        mean_param_error: err_stats.map(|s| s.0),
        std_param_error: err_stats.map(|s| s.1),
    })
}

/// Largest bit count reached by every run of every listed method.
pub fn largest_common_bits(records: &[RunRecord]) -> u64 {
    records
        .iter()
        .map(|r| r.outcome.last().cumulative_bits)
        .min()
        .unwrap_or(0)
}

/// Summary on an evenly spaced grid of `points` bit counts from the longest
/// run's budget down to its first step.
pub fn summarize(records: &[RunRecord], methods: &[Method], points: usize) -> Vec<SummaryRow> {
    let top = records
        .iter()
        .map(|r| r.outcome.last().cumulative_bits)
        .max()
        .unwrap_or(0);
    let mut grid: Vec<u64> = (0..=points as u64).map(|k| top * k / points as u64).collect();
    grid.push(largest_common_bits(records));
    grid.sort_unstable();
    grid.dedup();
    methods
        .iter()
        .flat_map(|&m| grid.iter().filter_map(move |&b| summarize_at(records, m, b)))
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(sci).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.cumulative_bits,
            r.runs,
            sci(r.mean_loss),
            sci(r.mean_sqrt_two_loss),
            sci(r.std_sqrt_two_loss),
            opt(r.mean_param_error),
            opt(r.std_param_error)
        );
    }
    out
}

pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::new();
    out.push_str(RUNS_HEADER);
    out.push('\n');
    for r in records {
        let diverged = r.outcome.diverged_at.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{diverged},{}",
            r.method,
            r.seed,
            r.iterations,
            r.bits_per_iteration,
            sci(r.outcome.max_sample_grad_sq)
        );
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(Error::from)
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub output: PathBuf,
}

impl ExperimentReport {
    pub fn diverged(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.outcome.diverged())
    }
}

/// Load data, run everything and write `trace_*.csv`, `runs.csv` and
/// `summary.csv` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let data = load_data(&config.source)?;
    let records = run_all(config, &data)?;
    fs::create_dir_all(&config.output)?;
    for r in &records {
        write(
            &config.output.join(trace_file_name(r.method, r.seed)),
            &trace_csv(r.method, r.seed, &r.outcome.rows),
        )?;
    }
    let summary = summarize(&records, &config.methods, config.summary_points);
    write(&config.output.join("summary.csv"), &summary_csv(&summary))?;
    write(&config.output.join("runs.csv"), &runs_csv(&records))?;
    Ok(ExperimentReport {
        records,
        summary,
        output: config.output.clone(),
    })
}

/// Replace the run length while keeping everything else.
pub fn with_length(config: &ExperimentConfig, length: RunLength) -> ExperimentConfig {
    ExperimentConfig {
        length,
        ..config.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub bound: BoundKind,
    pub horizon: Option<u64>,
    pub value: f64,
}

pub fn bounds_table(config: &BoundsConfig) -> Result<Vec<BoundRow>> {
    let params = &config.params;
    let spec = || -> Result<RedundancySpec> {
        match &config.d {
            Some(layout) => layout.resolve(params.m),
            None => RedundancySpec::homogeneous(params.m, params.d as usize),
        }
    };
    let mut rows = Vec::new();
    for &bound in &config.bounds {
        match bound {
            BoundKind::SecondMoment => rows.push(BoundRow {
                bound,
                horizon: None,
                value: theory::bound_second_moment(params, &spec()?)?,
            }),
            _ => {
                for &t in &config.horizons {
                    let value = match bound {
                        BoundKind::Theorem1 => theory::bound_theorem1(params, &spec()?, t)?,
                        BoundKind::Theorem2 => theory::bound_theorem2(params, t)?,
                        BoundKind::Theorem3 => theory::bound_theorem3(params, t)?,
                        BoundKind::SecondMoment => unreachable!(),
                    };
                    rows.push(BoundRow {
                        bound,
                        horizon: Some(t),
                        value,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn bounds_csv(rows: &[BoundRow]) -> String {
    let mut out = String::from("bound,T,value\n");
    for r in rows {
        let t = r.horizon.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{t},{}", r.bound.name(), sci(r.value));
    }
    out
}
