//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use onebit_gc::config::ExperimentConfig;
use onebit_gc::distribution::{assign_uniform_random, inverse_redundancy_objective, Assignment, RedundancySpec};
use onebit_gc::experiment::{largest_common_bits, load_data, run_all, summarize_at, RunRecord};
use onebit_gc::losses::{
    finite_difference_gradient, generate_regression_data, relative_error, DataSample, Dataset, LossKind,
    LossModel, ParameterVector,
};
use onebit_gc::quantization::{decode_payload, encode_payload, quantize, WorkerPayload};
use onebit_gc::rng::{self, Purpose};
use onebit_gc::simulation::{learning_rate, Coder, LearningRateSchedule, Method};
use onebit_gc::theory::{
    bound_second_moment, bound_theorem2, bound_theorem3, exact_second_moment, TheoryParams,
};

type Outcome = Result<String, String>;

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Tiny instance shared by the first two criteria: n = 2, m = 2, w = 2,
/// both samples on both workers, p = 0.3.
struct Tiny {
    dataset: Dataset,
    model: LossModel,
    assignment: Assignment,
    spec: RedundancySpec,
    beta: ParameterVector,
    p: f64,
}

fn tiny() -> Tiny {
    let (dataset, _) = generate_regression_data(2, 2, 1.0, 0.5, 21).unwrap();
    Tiny {
        dataset,
        model: LossModel::new(LossKind::LinearRegression, 2),
        assignment: Assignment::from_worker_sets(2, vec![vec![0, 1], vec![0, 1]]).unwrap(),
        spec: RedundancySpec::homogeneous(2, 2).unwrap(),
        beta: ParameterVector::standard_normal(2, 22),
        p: 0.3,
    }
}

const DRAWS: u64 = 1_000_000;

fn unbiasedness() -> Outcome {
    let start = Instant::now();
    let t = tiny();
    let coder = Coder::with_assignment(Method::OneBitGc, t.model, &t.dataset, t.assignment.clone(), &t.spec, t.p)
        .map_err(|e| e.to_string())?;
    let encoded = coder.encode_all(&t.beta);
    let target = t.model.total_grad(&t.dataset, &t.beta).map_err(|e| e.to_string())?;
    let mut sum = [0.0; 2];
    let mut sum_sq = [0.0; 2];
    for draw in 0..DRAWS {
        let g = coder.global_update_from(&encoded, 101, draw).map_err(|e| e.to_string())?;
        for k in 0..2 {
            sum[k] += g[k];
            sum_sq[k] += g[k] * g[k];
        }
    }
    let n = DRAWS as f64;
    let mut worst = 0.0f64;
    for k in 0..2 {
        let mean = sum[k] / n;
        let se = ((sum_sq[k] / n - mean * mean) / n).sqrt();
        worst = worst.max((mean - target[k]).abs() / se);
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 4.0 && elapsed < Duration::from_secs(30),
        format!("max |mean - grad| = {worst:.2} SE over {DRAWS} draws, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn exact_moment() -> Outcome {
    let start = Instant::now();
    let t = tiny();
    let coder = Coder::with_assignment(Method::OneBitGc, t.model, &t.dataset, t.assignment.clone(), &t.spec, t.p)
        .map_err(|e| e.to_string())?;
    let encoded = coder.encode_all(&t.beta);
    let exact = exact_second_moment(&encoded, t.p, 2).map_err(|e| e.to_string())?;
    let mut acc = 0.0;
    for draw in 0..DRAWS {
        acc += norm_sq(&coder.global_update_from(&encoded, 202, draw).map_err(|e| e.to_string())?);
    }
    let mc = acc / DRAWS as f64;
    let rel = (mc - exact).abs() / exact;
    let elapsed = start.elapsed();
    verdict(
        rel <= 0.01 && elapsed < Duration::from_secs(30),
        format!("Monte Carlo {mc:.6e} vs exact {exact:.6e}, relative gap {rel:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn bound_consistency() -> Outcome {
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for case in 0..20u64 {
        let mut s = rng::stream(303, Purpose::Oracle, case, 0);
        let m = s.random_range(4..40usize);
        let n = s.random_range(2..12usize);
        let d = s.random_range(1..=n);
        let w = s.random_range(1..8usize);
        let p = s.random_range(0.0..0.6);
        let (dataset, _) = generate_regression_data(m, w, 1.0, 0.5, 1000 + case).unwrap();
        let model = LossModel::new(LossKind::LinearRegression, w);
        let spec = RedundancySpec::homogeneous(m, d).unwrap();
        let assignment = assign_uniform_random(m, n, &spec, 2000 + case).unwrap();
        let beta = ParameterVector::standard_normal(w, 3000 + case);
        let c = model
            .sample_gradients(&dataset, &beta)
            .unwrap()
            .iter()
            .map(|g| norm_sq(g))
            .fold(0.0, f64::max);
        let params = TheoryParams { c, m, n, w, p, ..TheoryParams::default() };
        let bound = bound_second_moment(&params, &spec).map_err(|e| e.to_string())?;
        let coder = Coder::with_assignment(Method::OneBitGc, model, &dataset, assignment, &spec, p).unwrap();
        let encoded = coder.encode_all(&beta);
        let draws = 20_000;
        let mc = (0..draws)
            .map(|t| norm_sq(&coder.global_update_from(&encoded, 4000 + case, t).unwrap()))
            .sum::<f64>()
            / draws as f64;
        if mc > bound {
            violations += 1;
        }
        tightest = tightest.min(bound / mc);
    }
    verdict(
        violations == 0,
        format!("{violations} violations in 20 cases, smallest bound/moment ratio {tightest:.3}"),
    )
}

fn learning_rate_identities() -> Outcome {
    let smooth = [0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 50.0];
    let fracs = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99];
    let steps: [(u64, u64); 10] = [
        (0, 2_000),
        (1, 5_000),
        (2, 10_000),
        (5, 20_000),
        (10, 50_000),
        (100, 100_000),
        (1_000, 1_000_000),
        (10_000, 10_000_000),
        (1_000_000, 100_000_000),
        (100_000_000, 10_000_000_000),
    ];
    let mut worst = 0.0f64;
    let mut combos = 0;
    for &s in &smooth {
        for &frac in &fracs {
            let gamma0 = if s > 0.0 { frac / (2.0 * s) } else { frac };
            for &(t, horizon) in &steps {
                combos += 1;
                let constant = LearningRateSchedule::Constant { smoothness: s, horizon };
                let g = learning_rate(&constant, t).map_err(|e| e.to_string())?;
                let want = (horizon as f64 + 1.0).powf(-0.75);
                worst = worst.max(((g - s * g * g) - want).abs() / want);

                let decaying = LearningRateSchedule::Decaying { smoothness: s, gamma0 };
                let g = learning_rate(&decaying, t).map_err(|e| e.to_string())?;
                let want = (gamma0 - gamma0 * gamma0 * s) / (t as f64 + 1.0).sqrt();
                worst = worst.max(((g - s * g * g) - want).abs() / want);
            }
        }
    }
    let params = TheoryParams {
        c: 50.0,
        s: 2.0,
        m: 100,
        n: 100,
        w: 101,
        p: 0.1,
        d: 10.0,
        gamma0: 0.1,
        l0: 100.0,
        lstar: 0.0,
        ..TheoryParams::default()
    };
    let horizons = [100u64, 10_000, 1_000_000];
    let b2: Vec<f64> = horizons.iter().map(|&h| bound_theorem2(&params, h)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let b3: Vec<f64> = horizons.iter().map(|&h| bound_theorem3(&params, h)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let shrinking = |b: &[f64]| b.iter().all(|v| v.is_finite() && *v > 0.0) && b.windows(2).all(|w| w[1] < w[0]);
    verdict(
        worst <= 1e-12 && shrinking(&b2) && shrinking(&b3),
        format!(
            "max relative residual {worst:.2e} over {combos} combinations; non-convex bounds {:.3e} {:.3e} {:.3e} / {:.3e} {:.3e} {:.3e}",
            b2[0], b2[1], b2[2], b3[0], b3[1], b3[2]
        ),
    )
}

fn gradient_checks() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for kind in [LossKind::LinearRegression, LossKind::Logistic, LossKind::Rosenbrock] {
        let mut worst = 0.0f64;
        for point in 0..100u64 {
            let mut s = rng::stream(505, Purpose::Oracle, kind as u64, point);
            let (dataset, dim) = match kind {
                LossKind::Rosenbrock => {
                    let m = s.random_range(1..8usize);
                    (Dataset::rosenbrock(m), m + 1)
                }
                _ => {
                    let dim = s.random_range(1..10usize);
                    let samples = (0..3)
                        .map(|index| DataSample {
                            features: (0..dim).map(|_| s.sample(StandardNormal)).collect(),
                            label: if kind == LossKind::Logistic {
                                if s.random::<bool>() { 1.0 } else { -1.0 }
                            } else {
                                s.sample(StandardNormal)
                            },
                            index,
                        })
                        .collect();
                    (Dataset::new(samples).unwrap(), dim)
                }
            };
            let model = LossModel::new(kind, dim);
            let beta: Vec<f64> = (0..dim).map(|_| s.sample::<f64, _>(StandardNormal)).collect();
            let pv = ParameterVector::new(beta.clone()).unwrap();
            for sample in dataset.samples() {
                let analytic = model.grad_sample(sample, &pv).unwrap();
                let numeric = finite_difference_gradient(
                    |b| model.loss_sample(sample, &ParameterVector::new(b.to_vec()).unwrap()).unwrap(),
                    &beta,
                    1e-6,
                );
                worst = worst.max(relative_error(&analytic, &numeric, 1e-8));
            }
            let analytic = model.total_grad(&dataset, &pv).unwrap();
            let numeric = finite_difference_gradient(
                |b| model.total_loss(&dataset, &ParameterVector::new(b.to_vec()).unwrap()).unwrap(),
                &beta,
                1e-6,
            );
            worst = worst.max(relative_error(&analytic, &numeric, 1e-8));
        }
        pass &= worst < 1e-5;
        lines.push(format!("{} {worst:.2e}", kind.name()));
    }
    verdict(pass, format!("max relative error per model: {}", lines.join(", ")))
}

fn final_metric(records: &[RunRecord], method: Method, bits: u64) -> (f64, f64, f64, f64) {
    let row = summarize_at(records, method, bits).expect("every run reaches the common bit count");
    (
        row.mean_sqrt_two_loss,
        row.mean_param_error.unwrap_or(f64::NAN),
        row.std_param_error.unwrap_or(f64::NAN),
        row.runs as f64,
    )
}

fn run_config(text: &str) -> Result<(ExperimentConfig, Vec<RunRecord>), String> {
    let config = ExperimentConfig::parse(text).map_err(|e| e.to_string())?;
    let data = load_data(&config.source).map_err(|e| e.to_string())?;
    let records = run_all(&config, &data).map_err(|e| e.to_string())?;
    Ok((config, records))
}

fn method_comparison() -> Outcome {
    let (_, records) = run_config("preset = sec5a\nbit_budget = 256000\n")?;
    let rho_ok = records.iter().all(|r| match r.method {
        Method::Sgc => r.bits_per_iteration == 6400,
        _ => r.bits_per_iteration == 164,
    });
    let seeds = records.iter().filter(|r| r.method == Method::OneBitGc).count();
    let bits = largest_common_bits(&records);
    let (l1, e1, _, _) = final_metric(&records, Method::OneBitGc, bits);
    let (ls, es, _, _) = final_metric(&records, Method::Sgc, bits);
    let (li, ei, _, _) = final_metric(&records, Method::IgnoreStragglers1Bit, bits);
    verdict(
        rho_ok && seeds >= 5 && l1 < ls && l1 < li && e1 < es && e1 < ei,
        format!(
            "{seeds} seeds at {bits} bits: sqrt(2L) {l1:.3e} / {ls:.3e} / {li:.3e}, ||beta-beta*|| {e1:.3e} / {es:.3e} / {ei:.3e} (1-bit GC / SGC / ignore); bits per iteration {}",
            if rho_ok { "164 and 6400" } else { "wrong" }
        ),
    )
}

const D15_BASE: &str = "preset = sec5a\nmethods = onebit_gc\niterations = 1000\n";

fn d15_error(layout: &str, p: f64) -> Result<(f64, f64, f64), String> {
    let (_, records) = run_config(&format!("{D15_BASE}d = {layout}\np = {p}\n"))?;
    let bits = largest_common_bits(&records);
    let (_, err, std, runs) = final_metric(&records, Method::OneBitGc, bits);
    Ok((err, std, runs))
}

fn homogeneity(setting1: (f64, f64, f64)) -> Outcome {
    let layouts = ["15", "10:500,20:500", "5:500,25:500"];
    let s2 = d15_error(layouts[1], 0.1)?;
    let s3 = d15_error(layouts[2], 0.1)?;
    let objective: Vec<f64> = [
        RedundancySpec::homogeneous(1000, 15).unwrap(),
        RedundancySpec::blocks(&[(10, 500), (20, 500)]).unwrap(),
        RedundancySpec::blocks(&[(5, 500), (25, 500)]).unwrap(),
    ]
    .iter()
    .map(inverse_redundancy_objective)
    .collect();
    verdict(
        setting1.0 <= s2.0 && setting1.0 <= s3.0 && objective[0] < objective[1] && objective[1] < objective[2],
        format!(
            "mean ||beta-beta*|| over {} seeds: {:.4e} / {:.4e} / {:.4e}; sum 1/d_i: {:.2} / {:.2} / {:.2}",
            setting1.2, setting1.0, s2.0, s3.0, objective[0], objective[1], objective[2]
        ),
    )
}

fn straggler_trend(at_01: (f64, f64, f64)) -> Outcome {
    let ps = [0.05, 0.1, 0.2, 0.3];
    let mut stats = Vec::new();
    for &p in &ps {
        stats.push(if p == 0.1 { at_01 } else { d15_error("15", p)? });
    }
    let mut ties = 0;
    let mut broken = 0;
    for pair in stats.windows(2) {
        let ((a, sa, na), (b, sb, nb)) = (pair[0], pair[1]);
        if b < a {
            let noise = 2.0 * (sa * sa / na + sb * sb / nb).sqrt();
            if a - b <= noise {
                ties += 1;
            } else {
                broken += 1;
            }
        }
    }
    let errs: Vec<String> = ps.iter().zip(&stats).map(|(p, s)| format!("p={p}: {:.4e}", s.0)).collect();
    verdict(
        broken == 0 && ties <= 1,
        format!("final ||beta-beta*|| {}; {ties} noisy ties", errs.join(", ")),
    )
}

fn rosenbrock() -> Outcome {
    let (_, records) = run_config(
        "preset = sec5b-rosenbrock\nm = 100\niterations = 2000\nmethods = onebit_gc,ignore_stragglers\n",
    )?;
    let mean = |method: Method, pick: &dyn Fn(&RunRecord) -> f64| {
        let v: Vec<f64> = records.iter().filter(|r| r.method == method).map(pick).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let initial = mean(Method::OneBitGc, &|r| r.outcome.rows[0].loss);
    let final_1bit = mean(Method::OneBitGc, &|r| r.outcome.last().loss);
    let any_1bit_diverged = records.iter().any(|r| r.method == Method::OneBitGc && r.outcome.diverged());
    let ignore_diverged = records
        .iter()
        .any(|r| r.method == Method::IgnoreStragglers1Bit && r.outcome.diverged());
    let final_ignore = mean(Method::IgnoreStragglers1Bit, &|r| r.outcome.last().loss);
    let reduced = !any_1bit_diverged && final_1bit <= 0.5 * initial;
    verdict(
        reduced && (ignore_diverged || final_ignore > final_1bit),
        format!(
            "1-bit GC loss {initial:.4e} -> {final_1bit:.4e}; ignore-stragglers {}",
            if ignore_diverged { "diverged".to_string() } else { format!("ends at {final_ignore:.4e}") }
        ),
    )
}

fn determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_onebit-gc");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "preset = sec5a\nm = 200\nn = 20\nd = 4\niterations = 60\nseeds = 1..2\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let status = Command::new(exe)
            .args(["--quiet", "run"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("run exited with {status}"));
        }
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .map_err(|e| e.to_string())?
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    let traces = outputs[0].iter().filter(|(n, _)| n.starts_with("trace_")).count();
    let identical = outputs[0] == outputs[1];

    let mut mismatches = 0;
    for k in 0..100_000u64 {
        let mut s = rng::stream(1010, Purpose::Oracle, k, 0);
        let w = s.random_range(1..300usize);
        let payload = if k % 10 == 0 {
            let signs: Vec<bool> = (0..w).map(|_| s.random()).collect();
            WorkerPayload::from_signs(&signs, s.random_range(0.0..1e6)).unwrap()
        } else {
            let f: Vec<f64> = (0..w).map(|_| s.sample(StandardNormal)).collect();
            quantize(&f, &mut s).unwrap()
        };
        match decode_payload(&encode_payload(&payload), w) {
            Ok(back) if back == payload => {}
            _ => mismatches += 1,
        }
    }
    verdict(
        identical && traces == 6 && mismatches == 0,
        format!(
            "{traces} trace files {}; {mismatches} codec mismatches in 100000 payloads",
            if identical { "byte-identical" } else { "differ" }
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail}");
            }
        }
    };
    report(1, "unbiased global update", unbiasedness());
    report(2, "exact second moment", exact_moment());
    report(3, "second-moment bound", bound_consistency());
    report(4, "learning-rate identities and bound decay", learning_rate_identities());
    report(5, "gradient finite differences", gradient_checks());
    report(6, "method comparison at equal bits", method_comparison());
    let setting1 = d15_error("15", 0.1);
    report(
        7,
        "homogeneous redundancy",
        setting1.clone().and_then(homogeneity),
    );
    report(8, "straggler probability trend", setting1.and_then(straggler_trend));
    report(9, "Rosenbrock", rosenbrock());
    report(10, "determinism and codec", determinism());
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
