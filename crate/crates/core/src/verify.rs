//! Self-checks run by `onebit-gc verify`: quick Monte Carlo and analytic
//! comparisons that exercise the quantizer, the coder, the learning-rate
//! rules, the loss gradients and the payload codec.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distribution::{Assignment, RedundancySpec};
use crate::error::Result;
use crate::losses::{
    finite_difference_gradient, generate_regression_data, relative_error, DataSample, Dataset, LossKind,
    LossModel, ParameterVector,
};
use crate::quantization::{decode_payload, dequantize, encode_payload, quantize};
use crate::rng::{self, Purpose};
use crate::simulation::{learning_rate, Coder, LearningRateSchedule, Method};
use crate::theory::exact_second_moment;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Mean of many quantizer outputs against the input, coordinate-wise.
pub fn quantizer_unbiasedness(draws: usize) -> Result<Check> {
    let f = [0.8, -1.5, 0.1, 0.0, 2.2];
    let mut sum = [0.0; 5];
    let mut sum_sq = [0.0; 5];
    for k in 0..draws {
        let q = dequantize(&quantize(&f, &mut rng::stream(7, Purpose::Oracle, k as u64, 0))?);
        for c in 0..5 {
            sum[c] += q[c];
            sum_sq[c] += q[c] * q[c];
        }
    }
    let n = draws as f64;
    let mut worst = 0.0f64;
    for c in 0..5 {
        let mean = sum[c] / n;
        let se = ((sum_sq[c] / n - mean * mean).max(0.0) / n).sqrt();
        worst = worst.max((mean - f[c]).abs() / se.max(1e-300));
    }
    Ok(check(
        "quantizer unbiased",
        worst <= 5.0,
        format!("largest deviation {worst:.2} standard errors over {draws} draws"),
    ))
}

fn small_problem() -> Result<(Dataset, LossModel, Assignment, RedundancySpec, ParameterVector)> {
    let (ds, _) = generate_regression_data(6, 3, 1.0, 0.5, 2)?;
    let model = LossModel::new(LossKind::LinearRegression, 3);
    let spec = RedundancySpec::homogeneous(6, 2)?;
    let assignment = Assignment::from_worker_sets(
        6,
        vec![vec![0, 1, 2], vec![3, 4, 5], vec![0, 2, 4], vec![1, 3, 5]],
    )?;
    let beta = ParameterVector::standard_normal(3, 4);
    Ok((ds, model, assignment, spec, beta))
}

/// Monte Carlo second moment of the global update against its exact value.
pub fn second_moment_matches(draws: u64) -> Result<Check> {
    let (ds, model, assignment, spec, beta) = small_problem()?;
    let p = 0.25;
    let coder = Coder::with_assignment(Method::OneBitGc, model, &ds, assignment, &spec, p)?;
    let encoded = coder.encode_all(&beta);
    let exact = exact_second_moment(&encoded, p, 3)?;
    let mut acc = 0.0;
    for t in 0..draws {
        let g = coder.global_update_from(&encoded, 99, t)?;
        acc += g.iter().map(|v| v * v).sum::<f64>();
    }
    let mc = acc / draws as f64;
    let rel = (mc - exact).abs() / exact;
    Ok(check(
        "second moment",
        rel < 0.02,
        format!("Monte Carlo {mc:.6e} vs exact {exact:.6e} (relative gap {rel:.2e})"),
    ))
}

/// Defining identities of the constant and decaying learning rates.
pub fn schedule_identities() -> Result<Check> {
    let mut worst = 0.0f64;
    for &s in &[0.0, 0.5, 2.0, 10.0] {
        for &horizon in &[100u64, 10_000, 1_000_000] {
            let sched = LearningRateSchedule::Constant { smoothness: s, horizon };
            if sched.validate().is_err() {
                continue;
            }
            let g = learning_rate(&sched, 0)?;
            let want = (horizon as f64 + 1.0).powf(-0.75);
            worst = worst.max(((g - g * g * s) - want).abs() / want);
        }
        let gamma0 = if s > 0.0 { 0.4 / s } else { 0.3 };
        let sched = LearningRateSchedule::Decaying { smoothness: s, gamma0 };
        for t in [0u64, 1, 10, 1000] {
            let g = learning_rate(&sched, t)?;
            let want = (gamma0 - gamma0 * gamma0 * s) / (t as f64 + 1.0).sqrt();
            worst = worst.max(((g - g * g * s) - want).abs() / want);
        }
    }
    Ok(check(
        "learning-rate identities",
        worst <= 1e-12,
        format!("largest relative residual {worst:.2e}"),
    ))
}

/// Analytic per-sample gradients of every model against central differences.
pub fn gradients_match_finite_differences(points: usize) -> Result<Check> {
    let mut worst = 0.0f64;
    for kind in [LossKind::LinearRegression, LossKind::Logistic, LossKind::Rosenbrock] {
        for k in 0..points {
            let mut s = rng::stream(13, Purpose::Oracle, kind as u64, k as u64);
            let (sample, dim) = match kind {
                LossKind::Rosenbrock => {
                    let m = 4;
                    let i = s.random_range(0..m);
                    (Dataset::rosenbrock(m).sample(i).clone(), m + 1)
                }
                _ => {
                    let features: Vec<f64> = (0..4).map(|_| s.sample(StandardNormal)).collect();
                    let label = if kind == LossKind::Logistic {
                        if s.random::<bool>() { 1.0 } else { -1.0 }
                    } else {
                        s.sample(StandardNormal)
                    };
                    (DataSample { features, label, index: 0 }, 4)
                }
            };
            let model = LossModel::new(kind, dim);
            let beta: Vec<f64> = (0..dim).map(|_| s.sample::<f64, _>(StandardNormal)).collect();
            let analytic = model.grad_sample(&sample, &ParameterVector::new(beta.clone())?)?;
            let numeric = finite_difference_gradient(
                |b| model.loss_unchecked(&sample, b),
                &beta,
                1e-6,
            );
            worst = worst.max(relative_error(&analytic, &numeric, 1e-8));
        }
    }
    Ok(check(
        "gradients vs finite differences",
        worst < 1e-5,
        format!("largest relative error {worst:.2e} over {points} points per model"),
    ))
}

/// Encode then decode random payloads.
pub fn codec_round_trip(cases: usize) -> Result<Check> {
    let mut failures = 0usize;
    for k in 0..cases {
        let mut s = rng::stream(17, Purpose::Oracle, k as u64, 1);
        let w = s.random_range(1..200usize);
        let f: Vec<f64> = (0..w).map(|_| s.sample(StandardNormal)).collect();
        let payload = quantize(&f, &mut s)?;
        let back = decode_payload(&encode_payload(&payload), w)?;
        if back != payload {
            failures += 1;
        }
    }
    Ok(check(
        "payload codec round trip",
        failures == 0,
        format!("{failures} mismatches in {cases} payloads"),
    ))
}

/// The full self-check suite.
pub fn run_all() -> Result<Vec<Check>> {
    Ok(vec![
        quantizer_unbiasedness(100_000)?,
        second_moment_matches(100_000)?,
        schedule_identities()?,
        gradients_match_finite_differences(100)?,
        codec_round_trip(10_000)?,
    ])
}
