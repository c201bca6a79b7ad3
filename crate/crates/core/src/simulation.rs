//! The learning stage.
//!
//! One iteration `t` of every method:
//!
//! 1. draw the straggler mask (`true` = worker responds), each worker
//!    independently straggling with probability `p`;
//! 2. every responsive worker `j` forms
//!    `f_j = sum_{i in S_j} grad L(a_i, beta_t) / (d_i (1 - p))`;
//! 3. 1-bit methods quantize `f_j` to signs plus `||f_j||`; SGC sends `f_j`;
//! 4. the global update is the sum of the received (decoded) vectors;
//! 5. `beta_{t+1} = beta_t - gamma_t * g_t`.
//!
//! Randomness for step 1 comes from the stream `(seed, Straggler, t, 0)` and
//! for step 3 from `(seed, Quantize, t, j)`, so results never depend on the
//! order in which workers are evaluated.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::distribution::{assign_uniform_random, Assignment, RedundancySpec};
use crate::error::{Error, Result};
use crate::losses::{Dataset, LossModel, ParameterVector};
use crate::quantization::{self, payload_bits, BitBudget, WorkerPayload};
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Redundant placement, 1-bit payloads.
    OneBitGc,
    /// Redundant placement, real-valued payloads.
    Sgc,
    /// No redundancy (`d_i = 1`), 1-bit payloads.
    IgnoreStragglers1Bit,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::OneBitGc, Method::Sgc, Method::IgnoreStragglers1Bit];

    pub fn name(self) -> &'static str {
        match self {
            Method::OneBitGc => "onebit_gc",
            Method::Sgc => "sgc",
            Method::IgnoreStragglers1Bit => "ignore_stragglers",
        }
    }

    pub fn is_quantized(self) -> bool {
        !matches!(self, Method::Sgc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "onebit_gc" | "1bit_gc" | "one_bit_gc" => Ok(Method::OneBitGc),
            "sgc" => Ok(Method::Sgc),
            "ignore_stragglers" | "ignore_stragglers_1bit" => Ok(Method::IgnoreStragglers1Bit),
            other => Err(Error::config("method", format!("unknown method {other:?}"))),
        }
    }
}

/// Step-size rules.
///
/// `Constant` and `Decaying` both pick the smaller root of
/// `gamma - gamma^2 S = c`, namely `(1 - sqrt(1 - 4 S c)) / (2 S)`, with
/// `c = (T + 1)^(-3/4)` and `c = (gamma0 - gamma0^2 S) / sqrt(t + 1)`
/// respectively. The root is evaluated as `2c / (1 + sqrt(1 - 4 S c))`,
/// which is the same number without cancellation and stays defined at
/// `S = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LearningRateSchedule {
    /// `gamma_t = 1 / (lambda t)`, `t >= 1`.
    InverseLambdaT { lambda: f64 },
    /// Fixed step tuned to the horizon `T` and smoothness `S`.
    Constant { smoothness: f64, horizon: u64 },
    /// Step decaying like `1/sqrt(t + 1)`; requires `gamma0 < 1 / (2 S)`.
    Decaying { smoothness: f64, gamma0: f64 },
    FixedGamma { gamma: f64 },
}

fn smaller_root(smoothness: f64, c: f64) -> Result<f64> {
    let disc = 1.0 - 4.0 * smoothness * c;
    if disc < 0.0 {
        return Err(Error::config(
            "schedule",
            format!("discriminant 1 - 4Sc = {disc} is negative"),
        ));
    }
    Ok(2.0 * c / (1.0 + disc.sqrt()))
}

impl LearningRateSchedule {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            LearningRateSchedule::InverseLambdaT { lambda } => {
                if !(lambda.is_finite() && lambda > 0.0) {
                    return Err(Error::config("lambda", "must be positive"));
                }
            }
            LearningRateSchedule::Constant { smoothness, horizon } => {
                if !finite_nonneg(smoothness) {
                    return Err(Error::config("S", "must be finite and nonnegative"));
                }
                let c = (horizon as f64 + 1.0).powf(-0.75);
                if 1.0 - 4.0 * smoothness * c < 0.0 {
                    return Err(Error::config(
                        "T",
                        format!("constant rate needs T >= (4S)^(4/3) - 1, got T = {horizon}"),
                    ));
                }
            }
            LearningRateSchedule::Decaying { smoothness, gamma0 } => {
                if !finite_nonneg(smoothness) {
                    return Err(Error::config("S", "must be finite and nonnegative"));
                }
                if !(gamma0.is_finite() && gamma0 > 0.0) {
                    return Err(Error::config("gamma0", "must be positive"));
                }
                if 2.0 * smoothness * gamma0 >= 1.0 {
                    return Err(Error::config("gamma0", "must be below 1 / (2S)"));
                }
            }
            LearningRateSchedule::FixedGamma { gamma } => {
                if !finite_nonneg(gamma) {
                    return Err(Error::config("gamma", "must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }

    /// Rate used by the `k`-th parameter update (`k >= 1`).
    ///
    /// `1/(lambda t)` is indexed from `t = 1`, the decaying rule from
    /// `t = 0` (its first step is `gamma0`).
    pub fn rate_for_update(&self, k: u64) -> Result<f64> {
        match self {
            LearningRateSchedule::Decaying { .. } => learning_rate(self, k.saturating_sub(1)),
            _ => learning_rate(self, k),
        }
    }
}

/// `gamma_t` of `schedule`. `Constant` and `FixedGamma` ignore `t`.
pub fn learning_rate(schedule: &LearningRateSchedule, t: u64) -> Result<f64> {
    schedule.validate()?;
    match *schedule {
        LearningRateSchedule::InverseLambdaT { lambda } => {
            if t == 0 {
                return Err(Error::config("t", "1/(lambda t) is defined for t >= 1"));
            }
            Ok(1.0 / (lambda * t as f64))
        }
        LearningRateSchedule::Constant { smoothness, horizon } => {
            smaller_root(smoothness, (horizon as f64 + 1.0).powf(-0.75))
        }
        LearningRateSchedule::Decaying { smoothness, gamma0 } => {
            let c = (gamma0 - gamma0 * gamma0 * smoothness) / (t as f64 + 1.0).sqrt();
            smaller_root(smoothness, c)
        }
        LearningRateSchedule::FixedGamma { gamma } => Ok(gamma),
    }
}

/// Where the initial parameters come from.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialParams {
    /// i.i.d. standard normal entries from the run seed.
    StandardNormal,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub method: Method,
    pub model: LossModel,
    /// Replication for the redundant methods. Ignored (replaced by
    /// `d_i = 1`) for [`Method::IgnoreStragglers1Bit`].
    pub spec: RedundancySpec,
    pub n: usize,
    pub p: f64,
    pub schedule: LearningRateSchedule,
    pub iterations: u64,
    pub seed: u64,
    pub budget: BitBudget,
    pub init: InitialParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if !(self.p >= 0.0 && self.p < 1.0) {
            return Err(Error::config("p", format!("must lie in [0, 1), got {}", self.p)));
        }
        if self.budget.w != self.model.dim as u64 {
            return Err(Error::config(
                "w",
                format!("bit budget uses w = {}, model has w = {}", self.budget.w, self.model.dim),
            ));
        }
        self.schedule.validate()?;
        self.effective_spec()?.validate_for(self.n)?;
        if let InitialParams::Explicit(b) = &self.init {
            if b.len() != self.model.dim {
                return Err(Error::config("beta0", format!("needs {} entries, got {}", self.model.dim, b.len())));
            }
            ParameterVector::new(b.clone())?;
        }
        Ok(())
    }

    /// The replication actually used by `method`.
    pub fn effective_spec(&self) -> Result<RedundancySpec> {
        match self.method {
            Method::IgnoreStragglers1Bit => RedundancySpec::homogeneous(self.spec.m(), 1),
            _ => Ok(self.spec.clone()),
        }
    }

    pub fn bits_per_iteration(&self) -> u64 {
        payload_bits(self.method, self.budget)
    }

    pub fn initial_params(&self) -> Result<ParameterVector> {
        match &self.init {
            InitialParams::StandardNormal => Ok(ParameterVector::standard_normal(self.model.dim, self.seed)),
            InitialParams::Explicit(b) => ParameterVector::new(b.clone()),
        }
    }
}

/// Metrics after `t` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub cumulative_bits: u64,
    pub loss: f64,
    pub sqrt_two_loss: f64,
    pub param_error: Option<f64>,
    pub grad_norm_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub rows: Vec<TraceRow>,
    /// Update index at which a non-finite value appeared, if any.
    pub diverged_at: Option<u64>,
    /// Largest `||grad L(a_i, beta)||^2` over all samples and visited `beta`.
    pub max_sample_grad_sq: f64,
    pub final_params: ParameterVector,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace always holds the initial row")
    }
}

/// Per-worker straggler indicators: entry `j` is `true` when worker `j`
/// responds, which happens with probability `1 - p`.
pub fn sample_straggler_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() >= p).collect()
}

/// Per-sample weights `1 / (d_i (1 - p))`.
fn sample_weights(spec: &RedundancySpec, p: f64) -> Vec<f64> {
    spec.as_slice().iter().map(|&d| 1.0 / (d as f64 * (1.0 - p))).collect()
}

fn encode_into(set: &[usize], weights: &[f64], model: &LossModel, dataset: &Dataset, beta: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &i in set {
        model.add_scaled_grad(dataset.sample(i), beta, weights[i], out);
    }
}

/// The vector `f_j` worker `j` would encode at `beta`.
pub fn local_encode(
    worker: usize,
    assignment: &Assignment,
    spec: &RedundancySpec,
    p: f64,
    model: &LossModel,
    dataset: &Dataset,
    beta: &ParameterVector,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config("p", "must lie in [0, 1)"));
    }
    if worker >= assignment.n() {
        return Err(Error::invalid(format!("worker {worker} out of range")));
    }
    if spec.m() != dataset.m() || assignment.m() != dataset.m() {
        return Err(Error::invalid("spec, assignment and dataset disagree on m"));
    }
    model.check_dataset(dataset)?;
    if beta.len() != model.dim {
        return Err(Error::invalid("beta length does not match the model"));
    }
    let mut out = vec![0.0; model.dim];
    encode_into(
        assignment.worker_set(worker),
        &sample_weights(spec, p),
        model,
        dataset,
        beta.as_slice(),
        &mut out,
    );
    Ok(out)
}

/// What one worker contributes to the aggregate.
#[derive(Clone, Debug, PartialEq)]
pub enum Contribution {
    Quantized(WorkerPayload),
    Raw(Vec<f64>),
}

/// `g = sum_j I_j * decode(contribution_j)`. Straggling workers may carry
/// `None`; a responsive worker must carry a contribution.
pub fn aggregate(contributions: &[Option<Contribution>], mask: &[bool], w: usize) -> Result<Vec<f64>> {
    if contributions.len() != mask.len() {
        return Err(Error::invalid(format!(
            "{} contributions for {} workers",
            contributions.len(),
            mask.len()
        )));
    }
    let mut g = vec![0.0; w];
    for (j, (c, &alive)) in contributions.iter().zip(mask).enumerate() {
        if !alive {
            continue;
        }
        match c {
            Some(Contribution::Quantized(p)) if p.dim() == w => quantization::add_dequantized(p, &mut g),
            Some(Contribution::Raw(f)) if f.len() == w => {
                g.iter_mut().zip(f).for_each(|(a, b)| *a += b);
            }
            Some(_) => return Err(Error::invalid(format!("worker {j} sent a vector of the wrong length"))),
            None => return Err(Error::invalid(format!("responsive worker {j} sent nothing"))),
        }
    }
    Ok(g)
}

/// `beta - gamma * g`.
pub fn step(beta: &ParameterVector, g_hat: &[f64], gamma: f64) -> Result<ParameterVector> {
    if g_hat.len() != beta.len() {
        return Err(Error::invalid("update vector length does not match beta"));
    }
    let next: Vec<f64> = beta
        .as_slice()
        .iter()
        .zip(g_hat)
        .map(|(b, g)| b - gamma * g)
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter update".into()));
    }
    Ok(ParameterVector::new(next).expect("checked finite"))
}

pub fn metric_sqrt_two_loss(loss: f64) -> f64 {
    (2.0 * loss).sqrt()
}

pub fn metric_param_error(beta: &[f64], beta_star: &[f64]) -> f64 {
    beta.iter()
        .zip(beta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Everything fixed for the duration of a run: placement, weights, data.
pub struct Coder<'a> {
    method: Method,
    model: LossModel,
    dataset: &'a Dataset,
    assignment: Assignment,
    weights: Vec<f64>,
    p: f64,
}

impl<'a> Coder<'a> {
    /// Build the coder for `config`, materializing the assignment from the
    /// config seed.
    pub fn new(config: &SimConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        config.model.check_dataset(dataset)?;
        if config.spec.m() != dataset.m() {
            return Err(Error::config(
                "d",
                format!("spec covers {} samples, dataset has {}", config.spec.m(), dataset.m()),
            ));
        }
        let spec = config.effective_spec()?;
        let assignment = assign_uniform_random(dataset.m(), config.n, &spec, config.seed)?;
        Self::with_assignment(config.method, config.model, dataset, assignment, &spec, config.p)
    }

    /// Build a coder over an explicit placement.
    pub fn with_assignment(
        method: Method,
        model: LossModel,
        dataset: &'a Dataset,
        assignment: Assignment,
        spec: &RedundancySpec,
        p: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("p", "must lie in [0, 1)"));
        }
        if assignment.m() != dataset.m() || spec.m() != dataset.m() {
            return Err(Error::invalid("spec, assignment and dataset disagree on m"));
        }
        model.check_dataset(dataset)?;
        Ok(Self {
            method,
            model,
            dataset,
            weights: sample_weights(spec, p),
            assignment,
            p,
        })
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    /// `f_j` for every worker.
    pub fn encode_all(&self, beta: &ParameterVector) -> Vec<Vec<f64>> {
        (0..self.assignment.n())
            .map(|j| {
                let mut f = vec![0.0; self.model.dim];
                encode_into(self.assignment.worker_set(j), &self.weights, &self.model, self.dataset, beta.as_slice(), &mut f);
                f
            })
            .collect()
    }

    /// One draw of the global update at `beta` using the streams of
    /// iteration `t` under `seed`.
    pub fn global_update(&self, beta: &ParameterVector, seed: u64, t: u64) -> Result<Vec<f64>> {
        let n = self.assignment.n();
        let mask = sample_straggler_mask(n, self.p, &mut rng::stream(seed, Purpose::Straggler, t, 0));
        let mut scratch = vec![0.0; self.model.dim];
        let mut contributions = Vec::with_capacity(n);
        for (j, &alive) in mask.iter().enumerate() {
            if !alive {
                contributions.push(None);
                continue;
            }
            encode_into(self.assignment.worker_set(j), &self.weights, &self.model, self.dataset, beta.as_slice(), &mut scratch);
            contributions.push(Some(self.transmit(&scratch, seed, t, j)?));
        }
        aggregate(&contributions, &mask, self.model.dim)
    }

    /// One draw of the global update from precomputed `f_j` vectors.
    pub fn global_update_from(&self, encoded: &[Vec<f64>], seed: u64, t: u64) -> Result<Vec<f64>> {
        let mask = sample_straggler_mask(encoded.len(), self.p, &mut rng::stream(seed, Purpose::Straggler, t, 0));
        let contributions = encoded
            .iter()
            .zip(&mask)
            .enumerate()
            .map(|(j, (f, &alive))| alive.then(|| self.transmit(f, seed, t, j)).transpose())
            .collect::<Result<Vec<_>>>()?;
        aggregate(&contributions, &mask, self.model.dim)
    }

    fn transmit(&self, f: &[f64], seed: u64, t: u64, j: usize) -> Result<Contribution> {
        if self.method.is_quantized() {
            let mut stream = rng::stream(seed, Purpose::Quantize, t, j as u64);
            Ok(Contribution::Quantized(quantization::quantize(f, &mut stream)?))
        } else {
            Ok(Contribution::Raw(f.to_vec()))
        }
    }
}

struct Snapshot {
    loss: f64,
    grad_norm_sq: f64,
    max_sample_grad_sq: f64,
}

fn snapshot(model: &LossModel, dataset: &Dataset, beta: &[f64], grad: &mut [f64]) -> Snapshot {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let mut max_sample_grad_sq = 0.0f64;
    for s in dataset.samples() {
        loss += model.loss_unchecked(s, beta);
        model.add_scaled_grad(s, beta, 1.0, grad);
        max_sample_grad_sq = max_sample_grad_sq.max(model.grad_norm_sq_unchecked(s, beta));
    }
    Snapshot {
        loss,
        grad_norm_sq: grad.iter().map(|g| g * g).sum(),
        max_sample_grad_sq,
    }
}

/// Run `config.iterations` updates on `dataset`. The trace starts with the
/// row for `t = 0`. A non-finite parameter or metric stops the run early
/// and is reported through [`RunOutcome::diverged_at`].
pub fn run(config: &SimConfig, dataset: &Dataset, beta_star: Option<&[f64]>) -> Result<RunOutcome> {
    let coder = Coder::new(config, dataset)?;
    if let Some(star) = beta_star {
        if star.len() != config.model.dim {
            return Err(Error::invalid("beta_star length does not match the model"));
        }
    }
    let rho = config.bits_per_iteration();
    let mut beta = config.initial_params()?;
    let mut grad = vec![0.0; config.model.dim];

    let row = |t: u64, beta: &ParameterVector, snap: &Snapshot| TraceRow {
        t,
        cumulative_bits: t * rho,
        loss: snap.loss,
        sqrt_two_loss: metric_sqrt_two_loss(snap.loss),
        param_error: beta_star.map(|s| metric_param_error(beta.as_slice(), s)),
        grad_norm_sq: snap.grad_norm_sq,
    };

    let first = snapshot(&config.model, dataset, beta.as_slice(), &mut grad);
    let mut max_sample_grad_sq = first.max_sample_grad_sq;
    let mut rows = vec![row(0, &beta, &first)];
    let mut diverged_at = None;
    if !(first.loss.is_finite() && first.grad_norm_sq.is_finite()) {
        return Err(Error::NonFinite("initial loss".into()));
    }

    for k in 1..=config.iterations {
        let g_hat = coder.global_update(&beta, config.seed, k)?;
        let gamma = config.schedule.rate_for_update(k)?;
        beta = match step(&beta, &g_hat, gamma) {
            Ok(next) => next,
            Err(Error::NonFinite(_)) => {
                diverged_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        let snap = snapshot(&config.model, dataset, beta.as_slice(), &mut grad);
        if !(snap.loss.is_finite() && snap.grad_norm_sq.is_finite()) {
            diverged_at = Some(k);
            break;
        }
        max_sample_grad_sq = max_sample_grad_sq.max(snap.max_sample_grad_sq);
        rows.push(row(k, &beta, &snap));
    }

    Ok(RunOutcome {
        rows,
        diverged_at,
        max_sample_grad_sq,
        final_params: beta,
    })
}
