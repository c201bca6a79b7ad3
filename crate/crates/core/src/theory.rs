//! Closed-form moments of the global update and convergence bounds.
//!
//! # Exact second moment
//!
//! With `g = sum_j I_j h_j ||f_j||`, `I_j ~ Bernoulli(1 - p)` and the random
//! sign quantizer:
//!
//! * same worker: `E[I_j <h_j, h_j>] = (1 - p) w`, since every sign squares
//!   to one;
//! * distinct workers: `E[I_a I_b <h_a, h_b>] = (1 - p)^2 <f_a, f_b> / (||f_a|| ||f_b||)`,
//!   using independence and `E[h_a] = f_a / ||f_a||`.
//!
//! Summing over all pairs and completing the square gives
//!
//! ```text
//! E ||g||^2 = (1 - p)^2 ||sum_j f_j||^2 + (1 - p) (w - (1 - p)) sum_j ||f_j||^2.
//! ```
//!
//! Substituting `f_j = sum_{i in S_j} grad_i / (d_i (1 - p))` and assuming
//! exact pair-wise balance (`d_i d_k / n` shared holders) turns the second
//! term into the expectation form used by
//! [`exact_second_moment_homogeneous`].
//!
//! # Bounds
//!
//! `K = (w - (1 - p)) / (1 - p) * ((m - 1)/n + 1/D) * C * m * S` is the
//! noise constant shared by the non-convex bounds.

use crate::distribution::{inverse_redundancy_objective, Assignment, RedundancySpec};
use crate::error::{Error, Result};
use crate::losses::{Dataset, LossModel, ParameterVector};
use crate::simulation::{learning_rate, LearningRateSchedule};

/// Constants feeding the bound evaluators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryParams {
    /// Bound on every `||grad L(a_i, beta)||^2`.
    pub c: f64,
    /// Strong-convexity constant.
    pub lambda: f64,
    /// Smoothness constant.
    pub s: f64,
    pub m: usize,
    pub n: usize,
    pub w: usize,
    pub p: f64,
    /// Homogeneous redundancy.
    pub d: f64,
    pub gamma0: f64,
    pub l0: f64,
    pub lstar: f64,
}

impl Default for TheoryParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            lambda: 1.0,
            s: 1.0,
            m: 1,
            n: 1,
            w: 1,
            p: 0.0,
            d: 1.0,
            gamma0: 0.1,
            l0: 1.0,
            lstar: 0.0,
        }
    }
}

impl TheoryParams {
    fn check_common(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::config("C", "must be positive"));
        }
        if !(self.p >= 0.0 && self.p < 1.0) {
            return Err(Error::config("p", "must lie in [0, 1)"));
        }
        if self.m == 0 {
            return Err(Error::config("m", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if self.w == 0 {
            return Err(Error::config("w", "must be at least 1"));
        }
        Ok(())
    }

    fn check_nonconvex(&self) -> Result<()> {
        self.check_common()?;
        if !(self.d.is_finite() && self.d >= 1.0) {
            return Err(Error::config("D", "must be at least 1"));
        }
        if !(self.s.is_finite() && self.s >= 0.0) {
            return Err(Error::config("S", "must be finite and nonnegative"));
        }
        if !(self.l0.is_finite() && self.lstar.is_finite() && self.l0 >= self.lstar) {
            return Err(Error::config("L0", "need finite L0 >= Lstar"));
        }
        Ok(())
    }

    /// `(w - (1-p)) / (1-p)`.
    fn quantization_factor(&self) -> f64 {
        let q = 1.0 - self.p;
        (self.w as f64 - q) / q
    }

    /// Noise constant `K` of the non-convex bounds.
    pub fn noise_constant(&self) -> f64 {
        let mm = self.m as f64;
        self.quantization_factor() * ((mm - 1.0) / self.n as f64 + 1.0 / self.d) * self.c * mm * self.s
    }
}

/// Upper bound on `E ||g||^2` for replication `spec` (one entry per sample;
/// `params.m` is taken from `spec`).
pub fn bound_second_moment(params: &TheoryParams, spec: &RedundancySpec) -> Result<f64> {
    let params = TheoryParams { m: spec.m(), ..*params };
    params.check_common()?;
    let mm = params.m as f64;
    let q = 1.0 - params.p;
    let bracket = params.w as f64 - q;
    Ok(params.c * mm * mm
        + bracket * (mm * mm - mm) / (params.n as f64 * q) * params.c
        + bracket / q * params.c * inverse_redundancy_objective(spec))
}

/// `E ||beta_T - beta*||^2 <= 4 G / (lambda^2 T)` with `G` from
/// [`bound_second_moment`].
pub fn bound_theorem1(params: &TheoryParams, spec: &RedundancySpec, horizon: u64) -> Result<f64> {
    if !(params.lambda.is_finite() && params.lambda > 0.0) {
        return Err(Error::config("lambda", "must be positive"));
    }
    if horizon == 0 {
        return Err(Error::config("T", "must be at least 1"));
    }
    let g = bound_second_moment(params, spec)?;
    Ok(4.0 * g / (params.lambda * params.lambda * horizon as f64))
}

/// Bound on the average squared gradient norm over `t = 0..=T` under the
/// constant step. Requires `T > (4S)^(4/3) - 1`.
pub fn bound_theorem2(params: &TheoryParams, horizon: u64) -> Result<f64> {
    params.check_nonconvex()?;
    let tp1 = horizon as f64 + 1.0;
    // same discriminant as the step rule, strict: T + 1 > (4S)^(4/3)
    if params.s > 0.0 && 1.0 - 4.0 * params.s * tp1.powf(-0.75) <= 0.0 {
        return Err(Error::config(
            "T",
            format!("needs T > (4S)^(4/3) - 1 = {}", (4.0 * params.s).powf(4.0 / 3.0) - 1.0),
        ));
    }
    let gamma = learning_rate(
        &LearningRateSchedule::Constant {
            smoothness: params.s,
            horizon,
        },
        0,
    )?;
    Ok((params.l0 - params.lstar) / tp1.powf(0.25) + tp1.powf(0.75) * gamma * gamma * params.noise_constant())
}

/// Bound on the smallest expected squared gradient norm over `t = 0..=T`
/// under the decaying step. Requires `gamma0 < 1/(2S)`.
pub fn bound_theorem3(params: &TheoryParams, horizon: u64) -> Result<f64> {
    params.check_nonconvex()?;
    if !(params.gamma0.is_finite() && params.gamma0 > 0.0) {
        return Err(Error::config("gamma0", "must be positive"));
    }
    if 2.0 * params.s * params.gamma0 >= 1.0 {
        return Err(Error::config("gamma0", "must be below 1 / (2S)"));
    }
    let tp1 = horizon as f64 + 1.0;
    let g0 = params.gamma0;
    let denom = (g0 - g0 * g0 * params.s) * tp1.sqrt();
    Ok((params.l0 - params.lstar) / denom + g0 * g0 * (2.0 + tp1.ln()) / denom * params.noise_constant())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact `E ||g||^2` given the encoded vectors `f_j` of all workers.
pub fn exact_second_moment(encoded: &[Vec<f64>], p: f64, w: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config("p", "must lie in [0, 1)"));
    }
    let mut total = vec![0.0; w];
    let mut sum_sq = 0.0;
    for f in encoded {
        if f.len() != w {
            return Err(Error::invalid("encoded vector length differs from w"));
        }
        total.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        sum_sq += dot(f, f);
    }
    let q = 1.0 - p;
    Ok(q * q * dot(&total, &total) + q * (w as f64 - q) * sum_sq)
}

/// Exact `E ||g||^2` for an SGC (unquantized) round.
pub fn exact_second_moment_sgc(encoded: &[Vec<f64>], p: f64) -> f64 {
    let w = encoded.first().map_or(0, Vec::len);
    let mut total = vec![0.0; w];
    let mut sum_sq = 0.0;
    for f in encoded {
        total.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        sum_sq += dot(f, f);
    }
    let q = 1.0 - p;
    q * q * dot(&total, &total) + p * q * sum_sq
}

/// Second moment under homogeneous replication, computed twice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomogeneousMoment {
    /// Value assuming exact pair-wise balance of the placement.
    pub expectation_form: f64,
    /// Value from the realized placement's encoded vectors.
    pub realized: f64,
}

impl HomogeneousMoment {
    pub fn gap(&self) -> f64 {
        self.realized - self.expectation_form
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap().abs() / self.realized.abs().max(f64::MIN_POSITIVE)
    }
}

/// `||grad||^2 + (w - (1-p))/(1-p) [ (1/n) sum_{i != k} <g_i, g_k> + (1/D) sum_i ||g_i||^2 ]`
/// next to the realized-placement value from [`exact_second_moment`].
#[allow(clippy::too_many_arguments)]
pub fn exact_second_moment_homogeneous(
    model: &LossModel,
    dataset: &Dataset,
    assignment: &Assignment,
    beta: &ParameterVector,
    p: f64,
    w: usize,
    d: usize,
) -> Result<HomogeneousMoment> {
    if assignment.sample_counts().iter().any(|&c| c != d) {
        return Err(Error::invalid(format!("assignment is not homogeneous with d = {d}")));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config("p", "must lie in [0, 1)"));
    }
    if w != model.dim {
        return Err(Error::invalid("w does not match the model"));
    }
    let grads = model.sample_gradients(dataset, beta)?;
    let mut total = vec![0.0; w];
    let mut diag = 0.0;
    for g in &grads {
        total.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        diag += dot(g, g);
    }
    let full = dot(&total, &total);
    let off_diag = full - diag;
    let q = 1.0 - p;
    let n = assignment.n() as f64;
    let expectation_form = full + (w as f64 - q) / q * (off_diag / n + diag / d as f64);

    let spec = RedundancySpec::homogeneous(dataset.m(), d)?;
    let encoded: Vec<Vec<f64>> = assignment
        .worker_sets()
        .iter()
        .map(|set| {
            let mut f = vec![0.0; w];
            for &i in set {
                let scale = 1.0 / (spec.d(i) as f64 * q);
                f.iter_mut().zip(&grads[i]).for_each(|(a, b)| *a += scale * b);
            }
            f
        })
        .collect();
    Ok(HomogeneousMoment {
        expectation_form,
        realized: exact_second_moment(&encoded, p, w)?,
    })
}

/// `max_i max_beta ||grad L(a_i, beta)||^2` over the supplied points.
pub fn empirical_gradient_bound<'a, I>(model: &LossModel, dataset: &Dataset, betas: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ParameterVector>,
{
    let mut c = 0.0f64;
    for beta in betas {
        for g in model.sample_gradients(dataset, beta)? {
            c = c.max(dot(&g, &g));
        }
    }
    Ok(c)
}
