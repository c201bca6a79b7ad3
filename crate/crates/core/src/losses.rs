//! Loss models and their closed-form gradients.
//!
//! The total objective is the plain sum of per-sample losses,
//! `L(A, beta) = sum_i L(a_i, beta)`. Three per-sample models are supported:
//!
//! | model              | `L(a_i, beta)`                                     | gradient                                          |
//! |--------------------|----------------------------------------------------|---------------------------------------------------|
//! | `LinearRegression` | `0.5 * (<x_i, beta> - y_i)^2`                      | `(<x_i, beta> - y_i) * x_i`                        |
//! | `Rosenbrock`       | `100 (b_{i+1} - b_i^2)^2 + (1 - b_i)^2`            | nonzero only at coordinates `i` and `i + 1`        |
//! | `Logistic`         | `log(1 + exp(-y_i <beta, x_i>))`                   | `-y_i * sigmoid(-y_i <beta, x_i>) * x_i`           |
//!
//! Rosenbrock samples carry no features: the sample index alone selects the
//! term, so a Rosenbrock dataset with `m` samples needs `w = m + 1`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// One row `a_i = [x_i, y_i]` of the training matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSample {
    pub features: Vec<f64>,
    pub label: f64,
    pub index: usize,
}

/// An ordered set of samples with uniform feature length.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<DataSample>,
    feature_len: usize,
}

impl Dataset {
    /// Build a dataset. Sample `i` must carry `index == i` and all samples
    /// must have the same feature length.
    pub fn new(samples: Vec<DataSample>) -> Result<Self> {
        let feature_len = samples.first().map_or(0, |s| s.features.len());
        for (i, s) in samples.iter().enumerate() {
            if s.index != i {
                return Err(Error::invalid(format!(
                    "sample at position {i} carries index {}",
                    s.index
                )));
            }
            if s.features.len() != feature_len {
                return Err(Error::invalid(format!(
                    "sample {i} has {} features, expected {feature_len}",
                    s.features.len()
                )));
            }
        }
        Ok(Self {
            samples,
            feature_len,
        })
    }

    /// Index-only samples for the Rosenbrock objective.
    pub fn rosenbrock(m: usize) -> Self {
        let samples = (0..m)
            .map(|index| DataSample {
                features: Vec::new(),
                label: 0.0,
                index,
            })
            .collect();
        Self {
            samples,
            feature_len: 0,
        }
    }

    pub fn m(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    /// Row length `l` (features plus label).
    pub fn row_len(&self) -> usize {
        self.feature_len + 1
    }

    pub fn samples(&self) -> &[DataSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &DataSample {
        &self.samples[i]
    }
}

/// The model parameters `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter entry {k} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(w: usize) -> Self {
        Self(vec![0.0; w])
    }

    /// Entries drawn i.i.d. from the standard normal distribution.
    pub fn standard_normal(w: usize, seed: u64) -> Self {
        let mut stream = rng::stream(seed, Purpose::Init, 0, 0);
        Self((0..w).map(|_| stream.sample(StandardNormal)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    LinearRegression,
    Rosenbrock,
    Logistic,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::LinearRegression => "linear_regression",
            LossKind::Rosenbrock => "rosenbrock",
            LossKind::Logistic => "logistic",
        }
    }
}

/// A per-sample loss with parameter dimension `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossModel {
    pub kind: LossKind,
    pub dim: usize,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + exp(z))` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossModel {
    pub fn new(kind: LossKind, dim: usize) -> Self {
        Self { kind, dim }
    }

    /// Check that every sample of `dataset` fits this model.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        match self.kind {
            LossKind::Rosenbrock => {
                if self.dim != dataset.m() + 1 {
                    return Err(Error::invalid(format!(
                        "rosenbrock with m = {} needs w = {}, got {}",
                        dataset.m(),
                        dataset.m() + 1,
                        self.dim
                    )));
                }
            }
            LossKind::LinearRegression | LossKind::Logistic => {
                if dataset.feature_len() != self.dim {
                    return Err(Error::invalid(format!(
                        "feature length {} does not match w = {}",
                        dataset.feature_len(),
                        self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    fn check(&self, sample: &DataSample, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dim {
            return Err(Error::invalid(format!(
                "beta has length {}, model expects {}",
                beta.len(),
                self.dim
            )));
        }
        match self.kind {
            LossKind::Rosenbrock => {
                if sample.index + 1 >= self.dim {
                    return Err(Error::invalid(format!(
                        "rosenbrock term {} needs w > {}",
                        sample.index,
                        sample.index + 1
                    )));
                }
            }
            LossKind::LinearRegression | LossKind::Logistic => {
                if sample.features.len() != self.dim {
                    return Err(Error::invalid(format!(
                        "sample {} has {} features, model expects {}",
                        sample.index,
                        sample.features.len(),
                        self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn loss_sample(&self, sample: &DataSample, beta: &ParameterVector) -> Result<f64> {
        self.check(sample, beta.as_slice())?;
        Ok(self.loss_unchecked(sample, beta.as_slice()))
    }

    pub(crate) fn loss_unchecked(&self, sample: &DataSample, beta: &[f64]) -> f64 {
        match self.kind {
            LossKind::LinearRegression => {
                let r = dot(&sample.features, beta) - sample.label;
                0.5 * r * r
            }
            LossKind::Rosenbrock => {
                let i = sample.index;
                let (b0, b1) = (beta[i], beta[i + 1]);
                let u = b1 - b0 * b0;
                100.0 * u * u + (1.0 - b0) * (1.0 - b0)
            }
            LossKind::Logistic => softplus(-sample.label * dot(&sample.features, beta)),
        }
    }

    pub fn grad_sample(&self, sample: &DataSample, beta: &ParameterVector) -> Result<Vec<f64>> {
        self.check(sample, beta.as_slice())?;
        let mut out = vec![0.0; self.dim];
        self.add_scaled_grad(sample, beta.as_slice(), 1.0, &mut out);
        Ok(out)
    }

    /// `out += scale * grad L(a_i, beta)`. Dimensions are the caller's
    /// responsibility.
    pub(crate) fn add_scaled_grad(&self, sample: &DataSample, beta: &[f64], scale: f64, out: &mut [f64]) {
        match self.kind {
            LossKind::LinearRegression => {
                let r = scale * (dot(&sample.features, beta) - sample.label);
                for (o, x) in out.iter_mut().zip(&sample.features) {
                    *o += r * x;
                }
            }
            LossKind::Rosenbrock => {
                let i = sample.index;
                let (b0, b1) = (beta[i], beta[i + 1]);
                let u = b1 - b0 * b0;
                out[i] += scale * (-400.0 * b0 * u - 2.0 * (1.0 - b0));
                out[i + 1] += scale * 200.0 * u;
            }
            LossKind::Logistic => {
                let y = sample.label;
                let coef = -scale * y * sigmoid(-y * dot(&sample.features, beta));
                for (o, x) in out.iter_mut().zip(&sample.features) {
                    *o += coef * x;
                }
            }
        }
    }

    /// `||grad L(a_i, beta)||^2` without materializing the gradient.
    pub(crate) fn grad_norm_sq_unchecked(&self, sample: &DataSample, beta: &[f64]) -> f64 {
        match self.kind {
            LossKind::LinearRegression => {
                let r = dot(&sample.features, beta) - sample.label;
                r * r * dot(&sample.features, &sample.features)
            }
            LossKind::Rosenbrock => {
                let i = sample.index;
                let (b0, b1) = (beta[i], beta[i + 1]);
                let u = b1 - b0 * b0;
                let g0 = -400.0 * b0 * u - 2.0 * (1.0 - b0);
                let g1 = 200.0 * u;
                g0 * g0 + g1 * g1
            }
            LossKind::Logistic => {
                let y = sample.label;
                let coef = y * sigmoid(-y * dot(&sample.features, beta));
                coef * coef * dot(&sample.features, &sample.features)
            }
        }
    }

    pub fn total_loss(&self, dataset: &Dataset, beta: &ParameterVector) -> Result<f64> {
        self.validate_total(dataset, beta)?;
        Ok(self.total_loss_unchecked(dataset, beta.as_slice()))
    }

    pub(crate) fn total_loss_unchecked(&self, dataset: &Dataset, beta: &[f64]) -> f64 {
        dataset
            .samples()
            .iter()
            .map(|s| self.loss_unchecked(s, beta))
            .sum()
    }

    pub fn total_grad(&self, dataset: &Dataset, beta: &ParameterVector) -> Result<Vec<f64>> {
        self.validate_total(dataset, beta)?;
        let mut out = vec![0.0; self.dim];
        for s in dataset.samples() {
            self.add_scaled_grad(s, beta.as_slice(), 1.0, &mut out);
        }
        Ok(out)
    }

    fn validate_total(&self, dataset: &Dataset, beta: &ParameterVector) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for s in dataset.samples() {
            self.check(s, beta.as_slice())?;
        }
        Ok(())
    }

    /// Per-sample gradients, row `i` holding `grad L(a_i, beta)`.
    pub fn sample_gradients(&self, dataset: &Dataset, beta: &ParameterVector) -> Result<Vec<Vec<f64>>> {
        self.validate_total(dataset, beta)?;
        Ok(dataset
            .samples()
            .iter()
            .map(|s| {
                let mut g = vec![0.0; self.dim];
                self.add_scaled_grad(s, beta.as_slice(), 1.0, &mut g);
                g
            })
            .collect())
    }
}

/// Synthetic linear-regression data: features i.i.d. `N(0, feature_std^2)`,
/// `beta_star` i.i.d. standard normal and `y_i = <x_i, beta_star> + noise_i`
/// with `noise_i ~ N(0, noise_std^2)`.
pub fn generate_regression_data(
    m: usize,
    feature_dim: usize,
    feature_std: f64,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, ParameterVector)> {
    if m == 0 || feature_dim == 0 {
        return Err(Error::invalid("m and feature_dim must be at least 1"));
    }
    if !(feature_std >= 0.0 && noise_std >= 0.0) || !feature_std.is_finite() || !noise_std.is_finite() {
        return Err(Error::invalid("standard deviations must be finite and nonnegative"));
    }
    let mut truth = rng::stream(seed, Purpose::Data, 0, 0);
    let beta_star: Vec<f64> = (0..feature_dim).map(|_| truth.sample(StandardNormal)).collect();

    let mut rows = rng::stream(seed, Purpose::Data, 1, 0);
    let samples = (0..m)
        .map(|index| {
            let features: Vec<f64> = (0..feature_dim)
                .map(|_| feature_std * rows.sample::<f64, _>(StandardNormal))
                .collect();
            let noise: f64 = rows.sample(StandardNormal);
            let label = dot(&features, &beta_star) + noise_std * noise;
            DataSample {
                features,
                label,
                index,
            }
        })
        .collect();
    Ok((Dataset::new(samples)?, ParameterVector(beta_star)))
}

/// Central finite-difference gradient of `f` at `beta`, with per-coordinate
/// step `rel_step * (|beta_k| + 1)`.
pub fn finite_difference_gradient<F>(f: F, beta: &[f64], rel_step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = beta.to_vec();
    (0..beta.len())
        .map(|k| {
            let h = rel_step * (beta[k].abs() + 1.0);
            probe[k] = beta[k] + h;
            let up = f(&probe);
            probe[k] = beta[k] - h;
            let down = f(&probe);
            probe[k] = beta[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(floor);
    diff / scale
}
