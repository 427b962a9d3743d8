//! Per-device FIR models and how to learn them from plug-level traces.
//!
//! Each device is modelled as
//!
//! ```text
//! z[t] = sum_{j=0..n} b[j] * u[t-j] + e[t]
//! ```
//!
//! with a piecewise-constant input `u` (zero before the first sample) and
//! white noise `e`. Training estimates `u` from the trace with a hysteresis
//! detector, then fits `b` by least squares and picks `n` with AIC or BIC.

mod io;

use std::collections::HashSet;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{load_library, read_trace_csv, save_library};

/// A plug-level power trace for one device.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub device_name: String,
    pub sample_period: f64,
    pub samples: Vec<f64>,
}

impl TrainingTrace {
    pub fn new(device_name: impl Into<String>, sample_period: f64, samples: Vec<f64>) -> Result<Self> {
        let device_name = device_name.into();
        if samples.is_empty() {
            return Err(Error::InvalidInput(format!(
                "trace for `{device_name}` has no samples"
            )));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if let Some(t) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "trace for `{device_name}` has a non-finite sample at t = {t}"
            )));
        }
        Ok(TrainingTrace {
            device_name,
            sample_period,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Estimated input to a device over a training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub values: Vec<f64>,
    pub is_binary: bool,
}

impl InputSignal {
    pub fn binary(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| v == 0.0 || v == 1.0));
        InputSignal {
            values,
            is_binary: true,
        }
    }

    pub fn levels(values: Vec<f64>) -> Self {
        let is_binary = values.iter().all(|&v| v == 0.0 || v == 1.0);
        InputSignal { values, is_binary }
    }
}

/// One device's FIR model.
///
/// `input_min` and `input_max` bound the change of the device input at a
/// change point. `input_levels`, when present, also bounds the input level
/// itself; the input starts at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirModel {
    #[serde(rename = "name")]
    pub device_name: String,
    pub order: usize,
    pub coeffs: Vec<f64>,
    pub noise_variance: f64,
    pub input_min: f64,
    pub input_max: f64,
    pub instant_off: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_levels: Option<(f64, f64)>,
}

impl FirModel {
    /// A binary-input model with change bounds `[-1, 1]` and no noise.
    pub fn new(device_name: impl Into<String>, coeffs: Vec<f64>) -> Self {
        FirModel {
            device_name: device_name.into(),
            order: coeffs.len().saturating_sub(1),
            coeffs,
            noise_variance: 0.0,
            input_min: -1.0,
            input_max: 1.0,
            instant_off: false,
            input_levels: None,
        }
    }

    pub fn with_bounds(mut self, input_min: f64, input_max: f64) -> Self {
        self.input_min = input_min;
        self.input_max = input_max;
        self
    }

    pub fn with_levels(mut self, min: f64, max: f64) -> Self {
        self.input_levels = Some((min, max));
        self
    }

    pub fn with_instant_off(mut self, instant_off: bool) -> Self {
        self.instant_off = instant_off;
        self
    }

    pub fn with_noise_variance(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }

    pub fn dc_gain(&self) -> f64 {
        dc_gain(self)
    }

    /// Unit-step response at `offset` samples after the step.
    pub fn step_response(&self, offset: usize) -> f64 {
        self.coeffs[..=offset.min(self.order)].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let name = &self.device_name;
        if self.coeffs.len() != self.order + 1 {
            return Err(Error::Validation(format!(
                "device `{name}`: coeffs has {} entries but order {} needs {}",
                self.coeffs.len(),
                self.order,
                self.order + 1
            )));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(format!(
                "device `{name}`: coeffs must be finite"
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Validation(format!(
                "device `{name}`: noise_variance must be finite and >= 0"
            )));
        }
        if !(self.input_min.is_finite() && self.input_max.is_finite()) {
            return Err(Error::Validation(format!(
                "device `{name}`: input bounds must be finite"
            )));
        }
        if self.input_min > self.input_max {
            return Err(Error::Validation(format!(
                "device `{name}`: input_min {} exceeds input_max {}",
                self.input_min, self.input_max
            )));
        }
        if self.input_min > 0.0 || self.input_max < 0.0 {
            return Err(Error::Validation(format!(
                "device `{name}`: input bounds [{}, {}] must contain 0",
                self.input_min, self.input_max
            )));
        }
        if let Some((lo, hi)) = self.input_levels {
            if !(lo.is_finite() && hi.is_finite() && lo <= 0.0 && hi >= 0.0) {
                return Err(Error::Validation(format!(
                    "device `{name}`: input levels [{lo}, {hi}] must be finite and contain 0"
                )));
            }
        }
        Ok(())
    }
}

pub fn dc_gain(model: &FirModel) -> f64 {
    model.coeffs.iter().sum()
}

/// An ordered, validated set of device models.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLibrary {
    models: Vec<FirModel>,
}

impl DeviceLibrary {
    pub fn new(models: Vec<FirModel>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &models {
            m.validate()?;
            if !seen.insert(m.device_name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate device name `{}`",
                    m.device_name
                )));
            }
        }
        Ok(DeviceLibrary { models })
    }

    pub fn models(&self) -> &[FirModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Longest model order; the minimum segment length that lets every
    /// device settle.
    pub fn max_order(&self) -> usize {
        self.models.iter().map(|m| m.order).max().unwrap_or(0)
    }

    pub fn names(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.device_name.as_str()).collect()
    }

    pub fn dc_gains(&self) -> Vec<f64> {
        self.models.iter().map(dc_gain).collect()
    }

    /// Aggregate noise variance, assuming independent device noise.
    pub fn total_noise_variance(&self) -> f64 {
        self.models.iter().map(|m| m.noise_variance).sum()
    }
}

/// Hysteresis on/off detector.
///
/// The state starts off. A switch is committed once the trace has stayed on
/// the other side of `on_threshold` for `debounce` consecutive samples, and
/// then dates back to the first sample of that run. A run still shorter than
/// `debounce` when the trace ends is not committed.
pub fn detect_binary_input(
    trace: &TrainingTrace,
    on_threshold: f64,
    debounce: usize,
) -> Result<InputSignal> {
    if trace.samples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trace for `{}` has no samples",
            trace.device_name
        )));
    }
    if !(on_threshold > 0.0) {
        return Err(Error::InvalidInput(format!(
            "on_threshold must be positive, got {on_threshold}"
        )));
    }
    if debounce == 0 {
        return Err(Error::InvalidInput("debounce must be at least 1".into()));
    }

    let mut out = vec![0.0; trace.samples.len()];
    let mut on = false;
    let mut run_start: Option<usize> = None;
    for (t, &z) in trace.samples.iter().enumerate() {
        let above = z > on_threshold;
        if above != on {
            let start = *run_start.get_or_insert(t);
            if t + 1 - start >= debounce {
                on = above;
                run_start = None;
                let level = if on { 1.0 } else { 0.0 };
                out[start..=t].iter_mut().for_each(|u| *u = level);
                continue;
            }
        } else {
            run_start = None;
        }
        out[t] = if on { 1.0 } else { 0.0 };
    }
    Ok(InputSignal::binary(out))
}

/// Result of a least-squares FIR fit, with what model selection needs.
#[derive(Debug, Clone)]
pub struct FirFit {
    pub model: FirModel,
    pub rss: f64,
    pub n_samples: usize,
    /// `(X^T X)^-1` scaled by the residual variance.
    pub covariance: DMatrix<f64>,
}

impl FirFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.covariance.nrows())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }
}

fn regressors(input: &[f64], order: usize) -> DMatrix<f64> {
    let n = input.len();
    DMatrix::from_fn(n, order + 1, |t, j| if t >= j { input[t - j] } else { 0.0 })
}

// Relative singular value floor below which the regressors count as rank deficient.
const RANK_TOL: f64 = 1e-10;

pub fn fit_fir(trace: &TrainingTrace, input: &InputSignal, order: usize) -> Result<FirModel> {
    fit_fir_detailed(trace, input, order).map(|f| f.model)
}

pub fn fit_fir_detailed(trace: &TrainingTrace, input: &InputSignal, order: usize) -> Result<FirFit> {
    let name = &trace.device_name;
    let n = trace.samples.len();
    if input.values.len() != n {
        return Err(Error::InvalidInput(format!(
            "input for `{name}` has {} samples, trace has {n}",
            input.values.len()
        )));
    }
    if n <= order + 1 {
        return Err(Error::InvalidInput(format!(
            "trace for `{name}` has {n} samples, an order-{order} fit needs more than {}",
            order + 1
        )));
    }

    let x = regressors(&input.values, order);
    let z = DVector::from_column_slice(&trace.samples);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= RANK_TOL * smax {
        return Err(Error::IllPosedFit {
            device: name.clone(),
            reason: format!("order-{order} regressor matrix is rank deficient (input lacks excitation)"),
        });
    }
    let beta = svd
        .solve(&z, 0.0)
        .map_err(|e| Error::Internal(format!("svd solve: {e}")))?;
    let resid = &z - &x * &beta;
    let rss = resid.norm_squared();
    let dof = n - (order + 1);
    let noise_variance = rss / dof as f64;

    // (X^T X)^-1 = V diag(1/s^2) V^T
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let inv_s2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let covariance = v_t.transpose() * inv_s2 * v_t * noise_variance;

    let (lo, hi) = observed_levels(input);
    let model = FirModel {
        device_name: name.clone(),
        order,
        coeffs: beta.iter().copied().collect(),
        noise_variance,
        input_min: lo - hi,
        input_max: hi - lo,
        instant_off: false,
        input_levels: Some((lo, hi)),
    };
    Ok(FirFit {
        model,
        rss,
        n_samples: n,
        covariance,
    })
}

/// Smallest and largest input level, counting the zero initial condition.
/// Change bounds default to the span between them in both directions.
fn observed_levels(input: &InputSignal) -> (f64, f64) {
    input
        .values
        .iter()
        .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(Error::InvalidInput(format!("unknown criterion `{other}`"))),
        }
    }
}

impl Criterion {
    /// Score of a Gaussian-residual fit with `params` coefficients. Lower is better.
    pub fn score(self, rss: f64, n_samples: usize, params: usize, signal_energy: f64) -> f64 {
        let n = n_samples as f64;
        // Exact fits would give ln(0); floor the RSS far below any real noise.
        let rss = rss.max(RSS_FLOOR * signal_energy).max(f64::MIN_POSITIVE);
        let log_lik = -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0);
        let k = params as f64;
        match self {
            Criterion::Aic => 2.0 * k - 2.0 * log_lik,
            Criterion::Bic => k * n.ln() - 2.0 * log_lik,
        }
    }
}

const RSS_FLOOR: f64 = 1e-20;

/// Criterion value for each order in `0..=max_order` that can be fit.
pub fn order_criteria(
    trace: &TrainingTrace,
    input: &InputSignal,
    max_order: usize,
    criterion: Criterion,
) -> Result<Vec<(usize, f64)>> {
    let energy: f64 = trace.samples.iter().map(|v| v * v).sum();
    let mut scores = Vec::new();
    let mut last_err = None;
    for order in 0..=max_order {
        match fit_fir_detailed(trace, input, order) {
            Ok(fit) => scores.push((order, criterion.score(fit.rss, fit.n_samples, order + 1, energy))),
            Err(e) => last_err = Some(e),
        }
    }
    match (scores.is_empty(), last_err) {
        (true, Some(e)) => Err(e),
        _ => Ok(scores),
    }
}

/// Order minimising `criterion`; ties go to the smaller order.
pub fn select_order(
    trace: &TrainingTrace,
    input: &InputSignal,
    max_order: usize,
    criterion: Criterion,
) -> Result<usize> {
    let scores = order_criteria(trace, input, max_order, criterion)?;
    let mut best = scores[0];
    for &(order, s) in &scores[1..] {
        if s < best.1 {
            best = (order, s);
        }
    }
    Ok(best.0)
}
