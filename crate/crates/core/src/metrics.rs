//! Scoring a disaggregation against ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::filterbank::DisaggResult;
use crate::synth::Scenario;
use crate::{Error, Result};

/// Default changepoint matching window, in samples.
pub const DEFAULT_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub changepoint_exact: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub window: usize,
    pub per_device_rmse: Vec<f64>,
    /// Per device, `|E_hat_i - E_i| / sum_j E_j` with `E_i` the summed true
    /// output of device `i`.
    pub energy_fraction_error: Vec<f64>,
    pub bank_size_max: usize,
    pub bank_size_mean: f64,
}

impl EvalReport {
    pub fn max_energy_fraction_error(&self) -> f64 {
        self.energy_fraction_error.iter().cloned().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// One header line and one data row; vector fields are `;`-joined.
    pub fn to_csv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        format!(
            "changepoint_exact,precision,recall,f1,window,per_device_rmse,energy_fraction_error,bank_size_max,bank_size_mean\n{},{},{},{},{},{},{},{},{}\n",
            self.changepoint_exact,
            self.precision,
            self.recall,
            self.f1,
            self.window,
            join(&self.per_device_rmse),
            join(&self.energy_fraction_error),
            self.bank_size_max,
            self.bank_size_mean
        )
    }
}

/// Number of one-to-one matches between `detected` and `truth` within
/// `window` samples, taking closest pairs first.
pub fn match_changepoints(detected: &[usize], truth: &[usize], window: usize) -> usize {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &a) in detected.iter().enumerate() {
        for (j, &b) in truth.iter().enumerate() {
            let d = a.abs_diff(b);
            if d <= window {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_t[j] {
            used_d[i] = true;
            used_t[j] = true;
            matched += 1;
        }
    }
    matched
}

/// Precision, recall and F1. Empty sets on both sides score 1.
pub fn changepoint_scores(detected: &[usize], truth: &[usize], window: usize) -> (f64, f64, f64) {
    let m = match_changepoints(detected, truth, window) as f64;
    let ratio = |n: usize| if n == 0 { 1.0 } else { m / n as f64 };
    let (p, r) = match (detected.is_empty(), truth.is_empty()) {
        (true, true) => (1.0, 1.0),
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        _ => (ratio(detected.len()), ratio(truth.len())),
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// [`evaluate`] on raw parts, for results and truths loaded from files.
pub fn evaluate_parts(
    detected: &[usize],
    estimated_signals: &[Vec<f64>],
    true_changepoints: &[usize],
    true_signals: &[Vec<f64>],
    bank_sizes: &[usize],
    window: usize,
) -> Result<EvalReport> {
    if estimated_signals.len() != true_signals.len() {
        return Err(Error::Validation(format!(
            "result has {} devices, truth has {}",
            estimated_signals.len(),
            true_signals.len()
        )));
    }
    let horizon = true_signals.first().map_or(0, Vec::len);
    if estimated_signals
        .iter()
        .chain(true_signals)
        .any(|s| s.len() != horizon)
    {
        return Err(Error::Validation("device signals have unequal horizons".into()));
    }
    let (precision, recall, f1) = changepoint_scores(detected, true_changepoints, window);
    let per_device_rmse = estimated_signals
        .iter()
        .zip(true_signals)
        .map(|(e, t)| {
            if horizon == 0 {
                return 0.0;
            }
            let sse: f64 = e.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            (sse / horizon as f64).sqrt()
        })
        .collect();
    let energies: Vec<f64> = true_signals.iter().map(|s| s.iter().sum()).collect();
    let total: f64 = energies.iter().sum();
    let energy_fraction_error = estimated_signals
        .iter()
        .zip(&energies)
        .map(|(e, &truth)| {
            let diff = (e.iter().sum::<f64>() - truth).abs();
            if total != 0.0 {
                diff / total.abs()
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let bank_size_max = bank_sizes.iter().copied().max().unwrap_or(0);
    let bank_size_mean = if bank_sizes.is_empty() {
        0.0
    } else {
        bank_sizes.iter().sum::<usize>() as f64 / bank_sizes.len() as f64
    };
    Ok(EvalReport {
        changepoint_exact: detected == true_changepoints,
        precision,
        recall,
        f1,
        window,
        per_device_rmse,
        energy_fraction_error,
        bank_size_max,
        bank_size_mean,
    })
}

pub fn evaluate(result: &DisaggResult, truth: &Scenario, window: usize) -> Result<EvalReport> {
    if result.best_seg.len() != truth.true_delta.len() {
        return Err(Error::Validation(format!(
            "result covers {} samples, truth {}",
            result.best_seg.len(),
            truth.true_delta.len()
        )));
    }
    let names = truth.library.names();
    if result.device_names.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::Validation(format!(
            "device order differs: result {:?}, truth {:?}",
            result.device_names, names
        )));
    }
    evaluate_parts(
        &result.best_seg.to_changepoints(),
        &result.per_device_signals,
        &truth.true_delta.to_changepoints(),
        &truth.device_signals,
        &result.bank_size_trace,
        window,
    )
}
