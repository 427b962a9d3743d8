//! Online MAP segmentation with a bank of filters.
//!
//! Every filter is one segmentation hypothesis. Within a segment the inputs
//! are constant, so the aggregate deviates from the previous steady state by
//! the step response to the input change; that change is fitted by
//! box-constrained least squares, and the filter is scored by its log prior
//! minus the residual energy over `2 sigma^2`.
//!
//! At each new sample every filter extends its open segment, and only the
//! filters that were most likely before the sample are also branched with a
//! change. Unlikely filters are pruned. Without pruning the bank always holds
//! a MAP segmentation, which [`crate::oracle`] checks by enumeration.

mod boxls;
mod filter;
mod response;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model_lib::DeviceLibrary;
use crate::segmentation::Segmentation;
use crate::{Error, Result};

pub use boxls::{kkt_violation, solve_box_qp};
pub use filter::{estimate_segment, log_posterior, log_prior, Filter, SegmentEstimate, SegmentFit};
pub use response::step_response_matrix;

pub(crate) use filter::fit_segment;
pub(crate) use response::StepModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    /// Drop filters whose log posterior is below `prune_log_thresh`.
    Absolute,
    /// Drop filters more than `prune_log_thresh` log units below the best.
    Relative,
}

impl std::str::FromStr for PruneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(PruneMode::Absolute),
            "relative" => Ok(PruneMode::Relative),
            other => Err(Error::InvalidInput(format!("unknown prune mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisaggParams {
    /// Aggregate noise variance, watts squared.
    pub sigma2: f64,
    /// Prior probability of a change at any one sample.
    pub change_prob: f64,
    pub prune_mode: PruneMode,
    /// Log threshold (absolute mode) or offset from the best (relative mode).
    /// Written `"-inf"` in files when unbounded.
    #[serde(with = "log_value_repr")]
    pub prune_log_thresh: f64,
    /// Maximum bank size; `None` is unbounded. Written `"none"` in files.
    #[serde(with = "beam_cap_repr")]
    pub beam_cap: Option<usize>,
    /// Refuse segments shorter than the longest device order.
    pub enforce_min_segment: bool,
    /// Branch into one child per device, each allowed to change only that device.
    pub one_change_per_step: bool,
    /// Skip branching when the best filter's newest squared residual is at most
    /// this many `sigma2`. Zero disables.
    pub branch_suppression_tol: f64,
    /// Relative tolerance for membership in the most-likely set.
    pub branch_tie_tol: f64,
}

mod beam_cap_repr {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Cap(usize),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => Repr::Cap(*n),
            None => Repr::Word("none".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Cap(n) => Ok(Some(n)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(de::Error::custom(format!("beam_cap must be an integer or \"none\", got `{w}`"))),
        }
    }
}

mod log_value_repr {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v)
        } else {
            Repr::Word(v.to_string())
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Word(w) => w
                .parse()
                .map_err(|_| de::Error::custom(format!("expected a number or \"-inf\", got `{w}`"))),
        }
    }
}

impl Default for DisaggParams {
    fn default() -> Self {
        DisaggParams {
            sigma2: 1.0,
            change_prob: 0.01,
            prune_mode: PruneMode::Relative,
            prune_log_thresh: 20.0,
            beam_cap: Some(64),
            enforce_min_segment: true,
            one_change_per_step: false,
            branch_suppression_tol: 0.0,
            branch_tie_tol: 1e-12,
        }
    }
}

impl DisaggParams {
    /// Settings under which the bank provably keeps a MAP segmentation: no
    /// pruning, no cap, unrestricted branching and no suppression.
    pub fn unpruned(sigma2: f64) -> Self {
        DisaggParams {
            sigma2,
            prune_mode: PruneMode::Absolute,
            prune_log_thresh: f64::NEG_INFINITY,
            beam_cap: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Validation(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.change_prob > 0.0 && self.change_prob < 1.0) {
            return Err(Error::Validation(format!(
                "change_prob must lie in (0, 1), got {}",
                self.change_prob
            )));
        }
        match self.prune_mode {
            PruneMode::Absolute if !(self.prune_log_thresh < 0.0) => {
                return Err(Error::Validation(format!(
                    "absolute prune threshold must be a log value in [-inf, 0), got {}",
                    self.prune_log_thresh
                )))
            }
            PruneMode::Relative if !(self.prune_log_thresh > 0.0) => {
                return Err(Error::Validation(format!(
                    "relative prune offset must be positive, got {}",
                    self.prune_log_thresh
                )))
            }
            _ => {}
        }
        if self.beam_cap == Some(0) {
            return Err(Error::Validation("beam_cap must be at least 1".into()));
        }
        if !(self.branch_suppression_tol >= 0.0) || !(self.branch_tie_tol >= 0.0) {
            return Err(Error::Validation("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Orders filters best first: higher posterior, then fewer changes, then
/// the lexicographically smaller change sequence.
pub(crate) fn rank(a: &Filter, b: &Filter) -> Ordering {
    b.log_post()
        .total_cmp(&a.log_post())
        .then_with(|| a.segmentation().num_changes().cmp(&b.segmentation().num_changes()))
        .then_with(|| a.segmentation().delta().cmp(b.segmentation().delta()))
}

#[derive(Debug, Clone)]
pub struct FilterBank {
    library: DeviceLibrary,
    model: StepModel,
    params: DisaggParams,
    filters: Vec<Filter>,
    bank_sizes: Vec<usize>,
}

/// An empty bank; the first sample seeds the filters `(0)` and `(1)`.
pub fn init_bank(library: &DeviceLibrary, params: &DisaggParams) -> Result<FilterBank> {
    FilterBank::new(library, params)
}

/// Feeds one sample to the bank.
pub fn oedfb_step(mut bank: FilterBank, y_next: f64) -> Result<FilterBank> {
    bank.step(y_next)?;
    Ok(bank)
}

impl FilterBank {
    pub fn new(library: &DeviceLibrary, params: &DisaggParams) -> Result<Self> {
        params.validate()?;
        let model = StepModel::new(library)?;
        Ok(FilterBank {
            library: library.clone(),
            model,
            params: params.clone(),
            filters: Vec::new(),
            bank_sizes: Vec::new(),
        })
    }

    pub fn library(&self) -> &DeviceLibrary {
        &self.library
    }

    pub fn params(&self) -> &DisaggParams {
        &self.params
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    /// Index of the newest processed sample, `None` before the first.
    pub fn t(&self) -> Option<usize> {
        self.bank_sizes.len().checked_sub(1)
    }

    pub fn bank_size_trace(&self) -> &[usize] {
        &self.bank_sizes
    }

    pub fn best(&self) -> Option<&Filter> {
        self.filters.iter().min_by(|a, b| rank(a, b))
    }

    fn child_masks(&self) -> Vec<Option<usize>> {
        if self.params.one_change_per_step {
            (0..self.model.devices).map(Some).collect()
        } else {
            vec![None]
        }
    }

    pub fn step(&mut self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite sample {y}")));
        }
        let model = &self.model;
        let params = &self.params;

        if self.filters.is_empty() {
            self.filters.push(Filter::start(model, params, y, false, None));
            for mask in self.child_masks() {
                self.filters.push(Filter::start(model, params, y, true, mask));
            }
            self.bank_sizes.push(self.filters.len());
            return Ok(());
        }

        // Most likely filters given the samples so far. With the segment
        // floor enforced only filters whose open segment may close compete.
        let closable = |f: &Filter| !params.enforce_min_segment || f.open_len() >= model.min_segment;
        let best_idx = (0..self.filters.len())
            .min_by(|&a, &b| rank(&self.filters[a], &self.filters[b]))
            .expect("bank is non-empty");
        let top = self
            .filters
            .iter()
            .filter(|f| closable(f))
            .map(Filter::log_post)
            .fold(f64::NEG_INFINITY, f64::max);
        let snapshot: Vec<Filter> = if top.is_finite() {
            let cut = top - params.branch_tie_tol * top.abs();
            self.filters
                .iter()
                .filter(|f| closable(f) && f.log_post() >= cut)
                .cloned()
                .collect()
        } else {
            Vec::new()
        };

        for f in &mut self.filters {
            f.extend(model, params, y);
        }

        let suppressed = params.branch_suppression_tol > 0.0 && {
            let r = self.filters[best_idx].last_residual();
            r * r <= params.branch_suppression_tol * params.sigma2
        };
        if !suppressed {
            let masks = self.child_masks();
            for f in &snapshot {
                for &mask in &masks {
                    self.filters.push(f.branch(model, params, y, mask));
                }
            }
        }

        self.prune();
        if self.filters.is_empty() {
            return Err(Error::Internal("filter bank emptied by pruning".into()));
        }
        self.bank_sizes.push(self.filters.len());
        Ok(())
    }

    fn prune(&mut self) {
        self.filters.sort_by(rank);
        let max = self.filters[0].log_post();
        let cut = match self.params.prune_mode {
            PruneMode::Absolute => self.params.prune_log_thresh,
            PruneMode::Relative => max - self.params.prune_log_thresh,
        };
        let mut first = true;
        self.filters.retain(|f| {
            let keep = first || (f.log_post() > f64::NEG_INFINITY && f.log_post() >= cut);
            first = false;
            keep
        });
        if let Some(cap) = self.params.beam_cap {
            self.filters.truncate(cap);
        }
    }

    pub fn result(&self, y: &[f64]) -> Result<DisaggResult> {
        let best = self
            .best()
            .ok_or_else(|| Error::InvalidInput("no samples processed".into()))?;
        if y.len() != best.len() {
            return Err(Error::InvalidInput(format!(
                "signal has {} samples, bank processed {}",
                y.len(),
                best.len()
            )));
        }
        let per_device_signals = reconstruct_devices(best, &self.library);
        let prediction: Vec<f64> = (0..y.len())
            .map(|t| per_device_signals.iter().map(|s| s[t]).sum())
            .collect();
        let residuals = y.iter().zip(&prediction).map(|(a, b)| a - b).collect();
        Ok(DisaggResult {
            device_names: self.library.names().iter().map(|s| s.to_string()).collect(),
            best_seg: best.segmentation().clone(),
            delta_u: best.delta_u_per_segment(),
            per_device_signals,
            prediction,
            residuals,
            log_post: best.log_post(),
            residual_sse: best.residual_sse(),
            bank_size_trace: self.bank_sizes.clone(),
        })
    }
}

/// Output of a complete disaggregation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DisaggResult {
    pub device_names: Vec<String>,
    pub best_seg: Segmentation,
    pub delta_u: Vec<SegmentEstimate>,
    pub per_device_signals: Vec<Vec<f64>>,
    /// Sum of the device signals.
    pub prediction: Vec<f64>,
    pub residuals: Vec<f64>,
    pub log_post: f64,
    /// Residual energy tracked by the winning filter.
    pub residual_sse: f64,
    pub bank_size_trace: Vec<usize>,
}

pub fn run_offline(y: &[f64], library: &DeviceLibrary, params: &DisaggParams) -> Result<DisaggResult> {
    if y.is_empty() {
        return Err(Error::InvalidInput("aggregate signal is empty".into()));
    }
    let mut bank = init_bank(library, params)?;
    for &v in y {
        bank.step(v)?;
    }
    bank.result(y)
}

/// Per-device signals implied by a filter: each device's output is the sum
/// of its step responses to the fitted input changes. Instant-off devices
/// drop straight to the new level on a downward change.
pub fn reconstruct_devices(filter: &Filter, library: &DeviceLibrary) -> Vec<Vec<f64>> {
    let len = filter.len();
    let segments = filter.delta_u_per_segment();
    library
        .models()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let dc = m.dc_gain();
            let mut out = vec![0.0; len];
            for seg in &segments {
                let du = seg.delta_u[i];
                if du == 0.0 {
                    continue;
                }
                for (offset, v) in out[seg.start..].iter_mut().enumerate() {
                    *v += if m.instant_off && du < 0.0 {
                        dc * du
                    } else {
                        m.step_response(offset) * du
                    };
                }
            }
            out
        })
        .collect()
}
