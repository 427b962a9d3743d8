//! Exhaustive MAP search over all segmentations of a short signal.
//!
//! Every change sequence is scored with the same filter code the bank uses,
//! so any disagreement between the two is a search failure, not a scoring
//! difference. Enumeration is a depth-first walk of the binary change tree,
//! which shares the work of common prefixes.

use crate::filterbank::{fit_segment, log_prior, rank, DisaggParams, Filter, StepModel};
use crate::model_lib::DeviceLibrary;
use crate::segmentation::Segmentation;
use crate::{Error, Result};

/// Longest signal the oracle will enumerate (`2^16` sequences).
pub const MAX_HORIZON: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_delta: Segmentation,
    pub best_log_post: f64,
    /// Best log posterior among sequences whose final segment may close,
    /// i.e. is at least the minimum segment length when that floor is
    /// enforced. Equals `best_log_post` otherwise.
    pub best_closable_log_post: f64,
    /// Every sequence with its log posterior, in lexicographic order.
    pub full_table: Option<Vec<(Segmentation, f64)>>,
}

pub fn exact_map(y: &[f64], library: &DeviceLibrary, params: &DisaggParams) -> Result<OracleResult> {
    search(y, library, params, false)
}

/// [`exact_map`] that also materialises the full table.
pub fn exact_map_with_table(y: &[f64], library: &DeviceLibrary, params: &DisaggParams) -> Result<OracleResult> {
    search(y, library, params, true)
}

struct Walk<'a> {
    y: &'a [f64],
    model: StepModel,
    params: &'a DisaggParams,
    best: Option<Filter>,
    best_closable: f64,
    table: Option<Vec<(Segmentation, f64)>>,
}

impl Walk<'_> {
    fn visit(&mut self, f: Filter) {
        let t = f.len();
        if t == self.y.len() {
            if !self.params.enforce_min_segment || f.open_len() >= self.model.min_segment {
                self.best_closable = self.best_closable.max(f.log_post());
            }
            if let Some(table) = &mut self.table {
                table.push((f.segmentation().clone(), f.log_post()));
            }
            if self.best.as_ref().is_none_or(|b| rank(&f, b).is_lt()) {
                self.best = Some(f);
            }
            return;
        }
        let y = self.y[t];
        let changed = f.branch(&self.model, self.params, y, None);
        let mut same = f;
        same.extend(&self.model, self.params, y);
        self.visit(same);
        self.visit(changed);
    }
}

fn search(y: &[f64], library: &DeviceLibrary, params: &DisaggParams, keep_table: bool) -> Result<OracleResult> {
    if y.is_empty() {
        return Err(Error::InvalidInput("signal is empty".into()));
    }
    if y.len() > MAX_HORIZON {
        return Err(Error::HorizonTooLong {
            len: y.len(),
            cap: MAX_HORIZON,
        });
    }
    params.validate()?;
    let mut walk = Walk {
        y,
        model: StepModel::new(library)?,
        params,
        best: None,
        best_closable: f64::NEG_INFINITY,
        table: keep_table.then(|| Vec::with_capacity(1 << y.len())),
    };
    for change in [false, true] {
        let f = Filter::start(&walk.model, params, y[0], change, None);
        walk.visit(f);
    }
    let best = walk.best.expect("at least one leaf");
    Ok(OracleResult {
        best_delta: best.segmentation().clone(),
        best_log_post: best.log_post(),
        best_closable_log_post: walk.best_closable,
        full_table: walk.table,
    })
}

/// The filter that follows `seg` over `y`, built by the bank's own
/// extend and branch operations.
pub fn score_segmentation(
    y: &[f64],
    seg: &Segmentation,
    library: &DeviceLibrary,
    params: &DisaggParams,
) -> Result<Filter> {
    if y.is_empty() || y.len() != seg.len() {
        return Err(Error::InvalidInput(format!(
            "segmentation covers {} samples, signal has {}",
            seg.len(),
            y.len()
        )));
    }
    let model = StepModel::new(library)?;
    let d = seg.delta();
    let mut f = Filter::start(&model, params, y[0], d[0], None);
    for t in 1..y.len() {
        if d[t] {
            f = f.branch(&model, params, y[t], None);
        } else {
            f.extend(&model, params, y[t]);
        }
    }
    Ok(f)
}

/// Log posterior of `seg` computed segment by segment from scratch, without
/// the incremental filter updates.
pub fn score_segmentation_batch(
    y: &[f64],
    seg: &Segmentation,
    library: &DeviceLibrary,
    params: &DisaggParams,
) -> Result<f64> {
    if y.len() != seg.len() {
        return Err(Error::InvalidInput("segmentation and signal lengths differ".into()));
    }
    let model = StepModel::new(library)?;
    let segments = seg.segments();
    let n = library.max_order();
    let dc = library.dc_gains();
    let mut levels = vec![0.0; library.len()];
    let mut y_ss = 0.0;
    let mut sse = 0.0;
    for (k, s) in segments.iter().enumerate() {
        let closed = k + 1 < segments.len();
        if params.enforce_min_segment && closed && s.len() < n {
            return Ok(f64::NEG_INFINITY);
        }
        let part = &y[s.start..=s.end];
        if s.start == 0 && !seg.delta()[0] {
            sse += part.iter().map(|v| v * v).sum::<f64>();
            continue;
        }
        let fit = fit_segment(&model, part, y_ss, &model.change_bounds(&levels), None)?;
        sse += fit.sse;
        y_ss += fit.delta_u.iter().zip(&dc).map(|(u, g)| u * g).sum::<f64>();
        for (l, du) in levels.iter_mut().zip(&fit.delta_u) {
            *l += du;
        }
    }
    Ok(log_prior(seg, params.change_prob) - sse / (2.0 * params.sigma2))
}

/// Checks that the prefix before each change of the MAP sequence is itself
/// a MAP sequence of the shorter signal.
///
/// With the segment floor enforced the comparison is against the best prefix
/// whose final segment may close.
pub fn check_prefix_optimality(
    result: &OracleResult,
    y: &[f64],
    library: &DeviceLibrary,
    params: &DisaggParams,
) -> Result<bool> {
    const TOL: f64 = 1e-9;
    for t0 in result.best_delta.to_changepoints() {
        if t0 == 0 {
            continue;
        }
        let prefix = result.best_delta.prefix(t0);
        let score = score_segmentation(&y[..t0], &prefix, library, params)?.log_post();
        let shorter = exact_map(&y[..t0], library, params)?;
        if (score - shorter.best_closable_log_post).abs() > TOL {
            return Ok(false);
        }
    }
    Ok(true)
}
