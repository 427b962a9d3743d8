use nalgebra::{DMatrix, DVector};

use super::boxls::{kkt_violation, solve_box_qp};
use super::response::StepModel;
use super::DisaggParams;
use crate::model_lib::DeviceLibrary;
use crate::segmentation::Segmentation;
use crate::{Error, Result};

/// Cross-products of one segment's regressor rows and targets.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SegmentStats {
    pub len: usize,
    width: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    pub target_sq: f64,
}

impl SegmentStats {
    pub fn new(width: usize) -> Self {
        SegmentStats {
            len: 0,
            width,
            gram: vec![0.0; width * width],
            cross: vec![0.0; width],
            target_sq: 0.0,
        }
    }

    pub fn push(&mut self, row: &[f64], target: f64) {
        let w = self.width;
        for i in 0..w {
            let ri = row[i];
            if ri != 0.0 {
                for j in 0..w {
                    self.gram[i * w + j] += ri * row[j];
                }
                self.cross[i] += ri * target;
            }
        }
        self.target_sq += target * target;
        self.len += 1;
    }
}

/// Solution of one segment's input-change fit.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SegmentSolution {
    /// Coefficients on the augmented columns.
    pub aug: Vec<f64>,
    pub sse: f64,
    /// KKT violation of the selected sign-orthant subproblem.
    pub kkt: f64,
}

// Above this many instant-off devices in play, signs are fixed heuristically
// instead of enumerating every orthant.
const MAX_ORTHANT_DEVICES: usize = 4;

/// Minimises the segment residual over the input change, honouring the box
/// bounds, the support mask and the sign-dependent response of instant-off
/// devices.
pub(crate) fn solve_segment(
    model: &StepModel,
    stats: &SegmentStats,
    bounds: &(Vec<f64>, Vec<f64>),
    mask: Option<usize>,
) -> SegmentSolution {
    let active: Vec<usize> = match mask {
        Some(i) => vec![i],
        None => (0..model.devices).collect(),
    };
    let switching: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&i| model.down_slot[i].is_some())
        .collect();

    if switching.len() <= MAX_ORTHANT_DEVICES {
        let mut best: Option<SegmentSolution> = None;
        for pattern in 0..(1usize << switching.len()) {
            let down: Vec<bool> = (0..switching.len()).map(|k| pattern >> k & 1 == 1).collect();
            let sol = solve_orthant(model, stats, bounds, &active, &switching, &down);
            if best.as_ref().is_none_or(|b| sol.sse < b.sse) {
                best = Some(sol);
            }
        }
        best.expect("at least one orthant")
    } else {
        // Solve with upward responses, then re-solve in the orthant those signs pick.
        let up = vec![false; switching.len()];
        let first = solve_orthant(model, stats, bounds, &active, &switching, &up);
        let down: Vec<bool> = switching
            .iter()
            .map(|&i| model.delta_u(&first.aug)[i] < 0.0)
            .collect();
        let second = solve_orthant(model, stats, bounds, &active, &switching, &down);
        if second.sse < first.sse {
            second
        } else {
            first
        }
    }
}

fn solve_orthant(
    model: &StepModel,
    stats: &SegmentStats,
    (box_lo, box_hi): &(Vec<f64>, Vec<f64>),
    active: &[usize],
    switching: &[usize],
    down: &[bool],
) -> SegmentSolution {
    let mut cols = Vec::with_capacity(active.len());
    let mut lo = Vec::with_capacity(active.len());
    let mut hi = Vec::with_capacity(active.len());
    for &i in active {
        match switching.iter().position(|&s| s == i) {
            None => {
                cols.push(i);
                lo.push(box_lo[i]);
                hi.push(box_hi[i]);
            }
            Some(k) if down[k] => {
                cols.push(model.down_slot[i].expect("instant-off slot"));
                lo.push(box_lo[i]);
                hi.push(0.0);
            }
            Some(_) => {
                cols.push(i);
                lo.push(0.0);
                hi.push(box_hi[i]);
            }
        }
    }
    let w = stats.width;
    let n = cols.len();
    let g = DMatrix::from_fn(n, n, |a, b| stats.gram[cols[a] * w + cols[b]]);
    let c = DVector::from_fn(n, |a, _| stats.cross[cols[a]]);
    let x = solve_box_qp(&g, &c, &lo, &hi);
    let sse = (stats.target_sq - 2.0 * c.dot(&x) + x.dot(&(&g * &x))).max(0.0);
    let kkt = kkt_violation(&g, &c, &x, &lo, &hi);
    let mut aug = vec![0.0; w];
    for (a, &col) in cols.iter().enumerate() {
        aug[col] = x[a];
    }
    SegmentSolution { aug, sse, kkt }
}

/// Result of [`estimate_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFit {
    pub delta_u: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sse: f64,
    /// Violation of the optimality conditions of the solved subproblem, in
    /// units of the half-gradient `A^T (A x - b)`.
    pub kkt_violation: f64,
}

/// Box-constrained least-squares fit of one segment.
///
/// Finds the input change minimising `|(y - y_ss_prev) - A du|^2` where `A`
/// holds the step responses at offsets `0..len`, subject to each device's
/// change bounds. With `support_mask = Some(i)` only device `i` may change.
pub fn estimate_segment(
    y_segment: &[f64],
    y_ss_prev: f64,
    library: &DeviceLibrary,
    support_mask: Option<usize>,
) -> Result<SegmentFit> {
    let model = StepModel::new(library)?;
    if let Some(i) = support_mask {
        if i >= model.devices {
            return Err(Error::InvalidInput(format!(
                "support mask names device {i}, library has {}",
                model.devices
            )));
        }
    }
    let bounds = (model.lo.clone(), model.hi.clone());
    fit_segment(&model, y_segment, y_ss_prev, &bounds, support_mask)
}

/// [`estimate_segment`] with explicit change bounds.
pub(crate) fn fit_segment(
    model: &StepModel,
    y_segment: &[f64],
    y_ss_prev: f64,
    bounds: &(Vec<f64>, Vec<f64>),
    support_mask: Option<usize>,
) -> Result<SegmentFit> {
    if y_segment.is_empty() {
        return Err(Error::InvalidInput("segment has no samples".into()));
    }
    let mut stats = SegmentStats::new(model.width);
    for (tau, &y) in y_segment.iter().enumerate() {
        stats.push(model.row(tau), y - y_ss_prev);
    }
    let sol = solve_segment(model, &stats, bounds, support_mask);
    let residuals: Vec<f64> = y_segment
        .iter()
        .enumerate()
        .map(|(tau, &y)| y - y_ss_prev - dot(model.row(tau), &sol.aug))
        .collect();
    let sse = residuals.iter().map(|e| e * e).sum();
    Ok(SegmentFit {
        delta_u: model.delta_u(&sol.aug),
        residuals,
        sse,
        kkt_violation: sol.kkt,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Input change estimated for the segment starting at `start`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentEstimate {
    pub start: usize,
    pub delta_u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct OpenSegment {
    start: usize,
    /// False for the initial segment, whose input is pinned to zero.
    estimated: bool,
    mask: Option<usize>,
    bounds: (Vec<f64>, Vec<f64>),
    stats: SegmentStats,
    solution: SegmentSolution,
    delta_u: Vec<f64>,
    last_residual: f64,
}

/// One segmentation hypothesis and its fitted input changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    seg: Segmentation,
    closed: Vec<SegmentEstimate>,
    open: OpenSegment,
    /// Device inputs at the end of the closed segments.
    levels: Vec<f64>,
    y_ss: f64,
    sse_closed: f64,
    log_prior: f64,
    violates_min_segment: bool,
    log_post: f64,
}

impl Filter {
    pub(crate) fn start(model: &StepModel, params: &DisaggParams, y0: f64, change: bool, mask: Option<usize>) -> Self {
        let width = model.width;
        let mut f = Filter {
            seg: Segmentation::default(),
            closed: Vec::new(),
            open: OpenSegment {
                start: 0,
                estimated: change,
                mask,
                bounds: model.change_bounds(&vec![0.0; model.devices]),
                stats: SegmentStats::new(width),
                solution: SegmentSolution {
                    aug: vec![0.0; width],
                    sse: 0.0,
                    kkt: 0.0,
                },
                delta_u: vec![0.0; model.devices],
                last_residual: 0.0,
            },
            levels: vec![0.0; model.devices],
            y_ss: 0.0,
            sse_closed: 0.0,
            log_prior: 0.0,
            violates_min_segment: false,
            log_post: 0.0,
        };
        f.seg.push(change);
        f.log_prior += bit_log_prior(change, params.change_prob);
        f.absorb(model, params, y0);
        f
    }

    /// Appends a 0 bit: the open segment grows by one sample.
    pub(crate) fn extend(&mut self, model: &StepModel, params: &DisaggParams, y: f64) {
        self.seg.push(false);
        self.log_prior += bit_log_prior(false, params.change_prob);
        self.absorb(model, params, y);
    }

    /// Copy with a 1 bit appended: the open segment closes and a new one
    /// starts at the next sample.
    pub(crate) fn branch(&self, model: &StepModel, params: &DisaggParams, y: f64, mask: Option<usize>) -> Filter {
        let mut f = self.clone();
        if params.enforce_min_segment && f.open.stats.len < model.min_segment {
            f.violates_min_segment = true;
        }
        f.sse_closed += f.open.solution.sse;
        if f.open.estimated {
            f.y_ss += model.steady_state_change(&f.open.solution.aug);
            for (l, du) in f.levels.iter_mut().zip(&f.open.delta_u) {
                *l += du;
            }
            f.closed.push(SegmentEstimate {
                start: f.open.start,
                delta_u: std::mem::take(&mut f.open.delta_u),
            });
        }
        f.open = OpenSegment {
            start: f.seg.len(),
            estimated: true,
            mask,
            bounds: model.change_bounds(&f.levels),
            stats: SegmentStats::new(model.width),
            solution: SegmentSolution {
                aug: vec![0.0; model.width],
                sse: 0.0,
                kkt: 0.0,
            },
            delta_u: vec![0.0; model.devices],
            last_residual: 0.0,
        };
        f.seg.push(true);
        f.log_prior += bit_log_prior(true, params.change_prob);
        f.absorb(model, params, y);
        f
    }

    fn absorb(&mut self, model: &StepModel, params: &DisaggParams, y: f64) {
        let offset = self.open.stats.len;
        let row = model.row(offset);
        let target = y - self.y_ss;
        self.open.stats.push(row, target);
        self.open.solution = if self.open.estimated {
            solve_segment(model, &self.open.stats, &self.open.bounds, self.open.mask)
        } else {
            SegmentSolution {
                aug: vec![0.0; model.width],
                sse: self.open.stats.target_sq,
                kkt: 0.0,
            }
        };
        if self.open.estimated {
            self.open.delta_u = model.delta_u(&self.open.solution.aug);
        }
        self.open.last_residual = target - dot(row, &self.open.solution.aug);
        self.log_post = log_posterior(self, params);
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.seg
    }

    /// Number of processed samples.
    pub fn len(&self) -> usize {
        self.seg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seg.is_empty()
    }

    pub fn log_post(&self) -> f64 {
        self.log_post
    }

    pub fn log_prior(&self) -> f64 {
        self.log_prior
    }

    /// Steady-state level reached at the end of the closed segments.
    pub fn y_ss(&self) -> f64 {
        self.y_ss
    }

    pub fn residual_sse_closed(&self) -> f64 {
        self.sse_closed
    }

    pub fn residual_sse(&self) -> f64 {
        self.sse_closed + self.open.solution.sse
    }

    /// Residual of the newest sample under the current open-segment fit.
    pub fn last_residual(&self) -> f64 {
        self.open.last_residual
    }

    pub fn violates_min_segment(&self) -> bool {
        self.violates_min_segment
    }

    /// Device inputs at the end of the closed segments.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Length of the still-open segment.
    pub fn open_len(&self) -> usize {
        self.open.stats.len
    }

    pub fn open_mask(&self) -> Option<usize> {
        self.open.mask
    }

    /// KKT violation of the open segment's latest fit.
    pub fn open_kkt_violation(&self) -> f64 {
        self.open.solution.kkt
    }

    /// Input change per estimated segment, open segment last. The initial
    /// segment has no entry.
    pub fn delta_u_per_segment(&self) -> Vec<SegmentEstimate> {
        let mut out = self.closed.clone();
        if self.open.estimated {
            out.push(SegmentEstimate {
                start: self.open.start,
                delta_u: self.open.delta_u.clone(),
            });
        }
        out
    }
}

fn bit_log_prior(change: bool, lambda: f64) -> f64 {
    if change {
        lambda.ln()
    } else {
        (-lambda).ln_1p()
    }
}

/// Log prior of a change sequence under independent Bernoulli changes.
pub fn log_prior(seg: &Segmentation, change_prob: f64) -> f64 {
    seg.delta().iter().map(|&b| bit_log_prior(b, change_prob)).sum()
}

/// Unnormalised log posterior of a filter: its log prior minus
/// `sse / (2 sigma^2)`, or `-inf` when it closed a segment shorter than the
/// minimum length while that floor is enforced.
pub fn log_posterior(filter: &Filter, params: &DisaggParams) -> f64 {
    if filter.violates_min_segment {
        return f64::NEG_INFINITY;
    }
    filter.log_prior - filter.residual_sse() / (2.0 * params.sigma2)
}
