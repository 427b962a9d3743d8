use nalgebra::DMatrix;

use crate::model_lib::DeviceLibrary;
use crate::{Error, Result};

/// Unit-step responses of every device: `A[tau, i]` is device `i`'s output
/// `tau` samples after a unit step. Rows from each device's order onward hold
/// its DC gain.
pub fn step_response_matrix(library: &DeviceLibrary, max_offset: usize) -> DMatrix<f64> {
    let models = library.models();
    DMatrix::from_fn(max_offset + 1, models.len(), |tau, i| models[i].step_response(tau))
}

/// Precomputed regressor rows for segment fits.
///
/// Columns are the upward step responses of all devices, followed by one
/// constant DC-gain column per instant-off device; the latter is the
/// response to a downward step of that device.
#[derive(Debug, Clone)]
pub(crate) struct StepModel {
    pub devices: usize,
    pub dc: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Input level range per device; unbounded when the model has none.
    pub level_lo: Vec<f64>,
    pub level_hi: Vec<f64>,
    /// Augmented column index of each device's downward response.
    pub down_slot: Vec<Option<usize>>,
    pub width: usize,
    pub min_segment: usize,
    rows: Vec<Vec<f64>>,
}

impl StepModel {
    pub fn new(library: &DeviceLibrary) -> Result<Self> {
        if library.is_empty() {
            return Err(Error::Validation("device library is empty".into()));
        }
        let models = library.models();
        for m in models {
            if m.input_min > m.input_max {
                return Err(Error::Validation(format!(
                    "device `{}`: infeasible input bounds [{}, {}]",
                    m.device_name, m.input_min, m.input_max
                )));
            }
        }
        let devices = models.len();
        let mut down_slot = vec![None; devices];
        let mut width = devices;
        for (i, m) in models.iter().enumerate() {
            if m.instant_off {
                down_slot[i] = Some(width);
                width += 1;
            }
        }
        let dc: Vec<f64> = library.dc_gains();
        let n = library.max_order();
        let rows = (0..=n)
            .map(|tau| {
                let mut row: Vec<f64> = models.iter().map(|m| m.step_response(tau)).collect();
                row.extend(
                    models
                        .iter()
                        .zip(&dc)
                        .filter(|(m, _)| m.instant_off)
                        .map(|(_, g)| *g),
                );
                row
            })
            .collect();
        Ok(StepModel {
            devices,
            dc,
            lo: models.iter().map(|m| m.input_min).collect(),
            hi: models.iter().map(|m| m.input_max).collect(),
            level_lo: models.iter().map(|m| m.input_levels.map_or(f64::NEG_INFINITY, |l| l.0)).collect(),
            level_hi: models.iter().map(|m| m.input_levels.map_or(f64::INFINITY, |l| l.1)).collect(),
            down_slot,
            width,
            min_segment: n,
            rows,
        })
    }

    pub fn row(&self, offset: usize) -> &[f64] {
        &self.rows[offset.min(self.rows.len() - 1)]
    }

    /// Per-device input changes encoded by an augmented coefficient vector.
    pub fn delta_u(&self, aug: &[f64]) -> Vec<f64> {
        (0..self.devices)
            .map(|i| aug[i] + self.down_slot[i].map_or(0.0, |s| aug[s]))
            .collect()
    }

    /// Change bounds for a segment that starts with the inputs at `levels`.
    pub fn change_bounds(&self, levels: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (0..self.devices)
            .map(|i| {
                let lo = self.lo[i].max(self.level_lo[i] - levels[i]).min(0.0);
                let hi = self.hi[i].min(self.level_hi[i] - levels[i]).max(0.0);
                (lo, hi)
            })
            .unzip()
    }

    pub fn steady_state_change(&self, aug: &[f64]) -> f64 {
        self.delta_u(aug).iter().zip(&self.dc).map(|(u, g)| u * g).sum()
    }
}
