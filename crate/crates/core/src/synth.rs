//! Ground-truth scenarios: random FIR devices driven by piecewise-constant
//! inputs, summed into a noisy aggregate.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model_lib::{DeviceLibrary, FirModel, InputSignal, TrainingTrace};
use crate::segmentation::Segmentation;
use crate::{Error, Result};

/// Sample period of a 0.13 Hz meter, in seconds.
pub const DEFAULT_SAMPLE_PERIOD: f64 = 1.0 / 0.13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSpec {
    pub name: String,
    pub order: usize,
    /// Explicit coefficients; drawn at random when absent.
    pub coeffs: Option<Vec<f64>>,
    /// Range of the drawn DC gain, watts per input unit.
    pub gain_range: (f64, f64),
    pub instant_off: bool,
    /// Switch-on overshoot as a fraction of the DC gain, moved from the
    /// second coefficient onto the first.
    pub overshoot: f64,
    /// Input levels; must contain 0, the initial level.
    pub levels: Vec<f64>,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec {
            name: "device".into(),
            order: 5,
            coeffs: None,
            gain_range: (70.0, 1800.0),
            instant_off: false,
            overshoot: 0.0,
            levels: vec![0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub devices: Vec<DeviceSpec>,
    /// Number of samples.
    pub horizon: usize,
    /// Minimum spacing between changes, and minimum first and last segment.
    pub min_segment: usize,
    pub n_changes: usize,
    /// Standard deviation of the aggregate noise, watts.
    pub noise_sigma: f64,
    pub sample_period: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            devices: (1..=3)
                .map(|i| DeviceSpec {
                    name: format!("device_{i}"),
                    ..Default::default()
                })
                .collect(),
            horizon: 500,
            min_segment: 25,
            n_changes: 8,
            noise_sigma: 1.0,
            sample_period: DEFAULT_SAMPLE_PERIOD,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn max_order(&self) -> usize {
        self.devices
            .iter()
            .map(|d| d.coeffs.as_ref().map_or(d.order, |c| c.len().saturating_sub(1)))
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::Validation("scenario needs at least one device".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be positive".into()));
        }
        if self.min_segment == 0 || self.min_segment < self.max_order() {
            return Err(Error::Validation(format!(
                "min_segment {} must be at least 1 and at least the largest device order {}",
                self.min_segment,
                self.max_order()
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation("noise_sigma must be finite and >= 0".into()));
        }
        for d in &self.devices {
            let (lo, hi) = d.gain_range;
            if d.coeffs.is_none() && !(lo > 0.0 && lo <= hi) {
                return Err(Error::Validation(format!(
                    "device `{}`: gain range [{lo}, {hi}] must be positive and ordered",
                    d.name
                )));
            }
            if d.levels.len() < 2 || !d.levels.contains(&0.0) {
                return Err(Error::Validation(format!(
                    "device `{}`: levels need at least two values including 0",
                    d.name
                )));
            }
        }
        if (self.n_changes + 1) * self.min_segment > self.horizon {
            return Err(Error::Validation(format!(
                "horizon {} is too short for {} changes spaced at least {} apart",
                self.horizon, self.n_changes, self.min_segment
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub library: DeviceLibrary,
    pub true_inputs: Vec<Vec<f64>>,
    pub true_delta: Segmentation,
    /// Noiseless per-device outputs.
    pub device_signals: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    /// Sum of the device signals plus the noise.
    pub aggregate: Vec<f64>,
}

fn draw_coeffs(d: &DeviceSpec, rng: &mut impl Rng) -> Vec<f64> {
    if let Some(c) = &d.coeffs {
        return c.clone();
    }
    let gain = rng.random_range(d.gain_range.0..=d.gain_range.1);
    let mut w: Vec<f64> = (0..=d.order)
        .map(|j| if j == 0 { rng.random_range(1.0..2.0) } else { rng.random_range(0.3..1.0) })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v *= gain / total);
    if d.overshoot > 0.0 && d.order >= 1 {
        w[0] += d.overshoot * gain;
        w[1] -= d.overshoot * gain;
    }
    w
}

/// Output of one device for input `u`, zero initial conditions.
///
/// Without instant-off this is the FIR convolution. With it, each input
/// change contributes its step response, except that downward changes reach
/// the new steady state immediately.
pub fn simulate_device(model: &FirModel, u: &[f64]) -> Vec<f64> {
    if !model.instant_off {
        return (0..u.len())
            .map(|t| {
                model
                    .coeffs
                    .iter()
                    .take(t + 1)
                    .enumerate()
                    .map(|(j, b)| b * u[t - j])
                    .sum()
            })
            .collect();
    }
    let dc = model.dc_gain();
    let mut out = vec![0.0; u.len()];
    let mut prev = 0.0;
    for (k, &level) in u.iter().enumerate() {
        let du = level - prev;
        prev = level;
        if du == 0.0 {
            continue;
        }
        for (offset, v) in out[k..].iter_mut().enumerate() {
            *v += if du < 0.0 { dc * du } else { model.step_response(offset) * du };
        }
    }
    out
}

/// Change times with every segment, including the first and last, at least
/// `min_segment` long.
fn draw_change_times(horizon: usize, n: usize, min_segment: usize, rng: &mut impl Rng) -> Vec<usize> {
    let slack = horizon - (n + 1) * min_segment;
    let mut offsets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    offsets
        .iter()
        .enumerate()
        .map(|(l, s)| (l + 1) * min_segment + s)
        .collect()
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.devices.len();
    let per_device_var = spec.noise_sigma * spec.noise_sigma / d as f64;

    let models: Vec<FirModel> = spec
        .devices
        .iter()
        .map(|ds| {
            let coeffs = draw_coeffs(ds, &mut rng);
            let top = ds.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let bottom = ds.levels.iter().cloned().fold(f64::INFINITY, f64::min);
            FirModel::new(ds.name.clone(), coeffs)
                .with_bounds(bottom - top, top - bottom)
                .with_levels(bottom, top)
                .with_instant_off(ds.instant_off)
                .with_noise_variance(per_device_var)
        })
        .collect();
    let library = DeviceLibrary::new(models)?;

    let changes = draw_change_times(spec.horizon, spec.n_changes, spec.min_segment, &mut rng);
    let mut true_inputs = vec![vec![0.0; spec.horizon]; d];
    let mut level = vec![0.0; d];
    let mut next = 0;
    for t in 0..spec.horizon {
        if next < changes.len() && changes[next] == t {
            let i = rng.random_range(0..d);
            let others: Vec<f64> = spec.devices[i]
                .levels
                .iter()
                .copied()
                .filter(|&v| v != level[i])
                .collect();
            level[i] = *others.choose(&mut rng).expect("two or more levels");
            next += 1;
        }
        for i in 0..d {
            true_inputs[i][t] = level[i];
        }
    }
    let true_delta = Segmentation::from_changepoints(spec.horizon, &changes);

    let device_signals: Vec<Vec<f64>> = library
        .models()
        .iter()
        .zip(&true_inputs)
        .map(|(m, u)| simulate_device(m, u))
        .collect();
    let drawn: Vec<f64> = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        (0..spec.horizon).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; spec.horizon]
    };
    let clean: Vec<f64> = (0..spec.horizon)
        .map(|t| device_signals.iter().map(|s| s[t]).sum())
        .collect();
    let aggregate: Vec<f64> = clean.iter().zip(&drawn).map(|(c, n)| c + n).collect();
    // Store the noise as realised after rounding, so that subtracting the
    // device signals from the aggregate recovers it bit for bit.
    let noise = aggregate.iter().zip(&clean).map(|(a, c)| a - c).collect();

    Ok(Scenario {
        library,
        true_inputs,
        true_delta,
        device_signals,
        noise,
        aggregate,
    })
}

/// A plug-level training trace with the input that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub trace: TrainingTrace,
    pub input: InputSignal,
}

/// One plug-level training trace per device of `scenario`: on/off cycles
/// with segments between `min_segment` and `3 * min_segment` samples long,
/// plus that device's share of the noise.
pub fn training_traces(spec: &ScenarioSpec, scenario: &Scenario, len: usize) -> Result<Vec<TrainingData>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7472_6169_6e00);
    let lo = spec.min_segment.max(1);
    scenario
        .library
        .models()
        .iter()
        .zip(&spec.devices)
        .map(|(m, ds)| {
            let top = ds.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut u = Vec::with_capacity(len);
            let mut on = false;
            while u.len() < len {
                let run = rng.random_range(lo..=3 * lo);
                u.extend(std::iter::repeat_n(if on { top } else { 0.0 }, run));
                on = !on;
            }
            u.truncate(len);
            let sigma = m.noise_variance.sqrt();
            let mut z = simulate_device(m, &u);
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("valid sigma");
                z.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
            Ok(TrainingData {
                trace: TrainingTrace::new(m.device_name.clone(), spec.sample_period, z)?,
                input: InputSignal::levels(u),
            })
        })
        .collect()
}
