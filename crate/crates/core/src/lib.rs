//! Energy disaggregation by online filter-bank segmentation.
//!
//! An aggregate power signal is modelled as the sum of per-device FIR
//! responses to piecewise-constant inputs. Disaggregation becomes a
//! segmentation problem: find the change points (and the input change at
//! each one) that maximise the posterior. The [`filterbank`] module keeps a
//! bank of segmentation hypotheses, branches only the most likely ones and
//! prunes the rest, which keeps the search online and bounded.
//!
//! The pieces:
//!
//! - [`model_lib`]: fit FIR device models from plug-level training traces.
//! - [`segmentation`]: change-point bookkeeping.
//! - [`filterbank`]: the online MAP segmenter and per-device reconstruction.
//! - [`oracle`]: exhaustive MAP search for short horizons, used as a test oracle.
//! - [`synth`]: ground-truth scenario generator.
//! - [`metrics`]: scoring against ground truth.
//! - [`cli`]: the `fbdisagg` command-line front end.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod cli;
pub mod csvio;
mod error;
pub mod filterbank;
pub mod metrics;
pub mod model_lib;
pub mod oracle;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
pub use filterbank::{
    estimate_segment, init_bank, log_posterior, oedfb_step, reconstruct_devices, run_offline,
    step_response_matrix, DisaggParams, DisaggResult, Filter, FilterBank, PruneMode, SegmentFit,
};
pub use metrics::{evaluate, EvalReport};
pub use model_lib::{
    dc_gain, detect_binary_input, fit_fir, load_library, save_library, select_order, Criterion,
    DeviceLibrary, FirModel, InputSignal, TrainingTrace,
};
pub use oracle::{check_prefix_optimality, exact_map, OracleResult};
pub use segmentation::{min_segment_ok, Segmentation};
pub use synth::{generate, Scenario, ScenarioSpec};
