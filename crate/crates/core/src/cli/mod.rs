//! The `fbdisagg` command line.
//!
//! Every subcommand is deterministic given its flags. Settings come from
//! built-in defaults, then an optional TOML file given by `--config`, then
//! flags. Exit codes: 0 on success, 1 when the numerics fail, 2 for usage
//! and I/O errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::filterbank::{run_offline, DisaggParams, DisaggResult, PruneMode, SegmentEstimate};
use crate::metrics::{evaluate_parts, DEFAULT_WINDOW};
use crate::model_lib::{
    detect_binary_input, fit_fir_detailed, load_library, read_trace_csv, save_library, select_order,
    Criterion, DeviceLibrary, InputSignal,
};
use crate::oracle::exact_map;
use crate::synth::{generate, training_traces, DeviceSpec, ScenarioSpec};
use crate::{csvio, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fbdisagg", version, about = "Energy disaggregation with an online filter bank")]
pub struct Cli {
    /// TOML file with `[disagg]`, `[scenario]` and `[train]` tables; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Suppress progress output on stdout.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one FIR model per plug-level trace and write a device library.
    Train(TrainArgs),
    /// Generate a synthetic scenario with its true library and training traces.
    Simulate(SimulateArgs),
    /// Disaggregate an aggregate signal with a device library.
    #[command(allow_negative_numbers = true)]
    Disaggregate(DisaggregateArgs),
    /// Exhaustive MAP segmentation of a short aggregate signal.
    #[command(allow_negative_numbers = true)]
    Oracle(OracleArgs),
    /// Score a disaggregation result against a simulated truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sample_period: Option<f64>,
    pub order: Option<usize>,
    pub max_order: Option<usize>,
    pub criterion: Option<String>,
    pub on_threshold: Option<f64>,
    pub debounce: Option<usize>,
    pub instant_off: Vec<String>,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub disagg: DisaggParams,
    pub scenario: ScenarioSpec,
    pub train: TrainConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Trace CSVs (`t,watts`); each device is named after its file stem.
    #[arg(required = true, value_name = "TRACE")]
    pub traces: Vec<PathBuf>,
    /// Output library file.
    #[arg(long, short, default_value = "library.json")]
    pub out: PathBuf,
    /// Seconds per sample.
    #[arg(long)]
    pub sample_period: Option<f64>,
    /// Fixed model order; skips order selection.
    #[arg(long)]
    pub order: Option<usize>,
    /// Largest order tried by selection [default: 10].
    #[arg(long)]
    pub max_order: Option<usize>,
    /// Order selection criterion, `aic` or `bic` [default: bic].
    #[arg(long)]
    pub criterion: Option<String>,
    /// On/off threshold in watts [default: half the trace maximum].
    #[arg(long)]
    pub on_threshold: Option<f64>,
    /// Samples a state must persist before a switch is committed [default: 2].
    #[arg(long)]
    pub debounce: Option<usize>,
    /// Mark a device as turning off instantly; repeatable.
    #[arg(long, value_name = "NAME")]
    pub instant_off: Vec<String>,
    /// Directory of known inputs (`t,u`, same file names as the traces);
    /// replaces on/off detection.
    #[arg(long, value_name = "DIR")]
    pub inputs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long, short, default_value = "scenario")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of devices, replacing the configured device list.
    #[arg(long)]
    pub devices: Option<usize>,
    /// FIR order of every device.
    #[arg(long)]
    pub order: Option<usize>,
    /// Make every device turn off instantly.
    #[arg(long)]
    pub instant_off: bool,
    /// Switch-on overshoot of every device, as a fraction of its gain.
    #[arg(long)]
    pub overshoot: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub min_segment: Option<usize>,
    #[arg(long)]
    pub n_changes: Option<usize>,
    /// Aggregate noise standard deviation, watts.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub sample_period: Option<f64>,
    /// Samples per training trace; 0 skips them.
    #[arg(long, default_value_t = 1000)]
    pub training_len: usize,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ParamFlags {
    /// Aggregate noise variance in watts squared [default: library total].
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Prior probability of a change per sample.
    #[arg(long)]
    pub change_prob: Option<f64>,
    /// `relative` or `absolute`.
    #[arg(long)]
    pub prune_mode: Option<PruneMode>,
    /// Log threshold (absolute) or offset from the best (relative); `-inf` keeps everything.
    #[arg(long = "p-thres", alias = "prune-log-thresh", allow_hyphen_values = true)]
    pub prune_log_thresh: Option<f64>,
    /// Bank size cap, or `none`.
    #[arg(long, value_parser = parse_beam_cap)]
    pub beam_cap: Option<BeamCap>,
    #[arg(long)]
    pub enforce_min_segment: Option<bool>,
    #[arg(long)]
    pub one_change_per_step: Option<bool>,
    #[arg(long)]
    pub branch_suppression_tol: Option<f64>,
    #[arg(long)]
    pub branch_tie_tol: Option<f64>,
}

/// `--beam-cap` value; `None` means uncapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamCap(pub Option<usize>);

fn parse_beam_cap(s: &str) -> std::result::Result<BeamCap, String> {
    if s == "none" {
        return Ok(BeamCap(None));
    }
    s.parse()
        .map(|n| BeamCap(Some(n)))
        .map_err(|_| format!("expected an integer or `none`, got `{s}`"))
}

impl clap::ValueEnum for PruneMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[PruneMode::Relative, PruneMode::Absolute]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            PruneMode::Relative => "relative",
            PruneMode::Absolute => "absolute",
        }))
    }
}

impl ParamFlags {
    /// Applies the flags over `base`; a missing `sigma2` everywhere falls back
    /// to the library's summed device noise.
    fn resolve(&self, base: &DisaggParams, sigma2_in_file: bool, library: &DeviceLibrary) -> DisaggParams {
        let mut p = base.clone();
        if !sigma2_in_file {
            let total = library.total_noise_variance();
            if total > 0.0 {
                p.sigma2 = total;
            }
        }
        if let Some(v) = self.sigma2 {
            p.sigma2 = v;
        }
        if let Some(v) = self.change_prob {
            p.change_prob = v;
        }
        if let Some(v) = self.prune_mode {
            p.prune_mode = v;
        }
        if let Some(v) = self.prune_log_thresh {
            p.prune_log_thresh = v;
        }
        if let Some(BeamCap(v)) = self.beam_cap {
            p.beam_cap = v;
        }
        if let Some(v) = self.enforce_min_segment {
            p.enforce_min_segment = v;
        }
        if let Some(v) = self.one_change_per_step {
            p.one_change_per_step = v;
        }
        if let Some(v) = self.branch_suppression_tol {
            p.branch_suppression_tol = v;
        }
        if let Some(v) = self.branch_tie_tol {
            p.branch_tie_tol = v;
        }
        p
    }
}

#[derive(Debug, Args)]
pub struct DisaggregateArgs {
    /// Aggregate CSV (`t,watts`).
    #[arg(long)]
    pub aggregate: PathBuf,
    #[arg(long)]
    pub library: PathBuf,
    /// Output directory for `devices.csv`, `summary.json` and `plot.csv`.
    #[arg(long, short, default_value = "result")]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamFlags,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub aggregate: PathBuf,
    #[arg(long)]
    pub library: PathBuf,
    /// Also write the answer to this JSON file.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory written by `disaggregate`.
    #[arg(long)]
    pub result: PathBuf,
    /// Directory written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Changepoint matching window in samples.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Output directory for `report.json` and `report.csv`; defaults to the result directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Written by `disaggregate` next to the per-device CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub devices: Vec<String>,
    pub changepoints: Vec<usize>,
    pub delta_u: Vec<SegmentEstimate>,
    pub log_post: Option<f64>,
    pub residual_sse: f64,
    pub bank_size_trace: Vec<usize>,
    pub params: DisaggParams,
}

/// Written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub spec: ScenarioSpec,
    pub devices: Vec<String>,
    pub changepoints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub changepoints: Vec<usize>,
    pub delta: String,
    pub log_post: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: format!("{} (line {}, column {})", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

struct Ctx {
    config: ConfigFile,
    sigma2_in_file: bool,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let (config, sigma2_in_file) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let has_sigma2 = toml::from_str::<toml::Table>(&text)
                .ok()
                .and_then(|t| t.get("disagg").and_then(|d| d.get("sigma2")).cloned())
                .is_some();
            (ConfigFile::load(path)?, has_sigma2)
        }
        None => (ConfigFile::default(), false),
    };
    let ctx = Ctx {
        config,
        sigma2_in_file,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Train(a) => cmd_train(&ctx, &a),
        Command::Simulate(a) => cmd_simulate(&ctx, &a),
        Command::Disaggregate(a) => cmd_disaggregate(&ctx, &a),
        Command::Oracle(a) => cmd_oracle(&ctx, &a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, &a),
    }
}

fn device_name(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidInput(format!("cannot name a device after {}", path.display())))
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = &ctx.config.train;
    let period = a.sample_period.or(cfg.sample_period).unwrap_or(crate::synth::DEFAULT_SAMPLE_PERIOD);
    let fixed_order = a.order.or(cfg.order);
    let max_order = a.max_order.or(cfg.max_order).unwrap_or(10);
    let criterion: Criterion = a
        .criterion
        .as_deref()
        .or(cfg.criterion.as_deref())
        .unwrap_or("bic")
        .parse()?;
    let debounce = a.debounce.or(cfg.debounce).unwrap_or(2);
    let instant: Vec<&String> = a.instant_off.iter().chain(&cfg.instant_off).collect();

    let mut models = Vec::new();
    for path in &a.traces {
        let name = device_name(path)?;
        let trace = read_trace_csv(path, name.clone(), period)?;
        let input = match &a.inputs {
            Some(dir) => read_input(&dir.join(path.file_name().unwrap_or_default()))?,
            None => {
                let threshold = match a.on_threshold.or(cfg.on_threshold) {
                    Some(v) => v,
                    None => {
                        let peak = trace.samples.iter().cloned().fold(0.0, f64::max);
                        if peak <= 0.0 {
                            return Err(Error::IllPosedFit {
                                device: name,
                                reason: "trace never draws power".into(),
                            });
                        }
                        0.5 * peak
                    }
                };
                detect_binary_input(&trace, threshold, debounce)?
            }
        };
        let order = match fixed_order {
            Some(n) => n,
            None => select_order(&trace, &input, max_order, criterion)?,
        };
        let fit = fit_fir_detailed(&trace, &input, order)?;
        let model = fit.model.with_instant_off(instant.contains(&&name));
        ctx.say(format!(
            "{name}: order {}, dc gain {:.6} W, noise variance {:.6} W^2",
            model.order,
            model.dc_gain(),
            model.noise_variance
        ));
        models.push(model);
    }
    let library = DeviceLibrary::new(models)?;
    save_library(&library, &a.out)?;
    ctx.say(format!("wrote {}", a.out.display()));
    Ok(())
}

fn read_input(path: &Path) -> Result<InputSignal> {
    let (header, columns) = csvio::read_table(path)?;
    if header.len() != 2 || header[1] != "u" {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: format!("expected header `t,u`, found `{}`", header.join(",")),
        });
    }
    Ok(InputSignal::levels(columns.into_iter().nth(1).unwrap_or_default()))
}

fn scenario_spec(ctx: &Ctx, a: &SimulateArgs) -> ScenarioSpec {
    let mut spec = ctx.config.scenario.clone();
    if let Some(n) = a.devices {
        let template = spec.devices.first().cloned().unwrap_or_default();
        spec.devices = (1..=n)
            .map(|i| DeviceSpec {
                name: format!("device_{i}"),
                ..template.clone()
            })
            .collect();
    }
    for d in &mut spec.devices {
        if let Some(order) = a.order {
            d.order = order;
            d.coeffs = None;
        }
        if a.instant_off {
            d.instant_off = true;
        }
        if let Some(v) = a.overshoot {
            d.overshoot = v;
        }
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.horizon {
        spec.horizon = v;
    }
    if let Some(v) = a.min_segment {
        spec.min_segment = v;
    }
    if let Some(v) = a.n_changes {
        spec.n_changes = v;
    }
    if let Some(v) = a.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = a.sample_period {
        spec.sample_period = v;
    }
    spec
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let spec = scenario_spec(ctx, a);
    let scenario = generate(&spec)?;
    create_dir(&a.out)?;
    let names: Vec<String> = scenario.library.names().iter().map(|s| s.to_string()).collect();

    csvio::write_series(a.out.join("aggregate.csv"), &scenario.aggregate)?;
    let header: Vec<String> = std::iter::once("t".to_owned()).chain(names.iter().cloned()).collect();
    csvio::write_table(a.out.join("truth.csv"), &header, &scenario.device_signals)?;
    csvio::write_table(a.out.join("truth_inputs.csv"), &header, &scenario.true_inputs)?;
    save_library(&scenario.library, a.out.join("library.json"))?;
    write_json(
        &a.out.join("scenario.json"),
        &ScenarioFile {
            spec: spec.clone(),
            devices: names,
            changepoints: scenario.true_delta.to_changepoints(),
        },
    )?;
    if a.training_len > 0 {
        let dir = a.out.join("traces");
        create_dir(&dir)?;
        let inputs = dir.join("inputs");
        create_dir(&inputs)?;
        for data in training_traces(&spec, &scenario, a.training_len)? {
            let file = format!("{}.csv", data.trace.device_name);
            csvio::write_series(dir.join(&file), &data.trace.samples)?;
            csvio::write_table(inputs.join(&file), &["t".to_owned(), "u".to_owned()], &[data.input.values])?;
        }
    }
    ctx.say(format!(
        "{} samples, {} devices, changes at {}; wrote {}",
        spec.horizon,
        spec.devices.len(),
        scenario.true_delta.changepoints_csv(),
        a.out.display()
    ));
    Ok(())
}

fn load_inputs(ctx: &Ctx, aggregate: &Path, library: &Path, flags: &ParamFlags) -> Result<(Vec<f64>, DeviceLibrary, DisaggParams)> {
    let y = csvio::read_series(aggregate)?;
    let lib = load_library(library)?;
    let params = flags.resolve(&ctx.config.disagg, ctx.sigma2_in_file, &lib);
    params.validate()?;
    Ok((y, lib, params))
}

fn write_result(dir: &Path, y: &[f64], r: &DisaggResult, params: &DisaggParams) -> Result<()> {
    create_dir(dir)?;
    let header: Vec<String> = std::iter::once("t".to_owned())
        .chain(r.device_names.iter().cloned())
        .chain(std::iter::once("residual".to_owned()))
        .collect();
    let mut columns = r.per_device_signals.clone();
    columns.push(r.residuals.clone());
    csvio::write_table(dir.join("devices.csv"), &header, &columns)?;

    write_json(
        &dir.join("summary.json"),
        &Summary {
            devices: r.device_names.clone(),
            changepoints: r.best_seg.to_changepoints(),
            delta_u: r.delta_u.clone(),
            log_post: finite(r.log_post),
            residual_sse: r.residual_sse,
            bank_size_trace: r.bank_size_trace.clone(),
            params: params.clone(),
        },
    )?;

    let mut plot = String::from("t,series,watts\n");
    let series = std::iter::once(("aggregate", y))
        .chain(std::iter::once(("estimate", r.prediction.as_slice())))
        .chain(r.device_names.iter().map(String::as_str).zip(r.per_device_signals.iter().map(Vec::as_slice)));
    for (name, values) in series {
        for (t, v) in values.iter().enumerate() {
            plot.push_str(&format!("{t},{name},{v}\n"));
        }
    }
    write_text(&dir.join("plot.csv"), &plot)
}

fn cmd_disaggregate(ctx: &Ctx, a: &DisaggregateArgs) -> Result<()> {
    let (y, lib, params) = load_inputs(ctx, &a.aggregate, &a.library, &a.params)?;
    let r = run_offline(&y, &lib, &params)?;
    write_result(&a.out, &y, &r, &params)?;
    let max_bank = r.bank_size_trace.iter().copied().max().unwrap_or(0);
    ctx.say(format!(
        "changes at {}; log posterior {}; largest bank {max_bank}; wrote {}",
        r.best_seg.changepoints_csv(),
        r.log_post,
        a.out.display()
    ));
    Ok(())
}

fn cmd_oracle(ctx: &Ctx, a: &OracleArgs) -> Result<()> {
    let (y, lib, params) = load_inputs(ctx, &a.aggregate, &a.library, &a.params)?;
    let r = exact_map(&y, &lib, &params)?;
    let answer = OracleAnswer {
        changepoints: r.best_delta.to_changepoints(),
        delta: r.best_delta.to_string(),
        log_post: finite(r.best_log_post),
    };
    if let Some(out) = &a.out {
        write_json(out, &answer)?;
    }
    println!("{}", serde_json::to_string(&answer).map_err(|e| Error::Internal(e.to_string()))?);
    Ok(())
}

fn read_device_table(path: &Path, names: &[String], extra: &[&str]) -> Result<Vec<Vec<f64>>> {
    let (header, columns) = csvio::read_table(path)?;
    let expected: Vec<&str> = std::iter::once("t")
        .chain(names.iter().map(String::as_str))
        .chain(extra.iter().copied())
        .collect();
    if header != expected {
        return Err(Error::Validation(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            expected,
            header
        )));
    }
    Ok(columns.into_iter().skip(1).take(names.len()).collect())
}

fn cmd_evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let summary: Summary = read_json(&a.result.join("summary.json"))?;
    let truth: ScenarioFile = read_json(&a.truth.join("scenario.json"))?;
    if summary.devices != truth.devices {
        return Err(Error::Validation(format!(
            "device order differs: result {:?}, truth {:?}",
            summary.devices, truth.devices
        )));
    }
    let estimated = read_device_table(&a.result.join("devices.csv"), &summary.devices, &["residual"])?;
    let true_signals = read_device_table(&a.truth.join("truth.csv"), &truth.devices, &[])?;
    let report = evaluate_parts(
        &summary.changepoints,
        &estimated,
        &truth.changepoints,
        &true_signals,
        &summary.bank_size_trace,
        a.window,
    )?;
    let out = a.out.as_ref().unwrap_or(&a.result);
    create_dir(out)?;
    report.write_json(out.join("report.json"))?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    ctx.say(report.to_json());
    Ok(())
}
