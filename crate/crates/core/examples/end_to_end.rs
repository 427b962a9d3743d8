//! Simulate, train, disaggregate and score.
//!
//! `cargo run --release --example end_to_end`

use std::time::Instant;

use fbdisagg::synth::training_traces;
use fbdisagg::*;

fn main() -> Result<()> {
    let spec = ScenarioSpec {
        seed: 11,
        ..Default::default()
    };
    let scenario = generate(&spec)?;

    let models = training_traces(&spec, &scenario, 2000)?
        .iter()
        .map(|d| {
            let order = select_order(&d.trace, &d.input, 8, Criterion::Bic)?;
            fit_fir(&d.trace, &d.input, order)
        })
        .collect::<Result<Vec<_>>>()?;
    let library = DeviceLibrary::new(models)?;

    let params = DisaggParams {
        sigma2: library.total_noise_variance(),
        one_change_per_step: true,
        branch_suppression_tol: 16.0,
        ..Default::default()
    };
    let start = Instant::now();
    let result = run_offline(&scenario.aggregate, &library, &params)?;
    let elapsed = start.elapsed();

    let report = evaluate(&result, &scenario, metrics::DEFAULT_WINDOW)?;
    println!("{} samples in {elapsed:.2?}", scenario.aggregate.len());
    println!("changepoints: precision {:.2} recall {:.2} F1 {:.2}", report.precision, report.recall, report.f1);
    for (name, (rmse, efe)) in result
        .device_names
        .iter()
        .zip(report.per_device_rmse.iter().zip(&report.energy_fraction_error))
    {
        println!("  {name}: rmse {rmse:.2} W, energy fraction error {:.3}%", efe * 100.0);
    }
    println!("bank size max {} mean {:.1}", report.bank_size_max, report.bank_size_mean);
    Ok(())
}
