//! Fit FIR models to plug-level training traces and pick their order.
//!
//! `cargo run --example fit_device_models`

use fbdisagg::model_lib::{fit_fir_detailed, order_criteria};
use fbdisagg::synth::training_traces;
use fbdisagg::*;

fn main() -> Result<()> {
    let spec = ScenarioSpec {
        noise_sigma: 2.0,
        ..Default::default()
    };
    let scenario = generate(&spec)?;

    for (data, truth) in training_traces(&spec, &scenario, 2000)?.iter().zip(scenario.library.models()) {
        let bic = order_criteria(&data.trace, &data.input, 8, Criterion::Bic)?;
        let order = select_order(&data.trace, &data.input, 8, Criterion::Bic)?;
        let fit = fit_fir_detailed(&data.trace, &data.input, order)?;
        println!("{} (true order {}): BIC picks order {order}", truth.device_name, truth.order);
        println!("  BIC by order: {:?}", bic.iter().map(|(_, v)| v.round()).collect::<Vec<_>>());
        for (j, (c, se)) in fit.model.coeffs.iter().zip(fit.standard_errors()).enumerate() {
            let t = truth.coeffs.get(j).copied().unwrap_or(0.0);
            println!("  w{j} = {c:9.3} +/- {se:.3}   (true {t:9.3})");
        }
        println!("  dc gain {:.1} W, noise variance {:.2}", fit.model.dc_gain(), fit.model.noise_variance);
    }

    // without known inputs: threshold the trace itself
    let data = &training_traces(&spec, &scenario, 2000)?[0];
    let peak = data.trace.samples.iter().cloned().fold(0.0, f64::max);
    let detected = detect_binary_input(&data.trace, peak / 2.0, 2)?;
    let agree = detected.values.iter().zip(&data.input.values).filter(|(a, b)| a == b).count();
    println!(
        "threshold detection agrees with the true input on {agree}/{} samples",
        detected.values.len()
    );
    Ok(())
}
