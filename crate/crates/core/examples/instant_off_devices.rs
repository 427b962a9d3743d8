//! Devices with a slow switch-on transient and an instant switch-off.
//!
//! `cargo run --example instant_off_devices`

use fbdisagg::synth::simulate_device;
use fbdisagg::*;

fn main() -> Result<()> {
    let heater = FirModel::new("heater", vec![900.0, 400.0, -150.0])
        .with_bounds(-1.0, 1.0)
        .with_levels(0.0, 1.0)
        .with_instant_off(true);
    let u = [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
    println!("input    {u:?}");
    println!("response {:?}", simulate_device(&heater, &u));

    let mut spec = ScenarioSpec {
        seed: 6,
        ..Default::default()
    };
    for d in &mut spec.devices {
        d.instant_off = true;
        d.overshoot = 0.3;
    }
    let s = generate(&spec)?;
    let params = DisaggParams {
        sigma2: 1.0,
        one_change_per_step: true,
        branch_suppression_tol: 16.0,
        ..Default::default()
    };
    let r = run_offline(&s.aggregate, &s.library, &params)?;
    let report = evaluate(&r, &s, metrics::DEFAULT_WINDOW)?;
    println!("F1 {:.2}, worst energy fraction error {:.3}%", report.f1, report.max_energy_fraction_error() * 100.0);
    Ok(())
}
