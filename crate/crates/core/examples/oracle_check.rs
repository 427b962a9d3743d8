//! Compare the filter bank with exhaustive search on a short signal.
//!
//! `cargo run --example oracle_check`

use fbdisagg::synth::DeviceSpec;
use fbdisagg::*;

fn main() -> Result<()> {
    let spec = ScenarioSpec {
        devices: (0..2)
            .map(|i| DeviceSpec {
                name: format!("d{i}"),
                order: 2,
                ..Default::default()
            })
            .collect(),
        horizon: 12,
        min_segment: 2,
        n_changes: 2,
        noise_sigma: 20.0,
        seed: 5,
        ..Default::default()
    };
    let s = generate(&spec)?;
    let params = DisaggParams::unpruned(400.0);

    let oracle = exact_map(&s.aggregate, &s.library, &params)?;
    let bank = run_offline(&s.aggregate, &s.library, &params)?;
    println!("truth  {}", s.true_delta);
    println!("oracle {}  log post {:.6}", oracle.best_delta, oracle.best_log_post);
    println!("bank   {}  log post {:.6}", bank.best_seg, bank.log_post);
    println!("largest bank {}", bank.bank_size_trace.iter().max().unwrap());
    println!(
        "MAP prefixes are optimal: {}",
        check_prefix_optimality(&oracle, &s.aggregate, &s.library, &params)?
    );

    let pruned = run_offline(
        &s.aggregate,
        &s.library,
        &DisaggParams {
            beam_cap: Some(4),
            ..params
        },
    )?;
    println!("beam 4 {}  log post {:.6}", pruned.best_seg, pruned.log_post);
    Ok(())
}
