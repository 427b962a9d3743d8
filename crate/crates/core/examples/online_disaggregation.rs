//! Feed samples to the filter bank one at a time and watch it work.
//!
//! `cargo run --example online_disaggregation`

use fbdisagg::*;

fn main() -> Result<()> {
    let scenario = generate(&ScenarioSpec {
        horizon: 200,
        n_changes: 4,
        seed: 3,
        ..Default::default()
    })?;
    let params = DisaggParams {
        sigma2: 1.0,
        one_change_per_step: true,
        branch_suppression_tol: 16.0,
        ..Default::default()
    };

    let mut bank = init_bank(&scenario.library, &params)?;
    let mut last = Vec::new();
    for (t, &y) in scenario.aggregate.iter().enumerate() {
        bank.step(y)?;
        let best = bank.best().expect("bank is never empty");
        let cps = best.segmentation().to_changepoints();
        if cps != last {
            println!(
                "t={t:3}  y={y:8.1}  filters={:2}  best changes {cps:?}  log post {:.1}",
                bank.filters().len(),
                best.log_post()
            );
            last = cps;
        }
    }

    let result = bank.result(&scenario.aggregate)?;
    println!("true changes  {:?}", scenario.true_delta.to_changepoints());
    println!("found changes {:?}", result.best_seg.to_changepoints());
    for e in &result.delta_u {
        println!("  at {:3}: delta u {:?}", e.start, e.delta_u.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
