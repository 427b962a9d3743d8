//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fbdisagg::model_lib::fit_fir_detailed;
use fbdisagg::oracle::score_segmentation;
use fbdisagg::synth::{simulate_device, training_traces, DeviceSpec, Scenario};
use fbdisagg::*;
use fbdisagg::filterbank::{kkt_violation, solve_box_qp};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Small oracle-sized scenario: `k` picks the device count, order, horizon
/// and relative noise level.
fn small_scenario(k: usize, seed: u64, horizon: usize, devices: usize) -> (Scenario, DisaggParams) {
    let order = 1 + (k / 2) % 3;
    let min_segment = order.max(2);
    let n_changes = (horizon / min_segment - 1).min(2);
    let rel = [0.01, 0.1, 0.5][k % 3];
    let mut spec = ScenarioSpec {
        devices: (0..devices)
            .map(|i| DeviceSpec {
                name: format!("d{i}"),
                order,
                ..Default::default()
            })
            .collect(),
        horizon,
        min_segment,
        n_changes,
        noise_sigma: 0.0,
        seed,
        ..Default::default()
    };
    let gains = generate(&spec).expect("valid spec").library.dc_gains();
    spec.noise_sigma = rel * gains.iter().sum::<f64>() / gains.len() as f64;
    let s = generate(&spec).expect("valid spec");
    (s, DisaggParams::unpruned(spec.noise_sigma * spec.noise_sigma))
}

fn oracle_scenarios() -> Vec<(Scenario, DisaggParams)> {
    (0..25)
        .map(|k| small_scenario(k, 1000 + k as u64, 8 + k % 5, 1 + k % 2))
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut hits = 0;
    let mut misses = Vec::new();
    let cases = oracle_scenarios();
    for (k, (s, params)) in cases.iter().enumerate() {
        let bank = run_offline(&s.aggregate, &s.library, params).unwrap();
        let oracle = exact_map(&s.aggregate, &s.library, params).unwrap();
        if (bank.log_post - oracle.best_log_post).abs() <= 1e-9 {
            hits += 1;
        } else {
            misses.push(format!(
                "scenario {k}: bank {:.6} vs oracle {:.6}",
                bank.log_post, oracle.best_log_post
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        hits == cases.len() && secs < 60.0,
        format!("{hits}/{} scenarios match the exhaustive MAP, {secs:.2} s {}", cases.len(), misses.join("; ")),
    )
}

fn criterion_2() -> Outcome {
    let mut hits = 0;
    let mut misses = Vec::new();
    let cases = oracle_scenarios();
    for (k, (s, params)) in cases.iter().enumerate() {
        let oracle = exact_map(&s.aggregate, &s.library, params).unwrap();
        let min_prefix = (1..=s.aggregate.len())
            .map(|t| {
                score_segmentation(&s.aggregate[..t], &oracle.best_delta.prefix(t), &s.library, params)
                    .unwrap()
                    .log_post()
            })
            .fold(f64::INFINITY, f64::min);
        let pruned = DisaggParams {
            prune_mode: PruneMode::Absolute,
            prune_log_thresh: min_prefix - 1.0,
            beam_cap: None,
            ..params.clone()
        };
        let r = run_offline(&s.aggregate, &s.library, &pruned).unwrap();
        if r.best_seg == oracle.best_delta {
            hits += 1;
        } else {
            misses.push(format!("scenario {k}: {} vs oracle {}", r.best_seg, oracle.best_delta));
        }
    }
    outcome(
        hits == cases.len(),
        format!("{hits}/{} pruned runs return the oracle MAP {}", cases.len(), misses.join("; ")),
    )
}

fn criterion_3() -> Outcome {
    let mut hits = 0;
    let mut misses = Vec::new();
    for k in 0..20 {
        let (s, params) = small_scenario(k, 2000 + k as u64, 10, 2);
        let oracle = exact_map(&s.aggregate, &s.library, &params).unwrap();
        if oracle::check_prefix_optimality(&oracle, &s.aggregate, &s.library, &params).unwrap() {
            hits += 1;
        } else {
            misses.push(format!("seed {}: MAP {}", 2000 + k, oracle.best_delta));
        }
    }
    outcome(hits == 20, format!("{hits}/20 seeds prefix-optimal {}", misses.join("; ")))
}

fn on_off(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut u = Vec::with_capacity(len);
    let mut level = 0.0;
    while u.len() < len {
        u.extend(std::iter::repeat_n(level, rng.random_range(3..40)));
        level = 1.0 - level;
    }
    u.truncate(len);
    u
}

fn criterion_4() -> Outcome {
    // noiseless: the reference model and the default synthetic devices
    let mut worst_exact = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let reference = FirModel::new("ref", vec![2.0, 1.0, 0.5]);
    let u = on_off(2000, &mut rng);
    let trace = TrainingTrace::new("ref", 1.0, simulate_device(&reference, &u)).unwrap();
    let fit = fit_fir(&trace, &InputSignal::binary(u), 2).unwrap();
    for (a, b) in fit.coeffs.iter().zip(&reference.coeffs) {
        worst_exact = worst_exact.max((a - b).abs());
    }
    for seed in 0..5 {
        let spec = ScenarioSpec {
            noise_sigma: 0.0,
            seed: 4100 + seed,
            ..Default::default()
        };
        let s = generate(&spec).unwrap();
        for (d, truth) in training_traces(&spec, &s, 2000).unwrap().iter().zip(s.library.models()) {
            let m = fit_fir(&d.trace, &d.input, truth.order).unwrap();
            for (a, b) in m.coeffs.iter().zip(&truth.coeffs) {
                worst_exact = worst_exact.max((a - b).abs());
            }
        }
    }

    // noisy: sigma 0.1, 10 000 samples
    let mut worst_z = 0.0f64;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(4200 + seed);
        let u = on_off(10_000, &mut rng);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let z = simulate_device(&reference, &u)
            .into_iter()
            .map(|v| v + normal.sample(&mut rng))
            .collect();
        let trace = TrainingTrace::new("ref", 1.0, z).unwrap();
        let fit = fit_fir_detailed(&trace, &InputSignal::binary(u), 2).unwrap();
        for ((a, b), se) in fit.model.coeffs.iter().zip(&reference.coeffs).zip(fit.standard_errors()) {
            worst_z = worst_z.max((a - b).abs() / se);
        }
    }

    // order selection on orders 0..=5
    let mut correct = 0;
    for k in 0..20u64 {
        let order = (k % 6) as usize;
        let spec = ScenarioSpec {
            devices: vec![DeviceSpec {
                name: "dev".into(),
                order,
                ..Default::default()
            }],
            min_segment: 10,
            n_changes: 0,
            noise_sigma: 1.0,
            seed: 4300 + k,
            ..Default::default()
        };
        let s = generate(&spec).unwrap();
        let d = &training_traces(&spec, &s, 3000).unwrap()[0];
        if select_order(&d.trace, &d.input, 8, Criterion::Bic).unwrap() == order {
            correct += 1;
        }
    }
    outcome(
        worst_exact <= 1e-9 && worst_z <= 5.0 && correct >= 18,
        format!(
            "noiseless max coefficient error {worst_exact:.2e}; noisy max |error|/se {worst_z:.2}; BIC correct {correct}/20"
        ),
    )
}

fn criterion_5() -> Outcome {
    let params = DisaggParams {
        sigma2: 1.0,
        beam_cap: Some(64),
        one_change_per_step: true,
        branch_suppression_tol: 16.0,
        ..Default::default()
    };
    let mut worst_f1 = 1.0f64;
    let mut worst_energy = 0.0f64;
    let mut slowest = 0.0f64;
    for seed in 0..10 {
        let s = generate(&ScenarioSpec {
            seed: 5000 + seed,
            ..Default::default()
        })
        .unwrap();
        let start = Instant::now();
        let r = run_offline(&s.aggregate, &s.library, &params).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let report = evaluate(&r, &s, 2).unwrap();
        worst_f1 = worst_f1.min(report.f1);
        worst_energy = worst_energy.max(report.max_energy_fraction_error());
    }
    outcome(
        worst_f1 == 1.0 && worst_energy < 0.01 && slowest < 10.0,
        format!(
            "10 scenarios: min F1 {worst_f1:.3}, max energy fraction error {:.4}%, slowest run {slowest:.3} s",
            worst_energy * 100.0
        ),
    )
}

fn grid_objective(g: &DMatrix<f64>, c: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let obj = |x: &DVector<f64>| 0.5 * x.dot(&(g * x)) - c.dot(x);
    let steps = |i: usize| ((hi[i] - lo[i]) / 1e-3).round() as usize;
    let point = |i: usize, k: usize| (lo[i] + k as f64 * 1e-3).min(hi[i]);
    let mut best = f64::INFINITY;
    match c.len() {
        1 => {
            for a in 0..=steps(0) {
                best = best.min(obj(&DVector::from_row_slice(&[point(0, a)])));
            }
        }
        _ => {
            for a in 0..=steps(0) {
                for b in 0..=steps(1) {
                    best = best.min(obj(&DVector::from_row_slice(&[point(0, a), point(1, b)])));
                }
            }
        }
    }
    best
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let mut worst_kkt = 0.0f64;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut gridded = 0;
    for k in 0..100 {
        let n = 1 + k % 4;
        let rows = rng.random_range(1..=10);
        let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(rows, |_, _| rng.random_range(-2.0..2.0));
        let g = a.transpose() * &a;
        let c = a.transpose() * &b;
        let lo: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..1.0)).collect();
        let hi: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = solve_box_qp(&g, &c, &lo, &hi);
        worst_kkt = worst_kkt.max(kkt_violation(&g, &c, &x, &lo, &hi));
        if n <= 2 {
            gridded += 1;
            let ours = 0.5 * x.dot(&(&g * &x)) - c.dot(&x);
            worst_gap = worst_gap.max(ours - grid_objective(&g, &c, &lo, &hi));
        }
    }
    outcome(
        worst_kkt <= 1e-8 && worst_gap <= 1e-6,
        format!("max KKT violation {worst_kkt:.2e}; {gridded} gridded instances, max objective excess {worst_gap:.2e}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fbdisagg"))
        .args(args)
        .arg("--quiet")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> bool {
    names
        .iter()
        .all(|n| std::fs::read(a.join(n)).ok().is_some_and(|x| Some(x) == std::fs::read(b.join(n)).ok()))
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();

    // step responses saturate at the DC gain
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    for _ in 0..50 {
        let order = rng.random_range(0..8);
        let m = FirModel::new("x", (0..=order).map(|_| rng.random_range(-500.0..500.0)).collect());
        let lib = DeviceLibrary::new(vec![m.clone()]).unwrap();
        let a = filterbank::step_response_matrix(&lib, order + 10);
        if (order..order + 10).any(|t| a[(t, 0)] != m.dc_gain()) {
            failures.push("step-response saturation");
            break;
        }
    }

    // steady-state recursion on a live bank
    let s = generate(&ScenarioSpec {
        seed: 7100,
        ..Default::default()
    })
    .unwrap();
    let params = DisaggParams {
        sigma2: 1.0,
        one_change_per_step: true,
        ..Default::default()
    };
    let dc = s.library.dc_gains();
    let mut bank = init_bank(&s.library, &params).unwrap();
    let mut worst = 0.0f64;
    for &y in &s.aggregate {
        bank.step(y).unwrap();
        for f in bank.filters() {
            let open_start = f.len() - f.open_len();
            let expected: f64 = f
                .delta_u_per_segment()
                .iter()
                .filter(|e| e.start != open_start)
                .flat_map(|e| e.delta_u.iter().zip(&dc).map(|(u, g)| u * g))
                .sum();
            worst = worst.max((f.y_ss() - expected).abs() / expected.abs().max(1.0));
        }
    }
    if worst > 1e-9 {
        failures.push("steady-state recursion");
    }

    // segmentation round trip
    for _ in 0..200 {
        let len = rng.random_range(1..60);
        let bits: Vec<bool> = (0..len).map(|_| rng.random_bool(0.2)).collect();
        let seg = Segmentation::from_delta(&bits);
        if Segmentation::from_changepoints(len, &seg.to_changepoints()) != seg {
            failures.push("segmentation round trip");
            break;
        }
    }

    // conservation identity
    for seed in 0..10 {
        let s = generate(&ScenarioSpec {
            seed: 7200 + seed,
            noise_sigma: 3.7,
            ..Default::default()
        })
        .unwrap();
        let exact = (0..s.aggregate.len()).all(|t| {
            let sum: f64 = s.device_signals.iter().map(|d| d[t]).sum();
            s.aggregate[t] - sum == s.noise[t]
        });
        if !exact {
            failures.push("scenario conservation");
            break;
        }
    }

    // argmax under a common positive scaling of the posteriors
    let best = bank.best().unwrap().segmentation().clone();
    for c in [1e-9, 0.5, 3.0, 1e12] {
        let shifted = bank
            .filters()
            .iter()
            .max_by(|a, b| (a.log_post() + f64::ln(c)).total_cmp(&(b.log_post() + f64::ln(c))))
            .unwrap();
        if shifted.segmentation() != &best {
            failures.push("argmax invariance");
            break;
        }
    }

    // byte-identical CLI reruns
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    let mut ok = true;
    for r in &runs {
        let sim = r.join("sim");
        let res = r.join("res");
        ok &= run_cli(&["simulate", "--seed", "7", "--out", sim.to_str().unwrap()]);
        ok &= run_cli(&[
            "disaggregate",
            "--aggregate",
            sim.join("aggregate.csv").to_str().unwrap(),
            "--library",
            sim.join("library.json").to_str().unwrap(),
            "--out",
            res.to_str().unwrap(),
        ]);
    }
    ok &= same_files(
        &runs[0].join("sim"),
        &runs[1].join("sim"),
        &["aggregate.csv", "truth.csv", "truth_inputs.csv", "library.json", "scenario.json"],
    );
    ok &= same_files(&runs[0].join("res"), &runs[1].join("res"), &["devices.csv", "summary.json", "plot.csv"]);
    if !ok {
        failures.push("CLI determinism");
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("all six invariants hold (steady-state drift {worst:.1e})")
        } else {
            format!("broken: {}", failures.join(", "))
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 oracle equivalence", criterion_1),
        ("2 pruning safety", criterion_2),
        ("3 prefix optimality", criterion_3),
        ("4 FIR recovery", criterion_4),
        ("5 end-to-end disaggregation", criterion_5),
        ("6 box least squares", criterion_6),
        ("7 structural invariants", criterion_7),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail.trim_end());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
