use fbdisagg::metrics::DEFAULT_WINDOW;
use fbdisagg::oracle::{exact_map_with_table, score_segmentation, MAX_HORIZON};
use fbdisagg::synth::{training_traces, DeviceSpec};
use fbdisagg::*;

/// Settings of the desk-scale experiments: one device per change and a 4
/// sigma residual gate on branching.
fn desk_params(sigma2: f64) -> DisaggParams {
    DisaggParams {
        sigma2,
        one_change_per_step: true,
        branch_suppression_tol: 16.0,
        ..Default::default()
    }
}

#[test]
fn default_scenario_recovered_exactly() {
    let s = generate(&ScenarioSpec::default()).unwrap();
    let r = run_offline(&s.aggregate, &s.library, &desk_params(1.0)).unwrap();
    assert_eq!(r.best_seg, s.true_delta);
    let report = evaluate(&r, &s, DEFAULT_WINDOW).unwrap();
    assert_eq!(report.f1, 1.0);
    assert!(report.max_energy_fraction_error() < 0.01);
    assert!(report.bank_size_max <= 64);
}

#[test]
fn trained_library_disaggregates_default_scenario() {
    let spec = ScenarioSpec {
        seed: 4,
        ..Default::default()
    };
    let s = generate(&spec).unwrap();
    let models: Vec<FirModel> = training_traces(&spec, &s, 2000)
        .unwrap()
        .iter()
        .map(|d| {
            let order = select_order(&d.trace, &d.input, 8, Criterion::Bic).unwrap();
            fit_fir(&d.trace, &d.input, order).unwrap()
        })
        .collect();
    let trained = DeviceLibrary::new(models).unwrap();
    let params = desk_params(trained.total_noise_variance());
    let r = run_offline(&s.aggregate, &trained, &params).unwrap();
    let report = evaluate(&r, &s, DEFAULT_WINDOW).unwrap();
    assert_eq!(report.f1, 1.0);
    assert!(report.max_energy_fraction_error() < 0.01);
}

#[test]
fn instant_off_devices() {
    let mut spec = ScenarioSpec {
        seed: 2,
        ..Default::default()
    };
    for d in &mut spec.devices {
        d.instant_off = true;
        d.overshoot = 0.3;
    }
    let s = generate(&spec).unwrap();
    let r = run_offline(&s.aggregate, &s.library, &desk_params(1.0)).unwrap();
    let report = evaluate(&r, &s, DEFAULT_WINDOW).unwrap();
    assert_eq!(report.f1, 1.0);
    assert!(report.max_energy_fraction_error() < 0.01);
}

#[test]
fn oracle_matches_unpruned_bank_on_step() {
    let lib = DeviceLibrary::new(vec![FirModel::new("a", vec![5.0]).with_bounds(0.0, 1.0)]).unwrap();
    let y = [0.0, 0.0, 5.0, 5.0, 5.0];
    let params = DisaggParams::unpruned(1.0);
    let o = exact_map_with_table(&y, &lib, &params).unwrap();
    let r = run_offline(&y, &lib, &params).unwrap();
    assert_eq!(o.best_delta, r.best_seg);
    assert_eq!(o.best_log_post, r.log_post);
    let table = o.full_table.unwrap();
    assert_eq!(table.len(), 32);
    assert!(table.iter().all(|(_, v)| *v <= o.best_log_post));
}

#[test]
fn enforced_floor_matches_oracle_feasible_set() {
    let spec = ScenarioSpec {
        devices: vec![DeviceSpec {
            name: "a".into(),
            order: 3,
            ..Default::default()
        }],
        horizon: 12,
        min_segment: 3,
        n_changes: 2,
        noise_sigma: 20.0,
        seed: 9,
        ..Default::default()
    };
    let s = generate(&spec).unwrap();
    let params = DisaggParams::unpruned(400.0);
    let o = exact_map_with_table(&s.aggregate, &s.library, &params).unwrap();
    assert!(min_segment_ok(&o.best_delta, 3));
    for (seg, v) in o.full_table.unwrap() {
        if !min_segment_ok(&seg, 3) {
            assert_eq!(v, f64::NEG_INFINITY, "{seg}");
        }
    }
    let r = run_offline(&s.aggregate, &s.library, &params).unwrap();
    assert!(min_segment_ok(&r.best_seg, 3));
}

#[test]
fn oracle_refuses_beyond_cap() {
    let lib = DeviceLibrary::new(vec![FirModel::new("a", vec![1.0])]).unwrap();
    let err = exact_map(&vec![0.0; MAX_HORIZON + 1], &lib, &DisaggParams::default()).unwrap_err();
    assert!(matches!(err, Error::HorizonTooLong { .. }));
}

#[test]
fn bank_and_replay_agree_on_winner() {
    let s = generate(&ScenarioSpec {
        horizon: 200,
        n_changes: 4,
        ..Default::default()
    })
    .unwrap();
    let params = desk_params(1.0);
    let r = run_offline(&s.aggregate, &s.library, &params).unwrap();
    let replay = score_segmentation(&s.aggregate, &r.best_seg, &s.library, &DisaggParams::default()).unwrap();
    assert_eq!(replay.segmentation(), &r.best_seg);
}

#[test]
fn evaluation_rejects_mismatched_truth() {
    let s = generate(&ScenarioSpec::default()).unwrap();
    let short = generate(&ScenarioSpec {
        horizon: 300,
        n_changes: 4,
        ..Default::default()
    })
    .unwrap();
    let r = run_offline(&short.aggregate, &short.library, &desk_params(1.0)).unwrap();
    assert!(matches!(evaluate(&r, &s, 2), Err(Error::Validation(_))));
}
