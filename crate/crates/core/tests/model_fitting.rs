use fbdisagg::model_lib::{fit_fir_detailed, order_criteria};
use fbdisagg::synth::{generate, simulate_device, training_traces, ScenarioSpec};
use fbdisagg::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn on_off_input(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut u = Vec::with_capacity(len);
    let mut level = 0.0;
    while u.len() < len {
        let run = rng.random_range(3..40);
        u.extend(std::iter::repeat_n(level, run));
        level = 1.0 - level;
    }
    u.truncate(len);
    u
}

fn noisy_trace(coeffs: &[f64], len: usize, sigma: f64, seed: u64) -> (TrainingTrace, InputSignal) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = on_off_input(len, &mut rng);
    let model = FirModel::new("dev", coeffs.to_vec());
    let normal = Normal::new(0.0, sigma).unwrap();
    let z = simulate_device(&model, &u)
        .into_iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    (TrainingTrace::new("dev", 1.0, z).unwrap(), InputSignal::binary(u))
}

#[test]
fn noisy_fit_within_five_standard_errors() {
    let truth = [2.0, 1.0, 0.5];
    let (trace, input) = noisy_trace(&truth, 10_000, 0.1, 11);
    let fit = fit_fir_detailed(&trace, &input, 2).unwrap();
    let se = fit.standard_errors();
    for j in 0..3 {
        assert!((fit.model.coeffs[j] - truth[j]).abs() <= 5.0 * se[j], "coeff {j}");
    }
    assert!((fit.model.noise_variance - 0.01).abs() < 0.002);
}

#[test]
fn bic_picks_true_order() {
    let (trace, input) = noisy_trace(&[2.0, 1.0, 0.5], 5000, 0.05, 3);
    assert_eq!(select_order(&trace, &input, 8, Criterion::Bic).unwrap(), 2);
    assert_eq!(select_order(&trace, &input, 0, Criterion::Bic).unwrap(), 0);
    let scores = order_criteria(&trace, &input, 8, Criterion::Aic).unwrap();
    assert_eq!(scores.len(), 9);
}

#[test]
fn synthetic_traces_round_trip_through_fit() {
    let spec = ScenarioSpec {
        noise_sigma: 0.0,
        ..Default::default()
    };
    let s = generate(&spec).unwrap();
    for (data, truth) in training_traces(&spec, &s, 800).unwrap().iter().zip(s.library.models()) {
        let order = select_order(&data.trace, &data.input, 8, Criterion::Bic).unwrap();
        assert_eq!(order, truth.order);
        let model = fit_fir(&data.trace, &data.input, order).unwrap();
        for (a, b) in model.coeffs.iter().zip(&truth.coeffs) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}

#[test]
fn detection_then_fit_recovers_fast_device() {
    // the first coefficient outweighs the tail, so half the peak separates
    // on from off at both edges
    let truth = [2.0, 1.0, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = on_off_input(600, &mut rng);
    let z = simulate_device(&FirModel::new("dev", truth.to_vec()), &u);
    let trace = TrainingTrace::new("dev", 1.0, z).unwrap();
    let input = detect_binary_input(&trace, 1.75, 1).unwrap();
    assert_eq!(input.values, u);
    let model = fit_fir(&trace, &input, 2).unwrap();
    for (a, b) in model.coeffs.iter().zip(&truth) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn fit_names_device_when_ill_posed() {
    let trace = TrainingTrace::new("fridge", 1.0, vec![1.0; 50]).unwrap();
    let err = fit_fir(&trace, &InputSignal::binary(vec![0.0; 50]), 2).unwrap_err();
    assert!(err.to_string().contains("fridge"));
    assert!(!err.is_usage());
}

fn model_strategy() -> impl Strategy<Value = FirModel> {
    (
        prop::collection::vec(-2000.0f64..2000.0, 1..7),
        0.0f64..50.0,
        0.0f64..3.0,
        any::<bool>(),
    )
        .prop_map(|(coeffs, var, span, instant)| {
            FirModel::new("x", coeffs)
                .with_noise_variance(var)
                .with_bounds(-span, span)
                .with_instant_off(instant)
        })
}

proptest! {
    #[test]
    fn library_file_round_trip(models in prop::collection::vec(model_strategy(), 1..5)) {
        let models: Vec<FirModel> = models
            .into_iter()
            .enumerate()
            .map(|(i, mut m)| {
                m.device_name = format!("device {i}");
                m
            })
            .collect();
        let lib = DeviceLibrary::new(models).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.json");
        save_library(&lib, &path).unwrap();
        prop_assert_eq!(load_library(&path).unwrap(), lib);
    }
}
