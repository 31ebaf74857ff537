use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survgen::data::{synth_linear, DEFAULT_CENSORING};
use survgen::eval::{cross_validate, km_fidelity};
use survgen::survival::SurvivalDataset;
use survgen::training::TrainConfig;

fn short() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        warmup_epochs: 3,
        ..Default::default()
    }
}

#[test]
fn linear_cross_validation_beats_point_seven() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = synth_linear(60, 1.0, DEFAULT_CENSORING, &mut rng).unwrap();
    let report = cross_validate(&ds, None, &short(), 5, 8).unwrap();
    assert_eq!(report.values.len(), 5);
    let mean = report.mean.unwrap();
    assert!(mean > 0.7, "mean C-index {mean}");
}

#[test]
fn single_repetition_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = synth_linear(30, 1.0, DEFAULT_CENSORING, &mut rng).unwrap();
    let a = cross_validate(&ds, None, &short(), 1, 77).unwrap();
    let b = cross_validate(&ds, None, &short(), 1, 77).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.std, Some(0.0));
    assert!(cross_validate(&ds, None, &short(), 0, 77).is_err());
}

#[test]
fn fidelity_is_symmetric_and_bounded() {
    let a = SurvivalDataset::from_outcomes(&[(1.0, true), (2.0, false), (4.0, true), (5.0, true)]).unwrap();
    let b = SurvivalDataset::from_outcomes(&[(1.5, true), (3.0, true)]).unwrap();
    let ab = km_fidelity(&a, &b).unwrap();
    assert_eq!(ab, km_fidelity(&b, &a).unwrap());
    assert!((0.0..=1.0).contains(&ab));
}
