use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survgen::data::{synth_linear, DEFAULT_CENSORING};
use survgen::survival::SurvivalDataset;
use survgen::training::{fit, TrainConfig};
use survgen::vae::EncoderDecoderParams;

fn linear(per_cluster: usize, seed: u64) -> SurvivalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_linear(per_cluster, 1.0, DEFAULT_CENSORING, &mut rng).unwrap()
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        warmup_epochs: 1,
        embeddings: 8,
        grid_size: 16,
        hidden_units: vec![16],
        seed,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_return_the_initialised_model() {
    let ds = linear(20, 1);
    let cfg = TrainConfig { epochs: 0, ..quick(5) };
    let (model, history) = fit(&ds, &cfg, None).unwrap();
    assert!(history.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let init = EncoderDecoderParams::new(2, cfg.latent_dim, &cfg.hidden_units, &mut rng).unwrap();
    assert_eq!(model.params, init);
    assert_eq!(model.tau, cfg.initial_tau);
    assert_eq!(model.background.len(), ds.len());
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let ds = linear(20, 2);
    let cfg = TrainConfig { learning_rate: 0.0, ..quick(3) };
    let (trained, history) = fit(&ds, &cfg, None).unwrap();
    let (init, _) = fit(&ds, &TrainConfig { epochs: 0, ..cfg.clone() }, None).unwrap();
    assert_eq!(history.len(), 2);
    assert_eq!(trained.params, init.params);
    assert_eq!(trained.tau.to_bits(), init.tau.to_bits());
    assert_eq!(trained.eta.to_bits(), init.eta.to_bits());
}

#[test]
fn fixed_seed_repeats_metrics_and_weights() {
    let ds = linear(20, 3);
    let holdout = linear(10, 4);
    let (a, ha) = fit(&ds, &quick(9), Some(&holdout)).unwrap();
    let (b, hb) = fit(&ds, &quick(9), Some(&holdout)).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    assert!(ha.iter().all(|e| e.holdout_c_index.is_some()));
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = linear(10, 0);
    for cfg in [
        TrainConfig { batch_size: 0, ..quick(0) },
        TrainConfig { initial_tau: 0.0, ..quick(0) },
        TrainConfig { learning_rate: f64::NAN, ..quick(0) },
        TrainConfig { tasks_per_epoch: Some(0), ..quick(0) },
    ] {
        assert!(fit(&ds, &cfg, None).is_err());
    }
}

#[test]
fn total_loss_falls_between_first_and_twentieth_epoch() {
    let mut improved = 0;
    for seed in 0..10 {
        let ds = linear(50, 100 + seed);
        let cfg = TrainConfig {
            epochs: 20,
            warmup_epochs: 10,
            seed,
            ..Default::default()
        };
        let (_, history) = fit(&ds, &cfg, None).unwrap();
        let (first, last) = (history[0].total, history[19].total);
        if last < first {
            improved += 1;
        }
        eprintln!("seed {seed}: total {first:.4} -> {last:.4}");
    }
    assert!(improved >= 9, "{improved} of 10 seeds improved");
}
