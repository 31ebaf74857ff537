//! Evaluation harness: repeated hold-out C-index and Kaplan-Meier fidelity of generated data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{train_test_split, DataSchema};
use crate::error::{Error, Result};
use crate::model::train_survival_model;
use crate::survival::{kaplan_meier, SurvivalDataset};
use crate::training::TrainConfig;

/// Share of each repetition used for training.
pub const TRAIN_FRACTION: f64 = 0.75;

/// Largest absolute gap between the Kaplan-Meier curves of two datasets,
/// taken over the union of their observed times. Symmetric in its arguments.
pub fn km_fidelity(original: &SurvivalDataset, generated: &SurvivalDataset) -> Result<f64> {
    if original.is_empty() || generated.is_empty() {
        return Err(Error::contract("km_fidelity needs two nonempty datasets"));
    }
    let (a, b) = (kaplan_meier(original)?, kaplan_meier(generated)?);
    let mut grid: Vec<f64> = a.times().iter().chain(b.times()).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid.iter().map(|&t| (a.eval(t) - b.eval(t)).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    /// Hold-out C-index per repetition; `None` where the split had no admissible pair.
    pub values: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Sample standard deviation over defined values.
    pub std: Option<f64>,
    pub defined: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

impl CrossValReport {
    fn from_values(values: Vec<Option<f64>>, seed: u64, config: TrainConfig) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let k = defined.len();
        let mean = (k > 0).then(|| defined.iter().sum::<f64>() / k as f64);
        let std = mean.map(|m| {
            if k < 2 {
                0.0
            } else {
                (defined.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
            }
        });
        Self {
            values,
            mean,
            std,
            defined: k,
            seed,
            config,
        }
    }
}

/// Repeated random 75/25 splits. Repetition `i` draws its split and training seed
/// from stream `i` of `seed`, so reports do not depend on evaluation order.
pub fn cross_validate(
    raw: &SurvivalDataset,
    schema: Option<&DataSchema>,
    config: &TrainConfig,
    reps: usize,
    seed: u64,
) -> Result<CrossValReport> {
    if reps == 0 {
        return Err(Error::contract("cross-validation needs at least one repetition"));
    }
    let mut values = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let (train_idx, test_idx) = train_test_split(raw.len(), TRAIN_FRACTION, &mut rng);
        let train = raw.subset(&train_idx)?;
        let test = raw.subset(&test_idx)?;
        let rep_config = TrainConfig {
            seed: rng.random(),
            ..config.clone()
        };
        let (model, _) = train_survival_model(&train, schema, &rep_config, None)?;
        let value = model.c_index(&model.standardize_dataset(&test)?)?;
        match value {
            Some(c) => log::info!("repetition {}: C-index {c:.4}", rep + 1),
            None => log::warn!("repetition {}: no admissible pairs in the test split", rep + 1),
        }
        values.push(value);
    }
    let report = CrossValReport::from_values(values, seed, config.clone());
    if report.defined < reps {
        log::warn!("{} of {reps} repetitions had an undefined C-index", reps - report.defined);
    }
    Ok(report)
}
