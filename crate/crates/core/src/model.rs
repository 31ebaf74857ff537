//! The trained model: inference routes, persistence, and the end-to-end training entry point.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataSchema, Standardizer};
use crate::error::{Error, Result};
use crate::generation::{train_censor_classifier, CensorClassifier, ClassifierConfig};
use crate::survival::{beran_sf, c_index_hard, expected_event_time, Background, StepSurvivalFunction, SurvivalDataset};
use crate::training::{fit, EpochLog, TrainConfig};
use crate::trajectory::{embedding_trajectory, feature_trajectory, TimeGrid, TimeScale, Trajectory};
use crate::vae::{sample_embeddings, EncoderDecoderParams, LatentBundle};

/// Salt separating the classifier's random stream from the VAE's.
const CLASSIFIER_STREAM: u64 = 0x5eed_c1a5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: EncoderDecoderParams,
    pub tau: f64,
    pub eta: f64,
    /// Mean embeddings of the training set with their outcomes.
    pub background: Background,
    pub scale: TimeScale,
    pub grid: TimeGrid,
    pub embeddings: usize,
    /// Maps raw features to the network's standardised inputs.
    pub standardizer: Option<Standardizer>,
    pub schema: Option<DataSchema>,
    pub censor: Option<CensorClassifier>,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn feature_dim(&self) -> usize {
        self.params.feature_dim()
    }

    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        match &self.standardizer {
            Some(s) => s.transform_row(raw),
            None => raw.to_vec(),
        }
    }

    pub fn destandardize(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardizer {
            Some(s) => s.inverse_row(x),
            None => x.to_vec(),
        }
    }

    /// Standardised copy of a raw dataset.
    pub fn standardize_dataset(&self, raw: &SurvivalDataset) -> Result<SurvivalDataset> {
        match &self.standardizer {
            Some(s) => s.transform(raw),
            None => Ok(raw.clone()),
        }
    }

    /// Conditional survival function of a standardised input.
    pub fn survival_function(&self, x: &[f64]) -> Result<StepSurvivalFunction> {
        let (mu, _) = self.params.encode(x)?;
        beran_sf(&mu, &self.background, self.tau)
    }

    pub fn expected_time(&self, x: &[f64]) -> Result<f64> {
        Ok(expected_event_time(&self.survival_function(x)?))
    }

    /// Hard C-index of expected times on a standardised dataset.
    pub fn c_index(&self, ds: &SurvivalDataset) -> Result<Option<f64>> {
        let pred = ds
            .records()
            .iter()
            .map(|r| self.expected_time(&r.x))
            .collect::<Result<Vec<_>>>()?;
        c_index_hard(&pred, &ds.times(), &ds.events())
    }

    pub fn latent_bundle<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<LatentBundle> {
        let (mu, sigma) = self.params.encode(x)?;
        sample_embeddings(&mu, &sigma, self.embeddings, rng)
    }

    /// Trajectory of a frozen bundle; feature points are de-standardised.
    pub fn trajectory_from_bundle(&self, bundle: &LatentBundle) -> Result<Trajectory> {
        let (latent, weights) =
            embedding_trajectory(bundle, &self.background, self.tau, self.eta, &self.grid, self.scale)?;
        feature_trajectory(self.grid.clone(), latent, weights, |z| {
            Ok(self.destandardize(&self.params.decode(z)?))
        })
    }

    pub fn trajectory<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Trajectory> {
        let bundle = self.latent_bundle(x, rng)?;
        self.trajectory_from_bundle(&bundle)
    }

    /// Names of the encoded feature columns, falling back to `x1..xd`.
    pub fn feature_names(&self) -> Vec<String> {
        match &self.schema {
            Some(s) => s.encoded_names(),
            None => (1..=self.feature_dim()).map(|i| format!("x{i}")).collect(),
        }
    }

    /// Long CSV of standardised `rows`: `row, expected_time, time, survival`, one line per step.
    pub fn write_predictions<W: std::io::Write>(&self, rows: &[Vec<f64>], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "expected_time", "time", "survival"])?;
        for (i, x) in rows.iter().enumerate() {
            let sf = self.survival_function(x)?;
            let expected = expected_event_time(&sf).to_string();
            for (t, s) in sf.times().iter().zip(sf.values()) {
                w.write_record([i.to_string(), expected.clone(), t.to_string(), s.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if !(model.tau > 0.0) || model.background.is_empty() {
            return Err(Error::Schema("model file has an invalid temperature or empty background".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Standardiser fitted on raw training data; one-hot columns of `schema` stay as they are.
pub fn fit_standardizer(raw: &SurvivalDataset, schema: Option<&DataSchema>) -> Result<Standardizer> {
    let mask = match schema {
        Some(s) => {
            if s.encoded_dim() != raw.feature_dim() {
                return Err(Error::contract("schema does not match the dataset's feature dimension"));
            }
            s.continuous_mask()
        }
        None => vec![true; raw.feature_dim()],
    };
    Standardizer::fit(raw, &mask)
}

/// Fits the VAE on standardised copies of `raw` (and `holdout`) without the censoring classifier.
pub fn train_survival_model(
    raw: &SurvivalDataset,
    schema: Option<&DataSchema>,
    config: &TrainConfig,
    holdout: Option<&SurvivalDataset>,
) -> Result<(TrainedModel, Vec<EpochLog>)> {
    let standardizer = fit_standardizer(raw, schema)?;
    let train = standardizer.transform(raw)?;
    let holdout = holdout.map(|h| standardizer.transform(h)).transpose()?;
    let (mut model, history) = fit(&train, config, holdout.as_ref())?;
    model.standardizer = Some(standardizer);
    model.schema = schema.cloned();
    Ok((model, history))
}

/// Full training: the VAE, then the censoring classifier on its own random stream.
/// `raw` and `holdout` are in raw feature units.
pub fn train_model(
    raw: &SurvivalDataset,
    schema: Option<&DataSchema>,
    config: &TrainConfig,
    holdout: Option<&SurvivalDataset>,
) -> Result<(TrainedModel, Vec<EpochLog>)> {
    let (mut model, history) = train_survival_model(raw, schema, config, holdout)?;
    let train = model.standardize_dataset(raw)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ CLASSIFIER_STREAM);
    model.censor = Some(train_censor_classifier(&train, &ClassifierConfig::default(), &mut rng)?);
    Ok((model, history))
}
