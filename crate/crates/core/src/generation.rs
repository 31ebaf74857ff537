//! Generation of `(x, T, delta)` triplets and the separately trained censoring classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::TrainedModel;
use crate::survival::{gumbel_sample_time, sf_to_density, SurvivalDataset, SurvivalRecord};
use crate::training::Adam;
use crate::trajectory::{combine, TrajectoryTerms};
use crate::vae::Dense;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden_units: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_units: 32,
            steps: 1000,
            learning_rate: 1e-2,
        }
    }
}

/// One-hidden-layer network estimating `P(delta = 1 | x, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorClassifier {
    pub hidden: Dense,
    pub output: Dense,
    pub time_mean: f64,
    pub time_std: f64,
    /// `ln(pi / (1 - pi))` for training prevalence `pi`. Weighted training learns odds
    /// divided by the prior odds; adding this back restores calibrated probabilities.
    pub logit_offset: f64,
    /// Set when training data held a single class; the network is then ignored.
    pub constant: Option<f64>,
}

impl CensorClassifier {
    fn input(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut v = x.to_vec();
        v.push((t - self.time_mean) / self.time_std);
        v
    }

    /// Probability that the event is observed for standardised features `x` at time `t`.
    pub fn probability(&self, x: &[f64], t: f64) -> f64 {
        if let Some(p) = self.constant {
            return p;
        }
        let h: Vec<f64> = self.hidden.forward(&self.input(x, t)).into_iter().map(f64::tanh).collect();
        sigmoid(self.output.forward(&h)[0] + self.logit_offset)
    }
}

/// Fits the classifier on standardised features and observed times by
/// inverse-prevalence weighted cross-entropy, full batch.
pub fn train_censor_classifier<R: Rng + ?Sized>(
    ds: &SurvivalDataset,
    config: &ClassifierConfig,
    rng: &mut R,
) -> Result<CensorClassifier> {
    if ds.is_empty() {
        return Err(Error::contract("censor classifier needs training data"));
    }
    let n = ds.len() as f64;
    let times = ds.times();
    let time_mean = times.iter().sum::<f64>() / n;
    let time_std = (times.iter().map(|t| (t - time_mean).powi(2)).sum::<f64>() / n).sqrt();
    let time_std = if time_std > 0.0 { time_std } else { 1.0 };
    let d = ds.feature_dim() + 1;
    let mut clf = CensorClassifier {
        hidden: Dense::glorot(d, config.hidden_units, rng),
        output: Dense::glorot(config.hidden_units, 1, rng),
        time_mean,
        time_std,
        logit_offset: 0.0,
        constant: None,
    };
    let positives = ds.events().iter().filter(|&&e| e).count();
    if positives == 0 || positives == ds.len() {
        let p = positives as f64 / n;
        log::warn!("censor classifier sees a single class; using constant probability {p}");
        clf.constant = Some(p);
        return Ok(clf);
    }
    let prevalence = positives as f64 / n;
    clf.logit_offset = (prevalence / (1.0 - prevalence)).ln();
    let rows: Vec<Vec<f64>> = ds.records().iter().map(|r| clf.input(&r.x, r.time)).collect();
    let labels: Vec<f64> = ds.events().iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
    let raw_w: Vec<f64> = labels
        .iter()
        .map(|&y| if y > 0.5 { 1.0 / prevalence } else { 1.0 / (1.0 - prevalence) })
        .collect();
    let w_total: f64 = raw_w.iter().sum();
    let weights: Vec<f64> = raw_w.iter().map(|w| w / w_total).collect();
    let x = Tensor::from_rows(&rows)?;
    let y = Tensor::new(vec![rows.len(), 1], labels)?;
    let w = Tensor::new(vec![rows.len(), 1], weights)?;

    let sizes = [d * config.hidden_units, config.hidden_units, config.hidden_units, 1];
    let mut adam = Adam::new(config.learning_rate, &sizes);
    for _ in 0..config.steps {
        let mut g = Graph::new();
        let params = [
            g.param(clf.hidden.weight.clone()),
            g.param(clf.hidden.bias.clone()),
            g.param(clf.output.weight.clone()),
            g.param(clf.output.bias.clone()),
        ];
        let xv = g.constant(x.clone());
        let h = g.matmul(xv, params[0])?;
        let h = g.add(h, params[1])?;
        let h = g.tanh(h)?;
        let logit = g.matmul(h, params[2])?;
        let logit = g.add(logit, params[3])?;
        // binary cross-entropy with logits: softplus(l) - y l
        let sp = g.softplus(logit)?;
        let yv = g.constant(y.clone());
        let yl = g.mul(yv, logit)?;
        let bce = g.sub(sp, yl)?;
        let wv = g.constant(w.clone());
        let weighted = g.mul(bce, wv)?;
        let loss = g.sum(weighted)?;
        let grads = g.backward(loss)?;
        let grad_tensors: Vec<Tensor> = params.iter().map(|&p| grads.get_or_zeros(p, g.shape(p))).collect();
        let grad_slices: Vec<&[f64]> = grad_tensors.iter().map(|t| t.data()).collect();
        let mut targets: Vec<&mut [f64]> = vec![
            clf.hidden.weight.data_mut(),
            clf.hidden.bias.data_mut(),
            clf.output.weight.data_mut(),
            clf.output.bias.data_mut(),
        ];
        adam.update(&mut targets, &grad_slices);
    }
    Ok(clf)
}

/// `delta ~ Bernoulli(p(delta = 1 | x, t))` for standardised `x`.
pub fn predict_censor_indicator<R: Rng + ?Sized>(x: &[f64], t: f64, clf: &CensorClassifier, rng: &mut R) -> bool {
    let p = clf.probability(x, t);
    rng.random::<f64>() < p
}

/// A generated observation with de-standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTriplet {
    pub x: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

/// Event time drawn from the Beran distribution of a standardised input.
pub fn generate_time<R: Rng + ?Sized>(x: &[f64], model: &TrainedModel, rng: &mut R) -> Result<f64> {
    let sf = model.survival_function(x)?;
    gumbel_sample_time(&sf_to_density(&sf), rng)
}

/// Draws `T_gen`, evaluates the feature trajectory at the grid point nearest to it
/// and attaches a censoring flag from the classifier.
pub fn generate_instance<R: Rng + ?Sized>(x: &[f64], model: &TrainedModel, rng: &mut R) -> Result<GeneratedTriplet> {
    let clf = model
        .censor
        .as_ref()
        .ok_or_else(|| Error::contract("model has no censoring classifier"))?;
    let time = generate_time(x, model, rng)?;
    let bundle = model.latent_bundle(x, rng)?;
    let terms = TrajectoryTerms::new(&bundle, &model.background, model.tau, model.scale)?;
    let k = model.grid.nearest(time);
    let alpha = terms.weights_at(model.scale.to_internal(model.grid.times[k]), model.eta)?;
    let xi = combine(&[alpha], &bundle.samples).remove(0);
    let x_hat = model.params.decode(&xi)?;
    let event = predict_censor_indicator(&x_hat, time, clf, rng);
    Ok(GeneratedTriplet {
        x: model.destandardize(&x_hat),
        time,
        event,
    })
}

/// One triplet per standardised conditioning row; row `i` uses stream `i` of the seed.
pub fn generate_dataset(model: &TrainedModel, rows: &[Vec<f64>], seed: u64) -> Result<SurvivalDataset> {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate_instance(x, model, &mut rng).map(|t| SurvivalRecord::new(t.x, t.time, t.event))
        })
        .collect::<Result<Vec<_>>>()?;
    SurvivalDataset::new(records)
}

/// Standardised conditioning inputs when no rows are given: decoded embeddings of
/// background points drawn uniformly with replacement.
pub fn background_conditioning(model: &TrainedModel, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = model.background.embeddings();
    (0..count)
        .map(|_| model.params.decode(&bg[rng.random_range(0..bg.len())]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> SurvivalDataset {
        let records = (0..n)
            .map(|i| {
                let t = i as f64 + 1.0;
                SurvivalRecord::new(vec![((i * 7) % 5) as f64 - 2.0], t, t > n as f64 / 2.0)
            })
            .collect();
        SurvivalDataset::new(records).unwrap()
    }

    #[test]
    fn separable_toy_is_learned() {
        let ds = toy(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clf = train_censor_classifier(&ds, &ClassifierConfig::default(), &mut rng).unwrap();
        let correct = ds
            .records()
            .iter()
            .filter(|r| (clf.probability(&r.x, r.time) > 0.5) == r.event)
            .count();
        assert!(correct as f64 / 100.0 >= 0.95, "{correct}");
    }

    #[test]
    fn single_class_gives_prevalence() {
        let ds = SurvivalDataset::from_outcomes(&[(1.0, true), (2.0, true)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clf = train_censor_classifier(&ds, &ClassifierConfig::default(), &mut rng).unwrap();
        assert_eq!(clf.probability(&[], 5.0), 1.0);
    }

    #[test]
    fn bernoulli_frequency() {
        let clf = CensorClassifier {
            hidden: Dense::zeros(1, 1),
            output: Dense::zeros(1, 1),
            time_mean: 0.0,
            time_std: 1.0,
            logit_offset: 0.0,
            constant: None,
        };
        // zero weights give sigmoid(0) = 0.5
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let ones = (0..n).filter(|_| predict_censor_indicator(&[], 1.0, &clf, &mut rng)).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
        let sure = CensorClassifier {
            constant: Some(1.0),
            ..clf
        };
        assert!((0..1000).all(|_| predict_censor_indicator(&[], 1.0, &sure, &mut rng)));
    }
}
