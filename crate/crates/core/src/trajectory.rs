//! Prototype trajectories: Bayes-rule weighting of sampled embeddings over a time grid.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_row;
use crate::error::{Error, Result};
use crate::survival::{beran_sf, sf_to_density, Background, DiscreteEventDistribution};
use crate::vae::LatentBundle;

/// Affine map from dataset time to the unit used for smoothing and ranking.
///
/// `internal = (t - origin) / unit`; with the default of ten units the training
/// horizon spans `[0, 10]`, so `eta` and the sigmoid margins do not depend on
/// whether a dataset records days or years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub origin: f64,
    pub unit: f64,
}

impl TimeScale {
    pub fn new(t_min: f64, t_max: f64, units: f64) -> Result<Self> {
        if !(units > 0.0) {
            return Err(Error::contract("time units must be positive"));
        }
        let span = t_max - t_min;
        let unit = if span > 0.0 { span / units } else { 1.0 };
        Ok(Self { origin: t_min, unit })
    }

    pub fn identity() -> Self {
        Self {
            origin: 0.0,
            unit: 1.0,
        }
    }

    pub fn to_internal(&self, t: f64) -> f64 {
        (t - self.origin) / self.unit
    }
}

/// Equally spaced points `t_k = t_min + k (t_max - t_min) / v`, `k = 1..v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub times: Vec<f64>,
}

pub fn time_grid(t_min: f64, t_max: f64, v: usize) -> Result<TimeGrid> {
    if !(t_max > t_min) {
        return Err(Error::contract(format!("time grid needs t_max > t_min, got [{t_min}, {t_max}]")));
    }
    if v == 0 {
        return Err(Error::contract("time grid needs at least one point"));
    }
    let step = (t_max - t_min) / v as f64;
    let mut times: Vec<f64> = (1..=v).map(|k| t_min + k as f64 * step).collect();
    times[v - 1] = t_max;
    Ok(TimeGrid { times })
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the grid point closest to `t` (lower index on exact ties).
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &tk) in self.times.iter().enumerate() {
            if (tk - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }
}

/// Unnormalised diagonal Gaussian `exp(-0.5 sum ((z - mu) / sigma)^2)`.
pub fn prior_density(z: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if z.len() != mu.len() || mu.len() != sigma.len() {
        return Err(Error::contract("prior density inputs differ in dimension"));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::contract("prior density needs positive deviations"));
    }
    let q: f64 = z
        .iter()
        .zip(mu.iter().zip(sigma))
        .map(|(z, (m, s))| ((z - m) / s).powi(2))
        .sum();
    Ok((-0.5 * q).exp())
}

/// Softmin weights `beta_j(t)` over `eta |t - t_j|`.
pub fn smoothing_weights(t: f64, support: &[f64], eta: f64) -> Vec<f64> {
    let logits: Vec<f64> = support.iter().map(|&tj| eta * (t - tj).abs()).collect();
    let mut w = vec![0.0; logits.len()];
    softmax_row(&logits, -1.0, &mut w);
    w
}

/// `sum_j beta_j(t) p_j`: the discrete density spread over arbitrary `t`.
pub fn smoothed_density(t: f64, dist: &DiscreteEventDistribution, eta: f64) -> f64 {
    smoothing_weights(t, &dist.times, eta)
        .iter()
        .zip(&dist.masses)
        .map(|(b, p)| b * p)
        .sum()
}

/// Normalises `prior_i * smoothed_i` over the samples; falls back to uniform
/// weights when every product is zero.
pub fn trajectory_weights(priors: &[f64], smoothed: &[f64]) -> Result<Vec<f64>> {
    if priors.is_empty() || priors.len() != smoothed.len() {
        return Err(Error::contract("trajectory weights need one prior and density per sample"));
    }
    let numer: Vec<f64> = priors.iter().zip(smoothed).map(|(a, b)| a * b).collect();
    let total: f64 = numer.iter().sum();
    let m = numer.len() as f64;
    Ok(if total > 0.0 {
        numer.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / m; numer.len()]
    })
}

/// Convex combinations `sum_i alpha_i z_i`, one per weight row.
pub fn combine(weights: &[Vec<f64>], samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = samples[0].len();
    weights
        .iter()
        .map(|row| {
            let mut out = vec![0.0; dim];
            for (a, z) in row.iter().zip(samples) {
                for (o, zi) in out.iter_mut().zip(z) {
                    *o += a * zi;
                }
            }
            out
        })
        .collect()
}

/// Per-sample event-time densities from the Beran estimator, with support in internal units.
pub fn sample_densities(
    bundle: &LatentBundle,
    background: &Background,
    tau: f64,
    scale: TimeScale,
) -> Result<Vec<DiscreteEventDistribution>> {
    bundle
        .samples
        .iter()
        .map(|z| {
            let mut d = sf_to_density(&beran_sf(z, background, tau)?);
            d.times.iter_mut().for_each(|t| *t = scale.to_internal(*t));
            Ok(d)
        })
        .collect()
}

/// Priors and per-sample densities of a bundle, reusable across query times.
pub struct TrajectoryTerms {
    pub priors: Vec<f64>,
    pub densities: Vec<DiscreteEventDistribution>,
}

impl TrajectoryTerms {
    pub fn new(bundle: &LatentBundle, background: &Background, tau: f64, scale: TimeScale) -> Result<Self> {
        let densities = sample_densities(bundle, background, tau, scale)?;
        let priors = bundle
            .samples
            .iter()
            .map(|z| prior_density(z, &bundle.mu, &bundle.sigma))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { priors, densities })
    }

    /// `alpha_i(t)` for a time given in internal units.
    pub fn weights_at(&self, t_internal: f64, eta: f64) -> Result<Vec<f64>> {
        let smoothed: Vec<f64> = self
            .densities
            .iter()
            .map(|d| smoothed_density(t_internal, d, eta))
            .collect();
        trajectory_weights(&self.priors, &smoothed)
    }
}

/// Latent points `xi_z(t_k)` with their `v x m` weight matrix.
pub type LatentPath = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Latent trajectory `xi_z(t_k)` and its weight matrix (`v x m`) for one bundle.
pub fn embedding_trajectory(
    bundle: &LatentBundle,
    background: &Background,
    tau: f64,
    eta: f64,
    grid: &TimeGrid,
    scale: TimeScale,
) -> Result<LatentPath> {
    let terms = TrajectoryTerms::new(bundle, background, tau, scale)?;
    let weights = grid
        .times
        .iter()
        .map(|&t| terms.weights_at(scale.to_internal(t), eta))
        .collect::<Result<Vec<_>>>()?;
    Ok((combine(&weights, &bundle.samples), weights))
}

/// Time-indexed latent and feature paths for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub latent_points: Vec<Vec<f64>>,
    pub feature_points: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

/// Decodes every latent point; `decode` maps a latent vector to output features.
pub fn feature_trajectory<F>(
    grid: TimeGrid,
    latent_points: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    decode: F,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if latent_points.len() != grid.len() || weights.len() != grid.len() {
        return Err(Error::contract("one latent point and weight row per grid time required"));
    }
    let feature_points = latent_points
        .iter()
        .map(|z| decode(z))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        grid,
        latent_points,
        feature_points,
        weights,
    })
}

impl Trajectory {
    /// Long CSV: `time` followed by one column per feature.
    pub fn write_csv<W: Write>(&self, feature_names: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend(feature_names.iter().cloned());
        w.write_record(&header)?;
        for (t, x) in self.grid.times.iter().zip(&self.feature_points) {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, feature_names: &[String], csv_path: &Path, json_path: &Path) -> Result<()> {
        self.write_csv(feature_names, std::fs::File::create(csv_path)?)?;
        let sidecar = serde_json::json!({
            "times": self.grid.times,
            "latent_points": self.latent_points,
            "weights": self.weights,
        });
        std::fs::write(json_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }
}
