//! Loss terms of the training objective, as plain scalar functions and as graph builders.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softmax_row, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::vae::{mmd_graph, mmd_penalty};

/// Floor inside the log of the trajectory likelihood term.
pub const LOG_FLOOR: f64 = 1e-12;

/// Weights of the loss parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma1: 0.5,
            gamma2: 2.0,
            gamma3: 1.0,
            gamma4: 0.05,
            lambda: 40.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma1, self.gamma2, self.gamma3, self.gamma4, self.lambda];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Pair weights `1[t_j < t_i] delta_j`, normalised to sum to one. `None` when no pair qualifies.
fn pair_weights(times: &[f64], events: &[bool]) -> Option<Vec<f64>> {
    let n = times.len();
    let mut w = vec![0.0; n * n];
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if times[j] < times[i] && events[j] {
                w[i * n + j] = 1.0;
                count += 1;
            }
        }
    }
    if count == 0 {
        return None;
    }
    let c = count as f64;
    w.iter_mut().for_each(|v| *v /= c);
    Some(w)
}

fn check_lengths(pred: usize, times: &[f64], events: &[bool]) -> Result<()> {
    if pred != times.len() || times.len() != events.len() {
        return Err(Error::contract("soft C-index inputs differ in length"));
    }
    Ok(())
}

/// `gamma * sum 1[t_j < t_i] sigmoid(T_i - T_j) delta_j / sum 1[t_j < t_i] delta_j`.
///
/// `None` when no admissible pair exists.
pub fn soft_c_index(pred: &[f64], times: &[f64], events: &[bool], gamma: f64) -> Result<Option<f64>> {
    check_lengths(pred.len(), times, events)?;
    let n = pred.len();
    Ok(pair_weights(times, events).map(|w| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if w[i * n + j] > 0.0 {
                    s += w[i * n + j] * sigmoid(pred[i] - pred[j]);
                }
            }
        }
        gamma * s
    }))
}

/// Graph form of [`soft_c_index`] for `pred` of shape `[n]` or `[b, n]`; with a
/// leading batch axis every row shares `times`/`events` and the result is the
/// mean over rows.
pub fn soft_c_index_graph(
    g: &mut Graph,
    pred: Var,
    times: &[f64],
    events: &[bool],
    gamma: f64,
) -> Result<Option<Var>> {
    let shape = g.shape(pred).to_vec();
    let (batch, n) = match shape.as_slice() {
        [n] => (1, *n),
        [b, n] => (*b, *n),
        _ => return Err(Error::contract("soft C-index expects a vector or a matrix of predictions")),
    };
    check_lengths(n, times, events)?;
    let Some(w) = pair_weights(times, events) else {
        return Ok(None);
    };
    let col = g.reshape(pred, &[batch, n, 1])?;
    let row = g.reshape(pred, &[batch, 1, n])?;
    let diff = g.sub(col, row)?;
    let s = g.sigmoid(diff)?;
    let w = g.constant(Tensor::new(vec![1, n, n], w)?);
    let weighted = g.mul(s, w)?;
    let total = g.sum(weighted)?;
    Ok(Some(g.scale(total, gamma / batch as f64)?))
}

/// `(gamma2 / n) sum ||x_i - xhat_i||^2` plus the MMD penalty (skipped below two instances).
pub fn wae_loss(
    x: &[Vec<f64>],
    x_hat: &[Vec<f64>],
    z: &[Vec<f64>],
    reference: &[Vec<f64>],
    gamma2: f64,
    lambda: f64,
) -> Result<f64> {
    if x.is_empty() || x.len() != x_hat.len() {
        return Err(Error::contract("reconstruction batches differ in size"));
    }
    let n = x.len() as f64;
    let rec: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    let mmd = if z.len() >= 2 {
        mmd_penalty(z, reference, lambda)?
    } else {
        log::warn!("batch of {} instance(s): MMD term skipped", z.len());
        0.0
    };
    Ok(gamma2 / n * rec + mmd)
}

/// Reconstruction part of [`wae_loss`] on the graph; `x` and `x_hat` are `[n, d]`.
pub fn reconstruction_graph(g: &mut Graph, x: Var, x_hat: Var, gamma2: f64) -> Result<Var> {
    let n = g.shape(x)[0] as f64;
    let diff = g.sub(x, x_hat)?;
    let sq = g.square(diff)?;
    let s = g.sum(sq)?;
    Ok(g.scale(s, gamma2 / n)?)
}

/// Graph form of [`wae_loss`].
pub fn wae_graph(
    g: &mut Graph,
    x: Var,
    x_hat: Var,
    z: Var,
    reference: Var,
    gamma2: f64,
    lambda: f64,
) -> Result<Var> {
    let rec = reconstruction_graph(g, x, x_hat, gamma2)?;
    if g.shape(z)[0] < 2 {
        log::warn!("batch of one instance: MMD term skipped");
        return Ok(rec);
    }
    let mmd = mmd_graph(g, z, reference, lambda)?;
    Ok(g.add(rec, mmd)?)
}

/// Soft C-index of trajectory expected times against the grid times (no censoring on the grid).
pub fn trajectory_rank_loss(pred: &[f64], grid: &[f64], gamma3: f64) -> Result<f64> {
    if pred.len() < 2 {
        return Ok(0.0);
    }
    let events = vec![true; grid.len()];
    Ok(soft_c_index(pred, grid, &events, gamma3)?.unwrap_or(0.0))
}

/// Softmin over the Kaplan-Meier masses of the uncensored instances.
pub fn km_softmin_weights(km_masses: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; km_masses.len()];
    softmax_row(km_masses, -1.0, &mut w);
    w
}

/// `gamma4 sum_i alpha_i ln(smoothed_i + 1e-12)` with `alpha` the softmin of the KM masses.
pub fn trajectory_likelihood_loss(km_masses: &[f64], smoothed: &[f64], gamma4: f64) -> Result<f64> {
    if km_masses.len() != smoothed.len() {
        return Err(Error::contract("one KM mass per smoothed density required"));
    }
    if km_masses.is_empty() {
        log::warn!("no uncensored instances: trajectory likelihood term is zero");
        return Ok(0.0);
    }
    let alpha = km_softmin_weights(km_masses);
    Ok(gamma4
        * alpha
            .iter()
            .zip(smoothed)
            .map(|(a, p)| a * (p + LOG_FLOOR).ln())
            .sum::<f64>())
}

/// Values of the four loss parts for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub beran: f64,
    pub wae: f64,
    pub tr1: f64,
    pub tr2: f64,
}

impl LossParts {
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [("L_Beran", self.beran), ("L_WAE", self.wae), ("L_Tr1", self.tr1), ("L_Tr2", self.tr2)] {
            if !v.is_finite() {
                return Err(Error::Numerical {
                    part: name.to_string(),
                    detail: format!("value {v}"),
                });
            }
        }
        Ok(())
    }
}

/// `-L_Beran + L_WAE - (L_Tr1 + L_Tr2)`.
pub fn total_loss(parts: &LossParts) -> Result<f64> {
    parts.check_finite()?;
    Ok(-parts.beran + parts.wae - (parts.tr1 + parts.tr2))
}

/// Graph form of [`total_loss`].
pub fn total_loss_graph(g: &mut Graph, beran: Var, wae: Var, tr1: Var, tr2: Var) -> Result<Var> {
    let tr = g.add(tr1, tr2)?;
    let a = g.sub(wae, beran)?;
    Ok(g.sub(a, tr)?)
}
