//! Task-based training loop: graph construction per task, Adam updates and epoch bookkeeping.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    km_softmin_weights, reconstruction_graph, soft_c_index_graph, total_loss_graph, LossParts, LossWeights,
    LOG_FLOOR,
};
use crate::model::TrainedModel;
use crate::survival::{
    beran_graph, c_index_hard, gumbel_argmax, gumbel_noise, km_density, risk_order, Background,
    DiscreteEventDistribution, SurvivalDataset,
};
use crate::trajectory::{time_grid, TimeGrid, TimeScale};
use crate::vae::{mmd_graph, standard_normal, BoundParams, EncoderDecoderParams};

/// Training hyperparameters. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Background points drawn per task before the warmup ends.
    pub background_size: usize,
    /// Instances processed per task, capped so that `min(background_size, n / 2)`
    /// points remain for the background.
    pub batch_size: usize,
    /// Defaults to `ceil(n / batch_size)`.
    pub tasks_per_epoch: Option<usize>,
    /// Sampled embeddings per instance.
    pub embeddings: usize,
    /// Points of the trajectory time grid.
    pub grid_size: usize,
    pub latent_dim: usize,
    pub hidden_units: Vec<usize>,
    pub epochs: usize,
    /// Epochs with resampled backgrounds before switching to the full training set.
    pub warmup_epochs: usize,
    pub learning_rate: f64,
    /// Starting kernel temperature; it is trained from there.
    pub initial_tau: f64,
    pub seed: u64,
    /// The training horizon is mapped onto `[0, time_units]` for smoothing and ranking.
    pub time_units: f64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            background_size: 128,
            batch_size: 64,
            tasks_per_epoch: None,
            embeddings: 48,
            grid_size: 64,
            latent_dim: 8,
            hidden_units: vec![64, 64],
            epochs: 200,
            warmup_epochs: 100,
            learning_rate: 1e-3,
            initial_tau: 1.0,
            seed: 0,
            time_units: 10.0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        if self.background_size == 0 || self.batch_size == 0 || self.embeddings == 0 || self.grid_size == 0 {
            return Err(Error::contract("background, batch, embedding and grid sizes must be positive"));
        }
        if self.tasks_per_epoch == Some(0) {
            return Err(Error::contract("tasks_per_epoch must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning rate must be finite and nonnegative"));
        }
        if !(self.initial_tau > 0.0 && self.initial_tau.is_finite()) {
            return Err(Error::contract("initial_tau must be positive and finite"));
        }
        if !(self.time_units > 0.0) {
            return Err(Error::contract("time_units must be positive"));
        }
        Ok(())
    }
}

/// Adam with the usual defaults for the moment decay rates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (i, (pi, &gi)) in p.iter_mut().zip(g.iter()).enumerate() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Everything the optimiser updates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: EncoderDecoderParams,
    /// `tau = exp(log_tau)` keeps the kernel temperature positive.
    pub log_tau: f64,
    pub eta: f64,
    pub adam: Adam,
}

impl TrainState {
    pub fn new(params: EncoderDecoderParams, lr: f64, tau: f64) -> Self {
        let mut sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        sizes.extend([1, 1]);
        Self {
            params,
            log_tau: tau.ln(),
            eta: 1.0,
            adam: Adam::new(lr, &sizes),
        }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }
}

/// Training data in the form the task graph needs.
pub struct TrainContext {
    pub x: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub scale: TimeScale,
    pub grid: TimeGrid,
    /// Kaplan-Meier mass at each record's own time.
    pub km_mass: Vec<f64>,
}

impl TrainContext {
    pub fn new(ds: &SurvivalDataset, grid_size: usize, time_units: f64) -> Result<Self> {
        if ds.len() < 3 {
            return Err(Error::contract("training needs at least three records"));
        }
        let (t_min, t_max) = ds.time_range().expect("nonempty");
        if !(t_max > t_min) {
            return Err(Error::contract("training times must not all be equal"));
        }
        let km = km_density(ds)?;
        let km_mass = ds
            .records()
            .iter()
            .map(|r| {
                let k = km.times.partition_point(|&t| t < r.time);
                km.masses[k]
            })
            .collect();
        Ok(Self {
            x: ds.features(),
            times: ds.times(),
            events: ds.events(),
            scale: TimeScale::new(t_min, t_max, time_units)?,
            grid: time_grid(t_min, t_max, grid_size)?,
            km_mass,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Background points of one task, in risk-set order.
#[derive(Debug, Clone)]
pub enum TaskBackground {
    /// Training rows encoded inside the graph, so gradients reach the encoder.
    Encoded(Vec<usize>),
    /// Fixed embeddings with their outcomes.
    Fixed(Background),
}

/// Indices and pre-drawn randomness of one task.
#[derive(Debug, Clone)]
pub struct TaskInputs {
    pub batch: Vec<usize>,
    pub background: TaskBackground,
    /// `[batch * m, d_z]` reparameterisation noise.
    pub eps: Tensor,
    /// `[batch, d_z]` standard-normal reference draws for the MMD.
    pub reference: Tensor,
    /// Per batch instance: one Gumbel draw per distinct background time plus one for the residual.
    pub gumbel: Vec<Vec<f64>>,
}

fn tie_groups(times: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut distinct: Vec<f64> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for &t in times {
        if distinct.last() == Some(&t) {
            *sizes.last_mut().expect("paired") += 1;
        } else {
            distinct.push(t);
            sizes.push(1);
        }
    }
    (distinct, sizes)
}

impl TaskInputs {
    /// Sorted times and events of the background.
    fn outcomes(&self, ctx: &TrainContext) -> (Vec<f64>, Vec<bool>) {
        match &self.background {
            TaskBackground::Encoded(idx) => (
                idx.iter().map(|&i| ctx.times[i]).collect(),
                idx.iter().map(|&i| ctx.events[i]).collect(),
            ),
            TaskBackground::Fixed(bg) => (bg.times().to_vec(), bg.events().to_vec()),
        }
    }

    /// Draws noise for a batch against a background, consuming `rng` in a fixed order.
    pub fn draw<R: Rng + ?Sized>(
        ctx: &TrainContext,
        batch: Vec<usize>,
        background: TaskBackground,
        embeddings: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::contract("task batch is empty"));
        }
        let b = batch.len();
        let eps = Tensor::from_rows(&standard_normal(b * embeddings, latent_dim, rng))?;
        let reference = Tensor::from_rows(&standard_normal(b, latent_dim, rng))?;
        let mut inputs = Self {
            batch,
            background,
            eps,
            reference,
            gumbel: Vec::new(),
        };
        let (times, _) = inputs.outcomes(ctx);
        let u = tie_groups(&times).0.len();
        inputs.gumbel = (0..b).map(|_| gumbel_noise(u + 1, rng)).collect();
        Ok(inputs)
    }
}

/// Handles of every loss part in a task graph.
#[derive(Debug, Clone, Copy)]
pub struct TaskVars {
    pub beran: Var,
    pub reconstruction: Var,
    pub mmd: Var,
    pub wae: Var,
    pub tr1: Var,
    pub tr2: Var,
    pub total: Var,
}

/// Builds the full training objective of one task.
///
/// `log_tau` and `eta` are `[1]` tensors on the graph; the caller decides which
/// leaves are trainable.
pub fn task_graph(
    g: &mut Graph,
    bound: &BoundParams,
    log_tau: Var,
    eta: Var,
    ctx: &TrainContext,
    inp: &TaskInputs,
    weights: &LossWeights,
) -> Result<TaskVars> {
    let b = inp.batch.len();
    let d_z = inp.eps.shape()[1];
    let m = inp.eps.shape()[0] / b;
    let v = ctx.grid.len();
    let scale = ctx.scale;

    let (bg_times, bg_events) = inp.outcomes(ctx);
    let bg_internal: Vec<f64> = bg_times.iter().map(|&t| scale.to_internal(t)).collect();
    let (group_times, group_sizes) = tie_groups(&bg_times);
    let group_internal: Vec<f64> = group_times.iter().map(|&t| scale.to_internal(t)).collect();
    let u = group_times.len();

    let xb: Vec<&[f64]> = inp.batch.iter().map(|&i| ctx.x[i].as_slice()).collect();
    let x = g.constant(Tensor::from_rows(&xb)?);
    let (mu, sigma) = bound.encode(g, x)?;
    let background = match &inp.background {
        TaskBackground::Encoded(idx) => {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| ctx.x[i].as_slice()).collect();
            let xr = g.constant(Tensor::from_rows(&rows)?);
            bound.encode(g, xr)?.0
        }
        TaskBackground::Fixed(bg) => g.constant(Tensor::from_rows(bg.embeddings())?),
    };
    let tau = g.exp(log_tau)?;

    // Beran estimator on the means: ranking loss and the sampled generation time.
    let beran1 = beran_graph(g, mu, background, &bg_internal, &bg_events, tau)?;
    let batch_times: Vec<f64> = inp.batch.iter().map(|&i| ctx.times[i]).collect();
    let batch_events: Vec<bool> = inp.batch.iter().map(|&i| ctx.events[i]).collect();
    let l_beran = match soft_c_index_graph(g, beran1.expected, &batch_times, &batch_events, weights.gamma1)? {
        Some(v) => v,
        None => {
            log::warn!("task batch has no admissible pairs: L_Beran is zero");
            g.scalar(0.0)
        }
    };
    let gen_rows = {
        let surv = g.value(beran1.survival);
        let dens = g.value(beran1.density);
        let r = bg_times.len();
        let mut rows = Vec::with_capacity(b);
        for q in 0..b {
            let row = &dens.data()[q * r..(q + 1) * r];
            let mut masses = Vec::with_capacity(u);
            let mut start = 0;
            for &len in &group_sizes {
                masses.push(row[start..start + len].iter().sum::<f64>().max(0.0));
                start += len;
            }
            let dist = DiscreteEventDistribution {
                times: group_times.clone(),
                masses,
                residual: surv.data()[q * r + r - 1],
            };
            let k = gumbel_argmax(&dist, &inp.gumbel[q])?;
            rows.push(q * v + ctx.grid.nearest(group_times[k]));
        }
        rows
    };

    // Sampled embeddings and their event-time densities.
    let eps = g.constant(inp.eps.clone());
    let mu_rep = g.repeat_rows(mu, m)?;
    let sigma_rep = g.repeat_rows(sigma, m)?;
    let noise = g.mul(eps, sigma_rep)?;
    let z = g.add(mu_rep, noise)?;
    let beran2 = beran_graph(g, z, background, &bg_internal, &bg_events, tau)?;
    let p2 = g.sum_groups(beran2.density, &group_sizes)?;

    // z - mu = eps * sigma, so the prior only depends on the noise.
    let prior: Vec<f64> = inp
        .eps
        .rows()
        .map(|e| (-0.5 * e.iter().map(|v| v * v).sum::<f64>()).exp())
        .collect();
    let prior_col = g.constant(Tensor::new(vec![b, m, 1], prior)?);

    let mut d_grid = Vec::with_capacity(v * u);
    for &t in &ctx.grid.times {
        let ti = scale.to_internal(t);
        d_grid.extend(group_internal.iter().map(|&tj| (ti - tj).abs()));
    }
    let d_grid = g.constant(Tensor::new(vec![v, u], d_grid)?);
    let logits = g.mul(d_grid, eta)?;
    let beta_grid = g.softmin(logits)?;
    let mut d_obs = Vec::with_capacity(b * u);
    for &t in &batch_times {
        let ti = scale.to_internal(t);
        d_obs.extend(group_internal.iter().map(|&tj| (ti - tj).abs()));
    }
    let d_obs = g.constant(Tensor::new(vec![b, u], d_obs)?);
    let logits = g.mul(d_obs, eta)?;
    let beta_obs = g.softmin(logits)?;

    let z3 = g.reshape(z, &[b, m, d_z])?;
    let smooth_grid = g.matmul_t(p2, beta_grid, false, true)?;
    let smooth_grid = g.reshape(smooth_grid, &[b, m, v])?;
    let numer = g.mul(smooth_grid, prior_col)?;
    let numer = g.transpose(numer)?;
    let alpha = g.normalize(numer)?;
    let xi = g.batch_matmul(alpha, z3, false, false)?;
    let xi_flat = g.reshape(xi, &[b * v, d_z])?;

    let p2_3 = g.reshape(p2, &[b, m, u])?;
    let beta_col = g.reshape(beta_obs, &[b, u, 1])?;
    let smooth_obs = g.batch_matmul(p2_3, beta_col, false, false)?;
    let numer_obs = g.mul(smooth_obs, prior_col)?;
    let numer_obs = g.transpose(numer_obs)?;
    let alpha_obs = g.normalize(numer_obs)?;
    let xi_obs = g.batch_matmul(alpha_obs, z3, false, false)?;
    let xi_obs = g.reshape(xi_obs, &[b, d_z])?;

    // Beran estimator on trajectory points.
    let q3 = g.concat(&[xi_flat, xi_obs], 0)?;
    let beran3 = beran_graph(g, q3, background, &bg_internal, &bg_events, tau)?;
    let l_tr1 = if v >= 2 {
        let grid_pred = g.slice(beran3.expected, 0, 0, b * v)?;
        let grid_pred = g.reshape(grid_pred, &[b, v])?;
        let grid_internal: Vec<f64> = ctx.grid.times.iter().map(|&t| scale.to_internal(t)).collect();
        let all = vec![true; v];
        soft_c_index_graph(g, grid_pred, &grid_internal, &all, weights.gamma3)?.expect("grid is increasing")
    } else {
        g.scalar(0.0)
    };
    let uncensored: Vec<usize> = (0..b).filter(|&q| batch_events[q]).collect();
    let l_tr2 = if uncensored.is_empty() {
        log::warn!("task batch has no uncensored instances: L_Tr2 is zero");
        g.scalar(0.0)
    } else {
        let dens = g.slice(beran3.density, 0, b * v, b)?;
        let dens = g.sum_groups(dens, &group_sizes)?;
        let smooth = g.mul(dens, beta_obs)?;
        let smooth = g.sum_last(smooth)?;
        let smooth = g.reshape(smooth, &[b, 1])?;
        let smooth = g.gather_rows(smooth, &uncensored)?;
        let shifted = g.add_scalar(smooth, LOG_FLOOR)?;
        let logp = g.ln(shifted)?;
        let km: Vec<f64> = uncensored.iter().map(|&q| ctx.km_mass[inp.batch[q]]).collect();
        let alpha_km = g.constant(Tensor::new(vec![uncensored.len(), 1], km_softmin_weights(&km))?);
        let weighted = g.mul(logp, alpha_km)?;
        let s = g.sum(weighted)?;
        g.scale(s, weights.gamma4)?
    };

    // Reconstruction at the sampled time and the MMD on the first embeddings.
    let xi_gen = g.gather_rows(xi_flat, &gen_rows)?;
    let x_hat = bound.decode(g, xi_gen)?;
    let rec = reconstruction_graph(g, x, x_hat, weights.gamma2)?;
    let mmd = if b >= 2 {
        let first: Vec<usize> = (0..b).map(|q| q * m).collect();
        let z1 = g.gather_rows(z, &first)?;
        let reference = g.constant(inp.reference.clone());
        mmd_graph(g, z1, reference, weights.lambda)?
    } else {
        log::warn!("batch of one instance: MMD term skipped");
        g.scalar(0.0)
    };
    let wae = g.add(rec, mmd)?;
    let total = total_loss_graph(g, l_beran, wae, l_tr1, l_tr2)?;
    Ok(TaskVars {
        beran: l_beran,
        reconstruction: rec,
        mmd,
        wae,
        tr1: l_tr1,
        tr2: l_tr2,
        total,
    })
}

/// One optimiser step on one task. Parameters are left untouched on failure.
pub fn run_task(state: &mut TrainState, ctx: &TrainContext, inp: &TaskInputs, weights: &LossWeights) -> Result<LossParts> {
    let mut g = Graph::new();
    let bound = state.params.bind(&mut g);
    let log_tau = g.param(Tensor::scalar(state.log_tau));
    let eta = g.param(Tensor::scalar(state.eta));
    let vars = task_graph(&mut g, &bound, log_tau, eta, ctx, inp, weights)?;
    let parts = LossParts {
        beran: g.value(vars.beran).item(),
        wae: g.value(vars.wae).item(),
        tr1: g.value(vars.tr1).item(),
        tr2: g.value(vars.tr2).item(),
    };
    parts.check_finite()?;
    let grads = g.backward(vars.total)?;
    let mut handles = bound.vars();
    handles.extend([log_tau, eta]);
    let grad_tensors: Vec<Tensor> = handles.iter().map(|&h| grads.get_or_zeros(h, g.shape(h))).collect();
    if grad_tensors.iter().any(|t| !t.all_finite()) {
        return Err(Error::Numerical {
            part: "gradient".into(),
            detail: "non-finite gradient entry".into(),
        });
    }
    let grad_slices: Vec<&[f64]> = grad_tensors.iter().map(|t| t.data()).collect();
    let mut log_tau_buf = [state.log_tau];
    let mut eta_buf = [state.eta];
    {
        let mut targets: Vec<&mut [f64]> = state.params.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
        targets.push(&mut log_tau_buf);
        targets.push(&mut eta_buf);
        state.adam.update(&mut targets, &grad_slices);
    }
    state.log_tau = log_tau_buf[0];
    state.eta = eta_buf[0];
    Ok(parts)
}

/// Per-epoch means written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_Beran")]
    pub l_beran: f64,
    #[serde(rename = "L_WAE")]
    pub l_wae: f64,
    #[serde(rename = "L_Tr1")]
    pub l_tr1: f64,
    #[serde(rename = "L_Tr2")]
    pub l_tr2: f64,
    pub total: f64,
    pub holdout_c_index: Option<f64>,
}

/// One JSON object per line.
pub fn write_log<W: Write>(history: &[EpochLog], mut out: W) -> Result<()> {
    for e in history {
        writeln!(out, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

fn encode_means(params: &EncoderDecoderParams, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    x.iter().map(|xi| params.encode(xi).map(|(mu, _)| mu)).collect()
}

fn snapshot(state: &TrainState, ctx: &TrainContext, config: &TrainConfig) -> Result<TrainedModel> {
    let background = Background::new(encode_means(&state.params, &ctx.x)?, ctx.times.clone(), ctx.events.clone())?;
    Ok(TrainedModel {
        params: state.params.clone(),
        tau: state.tau(),
        eta: state.eta,
        background,
        scale: ctx.scale,
        grid: ctx.grid.clone(),
        embeddings: config.embeddings,
        standardizer: None,
        schema: None,
        censor: None,
        config: config.clone(),
    })
}

/// Trains on a standardised dataset; `holdout` only feeds the per-epoch C-index.
pub fn fit(
    ds: &SurvivalDataset,
    config: &TrainConfig,
    holdout: Option<&SurvivalDataset>,
) -> Result<(TrainedModel, Vec<EpochLog>)> {
    config.validate()?;
    let ctx = TrainContext::new(ds, config.grid_size, config.time_units)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = EncoderDecoderParams::new(ds.feature_dim(), config.latent_dim, &config.hidden_units, &mut rng)?;
    let mut state = TrainState::new(params, config.learning_rate, config.initial_tau);
    let n = ctx.len();
    // Small datasets keep at least half of the points as background.
    let background_size = config.background_size.min(n / 2);
    let batch_size = config.batch_size.min(n - background_size);
    let tasks = config.tasks_per_epoch.unwrap_or(n.div_ceil(batch_size));
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let warm = epoch <= config.warmup_epochs;
        let means = if warm { None } else { Some(encode_means(&state.params, &ctx.x)?) };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut cursor = 0;
        let mut sums = LossParts::default();
        let mut total = 0.0;
        for _ in 0..tasks {
            if cursor + batch_size > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let batch = order[cursor..cursor + batch_size].to_vec();
            cursor += batch_size;
            let mut in_batch = vec![false; n];
            batch.iter().for_each(|&i| in_batch[i] = true);
            let rest: Vec<usize> = (0..n).filter(|&i| !in_batch[i]).collect();
            let background = match &means {
                None => {
                    let r = background_size.min(rest.len());
                    let picked: Vec<usize> = index::sample(&mut rng, rest.len(), r).into_iter().map(|k| rest[k]).collect();
                    let t: Vec<f64> = picked.iter().map(|&i| ctx.times[i]).collect();
                    let e: Vec<bool> = picked.iter().map(|&i| ctx.events[i]).collect();
                    TaskBackground::Encoded(risk_order(&t, &e).into_iter().map(|k| picked[k]).collect())
                }
                Some(mu) => TaskBackground::Fixed(Background::new(
                    rest.iter().map(|&i| mu[i].clone()).collect(),
                    rest.iter().map(|&i| ctx.times[i]).collect(),
                    rest.iter().map(|&i| ctx.events[i]).collect(),
                )?),
            };
            let inp = TaskInputs::draw(&ctx, batch, background, config.embeddings, config.latent_dim, &mut rng)?;
            let parts = run_task(&mut state, &ctx, &inp, &config.loss_weights)?;
            sums.beran += parts.beran;
            sums.wae += parts.wae;
            sums.tr1 += parts.tr1;
            sums.tr2 += parts.tr2;
            total += crate::losses::total_loss(&parts)?;
        }
        let k = tasks as f64;
        let holdout_c_index = match holdout {
            Some(h) => snapshot(&state, &ctx, config)?.c_index(h)?,
            None => None,
        };
        let entry = EpochLog {
            epoch,
            l_beran: sums.beran / k,
            l_wae: sums.wae / k,
            l_tr1: sums.tr1 / k,
            l_tr2: sums.tr2 / k,
            total: total / k,
            holdout_c_index,
        };
        log::info!("{}", serde_json::to_string(&entry)?);
        history.push(entry);
    }
    Ok((snapshot(&state, &ctx, config)?, history))
}

/// Hard C-index of expected-time predictions; `None` without admissible pairs.
pub fn c_index_of(pred: &[f64], ds: &SurvivalDataset) -> Result<Option<f64>> {
    c_index_hard(pred, &ds.times(), &ds.events())
}
