use serde::{Deserialize, Serialize};

use super::{risk_order, StepSurvivalFunction, BERAN_EPS};
use crate::autodiff::{softmax_row, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Embedded training points that parameterise the Beran estimator, stored in
/// risk-set order (ascending time, events first at ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    embeddings: Vec<Vec<f64>>,
    times: Vec<f64>,
    events: Vec<bool>,
}

impl Background {
    pub fn new(embeddings: Vec<Vec<f64>>, times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::contract("Beran background must be nonempty"));
        }
        if embeddings.len() != times.len() || times.len() != events.len() {
            return Err(Error::contract("background embeddings, times and events differ in length"));
        }
        let dim = embeddings[0].len();
        if embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::contract("background embeddings differ in dimension"));
        }
        let order = risk_order(&times, &events);
        Ok(Self {
            embeddings: order.iter().map(|&i| embeddings[i].clone()).collect(),
            times: order.iter().map(|&i| times[i]).collect(),
            events: order.iter().map(|&i| events[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].len()
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    /// Distinct times with the number of background items at each.
    pub fn tie_groups(&self) -> (Vec<f64>, Vec<usize>) {
        let mut times = Vec::new();
        let mut sizes: Vec<usize> = Vec::new();
        for &t in &self.times {
            if times.last() == Some(&t) {
                *sizes.last_mut().expect("paired") += 1;
            } else {
                times.push(t);
                sizes.push(1);
            }
        }
        (times, sizes)
    }
}

/// `softmax(-||query - b_i||^2 / tau)` over the background points.
pub fn kernel_weights<E: AsRef<[f64]>>(query: &[f64], background: &[E], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!("kernel temperature must be positive, got {tau}")));
    }
    if background.is_empty() {
        return Err(Error::contract("kernel weights need a nonempty background"));
    }
    let mut logits = Vec::with_capacity(background.len());
    for b in background {
        let b = b.as_ref();
        if b.len() != query.len() {
            return Err(Error::contract(format!(
                "query has dimension {}, background point has {}",
                query.len(),
                b.len()
            )));
        }
        let d: f64 = query.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        logits.push(-d / tau);
    }
    let mut w = vec![0.0; logits.len()];
    softmax_row(&logits, 1.0, &mut w);
    Ok(w)
}

/// Beran product over the background with precomputed weights (in background order).
pub fn beran_sf_from_weights(weights: &[f64], bg: &Background) -> Result<StepSurvivalFunction> {
    if weights.len() != bg.len() {
        return Err(Error::contract("one weight per background point required"));
    }
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut surv: f64 = 1.0;
    let mut consumed: f64 = 0.0;
    for ((&w, &t), &event) in weights.iter().zip(bg.times()).zip(bg.events()) {
        if event {
            let at_risk = (1.0 - consumed).max(BERAN_EPS);
            surv *= (1.0 - w / at_risk).clamp(0.0, 1.0);
        }
        consumed += w;
        match times.last() {
            Some(&last) if last == t => *values.last_mut().expect("paired") = surv,
            _ => {
                times.push(t);
                values.push(surv);
            }
        }
    }
    StepSurvivalFunction::new(times, values)
}

/// Conditional survival function of `query` given the embedded background.
pub fn beran_sf(query: &[f64], bg: &Background, tau: f64) -> Result<StepSurvivalFunction> {
    let w = kernel_weights(query, bg.embeddings(), tau)?;
    beran_sf_from_weights(&w, bg)
}

/// Differentiable Beran outputs for a batch of queries, one column per background item.
pub struct BeranGraph {
    /// `[q, r]` survival after each background item.
    pub survival: Var,
    /// `[q, r]` point mass of each background item.
    pub density: Var,
    /// `[q]` expected event time in the caller's time units.
    pub expected: Var,
}

/// Builds the Beran estimator on the graph.
///
/// `background` rows must already be in risk-set order and `times` must be the
/// matching sorted times in the units the expected time should be reported in.
pub fn beran_graph(
    g: &mut Graph,
    queries: Var,
    background: Var,
    times: &[f64],
    events: &[bool],
    tau: Var,
) -> Result<BeranGraph> {
    let r = g.shape(background)[0];
    let q = g.shape(queries)[0];
    if times.len() != r || events.len() != r {
        return Err(Error::contract("background metadata does not match background rows"));
    }
    let d = g.sq_dist_pairs(queries, background)?;
    let scaled = g.div(d, tau)?;
    let w = g.softmin(scaled)?;

    let survival = g.product_limit(w, events, BERAN_EPS)?;

    let ones = g.constant(Tensor::ones(&[q, 1]));
    let prev = if r > 1 {
        let head = g.slice(survival, 1, 0, r - 1)?;
        g.concat(&[ones, head], 1)?
    } else {
        ones
    };
    let density = g.sub(prev, survival)?;

    let mut gaps = vec![0.0; r];
    for i in 0..r - 1 {
        gaps[i] = times[i + 1] - times[i];
    }
    let gaps = g.constant(Tensor::new(vec![r, 1], gaps)?);
    let area = g.matmul(survival, gaps)?;
    let area = g.add_scalar(area, times[0])?;
    let expected = g.reshape(area, &[q])?;
    Ok(BeranGraph {
        survival,
        density,
        expected,
    })
}
