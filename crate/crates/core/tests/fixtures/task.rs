//! A five-instance training task small enough for finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survgen::autodiff::{grad_check, AutodiffError, Graph, Tensor, Var};
use survgen::losses::LossWeights;
use survgen::survival::{risk_order, Background, SurvivalDataset, SurvivalRecord};
use survgen::training::{task_graph, TaskBackground, TaskInputs, TrainContext};
use survgen::vae::EncoderDecoderParams;

pub const BATCH: usize = 5;

pub struct TaskFixture {
    pub ctx: TrainContext,
    pub inp: TaskInputs,
    pub params: EncoderDecoderParams,
    pub weights: LossWeights,
    pub log_tau: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leaf {
    EncoderWeight,
    MuBias,
    SigmaWeight,
    DecoderWeight,
    LogTau,
    Eta,
}

pub const LEAVES: [Leaf; 6] = [
    Leaf::EncoderWeight,
    Leaf::MuBias,
    Leaf::SigmaWeight,
    Leaf::DecoderWeight,
    Leaf::LogTau,
    Leaf::Eta,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Beran,
    Reconstruction,
    Mmd,
    Tr1,
    Tr2,
    Total,
}

pub const TERMS: [Term; 6] = [Term::Beran, Term::Reconstruction, Term::Mmd, Term::Tr1, Term::Tr2, Term::Total];

/// Twelve records with distinct times; the longest one is censored and always
/// kept in the background, so no Beran factor sits on its clamp.
pub fn task_fixture(seed: u64, fixed_background: bool) -> TaskFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 12;
    let records: Vec<SurvivalRecord> = (0..n)
        .map(|i| {
            let x = vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            let time = 1.0 + i as f64 + rng.random_range(0.0..0.5);
            let event = i + 1 < n && (i % 3 != 1);
            SurvivalRecord::new(x, time, event)
        })
        .collect();
    let ds = SurvivalDataset::new(records).unwrap();
    let ctx = TrainContext::new(&ds, 4, 10.0).unwrap();
    let params = EncoderDecoderParams::new(2, 2, &[4], &mut rng).unwrap();

    let last = (0..n).max_by(|&a, &b| ctx.times[a].total_cmp(&ctx.times[b])).unwrap();
    let mut pool: Vec<usize> = (0..n).filter(|&i| i != last).collect();
    for i in (1..pool.len()).rev() {
        pool.swap(i, rng.random_range(0..=i));
    }
    let batch = pool[..BATCH].to_vec();
    let mut rest: Vec<usize> = pool[BATCH..].to_vec();
    rest.push(last);
    let t: Vec<f64> = rest.iter().map(|&i| ctx.times[i]).collect();
    let e: Vec<bool> = rest.iter().map(|&i| ctx.events[i]).collect();
    let background = if fixed_background {
        let mu = rest.iter().map(|&i| params.encode(&ctx.x[i]).unwrap().0).collect();
        TaskBackground::Fixed(Background::new(mu, t, e).unwrap())
    } else {
        TaskBackground::Encoded(risk_order(&t, &e).into_iter().map(|k| rest[k]).collect())
    };
    let inp = TaskInputs::draw(&ctx, batch, background, 3, 2, &mut rng).unwrap();
    TaskFixture {
        ctx,
        inp,
        params,
        weights: LossWeights::default(),
        log_tau: 0.3,
        eta: 0.8,
    }
}

impl TaskFixture {
    fn leaf_value(&self, leaf: Leaf) -> Tensor {
        match leaf {
            Leaf::EncoderWeight => self.params.encoder[0].weight.clone(),
            Leaf::MuBias => self.params.mu_head.bias.clone(),
            Leaf::SigmaWeight => self.params.sigma_head.weight.clone(),
            Leaf::DecoderWeight => self.params.decoder.last().unwrap().weight.clone(),
            Leaf::LogTau => Tensor::scalar(self.log_tau),
            Leaf::Eta => Tensor::scalar(self.eta),
        }
    }

    /// Builds the task graph with `theta` in place of `leaf` and returns `term`.
    pub fn term(&self, g: &mut Graph, theta: Var, leaf: Leaf, term: Term) -> Result<Var, survgen::Error> {
        let mut bound = self.params.bind(g);
        let mut log_tau = g.param(Tensor::scalar(self.log_tau));
        let mut eta = g.param(Tensor::scalar(self.eta));
        match leaf {
            Leaf::EncoderWeight => bound.encoder[0].weight = theta,
            Leaf::MuBias => bound.mu_head.bias = theta,
            Leaf::SigmaWeight => bound.sigma_head.weight = theta,
            Leaf::DecoderWeight => bound.decoder.last_mut().unwrap().weight = theta,
            Leaf::LogTau => log_tau = theta,
            Leaf::Eta => eta = theta,
        }
        let vars = task_graph(g, &bound, log_tau, eta, &self.ctx, &self.inp, &self.weights)?;
        Ok(match term {
            Term::Beran => vars.beran,
            Term::Reconstruction => vars.reconstruction,
            Term::Mmd => vars.mmd,
            Term::Tr1 => vars.tr1,
            Term::Tr2 => vars.tr2,
            Term::Total => vars.total,
        })
    }

    /// Worst relative gradient error of `term` with respect to `leaf`.
    pub fn grad_error(&self, leaf: Leaf, term: Term, h: f64) -> f64 {
        grad_check(
            |g, p| {
                self.term(g, p, leaf, term).map_err(|e| AutodiffError::InvalidArgument {
                    op: "task_graph",
                    reason: e.to_string(),
                })
            },
            &self.leaf_value(leaf),
            h,
        )
        .unwrap()
    }
}
