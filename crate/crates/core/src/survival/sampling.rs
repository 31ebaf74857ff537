use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use super::DiscreteEventDistribution;
use crate::error::{Error, Result};

/// Index of `argmax_k (ln p_k + noise_k)` over the masses followed by the residual;
/// the residual maps to the last support index. `noise` needs one entry per mass
/// plus one for the residual.
pub fn gumbel_argmax(dist: &DiscreteEventDistribution, noise: &[f64]) -> Result<usize> {
    if dist.times.is_empty() || dist.times.len() != dist.masses.len() {
        return Err(Error::contract("event distribution needs matching nonempty times and masses"));
    }
    if noise.len() != dist.masses.len() + 1 {
        return Err(Error::contract("one Gumbel draw per mass plus one for the residual required"));
    }
    let last = dist.times.len() - 1;
    let candidates = dist
        .masses
        .iter()
        .copied()
        .enumerate()
        .chain(std::iter::once((last, dist.residual)));
    let mut best: Option<(f64, usize)> = None;
    for ((k, p), &g) in candidates.zip(noise) {
        if p > 0.0 {
            let score = p.ln() + g;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, k));
            }
        }
    }
    best.map(|(_, k)| k)
        .ok_or_else(|| Error::contract("event distribution has no positive mass"))
}

pub fn gumbel_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale");
    (0..len).map(|_| gumbel.sample(rng)).collect()
}

/// Gumbel-max draw of an event time. Atoms with zero mass are never chosen;
/// the residual mass beyond the last support time maps to that last time.
pub fn gumbel_sample_time<R: Rng + ?Sized>(dist: &DiscreteEventDistribution, rng: &mut R) -> Result<f64> {
    let noise = gumbel_noise(dist.masses.len() + 1, rng);
    Ok(dist.times[gumbel_argmax(dist, &noise)?])
}
