//! Encoder/decoder networks, reparameterised sampling and the MMD regulariser.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Added to the softplus output so standard deviations stay strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Affine layer `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let w = (0..input * output).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::from_parts(vec![input, output], w),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let out = self.output_dim();
        let w = self.weight.data();
        let mut y = self.bias.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            let row = &w[i * out..(i + 1) * out];
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
        y
    }
}

/// Layer handles on a graph.
#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl DenseVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.weight)?;
        Ok(g.add(h, self.bias)?)
    }
}

fn tanh_stack(layers: &[Dense], x: &[f64]) -> Vec<f64> {
    layers.iter().fold(x.to_vec(), |h, layer| {
        layer.forward(&h).into_iter().map(f64::tanh).collect()
    })
}

/// Weights of the encoder (tanh trunk plus mean and deviation heads) and the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDecoderParams {
    pub encoder: Vec<Dense>,
    pub mu_head: Dense,
    pub sigma_head: Dense,
    /// Hidden tanh layers followed by a linear output layer.
    pub decoder: Vec<Dense>,
}

impl EncoderDecoderParams {
    /// Encoder `d -> hidden... -> (d_z, d_z)`, decoder `d_z -> hidden... -> d`.
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if feature_dim == 0 || latent_dim == 0 || hidden.contains(&0) {
            return Err(Error::contract("network dimensions must be positive"));
        }
        let mut encoder = Vec::with_capacity(hidden.len());
        let mut prev = feature_dim;
        for &h in hidden {
            encoder.push(Dense::glorot(prev, h, rng));
            prev = h;
        }
        let mu_head = Dense::glorot(prev, latent_dim, rng);
        let sigma_head = Dense::glorot(prev, latent_dim, rng);
        let mut decoder = Vec::with_capacity(hidden.len() + 1);
        let mut prev = latent_dim;
        for &h in hidden {
            decoder.push(Dense::glorot(prev, h, rng));
            prev = h;
        }
        decoder.push(Dense::glorot(prev, feature_dim, rng));
        Ok(Self {
            encoder,
            mu_head,
            sigma_head,
            decoder,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.decoder.last().expect("decoder has an output layer").output_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.output_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.feature_dim() {
            return Err(Error::contract(format!(
                "encoder expects {} features, got {}",
                self.feature_dim(),
                x.len()
            )));
        }
        let h = tanh_stack(&self.encoder, x);
        let mu = self.mu_head.forward(&h);
        let sigma = self
            .sigma_head
            .forward(&h)
            .into_iter()
            .map(|v| softplus(v) + SIGMA_FLOOR)
            .collect();
        Ok((mu, sigma))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::contract(format!(
                "decoder expects {} latent coordinates, got {}",
                self.latent_dim(),
                z.len()
            )));
        }
        let (last, hidden) = self.decoder.split_last().expect("decoder has an output layer");
        Ok(last.forward(&tanh_stack(hidden, z)))
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.sigma_head])
            .chain(self.decoder.iter())
    }

    /// Every weight tensor, in the order used by [`Self::bind`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.sigma_head])
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Registers copies of all weights as trainable leaves of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let mut bind = |l: &Dense| DenseVars {
            weight: g.param(l.weight.clone()),
            bias: g.param(l.bias.clone()),
        };
        BoundParams {
            encoder: self.encoder.iter().map(&mut bind).collect(),
            mu_head: bind(&self.mu_head),
            sigma_head: bind(&self.sigma_head),
            decoder: self.decoder.iter().map(&mut bind).collect(),
        }
    }
}

/// Graph handles for [`EncoderDecoderParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub encoder: Vec<DenseVars>,
    pub mu_head: DenseVars,
    pub sigma_head: DenseVars,
    pub decoder: Vec<DenseVars>,
}

impl BoundParams {
    /// Same order as [`EncoderDecoderParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.sigma_head])
            .chain(self.decoder.iter())
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// `x: [n, d]` to `(mu, sigma)`, each `[n, d_z]`.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for layer in &self.encoder {
            let a = layer.forward(g, h)?;
            h = g.tanh(a)?;
        }
        let mu = self.mu_head.forward(g, h)?;
        let raw = self.sigma_head.forward(g, h)?;
        let sp = g.softplus(raw)?;
        let sigma = g.add_scalar(sp, SIGMA_FLOOR)?;
        Ok((mu, sigma))
    }

    /// `z: [n, d_z]` to `[n, d]`.
    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let (last, hidden) = self.decoder.split_last().expect("decoder has an output layer");
        let mut h = z;
        for layer in hidden {
            let a = layer.forward(g, h)?;
            h = g.tanh(a)?;
        }
        last.forward(g, h)
    }
}

/// Encoder output for one input together with its sampled embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBundle {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// `rows x cols` standard-normal draws in row-major order.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// `z_i = mu + eps_i * sigma` for `m` fresh noise vectors.
pub fn sample_embeddings<R: Rng + ?Sized>(
    mu: &[f64],
    sigma: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<LatentBundle> {
    if m == 0 {
        return Err(Error::contract("at least one embedding must be sampled"));
    }
    if mu.len() != sigma.len() {
        return Err(Error::contract("mu and sigma differ in dimension"));
    }
    let samples = standard_normal(m, mu.len(), rng)
        .into_iter()
        .map(|eps| {
            eps.iter()
                .zip(mu.iter().zip(sigma))
                .map(|(e, (m, s))| m + e * s)
                .collect()
        })
        .collect();
    Ok(LatentBundle {
        mu: mu.to_vec(),
        sigma: sigma.to_vec(),
        samples,
    })
}

/// Inverse multiquadratic kernel `C / (C + ||a - b||^2)` with `C = 2 d_z`.
pub fn imq_kernel(a: &[f64], b: &[f64], latent_dim: usize) -> f64 {
    let c = 2.0 * latent_dim as f64;
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    c / (c + d)
}

/// Unbiased-style MMD between embeddings `z` and reference draws `reference`.
pub fn mmd_penalty<V: AsRef<[f64]>>(z: &[V], reference: &[V], lambda: f64) -> Result<f64> {
    let n = z.len();
    if n < 2 || reference.len() != n {
        return Err(Error::contract("MMD needs two batches of equal size n >= 2"));
    }
    let dim = z[0].as_ref().len();
    let within = |set: &[V]| {
        let mut s = 0.0;
        for (l, a) in set.iter().enumerate() {
            for (j, b) in set.iter().enumerate() {
                if l != j {
                    s += imq_kernel(a.as_ref(), b.as_ref(), dim);
                }
            }
        }
        s
    };
    let mut cross = 0.0;
    for a in z {
        for b in reference {
            cross += imq_kernel(a.as_ref(), b.as_ref(), dim);
        }
    }
    let nf = n as f64;
    let off = lambda / (nf * (nf - 1.0));
    Ok(off * within(z) + off * within(reference) - 2.0 * lambda / (nf * nf) * cross)
}

fn imq_matrix(g: &mut Graph, a: Var, b: Var, c: f64) -> Result<Var> {
    let d = g.sq_dist_pairs(a, b)?;
    let denom = g.add_scalar(d, c)?;
    let inv = g.recip(denom)?;
    Ok(g.scale(inv, c)?)
}

/// Graph form of [`mmd_penalty`] for `z, reference: [n, d_z]`.
pub fn mmd_graph(g: &mut Graph, z: Var, reference: Var, lambda: f64) -> Result<Var> {
    let shape = g.shape(z).to_vec();
    if shape.len() != 2 || shape[0] < 2 || g.shape(reference) != shape.as_slice() {
        return Err(Error::contract("MMD needs two [n, d] batches with n >= 2"));
    }
    let (n, dim) = (shape[0] as f64, shape[1]);
    let c = 2.0 * dim as f64;
    let off = lambda / (n * (n - 1.0));
    let mut terms = Vec::with_capacity(3);
    for (a, b) in [(z, z), (reference, reference)] {
        let k = imq_matrix(g, a, b, c)?;
        let s = g.sum(k)?;
        // the diagonal is exactly one; drop it
        let s = g.add_scalar(s, -n)?;
        terms.push(g.scale(s, off)?);
    }
    let k = imq_matrix(g, z, reference, c)?;
    let s = g.sum(k)?;
    let cross = g.scale(s, -2.0 * lambda / (n * n))?;
    let within = g.add(terms[0], terms[1])?;
    Ok(g.add(within, cross)?)
}
