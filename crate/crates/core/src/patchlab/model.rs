//! Forward-only residual transformer with per-block activation caching.
//!
//! Each block reads the residual stream and writes one fused contribution
//! (attention followed by MLP), so the final residual at every position is
//! exactly `embedding + Σ_l contribution_l`.

use rand_distr::{Distribution, Normal};

use super::tokenizer::Tokenizer;
use super::{ModelError, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    /// Normalize the final residual before unembedding. Off keeps the
    /// readout linear in the residual.
    pub final_norm: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 8,
            n_heads: 4,
            d_mlp: 256,
            final_norm: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_mlp == 0 {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn random(rows: usize, cols: usize, std: f64, rng: &mut impl rand::Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `x · self` for a row vector `x` of length `rows`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += xr * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyResidualModel {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    /// vocab × d_model
    pub embed: Matrix,
    pub blocks: Vec<Block>,
    /// d_model × vocab
    pub unembed: Matrix,
}

/// Everything recorded by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    pub tokens: Vec<u32>,
    /// Per position: token embedding plus positional encoding.
    pub embedding: Vec<Vec<f64>>,
    /// `[layer][position]` block contributions.
    pub contributions: Vec<Vec<Vec<f64>>>,
    pub final_residual: Vec<Vec<f64>>,
    /// Logits at the last position.
    pub logits: Vec<f64>,
}

impl ActivationCache {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn last(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Residual stream entering block `layer` (layer == n_layers gives the
    /// final residual).
    pub fn residual_before(&self, layer: usize) -> Vec<Vec<f64>> {
        let mut resid = self.embedding.clone();
        for contrib in &self.contributions[..layer] {
            add_rows(&mut resid, contrib);
        }
        resid
    }
}

pub(crate) fn add_rows(acc: &mut [Vec<f64>], rows: &[Vec<f64>]) {
    for (a, r) in acc.iter_mut().zip(rows) {
        add_into(a, r);
    }
}

pub(crate) fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn positional(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

impl ToyResidualModel {
    /// Seeded random initialization. Weights are scaled by `1/sqrt(fan_in)`
    /// so logits stay finite for any prompt length.
    pub fn random(config: ModelConfig, tokenizer: Tokenizer) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.init_seed);
        let d = config.d_model;
        let v = tokenizer.len();
        let sd = 1.0 / (d as f64).sqrt();
        let embed = Matrix::random(v, d, 1.0, &mut rng);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                wq: Matrix::random(d, d, sd, &mut rng),
                wk: Matrix::random(d, d, sd, &mut rng),
                wv: Matrix::random(d, d, sd, &mut rng),
                wo: Matrix::random(d, d, sd, &mut rng),
                w_in: Matrix::random(d, config.d_mlp, sd, &mut rng),
                b_in: vec![0.0; config.d_mlp],
                w_out: Matrix::random(config.d_mlp, d, 1.0 / (config.d_mlp as f64).sqrt(), &mut rng),
            })
            .collect();
        let unembed = Matrix::random(d, v, sd, &mut rng);
        Ok(Self {
            config,
            tokenizer,
            embed,
            blocks,
            unembed,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.len()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.tokenizer.encode(text)
    }

    fn embedding(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                if t as usize >= self.vocab_size() {
                    return Err(ModelError::UnknownToken(t));
                }
                let mut e = self.embed.row(t as usize).to_vec();
                add_into(&mut e, &positional(pos, self.config.d_model));
                Ok(e)
            })
            .collect()
    }

    /// Contribution of block `layer` at every position given the residual
    /// stream entering it.
    pub fn block_contribution(&self, layer: usize, resid: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let b = &self.blocks[layer];
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let normed: Vec<Vec<f64>> = resid.iter().map(|r| layer_norm(r)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|x| b.wq.left_mul(x)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|x| b.wk.left_mul(x)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|x| b.wv.left_mul(x)).collect();

        resid
            .iter()
            .enumerate()
            .map(|(t, r)| {
                let mut z = vec![0.0; d];
                for h in 0..heads {
                    let hs = h * dh..(h + 1) * dh;
                    // causal: attend to positions 0..=t
                    let scores: Vec<f64> = (0..=t)
                        .map(|s| {
                            q[t][hs.clone()]
                                .iter()
                                .zip(&k[s][hs.clone()])
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                                * scale
                        })
                        .collect();
                    let p = softmax(&scores);
                    for (s, ps) in p.iter().enumerate() {
                        for (zi, vi) in z[hs.clone()].iter_mut().zip(&v[s][hs.clone()]) {
                            *zi += ps * vi;
                        }
                    }
                }
                let attn = b.wo.left_mul(&z);
                let mut mid = r.clone();
                add_into(&mut mid, &attn);
                let mut hidden = b.w_in.left_mul(&layer_norm(&mid));
                for (hv, bias) in hidden.iter_mut().zip(&b.b_in) {
                    *hv = gelu(*hv + bias);
                }
                let mut contrib = attn;
                add_into(&mut contrib, &b.w_out.left_mul(&hidden));
                contrib
            })
            .collect()
    }

    /// Logits for a final residual vector.
    pub fn readout(&self, residual: &[f64]) -> Vec<f64> {
        if self.config.final_norm {
            self.unembed.left_mul(&layer_norm(residual))
        } else {
            self.unembed.left_mul(residual)
        }
    }

    /// Run layers `from..n_layers` on `resid` (modified in place) and return
    /// the logits at the last position.
    pub fn run_from(&self, from: usize, resid: &mut [Vec<f64>]) -> Vec<f64> {
        for l in from..self.n_layers() {
            let contrib = self.block_contribution(l, resid);
            add_rows(resid, &contrib);
        }
        self.readout(resid.last().expect("non-empty sequence"))
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<ActivationCache> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let embedding = self.embedding(tokens)?;
        let mut resid = embedding.clone();
        let mut contributions = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let contrib = self.block_contribution(l, &resid);
            add_rows(&mut resid, &contrib);
            contributions.push(contrib);
        }
        let logits = self.readout(resid.last().unwrap());
        Ok(ActivationCache {
            tokens: tokens.to_vec(),
            embedding,
            contributions,
            final_residual: resid,
            logits,
        })
    }

    pub fn forward_text(&self, text: &str) -> Result<ActivationCache> {
        self.forward(&self.encode(text))
    }
}
