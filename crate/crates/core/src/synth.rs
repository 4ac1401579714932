//! Synthetic paired embeddings for desk-scale experiments.
//!
//! Each item draws a latent vector around one of a set of shared cluster
//! centers; its code and query embeddings are that latent plus independent
//! per-modality noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Standard deviation of cluster centers around the origin.
    pub center_scale: f64,
    /// Standard deviation of items around their center.
    pub spread: f64,
    /// Per-modality noise added to the latent.
    pub noise: f64,
    /// Scale every vector to unit length.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            dim: 128,
            clusters: 64,
            center_scale: 1.0,
            spread: 1.0,
            noise: 0.5,
            normalize: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.dim == 0 || self.clusters == 0 {
            return Err(Error::config("count, dim and clusters must be positive"));
        }
        for (name, v) in [
            ("center scale", self.center_scale),
            ("spread", self.spread),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Paired embeddings; row `i` of `code` matches row `i` of `query`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPairs {
    pub code: Matrix<f32>,
    pub query: Matrix<f32>,
    pub cluster: Vec<u32>,
}

impl SynthPairs {
    /// First `n` pairs and the rest.
    pub fn split(&self, n: usize) -> Result<(SynthPairs, SynthPairs)> {
        if n > self.code.rows() {
            return Err(Error::InvalidInput(format!(
                "cannot split {} pairs at {n}",
                self.code.rows()
            )));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.code.rows()).collect();
        let part = |idx: &[usize]| SynthPairs {
            code: self.code.select_rows(idx),
            query: self.query.select_rows(idx),
            cluster: idx.iter().map(|&i| self.cluster[i]).collect(),
        };
        Ok((part(&head), part(&tail)))
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthPairs> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let centers: Vec<f64> = (0..cfg.clusters * cfg.dim)
        .map(|_| cfg.center_scale * normal(&mut rng))
        .collect();
    let mut code = Vec::with_capacity(cfg.count * cfg.dim);
    let mut query = Vec::with_capacity(cfg.count * cfg.dim);
    let mut cluster = Vec::with_capacity(cfg.count);
    let mut latent = vec![0.0; cfg.dim];
    let mut v = vec![0.0; cfg.dim];
    for _ in 0..cfg.count {
        let c = rng.random_range(0..cfg.clusters);
        cluster.push(c as u32);
        for (j, l) in latent.iter_mut().enumerate() {
            *l = centers[c * cfg.dim + j] + cfg.spread * normal(&mut rng);
        }
        for out in [&mut code, &mut query] {
            for (x, &l) in v.iter_mut().zip(&latent) {
                *x = l + cfg.noise * normal(&mut rng);
            }
            let scale = if cfg.normalize {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    1.0 / n
                } else {
                    1.0
                }
            } else {
                1.0
            };
            out.extend(v.iter().map(|&x| (x * scale) as f32));
        }
    }
    Ok(SynthPairs {
        code: Matrix::from_vec(cfg.count, cfg.dim, code)?,
        query: Matrix::from_vec(cfg.count, cfg.dim, query)?,
        cluster,
    })
}
