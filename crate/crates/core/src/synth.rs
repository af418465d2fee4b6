//! Seeded synthetic data for tests, benchmarks and `ike check-properties`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{IkeError, Result};
use crate::rng::{stream, Domain};
use crate::types::EmbeddingMatrix;

/// `n` points drawn uniformly from `[0,1]^d`.
pub fn uniform(n: usize, d: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let rows: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Domain::Experiment, i as u64);
            (0..d).map(|_| rng.random::<f32>()).collect()
        })
        .collect();
    EmbeddingMatrix::new(n, d, rows.concat())
}

/// Gaussian clusters with centres drawn from `N(0, I)`.
///
/// Each point is its centre plus `spread` times a draw from a Gaussian whose
/// covariance has rank `latent` (`latent = d` gives isotropic clusters),
/// plus `noise` times isotropic Gaussian noise. Points are assigned to
/// clusters round-robin. Returns the points and each point's cluster.
#[derive(Debug, Clone, Copy)]
pub struct Clusters {
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    pub latent: usize,
    pub spread: f32,
    pub noise: f32,
}

impl Clusters {
    pub fn generate(&self, seed: u64) -> Result<(EmbeddingMatrix, Vec<u32>)> {
        let &Clusters { n, d, clusters, latent, spread, noise } = self;
        if clusters == 0 || latent == 0 || latent > d {
            return Err(IkeError::param("need clusters >= 1 and 1 <= latent <= d"));
        }
        let gauss = |rng: &mut crate::rng::RngStream, len: usize| -> Vec<f32> {
            (0..len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
        };
        // Per cluster: centre (d) followed by a latent x d basis.
        let shapes: Vec<Vec<f32>> = (0..clusters)
            .map(|c| gauss(&mut stream(seed, Domain::Experiment, c as u64), d * (latent + 1)))
            .collect();
        let scale = spread / (latent as f32).sqrt();
        let rows: Vec<Vec<f32>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed ^ 0x5eed, Domain::Experiment, i as u64);
                let shape = &shapes[i % clusters];
                let z = gauss(&mut rng, latent);
                let mut x = shape[..d].to_vec();
                for (k, zk) in z.iter().enumerate() {
                    let basis = &shape[d * (k + 1)..d * (k + 2)];
                    x.iter_mut().zip(basis).for_each(|(v, b)| *v += scale * zk * b);
                }
                if noise > 0.0 {
                    x.iter_mut().zip(gauss(&mut rng, d)).for_each(|(v, e)| *v += noise * e);
                }
                x
            })
            .collect();
        let labels = (0..n).map(|i| (i % clusters) as u32).collect();
        Ok((EmbeddingMatrix::new(n, d, rows.concat())?, labels))
    }
}
