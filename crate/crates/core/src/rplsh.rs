//! Random-hyperplane LSH baseline: one sign bit per Gaussian projection.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::codec::{PackedCodes, pack_into, words_per_point};
use crate::error::{IkeError, Result};
use crate::rng::{stream, Domain};
use crate::types::PartitionIndexVector;

#[derive(Debug, Clone, PartialEq)]
pub struct RplshModel {
    t_bits: usize,
    d: usize,
    seed: u64,
    /// `t_bits x d`, row-major.
    projection: Vec<f32>,
}

impl RplshModel {
    /// Row `i` is drawn from its own projection stream.
    pub fn new(t_bits: usize, d: usize, seed: u64) -> Result<RplshModel> {
        if t_bits == 0 || d == 0 {
            return Err(IkeError::param("rpLSH needs t_bits >= 1 and d >= 1"));
        }
        let rows: Vec<Vec<f32>> = (0..t_bits)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, Domain::Projection, i as u64);
                (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
            })
            .collect();
        Ok(RplshModel { t_bits, d, seed, projection: rows.concat() })
    }

    pub fn from_parts(t_bits: usize, d: usize, seed: u64, projection: Vec<f32>) -> Result<RplshModel> {
        if projection.len() != t_bits * d {
            return Err(IkeError::format("projection matrix size does not match (t_bits, d)"));
        }
        Ok(RplshModel { t_bits, d, seed, projection })
    }

    pub fn t_bits(&self) -> usize {
        self.t_bits
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    /// Bit `i` is 1 iff `<row_i, x> >= 0`.
    pub fn map_point(&self, x: &[f32]) -> Result<PartitionIndexVector> {
        self.check_dim(x)?;
        let mut out = vec![0; self.t_bits];
        self.map_into(x, &mut out);
        Ok(PartitionIndexVector(out))
    }

    pub fn map_into(&self, x: &[f32], out: &mut [u32]) {
        for (o, row) in out.iter_mut().zip(self.projection.chunks_exact(self.d)) {
            let dot: f32 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            *o = (dot >= 0.0) as u32;
        }
    }

    pub fn encode(&self, x: &[f32]) -> Result<Vec<u64>> {
        let bits = self.map_point(x)?;
        let mut code = vec![0; words_per_point(self.t_bits, 1)];
        pack_into(bits.as_slice(), 1, &mut code)?;
        Ok(code)
    }

    pub fn encode_all(&self, data: &[f32]) -> Result<PackedCodes> {
        if !data.len().is_multiple_of(self.d) {
            return Err(IkeError::param("input length is not a multiple of d"));
        }
        let wpp = words_per_point(self.t_bits, 1);
        let mut words = vec![0u64; data.len() / self.d * wpp];
        words.par_chunks_mut(wpp).zip(data.par_chunks(self.d)).for_each_init(
            || vec![0u32; self.t_bits],
            |buf, (out, x)| {
                self.map_into(x, buf);
                pack_into(buf, 1, out).expect("sign bits always fit");
            },
        );
        PackedCodes::from_words(data.len() / self.d, self.t_bits, 1, words)
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.d {
            return Err(IkeError::param(format!("point has {} dims, rpLSH model expects {}", x.len(), self.d)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::match_count;

    #[test]
    fn antipodal_points_are_complementary() {
        let model = RplshModel::new(256, 8, 1).unwrap();
        let x: Vec<f32> = (0..8).map(|i| i as f32 - 3.3).collect();
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let (a, b) = (model.encode(&x).unwrap(), model.encode(&neg).unwrap());
        assert_eq!(match_count(&a, &b, 256, 1).unwrap(), 0);
        assert_eq!(match_count(&a, &a, 256, 1).unwrap(), 256);
    }

    #[test]
    fn zero_vector_hashes_to_ones() {
        let model = RplshModel::new(10, 3, 4).unwrap();
        assert_eq!(model.map_point(&[0.0; 3]).unwrap().0, vec![1; 10]);
    }

    #[test]
    fn collision_rate_matches_angle() {
        // Random hyperplane collision probability is 1 - theta/pi.
        let t = 10_000;
        let model = RplshModel::new(t, 16, 9).unwrap();
        for theta in [0.3f64, 1.0, 2.0, 2.8] {
            let mut x = vec![0f32; 16];
            let mut y = vec![0f32; 16];
            x[0] = 1.0;
            y[0] = theta.cos() as f32;
            y[1] = theta.sin() as f32;
            let got = match_count(&model.encode(&x).unwrap(), &model.encode(&y).unwrap(), t, 1).unwrap();
            let frac = got as f64 / t as f64;
            let want = 1.0 - theta / std::f64::consts::PI;
            assert!((frac - want).abs() <= 0.02, "theta={theta}: {frac} vs {want}");
        }
    }

    #[test]
    fn deterministic_and_batch_consistent() {
        let a = RplshModel::new(100, 5, 3).unwrap();
        assert_eq!(a, RplshModel::new(100, 5, 3).unwrap());
        let data: Vec<f32> = (0..50).map(|i| (i as f32 * 0.37).sin()).collect();
        let codes = a.encode_all(&data).unwrap();
        assert_eq!(codes.n(), 10);
        for i in 0..10 {
            assert_eq!(codes.code(i), a.encode(&data[i * 5..(i + 1) * 5]).unwrap().as_slice());
        }
        assert!(a.map_point(&[1.0]).is_err());
    }
}
