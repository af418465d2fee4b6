//! Lloyd's k-means over float rows with random-point initialization and a
//! fixed iteration count.

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{IkeError, Result};
use crate::rng::{stream, Domain};
use crate::types::EmbeddingMatrix;

pub const DEFAULT_ITERS: usize = 25;

/// Squared l2 distance, accumulated in f64.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) * (x - y)) as f64).sum()
}

/// Nearest centroid; ties go to the lowest index.
#[inline]
pub fn nearest_centroid(x: &[f32], centroids: &[f32], d: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, c) in centroids.chunks_exact(d).enumerate() {
        let dist = l2_sq(x, c);
        if dist < best.0 {
            best = (dist, j);
        }
    }
    best.1
}

pub fn assign(data: &EmbeddingMatrix, centroids: &[f32]) -> Vec<u32> {
    let d = data.d();
    data.as_slice().par_chunks(d).map(|x| nearest_centroid(x, centroids, d) as u32).collect()
}

/// Returns `nlist x d` centroids, row-major.
pub fn kmeans(data: &EmbeddingMatrix, nlist: usize, iters: usize, seed: u64) -> Result<Vec<f32>> {
    let (n, d) = (data.n(), data.d());
    if nlist == 0 || nlist > n {
        return Err(IkeError::param(format!("nlist={nlist} must be in [1, n={n}]")));
    }
    let mut rng = stream(seed, Domain::KMeans, 0);
    let mut centroids = Vec::with_capacity(nlist * d);
    for i in index::sample(&mut rng, n, nlist) {
        centroids.extend_from_slice(data.row(i));
    }
    for _ in 0..iters {
        let labels = assign(data, &centroids);
        // Sequential sums keep the result independent of thread count.
        let mut sums = vec![0f64; nlist * d];
        let mut counts = vec![0usize; nlist];
        for (x, &l) in data.rows().zip(&labels) {
            let l = l as usize;
            counts[l] += 1;
            for (s, &v) in sums[l * d..(l + 1) * d].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        for j in 0..nlist {
            if counts[j] > 0 {
                for k in 0..d {
                    centroids[j * d + k] = (sums[j * d + k] / counts[j] as f64) as f32;
                }
            }
        }
        repair_empty(&mut centroids, &mut counts, d);
    }
    Ok(centroids)
}

/// Split the largest cluster into every empty one by nudging a copy of its
/// centroid in opposite directions.
fn repair_empty(centroids: &mut [f32], counts: &mut [usize], d: usize) {
    const EPS: f32 = 1.0 / 1024.0;
    for j in 0..counts.len() {
        if counts[j] != 0 {
            continue;
        }
        let big = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        if counts[big] < 2 {
            return;
        }
        for k in 0..d {
            let v = centroids[big * d + k];
            let (up, down) = if k % 2 == 0 { (1.0 + EPS, 1.0 - EPS) } else { (1.0 - EPS, 1.0 + EPS) };
            centroids[j * d + k] = v * up + if v == 0.0 { EPS } else { 0.0 };
            centroids[big * d + k] = v * down;
        }
        counts[j] = counts[big] / 2;
        counts[big] -= counts[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separates_obvious_clusters() {
        let mut rng = stream(0, Domain::Experiment, 0);
        let mut rows = Vec::new();
        for c in [0.0f32, 100.0, -100.0] {
            for _ in 0..50 {
                rows.push(vec![c + rng.random::<f32>(), c - rng.random::<f32>()]);
            }
        }
        let data = EmbeddingMatrix::from_rows(&rows).unwrap();
        let cents = kmeans(&data, 3, 10, 4).unwrap();
        let labels = assign(&data, &cents);
        for block in labels.chunks(50) {
            assert!(block.iter().all(|&l| l == block[0]));
        }
        let mut firsts: Vec<u32> = labels.chunks(50).map(|b| b[0]).collect();
        firsts.sort_unstable();
        assert_eq!(firsts, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_points_leave_no_empty_cluster_unrepaired() {
        let data = EmbeddingMatrix::new(6, 1, vec![1.0, 1.0, 1.0, 1.0, 5.0, 5.0]).unwrap();
        let cents = kmeans(&data, 3, 5, 1).unwrap();
        assert_eq!(cents.len(), 3);
        assert!(cents.iter().all(|c| c.is_finite()));
        assert!(kmeans(&data, 7, 5, 1).is_err());
    }

    #[test]
    fn thread_count_independent() {
        let mut rng = stream(2, Domain::Experiment, 0);
        let data = EmbeddingMatrix::new(500, 4, (0..2000).map(|_| rng.random::<f32>()).collect()).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| kmeans(&data, 8, 25, 3).unwrap());
        let b = kmeans(&data, 8, 25, 3).unwrap();
        assert_eq!(a, b);
    }
}
