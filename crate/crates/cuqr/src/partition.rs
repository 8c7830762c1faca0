//! Relevance-subgroup partition of covariate space: seeded k-means++ with
//! Lloyd iterations, fitted on standardized training features.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-8;
const MAX_ITERS: usize = 300;
const RESTARTS: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupPartition {
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (g, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (g, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[Vec<f64>], g: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(g);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < g {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&d2).map(|w| w.sample(rng)).unwrap_or_else(|_| rng.gen_range(0..points.len()))
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[next].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, f64) {
    let d = points[0].len();
    let g = centroids.len();
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let assignments: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        let inertia: f64 =
            points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
        debug_assert!(inertia <= prev_inertia + 1e-9, "Lloyd inertia increased");
        prev_inertia = inertia;

        let mut sums = vec![vec![0.0; d]; g];
        let mut counts = vec![0usize; g];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut new_centroids = centroids.clone();
        for gi in 0..g {
            if counts[gi] > 0 {
                for (j, s) in sums[gi].iter().enumerate() {
                    new_centroids[gi][j] = s / counts[gi] as f64;
                }
            } else {
                // Re-seed an empty cluster from the farthest point.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        nearest(&centroids, a).1.partial_cmp(&nearest(&centroids, b).1).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                new_centroids[gi] = points[far].clone();
            }
        }
        let shift: f64 = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = new_centroids;
        if shift < TOL {
            break;
        }
    }
    let inertia: f64 = points.iter().map(|p| nearest(&centroids, p).1).sum();
    (centroids, inertia)
}

/// Seeded k-means++ plus Lloyd iterations, best of 5 restarts by inertia.
pub fn kmeans_fit(features: &[Vec<f64>], g: usize, seed: u64) -> Result<SubgroupPartition> {
    if g == 0 {
        return Err(Error::InvalidConfig("G must be >= 1".into()));
    }
    if features.len() < g {
        return Err(Error::TooFewPoints { needed: g, got: features.len() });
    }
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
        let init = kmeans_pp_init(features, g, &mut rng);
        let (centroids, inertia) = lloyd(features, init);
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((centroids, inertia));
        }
    }
    let (centroids, inertia) = best.unwrap();
    Ok(SubgroupPartition { centroids, seed, inertia })
}

impl SubgroupPartition {
    pub fn g(&self) -> usize {
        self.centroids.len()
    }

    /// Index of the Euclidean-nearest centroid; ties resolve to the lowest index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        let d = self.centroids[0].len();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        Ok(nearest(&self.centroids, x).0)
    }

    pub fn assign_all(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>> {
        xs.iter().map(|x| self.assign(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_well_separated_clusters() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let p = kmeans_fit(&pts, 2, 3).unwrap();
        let mut cs: Vec<f64> = p.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((cs[0] - 0.05).abs() < 1e-9);
        assert!((cs[1] - 10.05).abs() < 1e-9);
        // Exhaustive oracle: among all 2-partitions this one has minimum inertia.
        assert!((p.inertia - 0.01).abs() < 1e-9);
    }

    #[test]
    fn g1_centroid_is_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let p = kmeans_fit(&pts, 1, 0).unwrap();
        assert!((p.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((p.centroids[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn g_equals_n_zero_inertia() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![5.0]];
        let p = kmeans_fit(&pts, 4, 9).unwrap();
        assert!(p.inertia < 1e-12);
        let mut cs: Vec<f64> = p.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cs, vec![0.0, 1.0, 2.0, 5.0]);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(kmeans_fit(&[vec![0.0]], 2, 0), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn assign_examples() {
        let p = SubgroupPartition { centroids: vec![vec![0.05], vec![10.05]], seed: 0, inertia: 0.0 };
        assert_eq!(p.assign(&[0.05]).unwrap(), 0);
        assert_eq!(p.assign(&[10.05]).unwrap(), 1);
        assert_eq!(p.assign(&[5.05]).unwrap(), 0); // equidistant -> lowest index
        assert_eq!(p.assign(&[9.0]).unwrap(), 1);
        assert!(matches!(p.assign(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn every_training_cluster_nonempty() {
        let mut pts = Vec::new();
        for i in 0..60 {
            pts.push(vec![(i % 6) as f64 * 3.0, (i / 6) as f64 * 0.1]);
        }
        let p = kmeans_fit(&pts, 6, 1).unwrap();
        let assigns = p.assign_all(&pts).unwrap();
        for g in 0..6 {
            assert!(assigns.iter().any(|&a| a == g), "cluster {g} empty");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let pts: Vec<Vec<f64>> =
            (0..50).map(|i| vec![(i as f64 * 0.77).sin(), (i as f64 * 0.31).cos()]).collect();
        let a = kmeans_fit(&pts, 5, 123).unwrap();
        let b = kmeans_fit(&pts, 5, 123).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia, b.inertia);
    }
}
