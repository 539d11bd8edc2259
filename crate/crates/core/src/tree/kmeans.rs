//! Weighted Lloyd's k-means with k-means++ seeding.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::weighted_mean;

pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every point.
    pub assignments: Vec<usize>,
    /// Total weight of the points in each cluster.
    pub masses: Vec<f64>,
    pub counts: Vec<usize>,
    /// Weighted within-cluster sum of squares after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; the lowest index wins ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = match WeightedIndex::new(weights) {
        Ok(dist) => dist.sample(rng),
        Err(_) => 0,
    };
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        // Every point already coincides with a centre.
        let Ok(dist) = WeightedIndex::new(&scores) else {
            break;
        };
        let next = dist.sample(rng);
        centroids.push(points[next].clone());
        let c = centroids.last().expect("just pushed");
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(p, c));
        }
    }
    centroids
}

/// Clusters `points` into at most `k` groups. Clusters that end up empty
/// keep their last centroid and report a zero count.
pub fn kmeans(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> KMeansResult {
    assert!(!points.is_empty() && k >= 1 && weights.len() == points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, weights, k.min(points.len()), &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut inertia_history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iterations {
        let mut changed = false;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let (c, _) = nearest(p, &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = points
                .iter()
                .zip(weights)
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|((p, &w), _)| (p.as_slice(), w));
            let mean = weighted_mean(members);
            if !mean.is_empty() {
                *centroid = mean;
            }
        }
        inertia_history.push(inertia(points, weights, &assignments, &centroids));
    }

    let mut masses = vec![0.0; centroids.len()];
    let mut counts = vec![0; centroids.len()];
    for (&a, &w) in assignments.iter().zip(weights) {
        masses[a] += w;
        counts[a] += 1;
    }
    KMeansResult {
        centroids,
        assignments,
        masses,
        counts,
        inertia_history,
        converged,
    }
}

fn inertia(points: &[Vec<f64>], weights: &[f64], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(weights)
        .zip(assignments)
        .map(|((p, w), &a)| w * squared_distance(p, &centroids[a]))
        .sum()
}
