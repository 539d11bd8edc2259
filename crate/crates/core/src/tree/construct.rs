use super::kmeans::{kmeans, MAX_LLOYD_ITERATIONS};
use super::{weighted_mean, ScenarioMatrix, ScenarioTree, TreeError};

fn push_branch(tree: &mut ScenarioTree, values: &[f64], probability: f64) {
    let mut parent = 0;
    for &v in values {
        parent = tree.push_child(parent, v, probability);
    }
}

/// Scenario fan: every sample becomes its own branch hanging off the root.
pub fn build_fan(samples: &ScenarioMatrix, root_value: f64) -> ScenarioTree {
    let mut tree = ScenarioTree::root_only(root_value);
    if samples.horizon() == 0 {
        return tree;
    }
    for (row, &p) in samples.rows().iter().zip(samples.probabilities()) {
        push_branch(&mut tree, row, p);
    }
    tree
}

/// Single branch holding the probability-weighted mean of the samples.
pub fn average_branch(samples: &ScenarioMatrix, root_value: f64) -> ScenarioTree {
    let mean = weighted_mean(
        samples
            .rows()
            .iter()
            .map(Vec::as_slice)
            .zip(samples.probabilities().iter().copied()),
    );
    let mut tree = ScenarioTree::root_only(root_value);
    push_branch(&mut tree, &mean, 1.0);
    tree
}

/// Fan over the centroids of a k-means clustering of the samples. Empty
/// clusters are dropped, so the fan may have fewer than `clusters` branches.
pub fn cluster_fan(
    samples: &ScenarioMatrix,
    clusters: usize,
    root_value: f64,
    seed: u64,
) -> Result<ScenarioTree, TreeError> {
    if clusters == 0 || clusters > samples.len() {
        return Err(TreeError::ClusterCount {
            requested: clusters,
            available: samples.len(),
        });
    }
    let mut tree = ScenarioTree::root_only(root_value);
    if samples.horizon() == 0 {
        return Ok(tree);
    }
    let result = kmeans(
        samples.rows(),
        samples.probabilities(),
        clusters,
        seed,
        MAX_LLOYD_ITERATIONS,
    );
    // Sample probabilities already sum to one; masses are used as they are
    // so that singleton clusters keep the probability of their sample. A
    // cluster holding every sample gets exactly one.
    let whole = result.counts.iter().filter(|&&n| n > 0).count() == 1;
    for (c, centroid) in result.centroids.iter().enumerate() {
        if result.counts[c] > 0 {
            let mass = if whole { 1.0 } else { result.masses[c] };
            push_branch(&mut tree, centroid, mass);
        }
    }
    Ok(tree)
}
