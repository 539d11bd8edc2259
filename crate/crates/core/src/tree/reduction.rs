//! Backward scenario reduction and the stagewise reduced tree.

use super::{ScenarioMatrix, ScenarioTree, TreeError};

/// Greedy backward reduction over a set of weighted points.
///
/// Repeatedly deletes the kept point `i` minimizing `mass_i * d(i, nearest
/// kept)` and hands its mass (and everything it already hosts) to that
/// nearest point, as long as the cumulative transport cost stays within
/// `eps` times the largest pairwise distance. Returns the host of every
/// point; kept points host themselves. Ties break towards the lowest index.
pub fn backward_reduction(distance: &[Vec<f64>], probabilities: &[f64], eps: f64) -> Vec<usize> {
    let n = probabilities.len();
    let mut host: Vec<usize> = (0..n).collect();
    if n <= 1 {
        return host;
    }
    let mut mass = probabilities.to_vec();
    let mut kept = vec![true; n];
    let mut n_kept = n;
    let diameter = distance
        .iter()
        .flat_map(|row| row.iter().copied())
        .fold(0.0, f64::max);
    let budget = eps * diameter;
    let mut spent = 0.0;

    let nearest_kept = |i: usize, kept: &[bool]| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in (0..n).filter(|&j| j != i && kept[j]) {
            if distance[i][j] < best.1 {
                best = (j, distance[i][j]);
            }
        }
        best
    };

    while n_kept > 1 {
        let mut choice: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| kept[i]) {
            let (j, d) = nearest_kept(i, &kept);
            let cost = mass[i] * d;
            if choice.map_or(true, |(_, _, c)| cost < c) {
                choice = Some((i, j, cost));
            }
        }
        let (i, j, cost) = choice.expect("at least two kept points");
        if spent + cost > budget {
            break;
        }
        spent += cost;
        kept[i] = false;
        n_kept -= 1;
        mass[j] += mass[i];
        mass[i] = 0.0;
        for h in host.iter_mut().filter(|h| **h == i) {
            *h = j;
        }
    }
    host
}

fn check_tolerance(eps: f64) -> Result<(), TreeError> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(TreeError::InvalidTolerance(eps))
    }
}

/// Groups `members` by host, ordered by host index.
fn bundles(members: &[usize], host: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (local, &m) in members.iter().enumerate() {
        let h = members[host[local]];
        match groups.iter_mut().find(|(k, _)| *k == h) {
            Some((_, g)) => g.push(m),
            None => groups.push((h, vec![m])),
        }
    }
    groups.sort_by_key(|(k, _)| *k);
    groups
}

/// Multistage tree obtained by forward stagewise reduction of the samples.
///
/// `eps_reduction` first thins the sample set on whole trajectories (sup
/// distance over stages; skipped when zero). Then, stage by stage, the
/// scenarios sharing a node are reduced on their value at that stage with
/// tolerance `eps_construction`: each surviving scenario opens a child
/// carrying its own value and the mass of the scenarios it absorbed, and
/// absorbed scenarios follow it while keeping their own later values.
pub fn reduce_to_tree(
    samples: &ScenarioMatrix,
    root_value: f64,
    eps_construction: f64,
    eps_reduction: f64,
) -> Result<ScenarioTree, TreeError> {
    check_tolerance(eps_construction)?;
    check_tolerance(eps_reduction)?;
    let rows = samples.rows();
    let horizon = samples.horizon();
    let mut mass = samples.probabilities().to_vec();
    let mut tree = ScenarioTree::root_only(root_value);
    if horizon == 0 {
        return Ok(tree);
    }

    let mut survivors: Vec<usize> = (0..rows.len()).collect();
    if eps_reduction > 0.0 {
        let distance: Vec<Vec<f64>> = rows
            .iter()
            .map(|a| {
                rows.iter()
                    .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
                    .collect()
            })
            .collect();
        let host = backward_reduction(&distance, &mass, eps_reduction);
        let mut reduced = vec![0.0; rows.len()];
        for (i, &h) in host.iter().enumerate() {
            reduced[h] += mass[i];
        }
        mass = reduced;
        survivors.retain(|&i| host[i] == i);
    }

    let mut frontier: Vec<(usize, Vec<usize>)> = vec![(0, survivors)];
    for t in 0..horizon {
        let mut next = Vec::new();
        for (node, members) in frontier {
            let distance: Vec<Vec<f64>> = members
                .iter()
                .map(|&a| members.iter().map(|&b| (rows[a][t] - rows[b][t]).abs()).collect())
                .collect();
            let probs: Vec<f64> = members.iter().map(|&m| mass[m]).collect();
            let host = backward_reduction(&distance, &probs, eps_construction);
            let groups = bundles(&members, &host);
            let whole = groups.len() == 1;
            for (kept, group) in groups {
                let p = if whole {
                    tree.node(node).probability
                } else {
                    group.iter().map(|&m| mass[m]).sum()
                };
                let child = tree.push_child(node, rows[kept][t], p);
                next.push((child, group));
            }
        }
        frontier = next;
    }
    Ok(tree)
}
