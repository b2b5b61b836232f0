//! Deterministic Leiden community detection for small weighted graphs:
//! queue-driven local moving, refinement within communities, then
//! aggregation, repeated until the partition stops improving. Ties are
//! broken toward smaller community ids so runs are reproducible.

use std::collections::{BTreeMap, VecDeque};

struct Level {
    n: usize,
    /// Neighbor lists excluding self-loops, sorted by neighbor id.
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    /// Weighted degree: adjacent weights plus twice the self-loop.
    degree: Vec<f64>,
    /// Original node ids folded into each supernode.
    members: Vec<Vec<usize>>,
}

impl Level {
    fn build(
        n: usize,
        edge_weights: BTreeMap<(usize, usize), f64>,
        self_loop: Vec<f64>,
        members: Vec<Vec<usize>>,
    ) -> Level {
        let mut adj = vec![Vec::new(); n];
        for (&(a, b), &w) in &edge_weights {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        for list in &mut adj {
            list.sort_by_key(|(j, _)| *j);
        }
        let degree = (0..n)
            .map(|i| adj[i].iter().map(|(_, w)| w).sum::<f64>() + 2.0 * self_loop[i])
            .collect();
        Level {
            n,
            adj,
            self_loop,
            degree,
            members,
        }
    }

    fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Level {
        let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut self_loop = vec![0.0; n];
        for &(a, b, w) in edges {
            if a == b {
                self_loop[a] += w;
            } else {
                *weights.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
            }
        }
        Level::build(n, weights, self_loop, (0..n).map(|i| vec![i]).collect())
    }

    fn total(&self) -> f64 {
        self.degree.iter().sum()
    }
}

/// Move nodes between communities while any move improves modularity.
/// Returns whether anything moved.
fn local_move(level: &Level, community: &mut [usize]) -> bool {
    let total = level.total();
    if total <= 0.0 {
        return false;
    }
    let mut sigma = vec![0.0; level.n];
    for i in 0..level.n {
        sigma[community[i]] += level.degree[i];
    }
    let mut queue: VecDeque<usize> = (0..level.n).collect();
    let mut queued = vec![true; level.n];
    let mut moved_any = false;
    while let Some(i) = queue.pop_front() {
        queued[i] = false;
        let current = community[i];
        sigma[current] -= level.degree[i];
        let mut k_to: BTreeMap<usize, f64> = BTreeMap::new();
        k_to.insert(current, 0.0);
        for &(j, w) in &level.adj[i] {
            *k_to.entry(community[j]).or_insert(0.0) += w;
        }
        let gain =
            |c: usize, k: f64| k - level.degree[i] * sigma[c] / total;
        let mut best = current;
        let mut best_gain = gain(current, k_to[&current]);
        for (&c, &k) in &k_to {
            let g = gain(c, k);
            if g > best_gain + 1e-12 {
                best = c;
                best_gain = g;
            }
        }
        sigma[best] += level.degree[i];
        if best != current {
            community[i] = best;
            moved_any = true;
            for &(j, _) in &level.adj[i] {
                if community[j] != best && !queued[j] {
                    queue.push_back(j);
                    queued[j] = true;
                }
            }
        }
    }
    moved_any
}

/// Split each community into well-connected subcommunities: nodes start
/// as singletons and each singleton may merge once into the best-gain
/// subcommunity inside its own community.
fn refine(level: &Level, coarse: &[usize]) -> Vec<usize> {
    let total = level.total();
    let mut refined: Vec<usize> = (0..level.n).collect();
    if total <= 0.0 {
        return refined;
    }
    let mut sigma: Vec<f64> = level.degree.clone();
    let mut size = vec![1usize; level.n];
    for i in 0..level.n {
        if size[refined[i]] > 1 {
            continue;
        }
        let mut k_to: BTreeMap<usize, f64> = BTreeMap::new();
        for &(j, w) in &level.adj[i] {
            if coarse[j] == coarse[i] && refined[j] != refined[i] {
                *k_to.entry(refined[j]).or_insert(0.0) += w;
            }
        }
        let mut best = refined[i];
        let mut best_gain = 0.0;
        for (&r, &k) in &k_to {
            let g = k - level.degree[i] * sigma[r] / total;
            if g > best_gain + 1e-12 {
                best = r;
                best_gain = g;
            }
        }
        if best != refined[i] {
            sigma[best] += level.degree[i];
            sigma[refined[i]] -= level.degree[i];
            size[best] += 1;
            size[refined[i]] -= 1;
            refined[i] = best;
        }
    }
    refined
}

/// Collapse refined subcommunities into supernodes; each supernode starts
/// in the community its members held before aggregation.
fn aggregate(level: &Level, refined: &[usize], coarse: &[usize]) -> (Level, Vec<usize>) {
    let mut compact: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..level.n {
        let next = compact.len();
        compact.entry(refined[i]).or_insert(next);
    }
    let groups = compact.len();

    let mut members = vec![Vec::new(); groups];
    let mut self_loop = vec![0.0; groups];
    let mut group_coarse = vec![usize::MAX; groups];
    for i in 0..level.n {
        let g = compact[&refined[i]];
        members[g].extend(level.members[i].iter().copied());
        self_loop[g] += level.self_loop[i];
        group_coarse[g] = coarse[i];
    }
    let mut edge_weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..level.n {
        for &(j, w) in &level.adj[i] {
            if j <= i {
                continue;
            }
            let (gi, gj) = (compact[&refined[i]], compact[&refined[j]]);
            if gi == gj {
                self_loop[gi] += w;
            } else {
                *edge_weights.entry((gi.min(gj), gi.max(gj))).or_insert(0.0) += w;
            }
        }
    }

    let mut coarse_compact: BTreeMap<usize, usize> = BTreeMap::new();
    let community = group_coarse
        .iter()
        .map(|&c| {
            let next = coarse_compact.len();
            *coarse_compact.entry(c).or_insert(next)
        })
        .collect();
    (Level::build(groups, edge_weights, self_loop, members), community)
}

/// Communities over nodes `0..n` of an undirected weighted graph, each
/// sorted ascending and ordered by smallest member. Isolated nodes come
/// out as singleton communities.
pub fn leiden_communities(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let mut level = Level::from_edges(n, edges);
    let mut community: Vec<usize> = (0..level.n).collect();
    for _ in 0..20 {
        if !local_move(&level, &mut community) {
            break;
        }
        let refined = refine(&level, &community);
        let groups = {
            let mut distinct: Vec<usize> = refined.clone();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len()
        };
        if groups == level.n {
            break;
        }
        let (next_level, next_community) = aggregate(&level, &refined, &community);
        level = next_level;
        community = next_community;
    }

    let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..level.n {
        grouped
            .entry(community[i])
            .or_default()
            .extend(level.members[i].iter().copied());
    }
    let mut communities: Vec<Vec<usize>> = grouped.into_values().collect();
    for members in &mut communities {
        members.sort_unstable();
    }
    communities.sort_by_key(|c| c[0]);
    communities
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique_edges(members: &[usize], w: f64) -> Vec<(usize, usize, f64)> {
        let mut edges = Vec::new();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                edges.push((a, b, w));
            }
        }
        edges
    }

    #[test]
    fn two_cliques_with_weak_bridge_split() {
        let mut edges = clique_edges(&[0, 1, 2], 1.0);
        edges.extend(clique_edges(&[3, 4, 5], 1.0));
        edges.push((2, 3, 0.1));
        let communities = leiden_communities(6, &edges);
        assert_eq!(communities, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn strongly_bridged_cliques_merge() {
        let mut edges = clique_edges(&[0, 1], 1.0);
        edges.extend(clique_edges(&[2, 3], 1.0));
        edges.push((1, 2, 10.0));
        let communities = leiden_communities(4, &edges);
        assert_eq!(communities, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn isolated_nodes_stay_singletons() {
        let edges = clique_edges(&[0, 1, 2], 1.0);
        let communities = leiden_communities(5, &edges);
        assert_eq!(communities, vec![vec![0, 1, 2], vec![3], vec![4]]);
    }

    #[test]
    fn no_edges_means_all_singletons() {
        let communities = leiden_communities(3, &[]);
        assert_eq!(communities, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn four_cliques_in_a_ring() {
        let mut edges = Vec::new();
        let cliques: Vec<Vec<usize>> = (0..4).map(|c| (3 * c..3 * c + 3).collect()).collect();
        for members in &cliques {
            edges.extend(clique_edges(members, 1.0));
        }
        for c in 0..4 {
            edges.push((3 * c + 2, (3 * c + 3) % 12, 0.2));
        }
        let communities = leiden_communities(12, &edges);
        assert_eq!(
            communities,
            vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8], vec![9, 10, 11]]
        );
    }

    #[test]
    fn deterministic_across_runs() {
        let mut edges = clique_edges(&[0, 2, 4, 6], 1.0);
        edges.extend(clique_edges(&[1, 3, 5, 7], 1.0));
        edges.push((0, 1, 0.3));
        edges.push((4, 7, 0.3));
        let a = leiden_communities(8, &edges);
        let b = leiden_communities(8, &edges);
        assert_eq!(a, b);
    }
}
