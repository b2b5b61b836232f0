//! Density-based clustering of the spectral embedding's rows (also used
//! directly on raw embeddings by the clustering baselines).

use std::collections::VecDeque;

use nalgebra::DMatrix;

/// Clusters plus noise over row indices `0..n`. Clusters are ordered by
/// their smallest member; members and noise are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl ClusterPartition {
    /// The cluster index containing `row`, if it is not noise.
    pub fn cluster_of(&self, row: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&row))
    }
}

pub fn row_distance(rows: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (rows.row(a) - rows.row(b)).norm()
}

/// Data-adaptive neighborhood radius: half the median pairwise row
/// distance (0 when there are fewer than two rows).
pub fn default_eps(rows: &DMatrix<f64>) -> f64 {
    let n = rows.nrows();
    let mut distances = Vec::with_capacity(n.saturating_sub(1) * n / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            distances.push(row_distance(rows, a, b));
        }
    }
    if distances.is_empty() {
        return 0.0;
    }
    distances.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let mid = distances.len() / 2;
    let median = if distances.len() % 2 == 1 {
        distances[mid]
    } else {
        (distances[mid - 1] + distances[mid]) / 2.0
    };
    0.5 * median
}

/// Classic sequential DBSCAN over Euclidean distance on the rows.
///
/// A point's eps-neighborhood includes itself; a point is core when the
/// neighborhood has at least `min_pts` members. Border points join the
/// earliest-created cluster that reaches them; unreachable points are
/// noise.
pub fn cluster_rows(rows: &DMatrix<f64>, eps: f64, min_pts: usize) -> ClusterPartition {
    let n = rows.nrows();
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| row_distance(rows, i, j) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut cluster_count = 0;
    for start in 0..n {
        if label[start].is_some() || !core[start] {
            continue;
        }
        let id = cluster_count;
        cluster_count += 1;
        label[start] = Some(id);
        let mut queue: VecDeque<usize> = neighborhoods[start].iter().copied().collect();
        while let Some(next) = queue.pop_front() {
            if label[next].is_some() {
                continue;
            }
            label[next] = Some(id);
            if core[next] {
                queue.extend(neighborhoods[next].iter().copied());
            }
        }
    }

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); cluster_count];
    let mut noise = Vec::new();
    for (i, assigned) in label.iter().enumerate() {
        match assigned {
            Some(id) => clusters[*id].push(i),
            None => noise.push(i),
        }
    }
    clusters.retain(|c| !c.is_empty());
    clusters.sort_by_key(|c| c[0]);
    ClusterPartition { clusters, noise }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, d, |i, j| rows[i][j])
    }

    /// Reference DBSCAN: core points connected by union-find, borders
    /// assigned to the adjacent cluster whose smallest core index is
    /// lowest (the cluster created first by the sequential algorithm).
    pub(crate) fn reference_dbscan(
        rows: &DMatrix<f64>,
        eps: f64,
        min_pts: usize,
    ) -> ClusterPartition {
        let n = rows.nrows();
        let within = |a: usize, b: usize| row_distance(rows, a, b) <= eps;
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| within(i, j)).count() >= min_pts)
            .collect();

        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let root = find(parent, parent[x]);
                parent[x] = root;
            }
            parent[x]
        }
        for a in 0..n {
            for b in (a + 1)..n {
                if core[a] && core[b] && within(a, b) {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }

        // Component id per core point = root; creation order = min core index.
        let mut components: Vec<(usize, Vec<usize>)> = Vec::new();
        for i in 0..n {
            if !core[i] {
                continue;
            }
            let root = find(&mut parent, i);
            match components.iter_mut().find(|(r, _)| *r == root) {
                Some((_, members)) => members.push(i),
                None => components.push((root, vec![i])),
            }
        }
        components.sort_by_key(|(_, members)| members[0]);

        let mut clusters: Vec<Vec<usize>> = components.iter().map(|(_, m)| m.clone()).collect();
        let mut noise = Vec::new();
        for i in 0..n {
            if core[i] {
                continue;
            }
            let adjacent = components
                .iter()
                .position(|(_, members)| members.iter().any(|&c| within(i, c)));
            match adjacent {
                Some(idx) => clusters[idx].push(i),
                None => noise.push(i),
            }
        }
        for cluster in &mut clusters {
            cluster.sort_unstable();
        }
        clusters.sort_by_key(|c| c[0]);
        ClusterPartition { clusters, noise }
    }

    #[test]
    fn two_tight_groups_far_apart() {
        let rows = matrix_from_rows(&[
            vec![0.0, 0.0],
            vec![0.001, 0.0],
            vec![0.0, 0.001],
            vec![10.0, 10.0],
            vec![10.001, 10.0],
            vec![10.0, 10.001],
        ]);
        let partition = cluster_rows(&rows, 0.01, 2);
        assert_eq!(partition.clusters, vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert!(partition.noise.is_empty());
    }

    #[test]
    fn identical_rows_form_one_cluster() {
        let rows = matrix_from_rows(&vec![vec![1.0, 2.0]; 5]);
        let partition = cluster_rows(&rows, default_eps(&rows), 2);
        assert_eq!(partition.clusters, vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn far_outlier_is_noise() {
        let rows = matrix_from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![50.0, 50.0],
        ]);
        let partition = cluster_rows(&rows, 0.2, 2);
        assert_eq!(partition.clusters, vec![vec![0, 1, 2]]);
        assert_eq!(partition.noise, vec![3]);
    }

    #[test]
    fn border_point_joins_earliest_cluster() {
        // Cores at index 1 and 4; index 3 is a border reachable from both
        // and must join the cluster created first (the one seeded at 1).
        let rows = matrix_from_rows(&[
            vec![0.0, 0.0],  // border of cluster 0
            vec![0.5, 0.0],  // core of cluster 0
            vec![-0.5, 0.0], // border of cluster 0
            vec![1.5, 0.0],  // shared border
            vec![2.5, 0.0],  // core of cluster 1
            vec![3.0, 0.0],  // border of cluster 1
            vec![3.5, 0.0],  // border of cluster 1
        ]);
        let partition = cluster_rows(&rows, 1.0, 4);
        assert_eq!(partition.clusters, vec![vec![0, 1, 2, 3], vec![4, 5, 6]]);
        let reference = reference_dbscan(&rows, 1.0, 4);
        assert_eq!(partition, reference);
    }

    #[test]
    fn default_eps_is_half_median_distance() {
        // Distances: 1, 2, 3 → median 2 → eps 1.
        let rows = matrix_from_rows(&[vec![0.0], vec![1.0], vec![3.0]]);
        assert!((default_eps(&rows) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_reference_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..=32);
            let d = rng.gen_range(1..=3);
            let rows = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
            let eps = if rng.gen_bool(0.5) {
                default_eps(&rows)
            } else {
                rng.gen_range(0.05..1.5)
            };
            let min_pts = rng.gen_range(1..=5);
            assert_eq!(
                cluster_rows(&rows, eps, min_pts),
                reference_dbscan(&rows, eps, min_pts)
            );
        }
    }
}
