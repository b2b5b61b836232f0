//! Candidate generation strategies: the spectral pipeline plus the
//! clustering, graph-ranking, embedding-threshold, and direct-LLM
//! baselines. Every strategy returns a subset of the context pool,
//! ordered by pool index.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{bindings, EmbeddingVector, Gateway};
use crate::kg::Entity;

use super::affinity::{build_affinity, laplacian, relation_weights};
use super::dbscan::{cluster_rows, default_eps, ClusterPartition};
use super::leiden::leiden_communities;
use super::pool::{embedding_text, ContextPool};
use super::select::{select_clusters, SelectMode, DEFAULT_SCORE_DELTA};
use super::spectral::{choose_m, smallest_eigenvectors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Spectral,
    Dbscan,
    Kmeans,
    Pagerank,
    Leiden,
    Embedding,
    LlmDirect,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Spectral,
        Strategy::Dbscan,
        Strategy::Kmeans,
        Strategy::Pagerank,
        Strategy::Leiden,
        Strategy::Embedding,
        Strategy::LlmDirect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Spectral => "spectral",
            Strategy::Dbscan => "dbscan",
            Strategy::Kmeans => "kmeans",
            Strategy::Pagerank => "pagerank",
            Strategy::Leiden => "leiden",
            Strategy::Embedding => "embedding",
            Strategy::LlmDirect => "llm_direct",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "spectral" => Ok(Strategy::Spectral),
            "dbscan" => Ok(Strategy::Dbscan),
            "kmeans" => Ok(Strategy::Kmeans),
            "pagerank" => Ok(Strategy::Pagerank),
            "leiden" => Ok(Strategy::Leiden),
            "embedding" => Ok(Strategy::Embedding),
            "llm_direct" => Ok(Strategy::LlmDirect),
            other => Err(Error::Parameter(format!(
                "unknown candidate strategy `{other}`"
            ))),
        }
    }
}

/// Tunable knobs for candidate generation; all have serde defaults so a
/// sparse manifest entry works.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    #[serde(default)]
    pub strategy: Strategy,
    /// Chunk window radius used when building the context pool.
    #[serde(default = "default_window_radius")]
    pub window_radius: usize,
    /// DBSCAN neighborhood radius; data-adaptive when unset.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_min_pts")]
    pub min_pts: usize,
    /// Number of eigenvectors (spectral) or centroids (kmeans); the √n
    /// rule applies when unset.
    #[serde(default)]
    pub m_override: Option<usize>,
    /// Cosine threshold for the embedding strategy (inclusive).
    #[serde(default = "default_sim_threshold")]
    pub sim_threshold: f64,
    #[serde(default)]
    pub select_mode: SelectMode,
    /// Clusters scoring within this delta of the best are all selected.
    #[serde(default = "default_score_delta")]
    pub score_delta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_window_radius() -> usize {
    1
}

fn default_min_pts() -> usize {
    2
}

fn default_sim_threshold() -> f64 {
    0.5
}

fn default_score_delta() -> f64 {
    DEFAULT_SCORE_DELTA
}

impl Default for CandidateParams {
    fn default() -> Self {
        CandidateParams {
            strategy: Strategy::default(),
            window_radius: default_window_radius(),
            eps: None,
            min_pts: default_min_pts(),
            m_override: None,
            sim_threshold: default_sim_threshold(),
            select_mode: SelectMode::default(),
            score_delta: default_score_delta(),
            seed: 0,
        }
    }
}

/// Generate alignment candidates for one visual entity. Always returns a
/// subset of the pool, plus any diagnostics collected along the way.
pub fn generate_candidates(
    gateway: &Gateway,
    visual_entity: &Entity,
    visual_embedding: &EmbeddingVector,
    pool: &ContextPool,
    params: &CandidateParams,
) -> Result<(Vec<Entity>, Vec<String>)> {
    if pool.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut diagnostics = Vec::new();
    let indices = match params.strategy {
        Strategy::Embedding => embedding_indices(visual_embedding, pool, params.sim_threshold),
        Strategy::LlmDirect => llm_direct_indices(gateway, visual_entity, pool)?,
        Strategy::Spectral => {
            let weights = relation_weights(gateway, pool)?;
            let (affinity, mut affinity_diags) = build_affinity(pool, &weights);
            diagnostics.append(&mut affinity_diags);
            let (_, l) = laplacian(&affinity);
            let m = resolve_m(params.m_override, pool.len())?;
            let embedding = smallest_eigenvectors(&l, m)?;
            let eps = params.eps.unwrap_or_else(|| default_eps(&embedding.q));
            let partition = cluster_rows(&embedding.q, eps, params.min_pts);
            selected_union(
                gateway,
                visual_entity,
                visual_embedding,
                pool,
                &partition,
                params,
                &mut diagnostics,
            )?
        }
        Strategy::Dbscan => {
            let rows = embedding_rows(pool);
            let eps = params.eps.unwrap_or_else(|| default_eps(&rows));
            let partition = cluster_rows(&rows, eps, params.min_pts);
            selected_union(
                gateway,
                visual_entity,
                visual_embedding,
                pool,
                &partition,
                params,
                &mut diagnostics,
            )?
        }
        Strategy::Kmeans => {
            let rows = embedding_rows(pool);
            let k = resolve_m(params.m_override, pool.len())?;
            let partition = ClusterPartition {
                clusters: kmeans_clusters(&rows, k, params.seed),
                noise: Vec::new(),
            };
            selected_union(
                gateway,
                visual_entity,
                visual_embedding,
                pool,
                &partition,
                params,
                &mut diagnostics,
            )?
        }
        Strategy::Pagerank => pagerank_indices(gateway, visual_embedding, pool)?,
        Strategy::Leiden => leiden_indices(gateway, visual_embedding, pool)?,
    };
    let entities = indices.iter().map(|&i| pool.entity(i).clone()).collect();
    Ok((entities, diagnostics))
}

fn resolve_m(m_override: Option<usize>, pool_size: usize) -> Result<usize> {
    match m_override {
        Some(m) if m >= 1 && m <= pool_size => Ok(m),
        Some(m) => Err(Error::Parameter(format!(
            "m override {m} is outside 1..={pool_size} for this pool"
        ))),
        None => Ok(choose_m(pool_size)),
    }
}

/// Pool embeddings stacked as matrix rows.
fn embedding_rows(pool: &ContextPool) -> DMatrix<f64> {
    let n = pool.len();
    let dim = pool.embedding(0).dim();
    DMatrix::from_fn(n, dim, |i, j| pool.embedding(i).values[j])
}

/// Union of the selected clusters; when everything is noise (or selection
/// comes back empty) fall back to the nearest quarter of the pool.
#[allow(clippy::too_many_arguments)]
fn selected_union(
    gateway: &Gateway,
    visual_entity: &Entity,
    visual_embedding: &EmbeddingVector,
    pool: &ContextPool,
    partition: &ClusterPartition,
    params: &CandidateParams,
    diagnostics: &mut Vec<String>,
) -> Result<Vec<usize>> {
    let (selected, mut select_diags) = select_clusters(
        gateway,
        visual_entity,
        visual_embedding,
        pool,
        partition,
        params.select_mode,
        params.score_delta,
    )?;
    diagnostics.append(&mut select_diags);
    let mut indices: Vec<usize> = selected
        .iter()
        .flat_map(|&c| partition.clusters[c].iter().copied())
        .collect();
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() {
        diagnostics.push(format!(
            "{}: no cluster survived selection; falling back to the nearest entities",
            visual_entity.name
        ));
        return Ok(fallback_nearest(visual_embedding, pool));
    }
    Ok(indices)
}

/// The ⌈n/4⌉ pool entities most cosine-similar to the visual entity.
fn fallback_nearest(visual: &EmbeddingVector, pool: &ContextPool) -> Vec<usize> {
    let k = pool.len().div_ceil(4);
    let mut ranked: Vec<(usize, f64)> = (0..pool.len())
        .map(|i| (i, visual.cosine(pool.embedding(i))))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut chosen: Vec<usize> = ranked.into_iter().take(k).map(|(i, _)| i).collect();
    chosen.sort_unstable();
    chosen
}

fn most_similar(visual: &EmbeddingVector, pool: &ContextPool) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..pool.len() {
        let score = visual.cosine(pool.embedding(i));
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

fn embedding_indices(visual: &EmbeddingVector, pool: &ContextPool, threshold: f64) -> Vec<usize> {
    (0..pool.len())
        .filter(|&i| visual.cosine(pool.embedding(i)) >= threshold)
        .collect()
}

fn llm_direct_indices(
    gateway: &Gateway,
    visual_entity: &Entity,
    pool: &ContextPool,
) -> Result<Vec<usize>> {
    let pool_lines: Vec<String> = pool
        .entities
        .iter()
        .map(|(e, _)| format!("- {}: {}", e.name, e.description))
        .collect();
    let reply = gateway.chat(
        "llm_direct_candidates",
        &bindings([
            ("visual_entity", embedding_text(visual_entity).as_str()),
            ("pool", pool_lines.join("\n").as_str()),
        ]),
    )?;
    if reply.trim().eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut indices: Vec<usize> = reply
        .split(['\n', ',', ';'])
        .filter_map(|part| {
            let name =
                part.trim_matches(|c: char| c.is_whitespace() || "-*\"'.()".contains(c));
            if name.is_empty() {
                None
            } else {
                pool.index_of(name)
            }
        })
        .collect();
    indices.sort_unstable();
    indices.dedup();
    Ok(indices)
}

/// Lloyd's algorithm with seeded initialization. Empty clusters are
/// dropped, so the surviving centroids always cover every point.
pub fn kmeans_clusters(rows: &DMatrix<f64>, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = rows.nrows();
    let k = k.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let mut centroids: Vec<Vec<f64>> = picks
        .iter()
        .map(|&i| rows.row(i).iter().copied().collect())
        .collect();

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for _ in 0..100 {
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); centroids.len()];
        for point in 0..n {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist: f64 = centroid
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (rows[(point, j)] - v).powi(2))
                    .sum();
                if dist < best_dist {
                    best = c;
                    best_dist = dist;
                }
            }
            assigned[best].push(point);
        }
        assigned.retain(|members| !members.is_empty());
        let next_centroids: Vec<Vec<f64>> = assigned
            .iter()
            .map(|members| {
                let mut mean = vec![0.0; rows.ncols()];
                for &point in members {
                    for (j, slot) in mean.iter_mut().enumerate() {
                        *slot += rows[(point, j)];
                    }
                }
                mean.iter_mut().for_each(|v| *v /= members.len() as f64);
                mean
            })
            .collect();
        let converged = assigned == clusters;
        clusters = assigned;
        centroids = next_centroids;
        if converged {
            break;
        }
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Relation edges mapped to pool indices, weighted by the affinity matrix.
fn relation_edges(gateway: &Gateway, pool: &ContextPool) -> Result<Vec<(usize, usize, f64)>> {
    let weights = relation_weights(gateway, pool)?;
    let (affinity, _) = build_affinity(pool, &weights);
    let mut seen = std::collections::BTreeSet::new();
    let mut edges = Vec::new();
    for relation in &pool.relations {
        let (Some(p), Some(q)) = (
            pool.index_of(&relation.source),
            pool.index_of(&relation.target),
        ) else {
            continue;
        };
        let key = (p.min(q), p.max(q));
        if key.0 != key.1 && seen.insert(key) {
            edges.push((key.0, key.1, affinity.matrix[key]));
        }
    }
    Ok(edges)
}

/// Personalized PageRank restarted at `seed`: damping 0.85, dangling mass
/// returned to the seed, iterated to a 1e-12 L1 fixpoint.
pub fn personalized_pagerank(n: usize, edges: &[(usize, usize, f64)], seed: usize) -> Vec<f64> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in edges {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let out_weight: Vec<f64> = adj
        .iter()
        .map(|list| list.iter().map(|(_, w)| w).sum())
        .collect();
    let damping = 0.85;
    let mut rank = vec![0.0; n];
    rank[seed] = 1.0;
    for _ in 0..200 {
        let mut next = vec![0.0; n];
        let mut dangling = 0.0;
        for i in 0..n {
            if out_weight[i] <= 0.0 {
                dangling += rank[i];
                continue;
            }
            for &(j, w) in &adj[i] {
                next[j] += damping * rank[i] * w / out_weight[i];
            }
        }
        next[seed] += (1.0 - damping) + damping * dangling;
        let delta: f64 = next
            .iter()
            .zip(&rank)
            .map(|(a, b)| (a - b).abs())
            .sum();
        rank = next;
        if delta < 1e-12 {
            break;
        }
    }
    rank
}

fn pagerank_indices(
    gateway: &Gateway,
    visual: &EmbeddingVector,
    pool: &ContextPool,
) -> Result<Vec<usize>> {
    let edges = relation_edges(gateway, pool)?;
    let seed = most_similar(visual, pool);
    let rank = personalized_pagerank(pool.len(), &edges, seed);
    let k = pool.len().div_ceil(4);
    let mut ranked: Vec<(usize, f64)> = rank
        .into_iter()
        .enumerate()
        .filter(|(_, r)| *r > 1e-15)
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut chosen: Vec<usize> = ranked.into_iter().take(k).map(|(i, _)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

fn leiden_indices(
    gateway: &Gateway,
    visual: &EmbeddingVector,
    pool: &ContextPool,
) -> Result<Vec<usize>> {
    let edges = relation_edges(gateway, pool)?;
    let seed = most_similar(visual, pool);
    let communities = leiden_communities(pool.len(), &edges);
    Ok(communities
        .into_iter()
        .find(|c| c.contains(&seed))
        .unwrap_or_else(|| vec![seed]))
}
