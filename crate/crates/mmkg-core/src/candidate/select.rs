//! Choosing which clusters contribute candidates: cosine scoring against
//! the visual entity, or an LLM pick over cluster summaries.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gateway::{bindings, EmbeddingVector, Gateway};
use crate::kg::Entity;

use super::dbscan::ClusterPartition;
use super::pool::{embedding_text, ContextPool};

pub const DEFAULT_SCORE_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    #[default]
    Knn,
    Llm,
}

impl std::str::FromStr for SelectMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "knn" => Ok(SelectMode::Knn),
            "llm" => Ok(SelectMode::Llm),
            other => Err(crate::error::Error::Parameter(format!(
                "unknown selection mode `{other}`; expected knn or llm"
            ))),
        }
    }
}

/// Mean cosine between the visual embedding and each cluster's members.
pub fn cluster_scores(
    visual: &EmbeddingVector,
    pool: &ContextPool,
    partition: &ClusterPartition,
) -> Vec<f64> {
    partition
        .clusters
        .iter()
        .map(|members| {
            let total: f64 = members
                .iter()
                .map(|&i| visual.cosine(pool.embedding(i)))
                .sum();
            total / members.len() as f64
        })
        .collect()
}

/// All clusters scoring within `delta` of the best, ascending by index.
pub fn select_clusters_knn(
    visual: &EmbeddingVector,
    pool: &ContextPool,
    partition: &ClusterPartition,
    delta: f64,
) -> Vec<usize> {
    let scores = cluster_scores(visual, pool, partition);
    let Some(best) = scores
        .iter()
        .copied()
        .max_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
    else {
        return Vec::new();
    };
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s >= best - delta)
        .map(|(i, _)| i)
        .collect()
}

/// Cluster ids named in an LLM reply: whitespace/comma tokens that parse
/// as indices into the partition, deduplicated ascending.
fn parse_cluster_ids(reply: &str, cluster_count: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = reply
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter_map(|token| {
            token
                .trim_matches(|c: char| !c.is_ascii_digit())
                .parse::<usize>()
                .ok()
        })
        .filter(|&id| id < cluster_count)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Select clusters by the configured mode. The llm mode makes one chat
/// call over cluster summaries and falls back to knn scoring (with a
/// diagnostic) when the reply names no valid cluster.
pub fn select_clusters(
    gateway: &Gateway,
    visual_entity: &Entity,
    visual_embedding: &EmbeddingVector,
    pool: &ContextPool,
    partition: &ClusterPartition,
    mode: SelectMode,
    delta: f64,
) -> Result<(Vec<usize>, Vec<String>)> {
    if partition.clusters.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    match mode {
        SelectMode::Knn => Ok((
            select_clusters_knn(visual_embedding, pool, partition, delta),
            Vec::new(),
        )),
        SelectMode::Llm => {
            let summaries: Vec<String> = partition
                .clusters
                .iter()
                .enumerate()
                .map(|(i, members)| {
                    let names: Vec<&str> =
                        members.iter().map(|&m| pool.entity(m).name.as_str()).collect();
                    format!("Cluster {i}: {}", names.join(", "))
                })
                .collect();
            let reply = gateway.chat(
                "cluster_select",
                &bindings([
                    ("visual_entity", embedding_text(visual_entity).as_str()),
                    ("clusters", summaries.join("\n").as_str()),
                ]),
            )?;
            let ids = parse_cluster_ids(&reply, partition.clusters.len());
            if ids.is_empty() {
                let fallback = select_clusters_knn(visual_embedding, pool, partition, delta);
                return Ok((
                    fallback,
                    vec![format!(
                        "{}: cluster selection reply named no valid cluster; using cosine scoring",
                        visual_entity.name
                    )],
                ));
            }
            Ok((ids, Vec::new()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::pool::ContextPool;
    use crate::gateway::{MockBackend, MockScript, ReplyRule};
    use crate::kg::Modality;

    fn unit(angle: f64) -> EmbeddingVector {
        EmbeddingVector {
            values: vec![angle.cos(), angle.sin()],
        }
    }

    fn pool_with_vectors(vectors: Vec<EmbeddingVector>) -> ContextPool {
        ContextPool {
            entities: vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| (Entity::new(&format!("E{i}"), "t", "d", Modality::Text), v))
                .collect(),
            chunk_window: (0, 0),
            relations: Vec::new(),
        }
    }

    fn visual() -> Entity {
        Entity::new("VIS", "object", "a visual entity", Modality::ImageLocal)
    }

    #[test]
    fn dominant_cluster_is_selected_alone() {
        let pool = pool_with_vectors(vec![unit(0.0), unit(0.0), unit(1.57), unit(1.57)]);
        let partition = ClusterPartition {
            clusters: vec![vec![0, 1], vec![2, 3]],
            noise: vec![],
        };
        let selected = select_clusters_knn(&unit(0.0), &pool, &partition, 0.05);
        assert_eq!(selected, vec![0]);
    }

    #[test]
    fn equal_scores_tie_and_both_are_returned() {
        let pool = pool_with_vectors(vec![unit(0.5), unit(-0.5), unit(0.5), unit(-0.5)]);
        let partition = ClusterPartition {
            clusters: vec![vec![0, 1], vec![2, 3]],
            noise: vec![],
        };
        let selected = select_clusters_knn(&unit(0.0), &pool, &partition, 0.05);
        assert_eq!(selected, vec![0, 1]);
    }

    #[test]
    fn hand_computed_mean_scores_select_only_best() {
        // Cluster mean cosines vs the visual vector: 0.9, 0.6, 0.2.
        let cos_to = |c: f64| unit(c.acos());
        let pool = pool_with_vectors(vec![
            cos_to(0.9),
            cos_to(0.6),
            cos_to(0.2),
        ]);
        let partition = ClusterPartition {
            clusters: vec![vec![0], vec![1], vec![2]],
            noise: vec![],
        };
        let scores = cluster_scores(&unit(0.0), &pool, &partition);
        assert!((scores[0] - 0.9).abs() < 1e-9);
        assert!((scores[1] - 0.6).abs() < 1e-9);
        assert!((scores[2] - 0.2).abs() < 1e-9);
        let selected = select_clusters_knn(&unit(0.0), &pool, &partition, 0.05);
        assert_eq!(selected, vec![0]);
    }

    #[test]
    fn llm_mode_uses_scripted_cluster_choice() {
        let pool = pool_with_vectors(vec![unit(0.0), unit(1.0)]);
        let partition = ClusterPartition {
            clusters: vec![vec![0], vec![1]],
            noise: vec![],
        };
        let script = MockScript {
            replies: vec![ReplyRule {
                template_id: Some("cluster_select".into()),
                reply: "Cluster 1".into(),
                ..ReplyRule::default()
            }],
            ..MockScript::default()
        };
        let gateway = Gateway::new(Box::new(MockBackend::with_script(0, script)));
        let (selected, diagnostics) = select_clusters(
            &gateway,
            &visual(),
            &unit(0.0),
            &pool,
            &partition,
            SelectMode::Llm,
            0.05,
        )
        .unwrap();
        assert_eq!(selected, vec![1]);
        assert!(diagnostics.is_empty());
    }

    #[test]
    fn invalid_llm_reply_falls_back_to_knn() {
        let pool = pool_with_vectors(vec![unit(0.0), unit(1.0)]);
        let partition = ClusterPartition {
            clusters: vec![vec![0], vec![1]],
            noise: vec![],
        };
        let script = MockScript {
            replies: vec![ReplyRule {
                template_id: Some("cluster_select".into()),
                reply: "neither looks right".into(),
                ..ReplyRule::default()
            }],
            ..MockScript::default()
        };
        let gateway = Gateway::new(Box::new(MockBackend::with_script(0, script)));
        let (selected, diagnostics) = select_clusters(
            &gateway,
            &visual(),
            &unit(0.0),
            &pool,
            &partition,
            SelectMode::Llm,
            0.05,
        )
        .unwrap();
        assert_eq!(selected, vec![0]);
        assert_eq!(diagnostics.len(), 1);
    }

    #[test]
    fn out_of_range_ids_are_ignored() {
        assert_eq!(parse_cluster_ids("9, 1, 0, 9", 2), vec![0, 1]);
        // A hash-shaped reply has no token that parses as an id.
        assert_eq!(parse_cluster_ids("MOCK-REPLY-a3f2", 4), Vec::<usize>::new());
    }
}
