//! The weighted adjacency matrix over a context pool: cosine similarity
//! scaled by relation importance, and the Laplacian derived from it.

use indexmap::IndexMap;
use nalgebra::DMatrix;

use crate::error::Result;
use crate::gateway::{bindings, Gateway};

use super::pool::ContextPool;

/// Symmetric nonnegative entity-affinity matrix with its index↔name map.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.names.len()
    }
}

/// Ask the model to rate each pool relation's importance on [1, 10].
///
/// An unparseable reply falls back to the stored relation strength when
/// that is itself in [1, 10], else to 1. Parallel relations over the same
/// ordered pair are averaged.
pub fn relation_weights(
    gateway: &Gateway,
    pool: &ContextPool,
) -> Result<IndexMap<(usize, usize), f64>> {
    let mut sums: IndexMap<(usize, usize), (f64, usize)> = IndexMap::new();
    for relation in &pool.relations {
        let (Some(p), Some(q)) = (
            pool.index_of(&relation.source),
            pool.index_of(&relation.target),
        ) else {
            continue;
        };
        let reply = gateway.chat(
            "relation_weight",
            &bindings([
                ("source", relation.source.as_str()),
                ("target", relation.target.as_str()),
                ("description", relation.description.as_str()),
            ]),
        )?;
        let weight = parse_weight(&reply).unwrap_or_else(|| {
            if (1.0..=10.0).contains(&relation.strength) {
                relation.strength
            } else {
                1.0
            }
        });
        let slot = sums.entry((p, q)).or_insert((0.0, 0));
        slot.0 += weight;
        slot.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(key, (sum, count))| (key, sum / count as f64))
        .collect())
}

/// First whitespace/comma token that parses as a number; `None` when no
/// token parses or the value is outside [1, 10].
pub fn parse_weight(reply: &str) -> Option<f64> {
    for token in reply.split(|c: char| c.is_whitespace() || c == ',') {
        let trimmed = token.trim_matches(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'));
        if trimmed.is_empty() {
            continue;
        }
        if let Ok(value) = trimmed.parse::<f64>() {
            return (1.0..=10.0).contains(&value).then_some(value);
        }
    }
    None
}

/// A_pq = clamp(cos(v_p, v_q), 0, 1) × weight(r_pq); weight 1 without a
/// relation, averaged when the two directions carry different weights.
/// The diagonal is 0. Zero-norm embeddings produce zero rows plus a
/// diagnostic.
pub fn build_affinity(
    pool: &ContextPool,
    weights: &IndexMap<(usize, usize), f64>,
) -> (AffinityMatrix, Vec<String>) {
    let n = pool.len();
    let mut diagnostics = Vec::new();
    for (entity, embedding) in &pool.entities {
        if embedding.norm() == 0.0 {
            diagnostics.push(format!(
                "{} has a zero-norm embedding; its affinities are 0",
                entity.name
            ));
        }
    }
    let mut matrix = DMatrix::zeros(n, n);
    for p in 0..n {
        for q in (p + 1)..n {
            let cosine = pool.embedding(p).cosine(pool.embedding(q)).clamp(0.0, 1.0);
            let weight = match (weights.get(&(p, q)), weights.get(&(q, p))) {
                (Some(a), Some(b)) => (a + b) / 2.0,
                (Some(w), None) | (None, Some(w)) => *w,
                (None, None) => 1.0,
            };
            let value = cosine * weight;
            matrix[(p, q)] = value;
            matrix[(q, p)] = value;
        }
    }
    let names = pool.names().into_iter().map(str::to_string).collect();
    (AffinityMatrix { matrix, names }, diagnostics)
}

/// D_pp = Σ_q A_pq; L = D − A (unnormalized).
pub fn laplacian(affinity: &AffinityMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = affinity.n();
    let mut degree = DMatrix::zeros(n, n);
    for p in 0..n {
        degree[(p, p)] = affinity.matrix.row(p).sum();
    }
    let laplacian = &degree - &affinity.matrix;
    (degree, laplacian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EmbeddingVector, MockBackend, MockScript, ReplyRule};
    use crate::kg::{Entity, Modality, Relation};

    pub(super) fn pool_from_vectors(vectors: &[Vec<f64>]) -> ContextPool {
        let entities = vectors
            .iter()
            .enumerate()
            .map(|(i, values)| {
                (
                    Entity::new(&format!("E{i}"), "concept", "d", Modality::Text),
                    EmbeddingVector {
                        values: values.clone(),
                    },
                )
            })
            .collect();
        ContextPool {
            entities,
            chunk_window: (0, 0),
            relations: Vec::new(),
        }
    }

    fn no_weights() -> IndexMap<(usize, usize), f64> {
        IndexMap::new()
    }

    #[test]
    fn identical_vectors_without_relation_score_one() {
        let pool = pool_from_vectors(&[vec![2.0, 0.0], vec![2.0, 0.0]]);
        let (affinity, _) = build_affinity(&pool, &no_weights());
        assert!((affinity.matrix[(0, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(affinity.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn orthogonal_vectors_score_zero_despite_weight() {
        let pool = pool_from_vectors(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut weights = IndexMap::new();
        weights.insert((0, 1), 7.0);
        let (affinity, _) = build_affinity(&pool, &weights);
        assert_eq!(affinity.matrix[(0, 1)], 0.0);
    }

    #[test]
    fn weighted_oblique_pair_matches_hand_computation() {
        let half_sqrt2 = 0.5_f64 * 2.0_f64.sqrt();
        let pool = pool_from_vectors(&[vec![1.0, 0.0], vec![half_sqrt2, half_sqrt2]]);
        let mut weights = IndexMap::new();
        weights.insert((0, 1), 4.0);
        let (affinity, _) = build_affinity(&pool, &weights);
        let expected = 4.0 * half_sqrt2;
        assert!((affinity.matrix[(0, 1)] - expected).abs() < 1e-12);
        assert!((affinity.matrix[(0, 1)] - 2.8284).abs() < 1e-4);
    }

    #[test]
    fn negative_cosine_clamps_to_zero() {
        let pool = pool_from_vectors(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let (affinity, _) = build_affinity(&pool, &no_weights());
        assert_eq!(affinity.matrix[(0, 1)], 0.0);
    }

    #[test]
    fn zero_norm_embedding_reports_diagnostic() {
        let pool = pool_from_vectors(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let (affinity, diagnostics) = build_affinity(&pool, &no_weights());
        assert_eq!(affinity.matrix[(0, 1)], 0.0);
        assert_eq!(diagnostics.len(), 1);
        assert!(diagnostics[0].contains("E0"));
    }

    #[test]
    fn directional_weights_are_averaged() {
        let pool = pool_from_vectors(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let mut weights = IndexMap::new();
        weights.insert((0, 1), 7.0);
        weights.insert((1, 0), 3.0);
        let (affinity, _) = build_affinity(&pool, &weights);
        assert!((affinity.matrix[(0, 1)] - 5.0).abs() < 1e-12);
        assert_eq!(affinity.matrix[(0, 1)], affinity.matrix[(1, 0)]);
    }

    #[test]
    fn affinity_is_scale_invariant() {
        let vectors = vec![vec![0.3, 1.2, -0.4], vec![1.1, 0.2, 0.5], vec![-0.2, 0.9, 0.8]];
        let scaled: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| v.iter().map(|x| x * 3.7).collect())
            .collect();
        let (a1, _) = build_affinity(&pool_from_vectors(&vectors), &no_weights());
        let (a2, _) = build_affinity(&pool_from_vectors(&scaled), &no_weights());
        let diff = (&a1.matrix - &a2.matrix).abs().max();
        assert!(diff < 1e-12);
    }

    #[test]
    fn laplacian_of_unit_edge() {
        let pool = pool_from_vectors(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let (affinity, _) = build_affinity(&pool, &no_weights());
        let (degree, laplacian) = laplacian(&affinity);
        assert_eq!(degree[(0, 0)], 1.0);
        assert_eq!(degree[(1, 1)], 1.0);
        assert_eq!(laplacian[(0, 0)], 1.0);
        assert_eq!(laplacian[(0, 1)], -1.0);
    }

    #[test]
    fn isolated_node_has_zero_laplacian_row() {
        let pool = pool_from_vectors(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (affinity, _) = build_affinity(&pool, &no_weights());
        let (degree, laplacian) = laplacian(&affinity);
        assert_eq!(degree[(0, 0)], 0.0);
        assert_eq!(laplacian.row(0).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn parse_weight_accepts_plain_and_punctuated_numbers() {
        assert_eq!(parse_weight("7"), Some(7.0));
        assert_eq!(parse_weight("importance: 7."), Some(7.0));
        assert_eq!(parse_weight("I rate this 3.5 out of 10"), Some(3.5));
        assert_eq!(parse_weight("15"), None);
        assert_eq!(parse_weight("MOCK-REPLY-a3f2b9c1"), None);
        assert_eq!(parse_weight("no idea"), None);
    }

    #[test]
    fn invalid_reply_falls_back_to_stored_strength() {
        let mut pool = pool_from_vectors(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        pool.relations
            .push(Relation::new("E0", "E1", "linked", 5.0));
        // Unscripted mock replies never parse as a weight.
        let gateway = Gateway::new(Box::new(MockBackend::new(0)));
        let weights = relation_weights(&gateway, &pool).unwrap();
        assert_eq!(weights.get(&(0, 1)), Some(&5.0));
    }

    #[test]
    fn scripted_weight_reply_is_used() {
        let mut pool = pool_from_vectors(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        pool.relations
            .push(Relation::new("E0", "E1", "linked", 5.0));
        let script = MockScript {
            replies: vec![ReplyRule {
                template_id: Some("relation_weight".into()),
                reply: "9".into(),
                ..ReplyRule::default()
            }],
            ..MockScript::default()
        };
        let gateway = Gateway::new(Box::new(MockBackend::with_script(0, script)));
        let weights = relation_weights(&gateway, &pool).unwrap();
        assert_eq!(weights.get(&(0, 1)), Some(&9.0));
    }

    #[test]
    fn out_of_scale_stored_strength_defaults_to_one() {
        let mut pool = pool_from_vectors(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        pool.relations
            .push(Relation::new("E0", "E1", "linked", 0.0));
        let gateway = Gateway::new(Box::new(MockBackend::new(0)));
        let weights = relation_weights(&gateway, &pool).unwrap();
        assert_eq!(weights.get(&(0, 1)), Some(&1.0));
    }
}
