//! Context entity pools: the textual entities eligible as alignment
//! candidates for one image, drawn from a window of neighbouring chunks.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::gateway::{EmbeddingVector, Gateway};
use crate::kg::store::TextChunkStore;
use crate::kg::{canonical_name, Entity, ImageRecord, KnowledgeGraph, Relation};

/// The text rendered for an entity when it is embedded.
pub fn embedding_text(entity: &Entity) -> String {
    format!("{}: {}", entity.name, entity.description)
}

/// Textual entities in the chunk window around one image, with their
/// embeddings and the relations among them.
#[derive(Debug, Clone)]
pub struct ContextPool {
    pub entities: Vec<(Entity, EmbeddingVector)>,
    /// Inclusive chunk order-index window the pool was drawn from.
    pub chunk_window: (usize, usize),
    /// Relations whose endpoints are both in the pool.
    pub relations: Vec<Relation>,
}

impl ContextPool {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let canonical = canonical_name(name);
        self.entities.iter().position(|(e, _)| e.name == canonical)
    }

    pub fn entity(&self, index: usize) -> &Entity {
        &self.entities[index].0
    }

    pub fn embedding(&self, index: usize) -> &EmbeddingVector {
        &self.entities[index].1
    }

    pub fn names(&self) -> Vec<&str> {
        self.entities.iter().map(|(e, _)| e.name.as_str()).collect()
    }
}

/// Collect the entities sourced from chunks with order index in
/// `[j − r, j + r]` (clamped at document boundaries), where `j` is the
/// image's chunk order index.
pub fn context_entity_pool(
    gateway: &Gateway,
    text_kg: &KnowledgeGraph,
    chunks: &TextChunkStore,
    image: &ImageRecord,
    window_radius: usize,
) -> Result<ContextPool> {
    let max_order = chunks
        .values()
        .map(|c| c.order_index)
        .max()
        .ok_or_else(|| Error::Validation("chunk store is empty".into()))?;
    let j = image.chunk_order_index;
    if j > max_order {
        return Err(Error::Validation(format!(
            "{} references chunk order index {j}, but the document has only {} chunks",
            image.key(),
            max_order + 1
        )));
    }
    let lo = j.saturating_sub(window_radius);
    let hi = (j + window_radius).min(max_order);
    let window_ids: HashSet<&str> = chunks
        .values()
        .filter(|c| (lo..=hi).contains(&c.order_index))
        .map(|c| c.chunk_id.as_str())
        .collect();

    let members: Vec<Entity> = text_kg
        .entities()
        .filter(|e| {
            e.source_chunk_ids
                .iter()
                .any(|id| window_ids.contains(id.as_str()))
        })
        .cloned()
        .collect();

    let embeddings = if members.is_empty() {
        Vec::new()
    } else {
        let texts: Vec<String> = members.iter().map(embedding_text).collect();
        gateway.embed(&texts)?
    };

    let names: HashSet<&str> = members.iter().map(|e| e.name.as_str()).collect();
    let relations: Vec<Relation> = text_kg
        .relations()
        .iter()
        .filter(|r| names.contains(r.source.as_str()) && names.contains(r.target.as_str()))
        .cloned()
        .collect();

    Ok(ContextPool {
        entities: members.into_iter().zip(embeddings).collect(),
        chunk_window: (lo, hi),
        relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::kg::store::TextChunkStore;
    use crate::kg::{GraphKind, Modality, TextChunk};

    fn chunk_store(count: usize) -> TextChunkStore {
        let mut store = TextChunkStore::new();
        for i in 0..count {
            let id = format!("c{i}");
            store.insert(
                id.clone(),
                TextChunk {
                    chunk_id: id,
                    order_index: i,
                    content: format!("chunk {i}"),
                    token_count: 3,
                },
            );
        }
        store
    }

    fn image_at(order: usize) -> ImageRecord {
        ImageRecord {
            image_id: 1,
            image_path: "image_1.jpg".into(),
            caption: vec![],
            footnote: vec![],
            context: String::new(),
            chunk_order_index: order,
            chunk_id: format!("c{order}"),
            description: "an image".into(),
            segmentation: false,
            feature_blocks: vec![],
        }
    }

    fn entity_in_chunks(name: &str, chunk_ids: &[&str]) -> Entity {
        Entity::new(name, "concept", "d", Modality::Text).with_sources(chunk_ids)
    }

    fn gateway() -> Gateway {
        Gateway::new(Box::new(MockBackend::new(0)))
    }

    #[test]
    fn window_spans_adjacent_chunks() {
        let chunks = chunk_store(10);
        let mut kg = KnowledgeGraph::new(GraphKind::TextKg);
        kg.upsert_entity(entity_in_chunks("IN2", &["c2"])).unwrap();
        kg.upsert_entity(entity_in_chunks("IN3", &["c3"])).unwrap();
        kg.upsert_entity(entity_in_chunks("IN4", &["c4"])).unwrap();
        kg.upsert_entity(entity_in_chunks("OUT5", &["c5"])).unwrap();
        let pool = context_entity_pool(&gateway(), &kg, &chunks, &image_at(3), 1).unwrap();
        assert_eq!(pool.chunk_window, (2, 4));
        assert_eq!(pool.names(), vec!["IN2", "IN3", "IN4"]);
    }

    #[test]
    fn window_clamps_at_document_start() {
        let chunks = chunk_store(5);
        let mut kg = KnowledgeGraph::new(GraphKind::TextKg);
        kg.upsert_entity(entity_in_chunks("A", &["c0"])).unwrap();
        kg.upsert_entity(entity_in_chunks("B", &["c1"])).unwrap();
        kg.upsert_entity(entity_in_chunks("C", &["c2"])).unwrap();
        let pool = context_entity_pool(&gateway(), &kg, &chunks, &image_at(0), 1).unwrap();
        assert_eq!(pool.chunk_window, (0, 1));
        assert_eq!(pool.names(), vec!["A", "B"]);
    }

    #[test]
    fn entity_outside_window_is_excluded() {
        let chunks = chunk_store(10);
        let mut kg = KnowledgeGraph::new(GraphKind::TextKg);
        kg.upsert_entity(entity_in_chunks("FAR", &["c1", "c5"]))
            .unwrap();
        let pool = context_entity_pool(&gateway(), &kg, &chunks, &image_at(3), 1).unwrap();
        assert!(pool.is_empty());
    }

    #[test]
    fn relations_are_restricted_to_pool_members() {
        let chunks = chunk_store(4);
        let mut kg = KnowledgeGraph::new(GraphKind::TextKg);
        kg.upsert_entity(entity_in_chunks("A", &["c1"])).unwrap();
        kg.upsert_entity(entity_in_chunks("B", &["c1"])).unwrap();
        kg.upsert_entity(entity_in_chunks("FAR", &["c3"])).unwrap();
        kg.add_relation(Relation::new("A", "B", "near", 5.0)).unwrap();
        kg.add_relation(Relation::new("A", "FAR", "far", 5.0)).unwrap();
        let pool = context_entity_pool(&gateway(), &kg, &chunks, &image_at(1), 1).unwrap();
        assert_eq!(pool.names(), vec!["A", "B"]);
        assert_eq!(pool.relations.len(), 1);
        assert_eq!(pool.relations[0].description, "near");
    }

    #[test]
    fn out_of_range_image_index_is_rejected() {
        let chunks = chunk_store(3);
        let kg = KnowledgeGraph::new(GraphKind::TextKg);
        assert!(matches!(
            context_entity_pool(&gateway(), &kg, &chunks, &image_at(7), 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn embeddings_are_attached_per_entity() {
        let chunks = chunk_store(2);
        let mut kg = KnowledgeGraph::new(GraphKind::TextKg);
        kg.upsert_entity(entity_in_chunks("A", &["c0"])).unwrap();
        let pool = context_entity_pool(&gateway(), &kg, &chunks, &image_at(0), 1).unwrap();
        assert_eq!(pool.len(), 1);
        assert!((pool.embedding(0).norm() - 1.0).abs() < 1e-9);
    }
}
