//! Hybrid-granularity retrieval: embed the query, rank entities from the
//! vector database, then widen to their relations (under a token budget),
//! their source chunks, and any images they reach.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::VectorDatabase;
use crate::gateway::Gateway;
use crate::kg::store::{ImageDataStore, TextChunkStore};
use crate::kg::{Entity, KnowledgeGraph, Modality, Relation, TextChunk};
use crate::token::approx_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    #[serde(default = "default_top_k")]
    pub top_k_entities: usize,
    #[serde(default = "default_budget")]
    pub entity_relation_token_budget: usize,
    #[serde(default = "default_max_chunks")]
    pub max_chunks: usize,
}

fn default_top_k() -> usize {
    10
}

fn default_budget() -> usize {
    4000
}

fn default_max_chunks() -> usize {
    10
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            top_k_entities: default_top_k(),
            entity_relation_token_budget: default_budget(),
            max_chunks: default_max_chunks(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("top_k_entities", self.top_k_entities),
            (
                "entity_relation_token_budget",
                self.entity_relation_token_budget,
            ),
            ("max_chunks", self.max_chunks),
        ] {
            if value == 0 {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One retrieved entity with its query-similarity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub entity: Entity,
    pub score: f64,
}

/// Everything retrieval hands to generation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextBundle {
    pub entities: Vec<ScoredEntity>,
    pub relations: Vec<Relation>,
    pub chunks: Vec<TextChunk>,
    /// Paths of images reachable from the selected entities.
    pub images: Vec<String>,
}

fn entity_line(entity: &Entity) -> String {
    format!(
        "{} ({}): {}",
        entity.name, entity.entity_type, entity.description
    )
}

fn relation_line(relation: &Relation) -> String {
    format!(
        "{} -- {} (strength {}): {}",
        relation.source, relation.target, relation.strength, relation.description
    )
}

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.chunks.is_empty()
    }

    /// The plain-text context block given to the answering models.
    pub fn context_text(&self) -> String {
        let mut sections = Vec::new();
        if !self.entities.is_empty() {
            let lines: Vec<String> = self
                .entities
                .iter()
                .map(|s| format!("- {}", entity_line(&s.entity)))
                .collect();
            sections.push(format!("Entities:\n{}", lines.join("\n")));
        }
        if !self.relations.is_empty() {
            let lines: Vec<String> = self
                .relations
                .iter()
                .map(|r| format!("- {}", relation_line(r)))
                .collect();
            sections.push(format!("Relations:\n{}", lines.join("\n")));
        }
        if !self.chunks.is_empty() {
            let lines: Vec<String> = self
                .chunks
                .iter()
                .map(|c| format!("[{}] {}", c.chunk_id, c.content))
                .collect();
            sections.push(format!("Source text:\n{}", lines.join("\n")));
        }
        sections.join("\n\n")
    }
}

/// Retrieve the context most relevant to `query` from the graph.
///
/// Entities are the `top_k` nearest by embedding cosine (ties broken by
/// name). Relations touching a selected entity are added in descending
/// strength while the combined entity+relation text fits the token
/// budget. Chunks are ranked by how many selected entities cite them,
/// then by document order. Images come from selected global-image
/// entities and from merged entities adjacent to one.
pub fn retrieve(
    gateway: &Gateway,
    query: &str,
    mmkg: &KnowledgeGraph,
    vdb: &VectorDatabase,
    chunks: &TextChunkStore,
    images: &ImageDataStore,
    config: &RetrievalConfig,
) -> Result<ContextBundle> {
    config.validate()?;
    if mmkg.is_empty() {
        return Ok(ContextBundle::default());
    }
    let query_embedding = gateway.embed_one(query)?;

    // Rank by cosine, descending; equal scores fall back to name order.
    let mut ranked: Vec<(&str, f64)> = vdb
        .entries
        .iter()
        .filter(|entry| mmkg.contains(&entry.name))
        .map(|entry| (entry.name.as_str(), query_embedding.cosine(&entry.embedding)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    ranked.truncate(config.top_k_entities);

    let entities: Vec<ScoredEntity> = ranked
        .iter()
        .map(|(name, score)| ScoredEntity {
            entity: mmkg.entity(name).expect("ranked names exist").clone(),
            score: *score,
        })
        .collect();
    let selected: Vec<&str> = ranked.iter().map(|(name, _)| *name).collect();
    let is_selected = |name: &str| selected.contains(&name);

    // Relations under the shared entity+relation budget, strongest first.
    let entity_tokens: usize = entities
        .iter()
        .map(|s| approx_tokens(&entity_line(&s.entity)))
        .sum();
    let mut candidates: Vec<&Relation> = mmkg
        .relations()
        .iter()
        .filter(|r| is_selected(&r.source) || is_selected(&r.target))
        .collect();
    candidates.sort_by(|a, b| {
        b.strength
            .partial_cmp(&a.strength)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                (&a.source, &a.target, &a.description).cmp(&(&b.source, &b.target, &b.description))
            })
    });
    let mut relations = Vec::new();
    let mut used_tokens = entity_tokens;
    for relation in candidates {
        let cost = approx_tokens(&relation_line(relation));
        if used_tokens + cost > config.entity_relation_token_budget {
            continue;
        }
        used_tokens += cost;
        relations.push(relation.clone());
    }

    // Chunks by citation count among selected entities, then by order.
    let mut citations: Vec<(&TextChunk, usize)> = Vec::new();
    for chunk in chunks.values() {
        let count = entities
            .iter()
            .filter(|s| s.entity.source_chunk_ids.iter().any(|id| *id == chunk.chunk_id))
            .count();
        if count > 0 {
            citations.push((chunk, count));
        }
    }
    citations.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.order_index.cmp(&b.0.order_index)));
    citations.truncate(config.max_chunks);
    let chunks: Vec<TextChunk> = citations.into_iter().map(|(c, _)| c.clone()).collect();

    // Image paths: global entities directly, merged entities through their
    // adjacent global entity.
    let path_of = |global_name: &str| -> Option<String> {
        images
            .values()
            .find(|record| record.global_entity_name() == global_name)
            .map(|record| record.image_path.clone())
    };
    let mut image_paths = Vec::new();
    let mut push_path = |path: Option<String>| {
        if let Some(path) = path {
            if !image_paths.contains(&path) {
                image_paths.push(path);
            }
        }
    };
    for scored in &entities {
        match scored.entity.modality {
            Modality::ImageGlobal => push_path(path_of(&scored.entity.name)),
            Modality::Merged => {
                for neighbor in mmkg.neighbors(&scored.entity.name)? {
                    if neighbor.modality == Modality::ImageGlobal {
                        push_path(path_of(&neighbor.name));
                    }
                }
            }
            _ => {}
        }
    }

    Ok(ContextBundle {
        entities,
        relations,
        chunks,
        images: image_paths,
    })
}
