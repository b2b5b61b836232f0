//! Property-graph data model shared by every pipeline stage.
//!
//! Entities are keyed by canonical (uppercased) name. Relations are stored
//! as a directed list but treated as undirected wherever neighborhoods or
//! affinities are computed.

mod graph;
pub mod graphml;
pub mod store;

pub use graph::KnowledgeGraph;

use serde::{Deserialize, Serialize};

/// Default separator inserted between descriptions when an entity is
/// upserted more than once.
pub const DEFAULT_DESCRIPTION_SEPARATOR: &str = "<SEP>";

/// Canonical form of an entity name: trimmed and uppercased.
pub fn canonical_name(name: &str) -> String {
    name.trim().to_uppercase()
}

/// Which modality an entity originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Extracted from a text chunk.
    Text,
    /// A scene-graph entity extracted from one image.
    ImageLocal,
    /// The node representing an entire image.
    ImageGlobal,
    /// A segmented image feature block.
    ImageBlock,
    /// Result of fusing an image entity with a text entity.
    Merged,
}

impl Modality {
    /// The snake_case label used in serialized artifacts.
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::ImageLocal => "image_local",
            Modality::ImageGlobal => "image_global",
            Modality::ImageBlock => "image_block",
            Modality::Merged => "merged",
        }
    }
}

/// A named, typed, described graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub entity_type: String,
    pub description: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_chunk_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_image_entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_text_entities: Vec<String>,
}

impl Entity {
    pub fn new(name: &str, entity_type: &str, description: &str, modality: Modality) -> Self {
        Entity {
            name: canonical_name(name),
            entity_type: entity_type.to_string(),
            description: description.to_string(),
            modality,
            source_chunk_ids: Vec::new(),
            source_image_entities: Vec::new(),
            source_text_entities: Vec::new(),
        }
    }

    pub fn with_sources(mut self, chunk_ids: &[&str]) -> Self {
        self.source_chunk_ids = chunk_ids.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// A weighted, described edge between two entity names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub source: String,
    pub target: String,
    pub description: String,
    pub strength: f64,
}

impl Relation {
    pub fn new(source: &str, target: &str, description: &str, strength: f64) -> Self {
        Relation {
            source: canonical_name(source),
            target: canonical_name(target),
            description: description.to_string(),
            strength,
        }
    }

    /// Unordered endpoint pair, used for undirected comparisons.
    pub fn endpoints(&self) -> (String, String) {
        if self.source <= self.target {
            (self.source.clone(), self.target.clone())
        } else {
            (self.target.clone(), self.source.clone())
        }
    }
}

/// What a [`KnowledgeGraph`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    TextKg,
    ImageKg,
    Mmkg,
}

/// One chunk of document text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextChunk {
    pub chunk_id: String,
    pub order_index: usize,
    pub content: String,
    pub token_count: usize,
}

/// A feature block produced by segmentation, referenced from an image record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub block_name: String,
    pub block_path: String,
}

/// Per-image metadata plus its segmented feature blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub image_path: String,
    pub caption: Vec<String>,
    pub footnote: Vec<String>,
    pub context: String,
    pub chunk_order_index: usize,
    pub chunk_id: String,
    pub description: String,
    pub segmentation: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_blocks: Vec<FeatureBlock>,
}

impl ImageRecord {
    /// Store key of this record, e.g. `image_2`.
    pub fn key(&self) -> String {
        format!("image_{}", self.image_id)
    }

    /// Name of the global entity representing this image, e.g. `IMAGE_2`.
    pub fn global_entity_name(&self) -> String {
        format!("IMAGE_{}", self.image_id)
    }
}

/// Outcome of aligning one visual entity against its candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub image_entity: String,
    /// `None` encodes "no match".
    pub text_entity: Option<String>,
    pub candidate_pool: Vec<String>,
    pub method: String,
}

impl AlignmentRecord {
    pub fn is_match(&self) -> bool {
        self.text_entity.is_some()
    }
}

/// A fused cross-modal entity, also the ground-truth record shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedEntity {
    pub merged_entity_name: String,
    pub entity_type: String,
    pub description: String,
    pub source_image_entities: Vec<String>,
    pub source_text_entities: Vec<String>,
}

/// A reviewer-facing duplicate-entity merge suggestion, as emitted by the
/// duplicate-detection prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSuggestion {
    pub entity_name: String,
    pub entity_type: String,
    pub description: String,
    pub source_entities: Vec<String>,
}
