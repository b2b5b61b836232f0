//! JSON persistence for every artifact a document workspace carries.
//!
//! One document lives in one directory. Each store is a single JSON file
//! with a fixed name; keyed stores are objects whose entries are parsed
//! individually so a malformed file reports the offending key.

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::{
    AlignmentRecord, Entity, GraphKind, ImageRecord, KnowledgeGraph, MergedEntity, Relation,
    TextChunk,
};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// The store families a document workspace is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    ChunkKg,
    ImageKg,
    ImageData,
    TextChunks,
    AlignedTextEntity,
    MergedEntities,
    GroundTruth,
}

impl StoreKind {
    pub fn file_name(self) -> &'static str {
        match self {
            StoreKind::ChunkKg => "kv_store_chunk_knowledge_graph.json",
            StoreKind::ImageKg => "kv_store_image_knowledge_graph.json",
            StoreKind::ImageData => "kv_store_image_data.json",
            StoreKind::TextChunks => "kv_store_text_chunks.json",
            StoreKind::AlignedTextEntity => "aligned_text_entity.json",
            StoreKind::MergedEntities => "merged_entities.json",
            StoreKind::GroundTruth => "ground_truth.json",
        }
    }

    pub fn path_in(self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

/// Image knowledge graphs keyed by "image_<id>".
pub type ImageKgStore = IndexMap<String, KnowledgeGraph>;
/// Image metadata records keyed by "image_<id>".
pub type ImageDataStore = IndexMap<String, ImageRecord>;
/// Text chunks keyed by chunk id.
pub type TextChunkStore = IndexMap<String, TextChunk>;
/// Alignment records per image key.
pub type AlignmentStore = IndexMap<String, Vec<AlignmentRecord>>;
/// Merged entities per image key; also the ground-truth shape.
pub type MergedEntityStore = IndexMap<String, Vec<MergedEntity>>;

/// On-disk graph layout: entity map keyed by name, relation list.
#[derive(Serialize, Deserialize)]
struct GraphDoc {
    format_version: u32,
    kind: GraphKind,
    entities: IndexMap<String, Entity>,
    relations: Vec<Relation>,
}

fn parse_error(path: &Path, key: &str, err: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        key: key.to_string(),
        message: err.to_string(),
    }
}

/// Serialize pretty-printed and write atomically (temp file, then rename).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, body)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_root(path: &Path) -> Result<serde_json::Value> {
    let body = std::fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| parse_error(path, "<document>", e))
}

fn as_object(
    path: &Path,
    value: serde_json::Value,
) -> Result<serde_json::Map<String, serde_json::Value>> {
    match value {
        serde_json::Value::Object(map) => Ok(map),
        other => Err(parse_error(
            path,
            "<document>",
            format!("expected a JSON object, found {}", kind_name(&other)),
        )),
    }
}

fn kind_name(value: &serde_json::Value) -> &'static str {
    match value {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "a boolean",
        serde_json::Value::Number(_) => "a number",
        serde_json::Value::String(_) => "a string",
        serde_json::Value::Array(_) => "an array",
        serde_json::Value::Object(_) => "an object",
    }
}

/// Load a top-level JSON object parsing each entry as `T`; a bad entry
/// reports the key it sits under.
fn load_keyed<T: DeserializeOwned>(path: &Path) -> Result<IndexMap<String, T>> {
    let map = as_object(path, read_root(path)?)?;
    let mut out = IndexMap::with_capacity(map.len());
    for (key, value) in map {
        let parsed =
            serde_json::from_value(value).map_err(|e| parse_error(path, &key, e))?;
        out.insert(key, parsed);
    }
    Ok(out)
}

fn graph_to_doc(graph: &KnowledgeGraph) -> GraphDoc {
    GraphDoc {
        format_version: FORMAT_VERSION,
        kind: graph.kind,
        entities: graph
            .entities()
            .map(|e| (e.name.clone(), e.clone()))
            .collect(),
        relations: graph.relations().to_vec(),
    }
}

fn graph_from_value(path: &Path, key_prefix: &str, value: serde_json::Value) -> Result<KnowledgeGraph> {
    let doc: GraphDoc =
        serde_json::from_value(value).map_err(|e| parse_error(path, key_prefix, e))?;
    let mut graph = KnowledgeGraph::new(doc.kind);
    for (key, entity) in doc.entities {
        graph
            .upsert_entity(entity)
            .map_err(|e| parse_error(path, &format!("{key_prefix}entities.{key}"), e))?;
    }
    for (i, relation) in doc.relations.into_iter().enumerate() {
        graph
            .add_relation(relation)
            .map_err(|e| parse_error(path, &format!("{key_prefix}relations[{i}]"), e))?;
    }
    Ok(graph)
}

pub fn save_graph(path: &Path, graph: &KnowledgeGraph) -> Result<()> {
    write_json(path, &graph_to_doc(graph))
}

pub fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    graph_from_value(path, "", read_root(path)?)
}

pub fn save_image_graphs(path: &Path, graphs: &ImageKgStore) -> Result<()> {
    let doc: IndexMap<&String, GraphDoc> =
        graphs.iter().map(|(k, g)| (k, graph_to_doc(g))).collect();
    write_json(path, &doc)
}

pub fn load_image_graphs(path: &Path) -> Result<ImageKgStore> {
    let map = as_object(path, read_root(path)?)?;
    let mut out = IndexMap::with_capacity(map.len());
    for (key, value) in map {
        let graph = graph_from_value(path, &format!("{key}."), value)?;
        out.insert(key, graph);
    }
    Ok(out)
}

pub fn save_image_data(path: &Path, records: &ImageDataStore) -> Result<()> {
    write_json(path, records)
}

pub fn load_image_data(path: &Path) -> Result<ImageDataStore> {
    let records: ImageDataStore = load_keyed(path)?;
    for (key, record) in &records {
        if *key != record.key() {
            return Err(parse_error(
                path,
                key,
                format!("entry key does not match image_id {}", record.image_id),
            ));
        }
        if !record.segmentation && !record.feature_blocks.is_empty() {
            return Err(parse_error(
                path,
                key,
                "feature_blocks must be empty when segmentation is false",
            ));
        }
    }
    Ok(records)
}

pub fn save_text_chunks(path: &Path, chunks: &TextChunkStore) -> Result<()> {
    write_json(path, chunks)
}

pub fn load_text_chunks(path: &Path) -> Result<TextChunkStore> {
    load_keyed(path)
}

pub fn save_alignments(path: &Path, records: &AlignmentStore) -> Result<()> {
    write_json(path, records)
}

pub fn load_alignments(path: &Path) -> Result<AlignmentStore> {
    let records: AlignmentStore = load_keyed(path)?;
    for (key, list) in &records {
        for record in list {
            if let Some(text_entity) = &record.text_entity {
                if !record.candidate_pool.iter().any(|c| c == text_entity) {
                    return Err(parse_error(
                        path,
                        key,
                        format!(
                            "aligned entity `{text_entity}` for `{}` is not in its candidate pool",
                            record.image_entity
                        ),
                    ));
                }
            }
        }
    }
    Ok(records)
}

pub fn save_merged_entities(path: &Path, records: &MergedEntityStore) -> Result<()> {
    write_json(path, records)
}

pub fn load_merged_entities(path: &Path) -> Result<MergedEntityStore> {
    load_keyed(path)
}

pub fn save_ground_truth(path: &Path, records: &MergedEntityStore) -> Result<()> {
    write_json(path, records)
}

pub fn load_ground_truth(path: &Path) -> Result<MergedEntityStore> {
    load_keyed(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Modality;
    use tempfile::tempdir;

    #[test]
    fn graph_round_trip() {
        let dir = tempdir().unwrap();
        let path = StoreKind::ChunkKg.path_in(dir.path());
        let mut graph = KnowledgeGraph::new(GraphKind::TextKg);
        graph
            .upsert_entity(Entity::new("ALICE", "person", "a person", Modality::Text))
            .unwrap();
        graph
            .upsert_entity(Entity::new("PARK", "location", "a park", Modality::Text))
            .unwrap();
        graph
            .add_relation(Relation::new("ALICE", "PARK", "visits", 6.0))
            .unwrap();
        save_graph(&path, &graph).unwrap();
        let loaded = load_graph(&path).unwrap();
        assert_eq!(loaded, graph);
    }

    #[test]
    fn empty_graph_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.json");
        let graph = KnowledgeGraph::new(GraphKind::Mmkg);
        save_graph(&path, &graph).unwrap();
        let loaded = load_graph(&path).unwrap();
        assert_eq!(loaded, graph);
        assert!(loaded.is_empty());
    }

    #[test]
    fn malformed_entry_reports_offending_key() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("kv_store_text_chunks.json");
        std::fs::write(
            &path,
            r#"{"chunk-ok": {"chunk_id": "chunk-ok", "order_index": 0, "content": "x", "token_count": 1},
               "chunk-bad": {"chunk_id": "chunk-bad"}}"#,
        )
        .unwrap();
        let err = load_text_chunks(&path).unwrap_err();
        match err {
            Error::Parse { key, path: p, .. } => {
                assert_eq!(key, "chunk-bad");
                assert!(p.ends_with("kv_store_text_chunks.json"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_object_document_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "[1, 2, 3]").unwrap();
        let err = load_text_chunks(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn segmentation_false_with_blocks_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("kv_store_image_data.json");
        std::fs::write(
            &path,
            r#"{"image_1": {
                "image_id": 1, "image_path": "./images/image_1.jpg",
                "caption": [], "footnote": [], "context": "", "chunk_order_index": 0,
                "chunk_id": "chunk-x", "description": "", "segmentation": false,
                "feature_blocks": [{"block_name": "a", "block_path": "b"}]
            }}"#,
        )
        .unwrap();
        assert!(matches!(load_image_data(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn alignment_outside_pool_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("aligned_text_entity.json");
        std::fs::write(
            &path,
            r#"{"image_1": [{"image_entity": "GIRL", "text_entity": "ALICE",
                "candidate_pool": ["BOB"], "method": "spectral"}]}"#,
        )
        .unwrap();
        assert!(matches!(load_alignments(&path), Err(Error::Parse { .. })));
    }
}
