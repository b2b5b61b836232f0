//! Image → scene-graph pipeline: describe feature blocks, extract entities
//! and relations, align blocks to entities, and add the global image node.

mod grammar;

pub use grammar::{parse_records, serialize_records, ExtractionRecord, RecordGrammar};

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gateway::{bindings, Gateway};
use crate::kg::{canonical_name, Entity, GraphKind, KnowledgeGraph, Modality, Relation};

/// Default strength of the relation from an image's global node to each of
/// its scene entities.
pub const GLOBAL_RELATION_STRENGTH: f64 = 5.0;

/// Entity types offered to the extraction prompts.
pub const DEFAULT_ENTITY_TYPES: &str =
    "person, organism, object, location, organization, event, concept";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockCategory {
    Object,
    Organism,
    Person,
}

impl BlockCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockCategory::Object => "object",
            BlockCategory::Organism => "organism",
            BlockCategory::Person => "person",
        }
    }
}

/// What the vision model said about one segmented feature block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlockDescription {
    pub block_name: String,
    pub category: BlockCategory,
    pub description: String,
}

#[derive(Debug, Clone)]
pub struct Img2GraphConfig {
    pub grammar: RecordGrammar,
    pub entity_types: String,
    /// Directory that image_path / block_path values are relative to.
    pub assets_root: PathBuf,
}

impl Img2GraphConfig {
    pub fn new(assets_root: &Path) -> Self {
        Img2GraphConfig {
            grammar: RecordGrammar::default(),
            entity_types: DEFAULT_ENTITY_TYPES.to_string(),
            assets_root: assets_root.to_path_buf(),
        }
    }

    fn resolve(&self, stored: &str) -> PathBuf {
        let path = Path::new(stored);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.assets_root.join(path)
        }
    }
}

use crate::kg::ImageRecord;

/// Ask the vision model to classify and describe every feature block.
pub fn describe_blocks(
    gateway: &Gateway,
    image: &ImageRecord,
    config: &Img2GraphConfig,
) -> Result<(Vec<FeatureBlockDescription>, Vec<String>)> {
    if !image.segmentation || image.feature_blocks.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no feature blocks to describe",
            image.key()
        )));
    }
    let mut described = Vec::with_capacity(image.feature_blocks.len());
    let mut diagnostics = Vec::new();
    for block in &image.feature_blocks {
        let reply = gateway.vision_chat(
            "feature_block_description",
            &bindings([("block_name", block.block_name.as_str())]),
            &[config.resolve(&block.block_path)],
        )?;
        let category = match parse_block_category(&reply) {
            Some(category) => category,
            None => {
                diagnostics.push(format!(
                    "{}: no category sentence in reply, defaulting to object",
                    block.block_name
                ));
                BlockCategory::Object
            }
        };
        described.push(FeatureBlockDescription {
            block_name: block.block_name.clone(),
            category,
            description: reply.trim().to_string(),
        });
    }
    Ok((described, diagnostics))
}

/// The reply opens with "The category of this image feature block is …";
/// pull the first category word after that marker.
fn parse_block_category(reply: &str) -> Option<BlockCategory> {
    let marker = "category of this image feature block is";
    let lower = reply.to_lowercase();
    let after = &lower[lower.find(marker)? + marker.len()..];
    let candidates = [
        (BlockCategory::Person, "person"),
        (BlockCategory::Organism, "organism"),
        (BlockCategory::Object, "object"),
    ];
    let mut best: Option<(usize, BlockCategory)> = None;
    for (category, word) in candidates {
        if let Some(pos) = after.find(word) {
            if best.map_or(true, |(b, _)| pos < b) {
                best = Some((pos, category));
            }
        }
    }
    best.map(|(_, category)| category)
}

/// Extract the image's scene graph: one vision call, parsed into entities
/// and relations.
pub fn extract_scene_graph(
    gateway: &Gateway,
    image: &ImageRecord,
    config: &Img2GraphConfig,
) -> Result<(KnowledgeGraph, Vec<String>)> {
    let reply = gateway.vision_chat(
        "visual_extraction",
        &bindings([
            ("entity_types", config.entity_types.as_str()),
            ("tuple_delimiter", config.grammar.tuple_delimiter.as_str()),
            ("record_delimiter", config.grammar.record_delimiter.as_str()),
            (
                "completion_delimiter",
                config.grammar.completion_delimiter.as_str(),
            ),
        ]),
        &[config.resolve(&image.image_path)],
    )?;
    let (records, mut diagnostics) = parse_records(&reply, &config.grammar);

    let mut graph = KnowledgeGraph::new(GraphKind::ImageKg);
    for record in &records {
        if let ExtractionRecord::Entity {
            name,
            entity_type,
            description,
        } = record
        {
            graph.upsert_entity(Entity::new(name, entity_type, description, Modality::ImageLocal))?;
        }
    }
    for record in &records {
        if let ExtractionRecord::Relationship {
            source,
            target,
            description,
            strength,
        } = record
        {
            let relation = Relation::new(source, target, description, *strength);
            match graph.add_relation_lenient(relation) {
                Ok(_) => {}
                Err(_) => diagnostics.push(format!(
                    "{}: relation {source} -> {target} references an unknown entity",
                    image.key()
                )),
            }
        }
    }
    if graph.is_empty() {
        diagnostics.push(format!("{}: extraction produced no entities", image.key()));
    }
    Ok((graph, diagnostics))
}

/// Add each feature block as an `image_block` entity and ask the vision
/// model which scene entity it depicts; matches become relations.
pub fn align_blocks(
    gateway: &Gateway,
    blocks: &[FeatureBlockDescription],
    graph: &mut KnowledgeGraph,
    image: &ImageRecord,
    config: &Img2GraphConfig,
) -> Result<(Vec<Relation>, Vec<String>)> {
    if graph.is_empty() {
        return Err(Error::Validation(format!(
            "{}: cannot align feature blocks against an empty scene graph",
            image.key()
        )));
    }
    let entity_descriptions: String = graph
        .entities()
        .filter(|e| e.modality == Modality::ImageLocal)
        .map(|e| format!("\"{}\" - \"{}\"", e.name, e.description))
        .collect::<Vec<_>>()
        .join("\n");

    let mut added = Vec::new();
    let mut diagnostics = Vec::new();
    for block in blocks {
        let block_path = image
            .feature_blocks
            .iter()
            .find(|b| b.block_name == block.block_name)
            .map(|b| config.resolve(&b.block_path))
            .ok_or_else(|| {
                Error::NotFound(format!("feature block `{}` has no stored path", block.block_name))
            })?;
        graph.upsert_entity(Entity::new(
            &block.block_name,
            block.category.as_str(),
            &block.description,
            Modality::ImageBlock,
        ))?;
        let reply = gateway.vision_chat(
            "block_alignment",
            &bindings([
                ("block_name", block.block_name.as_str()),
                ("entity_descriptions", entity_descriptions.as_str()),
                ("tuple_delimiter", config.grammar.tuple_delimiter.as_str()),
                ("record_delimiter", config.grammar.record_delimiter.as_str()),
            ]),
            &[block_path],
        )?;
        if reply.to_lowercase().contains("no match") {
            continue;
        }
        let (records, _) = parse_records(&reply, &config.grammar);
        let relationship = records.iter().find_map(|r| match r {
            ExtractionRecord::Relationship {
                source,
                target,
                description,
                strength,
            } => Some((source, target, description, *strength)),
            _ => None,
        });
        let Some((source, target, description, strength)) = relationship else {
            diagnostics.push(format!(
                "{}: no relationship record in alignment reply",
                block.block_name
            ));
            continue;
        };
        // The prompt's example orders fields (entity, block); accept the
        // swapped order too.
        let block_canonical = canonical_name(&block.block_name);
        let entity_name = if canonical_name(target) == block_canonical {
            source
        } else {
            target
        };
        let is_scene_entity = graph
            .entity(entity_name)
            .map(|e| e.modality == Modality::ImageLocal)
            .unwrap_or(false);
        if !is_scene_entity {
            diagnostics.push(format!(
                "{}: alignment reply names unknown entity `{entity_name}`",
                block.block_name
            ));
            continue;
        }
        let relation = Relation::new(entity_name, &block.block_name, description, strength);
        if graph.add_relation_lenient(relation.clone())? {
            added.push(relation);
        }
    }
    Ok((added, diagnostics))
}

/// Add the `IMAGE_<id>` node describing the whole image, fanned out to
/// every scene entity.
pub fn build_global_entity(image: &ImageRecord, graph: &mut KnowledgeGraph) -> Result<()> {
    let global_name = image.global_entity_name();
    let locals: Vec<String> = graph
        .entities()
        .filter(|e| e.modality == Modality::ImageLocal)
        .map(|e| e.name.clone())
        .collect();
    graph.upsert_entity(Entity::new(
        &global_name,
        "image",
        &image.description,
        Modality::ImageGlobal,
    ))?;
    for local in locals {
        graph.add_relation_lenient(Relation::new(
            &global_name,
            &local,
            "The image contains this entity.",
            GLOBAL_RELATION_STRENGTH,
        ))?;
    }
    Ok(())
}

/// The full per-image pipeline. Returns the image KG plus accumulated
/// diagnostics; any fatal error aborts only this image.
pub fn image_to_graph(
    gateway: &Gateway,
    image: &ImageRecord,
    config: &Img2GraphConfig,
) -> Result<(KnowledgeGraph, Vec<String>)> {
    config.grammar.validate()?;
    let mut diagnostics = Vec::new();

    let blocks = if image.segmentation && !image.feature_blocks.is_empty() {
        let (blocks, mut block_diagnostics) = describe_blocks(gateway, image, config)?;
        diagnostics.append(&mut block_diagnostics);
        blocks
    } else {
        Vec::new()
    };

    let (mut graph, mut extract_diagnostics) = extract_scene_graph(gateway, image, config)?;
    diagnostics.append(&mut extract_diagnostics);

    if !blocks.is_empty() {
        if graph.is_empty() {
            diagnostics.push(format!(
                "{}: skipping block alignment, scene graph is empty",
                image.key()
            ));
        } else {
            let (_, mut align_diagnostics) =
                align_blocks(gateway, &blocks, &mut graph, image, config)?;
            diagnostics.append(&mut align_diagnostics);
        }
    }

    build_global_entity(image, &mut graph)?;
    Ok((graph, diagnostics))
}
