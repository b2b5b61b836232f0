//! Cross-modal fusion: folds each image's knowledge graph into the
//! evolving multimodal graph.
//!
//! Per image, in order: align every scene entity against candidate
//! textual entities, enhance the descriptions of the unaligned ones,
//! align the image's global entity (creating a textual stand-in when
//! nothing matches), then merge — copy the image graph in, link the
//! global entity, and collapse each aligned pair into one merged entity.
//! A model misbehaving never aborts the pipeline; every degradation is
//! recorded as a diagnostic.

use serde::{Deserialize, Serialize};

use crate::candidate::{context_entity_pool, embedding_text, generate_candidates, CandidateParams, ContextPool};
use crate::error::{Error, Result};
use crate::gateway::{bindings, EmbeddingVector, Gateway};
use crate::img2graph::GLOBAL_RELATION_STRENGTH;
use crate::kg::store::{ImageDataStore, ImageKgStore, TextChunkStore};
use crate::kg::{
    canonical_name, AlignmentRecord, Entity, GraphKind, ImageRecord, KnowledgeGraph, MergedEntity,
    Modality, Relation,
};

/// Description attached to the relation linking a global image entity to
/// its aligned (or created) textual entity.
const GLOBAL_LINK_DESCRIPTION: &str = "The image is associated with this entity.";

/// How one image's global entity was connected to the textual graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "name", rename_all = "snake_case")]
pub enum GlobalAlignment {
    /// Matched an existing textual entity.
    Matched(String),
    /// No match; a new textual entity was created from the image
    /// description.
    Created(String),
}

impl GlobalAlignment {
    pub fn name(&self) -> &str {
        match self {
            GlobalAlignment::Matched(name) | GlobalAlignment::Created(name) => name,
        }
    }
}

/// Everything one image contributed to the multimodal graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub image_id: u64,
    pub alignments: Vec<AlignmentRecord>,
    /// Names of entities after description enhancement.
    pub enhanced: Vec<String>,
    /// `None` when the image was skipped or failed before the global step.
    pub global_alignment: Option<GlobalAlignment>,
    pub merged: Vec<MergedEntity>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl FusionReport {
    fn empty(image_id: u64) -> Self {
        FusionReport {
            image_id,
            alignments: Vec::new(),
            enhanced: Vec::new(),
            global_alignment: None,
            merged: Vec::new(),
            diagnostics: Vec::new(),
        }
    }
}

/// An enhancement result: the rewritten entity plus the name it replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedEntity {
    pub original_name: String,
    pub entity: Entity,
}

/// One entity of the vector database built over the finished graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdbEntry {
    pub name: String,
    pub embedding: EmbeddingVector,
}

/// Per-entity embeddings of the multimodal graph, in entity order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorDatabase {
    pub entries: Vec<VdbEntry>,
}

impl VectorDatabase {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// JSON rendering of entities for prompt slots.
fn entity_json(entities: &[&Entity]) -> String {
    let items: Vec<serde_json::Value> = entities
        .iter()
        .map(|e| {
            serde_json::json!({
                "entity_name": e.name,
                "entity_type": e.entity_type,
                "description": e.description,
            })
        })
        .collect();
    serde_json::Value::Array(items).to_string()
}

/// The JSON payload inside a chatty reply: the body itself if it already
/// starts with a bracket, otherwise the outermost bracketed slice.
fn json_slice(reply: &str) -> Option<&str> {
    let trimmed = reply.trim();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        return Some(trimmed);
    }
    let array = match (trimmed.find('['), trimmed.rfind(']')) {
        (Some(start), Some(end)) if end > start => Some((start, &trimmed[start..=end])),
        _ => None,
    };
    let object = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(start), Some(end)) if end > start => Some((start, &trimmed[start..=end])),
        _ => None,
    };
    match (array, object) {
        (Some((a, slice_a)), Some((o, slice_o))) => {
            if a < o {
                Some(slice_a)
            } else {
                Some(slice_o)
            }
        }
        (Some((_, slice)), None) | (None, Some((_, slice))) => Some(slice),
        (None, None) => None,
    }
}

/// Parse a reply that may be one object or a list of them.
fn parse_reply_list<T: serde::de::DeserializeOwned>(reply: &str) -> Option<Vec<T>> {
    let slice = json_slice(reply)?;
    if let Ok(list) = serde_json::from_str::<Vec<T>>(slice) {
        return Some(list);
    }
    serde_json::from_str::<T>(slice).ok().map(|one| vec![one])
}

/// Ask the model which candidate (if any) the visual entity denotes.
/// Empty candidates skip the model; any reply that is not an exact
/// candidate name counts as no match. Model failures degrade to no match
/// so the caller's loop stays total.
pub fn align_entity(
    gateway: &Gateway,
    visual: &Entity,
    candidates: &[Entity],
    context_text: &str,
    method: &str,
) -> (AlignmentRecord, Vec<String>) {
    let candidate_pool: Vec<String> = candidates.iter().map(|c| c.name.clone()).collect();
    let mut record = AlignmentRecord {
        image_entity: visual.name.clone(),
        text_entity: None,
        candidate_pool,
        method: method.to_string(),
    };
    let mut diagnostics = Vec::new();
    if candidates.is_empty() {
        return (record, diagnostics);
    }
    let candidate_refs: Vec<&Entity> = candidates.iter().collect();
    let reply = gateway.chat(
        "entity_alignment",
        &bindings([
            ("img_entity", visual.name.as_str()),
            ("img_entity_description", visual.description.as_str()),
            ("chunk_text", context_text),
            (
                "possible_image_matched_entities",
                entity_json(&candidate_refs).as_str(),
            ),
        ]),
    );
    match reply {
        Ok(reply) => {
            let trimmed = reply.trim();
            if trimmed.eq_ignore_ascii_case("no match") {
                return (record, diagnostics);
            }
            let wanted = canonical_name(trimmed.trim_matches(|c: char| "\"'`".contains(c)));
            if record.candidate_pool.iter().any(|c| *c == wanted) {
                record.text_entity = Some(wanted);
            } else {
                diagnostics.push(format!(
                    "{}: alignment reply `{trimmed}` names no candidate; treated as no match",
                    visual.name
                ));
            }
        }
        Err(e) => diagnostics.push(format!(
            "{}: alignment call failed ({e}); treated as no match",
            visual.name
        )),
    }
    (record, diagnostics)
}

#[derive(Deserialize)]
struct EnhancedReply {
    #[serde(default)]
    entity_name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    original_name: String,
}

/// Context given to the enhancement prompt: the chunk window plus the
/// textual entities available for grounding.
fn enhancement_context(context_text: &str, pool: &ContextPool) -> String {
    if pool.is_empty() {
        return context_text.to_string();
    }
    let lines: Vec<String> = pool
        .entities
        .iter()
        .map(|(e, _)| format!("- {}: {}", e.name, e.description))
        .collect();
    format!("{context_text}\n\nRelevant entities:\n{}", lines.join("\n"))
}

/// Enrich the descriptions of unaligned visual entities from the
/// surrounding text. The model may rename an entity and rewrite its
/// description, but its type is always kept. An unusable reply returns
/// the entities unmodified.
pub fn enhance_entities(
    gateway: &Gateway,
    unaligned: &[Entity],
    pool: &ContextPool,
    context_text: &str,
) -> (Vec<EnhancedEntity>, Vec<String>) {
    if unaligned.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut diagnostics = Vec::new();
    let unaligned_refs: Vec<&Entity> = unaligned.iter().collect();
    let unmodified = || {
        unaligned
            .iter()
            .map(|e| EnhancedEntity {
                original_name: e.name.clone(),
                entity: e.clone(),
            })
            .collect::<Vec<_>>()
    };
    let reply = match gateway.chat(
        "enhance_entities",
        &bindings([
            ("img_entity_list", entity_json(&unaligned_refs).as_str()),
            ("chunk_text", enhancement_context(context_text, pool).as_str()),
        ]),
    ) {
        Ok(reply) => reply,
        Err(e) => {
            diagnostics.push(format!(
                "enhancement call failed ({e}); keeping original descriptions"
            ));
            return (unmodified(), diagnostics);
        }
    };
    let Some(parsed) = parse_reply_list::<EnhancedReply>(&reply) else {
        diagnostics.push(
            "enhancement reply was not a JSON entity list; keeping original descriptions".into(),
        );
        return (unmodified(), diagnostics);
    };
    let mut enhanced = Vec::new();
    for item in parsed {
        let original_name = canonical_name(&item.original_name);
        let Some(original) = unaligned.iter().find(|e| e.name == original_name) else {
            diagnostics.push(format!(
                "enhancement reply references unknown entity `{}`; dropped",
                item.original_name
            ));
            continue;
        };
        let mut entity = original.clone();
        if !item.entity_name.trim().is_empty() {
            entity.name = canonical_name(&item.entity_name);
        }
        if !item.description.trim().is_empty() {
            entity.description = item.description.trim().to_string();
        }
        enhanced.push(EnhancedEntity {
            original_name: original.name.clone(),
            entity,
        });
    }
    (enhanced, diagnostics)
}

#[derive(Deserialize)]
struct FusionReply {
    #[serde(default)]
    merged_entity_name: String,
    #[serde(default)]
    entity_type: String,
    #[serde(default)]
    description: String,
}

/// Merge one aligned image/text entity pair into a unified entity. The
/// model supplies name, type and description; source lists always come
/// from the inputs. On any failure the merged entity deterministically
/// keeps the text entity's name and concatenates both descriptions.
pub fn fuse_pair(
    gateway: &Gateway,
    image_entity: &Entity,
    text_entity: &Entity,
    original_text: &str,
) -> (MergedEntity, Vec<String>) {
    let mut diagnostics = Vec::new();
    let fallback = |diagnostics: &mut Vec<String>, why: &str| {
        diagnostics.push(format!(
            "fusing {} with {}: {why}; using the text entity's name",
            image_entity.name, text_entity.name
        ));
        MergedEntity {
            merged_entity_name: text_entity.name.clone(),
            entity_type: if text_entity.entity_type.is_empty() {
                image_entity.entity_type.clone()
            } else {
                text_entity.entity_type.clone()
            },
            description: format!(
                "{}{}{}",
                image_entity.description,
                crate::kg::DEFAULT_DESCRIPTION_SEPARATOR,
                text_entity.description
            ),
            source_image_entities: vec![image_entity.name.clone()],
            source_text_entities: vec![text_entity.name.clone()],
        }
    };
    let reply = match gateway.chat(
        "entity_fusion",
        &bindings([
            ("image_entities", entity_json(&[image_entity]).as_str()),
            ("original_text", original_text),
            ("text_entities", entity_json(&[text_entity]).as_str()),
        ]),
    ) {
        Ok(reply) => reply,
        Err(e) => {
            let merged = fallback(&mut diagnostics, &format!("fusion call failed ({e})"));
            return (merged, diagnostics);
        }
    };
    let parsed = parse_reply_list::<FusionReply>(&reply)
        .and_then(|list| list.into_iter().find(|r| !r.merged_entity_name.trim().is_empty()));
    let merged = match parsed {
        Some(reply) => MergedEntity {
            merged_entity_name: canonical_name(&reply.merged_entity_name),
            entity_type: if reply.entity_type.is_empty() {
                text_entity.entity_type.clone()
            } else {
                reply.entity_type
            },
            description: if reply.description.trim().is_empty() {
                format!(
                    "{}{}{}",
                    image_entity.description,
                    crate::kg::DEFAULT_DESCRIPTION_SEPARATOR,
                    text_entity.description
                )
            } else {
                reply.description.trim().to_string()
            },
            source_image_entities: vec![image_entity.name.clone()],
            source_text_entities: vec![text_entity.name.clone()],
        },
        None => fallback(&mut diagnostics, "fusion reply had no usable merged entity"),
    };
    (merged, diagnostics)
}

/// Entities visible to alignment: textual and previously merged nodes,
/// with the relations among them.
fn textual_projection(graph: &KnowledgeGraph) -> KnowledgeGraph {
    let mut projection = KnowledgeGraph::new(graph.kind);
    for entity in graph.entities() {
        if matches!(entity.modality, Modality::Text | Modality::Merged) {
            projection
                .upsert_entity(entity.clone())
                .expect("names in a graph are already valid");
        }
    }
    for relation in graph.relations() {
        if projection.contains(&relation.source) && projection.contains(&relation.target) {
            let _ = projection.add_relation_lenient(relation.clone());
        }
    }
    projection
}

/// Contents of the chunk window around the image, in document order.
pub(crate) fn window_text(chunks: &TextChunkStore, image: &ImageRecord, radius: usize) -> String {
    let j = image.chunk_order_index;
    let lo = j.saturating_sub(radius);
    let hi = j + radius;
    let mut window: Vec<_> = chunks
        .values()
        .filter(|c| (lo..=hi).contains(&c.order_index))
        .collect();
    window.sort_by_key(|c| c.order_index);
    window
        .iter()
        .map(|c| c.content.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fold one image's graph into the evolving multimodal graph. Skips
/// images whose global entity is already present, making replays cheap
/// and idempotent.
pub fn fuse_image(
    gateway: &Gateway,
    mmkg: &mut KnowledgeGraph,
    image_kg: &KnowledgeGraph,
    image: &ImageRecord,
    chunks: &TextChunkStore,
    params: &CandidateParams,
) -> Result<FusionReport> {
    let global_name = image.global_entity_name();
    let mut report = FusionReport::empty(image.image_id);
    if mmkg.contains(&global_name) {
        report.diagnostics.push(format!(
            "{} is already part of the graph; skipped",
            image.key()
        ));
        return Ok(report);
    }
    let global = image_kg
        .entity(&global_name)
        .ok_or_else(|| {
            Error::Validation(format!(
                "image graph for {} has no global entity {global_name}",
                image.key()
            ))
        })?
        .clone();

    let context_text = window_text(chunks, image, params.window_radius);
    let textual = textual_projection(mmkg);
    let pool = context_entity_pool(gateway, &textual, chunks, image, params.window_radius)?;

    // 1. Align every scene entity against its candidate set.
    let visuals: Vec<Entity> = image_kg
        .entities()
        .filter(|e| e.modality == Modality::ImageLocal)
        .cloned()
        .collect();
    for visual in &visuals {
        let embedding = gateway.embed_one(&embedding_text(visual))?;
        let (candidates, mut diags) =
            generate_candidates(gateway, visual, &embedding, &pool, params)?;
        report.diagnostics.append(&mut diags);
        let (record, mut align_diags) = align_entity(
            gateway,
            visual,
            &candidates,
            &context_text,
            params.strategy.as_str(),
        );
        report.diagnostics.append(&mut align_diags);
        report.alignments.push(record);
    }

    // 2. Enhance the unaligned scene entities on a working copy.
    let mut ikg = image_kg.clone();
    let unaligned: Vec<Entity> = report
        .alignments
        .iter()
        .filter(|r| !r.is_match())
        .filter_map(|r| image_kg.entity(&r.image_entity).cloned())
        .collect();
    let (enhanced, mut enhance_diags) = enhance_entities(gateway, &unaligned, &pool, &context_text);
    report.diagnostics.append(&mut enhance_diags);
    for item in &enhanced {
        ikg.rename_entity(&item.original_name, &item.entity.name, &item.entity.description)?;
        report.enhanced.push(item.entity.name.clone());
    }

    // 3. Align the global entity; create a textual stand-in on no match.
    let global_embedding = gateway.embed_one(&embedding_text(&global))?;
    let (global_candidates, mut global_diags) =
        generate_candidates(gateway, &global, &global_embedding, &pool, params)?;
    report.diagnostics.append(&mut global_diags);
    let (global_record, mut global_align_diags) = align_entity(
        gateway,
        &global,
        &global_candidates,
        &context_text,
        params.strategy.as_str(),
    );
    report.diagnostics.append(&mut global_align_diags);
    let created = match &global_record.text_entity {
        Some(name) => {
            report.global_alignment = Some(GlobalAlignment::Matched(name.clone()));
            None
        }
        None => {
            let name = canonical_name(&format!("{global_name} SUBJECT"));
            let mut entity = Entity::new(&name, "concept", &image.description, Modality::Text);
            entity.source_chunk_ids = vec![image.chunk_id.clone()];
            report.global_alignment = Some(GlobalAlignment::Created(name));
            Some(entity)
        }
    };

    // 4. Merge: copy the image graph in, wire the global entity, then
    //    collapse each aligned pair.
    for entity in ikg.entities() {
        if mmkg.contains(&entity.name) {
            report.diagnostics.push(format!(
                "{} already exists in the graph; descriptions merged on contact",
                entity.name
            ));
        }
        mmkg.upsert_entity(entity.clone())?;
    }
    for relation in ikg.relations() {
        mmkg.add_relation_lenient(relation.clone())?;
    }
    let link_target = match (&report.global_alignment, created) {
        (Some(GlobalAlignment::Created(name)), Some(entity)) => {
            mmkg.upsert_entity(entity)?;
            name.clone()
        }
        (Some(GlobalAlignment::Matched(name)), _) => name.clone(),
        _ => unreachable!("global alignment is always set above"),
    };
    mmkg.add_relation_lenient(Relation::new(
        &global_name,
        &link_target,
        GLOBAL_LINK_DESCRIPTION,
        GLOBAL_RELATION_STRENGTH,
    ))?;

    // Aligned names can disappear as pairs merge; track where each went.
    let mut moved: indexmap::IndexMap<String, String> = indexmap::IndexMap::new();
    let resolve = |moved: &indexmap::IndexMap<String, String>, name: &str| -> String {
        moved
            .get(&canonical_name(name))
            .cloned()
            .unwrap_or_else(|| canonical_name(name))
    };
    for record in &report.alignments {
        let Some(text_name) = &record.text_entity else {
            continue;
        };
        let image_entity = image_kg
            .entity(&record.image_entity)
            .expect("alignment records come from this image's graph")
            .clone();
        let text_entity = textual
            .entity(text_name)
            .expect("candidates come from the textual projection")
            .clone();
        let (merged, mut fuse_diags) =
            fuse_pair(gateway, &image_entity, &text_entity, &context_text);
        report.diagnostics.append(&mut fuse_diags);

        let image_now = resolve(&moved, &record.image_entity);
        let text_now = resolve(&moved, text_name);
        let mut members: Vec<&str> = vec![image_now.as_str()];
        if text_now != image_now {
            members.push(text_now.as_str());
        }
        mmkg.merge_entities(&merged.merged_entity_name, &members, &merged.description)?;
        let node = mmkg
            .entity_mut(&merged.merged_entity_name)
            .expect("merge target exists");
        node.modality = Modality::Merged;
        if !merged.entity_type.is_empty() {
            node.entity_type = merged.entity_type.clone();
        }
        for source in &merged.source_image_entities {
            if !node.source_image_entities.contains(source) {
                node.source_image_entities.push(source.clone());
            }
        }
        for source in &merged.source_text_entities {
            if !node.source_text_entities.contains(source) {
                node.source_text_entities.push(source.clone());
            }
        }
        for absorbed in [&image_now, &text_now] {
            if *absorbed != merged.merged_entity_name {
                for value in moved.values_mut() {
                    if value == absorbed {
                        *value = merged.merged_entity_name.clone();
                    }
                }
                moved.insert(absorbed.clone(), merged.merged_entity_name.clone());
            }
        }
        report.merged.push(merged);
    }
    Ok(report)
}

/// Build the multimodal graph over every image, then embed each entity
/// into the vector database. One image failing (or missing its graph)
/// only loses that image's contribution.
pub fn build_mmkg(
    gateway: &Gateway,
    text_kg: &KnowledgeGraph,
    image_kgs: &ImageKgStore,
    images: &ImageDataStore,
    chunks: &TextChunkStore,
    params: &CandidateParams,
) -> Result<(KnowledgeGraph, VectorDatabase, Vec<FusionReport>)> {
    let mut mmkg = text_kg.clone();
    mmkg.kind = GraphKind::Mmkg;
    let mut reports = Vec::new();
    let mut ordered: Vec<&ImageRecord> = images.values().collect();
    ordered.sort_by_key(|r| r.image_id);
    for image in ordered {
        let report = match image_kgs.get(&image.key()) {
            None => {
                let mut report = FusionReport::empty(image.image_id);
                report.diagnostics.push(format!(
                    "{} has no image knowledge graph; image skipped",
                    image.key()
                ));
                report
            }
            Some(image_kg) => {
                // Stage the mutation so a failing image leaves the graph
                // untouched.
                let mut staged = mmkg.clone();
                match fuse_image(gateway, &mut staged, image_kg, image, chunks, params) {
                    Ok(report) => {
                        mmkg = staged;
                        report
                    }
                    Err(e) => {
                        let mut report = FusionReport::empty(image.image_id);
                        report
                            .diagnostics
                            .push(format!("fusion failed for {}: {e}", image.key()));
                        report
                    }
                }
            }
        };
        reports.push(report);
    }

    let vdb = build_vdb(gateway, &mmkg)?;
    Ok((mmkg, vdb, reports))
}

/// Embed every entity of `graph` (as "NAME: description") into a fresh
/// vector database, in entity order.
pub fn build_vdb(gateway: &Gateway, graph: &KnowledgeGraph) -> Result<VectorDatabase> {
    let texts: Vec<String> = graph.entities().map(embedding_text).collect();
    let entries = if texts.is_empty() {
        Vec::new()
    } else {
        gateway
            .embed(&texts)?
            .into_iter()
            .zip(graph.entities())
            .map(|(embedding, entity)| VdbEntry {
                name: entity.name.clone(),
                embedding,
            })
            .collect()
    };
    Ok(VectorDatabase { entries })
}
