//! Graph-editing primitives: upsert, neighbors, merge.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::{canonical_name, Entity, GraphKind, Relation, DEFAULT_DESCRIPTION_SEPARATOR};
use crate::error::{Error, Result};

/// An entity/relation collection. Entities keep insertion order, which is
/// the tie-breaking order used by candidate generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub kind: GraphKind,
    entities: IndexMap<String, Entity>,
    relations: Vec<Relation>,
    #[serde(default = "default_separator")]
    description_separator: String,
}

fn default_separator() -> String {
    DEFAULT_DESCRIPTION_SEPARATOR.to_string()
}

impl KnowledgeGraph {
    pub fn new(kind: GraphKind) -> Self {
        KnowledgeGraph {
            kind,
            entities: IndexMap::new(),
            relations: Vec::new(),
            description_separator: default_separator(),
        }
    }

    pub fn with_separator(mut self, separator: &str) -> Self {
        self.description_separator = separator.to_string();
        self
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities in insertion order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    /// Case-insensitive lookup.
    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.entities.get(&canonical_name(name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entity(name).is_some()
    }

    /// Mutable lookup for in-crate post-merge edits. Callers must not
    /// change `name`, which doubles as the map key.
    pub(crate) fn entity_mut(&mut self, name: &str) -> Option<&mut Entity> {
        self.entities.get_mut(&canonical_name(name))
    }

    /// Insert or merge an entity. An existing entity under the same
    /// canonical name keeps its modality and type; descriptions are
    /// concatenated with the configured separator and source lists unioned.
    pub fn upsert_entity(&mut self, entity: Entity) -> Result<()> {
        let name = canonical_name(&entity.name);
        if name.is_empty() {
            return Err(Error::Validation("entity name must be nonempty".into()));
        }
        match self.entities.get_mut(&name) {
            Some(existing) => {
                if !entity.description.is_empty() && entity.description != existing.description {
                    if existing.description.is_empty() {
                        existing.description = entity.description;
                    } else {
                        existing.description = format!(
                            "{}{}{}",
                            existing.description, self.description_separator, entity.description
                        );
                    }
                }
                if existing.entity_type.is_empty() {
                    existing.entity_type = entity.entity_type;
                }
                union_into(&mut existing.source_chunk_ids, &entity.source_chunk_ids);
                union_into(
                    &mut existing.source_image_entities,
                    &entity.source_image_entities,
                );
                union_into(
                    &mut existing.source_text_entities,
                    &entity.source_text_entities,
                );
            }
            None => {
                let mut entity = entity;
                entity.name = name.clone();
                self.entities.insert(name, entity);
            }
        }
        Ok(())
    }

    /// Add a relation between two existing entities. Self-loops and exact
    /// duplicates (same source, target and description) are rejected with
    /// `Validation`; unknown endpoints with `NotFound`.
    pub fn add_relation(&mut self, relation: Relation) -> Result<()> {
        let source = canonical_name(&relation.source);
        let target = canonical_name(&relation.target);
        if source == target {
            return Err(Error::Validation(format!(
                "self-loop relation on `{source}`"
            )));
        }
        for endpoint in [&source, &target] {
            if !self.entities.contains_key(endpoint) {
                return Err(Error::NotFound(format!(
                    "relation endpoint `{endpoint}` is not in the graph"
                )));
            }
        }
        let exists = self.relations.iter().any(|r| {
            r.source == source && r.target == target && r.description == relation.description
        });
        if exists {
            return Err(Error::Validation(format!(
                "duplicate relation {source} -> {target}"
            )));
        }
        self.relations.push(Relation {
            source,
            target,
            ..relation
        });
        Ok(())
    }

    /// Like [`add_relation`](Self::add_relation) but silently skips
    /// self-loops and duplicates. Returns whether the relation was added.
    pub fn add_relation_lenient(&mut self, relation: Relation) -> Result<bool> {
        match self.add_relation(relation) {
            Ok(()) => Ok(true),
            Err(Error::Validation(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// All entities sharing at least one relation with `name` (undirected),
    /// excluding `name` itself.
    pub fn neighbors(&self, name: &str) -> Result<Vec<&Entity>> {
        let name = canonical_name(name);
        if !self.entities.contains_key(&name) {
            return Err(Error::NotFound(format!("entity `{name}` is not in the graph")));
        }
        let mut seen = BTreeSet::new();
        for relation in &self.relations {
            if relation.source == name {
                seen.insert(relation.target.clone());
            } else if relation.target == name {
                seen.insert(relation.source.clone());
            }
        }
        seen.remove(&name);
        // Preserve entity insertion order in the result.
        Ok(self
            .entities
            .values()
            .filter(|e| seen.contains(&e.name))
            .collect())
    }

    /// Collapse `members` into one entity named `canonical`. Relations
    /// incident to any member are rewritten to `canonical`; rewriting
    /// self-loops are dropped and duplicates deduplicated.
    ///
    /// `canonical` may be one of the members or a brand new name. The
    /// surviving entity gets `merged_description` and the union of all
    /// member source lists.
    pub fn merge_entities(
        &mut self,
        canonical: &str,
        members: &[&str],
        merged_description: &str,
    ) -> Result<()> {
        let canonical = canonical_name(canonical);
        if canonical.is_empty() {
            return Err(Error::Validation("canonical name must be nonempty".into()));
        }
        let members: Vec<String> = members.iter().map(|m| canonical_name(m)).collect();
        for member in &members {
            if !self.entities.contains_key(member) {
                return Err(Error::NotFound(format!("merge member `{member}` is not in the graph")));
            }
        }
        if members.is_empty() {
            return Err(Error::Validation("merge requires at least one member".into()));
        }

        // Union of source lists over members (plus canonical, if distinct
        // and already present).
        let mut chunk_ids = Vec::new();
        let mut image_sources = Vec::new();
        let mut text_sources = Vec::new();
        let mut entity_type = String::new();
        let mut modality = None;
        let mut absorb = |entity: &Entity| {
            union_into(&mut chunk_ids, &entity.source_chunk_ids);
            union_into(&mut image_sources, &entity.source_image_entities);
            union_into(&mut text_sources, &entity.source_text_entities);
            if entity_type.is_empty() {
                entity_type = entity.entity_type.clone();
            }
            if modality.is_none() {
                modality = Some(entity.modality);
            }
        };
        if let Some(existing) = self.entities.get(&canonical) {
            absorb(existing);
        }
        for member in &members {
            if let Some(entity) = self.entities.get(member) {
                absorb(entity);
            }
        }

        for member in &members {
            if *member != canonical {
                self.entities.shift_remove(member);
            }
        }
        let merged = Entity {
            name: canonical.clone(),
            entity_type,
            description: merged_description.to_string(),
            modality: modality.expect("at least one member absorbed"),
            source_chunk_ids: chunk_ids,
            source_image_entities: image_sources,
            source_text_entities: text_sources,
        };
        self.entities.insert(canonical.clone(), merged);

        // Rewrite relations, dropping self-loops and exact duplicates.
        let is_member = |name: &str| members.iter().any(|m| m == name);
        let old = std::mem::take(&mut self.relations);
        let mut seen = BTreeSet::new();
        for mut relation in old {
            if is_member(&relation.source) {
                relation.source = canonical.clone();
            }
            if is_member(&relation.target) {
                relation.target = canonical.clone();
            }
            if relation.source == relation.target {
                continue;
            }
            let key = (
                relation.source.clone(),
                relation.target.clone(),
                relation.description.clone(),
            );
            if seen.insert(key) {
                self.relations.push(relation);
            }
        }
        Ok(())
    }

    /// Rename an entity, rewriting incident relations. If the new name
    /// already exists the two entities are merged.
    pub fn rename_entity(&mut self, from: &str, to: &str, description: &str) -> Result<()> {
        self.merge_entities(to, &[from], description)
    }

    /// Sort entities by name and relations by (source, target, description).
    /// Gives byte-identical serialized output regardless of build order.
    pub fn canonicalize(&mut self) {
        self.entities.sort_keys();
        self.relations
            .sort_by(|a, b| (&a.source, &a.target, &a.description).cmp(&(&b.source, &b.target, &b.description)));
    }

    /// Check that every relation endpoint names an existing entity.
    pub fn validate(&self) -> Result<()> {
        for relation in &self.relations {
            for endpoint in [&relation.source, &relation.target] {
                if !self.entities.contains_key(endpoint) {
                    return Err(Error::Validation(format!(
                        "relation endpoint `{endpoint}` has no entity"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Merge every entity and relation of `other` into this graph via
    /// upserts. Colliding names merge per upsert semantics.
    pub fn absorb(&mut self, other: &KnowledgeGraph) -> Result<()> {
        for entity in other.entities() {
            self.upsert_entity(entity.clone())?;
        }
        for relation in other.relations() {
            self.add_relation_lenient(relation.clone())?;
        }
        Ok(())
    }
}

fn union_into(dst: &mut Vec<String>, src: &[String]) {
    for item in src {
        if !dst.iter().any(|existing| existing == item) {
            dst.push(item.clone());
        }
    }
}
