//! Prompt templates with `{name}` placeholders.
//!
//! A placeholder is `{` + identifier + `}`; braces followed by anything
//! else (JSON examples, format descriptions) are left untouched. Rendering
//! substitutes every placeholder in a single pass, so placeholder-like text
//! inside bound values is never re-expanded.

use indexmap::IndexMap;
use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_bindings: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(template_id: &str, body: &str) -> Self {
        PromptTemplate {
            template_id: template_id.to_string(),
            required_bindings: scan_placeholders(body),
            body: body.to_string(),
        }
    }

    /// Substitute all placeholders. Every placeholder in the body must be
    /// bound; a missing one is a template error naming the binding.
    pub fn render(&self, bindings: &IndexMap<String, String>) -> Result<String> {
        for required in &self.required_bindings {
            if !bindings.contains_key(required) {
                return Err(Error::Template(format!(
                    "template `{}` is missing binding `{required}`",
                    self.template_id
                )));
            }
        }
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some((before, name, after)) = next_placeholder(rest) {
            out.push_str(before);
            out.push_str(&bindings[name]);
            rest = after;
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Find the next `{identifier}` occurrence, returning (text before it, the
/// identifier, text after it).
fn next_placeholder(text: &str) -> Option<(&str, &str, &str)> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while let Some(offset) = text[i..].find('{') {
        let open = i + offset;
        let start = open + 1;
        let mut end = start;
        while end < bytes.len()
            && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
        {
            end += 1;
        }
        if end > start && end < bytes.len() && bytes[end] == b'}' {
            return Some((&text[..open], &text[start..end], &text[end + 1..]));
        }
        i = open + 1;
    }
    None
}

fn scan_placeholders(body: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let mut rest = body;
    while let Some((_, name, after)) = next_placeholder(rest) {
        names.insert(name.to_string());
        rest = after;
    }
    names
}

/// The built-in templates every pipeline stage renders through.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    [
        (
            "feature_block_description",
            include_str!("../prompts/feature_block_description.txt"),
        ),
        ("visual_extraction", include_str!("../prompts/visual_extraction.txt")),
        ("block_alignment", include_str!("../prompts/block_alignment.txt")),
        ("entity_alignment", include_str!("../prompts/entity_alignment.txt")),
        ("enhance_entities", include_str!("../prompts/enhance_entities.txt")),
        ("entity_fusion", include_str!("../prompts/entity_fusion.txt")),
        ("duplicate_entities", include_str!("../prompts/duplicate_entities.txt")),
        (
            "merge_mllm_responses",
            include_str!("../prompts/merge_mllm_responses.txt"),
        ),
        ("final_integration", include_str!("../prompts/final_integration.txt")),
        ("text_extraction", include_str!("../prompts/text_extraction.txt")),
        ("relation_weight", include_str!("../prompts/relation_weight.txt")),
        ("cluster_select", include_str!("../prompts/cluster_select.txt")),
        (
            "llm_direct_candidates",
            include_str!("../prompts/llm_direct_candidates.txt"),
        ),
        ("query_text", include_str!("../prompts/query_text.txt")),
        ("query_vision", include_str!("../prompts/query_vision.txt")),
    ]
    .into_iter()
    .map(|(id, body)| PromptTemplate::new(id, body))
    .collect()
}

/// Convenience macro-free binding-map construction.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> IndexMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
