//! Plain text in, chunk store and text knowledge graph out: split a
//! document into token-bounded chunks, then run entity/relation
//! extraction over each chunk and fold the records into one graph.

use crate::error::{Error, Result};
use crate::gateway::{bindings, sha256_hex, Gateway};
use crate::img2graph::{parse_records, ExtractionRecord, RecordGrammar, DEFAULT_ENTITY_TYPES};
use crate::kg::store::TextChunkStore;
use crate::kg::{Entity, GraphKind, KnowledgeGraph, Modality, Relation, TextChunk};
use crate::token::{approx_tokens, TOKEN_SAFETY_FACTOR};

/// Default chunk budget in approximate tokens.
pub const DEFAULT_CHUNK_TOKENS: usize = 500;

/// Split `text` into chunks of at most `max_tokens` approximate tokens,
/// breaking on whitespace. Chunk ids are content-addressed
/// (`chunk-<hash prefix>`); a duplicated chunk body gets its order
/// index appended so every chunk keeps a distinct id.
pub fn chunk_text(text: &str, max_tokens: usize) -> Result<TextChunkStore> {
    if max_tokens == 0 {
        return Err(Error::Parameter("chunk size must be positive".into()));
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let words_per_chunk = ((max_tokens as f64 / TOKEN_SAFETY_FACTOR).floor() as usize).max(1);
    let mut store = TextChunkStore::new();
    for (order_index, window) in words.chunks(words_per_chunk).enumerate() {
        let content = window.join(" ");
        let mut chunk_id = format!("chunk-{}", &sha256_hex(content.as_bytes())[..32]);
        if store.contains_key(&chunk_id) {
            chunk_id = format!("{chunk_id}-{order_index}");
        }
        store.insert(
            chunk_id.clone(),
            TextChunk {
                chunk_id,
                order_index,
                content: content.clone(),
                token_count: approx_tokens(&content),
            },
        );
    }
    Ok(store)
}

/// Extract a text knowledge graph, one model call per chunk in document
/// order. A chunk whose call or reply fails is reported and skipped;
/// entities repeating across chunks merge into one node with all source
/// chunks recorded.
pub fn build_text_kg(
    gateway: &Gateway,
    chunks: &TextChunkStore,
    grammar: &RecordGrammar,
    entity_types: &str,
) -> Result<(KnowledgeGraph, Vec<String>)> {
    grammar.validate()?;
    let mut graph = KnowledgeGraph::new(GraphKind::TextKg);
    let mut diagnostics = Vec::new();

    let mut ordered: Vec<&TextChunk> = chunks.values().collect();
    ordered.sort_by_key(|c| c.order_index);
    for chunk in ordered {
        let reply = gateway.chat(
            "text_extraction",
            &bindings([
                ("entity_types", entity_types),
                ("tuple_delimiter", grammar.tuple_delimiter.as_str()),
                ("record_delimiter", grammar.record_delimiter.as_str()),
                ("completion_delimiter", grammar.completion_delimiter.as_str()),
                ("input_text", chunk.content.as_str()),
            ]),
        );
        let reply = match reply {
            Ok(reply) => reply,
            Err(err) => {
                diagnostics.push(format!("{}: extraction call failed: {err}", chunk.chunk_id));
                continue;
            }
        };
        let (records, chunk_diagnostics) = parse_records(&reply, grammar);
        diagnostics.extend(
            chunk_diagnostics
                .into_iter()
                .map(|d| format!("{}: {d}", chunk.chunk_id)),
        );
        for record in &records {
            if let ExtractionRecord::Entity {
                name,
                entity_type,
                description,
            } = record
            {
                graph.upsert_entity(
                    Entity::new(name, entity_type, description, Modality::Text)
                        .with_sources(&[chunk.chunk_id.as_str()]),
                )?;
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
                if graph.add_relation_lenient(relation).is_err() {
                    diagnostics.push(format!(
                        "{}: relation {source} -> {target} references an unknown entity",
                        chunk.chunk_id
                    ));
                }
            }
        }
    }
    Ok((graph, diagnostics))
}

/// `chunk_text` + `build_text_kg` with the default grammar and types.
pub fn index_text(
    gateway: &Gateway,
    text: &str,
    max_tokens: usize,
) -> Result<(TextChunkStore, KnowledgeGraph, Vec<String>)> {
    let chunks = chunk_text(text, max_tokens)?;
    let (graph, diagnostics) = build_text_kg(
        gateway,
        &chunks,
        &RecordGrammar::default(),
        DEFAULT_ENTITY_TYPES,
    )?;
    Ok((chunks, graph, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScript, ReplyRule};

    fn scripted(rules: Vec<ReplyRule>) -> Gateway {
        let script = MockScript {
            replies: rules,
            ..MockScript::default()
        };
        Gateway::new(Box::new(MockBackend::with_script(0, script)))
    }

    fn rule(contains: &str, reply: &str) -> ReplyRule {
        ReplyRule {
            template_id: Some("text_extraction".to_string()),
            contains: vec![contains.to_string()],
            reply: reply.to_string(),
            ..ReplyRule::default()
        }
    }

    #[test]
    fn chunks_respect_the_token_budget() {
        let text = (0..1000).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let store = chunk_text(&text, 500).unwrap();
        // 500 tokens / 1.3 = 384 words per chunk; 1000 words → 3 chunks.
        assert_eq!(store.len(), 3);
        for chunk in store.values() {
            assert!(chunk.token_count <= 500, "{} tokens", chunk.token_count);
        }
        let orders: Vec<usize> = store.values().map(|c| c.order_index).collect();
        assert_eq!(orders, vec![0, 1, 2]);
        let total_words: usize = store
            .values()
            .map(|c| c.content.split_whitespace().count())
            .sum();
        assert_eq!(total_words, 1000);
    }

    #[test]
    fn chunk_ids_are_stable_across_runs() {
        let text = "one two three four five";
        let a = chunk_text(text, 10).unwrap();
        let b = chunk_text(text, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.keys().all(|k| k.starts_with("chunk-") && k.len() == 38));
    }

    #[test]
    fn duplicate_chunk_bodies_keep_distinct_ids() {
        // Two-word budget (floor(3/1.3) = 2) over a repeating text.
        let store = chunk_text("ha ha ha ha", 3).unwrap();
        assert_eq!(store.len(), 2);
        let ids: Vec<&String> = store.keys().collect();
        assert_ne!(ids[0], ids[1]);
        assert!(ids[1].ends_with("-1"));
    }

    #[test]
    fn empty_text_yields_no_chunks() {
        assert!(chunk_text("   \n\t ", 500).unwrap().is_empty());
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(matches!(chunk_text("hi", 0), Err(Error::Parameter(_))));
    }

    const ALICE_REPLY: &str = concat!(
        r#"("entity"<|>"ALICE"<|>"person"<|>"A curious girl.")##"#,
        "\n",
        r#"("entity"<|>"RABBIT"<|>"organism"<|>"A white rabbit with a watch.")##"#,
        "\n",
        r#"("relationship"<|>"ALICE"<|>"RABBIT"<|>"Alice follows the rabbit."<|>9)##"#,
        "\n",
        "<|COMPLETE|>"
    );

    #[test]
    fn extraction_builds_entities_and_relations() {
        let gateway = scripted(vec![rule("Alice saw a rabbit", ALICE_REPLY)]);
        let (chunks, graph, diagnostics) =
            index_text(&gateway, "Alice saw a rabbit dart past.", 500).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(diagnostics.is_empty());
        assert_eq!(graph.entity_count(), 2);
        assert_eq!(graph.relations().len(), 1);
        let alice = graph.entity("ALICE").unwrap();
        assert_eq!(alice.modality, Modality::Text);
        assert_eq!(alice.source_chunk_ids, vec![chunks.keys().next().unwrap().clone()]);
    }

    #[test]
    fn repeated_entity_across_chunks_merges_sources() {
        let first = r#"("entity"<|>"ALICE"<|>"person"<|>"A curious girl.")##<|COMPLETE|>"#;
        let second = r#"("entity"<|>"ALICE"<|>"person"<|>"Now quite tall.")##<|COMPLETE|>"#;
        let gateway = scripted(vec![rule("girl-text", first), rule("tall-text", second)]);
        // Budget of 3 tokens → 2 words per chunk → two chunks.
        let chunks = chunk_text("girl-text words tall-text words", 3).unwrap();
        let (graph, diagnostics) =
            build_text_kg(&gateway, &chunks, &RecordGrammar::default(), DEFAULT_ENTITY_TYPES)
                .unwrap();
        assert!(diagnostics.is_empty());
        let alice = graph.entity("ALICE").unwrap();
        assert_eq!(alice.source_chunk_ids.len(), 2);
        assert!(alice.description.contains("curious"));
        assert!(alice.description.contains("tall"));
    }

    #[test]
    fn relation_to_unknown_entity_is_reported_not_fatal() {
        let reply = r#"("relationship"<|>"ALICE"<|>"GHOST"<|>"unknown pair"<|>5)##<|COMPLETE|>"#;
        let gateway = scripted(vec![rule("", reply)]);
        let (_, graph, diagnostics) = index_text(&gateway, "some text", 500).unwrap();
        assert!(graph.relations().is_empty());
        assert!(diagnostics.iter().any(|d| d.contains("unknown entity")));
    }

    #[test]
    fn unscripted_reply_degrades_to_empty_graph_with_diagnostics() {
        let gateway = Gateway::new(Box::new(MockBackend::new(0)));
        let (_, graph, diagnostics) = index_text(&gateway, "some text here", 500).unwrap();
        assert!(graph.is_empty());
        assert!(diagnostics.iter().any(|d| d.contains("no records")));
    }

    #[test]
    fn extraction_is_deterministic() {
        let gateway = scripted(vec![rule("", ALICE_REPLY)]);
        let text = "Alice saw a rabbit dart past.";
        let first = index_text(&gateway, text, 500).unwrap();
        let second = index_text(&gateway, text, 500).unwrap();
        assert_eq!(first.0, second.0);
        assert_eq!(first.1, second.1);
    }
}
