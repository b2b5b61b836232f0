//! Deterministic scripted backend.
//!
//! Replies come from script rules (matched on template id, prompt
//! substrings, attached image names, or an exact prompt hash); anything
//! unscripted falls back to a reply derived from a seeded hash of the whole
//! request, so runs are reproducible byte for byte. Embeddings are either
//! exact-text overrides from the script or unit vectors derived from a
//! seeded hash of the text.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::{Backend, ChatRequest};
use crate::error::Result;

fn default_dim() -> usize {
    8
}

/// One canned reply and the conditions under which it fires.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplyRule {
    /// Restrict to one template; `None` matches any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    /// Every listed substring must appear in the rendered prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// Every listed substring must appear among the attached image paths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
    /// Exact SHA-256 (hex) of the rendered prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub reply: String,
}

impl ReplyRule {
    fn matches(&self, request: &ChatRequest) -> bool {
        if let Some(id) = &self.template_id {
            if id != request.template_id {
                return false;
            }
        }
        if let Some(hash) = &self.prompt_sha256 {
            if *hash != sha256_hex(request.prompt.as_bytes()) {
                return false;
            }
        }
        if !self.contains.iter().all(|s| request.prompt.contains(s.as_str())) {
            return false;
        }
        let joined_paths: String = request
            .images
            .iter()
            .map(|a| a.path.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join(" ");
        self.images.iter().all(|s| joined_paths.contains(s.as_str()))
    }
}

/// A full reply/embedding script, loadable from JSON.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub replies: Vec<ReplyRule>,
    /// Exact-text embedding overrides.
    #[serde(default)]
    pub embeddings: IndexMap<String, Vec<f64>>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&body)?)
    }
}

pub struct MockBackend {
    script: MockScript,
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            script: MockScript {
                embedding_dim: default_dim(),
                ..MockScript::default()
            },
            seed,
        }
    }

    pub fn with_script(seed: u64, script: MockScript) -> Self {
        let mut script = script;
        if script.embedding_dim == 0 {
            script.embedding_dim = default_dim();
        }
        MockBackend { script, seed }
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        if let Some(rule) = self.script.replies.iter().find(|r| r.matches(request)) {
            return Ok(rule.reply.clone());
        }
        // Unscripted: a stable digest of the full request, so identical
        // calls agree across runs and image order matters.
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(request.template_id.as_bytes());
        hasher.update(request.prompt.as_bytes());
        for attachment in request.images {
            hasher.update(attachment.digest.as_bytes());
        }
        let digest = hasher.finalize();
        Ok(format!("MOCK-REPLY-{}", hex_prefix(&digest, 16)))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|text| {
                if let Some(vector) = self.script.embeddings.get(text.as_str()) {
                    return Ok(vector.clone());
                }
                Ok(hash_embedding(self.seed, text, self.script.embedding_dim))
            })
            .collect()
    }
}

/// A unit vector seeded from (seed, text); identical inputs always embed
/// identically.
fn hash_embedding(seed: u64, text: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut rng_seed = [0u8; 8];
    rng_seed.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(rng_seed));
    let mut values: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    } else {
        values[0] = 1.0;
    }
    values
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex_prefix(&digest, 64)
}

pub(crate) fn hex_prefix(digest: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for byte in digest {
        if out.len() >= chars {
            break;
        }
        out.push_str(&format!("{byte:02x}"));
    }
    out.truncate(chars);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{DecodingParams, ImageAttachment};

    fn request<'a>(
        template_id: &'a str,
        prompt: &'a str,
        images: &'a [ImageAttachment],
        params: &'a DecodingParams,
    ) -> ChatRequest<'a> {
        ChatRequest {
            template_id,
            prompt,
            images,
            params,
        }
    }

    #[test]
    fn scripted_reply_wins_over_default() {
        let script = MockScript {
            replies: vec![ReplyRule {
                template_id: Some("entity_alignment".into()),
                contains: vec!["GIRL".into()],
                reply: "ALICE".into(),
                ..ReplyRule::default()
            }],
            ..MockScript::default()
        };
        let backend = MockBackend::with_script(7, script);
        let params = DecodingParams::default();
        let reply = backend
            .chat(&request("entity_alignment", "img_entity: GIRL", &[], &params))
            .unwrap();
        assert_eq!(reply, "ALICE");
        let other = backend
            .chat(&request("entity_alignment", "img_entity: DOG", &[], &params))
            .unwrap();
        assert!(other.starts_with("MOCK-REPLY-"));
    }

    #[test]
    fn default_replies_are_reproducible() {
        let a = MockBackend::new(42);
        let b = MockBackend::new(42);
        let params = DecodingParams::default();
        let req = request("query_text", "what is this?", &[], &params);
        assert_eq!(a.chat(&req).unwrap(), b.chat(&req).unwrap());
        let other_seed = MockBackend::new(43);
        assert_ne!(a.chat(&req).unwrap(), other_seed.chat(&req).unwrap());
    }

    #[test]
    fn image_order_changes_the_reply() {
        let backend = MockBackend::new(1);
        let params = DecodingParams::default();
        let a = ImageAttachment {
            path: "a.jpg".into(),
            digest: "digest-a".into(),
            bytes: Vec::new(),
        };
        let b = ImageAttachment {
            path: "b.jpg".into(),
            digest: "digest-b".into(),
            bytes: Vec::new(),
        };
        let ab = [a.clone(), b.clone()];
        let ba = [b, a];
        let reply_ab = backend.chat(&request("t", "p", &ab, &params)).unwrap();
        let reply_ba = backend.chat(&request("t", "p", &ba, &params)).unwrap();
        assert_ne!(reply_ab, reply_ba);
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let backend = MockBackend::new(5);
        let texts = vec!["alpha".to_string(), "alpha".to_string(), "beta".to_string()];
        let vectors = backend.embed(&texts).unwrap();
        assert_eq!(vectors[0], vectors[1]);
        assert_ne!(vectors[0], vectors[2]);
        let norm: f64 = vectors[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_override_is_honored() {
        let mut script = MockScript::default();
        script
            .embeddings
            .insert("ALICE: a person".into(), vec![1.0, 0.0, 0.0]);
        let backend = MockBackend::with_script(0, script);
        let out = backend.embed(&["ALICE: a person".to_string()]).unwrap();
        assert_eq!(out[0], vec![1.0, 0.0, 0.0]);
    }
}
