//! Uniform access to embedding, text-chat and vision-chat models.
//!
//! Every pipeline stage talks to a [`Gateway`], which renders prompt
//! templates, retries transient failures, caches embeddings, logs a
//! transcript, and dispatches to a [`Backend`] — either the HTTP backend or
//! the deterministic scripted mock.

mod http;
mod mock;
mod template;

pub use http::{HttpBackend, ModelEndpoint};
pub use mock::{MockBackend, MockScript, ReplyRule};
pub use template::{bindings, builtin_templates, PromptTemplate};

pub(crate) use mock::sha256_hex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use indexmap::IndexMap;
use serde::Serialize;
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};

/// Decoding parameters sent with every chat call. Defaults favor
/// reproducibility: greedy decoding, bounded output.
#[derive(Debug, Clone)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 2048,
        }
    }
}

/// A fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; zero-norm operands yield 0.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let denom = self.norm() * other.norm();
        if denom > 0.0 {
            dot / denom
        } else {
            0.0
        }
    }
}

/// An image queued for a vision call: raw bytes plus a content digest.
#[derive(Debug, Clone)]
pub struct ImageAttachment {
    pub path: PathBuf,
    pub digest: String,
    pub bytes: Vec<u8>,
}

impl ImageAttachment {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Input(format!("cannot read image {}: {e}", path.display()))
        })?;
        Ok(ImageAttachment {
            path: path.to_path_buf(),
            digest: sha256_hex(&bytes),
            bytes,
        })
    }

    pub fn data_url(&self) -> String {
        let ext = self
            .path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("jpeg");
        let mime = match ext {
            "jpg" | "jpeg" => "jpeg",
            other => other,
        };
        format!("data:image/{mime};base64,{}", BASE64.encode(&self.bytes))
    }
}

/// One fully rendered model request as the backend sees it.
pub struct ChatRequest<'a> {
    pub template_id: &'a str,
    pub prompt: &'a str,
    pub images: &'a [ImageAttachment],
    pub params: &'a DecodingParams,
}

/// Anything that can answer chat requests and embed text.
pub trait Backend: Send + Sync {
    /// Model identifier used in embedding cache keys.
    fn name(&self) -> &str;
    fn chat(&self, request: &ChatRequest) -> Result<String>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Chat,
    Vision,
    Embed,
}

/// In-memory record of one backend call, kept for transcript audits.
#[derive(Debug, Clone, Serialize)]
pub struct CallRecord {
    pub kind: CallKind,
    pub template_id: String,
    pub attempts: u32,
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    seq: u64,
    kind: CallKind,
    template_id: &'a str,
    bindings_digest: &'a str,
    reply_digest: &'a str,
    attempts: u32,
    latency_ms: u64,
}

struct GatewayState {
    embed_cache: HashMap<String, Vec<f64>>,
    cache_file: Option<std::fs::File>,
    transcript: Option<std::fs::File>,
    call_log: Vec<CallRecord>,
    seq: u64,
}

/// Counting semaphore bounding in-flight backend requests.
struct Semaphore {
    permits: Mutex<u32>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: u32) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    templates: HashMap<String, PromptTemplate>,
    params: DecodingParams,
    max_retries: u32,
    semaphore: Semaphore,
    state: Mutex<GatewayState>,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        let templates = builtin_templates()
            .into_iter()
            .map(|t| (t.template_id.clone(), t))
            .collect();
        Gateway {
            backend,
            templates,
            params: DecodingParams::default(),
            max_retries: 2,
            semaphore: Semaphore::new(4),
            state: Mutex::new(GatewayState {
                embed_cache: HashMap::new(),
                cache_file: None,
                transcript: None,
                call_log: Vec::new(),
                seq: 0,
            }),
        }
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_concurrency(mut self, permits: u32) -> Self {
        self.semaphore = Semaphore::new(permits.max(1));
        self
    }

    pub fn with_params(mut self, params: DecodingParams) -> Self {
        self.params = params;
        self
    }

    /// Persist the embedding cache under `dir` (one append-only NDJSON
    /// file), reloading whatever a previous run left there.
    pub fn with_cache_dir(self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("embeddings.ndjson");
        let mut cache = HashMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(&path)?.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: (String, Vec<f64>) = serde_json::from_str(line)?;
                cache.insert(entry.0, entry.1);
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)?;
        {
            let mut state = self.state.lock().unwrap();
            state.embed_cache = cache;
            state.cache_file = Some(file);
        }
        Ok(self)
    }

    /// Log every call as one NDJSON line to `path`.
    pub fn with_transcript(self, path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        self.state.lock().unwrap().transcript = Some(file);
        Ok(self)
    }

    /// Add or replace a template (used by tests and custom pipelines).
    pub fn register_template(&mut self, template: PromptTemplate) {
        self.templates.insert(template.template_id.clone(), template);
    }

    pub fn template(&self, template_id: &str) -> Result<&PromptTemplate> {
        self.templates.get(template_id).ok_or_else(|| {
            Error::Template(format!("unknown template `{template_id}`"))
        })
    }

    /// Calls made so far, in order.
    pub fn call_log(&self) -> Vec<CallRecord> {
        self.state.lock().unwrap().call_log.clone()
    }

    pub fn chat(&self, template_id: &str, bindings: &IndexMap<String, String>) -> Result<String> {
        self.dispatch(template_id, bindings, &[])
    }

    /// As [`chat`](Self::chat) with images attached in request order.
    /// Requires at least one image, each readable, checked before any
    /// backend traffic.
    pub fn vision_chat(
        &self,
        template_id: &str,
        bindings: &IndexMap<String, String>,
        images: &[PathBuf],
    ) -> Result<String> {
        if images.is_empty() {
            return Err(Error::Input("vision call requires at least one image".into()));
        }
        let attachments = images
            .iter()
            .map(|p| ImageAttachment::load(p))
            .collect::<Result<Vec<_>>>()?;
        self.dispatch_with_attachments(template_id, bindings, &attachments)
    }

    fn dispatch(
        &self,
        template_id: &str,
        bindings: &IndexMap<String, String>,
        attachments: &[ImageAttachment],
    ) -> Result<String> {
        self.dispatch_with_attachments(template_id, bindings, attachments)
    }

    fn dispatch_with_attachments(
        &self,
        template_id: &str,
        bindings: &IndexMap<String, String>,
        attachments: &[ImageAttachment],
    ) -> Result<String> {
        let prompt = self.template(template_id)?.render(bindings)?;
        let request = ChatRequest {
            template_id,
            prompt: &prompt,
            images: attachments,
            params: &self.params,
        };
        let started = Instant::now();
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            let result = {
                let _permit = self.semaphore.acquire();
                self.backend.chat(&request)
            };
            match result {
                Ok(reply) => break Ok(reply),
                Err(e) if attempts <= self.max_retries => {
                    log::warn!("chat `{template_id}` attempt {attempts} failed: {e}; retrying");
                }
                Err(e) => {
                    break Err(Error::Gateway {
                        attempts,
                        message: format!("chat `{template_id}`: {e}"),
                    })
                }
            }
        };
        let kind = if attachments.is_empty() {
            CallKind::Chat
        } else {
            CallKind::Vision
        };
        let bindings_digest = sha256_hex(serde_json::to_string(bindings)?.as_bytes());
        let reply_digest = match &outcome {
            Ok(reply) => sha256_hex(reply.as_bytes()),
            Err(_) => String::new(),
        };
        self.record(
            kind,
            template_id,
            &bindings_digest,
            &reply_digest,
            attempts,
            started.elapsed().as_millis() as u64,
        );
        outcome
    }

    /// Embed each text, serving repeats from the cache. All returned
    /// vectors share one dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Input("embed requires at least one text".into()));
        }
        if let Some(empty) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Input(format!("embed text at index {empty} is empty")));
        }
        let model = self.backend.name().to_string();
        let cache_key = |text: &str| sha256_hex(format!("{model}\u{0}{text}").as_bytes());

        // Collect texts not in the cache, deduplicated, preserving order.
        let mut misses: Vec<String> = Vec::new();
        {
            let state = self.state.lock().unwrap();
            for text in texts {
                let key = cache_key(text);
                if !state.embed_cache.contains_key(&key)
                    && !misses.iter().any(|m| m == text)
                {
                    misses.push(text.clone());
                }
            }
        }

        if !misses.is_empty() {
            let started = Instant::now();
            let mut attempts = 0;
            let fresh = loop {
                attempts += 1;
                let result = {
                    let _permit = self.semaphore.acquire();
                    self.backend.embed(&misses)
                };
                match result {
                    Ok(vectors) => break vectors,
                    Err(e) if attempts <= self.max_retries => {
                        log::warn!("embed attempt {attempts} failed: {e}; retrying");
                    }
                    Err(e) => {
                        return Err(Error::Gateway {
                            attempts,
                            message: format!("embed: {e}"),
                        })
                    }
                }
            };
            if fresh.len() != misses.len() {
                return Err(Error::Gateway {
                    attempts,
                    message: format!(
                        "embedding count mismatch: sent {}, received {}",
                        misses.len(),
                        fresh.len()
                    ),
                });
            }
            let mut state = self.state.lock().unwrap();
            for (text, vector) in misses.iter().zip(fresh) {
                let key = cache_key(text);
                if let Some(file) = state.cache_file.as_mut() {
                    let line = serde_json::to_string(&(&key, &vector))?;
                    writeln!(file, "{line}")?;
                }
                state.embed_cache.insert(key, vector);
            }
            drop(state);
            self.record(CallKind::Embed, "", "", "", attempts, started.elapsed().as_millis() as u64);
        }

        let state = self.state.lock().unwrap();
        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for text in texts {
            let values = state.embed_cache[&cache_key(text)].clone();
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Gateway {
                        attempts: 1,
                        message: format!(
                            "embedding dim mismatch: expected {d}, got {} for a cached entry",
                            values.len()
                        ),
                    })
                }
                _ => {}
            }
            out.push(EmbeddingVector { values });
        }
        Ok(out)
    }

    /// Embed one text (cache-backed convenience wrapper).
    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed(std::slice::from_ref(&text.to_string()))?.remove(0))
    }

    fn record(
        &self,
        kind: CallKind,
        template_id: &str,
        bindings_digest: &str,
        reply_digest: &str,
        attempts: u32,
        latency_ms: u64,
    ) {
        let mut state = self.state.lock().unwrap();
        state.seq += 1;
        let seq = state.seq;
        if let Some(file) = state.transcript.as_mut() {
            let line = TranscriptLine {
                seq,
                kind,
                template_id,
                bindings_digest: &bindings_digest[..bindings_digest.len().min(16)],
                reply_digest: &reply_digest[..reply_digest.len().min(16)],
                attempts,
                latency_ms,
            };
            if let Ok(body) = serde_json::to_string(&line) {
                let _ = writeln!(file, "{body}");
            }
        }
        state.call_log.push(CallRecord {
            kind,
            template_id: template_id.to_string(),
            attempts,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn mock_gateway() -> Gateway {
        Gateway::new(Box::new(MockBackend::new(0)))
    }

    #[test]
    fn embed_same_text_twice_is_identical() {
        let gateway = mock_gateway();
        let out = gateway
            .embed(&["a".to_string(), "a".to_string()])
            .unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn embed_self_cosine_is_one() {
        let gateway = mock_gateway();
        let v = gateway.embed_one("t").unwrap();
        assert!((v.cosine(&v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embed_rejects_empty_input() {
        let gateway = mock_gateway();
        assert!(matches!(gateway.embed(&[]), Err(Error::Input(_))));
        assert!(matches!(
            gateway.embed(&["ok".into(), "  ".into()]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cached_embed_equals_fresh_call() {
        let dir = tempfile::tempdir().unwrap();
        let text = vec!["repeatable".to_string()];
        let first = {
            let gateway = mock_gateway().with_cache_dir(dir.path()).unwrap();
            gateway.embed(&text).unwrap()
        };
        // A new gateway over the same cache dir must serve the stored
        // vector, and it must equal what a cacheless gateway computes.
        let reloaded = mock_gateway()
            .with_cache_dir(dir.path())
            .unwrap()
            .embed(&text)
            .unwrap();
        let fresh = mock_gateway().embed(&text).unwrap();
        assert_eq!(first, reloaded);
        assert_eq!(first, fresh);
    }

    #[test]
    fn missing_binding_is_a_template_error() {
        let gateway = mock_gateway();
        let err = gateway
            .chat("query_text", &bindings([("query", "q")]))
            .unwrap_err();
        assert!(matches!(err, Error::Template(_)));
        assert!(err.to_string().contains("context"));
    }

    #[test]
    fn vision_requires_images() {
        let gateway = mock_gateway();
        let err = gateway
            .vision_chat("query_vision", &bindings([("query", "q"), ("context", "c")]), &[])
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn unreadable_image_fails_before_any_call() {
        let gateway = mock_gateway();
        let err = gateway
            .vision_chat(
                "query_vision",
                &bindings([("query", "q"), ("context", "c")]),
                &[PathBuf::from("/nonexistent/image.jpg")],
            )
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(gateway.call_log().is_empty());
    }

    /// Fails `failures` times, then answers.
    struct FlakyBackend {
        inner: MockBackend,
        failures: AtomicU32,
    }

    impl Backend for FlakyBackend {
        fn name(&self) -> &str {
            "flaky"
        }

        fn chat(&self, request: &ChatRequest) -> Result<String> {
            if self.failures.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |f| {
                if f > 0 {
                    Some(f - 1)
                } else {
                    None
                }
            }).is_ok()
            {
                return Err(Error::Gateway {
                    attempts: 1,
                    message: "simulated timeout".into(),
                });
            }
            self.inner.chat(request)
        }

        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            self.inner.embed(texts)
        }
    }

    #[test]
    fn retry_succeeds_and_logs_attempts() {
        let gateway = Gateway::new(Box::new(FlakyBackend {
            inner: MockBackend::new(0),
            failures: AtomicU32::new(1),
        }));
        let reply = gateway
            .chat("query_text", &bindings([("query", "q"), ("context", "c")]))
            .unwrap();
        assert!(reply.starts_with("MOCK-REPLY-"));
        let log = gateway.call_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].attempts, 2);
    }

    #[test]
    fn exhausted_retries_carry_attempt_count() {
        let gateway = Gateway::new(Box::new(FlakyBackend {
            inner: MockBackend::new(0),
            failures: AtomicU32::new(10),
        }))
        .with_max_retries(2);
        let err = gateway
            .chat("query_text", &bindings([("query", "q"), ("context", "c")]))
            .unwrap_err();
        match err {
            Error::Gateway { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected gateway error, got {other:?}"),
        }
    }

    #[test]
    fn transcript_lines_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.ndjson");
        let gateway = mock_gateway().with_transcript(&path).unwrap();
        gateway
            .chat("query_text", &bindings([("query", "q"), ("context", "c")]))
            .unwrap();
        gateway.embed(&["x".to_string()]).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"template_id\":\"query_text\""));
        assert!(lines[1].contains("\"kind\":\"embed\""));
    }
}
