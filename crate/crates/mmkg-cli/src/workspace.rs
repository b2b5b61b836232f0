//! Workspace layout and configuration.
//!
//! A workspace is a directory holding `manifest.json` plus every artifact
//! the pipeline stages read and write. The manifest names the document,
//! points at its source text and image assets, fixes the seed and model
//! backends, and carries default parameters for candidate generation and
//! retrieval.

use std::path::{Path, PathBuf};

use mmkg_core::candidate::CandidateParams;
use mmkg_core::gateway::{Backend, Gateway, HttpBackend, MockBackend, MockScript, ModelEndpoint};
use mmkg_core::ingest::DEFAULT_CHUNK_TOKENS;
use mmkg_core::kg::store::StoreKind;
use mmkg_core::retrieval::RetrievalConfig;
use mmkg_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Model backend configuration. With no endpoints the deterministic mock
/// backend is used, optionally primed with a reply script.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelsConfig {
    /// Reply script for the mock backend, relative to the workspace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat: Option<ModelEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision: Option<ModelEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<ModelEndpoint>,
}

fn default_format_version() -> u32 {
    1
}

fn default_assets_root() -> String {
    ".".to_string()
}

fn default_chunk_tokens() -> usize {
    DEFAULT_CHUNK_TOKENS
}

/// The persistent configuration of one workspace (`manifest.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkspaceManifest {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub document_id: String,
    /// Source text file for `index-text`, relative to the workspace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_text: Option<String>,
    /// Directory that image paths in the image-data store are relative
    /// to, itself relative to the workspace.
    #[serde(default = "default_assets_root")]
    pub assets_root: String,
    /// Seed for the mock backend and candidate generation; `--seed`
    /// overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Token budget per text chunk.
    #[serde(default = "default_chunk_tokens")]
    pub chunk_tokens: usize,
    #[serde(default)]
    pub candidates: CandidateParams,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub models: ModelsConfig,
}

/// An opened workspace: its root directory plus the parsed manifest.
pub struct Workspace {
    pub root: PathBuf,
    pub manifest: WorkspaceManifest,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::Input(format!(
                "{} is not a workspace: missing {}",
                root.display(),
                MANIFEST_FILE
            )));
        }
        let body = std::fs::read_to_string(&manifest_path)?;
        let manifest: WorkspaceManifest = serde_json::from_str(&body).map_err(|e| {
            Error::Input(format!("{} is invalid: {e}", manifest_path.display()))
        })?;
        if manifest.format_version != 1 {
            return Err(Error::Input(format!(
                "{} has unsupported format_version {}",
                manifest_path.display(),
                manifest.format_version
            )));
        }
        Ok(Workspace {
            root: root.to_path_buf(),
            manifest,
        })
    }

    /// Resolve a manifest-relative path against the workspace root.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Directory image paths are relative to.
    pub fn assets_root(&self) -> PathBuf {
        self.resolve(&self.manifest.assets_root)
    }

    pub fn store_path(&self, kind: StoreKind) -> PathBuf {
        kind.path_in(&self.root)
    }

    pub fn mmkg_path(&self) -> PathBuf {
        self.root.join("mmkg.json")
    }

    pub fn vdb_path(&self) -> PathBuf {
        self.root.join("vdb.json")
    }

    pub fn graphml_path(&self) -> PathBuf {
        self.root.join("mmkg.graphml")
    }

    pub fn reports_path(&self) -> PathBuf {
        self.root.join("fusion_reports.json")
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.root.join("context_bundle.json")
    }

    pub fn trace_path(&self) -> PathBuf {
        self.root.join("query_trace.json")
    }

    /// Completion marker for a per-item stage step, e.g.
    /// `markers/fuse.image_2.done`.
    pub fn marker_path(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join("markers").join(format!("{stage}.{key}.done"))
    }

    pub fn write_marker(&self, stage: &str, key: &str) -> Result<()> {
        let path = self.marker_path(stage, key);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, b"done\n")?;
        Ok(())
    }

    /// Remove every completion marker of `stage` so a fresh (non-resume)
    /// run starts from scratch.
    pub fn clear_markers(&self, stage: &str) -> Result<()> {
        let dir = self.root.join("markers");
        if !dir.is_dir() {
            return Ok(());
        }
        let prefix = format!("{stage}.");
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            if let Some(name) = entry.file_name().to_str() {
                if name.starts_with(&prefix) && name.ends_with(".done") {
                    std::fs::remove_file(entry.path())?;
                }
            }
        }
        Ok(())
    }

    /// Error unless every listed artifact file exists.
    pub fn require(&self, paths: &[PathBuf]) -> Result<()> {
        let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingArtifacts(missing))
        }
    }

    /// Effective seed: the `--seed` flag, else the manifest's.
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.unwrap_or(self.manifest.seed)
    }

    /// Candidate parameters: manifest defaults with the global flags
    /// applied on top. The effective seed always wins over the manifest's
    /// `candidates.seed` so one seed governs the whole run.
    pub fn candidate_params(
        &self,
        strategy: Option<mmkg_core::candidate::Strategy>,
        seed: Option<u64>,
    ) -> CandidateParams {
        let mut params = self.manifest.candidates.clone();
        if let Some(strategy) = strategy {
            params.strategy = strategy;
        }
        params.seed = self.seed(seed);
        params
    }

    /// Build the model gateway. Endpoints in the manifest select the HTTP
    /// backend unless `--mock` forces the mock; without endpoints the
    /// manifest must script the mock (or `--mock` must be passed). Every
    /// gateway logs to `transcript.ndjson` and caches embeddings under
    /// `cache/` in the workspace.
    pub fn gateway(&self, mock: bool, seed: Option<u64>) -> Result<Gateway> {
        let models = &self.manifest.models;
        let use_mock = mock || models.chat.is_none();
        if use_mock && !mock && models.mock_script.is_none() {
            return Err(Error::Parameter(
                "no model endpoints configured; pass --mock to use the mock backend".to_string(),
            ));
        }
        let backend: Box<dyn Backend> = if use_mock {
            let seed = self.seed(seed);
            match &models.mock_script {
                Some(path) => {
                    let script = MockScript::load(&self.resolve(path))?;
                    Box::new(MockBackend::with_script(seed, script))
                }
                None => Box::new(MockBackend::new(seed)),
            }
        } else {
            let chat = models.chat.clone().expect("chat endpoint present");
            let embed = models.embed.clone().ok_or_else(|| {
                Error::Parameter(
                    "models.embed endpoint is required alongside models.chat".to_string(),
                )
            })?;
            Box::new(HttpBackend::new(chat, models.vision.clone(), embed)?)
        };
        Gateway::new(backend)
            .with_cache_dir(&self.root.join("cache"))?
            .with_transcript(&self.root.join("transcript.ndjson"))
    }
}
