//! Cross-modal entity-linking benchmark: load a dataset of documents
//! with gold image-to-text pairings, run candidate generation plus
//! alignment over each, and score micro/macro accuracy per domain.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::candidate::{
    context_entity_pool, embedding_text, generate_candidates, CandidateParams, Strategy,
};
use crate::error::{Error, Result};
use crate::fusion::{align_entity, window_text};
use crate::gateway::Gateway;
use crate::kg::store::{
    load_graph, load_ground_truth, load_image_data, load_image_graphs, load_text_chunks,
    AlignmentStore, ImageDataStore, ImageKgStore, MergedEntityStore, StoreKind, TextChunkStore,
};
use crate::kg::{canonical_name, AlignmentRecord, KnowledgeGraph};

/// The benchmark's document domains, in report order.
pub const DOMAINS: [&str; 3] = ["news", "academia", "novel"];

fn domain_heading(domain: &str) -> &str {
    match domain {
        "news" => "News",
        "academia" => "Aca.",
        "novel" => "Nov.",
        other => other,
    }
}

/// Row label for a strategy in the result table.
pub fn method_label(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::Spectral => "Spec",
        Strategy::Dbscan => "DB",
        Strategy::Kmeans => "KM",
        Strategy::Pagerank => "PR",
        Strategy::Leiden => "Lei",
        Strategy::Embedding => "Emb",
        Strategy::LlmDirect => "LLM",
    }
}

/// One benchmark document: its stores, loaded and validated.
#[derive(Debug, Clone)]
pub struct CmelDocument {
    pub doc_id: String,
    pub domain: String,
    pub dir: PathBuf,
    pub text_kg: KnowledgeGraph,
    pub image_kgs: ImageKgStore,
    pub images: ImageDataStore,
    pub chunks: TextChunkStore,
    pub ground_truth: MergedEntityStore,
}

impl CmelDocument {
    /// Load one document directory; every store file must exist and parse.
    pub fn load(dir: &Path, domain: &str, doc_id: &str) -> Result<Self> {
        let required = [
            StoreKind::ChunkKg,
            StoreKind::ImageKg,
            StoreKind::ImageData,
            StoreKind::TextChunks,
            StoreKind::GroundTruth,
        ];
        let missing: Vec<PathBuf> = required
            .iter()
            .map(|kind| kind.path_in(dir))
            .filter(|path| !path.is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts(missing));
        }
        Ok(CmelDocument {
            doc_id: doc_id.to_string(),
            domain: domain.to_string(),
            dir: dir.to_path_buf(),
            text_kg: load_graph(&StoreKind::ChunkKg.path_in(dir))?,
            image_kgs: load_image_graphs(&StoreKind::ImageKg.path_in(dir))?,
            images: load_image_data(&StoreKind::ImageData.path_in(dir))?,
            chunks: load_text_chunks(&StoreKind::TextChunks.path_in(dir))?,
            ground_truth: load_ground_truth(&StoreKind::GroundTruth.path_in(dir))?,
        })
    }
}

/// A dataset laid out as `<root>/<domain>/<doc_id>/<store files>`.
#[derive(Debug, Clone)]
pub struct CmelDataset {
    pub documents: Vec<CmelDocument>,
}

impl CmelDataset {
    /// Load every document under the known domain directories, in
    /// domain order then document-name order. Directories outside the
    /// domain set are ignored so a dataset can carry a README.
    pub fn load(root: &Path) -> Result<Self> {
        let mut documents = Vec::new();
        for domain in DOMAINS {
            let domain_dir = root.join(domain);
            if !domain_dir.is_dir() {
                continue;
            }
            let mut doc_dirs: Vec<PathBuf> = std::fs::read_dir(&domain_dir)?
                .filter_map(|entry| entry.ok())
                .map(|entry| entry.path())
                .filter(|path| path.is_dir())
                .collect();
            doc_dirs.sort();
            for dir in doc_dirs {
                let doc_id = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                documents.push(CmelDocument::load(&dir, domain, &doc_id)?);
            }
        }
        if documents.is_empty() {
            return Err(Error::Input(format!(
                "no documents found under {} (expected {}/<doc_id>/ directories)",
                root.display(),
                DOMAINS.join("|"),
            )));
        }
        Ok(CmelDataset { documents })
    }
}

/// Micro and macro accuracy over some document set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyPair {
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_avg: f64,
}

/// Raw correct/total counts for one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DocScore {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_domain: IndexMap<String, AccuracyPair>,
    pub overall: AccuracyPair,
    pub per_document: IndexMap<String, DocScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// One document's predictions next to its gold pairings, both keyed by
/// image.
#[derive(Debug, Clone)]
pub struct DocEvaluation {
    pub doc_id: String,
    pub domain: String,
    pub predictions: AlignmentStore,
    pub gold: MergedEntityStore,
}

/// Score one document. A prediction is correct when its text entity is
/// among the gold source text entities for that image entity
/// (case-insensitive); a no-match prediction is correct when the image
/// entity has no gold pairing. Predictions for image entities absent
/// from the gold records are incorrect and reported.
fn score_document(doc: &DocEvaluation) -> (DocScore, Vec<String>) {
    let mut score = DocScore::default();
    let mut warnings = Vec::new();
    for (image_key, predictions) in &doc.predictions {
        // Acceptable text entities per gold image entity, lowercased.
        let mut accepted: IndexMap<String, Vec<String>> = IndexMap::new();
        for record in doc.gold.get(image_key).map(Vec::as_slice).unwrap_or(&[]) {
            for image_entity in &record.source_image_entities {
                accepted
                    .entry(image_entity.to_lowercase())
                    .or_default()
                    .extend(record.source_text_entities.iter().map(|t| t.to_lowercase()));
            }
        }
        for prediction in predictions {
            score.total += 1;
            match accepted.get(&prediction.image_entity.to_lowercase()) {
                None => warnings.push(format!(
                    "{}/{image_key}: prediction for image entity `{}` absent from the gold records; counted incorrect",
                    doc.doc_id, prediction.image_entity
                )),
                Some(texts) if texts.is_empty() => {
                    if prediction.text_entity.is_none() {
                        score.correct += 1;
                    }
                }
                Some(texts) => {
                    if let Some(text_entity) = &prediction.text_entity {
                        if texts.iter().any(|t| *t == text_entity.to_lowercase()) {
                            score.correct += 1;
                        }
                    }
                }
            }
        }
    }
    (score, warnings)
}

/// Micro from summed counts (one division, no accumulation), macro as
/// the mean of per-document accuracies; documents with nothing to
/// evaluate drop out of the macro mean.
fn accuracy_pair(scores: &[DocScore]) -> AccuracyPair {
    let correct: usize = scores.iter().map(|s| s.correct).sum();
    let total: usize = scores.iter().map(|s| s.total).sum();
    let micro = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    let per_doc: Vec<f64> = scores
        .iter()
        .filter(|s| s.total > 0)
        .map(|s| s.correct as f64 / s.total as f64)
        .collect();
    let macro_avg = if per_doc.is_empty() {
        0.0
    } else {
        per_doc.iter().sum::<f64>() / per_doc.len() as f64
    };
    AccuracyPair { micro, macro_avg }
}

/// Aggregate scored documents into per-domain and overall accuracies.
pub fn evaluate_alignment(docs: &[DocEvaluation]) -> EvalResult {
    let mut result = EvalResult::default();
    let mut scored: Vec<(&DocEvaluation, DocScore)> = Vec::new();
    for doc in docs {
        let (score, mut warnings) = score_document(doc);
        result.warnings.append(&mut warnings);
        result.per_document.insert(doc.doc_id.clone(), score);
        scored.push((doc, score));
    }

    let mut ordered_domains: Vec<String> = Vec::new();
    for domain in DOMAINS {
        if docs.iter().any(|d| d.domain == domain) {
            ordered_domains.push(domain.to_string());
        }
    }
    for doc in docs {
        if !ordered_domains.contains(&doc.domain) {
            ordered_domains.push(doc.domain.clone());
        }
    }
    for domain in ordered_domains {
        let subset: Vec<DocScore> = scored
            .iter()
            .filter(|(doc, _)| doc.domain == domain)
            .map(|(_, score)| *score)
            .collect();
        result.per_domain.insert(domain, accuracy_pair(&subset));
    }
    let all: Vec<DocScore> = scored.iter().map(|(_, score)| *score).collect();
    result.overall = accuracy_pair(&all);
    result
}

/// Predict an alignment for every gold image entity of one document.
fn benchmark_document(
    gateway: &Gateway,
    doc: &CmelDocument,
    params: &CandidateParams,
) -> Result<(AlignmentStore, Vec<String>)> {
    let method = params.strategy.as_str();
    let mut predictions = AlignmentStore::new();
    let mut warnings = Vec::new();
    for (image_key, records) in &doc.ground_truth {
        // Gold image entities in record order, deduplicated.
        let mut names: Vec<String> = Vec::new();
        for record in records {
            for name in &record.source_image_entities {
                let canonical = canonical_name(name);
                if !names.contains(&canonical) {
                    names.push(canonical);
                }
            }
        }
        if names.is_empty() {
            predictions.insert(image_key.clone(), Vec::new());
            continue;
        }

        let image = doc.images.get(image_key);
        if image.is_none() {
            warnings.push(format!(
                "{}: {image_key} has no image record; its entities predict no match",
                doc.doc_id
            ));
        }
        let pool = image
            .map(|image| {
                context_entity_pool(gateway, &doc.text_kg, &doc.chunks, image, params.window_radius)
            })
            .transpose()?;
        let context = image
            .map(|image| window_text(&doc.chunks, image, params.window_radius))
            .unwrap_or_default();

        let mut list = Vec::new();
        for name in names {
            let no_match = |name: &str| AlignmentRecord {
                image_entity: name.to_string(),
                text_entity: None,
                candidate_pool: Vec::new(),
                method: method.to_string(),
            };
            let visual = doc.image_kgs.get(image_key).and_then(|kg| kg.entity(&name));
            let Some(visual) = visual else {
                warnings.push(format!(
                    "{}: `{name}` is not in the image knowledge graph of {image_key}; predicting no match",
                    doc.doc_id
                ));
                list.push(no_match(&name));
                continue;
            };
            let Some(pool) = &pool else {
                list.push(no_match(&name));
                continue;
            };
            let embedding = gateway.embed_one(&embedding_text(visual))?;
            let (candidates, diags) =
                generate_candidates(gateway, visual, &embedding, pool, params)?;
            warnings.extend(diags.into_iter().map(|d| format!("{}: {d}", doc.doc_id)));
            let (record, diags) = align_entity(gateway, visual, &candidates, &context, method);
            warnings.extend(diags.into_iter().map(|d| format!("{}: {d}", doc.doc_id)));
            list.push(record);
        }
        predictions.insert(image_key.clone(), list);
    }
    Ok((predictions, warnings))
}

/// Run the benchmark over every dataset document. A document whose
/// pipeline fails is dropped from both accuracy averages and listed in
/// the result's warnings.
pub fn run_benchmark(
    gateway: &Gateway,
    dataset: &CmelDataset,
    params: &CandidateParams,
) -> Result<EvalResult> {
    let mut docs = Vec::new();
    let mut warnings = Vec::new();
    for doc in &dataset.documents {
        match benchmark_document(gateway, doc, params) {
            Ok((predictions, mut doc_warnings)) => {
                warnings.append(&mut doc_warnings);
                docs.push(DocEvaluation {
                    doc_id: doc.doc_id.clone(),
                    domain: doc.domain.clone(),
                    predictions,
                    gold: doc.ground_truth.clone(),
                });
            }
            Err(err) => warnings.push(format!(
                "{}: evaluation failed: {err}; document excluded from accuracy",
                doc.doc_id
            )),
        }
    }
    let mut result = evaluate_alignment(&docs);
    warnings.append(&mut result.warnings);
    result.warnings = warnings;
    Ok(result)
}

/// How repeated benchmark runs are reduced to one result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    /// Keep the run with the highest overall micro accuracy.
    Max,
}

impl std::str::FromStr for Reduce {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "max" => Ok(Reduce::Max),
            other => Err(Error::Parameter(format!(
                "unknown reduce mode `{other}` (expected: max)"
            ))),
        }
    }
}

/// Run the benchmark `runs` times, varying the strategy seed per run,
/// and reduce to a single result.
pub fn run_benchmark_repeated(
    gateway: &Gateway,
    dataset: &CmelDataset,
    params: &CandidateParams,
    runs: usize,
    reduce: Reduce,
) -> Result<EvalResult> {
    if runs == 0 {
        return Err(Error::Parameter("runs must be positive".into()));
    }
    let mut best: Option<EvalResult> = None;
    for run in 0..runs {
        let mut run_params = params.clone();
        run_params.seed = params.seed.wrapping_add(run as u64);
        let result = run_benchmark(gateway, dataset, &run_params)?;
        let replace = match (&best, reduce) {
            (None, _) => true,
            (Some(current), Reduce::Max) => result.overall.micro > current.overall.micro,
        };
        if replace {
            best = Some(result);
        }
    }
    Ok(best.expect("runs >= 1 leaves a result"))
}

fn cell(pair: Option<&AccuracyPair>) -> String {
    match pair {
        Some(p) => format!("{:.1}/{:.1}", p.micro * 100.0, p.macro_avg * 100.0),
        None => "-".to_string(),
    }
}

/// Render labeled results as a plain-text table: one row per method,
/// micro/macro percentage cells per domain plus overall, warnings
/// listed underneath.
pub fn render_table(rows: &[(String, EvalResult)]) -> String {
    let mut headers = vec!["Meth.".to_string()];
    headers.extend(DOMAINS.iter().map(|d| domain_heading(d).to_string()));
    headers.push("Overall".to_string());

    let mut body: Vec<Vec<String>> = Vec::new();
    for (label, result) in rows {
        let mut row = vec![label.clone()];
        for domain in DOMAINS {
            row.push(cell(result.per_domain.get(domain)));
        }
        row.push(cell(Some(&result.overall)));
        body.push(row);
    }

    let mut widths: Vec<usize> = headers.iter().map(String::len).collect();
    for row in &body {
        for (i, value) in row.iter().enumerate() {
            widths[i] = widths[i].max(value.len());
        }
    }
    let render_row = |row: &[String]| -> String {
        row.iter()
            .enumerate()
            .map(|(i, value)| format!("{:<width$}", value, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };

    let mut lines = vec![render_row(&headers)];
    lines.push(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for row in &body {
        lines.push(render_row(row));
    }
    let warnings: Vec<&String> = rows.iter().flat_map(|(_, r)| r.warnings.iter()).collect();
    if !warnings.is_empty() {
        lines.push(String::new());
        lines.push("Warnings:".to_string());
        for warning in warnings {
            lines.push(format!("- {warning}"));
        }
    }
    lines.join("\n")
}
