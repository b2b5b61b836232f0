//! Pipeline stage implementations behind the subcommands.
//!
//! Every stage checks its prerequisite artifacts up front (naming the
//! missing files), writes its outputs atomically, and returns the
//! diagnostics it accumulated; the caller decides the exit code.

use std::path::{Path, PathBuf};

use mmkg_core::candidate::CandidateParams;
use mmkg_core::eval::{
    method_label, render_table, run_benchmark_repeated, CmelDataset, EvalResult, Reduce,
};
use mmkg_core::fusion::{
    build_vdb, fuse_image, FusionReport, VectorDatabase,
};
use mmkg_core::gateway::Gateway;
use mmkg_core::generation::{answer, GenerationTrace};
use mmkg_core::img2graph::{image_to_graph, Img2GraphConfig, RecordGrammar, DEFAULT_ENTITY_TYPES};
use mmkg_core::ingest::{build_text_kg, chunk_text};
use mmkg_core::kg::graphml::export_graphml;
use mmkg_core::kg::store::{
    load_alignments, load_graph, load_image_data, load_image_graphs, load_merged_entities,
    load_text_chunks, save_alignments, save_graph, save_image_graphs, save_merged_entities,
    save_text_chunks, write_json, AlignmentStore, ImageKgStore, MergedEntityStore, StoreKind,
};
use mmkg_core::kg::{GraphKind, ImageRecord, KnowledgeGraph};
use mmkg_core::retrieval::{retrieve, ContextBundle, RetrievalConfig};
use mmkg_core::{Error, Result};

use crate::workspace::Workspace;

/// Chunk the source text and extract the textual knowledge graph.
pub fn index_text(
    ws: &Workspace,
    gateway: &Gateway,
    input: Option<&Path>,
    chunk_tokens: Option<usize>,
) -> Result<Vec<String>> {
    let source = match input {
        Some(path) => path.to_path_buf(),
        None => {
            let rel = ws.manifest.source_text.as_ref().ok_or_else(|| {
                Error::Parameter(
                    "no input text: set source_text in the manifest or pass --input".to_string(),
                )
            })?;
            ws.resolve(rel)
        }
    };
    if !source.is_file() {
        return Err(Error::MissingArtifacts(vec![source]));
    }
    let text = std::fs::read_to_string(&source)?;
    let budget = chunk_tokens.unwrap_or(ws.manifest.chunk_tokens);
    let chunks = chunk_text(&text, budget)?;
    let (graph, diagnostics) =
        build_text_kg(gateway, &chunks, &RecordGrammar::default(), DEFAULT_ENTITY_TYPES)?;
    save_text_chunks(&ws.store_path(StoreKind::TextChunks), &chunks)?;
    save_graph(&ws.store_path(StoreKind::ChunkKg), &graph)?;
    log::info!(
        "indexed {} chunks into {} entities / {} relations",
        chunks.len(),
        graph.entity_count(),
        graph.relation_count()
    );
    Ok(diagnostics)
}

/// Image records sorted by image id, the order every per-image stage uses.
fn ordered_images(
    store: &mmkg_core::kg::store::ImageDataStore,
) -> Vec<&ImageRecord> {
    let mut ordered: Vec<&ImageRecord> = store.values().collect();
    ordered.sort_by_key(|r| r.image_id);
    ordered
}

/// Order "image_<id>" keys numerically so resumed and fresh runs write
/// stores in the same order.
fn image_key_order(a: &str, b: &str) -> std::cmp::Ordering {
    fn id(key: &str) -> u64 {
        key.rsplit('_')
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(u64::MAX)
    }
    id(a).cmp(&id(b)).then_with(|| a.cmp(b))
}

/// Build one scene graph per image record. With `resume`, images whose
/// completion marker and stored graph both exist are skipped.
pub fn img2graph(ws: &Workspace, gateway: &Gateway, resume: bool) -> Result<Vec<String>> {
    ws.require(&[ws.store_path(StoreKind::ImageData)])?;
    let images = load_image_data(&ws.store_path(StoreKind::ImageData))?;
    let config = Img2GraphConfig::new(&ws.assets_root());
    let graphs_path = ws.store_path(StoreKind::ImageKg);

    let mut graphs: ImageKgStore = if resume && graphs_path.is_file() {
        load_image_graphs(&graphs_path)?
    } else {
        ws.clear_markers("img2graph")?;
        ImageKgStore::new()
    };

    let mut diagnostics = Vec::new();
    let mut built = 0usize;
    for image in ordered_images(&images) {
        let key = image.key();
        if resume && ws.marker_path("img2graph", &key).is_file() && graphs.contains_key(&key) {
            continue;
        }
        let (graph, mut diags) = image_to_graph(gateway, image, &config)?;
        diagnostics.append(&mut diags);
        graphs.insert(key.clone(), graph);
        graphs.sort_by(|k1, _, k2, _| image_key_order(k1, k2));
        save_image_graphs(&graphs_path, &graphs)?;
        ws.write_marker("img2graph", &key)?;
        built += 1;
    }
    log::info!("built {built} image graphs ({} total)", graphs.len());
    Ok(diagnostics)
}

/// Fuse every image graph into the textual graph, then embed the result.
///
/// The multimodal graph, alignment records, merged-entity records and
/// fusion reports are rewritten after each image and a completion marker
/// is dropped, so an interrupted run restarted with `resume` picks up at
/// the first unfinished image.
pub fn fuse(
    ws: &Workspace,
    gateway: &Gateway,
    params: &CandidateParams,
    resume: bool,
) -> Result<Vec<String>> {
    ws.require(&[
        ws.store_path(StoreKind::ChunkKg),
        ws.store_path(StoreKind::ImageKg),
        ws.store_path(StoreKind::ImageData),
        ws.store_path(StoreKind::TextChunks),
    ])?;
    let text_kg = load_graph(&ws.store_path(StoreKind::ChunkKg))?;
    let image_kgs = load_image_graphs(&ws.store_path(StoreKind::ImageKg))?;
    let images = load_image_data(&ws.store_path(StoreKind::ImageData))?;
    let chunks = load_text_chunks(&ws.store_path(StoreKind::TextChunks))?;

    let mmkg_path = ws.mmkg_path();
    let alignments_path = ws.store_path(StoreKind::AlignedTextEntity);
    let merged_path = ws.store_path(StoreKind::MergedEntities);

    let mut mmkg: KnowledgeGraph;
    let mut alignments: AlignmentStore;
    let mut merged: MergedEntityStore;
    let mut reports: Vec<FusionReport>;
    if resume && mmkg_path.is_file() {
        mmkg = load_graph(&mmkg_path)?;
        alignments = if alignments_path.is_file() {
            load_alignments(&alignments_path)?
        } else {
            AlignmentStore::new()
        };
        merged = if merged_path.is_file() {
            load_merged_entities(&merged_path)?
        } else {
            MergedEntityStore::new()
        };
        reports = if ws.reports_path().is_file() {
            let body = std::fs::read_to_string(ws.reports_path())?;
            serde_json::from_str(&body)?
        } else {
            Vec::new()
        };
    } else {
        ws.clear_markers("fuse")?;
        mmkg = text_kg.clone();
        mmkg.kind = GraphKind::Mmkg;
        alignments = AlignmentStore::new();
        merged = MergedEntityStore::new();
        reports = Vec::new();
    }

    let mut diagnostics = Vec::new();
    let mut fused = 0usize;
    for image in ordered_images(&images) {
        let key = image.key();
        if resume && ws.marker_path("fuse", &key).is_file() {
            continue;
        }
        if resume && mmkg.contains(&image.global_entity_name()) {
            // Fused by a run that stopped before writing the marker; its
            // records were saved in the same transaction, so just heal
            // the marker instead of clobbering them with a skip report.
            ws.write_marker("fuse", &key)?;
            continue;
        }
        let Some(image_kg) = image_kgs.get(&key) else {
            diagnostics.push(format!("{key} has no image knowledge graph; image skipped"));
            continue;
        };
        // Stage the mutation so a failing image leaves the graph intact.
        let mut staged = mmkg.clone();
        match fuse_image(gateway, &mut staged, image_kg, image, &chunks, params) {
            Ok(report) => {
                mmkg = staged;
                diagnostics.extend(report.diagnostics.iter().cloned());
                alignments.insert(key.clone(), report.alignments.clone());
                merged.insert(key.clone(), report.merged.clone());
                reports.retain(|r| r.image_id != report.image_id);
                reports.push(report);
                reports.sort_by_key(|r| r.image_id);
                save_graph(&mmkg_path, &mmkg)?;
                save_alignments(&alignments_path, &alignments)?;
                save_merged_entities(&merged_path, &merged)?;
                write_json(&ws.reports_path(), &reports)?;
                ws.write_marker("fuse", &key)?;
                fused += 1;
            }
            Err(e) => diagnostics.push(format!("fusion failed for {key}: {e}")),
        }
    }

    let vdb = build_vdb(gateway, &mmkg)?;
    save_graph(&mmkg_path, &mmkg)?;
    write_json(&ws.vdb_path(), &vdb)?;
    std::fs::write(ws.graphml_path(), export_graphml(&mmkg))?;
    log::info!(
        "fused {fused} images; multimodal graph has {} entities / {} relations",
        mmkg.entity_count(),
        mmkg.relation_count()
    );
    Ok(diagnostics)
}

/// Load everything `retrieve`/`query` need from the workspace.
fn load_query_inputs(
    ws: &Workspace,
) -> Result<(
    KnowledgeGraph,
    VectorDatabase,
    mmkg_core::kg::store::TextChunkStore,
    mmkg_core::kg::store::ImageDataStore,
)> {
    ws.require(&[
        ws.mmkg_path(),
        ws.vdb_path(),
        ws.store_path(StoreKind::TextChunks),
        ws.store_path(StoreKind::ImageData),
    ])?;
    let mmkg = load_graph(&ws.mmkg_path())?;
    let body = std::fs::read_to_string(ws.vdb_path())?;
    let vdb: VectorDatabase = serde_json::from_str(&body)?;
    let chunks = load_text_chunks(&ws.store_path(StoreKind::TextChunks))?;
    let images = load_image_data(&ws.store_path(StoreKind::ImageData))?;
    Ok((mmkg, vdb, chunks, images))
}

/// Retrieve the context bundle for a question and write it to
/// `context_bundle.json`. Image paths in the bundle are resolved against
/// the workspace's asset root so they are directly readable.
pub fn retrieve_bundle(
    ws: &Workspace,
    gateway: &Gateway,
    question: &str,
    config: &RetrievalConfig,
) -> Result<ContextBundle> {
    let (mmkg, vdb, chunks, images) = load_query_inputs(ws)?;
    let mut bundle = retrieve(gateway, question, &mmkg, &vdb, &chunks, &images, config)?;
    let assets = ws.assets_root();
    bundle.images = bundle
        .images
        .iter()
        .map(|p| resolve_asset(&assets, p))
        .collect();
    write_json(&ws.bundle_path(), &bundle)?;
    Ok(bundle)
}

fn resolve_asset(assets_root: &Path, stored: &str) -> String {
    let path = Path::new(stored);
    if path.is_absolute() {
        stored.to_string()
    } else {
        assets_root.join(path).to_string_lossy().into_owned()
    }
}

/// Retrieve, then answer the question over the bundle. The full trace is
/// written to `query_trace.json`.
pub fn query(
    ws: &Workspace,
    gateway: &Gateway,
    question: &str,
    config: &RetrievalConfig,
) -> Result<GenerationTrace> {
    let bundle = retrieve_bundle(ws, gateway, question, config)?;
    let trace = answer(gateway, question, &bundle)?;
    write_json(&ws.trace_path(), &trace)?;
    Ok(trace)
}

/// Write the fused graph as GraphML.
pub fn export(ws: &Workspace, out: Option<&Path>) -> Result<PathBuf> {
    ws.require(&[ws.mmkg_path()])?;
    let mmkg = load_graph(&ws.mmkg_path())?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| ws.graphml_path());
    std::fs::write(&out, export_graphml(&mmkg))?;
    Ok(out)
}

/// Score cross-modal alignment over a benchmark dataset directory; the
/// rendered table and the result's warnings come back to the caller, and
/// the JSON result is written to `out` when given.
pub fn eval(
    gateway: &Gateway,
    dataset: &Path,
    params: &CandidateParams,
    runs: usize,
    reduce: Reduce,
    out: Option<&Path>,
) -> Result<(EvalResult, String)> {
    let dataset = CmelDataset::load(dataset)?;
    let result = run_benchmark_repeated(gateway, &dataset, params, runs, reduce)?;
    let table = render_table(&[(method_label(params.strategy).to_string(), result.clone())]);
    if let Some(path) = out {
        write_json(path, &result)?;
    }
    Ok((result, table))
}
