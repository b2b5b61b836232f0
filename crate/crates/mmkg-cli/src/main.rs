//! `mmkg` — build, query and evaluate multimodal knowledge graphs from a
//! workspace of pre-extracted document artifacts.
//!
//! Exit codes: 0 on success, 1 on a fatal error, 2 when the stage
//! completed but recorded diagnostics.

mod stages;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmkg_core::candidate::{CandidateParams, Strategy};
use mmkg_core::eval::Reduce;
use mmkg_core::gateway::{Gateway, MockBackend};
use mmkg_core::Result;

use workspace::{Workspace, MANIFEST_FILE};

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: mmkg_core::Error| e.to_string())
}

fn parse_reduce(s: &str) -> std::result::Result<Reduce, String> {
    s.parse().map_err(|e: mmkg_core::Error| e.to_string())
}

#[derive(Parser)]
#[command(
    name = "mmkg",
    version,
    about = "Build and query multimodal knowledge graphs from document artifacts"
)]
struct Cli {
    /// Workspace directory holding manifest.json and the artifacts.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,

    /// Seed overriding the manifest's (mock backend and clustering).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Force the deterministic mock model backend.
    #[arg(long, global = true)]
    mock: bool,

    /// Candidate-generation strategy overriding the manifest
    /// (spectral|dbscan|kmeans|pagerank|leiden|embedding|llm_direct).
    #[arg(long, global = true, value_parser = parse_strategy)]
    strategy: Option<Strategy>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk the source text and extract the textual knowledge graph.
    IndexText {
        /// Text file to index; defaults to the manifest's source_text.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Token budget per chunk; defaults to the manifest's.
        #[arg(long)]
        chunk_tokens: Option<usize>,
    },
    /// Build one scene graph per image record.
    Img2graph {
        /// Skip images already marked complete.
        #[arg(long)]
        resume: bool,
    },
    /// Fuse the image graphs into the textual graph and embed the result.
    Fuse {
        /// Skip images already marked complete.
        #[arg(long)]
        resume: bool,
    },
    /// Retrieve the context bundle for a question.
    Retrieve {
        #[arg(long)]
        question: String,
    },
    /// Answer a question over the fused graph (text and image evidence).
    Query {
        #[arg(long)]
        question: String,
    },
    /// Score cross-modal alignment over a benchmark dataset directory.
    Eval {
        /// Dataset root laid out as <domain>/<doc_id>/<store files>.
        #[arg(long)]
        dataset: PathBuf,
        /// Repeat the benchmark this many times, varying the seed.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// How repeated runs collapse into one result.
        #[arg(long, default_value = "max", value_parser = parse_reduce)]
        reduce: Reduce,
        /// Also write the JSON result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the fused graph as GraphML.
    ExportGraphml {
        /// Output file; defaults to mmkg.graphml in the workspace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(diagnostics) => {
            if diagnostics.is_empty() {
                ExitCode::SUCCESS
            } else {
                for diagnostic in &diagnostics {
                    eprintln!("diagnostic: {diagnostic}");
                }
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Gateway and candidate parameters for `eval`: taken from the workspace
/// when one is present, otherwise built from the flags alone (which then
/// must include --mock, since there is no manifest to name endpoints).
fn eval_setup(cli: &Cli) -> Result<(Gateway, CandidateParams)> {
    if cli.workspace.join(MANIFEST_FILE).is_file() {
        let ws = Workspace::open(&cli.workspace)?;
        let gateway = ws.gateway(cli.mock, cli.seed)?;
        let params = ws.candidate_params(cli.strategy, cli.seed);
        return Ok((gateway, params));
    }
    if !cli.mock {
        return Err(mmkg_core::Error::Parameter(
            "eval outside a workspace needs --mock (no manifest to name model endpoints)"
                .to_string(),
        ));
    }
    let seed = cli.seed.unwrap_or(0);
    let mut params = CandidateParams::default();
    if let Some(strategy) = cli.strategy {
        params.strategy = strategy;
    }
    params.seed = seed;
    Ok((Gateway::new(Box::new(MockBackend::new(seed))), params))
}

fn run(cli: &Cli) -> Result<Vec<String>> {
    // Eval reads a dataset directory, not workspace artifacts, so it
    // works without a workspace as long as --mock supplies a backend.
    if let Command::Eval {
        dataset,
        runs,
        reduce,
        out,
    } = &cli.command
    {
        let (gateway, params) = eval_setup(cli)?;
        let (result, table) =
            stages::eval(&gateway, dataset, &params, *runs, *reduce, out.as_deref())?;
        println!("{table}");
        return Ok(result.warnings.clone());
    }

    let ws = Workspace::open(&cli.workspace)?;
    let gateway = ws.gateway(cli.mock, cli.seed)?;
    match &cli.command {
        Command::IndexText {
            input,
            chunk_tokens,
        } => stages::index_text(&ws, &gateway, input.as_deref(), *chunk_tokens),
        Command::Img2graph { resume } => stages::img2graph(&ws, &gateway, *resume),
        Command::Fuse { resume } => {
            let params = ws.candidate_params(cli.strategy, cli.seed);
            stages::fuse(&ws, &gateway, &params, *resume)
        }
        Command::Retrieve { question } => {
            let bundle =
                stages::retrieve_bundle(&ws, &gateway, question, &ws.manifest.retrieval)?;
            println!("{}", serde_json::to_string_pretty(&bundle)?);
            Ok(Vec::new())
        }
        Command::Query { question } => {
            let trace = stages::query(&ws, &gateway, question, &ws.manifest.retrieval)?;
            println!("{}", trace.final_answer);
            Ok(trace.diagnostics.clone())
        }
        Command::Eval { .. } => unreachable!("handled above"),
        Command::ExportGraphml { out } => {
            let path = stages::export(&ws, out.as_deref())?;
            println!("{}", path.display());
            Ok(Vec::new())
        }
    }
}
