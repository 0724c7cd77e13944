use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use genealogy::adjudication::MergePolicy;
use genealogy::clustering::{Axis, Linkage, Metric};
use genealogy::corpus::CorpusFormat;
use genealogy::error::Error;
use genealogy::matrix::ColumnOrder;
use genealogy::pipeline::{self, GroupSource, RenderOptions, VerdictSource, Workspace};
use genealogy::render::NodeWeight;
use genealogy::similarity::{BackendConfig, BackendKind, DEFAULT_K, DEFAULT_NGRAM};

#[derive(Parser)]
#[command(version, about = "Spec-sentence genealogy pipeline over a workspace directory")]
struct Cli {
    /// Workspace directory holding every stage's artifacts.
    #[arg(long, global = true, default_value = "workspace")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a corpus file.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
        /// Input is a published incidence table rather than a corpus.
        #[arg(long)]
        incidence: bool,
    },
    /// Group records by canonical text.
    Dedup,
    /// Top-k similar pairs for review.
    Candidates {
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value = "char-ngram")]
        backend: BackendKind,
        #[arg(long)]
        endpoint: Option<String>,
        /// Gram length for the char-ngram backend.
        #[arg(long, default_value_t = DEFAULT_NGRAM)]
        ngram: usize,
    },
    /// Run the review API.
    ServeReview {
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: SocketAddr,
    },
    /// Append verdicts from a file, or auto-judge candidates by score.
    VerdictsImport {
        #[arg(long, conflicts_with = "auto_accept", required_unless_present = "auto_accept")]
        file: Option<PathBuf>,
        #[arg(long)]
        auto_accept: bool,
        #[arg(long, default_value = "auto")]
        annotator: String,
        #[arg(long, default_value_t = 0.5)]
        min_score: f64,
    },
    /// Close accepted pairs into final classes.
    Equivalence {
        #[arg(long, default_value = "any-similar")]
        policy: MergePolicy,
    },
    /// Incidence and commonality matrices.
    Matrix {
        #[arg(long, default_value = "release-date")]
        column_order: ColumnOrder,
    },
    /// Hierarchical clustering of items or frequent specs.
    Cluster {
        #[arg(long, default_value = "items", value_parser = ["items", "specs"])]
        axis: String,
        #[arg(long, default_value = "complete")]
        linkage: Linkage,
        /// Defaults to jaccard for complete and euclidean-binary for ward.
        #[arg(long)]
        metric: Option<Metric>,
        #[arg(long, default_value_t = 8)]
        min_items: usize,
        /// Also write a groups CSV for a cut into this many groups.
        #[arg(long)]
        cut: Option<usize>,
    },
    /// Frequent final classes per group.
    Characterize {
        /// `item_id,group_id` CSV; without it the corpus group labels are used.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
        #[arg(long)]
        categories: Option<PathBuf>,
    },
    /// Genealogy and profile figures.
    Render {
        #[arg(long, default_value_t = 1)]
        min_edge: usize,
        #[arg(long, default_value = "sum")]
        weight: NodeWeight,
        /// Item ids in chronological order, one per line.
        #[arg(long)]
        order: Option<PathBuf>,
        /// Item to draw a profile for; repeatable. Default is all items.
        #[arg(long = "profile")]
        profiles: Vec<String>,
    },
    /// Verify the manifest and bundle everything into report.md.
    Report,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ws = Workspace::new(&cli.workspace);
    let _lock = ws.lock()?;
    match cli.command {
        Command::Ingest { input, format, incidence } => {
            let report = pipeline::ingest(&ws, &input, format, incidence)?;
            println!("{} findings ({} warnings)", report.findings.len(), report.warnings().count());
        }
        Command::Dedup => {
            let exact = pipeline::dedup(&ws)?;
            println!("{} exact classes", exact.len());
        }
        Command::Candidates { k, backend, endpoint, ngram } => {
            let config = match backend {
                BackendKind::CharNgram => BackendConfig::char_ngram(ngram),
                BackendKind::Levenshtein => BackendConfig::levenshtein(),
                BackendKind::ExternalEmbedding => {
                    BackendConfig::external(endpoint.ok_or_else(|| Error::Usage("--endpoint is required for the external backend".into()))?)
                }
            };
            let token = std::env::var(pipeline::TOKEN_ENV).ok();
            let set = pipeline::candidates(&ws, &config, k, token)?;
            println!("{} candidate rows, {} distinct pairs", set.pairs.len(), set.pair_keys().len());
        }
        Command::ServeReview { addr } => pipeline::serve_review(&ws, addr)?,
        Command::VerdictsImport { file, auto_accept, annotator, min_score } => {
            let source = match file {
                Some(f) if !auto_accept => VerdictSource::File(f),
                _ => VerdictSource::AutoAccept { annotator, min_score },
            };
            let n = pipeline::verdicts_import(&ws, &source)?;
            println!("{n} verdicts appended");
        }
        Command::Equivalence { policy } => {
            let eq = pipeline::equivalence(&ws, policy)?;
            println!("{} final classes", eq.len());
        }
        Command::Matrix { column_order } => {
            let cm = pipeline::matrix(&ws, column_order)?;
            println!("{0}x{0} commonality matrix", cm.len());
        }
        Command::Cluster { axis, linkage, metric, min_items, cut } => {
            let axis = if axis == "specs" { Axis::Specs { min_items } } else { Axis::Items };
            let dend = pipeline::cluster(&ws, axis, linkage, metric, cut)?;
            println!("{}", dend.to_newick());
        }
        Command::Characterize { groups, threshold, categories } => {
            let source = groups.map_or(GroupSource::Labels, GroupSource::File);
            let tables = pipeline::characterize(&ws, &source, threshold, categories.as_deref())?;
            for t in &tables {
                println!("{}: {} rows (support >= {})", t.group_id, t.rows.len(), t.cutoff);
            }
        }
        Command::Render { min_edge, weight, order, profiles } => {
            let warnings = pipeline::render(&ws, &RenderOptions { min_edge, weight, order_file: order, profiles })?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Report => {
            let path = pipeline::report(&ws)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            let code = e.downcast_ref::<Error>().map_or(2, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
