//! The `vec2gc` command line.
//!
//! Subcommands map onto pipeline stages: `graph` exports the thresholded
//! similarity graph, `cluster` writes the cluster tree plus a run manifest,
//! `evaluate` scores trees (and baseline clusterings) against gold labels,
//! and `baseline kmedoids` produces the comparison clustering.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::community::LouvainConfig;
use crate::embedding_io::{load_embeddings, load_labels, EmbeddingSet, Format};
use crate::eval::{kmedoids, purity_report, render_table, PurityReport, DEFAULT_THRESHOLDS};
use crate::hierarchy::{vec2gc_cluster, ClusterConfig, TreeDocument};
use crate::simgraph::{build_graph, validate_theta};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed inputs, failed writes.
    #[error("{0}")]
    Input(String),
    /// A produced artifact violates its own invariants.
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Invariant(_) => 2,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "vec2gc",
    version,
    about = "Cluster embeddings by recursive community detection on a similarity graph"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the thresholded similarity graph as a TSV edge list.
    Graph(GraphArgs),
    /// Build the cluster tree and write it with a run manifest.
    Cluster(ClusterArgs),
    /// Score cluster trees and baseline clusterings against gold labels.
    Evaluate(EvaluateArgs),
    /// Baseline clusterings for comparison.
    #[command(subcommand)]
    Baseline(BaselineCommand),
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// k-medoids on cosine distance with k-means++ style seeding.
    Kmedoids(KMedoidsArgs),
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    /// Similarity threshold in [0, 1); 0.7 is a reasonable start for
    /// unit-normalized document embeddings.
    #[arg(long)]
    pub theta: f64,
    #[arg(long)]
    pub output: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Load every parameter from a run-config or manifest JSON file.
    #[arg(long, conflicts_with_all = ["input", "format", "labels", "theta", "seed"])]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "config")]
    pub format: Option<Format>,
    /// Two-column TSV of gold labels, joined onto the embeddings.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// The labels file starts with a header line.
    #[arg(long)]
    pub labels_header: bool,
    /// Similarity threshold in [0, 1); 0.7 is a reasonable start for
    /// unit-normalized document embeddings.
    #[arg(long, required_unless_present = "config")]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub mod_threshold: f64,
    #[arg(long, default_value_t = 500)]
    pub max_size: usize,
    #[arg(long, default_value_t = 2)]
    pub min_community_size: usize,
    /// Random seed; a fresh one is generated, printed and recorded if omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Results are canonical with 1.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub gain_epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 50)]
    pub max_levels: usize,
    /// Louvain runs per split with derived seeds; the best modularity wins.
    #[arg(long, default_value_t = default_restarts())]
    pub restarts: usize,
    /// Largest (sub)graph that gets the vertex-moving refinement; 0 disables.
    #[arg(long, default_value_t = default_refine_max_nodes())]
    pub refine_max_nodes: usize,
    /// Tree JSON output path.
    #[arg(long, required_unless_present = "config")]
    pub output: Option<PathBuf>,
    /// Manifest output path (default: <output>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Cluster tree written by `cluster`.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Clusterings written by `baseline`; may be repeated.
    #[arg(long)]
    pub baseline: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub labels_header: bool,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    pub purity_thresholds: Vec<f64>,
    /// Dataset name for the table (default: input file stem).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Report JSON path (default: <tree or first baseline>.report.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KMedoidsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long)]
    pub output: PathBuf,
}

/// Every parameter of a `cluster` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub format: Format,
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub labels_header: bool,
    pub theta: f64,
    pub mod_threshold: f64,
    pub max_size: usize,
    pub min_community_size: usize,
    pub seed: u64,
    pub threads: usize,
    pub gain_epsilon: f64,
    pub max_sweeps: usize,
    pub max_levels: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_refine_max_nodes")]
    pub refine_max_nodes: usize,
    pub output: PathBuf,
    pub manifest: PathBuf,
}

fn default_restarts() -> usize {
    LouvainConfig::default().restarts
}

fn default_refine_max_nodes() -> usize {
    LouvainConfig::default().refine_max_nodes
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        validate_theta(self.theta).map_err(input_err)?;
        self.cluster_config().validate().map_err(input_err)?;
        if !(self.gain_epsilon >= 0.0 && self.gain_epsilon.is_finite()) {
            return Err(CliError::Input(format!(
                "gain_epsilon must be finite and non-negative, got {}",
                self.gain_epsilon
            )));
        }
        Ok(())
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            mod_threshold: self.mod_threshold,
            max_size: self.max_size,
            min_community_size: self.min_community_size,
            seed: self.seed,
            louvain: LouvainConfig {
                gain_epsilon: self.gain_epsilon,
                max_sweeps: self.max_sweeps,
                max_levels: self.max_levels,
                threads: self.threads,
                restarts: self.restarts,
                refine_max_nodes: self.refine_max_nodes,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub items: usize,
    pub edges: usize,
    pub tree_nodes: usize,
    pub leaves: usize,
    pub depth: usize,
    pub non_community: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub input_sha256: String,
    pub labels_sha256: Option<String>,
    pub tree_sha256: String,
    pub summary: RunSummary,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let fail = |e: &dyn std::fmt::Display| {
        CliError::Input(format!("cannot write {}: {e}", path.display()))
    };
    let file = File::create(path).map_err(|e| fail(&e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| fail(&e))?;
    w.write_all(b"\n").map_err(|e| fail(&e))?;
    w.flush().map_err(|e| fail(&e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        eprintln!("seed: {seed}");
        seed
    })
}

fn default_sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_input(
    input: &Path,
    format: Format,
    labels: Option<&Path>,
    header: bool,
) -> Result<EmbeddingSet, CliError> {
    let mut emb = load_embeddings(input, format)
        .map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    if let Some(path) = labels {
        let labels = load_labels(path, header)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let join = emb.attach_labels(labels);
        if join.unresolved > 0 {
            eprintln!(
                "warning: {} label(s) in {} name no embedding and were ignored",
                join.unresolved,
                path.display()
            );
        }
    }
    Ok(emb)
}

/// Parses arguments and runs the selected subcommand.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Graph(args) => cmd_graph(&args),
        Command::Cluster(args) => {
            let config = run_config(args)?;
            cmd_cluster(&config).map(|_| ())
        }
        Command::Evaluate(args) => cmd_evaluate(&args).map(|_| ()),
        Command::Baseline(BaselineCommand::Kmedoids(args)) => cmd_kmedoids(&args),
    }
}

pub fn cmd_graph(args: &GraphArgs) -> Result<(), CliError> {
    validate_theta(args.theta).map_err(input_err)?;
    let emb = load_input(&args.input, args.format, None, false)?;
    let g = build_graph(&emb, args.theta, args.threads).map_err(input_err)?;
    let fail =
        |e: io::Error| CliError::Input(format!("cannot write {}: {e}", args.output.display()));
    let mut w = BufWriter::new(File::create(&args.output).map_err(fail)?);
    g.write_edge_tsv(emb.ids(), &mut w).map_err(fail)?;
    w.flush().map_err(fail)?;
    println!(
        "{} nodes, {} edges -> {}",
        g.node_count(),
        g.edge_count(),
        args.output.display()
    );
    Ok(())
}

/// Turns `cluster` flags (or a config/manifest file) into a full run config.
pub fn run_config(args: ClusterArgs) -> Result<RunConfig, CliError> {
    if let Some(path) = &args.config {
        let value: serde_json::Value = read_json(path)?;
        let config_value = value.get("config").cloned().unwrap_or(value);
        let mut config: RunConfig = serde_json::from_value(config_value)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if let Some(output) = args.output {
            config.manifest = args
                .manifest
                .unwrap_or_else(|| default_sidecar(&output, ".manifest.json"));
            config.output = output;
        } else if let Some(manifest) = args.manifest {
            config.manifest = manifest;
        }
        return Ok(config);
    }
    let output = args.output.expect("required by clap");
    Ok(RunConfig {
        input: args.input.expect("required by clap"),
        format: args.format.expect("required by clap"),
        labels: args.labels,
        labels_header: args.labels_header,
        theta: args.theta.expect("required by clap"),
        mod_threshold: args.mod_threshold,
        max_size: args.max_size,
        min_community_size: args.min_community_size,
        seed: resolve_seed(args.seed),
        threads: args.threads,
        gain_epsilon: args.gain_epsilon,
        max_sweeps: args.max_sweeps,
        max_levels: args.max_levels,
        restarts: args.restarts,
        refine_max_nodes: args.refine_max_nodes,
        manifest: args
            .manifest
            .unwrap_or_else(|| default_sidecar(&output, ".manifest.json")),
        output,
    })
}

/// Runs the clustering pipeline and writes the tree and the manifest.
pub fn cmd_cluster(config: &RunConfig) -> Result<Manifest, CliError> {
    config.validate()?;
    let emb = load_input(
        &config.input,
        config.format,
        config.labels.as_deref(),
        config.labels_header,
    )?;
    let g = build_graph(&emb, config.theta, config.threads).map_err(input_err)?;
    let cluster_config = config.cluster_config();
    let (tree, bucket) = vec2gc_cluster(&g, &cluster_config).map_err(input_err)?;
    if tree.is_empty() {
        eprintln!(
            "warning: no edge reaches theta = {}; all {} items are non-community",
            config.theta,
            emb.len()
        );
    }
    tree.validate(emb.len(), &bucket, config.mod_threshold)
        .map_err(CliError::Invariant)?;

    let doc = TreeDocument::new(&tree, &bucket, emb.ids(), config.theta, &cluster_config);
    write_json(&config.output, &doc)?;
    let manifest = Manifest {
        tool: "vec2gc".to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config: config.clone(),
        input_sha256: sha256_file(&config.input)?,
        labels_sha256: config.labels.as_deref().map(sha256_file).transpose()?,
        tree_sha256: sha256_file(&config.output)?,
        summary: RunSummary {
            items: emb.len(),
            edges: g.edge_count(),
            tree_nodes: tree.nodes().len(),
            leaves: tree.leaves().count(),
            depth: tree.depth(),
            non_community: bucket.len(),
        },
    };
    write_json(&config.manifest, &manifest)?;
    println!(
        "{} items, {} edges, {} leaves (depth {}), {} non-community -> {}",
        manifest.summary.items,
        manifest.summary.edges,
        manifest.summary.leaves,
        manifest.summary.depth,
        manifest.summary.non_community,
        config.output.display()
    );
    Ok(manifest)
}

/// Output of `baseline kmedoids`, also accepted by `evaluate --baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringDocument {
    pub method: String,
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub medoids: Vec<String>,
    pub clusters: Vec<Vec<String>>,
}

pub fn cmd_kmedoids(args: &KMedoidsArgs) -> Result<(), CliError> {
    let emb = load_input(&args.input, args.format, None, false)?;
    let seed = resolve_seed(args.seed);
    let result = kmedoids(&emb, args.k, seed, args.max_iters).map_err(input_err)?;
    let names = |items: &[usize]| {
        items
            .iter()
            .map(|&i| emb.id(i).to_owned())
            .collect::<Vec<_>>()
    };
    let doc = ClusteringDocument {
        method: "KMedoids".to_owned(),
        k: args.k,
        seed,
        max_iters: args.max_iters,
        medoids: names(&result.medoids),
        clusters: result.clusters.iter().map(|c| names(c)).collect(),
    };
    write_json(&args.output, &doc)?;
    println!(
        "{} clusters after {} iterations (objective {:.6}) -> {}",
        args.k,
        result.iterations,
        result.objective_trace.last().copied().unwrap_or(0.0),
        args.output.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub source: PathBuf,
    pub report: PurityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDocument {
    pub dataset: String,
    pub methods: Vec<MethodReport>,
    pub table: String,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluationDocument, CliError> {
    let first = args
        .tree
        .as_ref()
        .or(args.baseline.first())
        .ok_or_else(|| CliError::Input("evaluate needs --tree or --baseline".into()))?
        .clone();
    let labels = load_labels(&args.labels, args.labels_header)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.labels.display())))?;
    if labels.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no gold labels",
            args.labels.display()
        )));
    }

    let mut inputs: Vec<(String, PathBuf, Vec<Vec<String>>, usize)> = Vec::new();
    if let Some(path) = &args.tree {
        let doc: TreeDocument = read_json(path)?;
        inputs.push((
            "Vec2GC".to_owned(),
            path.clone(),
            doc.leaf_members(),
            doc.non_community.members.len(),
        ));
    }
    for path in &args.baseline {
        let doc: ClusteringDocument = read_json(path)?;
        inputs.push((doc.method, path.clone(), doc.clusters, 0));
    }

    let mut methods = Vec::new();
    for (method, source, clusters, noise) in inputs {
        let missing = clusters
            .iter()
            .flatten()
            .filter(|id| !labels.contains_key(id.as_str()))
            .count();
        if missing > 0 {
            eprintln!(
                "warning: {missing} clustered item(s) in {} have no label; evaluating the remainder",
                source.display()
            );
        }
        let report = purity_report(&clusters, &labels, &args.purity_thresholds, noise)
            .map_err(|e| CliError::Input(format!("{}: {e}", source.display())))?;
        methods.push(MethodReport {
            method,
            source,
            report,
        });
    }

    let dataset = args.dataset.clone().unwrap_or_else(|| {
        first.file_stem().map_or_else(
            || "dataset".to_owned(),
            |s| s.to_string_lossy().into_owned(),
        )
    });
    let columns: Vec<(&str, &PurityReport)> = methods
        .iter()
        .map(|m| (m.method.as_str(), &m.report))
        .collect();
    let table = render_table(&dataset, &columns);
    print!("{table}");
    for m in &methods {
        println!(
            "{}: {} clusters evaluated, {} noise items excluded",
            m.method, m.report.n_clusters, m.report.noise_size
        );
    }
    let doc = EvaluationDocument {
        dataset,
        methods,
        table,
    };
    let output = args
        .output
        .clone()
        .unwrap_or_else(|| default_sidecar(&first, ".report.json"));
    write_json(&output, &doc)?;
    Ok(doc)
}
