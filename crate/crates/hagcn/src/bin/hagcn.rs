//! Command-line front end: trains the three pipelines, runs the gradient
//! check suite, exports checkpoint weights and gate values, decodes graphs
//! from a trained generator, and emits synthetic datasets.
//!
//! Exit codes: 0 on success (including --help), 1 on usage errors, 2 when a
//! command fails at runtime.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hagcn::data::{
    generate_synthetic, identity_features, load_dataset, write_dataset, Dataset, GraphCollection,
    GraphSample, SyntheticSpec,
};
use hagcn::export::{export_gate_values, write_matrix_csv, write_metrics_csv, MetricsRow};
use hagcn::gradsuite;
use hagcn::graph::pad_graph;
use hagcn::layers::GateVariant;
use hagcn::model::{Model, ModelState, TrainingConfig};
use hagcn::optim::OptimizerKind;
use hagcn::pipelines::{
    load_checkpoint, reconstruction_auc, sample_graphs, save_checkpoint, train_graph_regressor,
    train_node_classifier, train_vae, Checkpoint, PipelineError, VaeModel, DEFAULT_ENCODER_ARCH,
};
use hagcn::tensor::Tensor;

#[derive(Parser)]
#[command(name = "hagcn", version, about = "High-order adaptive graph convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a node classifier on a node-centric dataset.
    TrainNode(TrainArgs),
    /// Train a whole-graph regressor on a graph collection.
    TrainGraph(TrainArgs),
    /// Train a graph variational autoencoder on a graph collection.
    TrainVae(TrainArgs),
    /// Run the finite-difference gradient suite; exits 0 iff every check passes.
    Gradcheck,
    /// Write every parameter of a checkpoint to its own CSV file.
    ExportWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for the CSV files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the adaptive gate values a checkpoint computes on a dataset.
    ExportGates {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset the gates are evaluated on.
        #[arg(long)]
        data: PathBuf,
        /// Directory for the CSV files.
        #[arg(long)]
        out: PathBuf,
        /// Node whose gate row is also written on its own, per graph and order.
        #[arg(long, default_value_t = 0)]
        center: usize,
    },
    /// Decode graphs from a checkpoint saved by train-vae.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Edge probability cutoff.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Output dataset JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset file.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        /// Nodes per clique (two-clique only, default 10).
        #[arg(long)]
        clique_size: Option<usize>,
        /// Number of graphs (edge-count and communities, default 200).
        #[arg(long)]
        count: Option<usize>,
        /// Padded graph size (edge-count only, default 8).
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset JSON path; may come from the config file instead.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for metrics.csv, summary.json, and checkpoint.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architecture string, e.g. "adp_gcn_{1,2}-ReLU-fc8-fc1-softmax".
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Adaptive gate form used where the architecture asks for one.
    #[arg(long, value_enum)]
    gate: Option<GateArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateArg {
    Prod,
    Lin,
}

impl From<GateArg> for GateVariant {
    fn from(g: GateArg) -> GateVariant {
        match g {
            GateArg::Prod => GateVariant::Prod,
            GateArg::Lin => GateVariant::Lin,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    TwoClique,
    EdgeCount,
    Communities,
}

/// On-disk run configuration. Every field is optional; explicit command-line
/// flags win over values set here.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    arch: Option<String>,
    gate: Option<GateVariant>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    dropout_rate: Option<f64>,
    l2_coefficient: Option<f64>,
    seed: Option<u64>,
    optimizer: Option<OptimizerKind>,
}

struct ResolvedRun {
    arch: String,
    gate: GateVariant,
    data: PathBuf,
    out: PathBuf,
    config: TrainingConfig,
}

fn resolve(args: &TrainArgs, default_arch: Option<&str>) -> Result<ResolvedRun> {
    let file = match &args.config {
        Some(path) => {
            let body = fs::read_to_string(path)
                .with_context(|| format!("reading --config {}", path.display()))?;
            serde_json::from_str::<FileConfig>(&body)
                .with_context(|| format!("parsing --config {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let defaults = TrainingConfig::default();
    let arch = args
        .arch
        .clone()
        .or(file.arch)
        .or_else(|| default_arch.map(str::to_string))
        .context("no architecture given: pass --arch or set \"arch\" in the config file")?;
    let data = args
        .data
        .clone()
        .or(file.data)
        .context("no dataset given: pass --data or set \"data\" in the config file")?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .context("no output directory given: pass --out or set \"out\" in the config file")?;
    Ok(ResolvedRun {
        arch,
        gate: args
            .gate
            .map(GateVariant::from)
            .or(file.gate)
            .unwrap_or(GateVariant::Lin),
        data,
        out,
        config: TrainingConfig {
            learning_rate: args
                .lr
                .or(file.learning_rate)
                .unwrap_or(defaults.learning_rate),
            epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            dropout_rate: args
                .dropout
                .or(file.dropout_rate)
                .unwrap_or(defaults.dropout_rate),
            l2_coefficient: args
                .l2
                .or(file.l2_coefficient)
                .unwrap_or(defaults.l2_coefficient),
            seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
            optimizer: file.optimizer.unwrap_or(defaults.optimizer),
        },
    })
}

/// Final JSON report written next to the metrics file and printed to stdout.
#[derive(Serialize)]
struct RunSummary {
    task: &'static str,
    metric: &'static str,
    arch: String,
    gate: GateVariant,
    optimizer: OptimizerKind,
    data: String,
    epochs: usize,
    learning_rate: f64,
    dropout_rate: f64,
    l2_coefficient: f64,
    seed: u64,
    split_sizes: [usize; 3],
    final_train: Option<f64>,
    final_val: Option<f64>,
    final_test: Option<f64>,
    final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reconstruction_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_kl: Option<f64>,
}

impl RunSummary {
    fn new(task: &'static str, metric: &'static str, run: &ResolvedRun) -> RunSummary {
        RunSummary {
            task,
            metric,
            arch: run.arch.clone(),
            gate: run.gate,
            optimizer: run.config.optimizer,
            data: run.data.display().to_string(),
            epochs: run.config.epochs,
            learning_rate: run.config.learning_rate,
            dropout_rate: run.config.dropout_rate,
            l2_coefficient: run.config.l2_coefficient,
            seed: run.config.seed,
            split_sizes: [0; 3],
            final_train: None,
            final_val: None,
            final_test: None,
            final_loss: None,
            baseline_rmse: None,
            reconstruction_auc: None,
            min_kl: None,
        }
    }

    fn record(&mut self, history: &[MetricsRow], losses: &[f64]) {
        if let Some(last) = history.last() {
            self.final_train = fin(last.train);
            self.final_val = fin(last.val);
            self.final_test = fin(last.test);
        }
        self.final_loss = losses.last().copied().and_then(fin);
    }
}

fn fin(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn write_run_outputs(
    dir: &Path,
    history: &[MetricsRow],
    summary: &RunSummary,
    checkpoint: &Checkpoint,
) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    write_metrics_csv(dir.join("metrics.csv"), history)?;
    save_checkpoint(&dir.join("checkpoint.json"), checkpoint)?;
    let body = serde_json::to_string_pretty(summary).expect("summary serializes");
    let path = dir.join("summary.json");
    fs::write(&path, body.clone() + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!("{body}");
    Ok(())
}

fn run_train_node(args: &TrainArgs) -> Result<()> {
    let run = resolve(args, None)?;
    let Dataset::Node(node) = load_dataset(&run.data).context("reading --data")? else {
        bail!(
            "{} holds a graph collection; train-node needs a node-centric dataset",
            run.data.display()
        );
    };
    let result = train_node_classifier(&node, &run.arch, run.gate, &run.config)?;
    let mut summary = RunSummary::new("node", "accuracy", &run);
    summary.record(&result.history, &result.losses);
    summary.split_sizes = [
        result.masks.train.len(),
        result.masks.val.len(),
        result.masks.test.len(),
    ];
    let checkpoint = Checkpoint::Node {
        model: result.model.to_state(),
        num_classes: node.num_classes,
    };
    write_run_outputs(&run.out, &result.history, &summary, &checkpoint)
}

fn run_train_graph(args: &TrainArgs) -> Result<()> {
    let run = resolve(args, None)?;
    let Dataset::Graphs(collection) = load_dataset(&run.data).context("reading --data")? else {
        bail!(
            "{} holds a node-centric dataset; train-graph needs a graph collection",
            run.data.display()
        );
    };
    let result = train_graph_regressor(&collection, &run.arch, run.gate, &run.config)?;
    let mut summary = RunSummary::new("graph", "rmse", &run);
    summary.record(&result.history, &result.losses);
    summary.split_sizes = [
        result.splits.train.len(),
        result.splits.val.len(),
        result.splits.test.len(),
    ];
    summary.baseline_rmse = fin(result.baseline_rmse);
    let checkpoint = Checkpoint::Graph {
        model: result.model.to_state(),
    };
    write_run_outputs(&run.out, &result.history, &summary, &checkpoint)
}

fn run_train_vae(args: &TrainArgs) -> Result<()> {
    let run = resolve(args, Some(DEFAULT_ENCODER_ARCH))?;
    let Dataset::Graphs(collection) = load_dataset(&run.data).context("reading --data")? else {
        bail!(
            "{} holds a node-centric dataset; train-vae needs a graph collection",
            run.data.display()
        );
    };
    let result = train_vae(&collection, &run.arch, run.gate, &run.config)?;
    let mut summary = RunSummary::new("vae", "loss", &run);
    summary.record(&result.history, &result.losses);
    summary.split_sizes = [
        result.splits.train.len(),
        result.splits.val.len(),
        result.splits.test.len(),
    ];
    summary.min_kl = fin(result.kl_values.iter().copied().fold(f64::INFINITY, f64::min));
    summary.reconstruction_auc = if result.splits.test.is_empty() {
        None
    } else {
        let mut held_out = Vec::new();
        for &i in &result.splits.test {
            let sample = &collection.graphs[i];
            held_out.push(pad_graph(&sample.graph, &sample.features, collection.n_max)?);
        }
        match reconstruction_auc(&result.model, &held_out) {
            Ok(auc) => fin(auc),
            Err(PipelineError::NoAucGraphs) => None,
            Err(e) => return Err(e.into()),
        }
    };
    let checkpoint = Checkpoint::Vae {
        state: result.model.to_state(),
    };
    write_run_outputs(&run.out, &result.history, &summary, &checkpoint)
}

fn run_gradcheck() -> Result<()> {
    let reports = gradsuite::run_all()?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    for report in &reports {
        println!("{}", report.summary_line());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", reports.len());
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn checkpoint_state(checkpoint: &Checkpoint) -> &ModelState {
    match checkpoint {
        Checkpoint::Node { model, .. } | Checkpoint::Graph { model } => model,
        Checkpoint::Vae { state } => &state.core,
    }
}

fn run_export_weights(checkpoint: &Path, out: &Path) -> Result<()> {
    let loaded = load_checkpoint(checkpoint).context("reading --checkpoint")?;
    let state = checkpoint_state(&loaded);
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    for p in &state.params {
        let t = Tensor::from_vec(p.rows, p.cols, p.data.clone())?;
        write_matrix_csv(out.join(format!("{}.csv", p.name)), &p.name, &t)?;
    }
    println!(
        "wrote {} parameter files to {}",
        state.params.len(),
        out.display()
    );
    Ok(())
}

fn run_export_gates(checkpoint: &Path, data: &Path, out: &Path, center: usize) -> Result<()> {
    let model = match load_checkpoint(checkpoint).context("reading --checkpoint")? {
        Checkpoint::Node { model, .. } | Checkpoint::Graph { model } => Model::from_state(&model)?,
        Checkpoint::Vae { state } => VaeModel::from_state(&state)?.core,
    };
    let dataset = load_dataset(data).context("reading --data")?;
    let files = export_gate_values(&model, &dataset, out, center)?;
    println!("wrote {} gate files to {}", files.len(), out.display());
    Ok(())
}

fn run_sample(checkpoint: &Path, count: usize, seed: u64, threshold: f64, out: &Path) -> Result<()> {
    let Checkpoint::Vae { state } = load_checkpoint(checkpoint).context("reading --checkpoint")? else {
        bail!(
            "{} was not saved by train-vae; sample needs a generator checkpoint",
            checkpoint.display()
        );
    };
    let model = VaeModel::from_state(&state)?;
    let graphs = sample_graphs(&model, count, seed, threshold)?;
    let n_max = graphs.iter().map(|g| g.num_nodes()).max().unwrap_or(0);
    let samples = graphs
        .into_iter()
        .map(|graph| GraphSample {
            features: identity_features(graph.num_nodes(), n_max),
            graph,
            target: None,
        })
        .collect();
    write_dataset(
        out,
        &Dataset::Graphs(GraphCollection {
            graphs: samples,
            n_max,
            feature_width: n_max,
        }),
    )?;
    println!("wrote {count} sampled graphs to {}", out.display());
    Ok(())
}

fn run_gen_data(
    kind: DataKind,
    clique_size: Option<usize>,
    count: Option<usize>,
    n_max: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    fn forbid<T>(flag: &str, value: &Option<T>, kind: &str) -> Result<()> {
        if value.is_some() {
            bail!("--{flag} does not apply to {kind} data");
        }
        Ok(())
    }
    let spec = match kind {
        DataKind::TwoClique => {
            forbid("count", &count, "two-clique")?;
            forbid("n-max", &n_max, "two-clique")?;
            SyntheticSpec::TwoClique {
                clique_size: clique_size.unwrap_or(10),
            }
        }
        DataKind::EdgeCount => {
            forbid("clique-size", &clique_size, "edge-count")?;
            SyntheticSpec::EdgeCount {
                count: count.unwrap_or(200),
                n_max: n_max.unwrap_or(8),
            }
        }
        DataKind::Communities => {
            forbid("clique-size", &clique_size, "communities")?;
            forbid("n-max", &n_max, "communities")?;
            SyntheticSpec::Communities {
                count: count.unwrap_or(200),
            }
        }
    };
    let dataset = generate_synthetic(&spec, seed)?;
    let shape = match &dataset {
        Dataset::Node(node) => format!("node dataset with {} nodes", node.graph.num_nodes()),
        Dataset::Graphs(collection) => format!("{} graphs", collection.graphs.len()),
    };
    write_dataset(out, &dataset)?;
    println!("wrote {shape} to {}", out.display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainNode(args) => run_train_node(&args),
        Command::TrainGraph(args) => run_train_graph(&args),
        Command::TrainVae(args) => run_train_vae(&args),
        Command::Gradcheck => run_gradcheck(),
        Command::ExportWeights { checkpoint, out } => run_export_weights(&checkpoint, &out),
        Command::ExportGates {
            checkpoint,
            data,
            out,
            center,
        } => run_export_gates(&checkpoint, &data, &out, center),
        Command::Sample {
            checkpoint,
            count,
            seed,
            threshold,
            out,
        } => run_sample(&checkpoint, count, seed, threshold, &out),
        Command::GenData {
            kind,
            clique_size,
            count,
            n_max,
            seed,
            out,
        } => run_gen_data(kind, clique_size, count, n_max, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            print_error(&err);
            ExitCode::from(2)
        }
    }
}

/// Like anyhow's alternate formatting, except causes whose text the message
/// already carries are not repeated; the library errors embed their sources.
fn print_error(err: &anyhow::Error) {
    let mut message = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !message.contains(&text) {
            message.push_str(": ");
            message.push_str(&text);
        }
    }
    eprintln!("error: {message}");
}
