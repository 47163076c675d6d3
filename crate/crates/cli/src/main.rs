use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tgx_core::explainer::{brute_force_oracle, FidelitySign, ORACLE_MAX_CANDIDATES};
use tgx_core::generator::Emission;
use tgx_core::graph::{DynamicGraph, GraphMode};
use tgx_core::metrics::{CohesionNorm, Instance};
use tgx_core::models::{train_target, AnyModel, TargetModel, TrainConfig};
use tgx_core::synth::{er_snapshots, planted_events, poisson_events, ErConfig, PlantedConfig, PoissonConfig};

use tgx_cli::dot::export_dot;
use tgx_cli::files::{
    create, read_config, read_graph, read_json, read_model, write_graph, write_json, write_model, write_text, write_truth,
    InstanceRun, OracleFile, RunFile, TrainFile,
};
use tgx_cli::pipeline::{
    default_delta_t, evaluate_runs, explain_all, resolve_edge, sample_targets, sweep, SweepParam,
};
use tgx_cli::{exit_code, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "tgx", version, about = "Explain link predictions of temporal graph models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a toy target link predictor.
    TrainTarget(TrainArgs),
    /// Explain predictions of a trained model.
    Explain(ExplainArgs),
    /// Score the explanations in a run file.
    Evaluate(EvaluateArgs),
    /// Re-run the explainer over a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Exhaustive search for the best explanation of one prediction.
    Oracle(OracleArgs),
    /// Render an explanation as Graphviz DOT.
    ExportDot(DotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// User-hub events with planted causal links and ground truth.
    Planted,
    /// Poisson event stream over uniform node pairs.
    Events,
    /// Erdős–Rényi snapshots.
    Snapshots,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    /// Output directory; receives graph.csv (and truth.csv for planted data).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    edge_prob: Option<f64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    hubs: Option<usize>,
    #[arg(long)]
    positives: Option<usize>,
    #[arg(long)]
    background: Option<usize>,
    #[arg(long)]
    window: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: GraphMode,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training report destination.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_mode(s: &str) -> Result<GraphMode, String> {
    s.parse().map_err(|e: tgx_core::Error| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum Fidelity {
    Align,
    Diverge,
}

/// Run description; flags override `--config`.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target as SRC,DST,T (repeatable); T is the snapshot index for
    /// snapshot data.
    #[arg(long = "edge")]
    edges: Vec<String>,
    /// Draw this many targets from the validation range.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    min_candidates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    lambda_size: Option<f64>,
    #[arg(long)]
    lambda_weight: Option<f64>,
    #[arg(long, value_enum)]
    fidelity: Option<Fidelity>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, conflicts_with = "top_k")]
    threshold: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    temporal_band: Option<usize>,
    #[arg(long)]
    no_bfs: bool,
    #[arg(long)]
    no_time: bool,
    #[arg(long)]
    no_sparsity: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.model {
            cfg.model = Some(p.clone());
        }
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
        }
        if !self.edges.is_empty() {
            cfg.edges = self.edges.clone();
        }
        cfg.sample = self.sample.or(cfg.sample);
        cfg.min_candidates = self.min_candidates.unwrap_or(cfg.min_candidates);
        cfg.seed = self.seed.or(cfg.seed);
        cfg.workers = self.workers.unwrap_or(cfg.workers);
        let e = &mut cfg.explainer;
        if let Some(seed) = cfg.seed {
            e.seed = seed;
        }
        e.lambda_size = self.lambda_size.unwrap_or(e.lambda_size);
        e.lambda_weight = self.lambda_weight.unwrap_or(e.lambda_weight);
        e.max_epochs = self.max_epochs.unwrap_or(e.max_epochs);
        e.patience = self.patience.unwrap_or(e.patience);
        e.lr = self.lr.unwrap_or(e.lr);
        e.temporal_band = self.temporal_band.unwrap_or(e.temporal_band);
        if let Some(f) = self.fidelity {
            e.fidelity = match f {
                Fidelity::Align => FidelitySign::Align,
                Fidelity::Diverge => FidelitySign::Diverge,
            };
        }
        if let Some(t) = self.threshold {
            e.emission = Emission::Threshold(t);
        }
        if let Some(k) = self.top_k {
            e.emission = Emission::TopK(k);
        }
        e.use_bfs &= !self.no_bfs;
        e.use_time &= !self.no_time;
        e.use_sparsity &= !self.no_sparsity;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a batch command needs, loaded once.
struct Loaded {
    cfg: RunConfig,
    model: AnyModel,
    graph: DynamicGraph,
}

impl Loaded {
    fn new(args: &RunArgs) -> Result<Self> {
        let cfg = args.resolve()?;
        let model = read_model(cfg.model.as_deref().expect("validated"))?;
        let graph = read_graph(cfg.data.as_deref().expect("validated"), model.mode())?;
        Ok(Self { cfg, model, graph })
    }

    fn targets(&self) -> Result<Vec<tgx_core::graph::TargetEdge>> {
        if !self.cfg.edges.is_empty() {
            return self
                .cfg
                .edges
                .iter()
                .map(|s| resolve_edge(&self.graph, s).map(|(e, _)| e))
                .collect();
        }
        let count = self.cfg.sample.expect("validated");
        sample_targets(&self.model, &self.graph, count, self.cfg.min_candidates, self.cfg.seed.unwrap_or(0))
    }

    fn run_file(&self, runs: Vec<InstanceRun>) -> RunFile {
        RunFile {
            mode: self.model.mode(),
            data: path_string(self.cfg.data.as_deref().expect("validated")),
            model: path_string(self.cfg.model.as_deref().expect("validated")),
            config: self.cfg.explainer.clone(),
            runs,
        }
    }
}

fn path_string(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-instance stage timings as CSV.
    #[arg(long)]
    timing_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cohesion {
    /// Mean over ordered pairs of distinct interactions.
    OrderedPairs,
    /// The original normalization, kept for comparison.
    Literal,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cohesiveness time scale; defaults to the data's time span.
    #[arg(long)]
    delta_t: Option<f64>,
    #[arg(long, value_enum, default_value = "ordered-pairs")]
    cohesion: Cohesion,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Summary table as JSON.
    #[arg(long)]
    out: PathBuf,
    /// Summary table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for one run file per value.
    #[arg(long)]
    runs_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    edge: String,
    #[arg(long, default_value_t = 3)]
    k_sub: usize,
    #[arg(long, default_value_t = ORACLE_MAX_CANDIDATES)]
    max_candidates: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DotArgs {
    #[arg(long)]
    run: PathBuf,
    /// Which instance of the run file to render.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
}

fn synth(args: &SynthArgs) -> Result<()> {
    let graph_path = args.out.join("graph.csv");
    match args.kind {
        SynthKind::Planted => {
            let d = PlantedConfig::default();
            let cfg = PlantedConfig {
                num_users: args.users.unwrap_or(d.num_users),
                num_hubs: args.hubs.unwrap_or(d.num_hubs),
                num_positives: args.positives.unwrap_or(d.num_positives),
                num_background: args.background.or(args.events).unwrap_or(d.num_background),
                window: args.window.unwrap_or(d.window),
                rate: args.rate.unwrap_or(d.rate),
                seed: args.seed,
            };
            let ds = planted_events(&cfg)?;
            let graph = DynamicGraph::Event(ds.graph);
            write_graph(&graph_path, &graph)?;
            write_truth(&args.out.join("truth.csv"), &ds.truth, &graph)?;
            println!("{} planted links", ds.truth.len());
        }
        SynthKind::Events => {
            let d = PoissonConfig::default();
            let g = poisson_events(&PoissonConfig {
                num_nodes: args.nodes.unwrap_or(d.num_nodes),
                num_events: args.events.unwrap_or(d.num_events),
                rate: args.rate.unwrap_or(d.rate),
                seed: args.seed,
            })?;
            println!("{} events", g.events().len());
            write_graph(&graph_path, &DynamicGraph::Event(g))?;
        }
        SynthKind::Snapshots => {
            let d = ErConfig::default();
            let g = er_snapshots(&ErConfig {
                num_nodes: args.nodes.unwrap_or(d.num_nodes),
                num_snapshots: args.snapshots.unwrap_or(d.num_snapshots),
                edge_prob: args.edge_prob.unwrap_or(d.edge_prob),
                seed: args.seed,
            })?;
            println!("{} snapshots, {} edges", g.num_snapshots(), g.num_edges());
            write_graph(&graph_path, &DynamicGraph::Snapshot(g))?;
        }
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let graph = read_graph(&args.data, args.mode)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        lr: args.lr.unwrap_or(d.lr),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        seed: args.seed,
        ..d
    };
    let mut model = AnyModel::for_graph(&graph, args.seed);
    let report = train_target(&mut model, &graph, &cfg)?;
    write_model(&args.out, &model)?;
    println!("validation AUC {:.4} after {} epochs", report.val_auc, report.epochs);
    if let Some(p) = &args.report {
        write_json(
            p,
            &TrainFile {
                mode: args.mode,
                data: path_string(&args.data),
                report,
            },
        )?;
    }
    Ok(())
}

fn explain_cmd(args: &ExplainArgs) -> Result<()> {
    let loaded = Loaded::new(&args.run)?;
    let targets = loaded.targets()?;
    let runs = explain_all(&loaded.model, &loaded.graph, &targets, &loaded.cfg.explainer, loaded.cfg.workers)?;
    if let Some(p) = &args.timing_csv {
        let mut out = csv::Writer::from_writer(create(p)?);
        out.write_record(["src", "dst", "t", "prepare", "optimize", "evaluate", "total", "epochs"])?;
        for r in &runs {
            let t = r.run.timing;
            out.write_record([
                r.labels[0].clone(),
                r.labels[1].clone(),
                r.run.edge.t.to_string(),
                t.prepare.to_string(),
                t.optimize.to_string(),
                t.evaluate.to_string(),
                r.run.duration_secs.to_string(),
                r.run.epochs().to_string(),
            ])?;
        }
        out.flush()?;
    }
    for r in &runs {
        println!(
            "{} -> {} @ {}: {} edges kept, {} epochs",
            r.labels[0],
            r.labels[1],
            r.run.edge.t,
            r.run.explanation.len(),
            r.run.epochs()
        );
    }
    write_json(&args.out, &loaded.run_file(runs))
}

fn load_run(path: &Path) -> Result<(RunFile, AnyModel, DynamicGraph)> {
    let file: RunFile = read_json(path)?;
    let model = read_model(Path::new(&file.model))?;
    if model.mode() != file.mode {
        bail!("run file is {} mode but its model is {}", file.mode, model.mode());
    }
    let graph = read_graph(Path::new(&file.data), file.mode)?;
    Ok((file, model, graph))
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let (file, model, graph) = load_run(&args.run)?;
    let delta_t = args.delta_t.unwrap_or_else(|| default_delta_t(&graph));
    if !(delta_t > 0.0) || !delta_t.is_finite() {
        return Err(UsageError(format!("delta-t must be positive, got {delta_t}")).into());
    }
    let norm = match args.cohesion {
        Cohesion::OrderedPairs => CohesionNorm::OrderedPairs,
        Cohesion::Literal => CohesionNorm::Literal,
    };
    let metrics = evaluate_runs(&model, &graph, &file.runs, &file.config.grid, delta_t, norm, args.workers)?;
    println!(
        "FID+ {:.4}  best FID+ {:.4}  AUFSC {:.4}  cohesiveness {}",
        metrics.fid_plus,
        metrics.best_fid_plus,
        metrics.aufsc,
        metrics.cohesiveness.map_or("n/a".to_string(), |c| format!("{c:.4}"))
    );
    write_json(&args.out, &metrics)
}

fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let loaded = Loaded::new(&args.run)?;
    let targets = loaded.targets()?;
    let (table, runs) = sweep(
        &loaded.model,
        &loaded.graph,
        &targets,
        &loaded.cfg.explainer,
        args.param,
        &args.values,
        loaded.cfg.workers,
    )?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:>12}  {:>13}  {:>8}  {:>8}", table.param, "best_fid_plus", "fid_plus", "aufsc")?;
    for row in &table.rows {
        writeln!(
            stdout,
            "{:>12}  {:>13.4}  {:>8.4}  {:>8.4}",
            row.value, row.best_fid_plus, row.fid_plus, row.aufsc
        )?;
    }
    if let Some(p) = &args.csv {
        let mut out = csv::Writer::from_writer(create(p)?);
        out.write_record([table.param.as_str(), "best_fid_plus", "fid_plus", "aufsc", "mean_explanation_size"])?;
        for row in &table.rows {
            out.write_record([
                row.value.to_string(),
                row.best_fid_plus.to_string(),
                row.fid_plus.to_string(),
                row.aufsc.to_string(),
                row.mean_explanation_size.to_string(),
            ])?;
        }
        out.flush()?;
    }
    if let Some(dir) = &args.runs_dir {
        for (row, r) in table.rows.iter().zip(runs) {
            let mut file = loaded.run_file(r);
            args.param.apply(&mut file.config, row.value);
            write_json(&dir.join(format!("{}_{}.json", table.param, row.value)), &file)?;
        }
    }
    write_json(&args.out, &table)
}

fn oracle_cmd(args: &OracleArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let graph = read_graph(&args.data, model.mode())?;
    let (edge, labels) = resolve_edge(&graph, &args.edge)?;
    let context = model.context(&graph, &edge)?;
    let inst = Instance::new(&model, edge, &context);
    let oracle = brute_force_oracle(&inst, args.k_sub, args.max_candidates)?;
    println!(
        "{} subsets, best cross-entropy {:.6} with {} edges",
        oracle.subsets_evaluated,
        oracle.objective,
        oracle.explanation.len()
    );
    write_json(
        &args.out,
        &OracleFile {
            labels,
            k_sub: args.k_sub,
            oracle,
        },
    )
}

fn dot_cmd(args: &DotArgs) -> Result<()> {
    let (file, model, graph) = load_run(&args.run)?;
    let Some(r) = file.runs.get(args.index) else {
        return Err(UsageError(format!("run file has {} instances, index {} requested", file.runs.len(), args.index)).into());
    };
    let context = model.context(&graph, &r.run.edge)?;
    write_text(&args.out, &export_dot(&r.run, &context, &graph))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainTarget(a) => train(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::ExportDot(a) => dot_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli).context("tgx failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
