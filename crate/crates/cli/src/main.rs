use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use eventevo::diversify::Tagger;
use eventevo::encapsulate::{generate_template_store, TemplateStore};
use eventevo::induce::{load_rules, TableReading};
use eventevo::io::{read_json, read_jsonl, write_json, write_jsonl};
use eventevo::metrics::{evaluate, ExternalScore, Metric, Prediction};
use eventevo::model::{validate_graph, DepTree, Event, EvolvingGraph, InstructionDatum, Template};
use eventevo::pipeline::{
    build_dataset, dataset_stats, graph_stats, run_diversify, run_evolve, BuildOptions, PipelineConfig, Stats,
};
use eventevo::provider::{build_provider, ProviderError, ProviderKind};
use eventevo::ted::TreeSource;

#[derive(Parser)]
#[command(name = "eventevo", version, about = "Event-evolving graph synthesis and evaluation")]
struct Cli {
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tag triggers and cap events per trigger.
    Diversify(DiversifyArgs),
    /// Grow event-evolving graphs from seed events.
    Evolve(EvolveArgs),
    /// Generate an instruction template store.
    Templates(TemplatesArgs),
    /// Induce relations and write open and multiple-choice instruction data.
    BuildDataset(BuildArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Summary statistics of graphs and/or a dataset.
    Stats(StatsArgs),
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed every module seed is derived from.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DiversifyArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, value_enum)]
    tagger: Option<TaggerArg>,
    /// Histogram report; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaggerArg {
    Heuristic,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Evolution steps per direction.
    #[arg(long)]
    steps: Option<u32>,
    /// Events kept per expanded node.
    #[arg(long)]
    branch: Option<usize>,
    /// Relations sampled per expanded node.
    #[arg(long)]
    rel_sample: Option<usize>,
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    /// Sidecar JSONL with every prompt and raw response.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TemplatesArgs {
    #[arg(long)]
    out: PathBuf,
    /// Templates requested per (relation, with_text, format) bucket.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    graphs: Option<PathBuf>,
    /// Template store; the bundled store when absent.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Only open-generation rows.
    #[arg(long)]
    no_choice: bool,
    /// Dependency parses keyed by node id (`{"id", "tree"}` lines).
    #[arg(long)]
    parses: Option<PathBuf>,
    /// Induction rules file replacing the built-in table.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Read the Cause/IsIntention rows with exactly one trailing Before.
    #[arg(long)]
    strict_table: bool,
    /// Skip report; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "acc,bleu1,bleu2")]
    metrics: Vec<Metric>,
    /// Externally computed scores as `name=path` (`{"id","score"}` lines).
    #[arg(long)]
    external: Vec<String>,
    /// Report path; defaults to stdout only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    graphs: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: 2, err: e.into() }
}

fn provider_failure<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: 3, err: e.into() }
}

type CmdResult = Result<serde_json::Value, Failure>;

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(input)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn finish(cfg: PipelineConfig) -> Result<PipelineConfig, Failure> {
    cfg.validate().map_err(input)?;
    Ok(cfg.resolved())
}

fn required(flag: Option<PathBuf>, from_config: &Option<String>, name: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| from_config.as_ref().map(PathBuf::from))
        .ok_or_else(|| input(anyhow!("--{name} is required (or set paths.{name} in the config)")))
}

fn cmd_diversify(a: DiversifyArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    if let Some(cap) = a.cap {
        cfg.diversify.cap_k = cap;
    }
    if let Some(t) = a.tagger {
        cfg.diversify.tagger = match t {
            TaggerArg::Heuristic => Tagger::Heuristic,
            TaggerArg::External => Tagger::External,
        };
    }
    let cfg = finish(cfg)?;
    let path = required(a.input, &cfg.paths.events, "input")?;
    let events: Vec<Event> = read_jsonl(&path).map_err(input)?;
    for e in &events {
        e.validate().map_err(input)?;
    }
    let (seeds, report) = run_diversify(&events, &cfg.diversify).map_err(input)?;
    write_jsonl(&a.out, &seeds).map_err(input)?;
    write_json(&a.report.unwrap_or_else(|| sidecar(&a.out, ".report.json")), &report).map_err(input)?;
    info!(
        "{} events -> {} seeds; max trigger share {:.3} -> {:.3}",
        events.len(),
        seeds.len(),
        report.before.max_share,
        report.after.max_share
    );
    Ok(serde_json::json!({
        "events": events.len(),
        "seeds": seeds.len(),
        "before_max_share": report.before.max_share,
        "after_max_share": report.after.max_share,
    }))
}

fn apply_provider(cfg: &mut PipelineConfig, p: Option<ProviderArg>) {
    if let Some(p) = p {
        cfg.provider.kind = match p {
            ProviderArg::Mock => ProviderKind::Mock,
            ProviderArg::Http => ProviderKind::Http,
        };
    }
}

fn make_provider(cfg: &PipelineConfig) -> Result<Box<dyn eventevo::provider::Provider>, Failure> {
    build_provider(&cfg.provider).map_err(|e| match e {
        ProviderError::MissingApiKey(_) | ProviderError::Config(_) => input(e),
        other => provider_failure(other),
    })
}

fn cmd_evolve(a: EvolveArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    if let Some(l) = a.steps {
        cfg.evolve.steps_l = l;
    }
    if let Some(b) = a.branch {
        cfg.evolve.event_sample = b;
    }
    if let Some(r) = a.rel_sample {
        cfg.evolve.rel_sample = r;
    }
    apply_provider(&mut cfg, a.provider);
    let cfg = finish(cfg)?;
    let path = required(a.seeds, &cfg.paths.seeds, "seeds")?;
    let seeds: Vec<Event> = read_jsonl(&path).map_err(input)?;
    for e in &seeds {
        e.validate().map_err(input)?;
    }
    let provider = make_provider(&cfg)?;

    let run = run_evolve(&seeds, &cfg.evolve, provider.as_ref(), a.jobs, a.trace.is_some());
    write_jsonl(&a.out, &run.graphs).map_err(input)?;
    write_json(&sidecar(&a.out, ".failures.json"), &run.failures).map_err(input)?;
    if let Some(t) = &a.trace {
        write_jsonl(t, &run.trace).map_err(input)?;
    }
    let invalid: Vec<&str> = run
        .graphs
        .iter()
        .filter(|g| !validate_graph(g).is_empty())
        .map(|g| g.graph_id.as_str())
        .collect();
    if !invalid.is_empty() {
        return Err(input(anyhow!("invalid graphs produced: {}", invalid.join(", "))));
    }
    let summary = serde_json::json!({
        "seeds": seeds.len(),
        "graphs": run.graphs.len(),
        "failures": run.failures.len(),
        "nodes": run.graphs.iter().map(|g| g.nodes.len()).collect::<Vec<_>>(),
    });
    if let Some(f) = run.failures.iter().find(|f| f.provider) {
        return Err(provider_failure(anyhow!(
            "{} of {} graphs failed (first: {}: {}); partial output written",
            run.failures.len(),
            seeds.len(),
            f.seed_id,
            f.error
        )));
    }
    if !run.failures.is_empty() {
        return Err(input(anyhow!(
            "{} seeds could not be evolved; see {}",
            run.failures.len(),
            sidecar(&a.out, ".failures.json").display()
        )));
    }
    Ok(summary)
}

fn cmd_templates(a: TemplatesArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    apply_provider(&mut cfg, a.provider);
    let cfg = finish(cfg)?;
    let provider = make_provider(&cfg)?;
    let gen = generate_template_store(provider.as_ref(), a.n).map_err(provider_failure)?;
    write_json(&a.out, &gen.templates).map_err(input)?;
    Ok(serde_json::json!({
        "templates": gen.templates.len(),
        "generated": gen.generated,
        "rejected": gen.rejected,
    }))
}

#[derive(serde::Deserialize)]
struct ParseLine {
    id: String,
    tree: DepTree,
}

fn cmd_build(a: BuildArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    if a.no_choice {
        cfg.choice = false;
    }
    if a.strict_table {
        cfg.induction = TableReading::Strict;
    }
    let cfg = finish(cfg)?;
    let graphs_path = required(a.graphs, &cfg.paths.graphs, "graphs")?;
    let graphs: Vec<EvolvingGraph> = read_jsonl(&graphs_path).map_err(input)?;
    for g in &graphs {
        let v = validate_graph(g);
        if !v.is_empty() {
            return Err(input(anyhow!("graph {} is invalid: {}", g.graph_id, v.join("; "))));
        }
    }
    let store = match a.templates.or_else(|| cfg.paths.templates.as_ref().map(PathBuf::from)) {
        Some(p) => {
            let templates: Vec<Template> = read_json(&p).map_err(input)?;
            TemplateStore::new(templates).map_err(input)?
        }
        None => TemplateStore::fallback(),
    };
    let trees = match a.parses.or_else(|| cfg.paths.parses.as_ref().map(PathBuf::from)) {
        Some(p) => {
            let lines: Vec<ParseLine> = read_jsonl(&p).map_err(input)?;
            TreeSource::External(lines.into_iter().map(|l| (l.id, l.tree)).collect())
        }
        None => TreeSource::Flat,
    };
    let mut opts = BuildOptions::from_config(&cfg);
    if let Some(p) = a.rules.or_else(|| cfg.paths.rules.as_ref().map(PathBuf::from)) {
        opts.rules = load_rules(&p).map_err(input)?;
    }

    let (rows, report) = build_dataset(&graphs, &store, &opts, &trees, a.jobs).map_err(input)?;
    write_jsonl(&a.out, &rows).map_err(input)?;
    write_json(&a.report.unwrap_or_else(|| sidecar(&a.out, ".report.json")), &report).map_err(input)?;
    info!(
        "{} graphs -> {} open + {} choice rows ({} no-rule paths)",
        graphs.len(),
        report.open_rows,
        report.choice_rows,
        report.no_rule_paths
    );
    serde_json::to_value(&report).map_err(input)
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let preds: Vec<Prediction> = read_jsonl(&a.pred).map_err(input)?;
    let gold: Vec<InstructionDatum> = read_jsonl(&a.gold).map_err(input)?;
    let mut external = Vec::new();
    for spec in &a.external {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| input(anyhow!("--external expects name=path, got `{spec}`")))?;
        let scores: Vec<ExternalScore> = read_jsonl(Path::new(path)).map_err(input)?;
        external.push((name.to_string(), scores));
    }
    let report = evaluate(&preds, &gold, &a.metrics, &external).map_err(input)?;
    if let Some(out) = &a.out {
        write_json(out, &report).map_err(input)?;
    }
    Ok(serde_json::json!({
        "metrics": report.metrics,
        "decode_branches": report.decode_branches,
        "bleu_variant": report.bleu_variant,
    }))
}

fn cmd_stats(a: StatsArgs) -> CmdResult {
    if a.graphs.is_none() && a.dataset.is_none() {
        return Err(input(anyhow!("pass --graphs and/or --dataset")));
    }
    let mut stats = Stats::default();
    if let Some(p) = &a.graphs {
        let graphs: Vec<EvolvingGraph> = read_jsonl(p).map_err(input)?;
        graph_stats(&graphs, &mut stats);
    }
    if let Some(p) = &a.dataset {
        let rows: Vec<InstructionDatum> = read_jsonl(p).map_err(input)?;
        dataset_stats(&rows, &mut stats);
    }
    if let Some(out) = &a.out {
        write_json(out, &stats).map_err(input)?;
    }
    serde_json::to_value(&stats).context("serializing stats").map_err(input)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Diversify(a) => cmd_diversify(a),
        Command::Evolve(a) => cmd_evolve(a),
        Command::Templates(a) => cmd_templates(a),
        Command::BuildDataset(a) => cmd_build(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(summary) => {
            if cli.json {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
