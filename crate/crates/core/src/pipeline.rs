//! Whole-pipeline configuration and the batch stages behind the CLI.
//!
//! Every stage is deterministic in its inputs and the global seed; worker
//! parallelism (`jobs`) never changes the output order or content.

use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminate::{
    build_choice_datum, mine_evolving, mine_semantic, DiscriminateError, MiningConfig, PoolEntry, SemanticPool,
};
use crate::diversify::{diversify, DiversifyConfig, DiversifyError, DiversifyReport, TriggerHistogram};
use crate::encapsulate::{
    cap_sources, encapsulate_open, enumerate_data, include_text, seed_visuals, EncapsulateConfig, EncapsulateError,
    TemplateStore,
};
use crate::evolve::{evolve_graph, graph_id_for, EvolveConfig, EvolveError, TraceEntry};
use crate::induce::{default_rules, InductionRule, TableReading};
use crate::model::{Event, EvolvingGraph, InstructionDatum};
use crate::provider::{Provider, ProviderConfig};
use crate::rng::{derive_seed, scoped_rng};
use crate::ted::TreeSource;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub events: Option<String>,
    pub seeds: Option<String>,
    pub graphs: Option<String>,
    pub templates: Option<String>,
    pub dataset: Option<String>,
    pub parses: Option<String>,
    pub rules: Option<String>,
}

/// All module settings plus the global seed. Per-module seeds are always
/// derived from `rng_seed`; see [`PipelineConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub rng_seed: u64,
    pub diversify: DiversifyConfig,
    pub evolve: EvolveConfig,
    pub encapsulate: EncapsulateConfig,
    pub mining: MiningConfig,
    pub provider: ProviderConfig,
    pub induction: TableReading,
    /// Emit multiple-choice rows alongside open rows.
    pub choice: bool,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rng_seed: 0,
            diversify: DiversifyConfig::default(),
            evolve: EvolveConfig::default(),
            encapsulate: EncapsulateConfig::default(),
            mining: MiningConfig::default(),
            provider: ProviderConfig::default(),
            induction: TableReading::Symmetric,
            choice: true,
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
    #[error("{0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Ok(crate::io::read_json(path)?)
    }

    /// Copy with every module seed derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.diversify.rng_seed = derive_seed(self.rng_seed, &["diversify"]);
        c.evolve.rng_seed = derive_seed(self.rng_seed, &["evolve"]);
        c.encapsulate.rng_seed = derive_seed(self.rng_seed, &["encapsulate"]);
        c.mining.rng_seed = derive_seed(self.rng_seed, &["discriminate"]);
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: String| ConfigError::Invalid(e);
        if self.diversify.cap_k == 0 {
            return Err(bad("diversify.cap_k must be at least 1".into()));
        }
        self.evolve.validate().map_err(|e| bad(e.to_string()))?;
        self.encapsulate.validate().map_err(|e| bad(e.to_string()))?;
        self.mining.validate().map_err(|e| bad(e.to_string()))?;
        self.provider.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
}

pub fn run_diversify(events: &[Event], cfg: &DiversifyConfig) -> Result<(Vec<Event>, DiversifyReport), DiversifyError> {
    let seeds = diversify(events, cfg)?;
    let report = DiversifyReport {
        cap_k: cfg.cap_k,
        before: TriggerHistogram::of_events(events, cfg.tagger),
        after: TriggerHistogram::from_triggers(seeds.iter().map(|e| e.trigger.as_deref().unwrap_or_default())),
    };
    Ok((seeds, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub seed_id: String,
    pub error: String,
    /// True when the provider itself failed (as opposed to bad input).
    pub provider: bool,
}

#[derive(Debug, Default)]
pub struct EvolveRun {
    pub graphs: Vec<EvolvingGraph>,
    pub failures: Vec<Failure>,
    pub trace: Vec<TraceEntry>,
}

/// Evolve every seed, `jobs` graphs at a time, preserving seed order.
pub fn run_evolve(seeds: &[Event], cfg: &EvolveConfig, provider: &dyn Provider, jobs: usize, trace: bool) -> EvolveRun {
    let results: Vec<(Result<EvolvingGraph, EvolveError>, Vec<TraceEntry>)> = pool(jobs).install(|| {
        seeds
            .par_iter()
            .map(|seed| {
                let mut t = Vec::new();
                let g = evolve_graph(seed, cfg, provider, trace.then_some(&mut t));
                (g, t)
            })
            .collect()
    });
    let mut run = EvolveRun::default();
    for (seed, (res, t)) in seeds.iter().zip(results) {
        run.trace.extend(t);
        match res {
            Ok(g) => {
                info!("{}: {} nodes", g.graph_id, g.nodes.len());
                run.graphs.push(g);
            }
            Err(e) => {
                warn!("{}: {e}", graph_id_for(seed));
                run.failures.push(Failure {
                    seed_id: seed.id.clone(),
                    provider: matches!(e, EvolveError::Provider(_)),
                    error: e.to_string(),
                });
            }
        }
    }
    run
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub no_rule_paths: usize,
    pub empty_buckets: Vec<String>,
    pub open_rows: usize,
    pub choice_rows: usize,
    pub insufficient_negatives: usize,
    pub skipped_graphs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub encapsulate: EncapsulateConfig,
    pub mining: MiningConfig,
    pub rules: Vec<InductionRule>,
    pub choice: bool,
}

impl BuildOptions {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        BuildOptions {
            encapsulate: cfg.encapsulate.clone(),
            mining: cfg.mining.clone(),
            rules: default_rules(cfg.induction),
            choice: cfg.choice,
        }
    }
}

#[derive(Debug, Default)]
struct GraphRows {
    rows: Vec<InstructionDatum>,
    report: BuildReport,
}

fn build_graph_rows(
    graph: &EvolvingGraph,
    store: &TemplateStore,
    opts: &BuildOptions,
    pool: &SemanticPool,
    trees: &TreeSource,
) -> Result<GraphRows, EncapsulateError> {
    let mut out = GraphRows::default();
    let enumeration = enumerate_data(graph, &opts.rules)?;
    out.report.no_rule_paths = enumeration.no_rule_paths;
    let sources = cap_sources(
        enumeration.sources,
        opts.encapsulate.max_per_graph,
        opts.encapsulate.rng_seed,
        &graph.graph_id,
    );
    for src in &sources {
        let (image, caption) = seed_visuals(src)?;
        let open = encapsulate_open(src, image, caption, store, &opts.encapsulate)?;
        let choice = if opts.choice {
            let node = graph.node(&src.node_id).expect("enumerated node exists");
            let positive = pool
                .find(&graph.graph_id, &node.id)
                .cloned()
                .unwrap_or_else(|| PoolEntry::new(&graph.graph_id, node, trees));
            let mut negatives = mine_semantic(&positive, pool, &opts.mining);
            let mut rng = scoped_rng(opts.mining.rng_seed, &[&graph.graph_id, &node.id, "evolving"]);
            negatives.extend(mine_evolving(node, graph, &opts.mining, &mut rng));
            let with_text = include_text(&opts.encapsulate, &src.graph_id, &src.node_id);
            let event = with_text.then_some(src.seed.text.as_str());
            match build_choice_datum(&open, &negatives, store, caption, event, &opts.mining) {
                Ok(d) => Some(d),
                Err(DiscriminateError::InsufficientNegatives { .. }) => {
                    out.report.insufficient_negatives += 1;
                    None
                }
                Err(DiscriminateError::Encapsulate(e)) => return Err(e),
                Err(e) => panic!("unexpected discrimination error: {e}"),
            }
        } else {
            None
        };
        out.report.open_rows += 1;
        out.rows.push(open);
        if let Some(c) = choice {
            out.report.choice_rows += 1;
            out.rows.push(c);
        }
    }
    Ok(out)
}

/// Induce, encapsulate and (optionally) build multiple-choice rows for
/// every graph. Rows are emitted in graph order, then node order, with
/// each node's open row followed by its choice row.
pub fn build_dataset(
    graphs: &[EvolvingGraph],
    store: &TemplateStore,
    opts: &BuildOptions,
    trees: &TreeSource,
    jobs: usize,
) -> Result<(Vec<InstructionDatum>, BuildReport), EncapsulateError> {
    opts.encapsulate.validate()?;
    let threads = pool(jobs);
    let semantic_pool = if opts.choice {
        threads.install(|| {
            let entries = graphs
                .par_iter()
                .flat_map_iter(|g| g.nodes.iter().map(move |n| PoolEntry::new(&g.graph_id, n, trees)))
                .collect();
            SemanticPool { entries }
        })
    } else {
        SemanticPool::default()
    };

    let per_graph: Vec<Result<GraphRows, EncapsulateError>> = threads.install(|| {
        graphs
            .par_iter()
            .map(|g| build_graph_rows(g, store, opts, &semantic_pool, trees))
            .collect()
    });

    let mut rows = Vec::new();
    let mut report = BuildReport {
        empty_buckets: store.empty_buckets(),
        ..Default::default()
    };
    for (g, res) in graphs.iter().zip(per_graph) {
        match res {
            Ok(part) => {
                rows.extend(part.rows);
                report.no_rule_paths += part.report.no_rule_paths;
                report.open_rows += part.report.open_rows;
                report.choice_rows += part.report.choice_rows;
                report.insufficient_negatives += part.report.insufficient_negatives;
            }
            Err(EncapsulateError::MissingImage(id)) => {
                warn!("{id}: seed has no image, graph skipped");
                report.skipped_graphs.push(id);
            }
            Err(e) => {
                warn!("{}: {e}", g.graph_id);
                return Err(e);
            }
        }
    }
    Ok((rows, report))
}

/// Aggregate statistics in the shape of a trainset summary table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub graphs: Option<usize>,
    pub avg_nodes: Option<f64>,
    pub rows: Option<usize>,
    pub avg_input_tokens: Option<f64>,
}

pub fn graph_stats(graphs: &[EvolvingGraph], stats: &mut Stats) {
    stats.graphs = Some(graphs.len());
    stats.avg_nodes = Some(if graphs.is_empty() {
        0.0
    } else {
        graphs.iter().map(|g| g.nodes.len()).sum::<usize>() as f64 / graphs.len() as f64
    });
}

/// Row count and mean whitespace-token length of the question field.
pub fn dataset_stats(rows: &[InstructionDatum], stats: &mut Stats) {
    stats.rows = Some(rows.len());
    stats.avg_input_tokens = Some(if rows.is_empty() {
        0.0
    } else {
        rows.iter()
            .map(|d| d.question.split_whitespace().count())
            .sum::<usize>() as f64
            / rows.len() as f64
    });
}
