//! Breadth-first growth of a seed event into forward and backward trees.
//!
//! Each frontier node gets `rel_sample` relations drawn from its direction
//! class; the provider proposes candidates for them, duplicates of existing
//! nodes are discarded, and `event_sample` survivors become the next
//! frontier. Only the seed's own expansion sees the image caption.

use std::collections::HashSet;

use log::warn;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{node_id, Direction, Edge, Event, EvolvingGraph, GraphNode, NodeDirection, Relation};
use crate::provider::{Candidate, EvolveRequest, Provider, ProviderError};
use crate::rng::scoped_rng;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("seed event `{0}` has no image caption")]
    MissingCaption(String),
    #[error("invalid evolve config: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveConfig {
    pub steps_l: u32,
    pub rel_sample: usize,
    pub event_sample: usize,
    pub rng_seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            steps_l: 3,
            rel_sample: 2,
            event_sample: 2,
            rng_seed: 0,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        if self.steps_l == 0 {
            return Err(EvolveError::Config("steps_l must be at least 1".into()));
        }
        if !(1..=3).contains(&self.rel_sample) {
            return Err(EvolveError::Config("rel_sample must be in 1..=3".into()));
        }
        if self.event_sample == 0 {
            return Err(EvolveError::Config("event_sample must be at least 1".into()));
        }
        Ok(())
    }

    /// Candidates requested per relation: one more than we keep per node.
    pub fn n_per_relation(&self) -> usize {
        self.event_sample + 1
    }

    /// Largest possible graph: 1 + 2 * sum_{i=1..L} event_sample^i.
    pub fn max_nodes(&self) -> usize {
        let per_side: usize = (1..=self.steps_l).map(|i| self.event_sample.pow(i)).sum();
        1 + 2 * per_side
    }
}

/// One provider exchange, written to the `--trace` sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub graph_id: String,
    pub node_id: String,
    pub depth: u32,
    pub request: EvolveRequest,
    pub prompt: String,
    pub raw: String,
}

/// Nodes and edges of one direction's tree, excluding the seed node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartialTree {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
}

pub fn graph_id_for(seed: &Event) -> String {
    format!("g-{}", seed.id)
}

fn dedupe_key(text: &str) -> String {
    text.trim().to_lowercase()
}

/// Grow one direction from the seed, deduplicating against the seed text only.
pub fn evolve_direction(
    seed: &Event,
    direction: Direction,
    cfg: &EvolveConfig,
    provider: &dyn Provider,
    trace: Option<&mut Vec<TraceEntry>>,
) -> Result<PartialTree, EvolveError> {
    let mut known = HashSet::from([dedupe_key(&seed.text)]);
    grow(&graph_id_for(seed), seed, direction, cfg, provider, &mut known, trace)
}

fn grow(
    graph_id: &str,
    seed: &Event,
    direction: Direction,
    cfg: &EvolveConfig,
    provider: &dyn Provider,
    known: &mut HashSet<String>,
    mut trace: Option<&mut Vec<TraceEntry>>,
) -> Result<PartialTree, EvolveError> {
    cfg.validate()?;
    let caption = seed
        .caption
        .clone()
        .ok_or_else(|| EvolveError::MissingCaption(seed.id.clone()))?;

    let mut tree = PartialTree::default();
    let mut frontier = vec![(seed.id.clone(), seed.text.clone())];
    let relations = direction.relations();

    for depth in 0..cfg.steps_l {
        frontier.sort();
        let requests: Vec<EvolveRequest> = frontier
            .iter()
            .map(|(id, text)| {
                let mut rng = scoped_rng(cfg.rng_seed, &[graph_id, id, "relations"]);
                let mut rels: Vec<Relation> = relations.choose_multiple(&mut rng, cfg.rel_sample).copied().collect();
                rels.sort();
                EvolveRequest {
                    parent_text: text.clone(),
                    caption: (depth == 0).then(|| caption.clone()),
                    relations: rels,
                    n_per_relation: cfg.n_per_relation(),
                }
            })
            .collect();

        let responses = call_bounded(provider, &requests);

        let mut next = Vec::new();
        for (((parent_id, _), req), resp) in frontier.iter().zip(&requests).zip(responses) {
            let resp = match resp {
                Ok(r) => r,
                Err(ProviderError::ParseFailure) | Err(ProviderError::InvalidRequest(_)) => {
                    warn!("{graph_id}: node {parent_id} produced no usable candidates");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceEntry {
                    graph_id: graph_id.to_string(),
                    node_id: parent_id.clone(),
                    depth,
                    request: req.clone(),
                    prompt: crate::provider::render_evolve_prompt(req),
                    raw: resp.raw.clone(),
                });
            }

            let mut seen_here = HashSet::new();
            let usable: Vec<Candidate> = resp
                .candidates
                .into_iter()
                .filter(|c| req.relations.contains(&c.relation) && !c.text.trim().is_empty())
                .filter(|c| {
                    let key = dedupe_key(&c.text);
                    !known.contains(&key) && seen_here.insert(key)
                })
                .collect();

            let mut rng = scoped_rng(cfg.rng_seed, &[graph_id, parent_id, "events"]);
            let amount = cfg.event_sample.min(usable.len());
            let mut picked = index::sample(&mut rng, usable.len(), amount).into_vec();
            picked.sort_by_key(|&i| (usable[i].relation, i));

            for i in picked {
                let c = &usable[i];
                let text = c.text.trim().to_string();
                let id = node_id(graph_id, parent_id, c.relation, &text);
                known.insert(dedupe_key(&text));
                tree.nodes.push(GraphNode {
                    id: id.clone(),
                    text: text.clone(),
                    direction: direction.into(),
                    depth: depth + 1,
                });
                tree.edges.push(Edge {
                    src: parent_id.clone(),
                    rel: c.relation,
                    dst: id.clone(),
                });
                next.push((id, text));
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(tree)
}

/// Issue all requests with at most `provider.max_parallel()` in flight,
/// returning results in request order.
fn call_bounded(
    provider: &dyn Provider,
    requests: &[EvolveRequest],
) -> Vec<Result<crate::provider::EvolveResponse, ProviderError>> {
    let width = provider.max_parallel().max(1);
    if width == 1 || requests.len() <= 1 {
        return requests.iter().map(|r| provider.evolve(r)).collect();
    }
    let mut out = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(width) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|r| s.spawn(move || provider.evolve(r))).collect();
            for h in handles {
                out.push(h.join().expect("provider call panicked"));
            }
        });
    }
    out
}

/// Both directions merged on the shared seed node.
pub fn evolve_graph(
    seed: &Event,
    cfg: &EvolveConfig,
    provider: &dyn Provider,
    mut trace: Option<&mut Vec<TraceEntry>>,
) -> Result<EvolvingGraph, EvolveError> {
    let graph_id = graph_id_for(seed);
    let mut graph = EvolvingGraph::from_seed(graph_id.clone(), seed);
    let mut known = HashSet::from([dedupe_key(&seed.text)]);
    for direction in [Direction::Forward, Direction::Backward] {
        let part = grow(
            &graph_id,
            seed,
            direction,
            cfg,
            provider,
            &mut known,
            trace.as_deref_mut(),
        )?;
        graph.nodes.extend(part.nodes);
        graph.edges.extend(part.edges);
    }
    debug_assert!(graph
        .nodes
        .iter()
        .all(|n| n.direction == NodeDirection::Seed || n.depth >= 1));
    Ok(graph)
}
