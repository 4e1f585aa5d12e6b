//! Guiding discrimination data: hard negatives and multiple-choice rows.
//!
//! Semantic negatives come from other graphs and must look alike (word
//! overlap in a band, small normalized tree edit distance). Evolving
//! negatives come from the opposite-direction tree of the same graph.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encapsulate::{render_template, select_template, EncapsulateError, TemplateStore};
use crate::model::{
    DepTree, EvolvingGraph, GraphNode, InstructionDatum, Negative, NegativeSource, NodeDirection, TaskKind,
};
use crate::rng::{scoped_rng, Rng};
use crate::ted::{normalized_ted, TreeSource};
use crate::text::{set_overlap, token_set};

#[derive(Debug, Error)]
pub enum DiscriminateError {
    #[error("only {have} usable negatives, need {need}")]
    InsufficientNegatives { have: usize, need: usize },
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error("datum `{0}` is not an open datum")]
    NotOpen(String),
    #[error(transparent)]
    Encapsulate(#[from] EncapsulateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub ted_max: f64,
    pub overlap_min: f64,
    pub overlap_max: f64,
    pub n_semantic: usize,
    pub n_evolving: usize,
    pub n_keep: usize,
    pub rng_seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            ted_max: 0.6,
            overlap_min: 0.2,
            overlap_max: 0.8,
            n_semantic: 2,
            n_evolving: 2,
            n_keep: 2,
            rng_seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), DiscriminateError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.ted_max) || !unit.contains(&self.overlap_min) || !unit.contains(&self.overlap_max) {
            return Err(DiscriminateError::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.overlap_min >= self.overlap_max {
            return Err(DiscriminateError::Config(
                "overlap_min must be below overlap_max".into(),
            ));
        }
        if self.n_keep > self.n_semantic + self.n_evolving {
            return Err(DiscriminateError::Config(
                "n_keep exceeds n_semantic + n_evolving".into(),
            ));
        }
        if self.n_keep == 0 || self.n_keep > 7 {
            return Err(DiscriminateError::Config("n_keep must be in 1..=7".into()));
        }
        Ok(())
    }

    /// The semantic-negative filter.
    pub fn accepts(&self, overlap: f64, nted: f64) -> bool {
        self.overlap_min <= overlap && overlap < self.overlap_max && nted <= self.ted_max
    }
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub graph_id: String,
    pub node_id: String,
    pub text: String,
    pub tokens: BTreeSet<String>,
    pub tree: DepTree,
}

impl PoolEntry {
    pub fn new(graph_id: &str, node: &GraphNode, trees: &TreeSource) -> Self {
        PoolEntry {
            graph_id: graph_id.to_string(),
            node_id: node.id.clone(),
            text: node.text.clone(),
            tokens: token_set(&node.text),
            tree: trees.tree(&node.id, &node.text),
        }
    }
}

/// Every node of every graph, with token sets and trees computed once.
#[derive(Debug, Clone, Default)]
pub struct SemanticPool {
    pub entries: Vec<PoolEntry>,
}

impl SemanticPool {
    pub fn build(graphs: &[EvolvingGraph], trees: &TreeSource) -> Self {
        let entries = graphs
            .iter()
            .flat_map(|g| g.nodes.iter().map(move |n| PoolEntry::new(&g.graph_id, n, trees)))
            .collect();
        SemanticPool { entries }
    }

    pub fn find(&self, graph_id: &str, node_id: &str) -> Option<&PoolEntry> {
        self.entries
            .iter()
            .find(|e| e.graph_id == graph_id && e.node_id == node_id)
    }
}

/// Up to `n_semantic` look-alike events from graphs other than the
/// positive's, closest (by normalized tree edit distance) first.
pub fn mine_semantic(positive: &PoolEntry, pool: &SemanticPool, cfg: &MiningConfig) -> Vec<Negative> {
    let mut scored: Vec<(f64, f64, &PoolEntry)> = pool
        .entries
        .iter()
        .filter(|e| e.graph_id != positive.graph_id)
        .filter_map(|e| {
            let overlap = set_overlap(&positive.tokens, &e.tokens);
            if !(cfg.overlap_min <= overlap && overlap < cfg.overlap_max) {
                return None;
            }
            let nted = normalized_ted(&positive.tree, &e.tree);
            cfg.accepts(overlap, nted).then_some((nted, overlap, e))
        })
        .collect();
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| b.1.total_cmp(&a.1))
            .then_with(|| a.2.text.cmp(&b.2.text))
            .then_with(|| a.2.graph_id.cmp(&b.2.graph_id))
            .then_with(|| a.2.node_id.cmp(&b.2.node_id))
    });
    let mut seen = HashSet::new();
    scored
        .into_iter()
        .filter(|(_, _, e)| seen.insert(e.text.as_str()))
        .take(cfg.n_semantic)
        .map(|(_, _, e)| Negative {
            text: e.text.clone(),
            source: NegativeSource::Semantic,
            graph_id: e.graph_id.clone(),
            node_id: e.node_id.clone(),
        })
        .collect()
}

/// Seeded sample of up to `n_evolving` nodes from the tree on the other
/// side of the seed.
pub fn mine_evolving(positive: &GraphNode, graph: &EvolvingGraph, cfg: &MiningConfig, rng: &mut Rng) -> Vec<Negative> {
    let Some(dir) = positive.direction.as_direction() else {
        return Vec::new();
    };
    let opposite = NodeDirection::from(dir.opposite());
    let pool: Vec<&GraphNode> = graph.nodes.iter().filter(|n| n.direction == opposite).collect();
    let amount = cfg.n_evolving.min(pool.len());
    let mut picked = index::sample(rng, pool.len(), amount).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| Negative {
            text: pool[i].text.clone(),
            source: NegativeSource::Evolving,
            graph_id: graph.graph_id.clone(),
            node_id: pool[i].id.clone(),
        })
        .collect()
}

pub fn choice_datum_id(graph_id: &str, node_id: &str) -> String {
    format!("{graph_id}/{node_id}/choice")
}

fn same_text(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

/// Turn an open datum into a multiple-choice one: `n_keep` negatives are
/// drawn from the mined ones, shuffled in with the answer, and rendered
/// through a choice template.
pub fn build_choice_datum(
    open: &InstructionDatum,
    negatives: &[Negative],
    store: &TemplateStore,
    caption: &str,
    event_text: Option<&str>,
    cfg: &MiningConfig,
) -> Result<InstructionDatum, DiscriminateError> {
    if open.task != TaskKind::Open {
        return Err(DiscriminateError::NotOpen(open.id.clone()));
    }
    let id = choice_datum_id(&open.provenance.graph_id, &open.provenance.node_id);

    let mut seen: Vec<&str> = vec![open.answer.as_str()];
    let usable: Vec<&Negative> = negatives
        .iter()
        .filter(|n| {
            if seen.iter().any(|s| same_text(s, &n.text)) {
                false
            } else {
                seen.push(&n.text);
                true
            }
        })
        .collect();
    if usable.len() < cfg.n_keep {
        return Err(DiscriminateError::InsufficientNegatives {
            have: usable.len(),
            need: cfg.n_keep,
        });
    }

    let mut rng = scoped_rng(cfg.rng_seed, &[&id, "negatives"]);
    let mut picked = index::sample(&mut rng, usable.len(), cfg.n_keep).into_vec();
    picked.sort_unstable();
    let chosen: Vec<Negative> = picked.into_iter().map(|i| usable[i].clone()).collect();

    let mut options: Vec<String> = std::iter::once(open.answer.clone())
        .chain(chosen.iter().map(|n| n.text.clone()))
        .collect();
    let mut shuffle_rng = scoped_rng(cfg.rng_seed, &[&id, "shuffle"]);
    options.shuffle(&mut shuffle_rng);
    let answer_index = options
        .iter()
        .position(|o| *o == open.answer)
        .expect("answer is among the options");

    let mut template_rng = scoped_rng(cfg.rng_seed, &[&id, "template"]);
    let template = select_template(
        store,
        open.relation,
        event_text.is_some(),
        TaskKind::Choice,
        &mut template_rng,
    )?;
    let question = render_template(template, caption, event_text, Some(&options));

    Ok(InstructionDatum {
        id,
        image: open.image.clone(),
        question,
        answer: open.answer.clone(),
        relation: open.relation,
        task: TaskKind::Choice,
        options: Some(options),
        answer_index: Some(answer_index),
        provenance: open.provenance.clone(),
        negatives: Some(chosen),
    })
}
