//! Relation induction along seed-to-node paths.
//!
//! A rule is a quantified sequence of relation labels, matched as a
//! regular language over the six-label alphabet. The first rule (in table
//! order) whose language contains the path gives the induced relation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EvolvingGraph, Relation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InduceError {
    #[error("node `{0}` not found")]
    NodeNotFound(String),
    #[error("node `{0}` is the seed")]
    IsSeed(String),
    #[error("path from the seed to `{0}` is broken")]
    BrokenPath(String),
    #[error("path mixes forward and backward relations: {0:?}")]
    MixedDirection(Vec<Relation>),
    #[error("empty relation path")]
    EmptyPath,
    #[error("invalid rule: {0}")]
    InvalidRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quant {
    /// Zero or more.
    Star,
    /// One or more.
    Plus,
    /// Exactly one.
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternItem {
    pub rel: Relation,
    pub quant: Quant,
}

const fn item(rel: Relation, quant: Quant) -> PatternItem {
    PatternItem { rel, quant }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductionRule {
    pub pattern: Vec<PatternItem>,
    pub conclusion: Relation,
}

impl InductionRule {
    pub fn validate(&self) -> Result<(), InduceError> {
        if self.pattern.is_empty() {
            return Err(InduceError::InvalidRule("empty pattern".into()));
        }
        if self.pattern.iter().all(|p| p.quant == Quant::Star) {
            return Err(InduceError::InvalidRule(
                "pattern needs at least one non-star element".into(),
            ));
        }
        Ok(())
    }
}

/// How to read the trailing `(Before)` of the Cause and IsIntention rows,
/// which carries no quantifier in the published table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableReading {
    /// `(Before)*`, mirroring the forward rows' trailing `(After)*`.
    #[default]
    Symmetric,
    /// Exactly one trailing `Before`.
    Strict,
}

/// The six induction rules in table order.
pub fn default_rules(reading: TableReading) -> Vec<InductionRule> {
    use Quant::*;
    use Relation::*;
    let tail = match reading {
        TableReading::Symmetric => Star,
        TableReading::Strict => One,
    };
    vec![
        InductionRule {
            pattern: vec![item(After, Star), item(Result, Plus), item(After, Star)],
            conclusion: Result,
        },
        InductionRule {
            pattern: vec![item(After, Star), item(HasIntention, Plus), item(After, Star)],
            conclusion: HasIntention,
        },
        InductionRule {
            pattern: vec![item(After, Plus)],
            conclusion: After,
        },
        InductionRule {
            pattern: vec![item(Before, Star), item(Cause, Plus), item(Before, tail)],
            conclusion: Cause,
        },
        InductionRule {
            pattern: vec![item(Before, Star), item(IsIntention, Plus), item(Before, tail)],
            conclusion: IsIntention,
        },
        InductionRule {
            pattern: vec![item(Before, Plus)],
            conclusion: Before,
        },
    ]
}

/// Load rules from a JSON array of `{"pattern": [{"rel","quant"}], "conclusion"}`.
pub fn load_rules(path: &Path) -> Result<Vec<InductionRule>, InduceError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| InduceError::InvalidRule(format!("{}: {e}", path.display())))?;
    let rules: Vec<InductionRule> =
        serde_json::from_str(&text).map_err(|e| InduceError::InvalidRule(format!("{}: {e}", path.display())))?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

/// Relation labels on the tree path from the seed to `node_id`.
pub fn seed_path(graph: &EvolvingGraph, node_id: &str) -> Result<Vec<Relation>, InduceError> {
    if graph.node(node_id).is_none() {
        return Err(InduceError::NodeNotFound(node_id.to_string()));
    }
    if node_id == graph.seed_id {
        return Err(InduceError::IsSeed(node_id.to_string()));
    }
    let parents = graph.parent_edges();
    let mut path = Vec::new();
    let mut cur = node_id;
    while cur != graph.seed_id {
        let edge = parents
            .get(cur)
            .ok_or_else(|| InduceError::BrokenPath(node_id.to_string()))?;
        path.push(edge.rel);
        cur = edge.src.as_str();
        if path.len() > graph.nodes.len() {
            return Err(InduceError::BrokenPath(node_id.to_string()));
        }
    }
    path.reverse();
    Ok(path)
}

#[derive(Debug, Clone, Copy)]
enum Atom {
    One(Relation),
    Star(Relation),
}

/// `x+` is expanded to `x x*`, leaving single symbols and Kleene stars.
fn atoms(pattern: &[PatternItem]) -> Vec<Atom> {
    let mut out = Vec::with_capacity(pattern.len() + 2);
    for p in pattern {
        match p.quant {
            Quant::One => out.push(Atom::One(p.rel)),
            Quant::Star => out.push(Atom::Star(p.rel)),
            Quant::Plus => {
                out.push(Atom::One(p.rel));
                out.push(Atom::Star(p.rel));
            }
        }
    }
    out
}

/// Whether `path` is in the language of `rule.pattern`.
///
/// Runs the Thompson-style NFA whose state `i` means "atoms before `i`
/// have been matched"; star atoms loop on their symbol and may be skipped.
pub fn match_rule(path: &[Relation], rule: &InductionRule) -> bool {
    let atoms = atoms(&rule.pattern);
    let n = atoms.len();
    let closure = |states: &mut Vec<bool>| {
        for i in 0..n {
            if states[i] {
                if let Atom::Star(_) = atoms[i] {
                    states[i + 1] = true;
                }
            }
        }
    };
    let mut states = vec![false; n + 1];
    states[0] = true;
    closure(&mut states);
    for &sym in path {
        let mut next = vec![false; n + 1];
        for i in 0..n {
            if !states[i] {
                continue;
            }
            match atoms[i] {
                Atom::One(r) if r == sym => next[i + 1] = true,
                Atom::Star(r) if r == sym => next[i] = true,
                _ => {}
            }
        }
        closure(&mut next);
        if !next.iter().any(|&s| s) {
            return false;
        }
        states = next;
    }
    states[n]
}

/// Result of collapsing a path with a rule set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Induced {
    Relation(Relation),
    NoRule,
}

pub fn induce_with(path: &[Relation], rules: &[InductionRule]) -> Result<Induced, InduceError> {
    let Some(first) = path.first() else {
        return Err(InduceError::EmptyPath);
    };
    if path.iter().any(|r| r.direction() != first.direction()) {
        return Err(InduceError::MixedDirection(path.to_vec()));
    }
    Ok(rules
        .iter()
        .find(|rule| match_rule(path, rule))
        .map_or(Induced::NoRule, |rule| Induced::Relation(rule.conclusion)))
}

/// Induce with the default (symmetric) table.
pub fn induce_relation(path: &[Relation]) -> Result<Induced, InduceError> {
    induce_with(path, &default_rules(TableReading::Symmetric))
}
