//! Domain types shared by every stage of the pipeline.
//!
//! Relations, events, evolving graphs, templates and instruction data are
//! plain immutable values; the serde representations here are the JSONL
//! file schemas read and written by the CLI.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown relation label `{0}`")]
    UnknownRelation(String),
    #[error("event `{0}` has empty text")]
    EmptyEventText(String),
    #[error("event `{0}` has a caption but no image")]
    CaptionWithoutImage(String),
    #[error("template for {relation} ({format:?}, with_text={with_text}) has placeholders that do not match its kind: {body:?}")]
    BadTemplate {
        relation: Relation,
        with_text: bool,
        format: TaskKind,
        body: String,
    },
    #[error("datum `{id}`: {reason}")]
    BadDatum { id: String, reason: String },
}

/// Evolution direction of a relation or of a graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    /// The three relation labels used when evolving in this direction.
    pub fn relations(self) -> [Relation; 3] {
        match self {
            Direction::Forward => [Relation::Result, Relation::After, Relation::HasIntention],
            Direction::Backward => [Relation::Cause, Relation::Before, Relation::IsIntention],
        }
    }
}

/// One of the six inter-event relation labels. The set is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Relation {
    Result,
    After,
    HasIntention,
    Cause,
    Before,
    IsIntention,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::Result,
        Relation::After,
        Relation::HasIntention,
        Relation::Cause,
        Relation::Before,
        Relation::IsIntention,
    ];

    pub fn direction(self) -> Direction {
        match self {
            Relation::Result | Relation::After | Relation::HasIntention => Direction::Forward,
            Relation::Cause | Relation::Before | Relation::IsIntention => Direction::Backward,
        }
    }

    /// Counterpart label in the other direction class.
    pub fn opposite(self) -> Relation {
        match self {
            Relation::Result => Relation::Cause,
            Relation::Cause => Relation::Result,
            Relation::After => Relation::Before,
            Relation::Before => Relation::After,
            Relation::HasIntention => Relation::IsIntention,
            Relation::IsIntention => Relation::HasIntention,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Result => "Result",
            Relation::After => "After",
            Relation::HasIntention => "HasIntention",
            Relation::Cause => "Cause",
            Relation::Before => "Before",
            Relation::IsIntention => "IsIntention",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ModelError::UnknownRelation(s.to_string()))
    }
}

impl TryFrom<String> for Relation {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Relation> for String {
    fn from(r: Relation) -> String {
        r.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub trigger: Option<String>,
}

impl Event {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Event {
            id: id.into(),
            text: text.into(),
            image: None,
            caption: None,
            trigger: None,
        }
    }

    pub fn with_image(mut self, image: impl Into<String>, caption: Option<&str>) -> Self {
        self.image = Some(image.into());
        self.caption = caption.map(str::to_string);
        self
    }

    pub fn with_trigger(mut self, trigger: impl Into<String>) -> Self {
        self.trigger = Some(trigger.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyEventText(self.id.clone()));
        }
        if self.caption.is_some() && self.image.is_none() {
            return Err(ModelError::CaptionWithoutImage(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeDirection {
    Seed,
    Forward,
    Backward,
}

impl From<Direction> for NodeDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Forward => NodeDirection::Forward,
            Direction::Backward => NodeDirection::Backward,
        }
    }
}

impl NodeDirection {
    pub fn as_direction(self) -> Option<Direction> {
        match self {
            NodeDirection::Seed => None,
            NodeDirection::Forward => Some(Direction::Forward),
            NodeDirection::Backward => Some(Direction::Backward),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub text: String,
    pub direction: NodeDirection,
    pub depth: u32,
}

/// `(src, rel, dst)`: `dst` stands in relation `rel` to `src`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub rel: Relation,
    pub dst: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolvingGraph {
    pub graph_id: String,
    pub seed_id: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
    /// The seed event itself (image, caption, trigger), carried so that
    /// dataset building does not need the seeds file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Event>,
}

impl EvolvingGraph {
    /// A graph holding only the seed event.
    pub fn from_seed(graph_id: impl Into<String>, seed: &Event) -> Self {
        EvolvingGraph {
            graph_id: graph_id.into(),
            seed_id: seed.id.clone(),
            nodes: vec![GraphNode {
                id: seed.id.clone(),
                text: seed.text.clone(),
                direction: NodeDirection::Seed,
                depth: 0,
            }],
            edges: Vec::new(),
            seed: Some(seed.clone()),
        }
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn seed_node(&self) -> Option<&GraphNode> {
        self.node(&self.seed_id)
    }

    /// Incoming edge of every non-seed node, keyed by destination id.
    pub fn parent_edges(&self) -> HashMap<&str, &Edge> {
        self.edges.iter().map(|e| (e.dst.as_str(), e)).collect()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// Content-addressed node id: stable hash of the graph, parent, relation and text.
pub fn node_id(graph_id: &str, parent_id: &str, rel: Relation, text: &str) -> String {
    let mut h = Sha256::new();
    for part in [graph_id, parent_id, rel.as_str(), text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("n{hex}")
}

/// Check every structural invariant of an evolving graph. Returns one
/// description per violation; an empty list means the graph is valid.
pub fn validate_graph(graph: &EvolvingGraph) -> Vec<String> {
    let mut violations = Vec::new();
    let mut by_id: HashMap<&str, &GraphNode> = HashMap::new();
    for n in &graph.nodes {
        if by_id.insert(n.id.as_str(), n).is_some() {
            violations.push(format!("duplicate node id `{}`", n.id));
        }
        if (n.depth == 0) != (n.direction == NodeDirection::Seed) {
            violations.push(format!(
                "node `{}` has direction {:?} at depth {}",
                n.id, n.direction, n.depth
            ));
        }
    }

    let seeds: Vec<&GraphNode> = graph
        .nodes
        .iter()
        .filter(|n| n.direction == NodeDirection::Seed)
        .collect();
    match seeds.as_slice() {
        [only] if only.id == graph.seed_id => {}
        [only] => violations.push(format!(
            "seed node `{}` does not match seed_id `{}`",
            only.id, graph.seed_id
        )),
        [] => violations.push(format!("no seed node (seed_id `{}`)", graph.seed_id)),
        many => violations.push(format!(
            "{} seed nodes: {}",
            many.len(),
            many.iter().map(|n| n.id.as_str()).collect::<Vec<_>>().join(", ")
        )),
    }

    let mut incoming: HashMap<&str, usize> = HashMap::new();
    for e in &graph.edges {
        let (src, dst) = match (by_id.get(e.src.as_str()), by_id.get(e.dst.as_str())) {
            (Some(s), Some(d)) => (*s, *d),
            _ => {
                violations.push(format!(
                    "edge ({}, {}, {}) references a missing node",
                    e.src, e.rel, e.dst
                ));
                continue;
            }
        };
        *incoming.entry(dst.id.as_str()).or_default() += 1;
        match dst.direction.as_direction() {
            None => violations.push(format!("edge ({}, {}, {}) points into the seed", e.src, e.rel, e.dst)),
            Some(d) if d != e.rel.direction() => violations.push(format!(
                "edge ({}, {}, {}) labels a {:?} node with a {:?} relation",
                e.src,
                e.rel,
                e.dst,
                d,
                e.rel.direction()
            )),
            Some(_) => {}
        }
        if src.direction != NodeDirection::Seed && src.direction != dst.direction {
            violations.push(format!(
                "edge ({}, {}, {}) crosses from the {:?} tree into the {:?} tree",
                e.src, e.rel, e.dst, src.direction, dst.direction
            ));
        }
        if dst.depth != src.depth + 1 {
            violations.push(format!(
                "edge ({}, {}, {}) goes from depth {} to depth {}",
                e.src, e.rel, e.dst, src.depth, dst.depth
            ));
        }
    }

    for n in &graph.nodes {
        if n.direction == NodeDirection::Seed {
            continue;
        }
        match incoming.get(n.id.as_str()).copied().unwrap_or(0) {
            1 => {}
            k => violations.push(format!("node `{}` has {} incoming edges", n.id, k)),
        }
    }

    // Every node must be reachable from the seed; with one parent per node
    // this also rules out cycles.
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in &graph.edges {
        children.entry(e.src.as_str()).or_default().push(e.dst.as_str());
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut stack = vec![graph.seed_id.as_str()];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        if let Some(kids) = children.get(id) {
            stack.extend(kids.iter().copied());
        }
    }
    for n in &graph.nodes {
        if by_id.contains_key(n.id.as_str()) && !seen.contains(n.id.as_str()) {
            violations.push(format!("node `{}` is not reachable from the seed", n.id));
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Open,
    Choice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub relation: Relation,
    pub with_text: bool,
    pub format: TaskKind,
    pub body: String,
}

pub const CAPTION_SLOT: &str = "{caption}";
pub const EVENT_SLOT: &str = "{event}";
pub const OPTIONS_SLOT: &str = "{options}";

impl Template {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.body.contains(CAPTION_SLOT)
            && self.body.contains(EVENT_SLOT) == self.with_text
            && self.body.contains(OPTIONS_SLOT) == (self.format == TaskKind::Choice)
            && !has_unknown_placeholder(&self.body);
        if ok {
            Ok(())
        } else {
            Err(ModelError::BadTemplate {
                relation: self.relation,
                with_text: self.with_text,
                format: self.format,
                body: self.body.clone(),
            })
        }
    }
}

fn has_unknown_placeholder(body: &str) -> bool {
    let stripped = body
        .replace(CAPTION_SLOT, "")
        .replace(EVENT_SLOT, "")
        .replace(OPTIONS_SLOT, "");
    stripped.contains('{') || stripped.contains('}')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub graph_id: String,
    pub node_id: String,
    pub path: Vec<Relation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSource {
    Semantic,
    Evolving,
}

/// Where a distractor option came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negative {
    pub text: String,
    pub source: NegativeSource,
    pub graph_id: String,
    pub node_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionDatum {
    pub id: String,
    pub image: String,
    pub question: String,
    pub answer: String,
    pub relation: Relation,
    pub task: TaskKind,
    pub options: Option<Vec<String>>,
    pub answer_index: Option<usize>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negatives: Option<Vec<Negative>>,
}

impl InstructionDatum {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::BadDatum {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        match self.task {
            TaskKind::Open => {
                if self.options.is_some() || self.answer_index.is_some() {
                    return Err(bad("open datum carries options"));
                }
            }
            TaskKind::Choice => {
                let options = self
                    .options
                    .as_ref()
                    .ok_or_else(|| bad("choice datum without options"))?;
                if options.len() < 2 {
                    return Err(bad("fewer than two options"));
                }
                let idx = self
                    .answer_index
                    .ok_or_else(|| bad("choice datum without answer_index"))?;
                if options.get(idx) != Some(&self.answer) {
                    return Err(bad("options[answer_index] differs from answer"));
                }
                let distinct: HashSet<&String> = options.iter().collect();
                if distinct.len() != options.len() {
                    return Err(bad("duplicate options"));
                }
            }
        }
        Ok(())
    }
}

/// Ordered labeled tree used for tree edit distance. Serialized as a
/// nested `[label, [children...]]` array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, Vec<DepTree>)", into = "(String, Vec<DepTree>)")]
pub struct DepTree {
    pub label: String,
    pub children: Vec<DepTree>,
}

impl DepTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        DepTree {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<DepTree>) -> Self {
        DepTree {
            label: label.into(),
            children,
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(DepTree::size).sum::<usize>()
    }
}

impl From<(String, Vec<DepTree>)> for DepTree {
    fn from((label, children): (String, Vec<DepTree>)) -> Self {
        DepTree { label, children }
    }
}

impl From<DepTree> for (String, Vec<DepTree>) {
    fn from(t: DepTree) -> Self {
        (t.label, t.children)
    }
}
