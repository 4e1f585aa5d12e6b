//! Instruction encapsulation: one open-generation datum per graph node
//! whose seed path induces a relation.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::induce::{induce_with, seed_path, InduceError, Induced, InductionRule};
use crate::model::{
    Event, EvolvingGraph, InstructionDatum, ModelError, Provenance, Relation, TaskKind, Template, CAPTION_SLOT,
    EVENT_SLOT, OPTIONS_SLOT,
};
use crate::provider::{Provider, ProviderError, TemplateRequest};
use crate::rng::{scoped_rng, Rng};

static FALLBACK_TEMPLATES: &str = include_str!("../data/templates.json");

#[derive(Debug, Error)]
pub enum EncapsulateError {
    #[error("no template for {relation} (with_text={with_text}, {format:?})")]
    NoTemplate {
        relation: Relation,
        with_text: bool,
        format: TaskKind,
    },
    #[error("graph `{0}` has no seed image")]
    MissingImage(String),
    #[error("include_text_prob {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Induce(#[from] InduceError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncapsulateConfig {
    pub include_text_prob: f64,
    pub rng_seed: u64,
    pub max_per_graph: Option<usize>,
}

impl Default for EncapsulateConfig {
    fn default() -> Self {
        EncapsulateConfig {
            include_text_prob: 0.5,
            rng_seed: 0,
            max_per_graph: None,
        }
    }
}

impl EncapsulateConfig {
    pub fn validate(&self) -> Result<(), EncapsulateError> {
        if !(0.0..=1.0).contains(&self.include_text_prob) {
            return Err(EncapsulateError::BadProbability(self.include_text_prob));
        }
        Ok(())
    }
}

/// A node that can become a datum: the seed, the induced relation and the
/// node's own text as the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatumSource {
    pub graph_id: String,
    pub node_id: String,
    pub seed: Event,
    pub relation: Relation,
    pub target_text: String,
    pub path: Vec<Relation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Enumeration {
    pub sources: Vec<DatumSource>,
    pub no_rule_paths: usize,
}

fn seed_event(graph: &EvolvingGraph) -> Event {
    graph.seed.clone().unwrap_or_else(|| {
        let text = graph.seed_node().map(|n| n.text.clone()).unwrap_or_default();
        Event::new(graph.seed_id.clone(), text)
    })
}

/// One source per non-seed node whose path induces a relation, in node order.
pub fn enumerate_data(graph: &EvolvingGraph, rules: &[InductionRule]) -> Result<Enumeration, EncapsulateError> {
    let seed = seed_event(graph);
    let mut out = Enumeration::default();
    for node in &graph.nodes {
        if node.id == graph.seed_id {
            continue;
        }
        let path = seed_path(graph, &node.id)?;
        match induce_with(&path, rules)? {
            Induced::Relation(relation) => out.sources.push(DatumSource {
                graph_id: graph.graph_id.clone(),
                node_id: node.id.clone(),
                seed: seed.clone(),
                relation,
                target_text: node.text.clone(),
                path,
            }),
            Induced::NoRule => out.no_rule_paths += 1,
        }
    }
    Ok(out)
}

/// Seeded subset of at most `cap` sources, keeping their original order.
pub fn cap_sources(sources: Vec<DatumSource>, cap: Option<usize>, rng_seed: u64, graph_id: &str) -> Vec<DatumSource> {
    match cap {
        Some(cap) if sources.len() > cap => {
            let mut rng = scoped_rng(rng_seed, &[graph_id, "cap"]);
            let mut keep = index::sample(&mut rng, sources.len(), cap).into_vec();
            keep.sort_unstable();
            let mut slots: Vec<Option<DatumSource>> = sources.into_iter().map(Some).collect();
            keep.into_iter().filter_map(|i| slots[i].take()).collect()
        }
        _ => sources,
    }
}

type BucketKey = (Relation, bool, TaskKind);

/// Templates grouped by (relation, with_text, format).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateStore {
    buckets: BTreeMap<BucketKey, Vec<Template>>,
}

impl TemplateStore {
    pub fn new(templates: impl IntoIterator<Item = Template>) -> Result<Self, EncapsulateError> {
        let mut store = TemplateStore::default();
        for t in templates {
            t.validate()?;
            store.insert(t);
        }
        Ok(store)
    }

    /// The hand-written store shipped with the crate.
    pub fn fallback() -> Self {
        let templates: Vec<Template> =
            serde_json::from_str(FALLBACK_TEMPLATES).expect("bundled templates are valid JSON");
        TemplateStore::new(templates).expect("bundled templates are valid")
    }

    fn insert(&mut self, t: Template) {
        let bucket = self.buckets.entry((t.relation, t.with_text, t.format)).or_default();
        if !bucket.iter().any(|b| b.body == t.body) {
            bucket.push(t);
        }
    }

    pub fn bucket(&self, relation: Relation, with_text: bool, format: TaskKind) -> &[Template] {
        self.buckets
            .get(&(relation, with_text, format))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.buckets.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Buckets among the 24 (relation, with_text, format) combinations with no template.
    pub fn empty_buckets(&self) -> Vec<String> {
        all_buckets()
            .filter(|(r, w, f)| self.bucket(*r, *w, *f).is_empty())
            .map(|(r, w, f)| format!("{r}/{}/{}", if w { "text" } else { "image" }, format_name(f)))
            .collect()
    }
}

fn format_name(f: TaskKind) -> &'static str {
    match f {
        TaskKind::Open => "open",
        TaskKind::Choice => "choice",
    }
}

pub fn all_buckets() -> impl Iterator<Item = BucketKey> {
    Relation::ALL.into_iter().flat_map(|r| {
        [false, true]
            .into_iter()
            .flat_map(move |w| [TaskKind::Open, TaskKind::Choice].into_iter().map(move |f| (r, w, f)))
    })
}

pub fn select_template<'a>(
    store: &'a TemplateStore,
    relation: Relation,
    with_text: bool,
    format: TaskKind,
    rng: &mut Rng,
) -> Result<&'a Template, EncapsulateError> {
    store
        .bucket(relation, with_text, format)
        .choose(rng)
        .ok_or(EncapsulateError::NoTemplate {
            relation,
            with_text,
            format,
        })
}

/// `A. first\nB. second...`
pub fn render_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {}", option_label(i), o))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn option_label(i: usize) -> char {
    (b'A' + i as u8) as char
}

pub fn render_template(template: &Template, caption: &str, event: Option<&str>, options: Option<&[String]>) -> String {
    let clause = |t: &str| t.trim().trim_end_matches(['.', '!', '?']).to_string();
    let mut q = template.body.replace(CAPTION_SLOT, &clause(caption));
    if let Some(e) = event {
        q = q.replace(EVENT_SLOT, &clause(e));
    }
    if let Some(opts) = options {
        q = q.replace(OPTIONS_SLOT, &render_options(opts));
    }
    q
}

/// Per-datum coin: include the seed text with probability `include_text_prob`.
pub fn include_text(cfg: &EncapsulateConfig, graph_id: &str, node_id: &str) -> bool {
    let mut rng = scoped_rng(cfg.rng_seed, &[graph_id, node_id, "include-text"]);
    rng.gen_bool(cfg.include_text_prob)
}

pub fn open_datum_id(graph_id: &str, node_id: &str) -> String {
    format!("{graph_id}/{node_id}/open")
}

pub fn encapsulate_open(
    src: &DatumSource,
    image: &str,
    caption: &str,
    store: &TemplateStore,
    cfg: &EncapsulateConfig,
) -> Result<InstructionDatum, EncapsulateError> {
    cfg.validate()?;
    let with_text = include_text(cfg, &src.graph_id, &src.node_id);
    let mut rng = scoped_rng(cfg.rng_seed, &[&src.graph_id, &src.node_id, "template-open"]);
    let template = select_template(store, src.relation, with_text, TaskKind::Open, &mut rng)?;
    let question = render_template(template, caption, with_text.then_some(src.seed.text.as_str()), None);
    Ok(InstructionDatum {
        id: open_datum_id(&src.graph_id, &src.node_id),
        image: image.to_string(),
        question,
        answer: src.target_text.clone(),
        relation: src.relation,
        task: TaskKind::Open,
        options: None,
        answer_index: None,
        provenance: Provenance {
            graph_id: src.graph_id.clone(),
            node_id: src.node_id.clone(),
            path: src.path.clone(),
        },
        negatives: None,
    })
}

/// Image and caption of the seed, required for every datum.
pub fn seed_visuals(src: &DatumSource) -> Result<(&str, &str), EncapsulateError> {
    let image = src
        .seed
        .image
        .as_deref()
        .ok_or_else(|| EncapsulateError::MissingImage(src.graph_id.clone()))?;
    Ok((image, src.seed.caption.as_deref().unwrap_or("")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateGeneration {
    pub templates: Vec<Template>,
    pub generated: usize,
    pub rejected: usize,
}

/// Ask the provider for `n_per_bucket` templates in each of the 24
/// buckets, drop the ones with wrong placeholders, and merge with the
/// fallback store so that no bucket ends up empty.
pub fn generate_template_store(
    provider: &dyn Provider,
    n_per_bucket: usize,
) -> Result<TemplateGeneration, EncapsulateError> {
    let mut store = TemplateStore::fallback();
    let mut generated = 0;
    let mut rejected = 0;
    for (relation, with_text, format) in all_buckets() {
        let bodies = provider.templates(&TemplateRequest {
            relation,
            with_text,
            format,
            n: n_per_bucket,
        })?;
        for body in bodies.into_iter().take(n_per_bucket) {
            let t = Template {
                relation,
                with_text,
                format,
                body,
            };
            if t.validate().is_ok() {
                generated += 1;
                store.insert(t);
            } else {
                rejected += 1;
            }
        }
    }
    Ok(TemplateGeneration {
        templates: store.templates().cloned().collect(),
        generated,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::induce::{default_rules, TableReading};
    use crate::model::{Edge, GraphNode, NodeDirection};
    use crate::provider::{EvolveRequest, EvolveResponse, MockProvider};

    fn hurricane_graph() -> EvolvingGraph {
        let seed = Event::new("s", "The buildings and facilities were damaged.")
            .with_image("img/storm.jpg", Some("collapsed walls along a street"));
        let mut g = EvolvingGraph::from_seed("g-s", &seed);
        g.nodes.push(GraphNode {
            id: "c1".into(),
            text: "A hurricane or severe weather event caused significant damage to the buildings.".into(),
            direction: NodeDirection::Backward,
            depth: 1,
        });
        g.edges.push(Edge {
            src: "s".into(),
            rel: Relation::Cause,
            dst: "c1".into(),
        });
        g
    }

    fn rules() -> Vec<InductionRule> {
        default_rules(TableReading::Symmetric)
    }

    #[test]
    fn seed_only_graph_has_nothing_to_enumerate() {
        let g = EvolvingGraph::from_seed("g", &Event::new("s", "x"));
        assert!(enumerate_data(&g, &rules()).unwrap().sources.is_empty());
    }

    #[test]
    fn single_edge_enumerates_its_relation() {
        let e = enumerate_data(&hurricane_graph(), &rules()).unwrap();
        assert_eq!(e.sources.len(), 1);
        assert_eq!(e.sources[0].relation, Relation::Cause);
        assert_eq!(e.no_rule_paths, 0);
    }

    #[test]
    fn hurricane_datum() {
        let g = hurricane_graph();
        let src = &enumerate_data(&g, &rules()).unwrap().sources[0];
        let (img, cap) = seed_visuals(src).unwrap();
        let store = TemplateStore::fallback();
        let cfg = EncapsulateConfig {
            include_text_prob: 1.0,
            ..Default::default()
        };
        let d = encapsulate_open(src, img, cap, &store, &cfg).unwrap();
        assert_eq!(
            d.answer,
            "A hurricane or severe weather event caused significant damage to the buildings."
        );
        assert_eq!(d.relation, Relation::Cause);
        assert!(d.question.contains("The buildings and facilities were damaged."));
        assert!(d.question.contains("collapsed walls"));
        assert!(!d.question.contains('{'));
        d.validate().unwrap();

        let cfg0 = EncapsulateConfig {
            include_text_prob: 0.0,
            ..Default::default()
        };
        let d0 = encapsulate_open(src, img, cap, &store, &cfg0).unwrap();
        assert!(!d0.question.contains("facilities were damaged"));
        assert!(!d0.question.contains('{'));
    }

    #[test]
    fn select_template_contract() {
        let one = TemplateStore::new([Template {
            relation: Relation::After,
            with_text: false,
            format: TaskKind::Open,
            body: "{caption} then?".into(),
        }])
        .unwrap();
        let mut rng = scoped_rng(1, &["t"]);
        assert_eq!(
            select_template(&one, Relation::After, false, TaskKind::Open, &mut rng)
                .unwrap()
                .body,
            "{caption} then?"
        );
        assert!(matches!(
            select_template(&one, Relation::After, true, TaskKind::Open, &mut rng),
            Err(EncapsulateError::NoTemplate { .. })
        ));

        let five = TemplateStore::new((0..5).map(|i| Template {
            relation: Relation::After,
            with_text: false,
            format: TaskKind::Open,
            body: format!("{{caption}} variant {i}"),
        }))
        .unwrap();
        let a = select_template(
            &five,
            Relation::After,
            false,
            TaskKind::Open,
            &mut scoped_rng(3, &["x"]),
        )
        .unwrap();
        let b = select_template(
            &five,
            Relation::After,
            false,
            TaskKind::Open,
            &mut scoped_rng(3, &["x"]),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fallback_covers_every_bucket_twice() {
        let store = TemplateStore::fallback();
        assert_eq!(all_buckets().count(), 24);
        for (r, w, f) in all_buckets() {
            assert!(store.bucket(r, w, f).len() >= 2, "{r} {w} {f:?}");
        }
        assert!(store.empty_buckets().is_empty());
    }

    #[test]
    fn generation_with_mock_keeps_every_bucket_filled() {
        let gen = generate_template_store(&MockProvider::default(), 3).unwrap();
        let store = TemplateStore::new(gen.templates.clone()).unwrap();
        for (r, w, f) in all_buckets() {
            assert!(store.bucket(r, w, f).len() >= 2);
        }
        assert_eq!(gen.rejected, 0);
        assert_eq!(gen.generated, 24 * 3);
    }

    struct NoCaption;
    impl Provider for NoCaption {
        fn evolve(&self, _: &EvolveRequest) -> Result<EvolveResponse, ProviderError> {
            Err(ProviderError::ParseFailure)
        }
        fn templates(&self, req: &TemplateRequest) -> Result<Vec<String>, ProviderError> {
            let mut body = "What happens next?".to_string();
            if req.with_text {
                body.push_str(" {event}");
            }
            if req.format == TaskKind::Choice {
                body.push_str(" {options}");
            }
            Ok(vec![body])
        }
    }

    #[test]
    fn templates_without_caption_are_rejected() {
        let gen = generate_template_store(&NoCaption, 1).unwrap();
        assert_eq!(gen.rejected, 24);
        assert_eq!(gen.generated, 0);
        assert_eq!(gen.templates.len(), TemplateStore::fallback().len());
    }

    #[test]
    fn cap_keeps_order() {
        let g = hurricane_graph();
        let src = enumerate_data(&g, &rules()).unwrap().sources[0].clone();
        let many: Vec<DatumSource> = (0..6)
            .map(|i| DatumSource {
                node_id: format!("n{i}"),
                ..src.clone()
            })
            .collect();
        let kept = cap_sources(many.clone(), Some(3), 5, "g");
        assert_eq!(kept.len(), 3);
        assert!(kept.windows(2).all(|w| w[0].node_id < w[1].node_id));
        assert_eq!(cap_sources(many.clone(), None, 5, "g").len(), 6);
        assert_eq!(kept, cap_sources(many, Some(3), 5, "g"));
    }
}
