use eventevo::encapsulate::{include_text, EncapsulateConfig, TemplateStore};
use eventevo::evolve::{evolve_graph, EvolveConfig};
use eventevo::model::{validate_graph, Event, EvolvingGraph, TaskKind};
use eventevo::pipeline::{build_dataset, BuildOptions, PipelineConfig};
use eventevo::provider::{MockProvider, Ontology};
use eventevo::ted::TreeSource;

fn graphs(n: usize) -> Vec<EvolvingGraph> {
    let provider = MockProvider::new(Ontology::bundled());
    let cfg = EvolveConfig {
        rng_seed: 5,
        ..EvolveConfig::default()
    };
    (0..n)
        .map(|i| {
            let seed = Event::new(format!("s{i:02}"), format!("A worker number {i} repaired the bridge."))
                .with_image(format!("img/{i}.jpg"), Some("a worker on a bridge"));
            evolve_graph(&seed, &cfg, &provider, None).unwrap()
        })
        .collect()
}

#[test]
fn with_text_fraction_is_near_half() {
    let cfg = EncapsulateConfig {
        rng_seed: 99,
        ..EncapsulateConfig::default()
    };
    let n = 6000;
    let hits = (0..n)
        .filter(|i| include_text(&cfg, &format!("g-{}", i / 30), &format!("n{i}")))
        .count();
    let frac = hits as f64 / n as f64;
    assert!((frac - 0.5).abs() <= 0.03, "{frac}");
}

#[test]
fn rows_trace_back_to_graph_nodes() {
    let gs = graphs(12);
    for g in &gs {
        assert!(validate_graph(g).is_empty());
    }
    let cfg = PipelineConfig::default().resolved();
    let opts = BuildOptions::from_config(&cfg);
    let (rows, report) = build_dataset(&gs, &TemplateStore::fallback(), &opts, &TreeSource::Flat, 3).unwrap();
    assert_eq!(rows.len(), report.open_rows + report.choice_rows);
    assert!(report.choice_rows > 0);
    for r in &rows {
        r.validate().unwrap();
        let g = gs.iter().find(|g| g.graph_id == r.provenance.graph_id).unwrap();
        assert_eq!(g.node(&r.provenance.node_id).unwrap().text, r.answer);
        assert!(!r.question.contains('{') && !r.question.contains('}'), "{}", r.question);
        if r.task == TaskKind::Choice {
            let opts = r.options.as_ref().unwrap();
            assert_eq!(opts.len(), 3);
            assert_eq!(opts[r.answer_index.unwrap()], r.answer);
        }
    }
    let (again, _) = build_dataset(&gs, &TemplateStore::fallback(), &opts, &TreeSource::Flat, 1).unwrap();
    assert_eq!(rows, again);
}

#[test]
fn open_only_and_empty_inputs() {
    let gs = graphs(3);
    let mut cfg = PipelineConfig::default().resolved();
    cfg.choice = false;
    let opts = BuildOptions::from_config(&cfg);
    let (rows, report) = build_dataset(&gs, &TemplateStore::fallback(), &opts, &TreeSource::Flat, 1).unwrap();
    assert!(rows.iter().all(|r| r.task == TaskKind::Open));
    assert_eq!(report.choice_rows, 0);
    let (rows, _) = build_dataset(&[], &TemplateStore::fallback(), &opts, &TreeSource::Flat, 1).unwrap();
    assert!(rows.is_empty());
}
