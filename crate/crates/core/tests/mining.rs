use std::collections::{BTreeSet, HashMap};

use eventevo::discriminate::{mine_semantic, MiningConfig, PoolEntry, SemanticPool};
use eventevo::model::{DepTree, GraphNode, NodeDirection};
use eventevo::ted::TreeSource;

/// (graph, node id, text, root, leaves)
const POOL: [(&str, &str, &str, &str, &[&str]); 7] = [
    (
        "g0",
        "pos",
        "The man repaired the broken fence.",
        "repaired",
        &["man", "broken", "fence"],
    ),
    (
        "g0",
        "same-graph",
        "The man painted the fence.",
        "painted",
        &["man", "fence"],
    ),
    (
        "g1",
        "c1",
        "The man painted the broken fence.",
        "painted",
        &["man", "broken", "fence"],
    ),
    (
        "g2",
        "c2",
        "The man repaired the broken fence.",
        "repaired",
        &["man", "broken", "fence"],
    ),
    (
        "g3",
        "c3",
        "A woman repaired the old gate.",
        "repaired",
        &["woman", "old", "gate"],
    ),
    ("g4", "c4", "The man fixed the fence.", "fixed", &["man", "fence"]),
    (
        "g5",
        "c5",
        "Children played football in the park.",
        "played",
        &["children", "football", "park"],
    ),
];

fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (tokens(a), tokens(b));
    a.intersection(&b).count() as f64 / a.union(&b).count() as f64
}

fn levenshtein(a: &[&str], b: &[&str]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, y) in b.iter().enumerate() {
            cur.push((prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

/// On depth-one trees the edit distance is root relabel plus child-sequence Levenshtein.
fn flat_nted(a: usize, b: usize) -> f64 {
    let (_, _, _, ra, la) = POOL[a];
    let (_, _, _, rb, lb) = POOL[b];
    let d = usize::from(ra != rb) + levenshtein(la, lb);
    d as f64 / (la.len().max(lb.len()) + 1) as f64
}

fn pool() -> (PoolEntry, SemanticPool) {
    let trees: HashMap<String, DepTree> = POOL
        .iter()
        .map(|(_, id, _, root, leaves)| {
            (
                id.to_string(),
                DepTree::node(*root, leaves.iter().map(|l| DepTree::leaf(*l)).collect()),
            )
        })
        .collect();
    let source = TreeSource::External(trees);
    let entries: Vec<PoolEntry> = POOL
        .iter()
        .map(|(g, id, text, _, _)| {
            let node = GraphNode {
                id: id.to_string(),
                text: text.to_string(),
                direction: NodeDirection::Forward,
                depth: 1,
            };
            PoolEntry::new(g, &node, &source)
        })
        .collect();
    (entries[0].clone(), SemanticPool { entries })
}

#[test]
fn hand_computed_selection() {
    let (pos, pool) = pool();
    let cfg = MiningConfig::default();
    let got: Vec<String> = mine_semantic(&pos, &pool, &cfg)
        .into_iter()
        .map(|n| n.node_id)
        .collect();
    // c1: overlap 4/6, nted 1/4. c4: overlap 3/6, nted 2/4.
    // c2 is too similar (overlap 1), c3 too far (nted 3/4), c5 too dissimilar (overlap 1/10).
    assert_eq!(got, ["c1", "c4"]);

    let one = MiningConfig {
        n_semantic: 1,
        ..MiningConfig::default()
    };
    let got: Vec<String> = mine_semantic(&pos, &pool, &one)
        .into_iter()
        .map(|n| n.node_id)
        .collect();
    assert_eq!(got, ["c1"]);
}

#[test]
fn oracle_filter_and_order() {
    let (pos, pool) = pool();
    let cfg = MiningConfig {
        n_semantic: 10,
        ..MiningConfig::default()
    };
    let mut expected: Vec<(f64, f64, &str)> = (1..POOL.len())
        .filter(|&i| POOL[i].0 != "g0")
        .map(|i| (flat_nted(0, i), jaccard(POOL[0].2, POOL[i].2), POOL[i].1))
        .filter(|(n, o, _)| cfg.overlap_min <= *o && *o < cfg.overlap_max && *n <= cfg.ted_max)
        .collect();
    expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let got: Vec<String> = mine_semantic(&pos, &pool, &cfg)
        .into_iter()
        .map(|n| n.node_id)
        .collect();
    assert_eq!(got, expected.iter().map(|e| e.2).collect::<Vec<_>>());
    assert!((flat_nted(0, 2) - 0.25).abs() < 1e-12);
    assert!((jaccard(POOL[0].2, POOL[5].2) - 0.5).abs() < 1e-12);
}
