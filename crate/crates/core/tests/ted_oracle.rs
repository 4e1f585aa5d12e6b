use eventevo::model::DepTree;
use eventevo::rng::scoped_rng;
use eventevo::ted::{normalized_ted, tree_edit_distance};
use rand::Rng;

mod support;
use support::{random_tree, ted_oracle as oracle};

#[test]
fn matches_exhaustive_mapping_oracle() {
    let mut rng = scoped_rng(11, &["ted-oracle"]);
    for case in 0..500 {
        let a = random_tree(&mut rng, 6);
        let b = random_tree(&mut rng, 6);
        assert_eq!(
            tree_edit_distance(&a, &b),
            oracle(&a, &b),
            "case {case}: {a:?} vs {b:?}"
        );
    }
}

#[test]
fn metric_properties() {
    let mut rng = scoped_rng(12, &["ted-metric"]);
    let trees: Vec<DepTree> = (0..60).map(|_| random_tree(&mut rng, 6)).collect();
    for t in &trees {
        assert_eq!(tree_edit_distance(t, t), 0);
        assert_eq!(normalized_ted(t, t), 0.0);
    }
    for (i, a) in trees.iter().enumerate() {
        for b in &trees[i + 1..] {
            let d = tree_edit_distance(a, b);
            assert_eq!(d, tree_edit_distance(b, a));
            if d == 0 {
                assert_eq!(a, b);
            }
            let n = normalized_ted(a, b);
            let bound = (a.size() + b.size()) as f64 / a.size().max(b.size()) as f64;
            assert!(n >= 0.0 && n <= bound);
        }
    }
    for _ in 0..200 {
        let pick = |rng: &mut eventevo::rng::Rng| &trees[rng.gen_range(0..trees.len())];
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        assert!(tree_edit_distance(a, c) <= tree_edit_distance(a, b) + tree_edit_distance(b, c));
    }
}

#[test]
fn normalized_can_exceed_one() {
    let chain = DepTree::node("a", vec![DepTree::node("b", vec![DepTree::leaf("c")])]);
    let star = DepTree::node("x", vec![DepTree::leaf("y"), DepTree::leaf("z")]);
    assert_eq!(tree_edit_distance(&chain, &star), 4);
    assert_eq!(oracle(&chain, &star), 4);
    assert!((normalized_ted(&chain, &star) - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn classic_example() {
    // f(d(a, c(b)), e) -> f(c(d(a, b)), e): distance 2.
    let t1 = DepTree::node(
        "f",
        vec![
            DepTree::node(
                "d",
                vec![DepTree::leaf("a"), DepTree::node("c", vec![DepTree::leaf("b")])],
            ),
            DepTree::leaf("e"),
        ],
    );
    let t2 = DepTree::node(
        "f",
        vec![
            DepTree::node(
                "c",
                vec![DepTree::node("d", vec![DepTree::leaf("a"), DepTree::leaf("b")])],
            ),
            DepTree::leaf("e"),
        ],
    );
    assert_eq!(tree_edit_distance(&t1, &t2), 2);
    assert_eq!(oracle(&t1, &t2), 2);
}
