//! Zhang-Shasha ordered tree edit distance with unit costs, plus the
//! trigger-rooted stand-in for dependency parses.

use std::collections::HashMap;

use crate::model::DepTree;
use crate::text::{is_stopword, tokenize};

/// Post-order flattening: labels and leftmost-leaf index of each node.
struct Flat<'a> {
    labels: Vec<&'a str>,
    lml: Vec<usize>,
}

impl<'a> Flat<'a> {
    fn new(tree: &'a DepTree) -> Self {
        let mut f = Flat {
            labels: Vec::new(),
            lml: Vec::new(),
        };
        f.visit(tree);
        f
    }

    fn visit(&mut self, t: &'a DepTree) -> usize {
        let mut leftmost = None;
        for c in &t.children {
            let l = self.visit(c);
            leftmost.get_or_insert(l);
        }
        let idx = self.labels.len();
        self.labels.push(&t.label);
        let l = leftmost.unwrap_or(idx);
        self.lml.push(l);
        l
    }

    /// Nodes with no left sibling-sharing leftmost leaf, i.e. the highest
    /// node for each distinct leftmost leaf.
    fn keyroots(&self) -> Vec<usize> {
        let mut highest: HashMap<usize, usize> = HashMap::new();
        for (i, &l) in self.lml.iter().enumerate() {
            highest.insert(l, i);
        }
        let mut k: Vec<usize> = highest.into_values().collect();
        k.sort_unstable();
        k
    }
}

/// Minimum number of relabel, insert and delete operations turning `a` into `b`.
pub fn tree_edit_distance(a: &DepTree, b: &DepTree) -> usize {
    let fa = Flat::new(a);
    let fb = Flat::new(b);
    let (n, m) = (fa.labels.len(), fb.labels.len());
    let mut td = vec![vec![0usize; m]; n];
    // Forest distance buffer, indexed with a one-based offset from the
    // current keyroots' leftmost leaves.
    let mut fd = vec![vec![0usize; m + 1]; n + 1];

    for &i in &fa.keyroots() {
        for &j in &fb.keyroots() {
            let (li, lj) = (fa.lml[i], fb.lml[j]);
            let rows = i - li + 2;
            let cols = j - lj + 2;
            fd[0][0] = 0;
            for x in 1..rows {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..cols {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..rows {
                let ni = li + x - 1;
                for y in 1..cols {
                    let nj = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if fa.lml[ni] == li && fb.lml[nj] == lj {
                        let relabel = usize::from(fa.labels[ni] != fb.labels[nj]);
                        let v = del.min(ins).min(fd[x - 1][y - 1] + relabel);
                        fd[x][y] = v;
                        td[ni][nj] = v;
                    } else {
                        let px = fa.lml[ni] - li;
                        let py = fb.lml[nj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// Distance divided by the larger tree's node count. Shape mismatches can
/// push it above 1.
pub fn normalized_ted(a: &DepTree, b: &DepTree) -> f64 {
    let d = tree_edit_distance(a, b);
    d as f64 / a.size().max(b.size()) as f64
}

/// Trigger-rooted flat tree: the trigger token is the root and the
/// remaining non-stopword tokens are its leaves, in sentence order. When
/// the trigger is not a token of the text the first token is the root.
pub fn build_dep_tree(text: &str, trigger: &str) -> DepTree {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return DepTree::leaf(trigger.to_lowercase());
    }
    let trig = trigger.to_lowercase();
    let root_pos = tokens.iter().position(|t| *t == trig).unwrap_or(0);
    let children = tokens
        .iter()
        .enumerate()
        .filter(|(i, t)| *i != root_pos && !is_stopword(t))
        .map(|(_, t)| DepTree::leaf(t.clone()))
        .collect();
    DepTree::node(tokens[root_pos].clone(), children)
}

/// Source of dependency trees for mining: the flat stand-in, or parses
/// supplied in a sidecar keyed by node id.
#[derive(Debug, Clone, Default)]
pub enum TreeSource {
    #[default]
    Flat,
    External(HashMap<String, DepTree>),
}

impl TreeSource {
    pub fn tree(&self, id: &str, text: &str) -> DepTree {
        match self {
            TreeSource::External(map) => {
                if let Some(t) = map.get(id) {
                    return t.clone();
                }
                flat_tree(text)
            }
            TreeSource::Flat => flat_tree(text),
        }
    }
}

fn flat_tree(text: &str) -> DepTree {
    let probe = crate::model::Event::new("", text);
    let trigger = crate::diversify::extract_trigger(&probe).unwrap_or_default();
    build_dep_tree(text, &trigger)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(label: &str, kids: Vec<DepTree>) -> DepTree {
        DepTree::node(label, kids)
    }
    fn l(label: &str) -> DepTree {
        DepTree::leaf(label)
    }

    #[test]
    fn trivial_distances() {
        let a = t("a", vec![l("b"), l("c")]);
        assert_eq!(tree_edit_distance(&a, &a), 0);
        assert_eq!(tree_edit_distance(&l("a"), &l("b")), 1);
        assert_eq!(tree_edit_distance(&l("a"), &a), 2);
    }

    #[test]
    fn classic_example() {
        // f(d(a, c(b)), e) vs f(c(d(a, b)), e): distance 2
        let a = t("f", vec![t("d", vec![l("a"), t("c", vec![l("b")])]), l("e")]);
        let b = t("f", vec![t("c", vec![t("d", vec![l("a"), l("b")])]), l("e")]);
        assert_eq!(tree_edit_distance(&a, &b), 2);
        assert_eq!(tree_edit_distance(&b, &a), 2);
    }

    #[test]
    fn flat_builder() {
        let tree = build_dep_tree("the man runs fast", "runs");
        assert_eq!(tree, t("runs", vec![l("man"), l("fast")]));
        assert_eq!(build_dep_tree("Storm", "storm"), l("storm"));
        assert_eq!(
            build_dep_tree("the man runs", "jumps"),
            t("the", vec![l("man"), l("runs")])
        );
    }

    #[test]
    fn external_source_passthrough() {
        let parsed = t("hit", vec![t("storm", vec![l("the")]), l("coast")]);
        let src = TreeSource::External(HashMap::from([("n1".to_string(), parsed.clone())]));
        assert_eq!(src.tree("n1", "whatever"), parsed);
        assert_eq!(
            src.tree("n2", "the man runs fast"),
            t("runs", vec![l("man"), l("fast")])
        );
    }
}
