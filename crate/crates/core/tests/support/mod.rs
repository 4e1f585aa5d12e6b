//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use eventevo::induce::{Induced, TableReading};
use eventevo::model::{DepTree, Direction, Relation};
use rand::Rng;
use regex::Regex;

fn letter(r: Relation) -> char {
    match r {
        Relation::Result => 'R',
        Relation::After => 'A',
        Relation::HasIntention => 'H',
        Relation::Cause => 'C',
        Relation::Before => 'B',
        Relation::IsIntention => 'I',
    }
}

/// The induction table as plain regular expressions over one letter per relation.
pub fn induction_table(reading: TableReading) -> Vec<(Regex, Relation)> {
    let tail = match reading {
        TableReading::Symmetric => "B*",
        TableReading::Strict => "B",
    };
    [
        ("^A*R+A*$".to_string(), Relation::Result),
        ("^A*H+A*$".to_string(), Relation::HasIntention),
        ("^A+$".to_string(), Relation::After),
        (format!("^B*C+{tail}$"), Relation::Cause),
        (format!("^B*I+{tail}$"), Relation::IsIntention),
        ("^B+$".to_string(), Relation::Before),
    ]
    .into_iter()
    .map(|(p, r)| (Regex::new(&p).unwrap(), r))
    .collect()
}

pub fn induce_oracle(path: &[Relation], table: &[(Regex, Relation)]) -> Induced {
    let word: String = path.iter().map(|r| letter(*r)).collect();
    table
        .iter()
        .find(|(re, _)| re.is_match(&word))
        .map_or(Induced::NoRule, |(_, r)| Induced::Relation(*r))
}

/// All 240 single-direction relation sequences of length 1 to 4.
pub fn one_direction_sequences() -> Vec<Vec<Relation>> {
    let mut all = Vec::new();
    for dir in [Direction::Forward, Direction::Backward] {
        let alphabet = dir.relations();
        let mut layer: Vec<Vec<Relation>> = vec![vec![]];
        for _ in 0..4 {
            layer = layer
                .iter()
                .flat_map(|p| {
                    alphabet.iter().map(move |r| {
                        let mut q = p.clone();
                        q.push(*r);
                        q
                    })
                })
                .collect();
            all.extend(layer.iter().cloned());
        }
    }
    all
}

const LABELS: [&str; 3] = ["a", "b", "c"];

pub fn random_tree(rng: &mut impl Rng, max_nodes: usize) -> DepTree {
    let n = rng.gen_range(1..=max_nodes);
    // Node i > 0 hangs under some earlier node.
    let parents: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();
    let labels: Vec<&str> = (0..n).map(|_| LABELS[rng.gen_range(0..LABELS.len())]).collect();
    fn build(i: usize, parents: &[usize], labels: &[&str]) -> DepTree {
        let kids = (1..labels.len())
            .filter(|&c| parents[c - 1] == i)
            .map(|c| build(c, parents, labels))
            .collect();
        DepTree::node(labels[i], kids)
    }
    build(0, &parents, &labels)
}

/// Label, preorder index and postorder index of every node.
fn orders(t: &DepTree) -> Vec<(String, usize, usize)> {
    fn go(t: &DepTree, pre: &mut usize, post: &mut usize, out: &mut Vec<(String, usize, usize)>) {
        let me = out.len();
        out.push((t.label.clone(), *pre, 0));
        *pre += 1;
        for c in &t.children {
            go(c, pre, post, out);
        }
        out[me].2 = *post;
        *post += 1;
    }
    let mut out = Vec::new();
    go(t, &mut 0, &mut 0, &mut out);
    out
}

#[derive(PartialEq)]
enum Rel {
    Ancestor,
    Descendant,
    Left,
    Right,
}

fn rel(a: &(String, usize, usize), b: &(String, usize, usize)) -> Rel {
    match (a.1 < b.1, a.2 < b.2) {
        (true, false) => Rel::Ancestor,
        (false, true) => Rel::Descendant,
        (true, true) => Rel::Left,
        (false, false) => Rel::Right,
    }
}

/// Minimum cost over every valid edit mapping, enumerated exhaustively.
pub fn ted_oracle(a: &DepTree, b: &DepTree) -> usize {
    type Node = (String, usize, usize);
    fn search(
        i: usize,
        na: &[Node],
        nb: &[Node],
        pairs: &mut Vec<(usize, usize)>,
        used: &mut [bool],
        best: &mut usize,
    ) {
        if i == na.len() {
            let relabel = pairs.iter().filter(|(x, y)| na[*x].0 != nb[*y].0).count();
            let cost = relabel + (na.len() - pairs.len()) + (nb.len() - pairs.len());
            *best = (*best).min(cost);
            return;
        }
        search(i + 1, na, nb, pairs, used, best);
        for j in 0..nb.len() {
            if used[j] {
                continue;
            }
            if pairs.iter().all(|&(x, y)| rel(&na[x], &na[i]) == rel(&nb[y], &nb[j])) {
                used[j] = true;
                pairs.push((i, j));
                search(i + 1, na, nb, pairs, used, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let na = orders(a);
    let nb = orders(b);
    let mut best = usize::MAX;
    search(0, &na, &nb, &mut Vec::new(), &mut vec![false; nb.len()], &mut best);
    best
}
