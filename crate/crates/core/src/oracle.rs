//! Brute-force reference computations and graph fixtures.
//!
//! Everything here works by explicit enumeration or direct predicate checks
//! and shares no code with the dynamic programs it is used to verify. The
//! `selftest` CLI subcommand and the test suites both draw on it.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::Rng;

use crate::corpus::{Esd, EventStep, ScenarioCorpus};
use crate::graph::{ClusterNode, CompactGraph, Edge, Realization, END, START};
use crate::seed::rng_from_seed;

/// Node with one realization per text.
pub fn node(id: &str, texts: &[&str]) -> ClusterNode {
    ClusterNode {
        id: id.to_string(),
        label: texts.first().copied().unwrap_or(id).to_string(),
        realizations: texts
            .iter()
            .enumerate()
            .map(|(i, t)| Realization {
                esd_id: format!("x{i}"),
                step_index: 0,
                text: t.to_string(),
                substep_chain: None,
            })
            .collect(),
    }
}

fn virtual_node(id: &str) -> ClusterNode {
    ClusterNode {
        id: id.to_string(),
        label: id.to_string(),
        realizations: Vec::new(),
    }
}

fn edge(from: &str, to: &str) -> Edge {
    Edge {
        from: from.to_string(),
        to: to.to_string(),
        support: 1,
    }
}

/// Assemble a graph from real nodes and edges; START/END are added.
pub fn graph_from(name: &str, real: Vec<ClusterNode>, edges: &[(&str, &str)]) -> CompactGraph {
    let mut nodes = vec![virtual_node(START)];
    nodes.extend(real);
    nodes.push(virtual_node(END));
    CompactGraph::from_parts(name, nodes, edges.iter().map(|(a, b)| edge(a, b)).collect())
        .expect("fixture graph is valid")
}

fn variant_texts(id: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{id} variant {i}")).collect()
}

fn node_with_variants(id: &str, count: usize) -> ClusterNode {
    let texts = variant_texts(id, count);
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    node(id, &refs)
}

/// `START -> n0 -> .. -> n{k-1} -> END`.
pub fn chain_graph(k: usize) -> CompactGraph {
    let ids: Vec<String> = (0..k).map(|i| format!("n{i}")).collect();
    let real = ids
        .iter()
        .map(|id| node(id, &[&format!("step {id}")]))
        .collect();
    let mut seq = vec![START.to_string()];
    seq.extend(ids.iter().cloned());
    seq.push(END.to_string());
    let pairs: Vec<(&str, &str)> = seq
        .windows(2)
        .map(|w| (w[0].as_str(), w[1].as_str()))
        .collect();
    graph_from("chain", real, &pairs)
}

/// `START -> a`, `a -> {b, c}`, `{b, c} -> d`, `d -> END` with the given
/// variant counts for `[a, b, c, d]`.
pub fn diamond_graph(variants: [usize; 4]) -> CompactGraph {
    let real = ["a", "b", "c", "d"]
        .iter()
        .zip(variants)
        .map(|(id, v)| node_with_variants(id, v))
        .collect();
    graph_from(
        "diamond",
        real,
        &[
            (START, "a"),
            ("a", "b"),
            ("a", "c"),
            ("b", "d"),
            ("c", "d"),
            ("d", END),
        ],
    )
}

/// START fans out to `k` parallel single-node branches that rejoin at END.
pub fn parallel_graph(k: usize) -> CompactGraph {
    let ids: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    let real = ids.iter().map(|id| node(id, &[id.as_str()])).collect();
    let mut pairs = Vec::new();
    for id in &ids {
        pairs.push((START, id.as_str()));
        pairs.push((id.as_str(), END));
    }
    graph_from("parallel", real, &pairs)
}

/// Five trajectories of unequal depth and unequal probability:
///
/// ```text
/// START -> a -> END                     p = 1/2 * 1/2
/// START -> a -> b -> END                p = 1/2 * 1/2
/// START -> c -> d -> e -> END           p = 1/2 * 1/3
/// START -> c -> e -> END                p = 1/2 * 1/3
/// START -> c -> END                     p = 1/2 * 1/3
/// ```
pub fn five_path_graph() -> CompactGraph {
    let real = ["a", "b", "c", "d", "e"]
        .iter()
        .map(|id| node(id, &[&format!("step {id}")]))
        .collect();
    graph_from(
        "five paths",
        real,
        &[
            (START, "a"),
            (START, "c"),
            ("a", END),
            ("a", "b"),
            ("b", END),
            ("c", "d"),
            ("c", "e"),
            ("c", END),
            ("d", "e"),
            ("e", END),
        ],
    )
}

/// Complete layered graph: `layers` layers of `width` nodes, every node of
/// one layer connected to every node of the next, each node carrying
/// `variants` surface variants.
pub fn layered_graph(layers: usize, width: usize, variants: usize) -> CompactGraph {
    let id = |l: usize, w: usize| format!("L{l}w{w}");
    let mut real = Vec::new();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for l in 0..layers {
        for w in 0..width {
            real.push(node_with_variants(&id(l, w), variants));
            if l == 0 {
                pairs.push((START.into(), id(l, w)));
            } else {
                for p in 0..width {
                    pairs.push((id(l - 1, p), id(l, w)));
                }
            }
            if l + 1 == layers {
                pairs.push((id(l, w), END.into()));
            }
        }
    }
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    graph_from("layered", real, &refs)
}

/// Layered graph with complete connections between consecutive layers plus
/// random layer-skipping edges (`l -> l+2`, probability `skip`), so
/// trajectory lengths vary between about `layers/2` and `layers`.
pub fn skip_layered_graph(seed: u64, layers: usize, width: usize, variants: usize, skip: f64) -> CompactGraph {
    let mut rng = rng_from_seed(seed);
    let id = |l: usize, w: usize| format!("L{l}w{w}");
    let mut real = Vec::new();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for l in 0..layers {
        for w in 0..width {
            real.push(node_with_variants(&id(l, w), variants));
            if l == 0 {
                pairs.push((START.into(), id(l, w)));
            }
            if l + 1 == layers {
                pairs.push((id(l, w), END.into()));
            } else {
                for q in 0..width {
                    pairs.push((id(l, w), id(l + 1, q)));
                }
            }
            for q in 0..width {
                if l + 2 < layers && rng.random_bool(skip) {
                    pairs.push((id(l, w), id(l + 2, q)));
                }
            }
        }
    }
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    graph_from("synthetic errand", real, &refs)
}

/// Random valid DAG with `n_real` real nodes. Nodes are placed in a hidden
/// order and each forward pair is connected with probability `density`;
/// nodes left without predecessors hang off START and nodes without
/// successors feed END. Variant counts are drawn from `1..=max_variants`.
pub fn random_dag(seed: u64, n_real: usize, density: f64, max_variants: usize) -> CompactGraph {
    let mut rng = rng_from_seed(seed);
    let ids: Vec<String> = (0..n_real).map(|i| format!("r{i}")).collect();
    let mut has_pred = vec![false; n_real];
    let mut has_succ = vec![false; n_real];
    let mut pairs: Vec<(String, String)> = Vec::new();
    for i in 0..n_real {
        for j in i + 1..n_real {
            if rng.random_bool(density) {
                pairs.push((ids[i].clone(), ids[j].clone()));
                has_succ[i] = true;
                has_pred[j] = true;
            }
        }
    }
    for i in 0..n_real {
        if !has_pred[i] || rng.random_bool(0.15) {
            pairs.push((START.into(), ids[i].clone()));
        }
        if !has_succ[i] || rng.random_bool(0.15) {
            pairs.push((ids[i].clone(), END.into()));
        }
    }
    let real = ids
        .iter()
        .map(|id| {
            let v = rng.random_range(1..=max_variants.max(1) as u32) as usize;
            let mut n = node_with_variants(id, v);
            // Occasionally attach a substep chain to the first realization.
            if rng.random_bool(0.2) {
                n.realizations[0].substep_chain =
                    Some(vec![format!("{id} sub 1"), format!("{id} sub 2")]);
            }
            n
        })
        .collect();
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    graph_from(&format!("random-{seed}"), real, &refs)
}

/// Random corpus whose ESDs follow a hidden total order over `n_clusters`
/// clusters, so the induced graph is always acyclic.
pub fn random_corpus(seed: u64, n_esds: usize, n_clusters: usize) -> ScenarioCorpus {
    let mut rng = rng_from_seed(seed);
    let mut esds = Vec::new();
    let mut alignment = BTreeMap::new();
    for e in 0..n_esds {
        let mut clusters: Vec<usize> = (0..n_clusters).filter(|_| rng.random_bool(0.5)).collect();
        if clusters.is_empty() {
            clusters.push(rng.random_range(0..n_clusters as u32) as usize);
        }
        let id = format!("esd{e}");
        let steps = clusters
            .iter()
            .map(|&c| {
                let text = format!("cluster {c} phrasing {}", rng.random_range(0..3u32));
                if rng.random_bool(0.1) {
                    EventStep::with_substeps(text, vec![format!("c{c} part a"), format!("c{c} part b")])
                } else {
                    EventStep::plain(text)
                }
            })
            .collect();
        alignment.insert(id.clone(), clusters.iter().map(|c| format!("c{c}")).collect());
        esds.push(Esd { id, steps });
    }
    ScenarioCorpus {
        scenario_name: format!("synthetic {seed}"),
        esds,
        alignment,
    }
}

/// Every consecutive aligned pair in a corpus, with START/END brackets.
pub fn consecutive_pairs(corpus: &ScenarioCorpus) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for esd in &corpus.esds {
        let clusters = &corpus.alignment[&esd.id];
        let mut seq = vec![START.to_string()];
        seq.extend(clusters.iter().cloned());
        seq.push(END.to_string());
        for w in seq.windows(2) {
            out.insert((w[0].clone(), w[1].clone()));
        }
    }
    out
}

/// All START -> END paths as real-node index sequences, by DFS. Returns
/// `None` once more than `cap` paths have been found.
pub fn enumerate_paths(graph: &CompactGraph, cap: usize) -> Option<Vec<Vec<usize>>> {
    fn dfs(
        g: &CompactGraph,
        v: usize,
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        cap: usize,
    ) -> bool {
        if v == g.end() {
            out.push(stack.clone());
            return out.len() <= cap;
        }
        for &u in g.successors(v) {
            if u != g.end() {
                stack.push(u);
            }
            let ok = dfs(g, u, stack, out, cap);
            if u != g.end() {
                stack.pop();
            }
            if !ok {
                return false;
            }
        }
        true
    }
    let mut out = Vec::new();
    let mut stack = Vec::new();
    dfs(graph, graph.start(), &mut stack, &mut out, cap).then_some(out)
}

/// Probability of a path under uniform outgoing transitions.
pub fn path_probability(graph: &CompactGraph, path: &[usize]) -> f64 {
    let mut p = 1.0 / graph.out_degree(graph.start()) as f64;
    for &v in path {
        p /= graph.out_degree(v) as f64;
    }
    p
}

pub fn brute_count_paths(paths: &[Vec<usize>]) -> BigUint {
    BigUint::from(paths.len())
}

pub fn brute_count_esds(graph: &CompactGraph, paths: &[Vec<usize>]) -> BigUint {
    paths.iter().fold(BigUint::zero(), |acc, path| {
        acc + path.iter().fold(BigUint::one(), |p, &v| {
            p * BigUint::from(graph.node(v).variant_count())
        })
    })
}

pub fn brute_entropy(graph: &CompactGraph, paths: &[Vec<usize>]) -> f64 {
    -paths
        .iter()
        .map(|p| {
            let prob = path_probability(graph, p);
            prob * prob.ln()
        })
        .sum::<f64>()
}

/// Whether `ids` is a walk from a START successor along graph edges. With
/// `to_end`, the last node must also feed END.
pub fn is_valid_walk(graph: &CompactGraph, ids: &[String], to_end: bool) -> bool {
    let Some(idx) = ids
        .iter()
        .map(|id| graph.index_of(id))
        .collect::<Option<Vec<usize>>>()
    else {
        return false;
    };
    let Some(&first) = idx.first() else {
        return false;
    };
    if !graph.has_edge(graph.start(), first) {
        return false;
    }
    if idx.windows(2).any(|w| !graph.has_edge(w[0], w[1])) {
        return false;
    }
    !to_end || graph.has_edge(*idx.last().unwrap(), graph.end())
}

/// Re-check the distractor predicates for a chosen node and return the names
/// of every violated one. Distances are found by exhaustive path search.
pub fn distractor_violations(
    graph: &CompactGraph,
    context_nodes: &[String],
    gold: &str,
    distractor: &str,
    min_distance: usize,
) -> Vec<&'static str> {
    let mut v = Vec::new();
    let (Some(x), Some(c)) = (graph.index_of(distractor), context_nodes.last().and_then(|c| graph.index_of(c))) else {
        return vec!["unknown node"];
    };
    if graph.is_virtual(x) {
        v.push("virtual node");
    }
    if distractor == gold {
        v.push("equals gold");
    }
    if graph.successors(c).contains(&x) {
        v.push("valid successor");
    }
    if context_nodes.iter().any(|n| n == distractor) {
        v.push("in context");
    }
    let d = shortest_by_search(graph, c, x).min(shortest_by_search(graph, x, c));
    if d < min_distance {
        v.push("too close");
    }
    if !graph
        .predecessors(x)
        .iter()
        .any(|&p| p != graph.start())
    {
        v.push("no conjugate predecessor");
    }
    v
}

// Length of the shortest directed path by iterative deepening (usize::MAX if none).
fn shortest_by_search(graph: &CompactGraph, from: usize, to: usize) -> usize {
    fn reach(g: &CompactGraph, v: usize, to: usize, depth: usize) -> bool {
        if v == to {
            return true;
        }
        depth > 0 && g.successors(v).iter().any(|&u| reach(g, u, to, depth - 1))
    }
    (0..graph.node_count())
        .find(|&d| reach(graph, from, to, d))
        .unwrap_or(usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        assert_eq!(enumerate_paths(&chain_graph(3), 10).unwrap().len(), 1);
        assert_eq!(enumerate_paths(&diamond_graph([1; 4]), 10).unwrap().len(), 2);
        assert_eq!(enumerate_paths(&parallel_graph(4), 10).unwrap().len(), 4);
        assert_eq!(enumerate_paths(&five_path_graph(), 10).unwrap().len(), 5);
        assert_eq!(enumerate_paths(&layered_graph(3, 2, 1), 100).unwrap().len(), 8);
    }

    #[test]
    fn enumeration_cap() {
        assert!(enumerate_paths(&layered_graph(4, 3, 1), 80).is_none());
        assert_eq!(enumerate_paths(&layered_graph(4, 3, 1), 81).unwrap().len(), 81);
    }

    #[test]
    fn five_path_probabilities() {
        let g = five_path_graph();
        let paths = enumerate_paths(&g, 10).unwrap();
        let total: f64 = paths.iter().map(|p| path_probability(&g, p)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_dags_are_valid_and_small() {
        for seed in 0..50 {
            let g = random_dag(seed, 12, 0.35, 3);
            let paths = enumerate_paths(&g, 10_000).expect("at most 10k paths");
            assert!(!paths.is_empty());
        }
    }
}
