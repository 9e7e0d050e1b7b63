//! Trajectory sampling, split points, distractor selection and conjugate
//! trajectories.
//!
//! All walks choose uniformly among a node's outgoing edges, so the
//! probability of a trajectory is the product of `1 / out_degree` over the
//! nodes it leaves (START included).

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::CompactGraph;
use crate::seed::rng_from_seed;

use SamplerError::SplitOutOfRange;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("split {n} out of range for trajectory of length {m} (need 2 <= n <= m)")]
    SplitOutOfRange { n: usize, m: usize },
    #[error("no eligible distractor node after filtering")]
    EmptyDistractorPool,
    #[error("node `{0}` cannot be reached by a non-empty walk from START")]
    Unreachable(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

pub type Result<T, E = SamplerError> = std::result::Result<T, E>;

/// One walk through the graph, START and END excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario_name: String,
    pub node_ids: Vec<String>,
    /// Variant index chosen for each node.
    pub realization_choice: Vec<usize>,
    /// Surface text of each step, resolved from `realization_choice`.
    pub texts: Vec<String>,
    /// Natural-log probability of the walk under the sampling rule.
    pub log_prob: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSample {
    pub trajectory: Trajectory,
    /// 1-based index of the gold next step.
    pub n: usize,
    pub context: Vec<String>,
    pub correct_node: String,
}

impl SplitSample {
    pub fn m(&self) -> usize {
        self.trajectory.len()
    }

    pub fn context_nodes(&self) -> &[String] {
        &self.trajectory.node_ids[..self.n - 1]
    }

    pub fn context_end(&self) -> &str {
        &self.trajectory.node_ids[self.n - 2]
    }

    pub fn correct_text(&self) -> &str {
        &self.trajectory.texts[self.n - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorPolicy {
    pub min_graph_distance: usize,
    pub exclude_valid_successors: bool,
    pub exclude_context_nodes: bool,
    pub rng_seed: u64,
}

impl Default for DistractorPolicy {
    fn default() -> Self {
        Self {
            min_graph_distance: 2,
            exclude_valid_successors: true,
            exclude_context_nodes: true,
            rng_seed: 0,
        }
    }
}

impl DistractorPolicy {
    pub fn with_seed(self, rng_seed: u64) -> Self {
        Self { rng_seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distractor {
    pub node_id: String,
    pub variant: usize,
    pub text: String,
}

// Portable uniform index: always samples through u32 regardless of usize width.
fn pick<R: Rng>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0 && n <= u32::MAX as usize);
    rng.random_range(0..n as u32) as usize
}

fn push_step<R: Rng>(graph: &CompactGraph, v: usize, rng: &mut R, traj: &mut Trajectory) {
    let node = graph.node(v);
    let variant = pick(rng, node.variant_count());
    traj.node_ids.push(node.id.clone());
    traj.realization_choice.push(variant);
    traj.texts
        .push(node.variant_text(variant).expect("variant index in range"));
}

fn empty_trajectory(graph: &CompactGraph) -> Trajectory {
    Trajectory {
        scenario_name: graph.scenario_name().to_string(),
        node_ids: Vec::new(),
        realization_choice: Vec::new(),
        texts: Vec::new(),
        log_prob: 0.0,
    }
}

/// Continue a uniform walk from `from` to END, appending every visited
/// non-virtual node (excluding `from` itself).
fn walk_to_end<R: Rng>(graph: &CompactGraph, from: usize, rng: &mut R, traj: &mut Trajectory) {
    let mut v = from;
    while v != graph.end() {
        let succ = graph.successors(v);
        let next = succ[pick(rng, succ.len())];
        traj.log_prob -= (succ.len() as f64).ln();
        if next != graph.end() {
            push_step(graph, next, rng, traj);
        }
        v = next;
    }
}

/// Sample a full trajectory by a uniform random walk from START to END.
pub fn sample_trajectory(graph: &CompactGraph, seed: u64) -> Trajectory {
    let mut rng = rng_from_seed(seed);
    let mut traj = empty_trajectory(graph);
    walk_to_end(graph, graph.start(), &mut rng, &mut traj);
    traj
}

/// Extend a prefix ending at `last` with a uniform walk to END.
pub fn complete_trajectory(graph: &CompactGraph, prefix: &Trajectory, last: usize, seed: u64) -> Trajectory {
    let mut rng = rng_from_seed(seed);
    let mut traj = prefix.clone();
    walk_to_end(graph, last, &mut rng, &mut traj);
    traj
}

/// Split a trajectory at the 1-based step `n`: steps `1..n-1` become the
/// context and step `n` the gold answer.
pub fn split_at(traj: &Trajectory, n: usize) -> Result<SplitSample> {
    let m = traj.len();
    if n < 2 || n > m {
        return Err(SplitOutOfRange { n, m });
    }
    Ok(SplitSample {
        trajectory: traj.clone(),
        n,
        context: traj.texts[..n - 1].to_vec(),
        correct_node: traj.node_ids[n - 1].clone(),
    })
}

/// Shortest directed path length from `from` to every node, in either
/// direction (`None` when unrelated).
pub fn either_direction_distances(graph: &CompactGraph, from: usize) -> Vec<Option<usize>> {
    let fwd = bfs(graph.node_count(), from, |v| graph.successors(v));
    let bwd = bfs(graph.node_count(), from, |v| graph.predecessors(v));
    fwd.into_iter()
        .zip(bwd)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        })
        .collect()
}

fn bfs<'g>(n: usize, from: usize, adj: impl Fn(usize) -> &'g [usize]) -> Vec<Option<usize>> {
    let mut dist = vec![None; n];
    dist[from] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        for &u in adj(v) {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Eligible distractor nodes for a split, in node order.
pub fn distractor_pool(
    graph: &CompactGraph,
    sample: &SplitSample,
    policy: &DistractorPolicy,
) -> Result<Vec<usize>> {
    if policy.min_graph_distance < 1 {
        return Err(SamplerError::InvalidPolicy(
            "min_graph_distance must be >= 1".into(),
        ));
    }
    let lookup = |id: &str| {
        graph
            .index_of(id)
            .ok_or_else(|| SamplerError::UnknownNode(id.to_string()))
    };
    let end = lookup(sample.context_end())?;
    let gold = lookup(&sample.correct_node)?;
    let context: Vec<usize> = sample
        .context_nodes()
        .iter()
        .map(|id| lookup(id))
        .collect::<Result<_>>()?;
    let dist = either_direction_distances(graph, end);

    Ok(graph
        .real_nodes()
        .filter(|&x| x != gold)
        .filter(|&x| !(policy.exclude_valid_successors && graph.has_edge(end, x)))
        .filter(|&x| !(policy.exclude_context_nodes && context.contains(&x)))
        .filter(|&x| dist[x].map_or(true, |d| d >= policy.min_graph_distance))
        .filter(|&x| graph.predecessors(x).iter().any(|&p| p != graph.start()))
        .collect())
}

/// Draw a distractor node uniformly from the eligible pool, then one of its
/// surface variants, both from `policy.rng_seed`.
pub fn sample_distractor(
    graph: &CompactGraph,
    sample: &SplitSample,
    policy: &DistractorPolicy,
) -> Result<Distractor> {
    let pool = distractor_pool(graph, sample, policy)?;
    if pool.is_empty() {
        return Err(SamplerError::EmptyDistractorPool);
    }
    let mut rng = rng_from_seed(policy.rng_seed);
    let node = graph.node(pool[pick(&mut rng, pool.len())]);
    let variant = pick(&mut rng, node.variant_count());
    Ok(Distractor {
        node_id: node.id.clone(),
        variant,
        text: node.variant_text(variant).expect("variant index in range"),
    })
}

/// Sample a non-empty walk `START -> .. -> q` with an edge `q -> distractor`,
/// so that the distractor is the correct next step after it.
///
/// The walk stays inside the ancestor set of the distractor and chooses
/// uniformly among the admissible outgoing edges; the direct `START ->
/// distractor` edge is never taken since it would leave the context empty.
/// `log_prob` is the log probability under that restricted walk.
pub fn find_conjugate_trajectory(
    graph: &CompactGraph,
    distractor: &str,
    seed: u64,
) -> Result<Trajectory> {
    let target = graph
        .index_of(distractor)
        .ok_or_else(|| SamplerError::UnknownNode(distractor.to_string()))?;
    if graph.is_virtual(target) {
        return Err(SamplerError::Unreachable(distractor.to_string()));
    }
    let ancestors = bfs(graph.node_count(), target, |v| graph.predecessors(v));
    let admissible = |v: usize| -> Vec<usize> {
        graph
            .successors(v)
            .iter()
            .copied()
            .filter(|&u| {
                if u == target {
                    v != graph.start()
                } else {
                    ancestors[u].is_some()
                }
            })
            .collect()
    };
    if admissible(graph.start()).is_empty() {
        return Err(SamplerError::Unreachable(distractor.to_string()));
    }

    let mut rng = rng_from_seed(seed);
    let mut traj = empty_trajectory(graph);
    let mut v = graph.start();
    loop {
        let choices = admissible(v);
        let next = choices[pick(&mut rng, choices.len())];
        traj.log_prob -= (choices.len() as f64).ln();
        if next == target {
            break;
        }
        push_step(graph, next, &mut rng, &mut traj);
        v = next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    #[test]
    fn chain_has_single_trajectory() {
        let g = oracle::chain_graph(4);
        for seed in 0..20 {
            let t = sample_trajectory(&g, seed);
            assert_eq!(t.node_ids, vec!["n0", "n1", "n2", "n3"]);
            assert_eq!(t.log_prob, 0.0);
        }
    }

    #[test]
    fn split_definition() {
        let g = oracle::chain_graph(4);
        let t = sample_trajectory(&g, 1);
        let s = split_at(&t, 3).unwrap();
        assert_eq!(s.context, t.texts[..2].to_vec());
        assert_eq!(s.correct_node, "n2");
        let last = split_at(&t, 4).unwrap();
        assert_eq!(last.context.len(), 3);
        assert_eq!(last.correct_node, "n3");
        assert_eq!(split_at(&t, 1), Err(SplitOutOfRange { n: 1, m: 4 }));
        assert_eq!(split_at(&t, 5), Err(SplitOutOfRange { n: 5, m: 4 }));
    }

    #[test]
    fn diamond_distractor_is_d() {
        // START->a, a->{b,c}, b->d, c->d, d->END; context ends at a, gold b.
        let g = oracle::diamond_graph([1, 1, 1, 1]);
        let traj = Trajectory {
            scenario_name: "diamond".into(),
            node_ids: vec!["a".into(), "b".into(), "d".into()],
            realization_choice: vec![0, 0, 0],
            texts: vec!["a".into(), "b".into(), "d".into()],
            log_prob: -(2f64.ln()),
        };
        let s = split_at(&traj, 2).unwrap();
        // d is distance 2 from a, so it passes the default threshold.
        let pool = distractor_pool(&g, &s, &DistractorPolicy::default()).unwrap();
        assert_eq!(pool, vec![g.index_of("d").unwrap()]);
        for seed in 0..10 {
            let d = sample_distractor(&g, &s, &DistractorPolicy::default().with_seed(seed)).unwrap();
            assert_eq!(d.node_id, "d");
        }
    }

    #[test]
    fn chain_pool_is_the_steps_after_gold() {
        let g = oracle::chain_graph(2);
        let s = split_at(&sample_trajectory(&g, 0), 2).unwrap();
        assert_eq!(
            sample_distractor(&g, &s, &DistractorPolicy::default()),
            Err(SamplerError::EmptyDistractorPool)
        );

        let g = oracle::chain_graph(5);
        let t = sample_trajectory(&g, 3);
        for n in 2..=t.len() {
            let s = split_at(&t, n).unwrap();
            let pool: Vec<String> = distractor_pool(&g, &s, &DistractorPolicy::default())
                .unwrap()
                .into_iter()
                .map(|i| g.nodes()[i].id.clone())
                .collect();
            let later: Vec<String> = t.node_ids[n..].to_vec();
            assert_eq!(pool, later, "n = {n}");
        }
    }

    #[test]
    fn conjugate_on_diamond() {
        let g = oracle::diamond_graph([1, 1, 1, 1]);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let t = find_conjugate_trajectory(&g, "d", seed).unwrap();
            assert!(t.node_ids == ["a", "b"] || t.node_ids == ["a", "c"]);
            assert!((t.log_prob + 2f64.ln()).abs() < 1e-12);
            seen.insert(t.node_ids);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn conjugate_of_start_only_child_is_unreachable() {
        // a has in-edges only from START: no non-empty context precedes it.
        let g = oracle::diamond_graph([1, 1, 1, 1]);
        assert_eq!(
            find_conjugate_trajectory(&g, "a", 0),
            Err(SamplerError::Unreachable("a".into()))
        );
        assert!(matches!(
            find_conjugate_trajectory(&g, "zzz", 0),
            Err(SamplerError::UnknownNode(_))
        ));
    }

    #[test]
    fn zero_distance_policy_rejected() {
        let g = oracle::diamond_graph([1, 1, 1, 1]);
        let t = sample_trajectory(&g, 0);
        let s = split_at(&t, 2).unwrap();
        let policy = DistractorPolicy {
            min_graph_distance: 0,
            ..Default::default()
        };
        assert!(matches!(
            sample_distractor(&g, &s, &policy),
            Err(SamplerError::InvalidPolicy(_))
        ));
    }
}
