//! Compact scenario graphs.
//!
//! Nodes are event clusters; an edge `p -> q` exists when some ESD has a step
//! aligned to `p` immediately followed by a step aligned to `q`. Two virtual
//! nodes, `START` and `END`, bracket every ESD. Every `START -> END` path is a
//! plausible way to carry out the scenario.
//!
//! Counting is exact ([`BigCount`]) and entropy is computed with a forward
//! chain-rule pass, so neither needs to enumerate the (astronomically many)
//! trajectories.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_corpus, Diagnostic, ScenarioCorpus};

pub const START: &str = "START";
pub const END: &str = "END";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("corpus has no ESDs")]
    EmptyCorpus,
    #[error("invalid corpus: {0}")]
    InvalidCorpus(Diagnostic),
    #[error("cycle detected: {}", format_cycle(.cycle))]
    CycleDetected { cycle: Vec<String> },
    #[error("cluster id `{0}` is reserved for a virtual node")]
    ReservedId(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("edge references unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("node `{0}` does not lie on any START -> END path")]
    DeadNode(String),
    #[error("{0}")]
    VirtualNode(String),
    #[error("node `{0}` has no realizations")]
    NoRealizations(String),
    #[error("node `{node}` has duplicate realization ({esd_id}, {step_index})")]
    DuplicateRealization {
        node: String,
        esd_id: String,
        step_index: usize,
    },
    #[error("malformed graph JSON: {0}")]
    Json(String),
}

fn format_cycle(cycle: &[String]) -> String {
    let mut s = cycle.join(" -> ");
    if let Some(first) = cycle.first() {
        s.push_str(" -> ");
        s.push_str(first);
    }
    s
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// One surface form attached to a cluster node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Realization {
    #[serde(rename = "esd")]
    pub esd_id: String,
    #[serde(rename = "idx")]
    pub step_index: usize,
    pub text: String,
    #[serde(rename = "substeps", default, skip_serializing_if = "Option::is_none")]
    pub substep_chain: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub id: String,
    pub label: String,
    pub realizations: Vec<Realization>,
}

impl ClusterNode {
    pub fn is_virtual(&self) -> bool {
        self.id == START || self.id == END
    }

    /// Number of surface variants. Each realization contributes its own text;
    /// a realization carrying a substep chain contributes the expanded chain
    /// as one further variant. Virtual nodes weigh 1.
    pub fn variant_count(&self) -> usize {
        if self.is_virtual() {
            return 1;
        }
        self.realizations
            .iter()
            .map(|r| 1 + usize::from(r.substep_chain.is_some()))
            .sum()
    }

    /// Surface text of variant `i` (see [`Self::variant_count`] for the order).
    pub fn variant_text(&self, i: usize) -> Option<String> {
        let mut k = i;
        for r in &self.realizations {
            if k == 0 {
                return Some(r.text.clone());
            }
            k -= 1;
            if let Some(chain) = &r.substep_chain {
                if k == 0 {
                    return Some(chain.join(", "));
                }
                k -= 1;
            }
        }
        None
    }

    pub fn variant_texts(&self) -> Vec<String> {
        (0..self.variant_count())
            .filter_map(|i| self.variant_text(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub support: u64,
}

/// Exact non-negative integer count.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BigCount(pub BigUint);

impl BigCount {
    pub fn zero() -> Self {
        BigCount(BigUint::zero())
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    /// Scientific notation with `sig` significant digits (round half up),
    /// e.g. `5.0e+38` for `sig = 2`.
    pub fn to_scientific(&self, sig: usize) -> String {
        let sig = sig.max(1);
        let digits = self.0.to_str_radix(10);
        if self.0.is_zero() {
            return format!("{}e+00", mantissa_string(&"0".repeat(sig)));
        }
        let mut exponent = digits.len() - 1;
        let mut head: Vec<u8> = digits.bytes().take(sig).map(|b| b - b'0').collect();
        head.resize(sig, 0);
        if digits.len() > sig && digits.as_bytes()[sig] >= b'5' {
            let mut i = sig;
            loop {
                if i == 0 {
                    head.insert(0, 1);
                    head.truncate(sig);
                    exponent += 1;
                    break;
                }
                i -= 1;
                if head[i] == 9 {
                    head[i] = 0;
                } else {
                    head[i] += 1;
                    break;
                }
            }
        }
        let m: String = head.iter().map(|d| char::from(b'0' + d)).collect();
        format!("{}e+{:02}", mantissa_string(&m), exponent)
    }

    pub fn to_f64(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self.0).unwrap_or(f64::INFINITY)
    }
}

fn mantissa_string(digits: &str) -> String {
    if digits.len() == 1 {
        format!("{digits}.0")
    } else {
        format!("{}.{}", &digits[..1], &digits[1..])
    }
}

impl fmt::Display for BigCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for BigCount {
    fn from(v: u64) -> Self {
        BigCount(BigUint::from(v))
    }
}

/// Scenario DAG with virtual `START`/`END` nodes.
///
/// Instances are always valid: acyclic, every node on some `START -> END`
/// path, no duplicate edges. Node order is `START`, clusters in order of first
/// appearance, `END`; edges are sorted by (source, target) node position.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct CompactGraph {
    scenario_name: String,
    nodes: Vec<ClusterNode>,
    edges: Vec<Edge>,
    start: usize,
    end: usize,
    index: HashMap<String, usize>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
    support: Vec<Vec<u64>>,
    topo: Vec<usize>,
}

impl PartialEq for CompactGraph {
    fn eq(&self, other: &Self) -> bool {
        self.scenario_name == other.scenario_name
            && self.nodes == other.nodes
            && self.edges == other.edges
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphJson {
    scenario: String,
    nodes: Vec<ClusterNode>,
    edges: Vec<Edge>,
    start: String,
    end: String,
}

impl TryFrom<GraphJson> for CompactGraph {
    type Error = GraphError;

    fn try_from(g: GraphJson) -> Result<Self> {
        if g.start != START || g.end != END {
            return Err(GraphError::VirtualNode(format!(
                "virtual nodes must be named {START}/{END}, got {}/{}",
                g.start, g.end
            )));
        }
        CompactGraph::from_parts(g.scenario, g.nodes, g.edges)
    }
}

impl From<CompactGraph> for GraphJson {
    fn from(g: CompactGraph) -> Self {
        GraphJson {
            scenario: g.scenario_name,
            nodes: g.nodes,
            edges: g.edges,
            start: START.to_string(),
            end: END.to_string(),
        }
    }
}

impl CompactGraph {
    /// Assemble and validate a graph. `nodes` must contain the virtual
    /// `START` and `END` nodes (with no realizations).
    pub fn from_parts(
        scenario_name: impl Into<String>,
        nodes: Vec<ClusterNode>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
            if n.is_virtual() {
                if !n.realizations.is_empty() {
                    return Err(GraphError::VirtualNode(format!(
                        "virtual node {} must not carry realizations",
                        n.id
                    )));
                }
            } else {
                if n.realizations.is_empty() {
                    return Err(GraphError::NoRealizations(n.id.clone()));
                }
                let mut seen = HashSet::new();
                for r in &n.realizations {
                    if !seen.insert((r.esd_id.as_str(), r.step_index)) {
                        return Err(GraphError::DuplicateRealization {
                            node: n.id.clone(),
                            esd_id: r.esd_id.clone(),
                            step_index: r.step_index,
                        });
                    }
                }
            }
        }
        let start = *index
            .get(START)
            .ok_or_else(|| GraphError::VirtualNode("missing START node".into()))?;
        let end = *index
            .get(END)
            .ok_or_else(|| GraphError::VirtualNode("missing END node".into()))?;

        let n = nodes.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        let mut support = vec![Vec::new(); n];
        let mut pairs = HashSet::new();
        for e in &edges {
            let f = *index
                .get(&e.from)
                .ok_or_else(|| GraphError::UnknownNode(e.from.clone()))?;
            let t = *index
                .get(&e.to)
                .ok_or_else(|| GraphError::UnknownNode(e.to.clone()))?;
            if !pairs.insert((f, t)) {
                return Err(GraphError::DuplicateEdge(e.from.clone(), e.to.clone()));
            }
            succ[f].push(t);
            support[f].push(e.support);
            pred[t].push(f);
        }
        if !pred[start].is_empty() {
            return Err(GraphError::VirtualNode("START has incoming edges".into()));
        }
        if !succ[end].is_empty() {
            return Err(GraphError::VirtualNode("END has outgoing edges".into()));
        }

        let topo = match topological_order(&succ) {
            Some(t) => t,
            None => {
                let cycle = find_cycle(&succ).expect("Kahn failed so a cycle exists");
                return Err(GraphError::CycleDetected {
                    cycle: cycle.into_iter().map(|i| nodes[i].id.clone()).collect(),
                });
            }
        };

        let fwd = reachable(&succ, start);
        let bwd = reachable(&pred, end);
        for (i, node) in nodes.iter().enumerate() {
            if !(fwd[i] && bwd[i]) {
                return Err(GraphError::DeadNode(node.id.clone()));
            }
        }

        // Canonical edge order: by (source position, target position).
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&k| (index[&edges[k].from], index[&edges[k].to]));
        let edges: Vec<Edge> = order.into_iter().map(|k| edges[k].clone()).collect();
        for (s, w) in succ.iter_mut().zip(support.iter_mut()) {
            let mut zipped: Vec<(usize, u64)> = s.iter().copied().zip(w.iter().copied()).collect();
            zipped.sort_unstable();
            *s = zipped.iter().map(|p| p.0).collect();
            *w = zipped.iter().map(|p| p.1).collect();
        }
        for p in pred.iter_mut() {
            p.sort_unstable();
        }

        Ok(Self {
            scenario_name: scenario_name.into(),
            nodes,
            edges,
            start,
            end,
            index,
            succ,
            pred,
            support,
            topo,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    pub fn scenario_name(&self) -> &str {
        &self.scenario_name
    }

    pub fn nodes(&self) -> &[ClusterNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, idx: usize) -> &ClusterNode {
        &self.nodes[idx]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn is_virtual(&self, idx: usize) -> bool {
        idx == self.start || idx == self.end
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn successors(&self, idx: usize) -> &[usize] {
        &self.succ[idx]
    }

    pub fn predecessors(&self, idx: usize) -> &[usize] {
        &self.pred[idx]
    }

    pub fn out_degree(&self, idx: usize) -> usize {
        self.succ[idx].len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.succ[from].binary_search(&to).is_ok()
    }

    pub fn edge_support(&self, from: usize, to: usize) -> Option<u64> {
        self.succ[from]
            .binary_search(&to)
            .ok()
            .map(|k| self.support[from][k])
    }

    /// Nodes in a topological order (START first, END last among its peers).
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Real (non-virtual) node indices in node order.
    pub fn real_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| !self.is_virtual(i))
    }
}

fn topological_order(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in succ {
        for &t in s {
            indeg[t] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &t in &succ[v] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                queue.push_back(t);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Returns one directed cycle as a node sequence `[v0, .., vk]` (with the
/// closing edge `vk -> v0` implied), or `None` for a DAG.
fn find_cycle(succ: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let n = succ.len();
    let mut color = vec![Color::White; n];
    for root in 0..n {
        if color[root] != Color::White {
            continue;
        }
        // (node, next child position)
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = Color::Grey;
        while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
            if *pos < succ[v].len() {
                let t = succ[v][*pos];
                *pos += 1;
                match color[t] {
                    Color::White => {
                        color[t] = Color::Grey;
                        stack.push((t, 0));
                    }
                    Color::Grey => {
                        let from = stack.iter().position(|&(u, _)| u == t).unwrap();
                        return Some(stack[from..].iter().map(|&(u, _)| u).collect());
                    }
                    Color::Black => {}
                }
            } else {
                color[v] = Color::Black;
                stack.pop();
            }
        }
    }
    None
}

fn reachable(adj: &[Vec<usize>], from: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        for &t in &adj[v] {
            if !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    seen
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Drop the lowest-support edge of each cycle instead of rejecting.
    pub break_cycles: bool,
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub graph: CompactGraph,
    /// Edges removed to break cycles, in removal order.
    pub dropped_edges: Vec<Edge>,
    /// Nodes removed because no START -> END path survived through them.
    pub pruned_nodes: Vec<String>,
}

/// Build the compact graph of a corpus, rejecting cyclic alignments.
pub fn build_graph(corpus: &ScenarioCorpus) -> Result<CompactGraph> {
    build_graph_with(corpus, BuildOptions::default()).map(|o| o.graph)
}

pub fn build_graph_with(corpus: &ScenarioCorpus, options: BuildOptions) -> Result<BuildOutcome> {
    if corpus.esds.is_empty() {
        return Err(GraphError::EmptyCorpus);
    }
    if let Some(d) = validate_corpus(corpus).into_iter().find(|d| d.is_error()) {
        return Err(GraphError::InvalidCorpus(d));
    }

    let mut ids: Vec<String> = vec![START.to_string()];
    let mut index: HashMap<String, usize> = HashMap::from([(START.to_string(), 0)]);
    let mut realizations: Vec<Vec<Realization>> = vec![Vec::new()];
    let mut counts: Vec<HashMap<String, (usize, usize)>> = vec![HashMap::new()];
    let mut support: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    // END gets its final index after all clusters are known.
    const END_SLOT: usize = usize::MAX;

    for esd in &corpus.esds {
        let clusters = &corpus.alignment[&esd.id];
        let mut prev = 0usize;
        for (step_index, (step, cid)) in esd.steps.iter().zip(clusters).enumerate() {
            if cid == START || cid == END {
                return Err(GraphError::ReservedId(cid.clone()));
            }
            let v = *index.entry(cid.clone()).or_insert_with(|| {
                ids.push(cid.clone());
                realizations.push(Vec::new());
                counts.push(HashMap::new());
                ids.len() - 1
            });
            realizations[v].push(Realization {
                esd_id: esd.id.clone(),
                step_index,
                text: step.text.clone(),
                substep_chain: step.substeps.clone(),
            });
            let seen = counts[v].len();
            let c = counts[v].entry(step.text.clone()).or_insert((0, seen));
            c.0 += 1;
            *support.entry((prev, v)).or_insert(0) += 1;
            prev = v;
        }
        *support.entry((prev, END_SLOT)).or_insert(0) += 1;
    }

    let end = ids.len();
    ids.push(END.to_string());
    realizations.push(Vec::new());

    let mut nodes: Vec<ClusterNode> = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let label = counts
            .get(i)
            .and_then(|c| {
                // most frequent text, first occurrence breaks ties
                c.iter()
                    .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                    .map(|(t, _)| t.clone())
            })
            .unwrap_or_else(|| id.clone());
        nodes.push(ClusterNode {
            id: id.clone(),
            label,
            realizations: std::mem::take(&mut realizations[i]),
        });
    }

    let mut edge_list: Vec<(usize, usize, u64)> = support
        .into_iter()
        .map(|((f, t), s)| (f, if t == END_SLOT { end } else { t }, s))
        .collect();
    edge_list.sort_unstable();

    let mut dropped = Vec::new();
    loop {
        let mut succ = vec![Vec::new(); nodes.len()];
        for &(f, t, _) in &edge_list {
            succ[f].push(t);
        }
        let Some(cycle) = find_cycle(&succ) else {
            break;
        };
        if !options.break_cycles {
            return Err(GraphError::CycleDetected {
                cycle: cycle.into_iter().map(|i| nodes[i].id.clone()).collect(),
            });
        }
        let cycle_edges: Vec<(usize, usize)> = cycle
            .iter()
            .zip(cycle.iter().cycle().skip(1))
            .map(|(&a, &b)| (a, b))
            .collect();
        let (k, _) = edge_list
            .iter()
            .enumerate()
            .filter(|(_, e)| cycle_edges.contains(&(e.0, e.1)))
            .min_by_key(|(_, e)| (e.2, cycle_edges.iter().position(|c| *c == (e.0, e.1))))
            .expect("cycle edges are present in the edge list");
        let (f, t, s) = edge_list.remove(k);
        log::warn!(
            "breaking cycle {}: dropping {} -> {} (support {s})",
            format_cycle(&cycle.iter().map(|&i| nodes[i].id.clone()).collect::<Vec<_>>()),
            nodes[f].id,
            nodes[t].id
        );
        dropped.push(Edge {
            from: nodes[f].id.clone(),
            to: nodes[t].id.clone(),
            support: s,
        });
    }

    // Prune nodes that no longer lie on a START -> END path.
    let n = nodes.len();
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    for &(f, t, _) in &edge_list {
        succ[f].push(t);
        pred[t].push(f);
    }
    let fwd = reachable(&succ, 0);
    let bwd = reachable(&pred, end);
    let alive: Vec<bool> = (0..n).map(|i| fwd[i] && bwd[i]).collect();
    let mut pruned = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        if !alive[i] {
            log::warn!("pruning node {} (no START -> END path)", node.id);
            pruned.push(node.id.clone());
        }
    }
    let edges: Vec<Edge> = edge_list
        .into_iter()
        .filter(|&(f, t, _)| alive[f] && alive[t])
        .map(|(f, t, s)| Edge {
            from: nodes[f].id.clone(),
            to: nodes[t].id.clone(),
            support: s,
        })
        .collect();
    let nodes: Vec<ClusterNode> = nodes
        .into_iter()
        .zip(alive)
        .filter_map(|(node, keep)| keep.then_some(node))
        .collect();

    let graph = CompactGraph::from_parts(corpus.scenario_name.clone(), nodes, edges)?;
    Ok(BuildOutcome {
        graph,
        dropped_edges: dropped,
        pruned_nodes: pruned,
    })
}

/// Number of distinct `START -> END` node sequences.
pub fn count_paths(graph: &CompactGraph) -> BigCount {
    weighted_paths(graph, |_| BigUint::one())
}

/// Number of distinct surface ESDs: the sum over paths of the product of the
/// variant counts of the nodes on the path.
pub fn count_esds(graph: &CompactGraph) -> BigCount {
    weighted_paths(graph, |node| BigUint::from(node.variant_count()))
}

fn weighted_paths(graph: &CompactGraph, weight: impl Fn(&ClusterNode) -> BigUint) -> BigCount {
    let mut ways: Vec<BigUint> = vec![BigUint::zero(); graph.node_count()];
    for &v in graph.topo_order().iter().rev() {
        if v == graph.end() {
            ways[v] = BigUint::one();
            continue;
        }
        let mut acc = BigUint::zero();
        for &u in graph.successors(v) {
            acc += &ways[u];
        }
        ways[v] = acc * weight(graph.node(v));
    }
    BigCount(std::mem::take(&mut ways[graph.start()]))
}

/// Probability of reaching each node under uniform outgoing transitions.
pub fn visit_probabilities(graph: &CompactGraph) -> Vec<f64> {
    let mut visit = vec![0.0f64; graph.node_count()];
    visit[graph.start()] = 1.0;
    for &v in graph.topo_order() {
        let out = graph.out_degree(v);
        if out == 0 {
            continue;
        }
        let share = visit[v] / out as f64;
        for &u in graph.successors(v) {
            visit[u] += share;
        }
    }
    visit
}

/// Shannon entropy (nats) of the trajectory distribution induced by choosing
/// uniformly among outgoing edges at every node.
pub fn trajectory_entropy(graph: &CompactGraph) -> f64 {
    let visit = visit_probabilities(graph);
    graph
        .topo_order()
        .iter()
        .filter(|&&v| graph.out_degree(v) > 1)
        .map(|&v| visit[v] * (graph.out_degree(v) as f64).ln())
        .sum()
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub scenario: String,
    /// Non-virtual node count.
    pub nodes: usize,
    /// All edges, including those touching START/END.
    pub edges: usize,
    /// Mean out-degree over non-virtual nodes with at least one outgoing edge.
    pub mean_out_degree: f64,
    #[serde(serialize_with = "ser_count")]
    pub paths: BigCount,
    #[serde(serialize_with = "ser_count")]
    pub esds: BigCount,
    pub entropy_nats: f64,
}

fn ser_count<S: serde::Serializer>(c: &BigCount, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&c.to_string())
}

pub const STATS_CSV_HEADER: [&str; 7] = [
    "scenario",
    "nodes",
    "edges",
    "mean_out_degree",
    "paths",
    "esds",
    "entropy_nats",
];

impl StatsReport {
    /// CSV record matching [`STATS_CSV_HEADER`]; with `bits` the last column
    /// holds bits instead of nats.
    pub fn csv_record(&self, bits: bool) -> Vec<String> {
        let entropy = if bits {
            nats_to_bits(self.entropy_nats)
        } else {
            self.entropy_nats
        };
        vec![
            self.scenario.clone(),
            self.nodes.to_string(),
            self.edges.to_string(),
            format!("{:.4}", self.mean_out_degree),
            self.paths.to_string(),
            self.esds.to_string(),
            format!("{entropy:.6}"),
        ]
    }

    pub fn csv_header(bits: bool) -> Vec<&'static str> {
        let mut h = STATS_CSV_HEADER.to_vec();
        if bits {
            h[6] = "entropy_bits";
        }
        h
    }
}

/// Write a stats table (header plus one row per report).
pub fn write_stats_csv<W: std::io::Write>(
    out: W,
    reports: &[StatsReport],
    bits: bool,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(StatsReport::csv_header(bits))?;
    for r in reports {
        w.write_record(r.csv_record(bits))?;
    }
    w.flush()
}

pub fn graph_stats(graph: &CompactGraph) -> StatsReport {
    let degrees: Vec<usize> = graph
        .real_nodes()
        .map(|v| graph.out_degree(v))
        .filter(|&d| d >= 1)
        .collect();
    let mean_out_degree = if degrees.is_empty() {
        0.0
    } else {
        degrees.iter().sum::<usize>() as f64 / degrees.len() as f64
    };
    StatsReport {
        scenario: graph.scenario_name().to_string(),
        nodes: graph.real_nodes().count(),
        edges: graph.edges().len(),
        mean_out_degree,
        paths: count_paths(graph),
        esds: count_esds(graph),
        entropy_nats: trajectory_entropy(graph),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Esd, EventStep};

    fn corpus(seqs: &[&[&str]]) -> ScenarioCorpus {
        let mut esds = Vec::new();
        let mut alignment = BTreeMap::new();
        for (i, seq) in seqs.iter().enumerate() {
            let id = format!("e{i}");
            esds.push(Esd {
                id: id.clone(),
                steps: seq
                    .iter()
                    .map(|c| EventStep::plain(format!("do {c} ({i})")))
                    .collect(),
            });
            alignment.insert(id, seq.iter().map(|c| c.to_string()).collect());
        }
        ScenarioCorpus {
            scenario_name: "test".into(),
            esds,
            alignment,
        }
    }

    fn edge_pairs(g: &CompactGraph) -> Vec<(String, String)> {
        g.edges()
            .iter()
            .map(|e| (e.from.clone(), e.to.clone()))
            .collect()
    }

    #[test]
    fn two_esds_edges() {
        let g = build_graph(&corpus(&[&["a", "b", "c"], &["a", "c"]])).unwrap();
        let mut pairs = edge_pairs(&g);
        pairs.sort();
        let mut want: Vec<(String, String)> = [
            ("START", "a"),
            ("a", "b"),
            ("b", "c"),
            ("a", "c"),
            ("c", "END"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        want.sort();
        assert_eq!(pairs, want);
        assert_eq!(g.out_degree(g.index_of("a").unwrap()), 2);
        let sup = g.edge_support(g.index_of("START").unwrap(), g.index_of("a").unwrap());
        assert_eq!(sup, Some(2));
    }

    #[test]
    fn opposite_orders_cycle() {
        let err = build_graph(&corpus(&[&["a", "b"], &["b", "a"]])).unwrap_err();
        match err {
            GraphError::CycleDetected { cycle } => {
                let mut c = cycle.clone();
                c.sort();
                assert_eq!(c, vec!["a", "b"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn break_cycles_drops_lowest_support() {
        // a->b witnessed twice, b->a once.
        let c = corpus(&[&["a", "b"], &["a", "b"], &["b", "a"]]);
        let out = build_graph_with(&c, BuildOptions { break_cycles: true }).unwrap();
        assert_eq!(out.dropped_edges.len(), 1);
        assert_eq!(out.dropped_edges[0].from, "b");
        assert_eq!(out.dropped_edges[0].to, "a");
        let g = &out.graph;
        assert!(g.has_edge(g.index_of("a").unwrap(), g.index_of("b").unwrap()));
    }

    #[test]
    fn reserved_ids_rejected() {
        let err = build_graph(&corpus(&[&["a", "END"]])).unwrap_err();
        assert_eq!(err, GraphError::ReservedId("END".into()));
    }

    #[test]
    fn empty_corpus() {
        let c = ScenarioCorpus {
            scenario_name: "x".into(),
            esds: vec![],
            alignment: BTreeMap::new(),
        };
        assert_eq!(build_graph(&c).unwrap_err(), GraphError::EmptyCorpus);
    }

    #[test]
    fn deterministic_build() {
        let c = corpus(&[&["a", "b", "d"], &["a", "c", "d"], &["b", "d"]]);
        let g1 = build_graph(&c).unwrap();
        let g2 = build_graph(&c).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.to_json(), g2.to_json());
    }

    #[test]
    fn json_round_trip() {
        let g = build_graph(&corpus(&[&["a", "b", "d"], &["a", "c", "d"]])).unwrap();
        let back = CompactGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.topo_order().len(), g.node_count());
    }

    #[test]
    fn json_with_dead_node_rejected() {
        let g = build_graph(&corpus(&[&["a", "b"]])).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        v["nodes"].as_array_mut().unwrap().push(serde_json::json!({
            "id": "orphan", "label": "o",
            "realizations": [{"esd": "e9", "idx": 0, "text": "o"}]
        }));
        let err = CompactGraph::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, GraphError::Json(m) if m.contains("orphan")));
    }

    #[test]
    fn variant_counting_with_substeps() {
        let node = ClusterNode {
            id: "n".into(),
            label: "n".into(),
            realizations: vec![
                Realization {
                    esd_id: "e1".into(),
                    step_index: 0,
                    text: "take medicine".into(),
                    substep_chain: Some(vec!["open bottle".into(), "drink water".into()]),
                },
                Realization {
                    esd_id: "e2".into(),
                    step_index: 3,
                    text: "swallow pill".into(),
                    substep_chain: None,
                },
            ],
        };
        assert_eq!(node.variant_count(), 3);
        assert_eq!(
            node.variant_texts(),
            vec!["take medicine", "open bottle, drink water", "swallow pill"]
        );
        assert_eq!(node.variant_text(3), None);
    }

    #[test]
    fn scientific_rendering() {
        let c = |s: &str| BigCount(s.parse().unwrap());
        assert_eq!(c("0").to_scientific(2), "0.0e+00");
        assert_eq!(c("7").to_scientific(2), "7.0e+00");
        assert_eq!(c("16000000000000000").to_scientific(2), "1.6e+16");
        assert_eq!(c("15500").to_scientific(2), "1.6e+04");
        assert_eq!(c("15499").to_scientific(2), "1.5e+04");
        assert_eq!(c("996").to_scientific(2), "1.0e+03");
        assert_eq!(c("99").to_scientific(2), "9.9e+01");
        assert_eq!(c("12345").to_scientific(3), "1.23e+04");
    }
}
