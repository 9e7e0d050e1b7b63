//! Oracle suites shared by the `selftest` subcommand and the test targets.
//!
//! Each check recomputes a result by brute force (or by an independent
//! predicate) and compares it with the library.

use std::collections::HashMap;
use std::time::Instant;

use num_bigint::BigUint;
use rand::Rng;

use crate::evalharness::{score_records, EvalRecord};
use crate::graph::{count_esds, count_paths, trajectory_entropy, visit_probabilities, CompactGraph};
use crate::oracle;
use crate::patchlab::{
    direct_effect, patched_logits_direct, sweep_caches, ModelConfig, PatchMode, PatchSet, PositionPolicy,
    Readout, Tokenizer, ToyResidualModel,
};
use crate::querygen::{
    generate_dataset, make_conjugate_pair, replay_query, CommonsenseQuery, ExportConfig, PromptTemplate,
};
use crate::sampler::{
    find_conjugate_trajectory, sample_distractor, sample_trajectory, split_at, DistractorPolicy,
};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, failures: &[String], detail: String) -> Self {
        let detail = match failures.first() {
            None => detail,
            Some(f) => format!("{} failure(s), first: {f}; {detail}", failures.len()),
        };
        Self {
            name: name.to_string(),
            passed: failures.is_empty(),
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Binomial 3σ band half-width.
pub fn three_sigma(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// `count` random DAGs of at most 12 nodes (START/END included) with at most
/// 10,000 paths each, together with their enumerated paths.
pub fn oracle_dags(count: usize, seed: u64) -> Vec<(CompactGraph, Vec<Vec<usize>>)> {
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        let mut rng = rng_from_seed(derive_seed(seed, "dag-shape", i));
        let n_real = rng.random_range(1..=10u32) as usize;
        let density = rng.random_range(0.1..0.8);
        let g = oracle::random_dag(derive_seed(seed, "dag", i), n_real, density, 4);
        i += 1;
        if let Some(paths) = oracle::enumerate_paths(&g, 10_000) {
            out.push((g, paths));
        }
    }
    out
}

pub fn check_path_counts(graphs: &[(CompactGraph, Vec<Vec<usize>>)]) -> CheckResult {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let mut max_paths = 0;
    for (g, paths) in graphs {
        max_paths = max_paths.max(paths.len());
        let (dp, brute) = (count_paths(g).0, oracle::brute_count_paths(paths));
        if dp != brute {
            failures.push(format!("{}: count_paths {dp} != {brute}", g.scenario_name()));
        }
        let (dp, brute) = (count_esds(g).0, oracle::brute_count_esds(g, paths));
        if dp != brute {
            failures.push(format!("{}: count_esds {dp} != {brute}", g.scenario_name()));
        }
    }
    CheckResult::new(
        "path-count oracle",
        &failures,
        format!(
            "{} graphs, max {max_paths} paths, {:.3}s",
            graphs.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

pub fn check_entropy(graphs: &[(CompactGraph, Vec<Vec<usize>>)]) -> CheckResult {
    let mut failures = Vec::new();
    let mut max_err: f64 = 0.0;
    for (g, paths) in graphs {
        let dp = trajectory_entropy(g);
        let brute = oracle::brute_entropy(g, paths);
        max_err = max_err.max((dp - brute).abs());
        if (dp - brute).abs() > 1e-9 {
            failures.push(format!("{}: H {dp} vs {brute}", g.scenario_name()));
        }
        let mass: f64 = paths.iter().map(|p| oracle::path_probability(g, p)).sum();
        if (mass - 1.0).abs() > 1e-12 {
            failures.push(format!("{}: sum p = {mass}", g.scenario_name()));
        }
        let end_visit = visit_probabilities(g)[g.end()];
        if (end_visit - 1.0).abs() > 1e-12 {
            failures.push(format!("{}: END visit probability {end_visit}", g.scenario_name()));
        }
    }
    for k in 1..=12 {
        let h = trajectory_entropy(&oracle::chain_graph(k));
        if h != 0.0 {
            failures.push(format!("chain({k}): H = {h}"));
        }
    }
    for k in 1..=32 {
        let h = trajectory_entropy(&oracle::parallel_graph(k));
        if (h - (k as f64).ln()).abs() > 1e-12 {
            failures.push(format!("parallel({k}): H = {h}"));
        }
    }
    CheckResult::new(
        "entropy oracle",
        &failures,
        format!("{} graphs, max |DP - enum| = {max_err:.2e}; chains 1..12, parallel 1..32", graphs.len()),
    )
}

pub fn check_big_count() -> CheckResult {
    let (layers, width, variants) = (40u32, 4u32, 3u32);
    let g = oracle::layered_graph(layers as usize, width as usize, variants as usize);
    let esds = count_esds(&g);
    let paths = count_paths(&g);
    let expected_esds = BigUint::from(width * variants).pow(layers);
    let expected_paths = BigUint::from(width).pow(layers);
    let threshold = BigUint::from(10u32).pow(38);
    let mut failures = Vec::new();
    if esds.0 != expected_esds {
        failures.push(format!("esds {} != (4*3)^40", esds.0));
    }
    if paths.0 != expected_paths {
        failures.push(format!("paths {} != 4^40", paths.0));
    }
    if esds.0 <= threshold {
        failures.push("count does not exceed 1e38".into());
    }
    CheckResult::new(
        "big-count capability",
        &failures,
        format!("40 layers x 4 nodes x 3 variants: {} ESDs = 12^40", esds.to_scientific(2)),
    )
}

pub fn check_sampling_fidelity(samples: usize, seed: u64) -> CheckResult {
    let g = oracle::five_path_graph();
    let paths = oracle::enumerate_paths(&g, 100).expect("five paths");
    let mut freq: HashMap<Vec<String>, usize> = HashMap::new();
    let mut failures = Vec::new();
    for i in 0..samples {
        let t = sample_trajectory(&g, derive_seed(seed, "fidelity", i as u64));
        *freq.entry(t.node_ids).or_default() += 1;
    }
    let mut worst: f64 = 0.0;
    for p in &paths {
        let ids: Vec<String> = p.iter().map(|&v| g.node(v).id.clone()).collect();
        let prob = oracle::path_probability(&g, p);
        let observed = *freq.get(&ids).unwrap_or(&0) as f64 / samples as f64;
        let band = three_sigma(prob, samples);
        worst = worst.max((observed - prob).abs() / band);
        if (observed - prob).abs() > band {
            failures.push(format!("{ids:?}: {observed:.5} vs p = {prob:.5} (band {band:.5})"));
        }
    }
    if freq.len() != paths.len() {
        failures.push(format!("{} distinct trajectories, expected {}", freq.len(), paths.len()));
    }
    CheckResult::new(
        "sampling fidelity",
        &failures,
        format!("{samples} samples over 5 trajectories, worst deviation {worst:.2} of the 3-sigma band"),
    )
}

pub fn check_corpus_edges(count: usize, seed: u64) -> CheckResult {
    let mut failures = Vec::new();
    for i in 0..count {
        let corpus = oracle::random_corpus(derive_seed(seed, "corpus", i as u64), 12, 9);
        let g = match crate::graph::build_graph(&corpus) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("corpus {i}: {e}"));
                continue;
            }
        };
        let built: std::collections::BTreeSet<(String, String)> =
            g.edges().iter().map(|e| (e.from.clone(), e.to.clone())).collect();
        if built != oracle::consecutive_pairs(&corpus) {
            failures.push(format!("corpus {i}: edge set differs from consecutive pairs"));
        }
    }
    CheckResult::new("graph construction", &failures, format!("{count} random corpora"))
}

pub fn check_distractors(target: usize, seed: u64) -> CheckResult {
    let g = oracle::random_dag(derive_seed(seed, "distractor-graph", 0), 18, 0.25, 2);
    let policy = DistractorPolicy::default();
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut i = 0u64;
    while checked < target && i < 100 * target as u64 {
        let t = sample_trajectory(&g, derive_seed(seed, "distractor-traj", i));
        i += 1;
        if t.len() < 2 {
            continue;
        }
        let n = 2 + (i as usize % (t.len() - 1));
        let s = split_at(&t, n).expect("n in range");
        let Ok(d) = sample_distractor(&g, &s, &policy.with_seed(derive_seed(seed, "pick", i))) else {
            continue;
        };
        checked += 1;
        let v = oracle::distractor_violations(&g, s.context_nodes(), &s.correct_node, &d.node_id, 2);
        if !v.is_empty() {
            failures.push(format!("{} after {:?}: {v:?}", d.node_id, s.context_nodes()));
        }
    }
    if checked < target {
        failures.push(format!("only {checked} distractors could be drawn"));
    }
    CheckResult::new(
        "distractor predicates",
        &failures,
        format!("{checked} distractors on a {}-node DAG", g.node_count()),
    )
}

pub fn check_conjugate_walks(target: usize, seed: u64) -> CheckResult {
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut i = 0u64;
    while checked < target && i < 100 * target as u64 {
        let g = oracle::random_dag(derive_seed(seed, "conj-graph", i / 20), 12, 0.3, 2);
        let real: Vec<usize> = g
            .real_nodes()
            .filter(|&x| g.predecessors(x).iter().any(|&p| p != g.start()))
            .collect();
        i += 1;
        if real.is_empty() {
            continue;
        }
        let x = real[(i as usize) % real.len()];
        let id = &g.node(x).id;
        match find_conjugate_trajectory(&g, id, derive_seed(seed, "conj", i)) {
            Ok(t) => {
                checked += 1;
                let last = t.node_ids.last().and_then(|l| g.index_of(l));
                if !oracle::is_valid_walk(&g, &t.node_ids, false) || !last.is_some_and(|l| g.has_edge(l, x)) {
                    failures.push(format!("{}: {:?} does not lead into {id}", g.scenario_name(), t.node_ids));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", g.scenario_name())),
        }
    }
    CheckResult::new("conjugate walks", &failures, format!("{checked} conjugate trajectories"))
}

/// The synthetic scenario used for dataset-level checks (mean length ≈ 11).
pub fn synthetic_scenario(seed: u64) -> CompactGraph {
    oracle::skip_layered_graph(seed, 12, 3, 2, 0.12)
}

/// Soundness of every generated query, plus letter balance.
pub fn check_query_soundness(graph: &CompactGraph, queries: &[CommonsenseQuery]) -> CheckResult {
    let mut failures = Vec::new();
    let mut gold_a = 0usize;
    for q in queries {
        let traj = sample_trajectory(graph, q.seed_trace.trajectory);
        let gold = q.gold_node().unwrap_or_default();
        if traj.node_ids.get(q.n - 1).map(String::as_str) != Some(gold) {
            failures.push(format!("{}: gold is not the true next step", q.query_id));
        }
        if traj.node_ids[..q.n - 1] != q.context_nodes[..] || traj.texts[..q.n - 1] != q.context_steps[..] {
            failures.push(format!("{}: context is not the trajectory prefix", q.query_id));
        }
        let end = q.context_nodes.last().and_then(|c| graph.index_of(c));
        let wrong = q.wrong_option().and_then(|o| graph.index_of(&o.node));
        match (end, wrong) {
            (Some(e), Some(w)) if !graph.has_edge(e, w) => {}
            _ => failures.push(format!("{}: distractor is a valid successor", q.query_id)),
        }
        if q.options.iter().any(|o| q.context_steps.contains(&o.text)) {
            failures.push(format!("{}: option text leaks into context", q.query_id));
        }
        if q.options.len() != 2 || q.options[0].text == q.options[1].text {
            failures.push(format!("{}: options not two distinct texts", q.query_id));
        }
        gold_a += usize::from(q.gold_letter == "A");
    }
    let n = queries.len();
    let share = gold_a as f64 / n.max(1) as f64;
    let band = three_sigma(0.5, n.max(1));
    if (share - 0.5).abs() > band {
        failures.push(format!("gold on A {share:.4}, outside 0.5 ± {band:.4}"));
    }
    CheckResult::new(
        "query soundness",
        &failures,
        format!("{n} queries, gold on A {share:.4} (0.5 ± {band:.4})"),
    )
}

/// Build pairs for `queries` and re-check the conjugate invariants.
pub fn check_conjugate_pairs(
    graph: &CompactGraph,
    queries: &[CommonsenseQuery],
    template: &PromptTemplate,
    seed: u64,
) -> (CheckResult, usize) {
    let mut failures = Vec::new();
    let mut pairs = 0;
    let mut no_sound = 0;
    for q in queries {
        let pair = match make_conjugate_pair(q, graph, template, derive_seed(seed, &q.query_id, 0)) {
            Ok(p) => p,
            Err(crate::querygen::QueryError::NoSoundConjugate(_)) => {
                no_sound += 1;
                continue;
            }
            Err(e) => {
                failures.push(format!("{}: {e}", q.query_id));
                continue;
            }
        };
        pairs += 1;
        let (c, k) = (&pair.clean, &pair.conjugate);
        let block = |x: &CommonsenseQuery| x.prompt.find("\nA. ").map(|i| x.prompt[i..].to_string());
        if c.options != k.options || block(c).is_none() || block(c) != block(k) || c.template_id != k.template_id {
            failures.push(format!("{}: option blocks differ", k.query_id));
        }
        if c.gold_letter == k.gold_letter {
            failures.push(format!("{}: gold letters coincide", k.query_id));
        }
        let distractor = c.wrong_option().map(|o| o.node.clone()).unwrap_or_default();
        let last = k.context_nodes.last().and_then(|l| graph.index_of(l));
        let dx = graph.index_of(&distractor);
        let ends_before = matches!((last, dx), (Some(l), Some(x)) if graph.has_edge(l, x));
        if !oracle::is_valid_walk(graph, &k.context_nodes, false) || !ends_before {
            failures.push(format!("{}: context is not a prefix ending before the distractor", k.query_id));
        }
        if k.gold_node() != Some(distractor.as_str()) {
            failures.push(format!("{}: conjugate gold is not the clean distractor", k.query_id));
        }
    }
    (
        CheckResult::new(
            "conjugate soundness",
            &failures,
            format!("{pairs} pairs ({no_sound} clean queries without a sound conjugate)"),
        ),
        pairs,
    )
}

pub fn check_replay(graph: &CompactGraph, config: &ExportConfig, queries: &[CommonsenseQuery], stride: usize) -> CheckResult {
    let mut failures = Vec::new();
    let mut checked = 0;
    for q in queries.iter().step_by(stride.max(1)) {
        checked += 1;
        match replay_query(graph, config, q.seed_trace.traj_index as usize, q.n) {
            Ok(Some(r)) if r == *q => {}
            Ok(_) => failures.push(format!("{}: replay differs", q.query_id)),
            Err(e) => failures.push(format!("{}: {e}", q.query_id)),
        }
    }
    CheckResult::new("replay", &failures, format!("{checked} records replayed from their seed trace"))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Patching algebra on a seeded model over a clean/conjugate prompt pair.
pub fn check_patching(clean_prompt: &str, base_prompt: &str, subsets: usize, seed: u64) -> CheckResult {
    let tok = Tokenizer::from_texts([clean_prompt, base_prompt]);
    let config = ModelConfig {
        d_model: 32,
        n_layers: 8,
        n_heads: 4,
        d_mlp: 128,
        final_norm: false,
        init_seed: seed,
    };
    let model = ToyResidualModel::random(config, tok).expect("valid config");
    let readout = Readout::from_letters(&model.tokenizer, "A", "B").expect("letters in vocabulary");
    let clean = model.forward_text(clean_prompt).expect("clean forward");
    let base = model.forward_text(base_prompt).expect("base forward");
    let n_layers = model.n_layers();
    let mut failures = Vec::new();

    for mode in [PatchMode::Direct, PatchMode::Causal] {
        for (name, cache) in [("clean", &clean), ("base", &base)] {
            let curve = sweep_caches(&model, cache, cache, mode, PositionPolicy::Last, readout, name).expect("sweep");
            if curve.layers.len() != n_layers || !curve.is_zero() {
                failures.push(format!("{mode} identity sweep on {name} is not all-zero"));
            }
        }
    }
    let full = patched_logits_direct(&model, &clean, &base, &PatchSet::all(n_layers)).expect("full patch");
    if !full.iter().zip(&clean.logits).all(|(a, b)| rel_close(*a, *b, 1e-6)) {
        failures.push("full clean patch does not reproduce clean logits".into());
    }
    let recon = clean
        .final_residual
        .iter()
        .enumerate()
        .all(|(p, r)| {
            let mut sum = clean.embedding[p].clone();
            for l in 0..n_layers {
                for (s, c) in sum.iter_mut().zip(&clean.contributions[l][p]) {
                    *s += c;
                }
            }
            sum.iter().zip(r).all(|(a, b)| rel_close(*a, *b, 1e-6))
        });
    if !recon {
        failures.push("cache reconstruction fails".into());
    }

    let singles: Vec<f64> = (0..n_layers)
        .map(|l| {
            direct_effect(&model, &clean, &base, l, PatchMode::Direct, PositionPolicy::Last, readout)
                .expect("direct effect")
                .de_logit
        })
        .collect();
    let base_diff = readout.logit_diff(&base.logits);
    let mut rng = rng_from_seed(derive_seed(seed, "subsets", 0));
    let mut worst: f64 = 0.0;
    for _ in 0..subsets {
        let layers: Vec<usize> = (0..n_layers).filter(|_| rng.random_bool(0.5)).collect();
        let set = PatchSet { embedding: false, layers };
        let joint = readout.logit_diff(&patched_logits_direct(&model, &clean, &base, &set).expect("set patch")) - base_diff;
        let summed: f64 = set.layers.iter().map(|&l| singles[l]).sum();
        worst = worst.max((joint - summed).abs() / joint.abs().max(summed.abs()).max(1.0));
        if !rel_close(joint, summed, 1e-6) {
            failures.push(format!("subset {:?}: joint {joint} vs summed {summed}", set.layers));
        }
    }
    if singles.iter().all(|d| *d == 0.0) {
        failures.push("clean vs base curve is degenerate (all zero)".into());
    }
    CheckResult::new(
        "patching algebra",
        &failures,
        format!("L = {n_layers}, {subsets} random layer subsets, worst additivity error {worst:.1e}"),
    )
}

/// A seeded uniform responder must score 0.5 within 3σ.
pub fn check_scoring_floor(queries: &[CommonsenseQuery], seed: u64) -> CheckResult {
    let mut rng = rng_from_seed(seed);
    let responses: Vec<EvalRecord> = queries
        .iter()
        .map(|q| EvalRecord {
            query_id: q.query_id.clone(),
            model_id: "uniform-random".into(),
            shots: 0,
            chosen_letter: Some(if rng.random_bool(0.5) { "A" } else { "B" }.into()),
            option_logits: None,
        })
        .collect();
    let mut failures = Vec::new();
    let n = queries.len();
    let band = three_sigma(0.5, n.max(1));
    let rate = match score_records(queries, &responses) {
        Ok(r) => r.overall().rate().unwrap_or(f64::NAN),
        Err(e) => {
            failures.push(e.to_string());
            f64::NAN
        }
    };
    if !((rate - 0.5).abs() <= band) {
        failures.push(format!("rate {rate:.4} outside 0.5 ± {band:.4}"));
    }
    CheckResult::new("scoring floor", &failures, format!("{n} queries, rate {rate:.4} (0.5 ± {band:.4})"))
}

/// Quick versions of every suite, for `coremech selftest`.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let dags = oracle_dags(100, seed);
    let graph = synthetic_scenario(seed);
    let config = ExportConfig::new(300, seed);
    let data = generate_dataset(&graph, &config).expect("synthetic dataset");
    let (conj, _) = check_conjugate_pairs(&graph, &data.queries, &config.template, seed);
    let pair = make_conjugate_pair(&data.queries[0], &graph, &config.template, seed);
    let patch = match pair {
        Ok(p) => check_patching(&p.clean.prompt, &p.conjugate.prompt, 50, seed),
        Err(e) => CheckResult::new("patching algebra", &[e.to_string()], String::new()),
    };
    vec![
        check_path_counts(&dags),
        check_entropy(&dags),
        check_big_count(),
        check_sampling_fidelity(20_000, seed),
        check_corpus_edges(50, seed),
        check_distractors(1_000, seed),
        check_conjugate_walks(1_000, seed),
        check_query_soundness(&graph, &data.queries),
        conj,
        check_replay(&graph, &config, &data.queries, 7),
        patch,
        check_scoring_floor(&data.queries, seed),
    ]
}
