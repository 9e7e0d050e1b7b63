use coremech::corpus::{corpus_to_json, parse_corpus, validate_corpus, Severity};
use coremech::graph::{build_graph, count_esds, count_paths, trajectory_entropy, CompactGraph, Realization};
use coremech::oracle;
use coremech::sampler::sample_trajectory;
use coremech::seed::derive_seed;
use proptest::prelude::*;

fn graph_params() -> impl Strategy<Value = (u64, usize, f64, usize)> {
    (any::<u64>(), 1usize..=10, 0.05f64..0.9, 1usize..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trip(seed in any::<u64>(), n_esds in 1usize..=100, n_clusters in 1usize..=12) {
        let corpus = oracle::random_corpus(seed, n_esds, n_clusters);
        let text = corpus_to_json(&corpus);
        let back = parse_corpus(&text).unwrap();
        prop_assert_eq!(&back, &corpus);
        prop_assert_eq!(corpus_to_json(&back), text);
    }

    #[test]
    fn validation_agrees_with_loading(seed in any::<u64>(), drop_step in any::<bool>(), rename in any::<bool>()) {
        let mut corpus = oracle::random_corpus(seed, 6, 5);
        if drop_step {
            corpus.esds[0].steps.push(coremech::EventStep::plain("unaligned extra step"));
        }
        if rename {
            let id = corpus.esds[1 % corpus.esds.len()].id.clone();
            let clusters = corpus.alignment.remove(&id).unwrap();
            corpus.alignment.insert(format!("{id}-renamed"), clusters);
        }
        let has_error = validate_corpus(&corpus).iter().any(|d| d.severity == Severity::Error);
        prop_assert_eq!(has_error, parse_corpus(&corpus_to_json(&corpus)).is_err());
        prop_assert_eq!(has_error, drop_step || rename);
    }

    #[test]
    fn entropy_is_bounded_by_log_paths((seed, n, d, v) in graph_params()) {
        let g = oracle::random_dag(seed, n, d, v);
        let h = trajectory_entropy(&g);
        let paths = count_paths(&g).to_f64();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= paths.ln() + 1e-9, "H = {} > ln {}", h, paths);
    }

    #[test]
    fn esds_dominate_paths((seed, n, d, v) in graph_params()) {
        let g = oracle::random_dag(seed, n, d, v);
        prop_assert!(count_esds(&g).0 >= count_paths(&g).0);
    }

    #[test]
    fn adding_a_variant_never_decreases_esds((seed, n, d, v) in graph_params(), pick in any::<prop::sample::Index>()) {
        let g = oracle::random_dag(seed, n, d, v);
        let before = count_esds(&g);
        let mut nodes = g.nodes().to_vec();
        let real: Vec<usize> = g.real_nodes().collect();
        let i = real[pick.index(real.len())];
        nodes[i].realizations.push(Realization {
            esd_id: "extra".into(),
            step_index: 0,
            text: "one more phrasing".into(),
            substep_chain: None,
        });
        let g2 = CompactGraph::from_parts(g.scenario_name(), nodes, g.edges().to_vec()).unwrap();
        prop_assert!(count_esds(&g2).0 >= before.0);
    }

    #[test]
    fn graph_json_round_trip((seed, n, d, v) in graph_params()) {
        let g = oracle::random_dag(seed, n, d, v);
        let back = CompactGraph::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), g.to_json());
    }

    #[test]
    fn build_is_deterministic(seed in any::<u64>()) {
        let corpus = oracle::random_corpus(seed, 15, 8);
        let a = build_graph(&corpus).unwrap();
        let b = build_graph(&corpus).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn sampled_walks_are_valid((seed, n, d, v) in graph_params(), walk_seed in any::<u64>()) {
        let g = oracle::random_dag(seed, n, d, v);
        let t = sample_trajectory(&g, walk_seed);
        prop_assert!(oracle::is_valid_walk(&g, &t.node_ids, true));
        let idx: Vec<usize> = t.node_ids.iter().map(|id| g.index_of(id).unwrap()).collect();
        let p = oracle::path_probability(&g, &idx);
        prop_assert!((t.log_prob - p.ln()).abs() < 1e-9);
        for (i, id) in t.node_ids.iter().enumerate() {
            let node = g.node(g.index_of(id).unwrap());
            prop_assert_eq!(Some(t.texts[i].clone()), node.variant_text(t.realization_choice[i]));
        }
        prop_assert_eq!(&sample_trajectory(&g, walk_seed), &t);
    }

    #[test]
    fn seed_derivation_separates_labels(parent in any::<u64>(), i in any::<u64>()) {
        prop_assert_ne!(derive_seed(parent, "trajectory", i), derive_seed(parent, "distractor", i));
        prop_assert_eq!(derive_seed(parent, "shuffle", i), derive_seed(parent, "shuffle", i));
    }
}
