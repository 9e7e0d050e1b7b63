use coremech::oracle;
use coremech::querygen::{render_query, PromptTemplate};
use coremech::sampler::{sample_distractor, sample_trajectory, split_at, DistractorPolicy};
use coremech::seed::derive_seed;
use coremech::selftest::{
    check_conjugate_walks, check_corpus_edges, check_distractors, check_entropy, check_path_counts, oracle_dags,
    three_sigma,
};

#[test]
fn path_counts_and_entropy_on_random_dags() {
    let dags = oracle_dags(100, 2024);
    let r = check_path_counts(&dags);
    assert!(r.passed, "{}", r.line());
    let r = check_entropy(&dags);
    assert!(r.passed, "{}", r.line());
}

#[test]
fn edges_match_consecutive_pairs() {
    let r = check_corpus_edges(50, 17);
    assert!(r.passed, "{}", r.line());
}

#[test]
fn distractors_and_conjugates_recheck() {
    let r = check_distractors(1_000, 5);
    assert!(r.passed, "{}", r.line());
    let r = check_conjugate_walks(1_000, 5);
    assert!(r.passed, "{}", r.line());
}

#[test]
fn diamond_trajectories_are_even() {
    let g = oracle::diamond_graph([1, 1, 1, 1]);
    let n = 100_000;
    let via_b = (0..n)
        .filter(|&i| sample_trajectory(&g, derive_seed(99, "diamond", i)).node_ids[1] == "b")
        .count();
    let share = via_b as f64 / n as f64;
    assert!((share - 0.5).abs() <= three_sigma(0.5, n as usize), "{share}");
}

#[test]
fn gold_letter_is_balanced_over_renders() {
    let g = oracle::diamond_graph([2, 2, 2, 2]);
    let t = sample_trajectory(&g, 0);
    let s = split_at(&t, 2).unwrap();
    let template = PromptTemplate::default();
    let n = 10_000;
    let mut on_a = 0;
    for i in 0..n {
        let d = sample_distractor(&g, &s, &DistractorPolicy::default().with_seed(i)).unwrap();
        let q = render_query(&s, &d, &template, derive_seed(7, "shuffle", i), format!("q{i}")).unwrap();
        assert_eq!(q.gold_node(), Some(s.correct_node.as_str()));
        on_a += usize::from(q.gold_letter == "A");
    }
    let share = on_a as f64 / n as f64;
    assert!((share - 0.5).abs() <= three_sigma(0.5, n as usize), "{share}");
}
