//! Fixtures shared by the benchmarks.

use coremech::patchlab::{ModelConfig, Tokenizer, ToyResidualModel};
use coremech::querygen::{generate_dataset, ExportConfig};
use coremech::{oracle, selftest, CompactGraph};

/// Layered graph with `layers` layers of width 4, three variants per node.
pub fn wide_graph(layers: usize) -> CompactGraph {
    oracle::layered_graph(layers, 4, 3)
}

pub fn scenario_graph() -> CompactGraph {
    selftest::synthetic_scenario(0)
}

/// Model plus one prompt drawn from a small generated dataset.
pub fn model_and_prompt(n_layers: usize) -> (ToyResidualModel, String) {
    let graph = scenario_graph();
    let data = generate_dataset(&graph, &ExportConfig::new(20, 0)).expect("dataset");
    let tokenizer = Tokenizer::from_texts(data.queries.iter().map(|q| q.prompt.as_str()));
    let config = ModelConfig {
        n_layers,
        ..ModelConfig::default()
    };
    let model = ToyResidualModel::random(config, tokenizer).expect("model");
    (model, data.queries[0].prompt.clone())
}
