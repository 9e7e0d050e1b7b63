use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use coremech::corpus::load_corpus_with_diagnostics;
use coremech::evalharness::{self, SuccessReport};
use coremech::graph::{build_graph_with, graph_stats, write_stats_csv, BuildOptions, CompactGraph};
use coremech::patchlab::{
    load_model, mean_curve, random_corruption, save_model, sweep_caches, DirectEffectCurve, ModelConfig, Readout,
    Tokenizer, ToyResidualModel,
};
use coremech::querygen::{
    export_dataset, make_conjugate_pair, pair_records, read_dataset, write_jsonl, CommonsenseQuery, ExportConfig,
    PromptTemplate, QueryError,
};
use coremech::seed::derive_seed;
use coremech::selftest;

use crate::failure::{Failure, Result};
use crate::{
    Baseline, BuildGraphArgs, GenConjugatesArgs, GenQueriesArgs, InitModelArgs, PatchSweepArgs, ScoreArgs,
    SelftestArgs, StatsArgs,
};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn to_json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_graph(path: &Path) -> Result<CompactGraph> {
    Ok(CompactGraph::from_json(&read_text(path)?)?)
}

pub fn build_graph(args: BuildGraphArgs) -> Result<()> {
    let (corpus, diagnostics) = load_corpus_with_diagnostics(&args.input)?;
    for d in &diagnostics {
        eprintln!("{d}");
    }
    let outcome = build_graph_with(
        &corpus,
        BuildOptions {
            break_cycles: args.break_cycles,
        },
    )?;
    for e in &outcome.dropped_edges {
        warn!("dropped cycle edge {} -> {} (support {})", e.from, e.to, e.support);
    }
    for n in &outcome.pruned_nodes {
        warn!("pruned node {n}");
    }
    let mut json = outcome.graph.to_json();
    json.push('\n');
    write_output(args.out.as_deref(), json.as_bytes())
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &args.input {
        let g = read_graph(path)?;
        if args.scenario.as_deref().is_some_and(|s| s != g.scenario_name()) {
            continue;
        }
        reports.push(graph_stats(&g));
    }
    if reports.is_empty() {
        return Err(Failure::Validation("no graph matched the scenario filter".into()));
    }
    let mut buf = Vec::new();
    write_stats_csv(&mut buf, &reports, args.bits)?;
    write_output(args.out.as_deref(), &buf)
}

pub fn gen_queries(args: GenQueriesArgs) -> Result<()> {
    let graph = read_graph(&args.input)?;
    let mut config = ExportConfig::new(args.traj, args.seed);
    config.dedup = args.dedup;
    config.policy.min_graph_distance = args.min_distance;
    let manifest = export_dataset(&graph, &config, &args.out)?;
    info!(
        "{} queries from {} trajectories ({} raw, {} removed by dedup)",
        manifest.emitted, manifest.n_trajectories, manifest.raw_queries, manifest.dedup_removed
    );
    write_output(None, &to_json_line(&manifest))
}

#[derive(Serialize)]
struct ConjugateSummary {
    pairs: usize,
    without_sound_conjugate: usize,
    unreachable: usize,
}

pub fn gen_conjugates(args: GenConjugatesArgs) -> Result<()> {
    let graph = read_graph(&args.graph)?;
    let queries = read_dataset(&args.input)?;
    let template = PromptTemplate::default();
    let limit = args.limit.unwrap_or(usize::MAX);
    let mut records = Vec::new();
    let mut summary = ConjugateSummary {
        pairs: 0,
        without_sound_conjugate: 0,
        unreachable: 0,
    };
    for q in queries.iter().filter(|q| q.conjugate_of.is_none()) {
        if summary.pairs >= limit {
            break;
        }
        match make_conjugate_pair(q, &graph, &template, derive_seed(args.seed, &q.query_id, 0)) {
            Ok(pair) => {
                records.push(pair.clean);
                records.push(pair.conjugate);
                summary.pairs += 1;
            }
            Err(QueryError::NoSoundConjugate(id)) => {
                warn!("{id}: no sound conjugate");
                summary.without_sound_conjugate += 1;
            }
            Err(QueryError::Sampler(coremech::SamplerError::Unreachable(node))) => {
                warn!("{}: distractor {node} unreachable", q.query_id);
                summary.unreachable += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_jsonl(&args.out, &records)?;
    write_output(None, &to_json_line(&summary))
}

fn filtered(report: &SuccessReport, scenario: Option<&str>, shots: Option<usize>) -> SuccessReport {
    SuccessReport {
        groups: report
            .groups
            .iter()
            .filter(|(k, _)| scenario.is_none_or(|s| k.scenario == s) && shots.is_none_or(|n| k.shots == n))
            .map(|(k, c)| (k.clone(), *c))
            .collect(),
        ..report.clone()
    }
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let report = evalharness::score(&args.input, &args.responses)?;
    let report = filtered(&report, args.scenario.as_deref(), args.shots);
    if let Some(path) = &args.csv {
        let file = fs::File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        report.write_csv(file)?;
    }
    write_output(args.out.as_deref(), &to_json_line(&report.to_json()))
}

#[derive(Serialize, serde::Deserialize)]
struct CurveFile {
    curves: Vec<DirectEffectCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<DirectEffectCurve>,
}

fn read_curves(path: &Path) -> Result<Vec<DirectEffectCurve>> {
    let text = read_text(path)?;
    let bad = |e: serde_json::Error| Failure::Validation(format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    if value.is_array() {
        return serde_json::from_value(value).map_err(bad);
    }
    if value.get("curves").is_some() {
        return Ok(serde_json::from_value::<CurveFile>(value).map_err(bad)?.curves);
    }
    Ok(vec![serde_json::from_value(value).map_err(bad)?])
}

fn prompts_of(records: &[CommonsenseQuery]) -> impl Iterator<Item = &str> {
    records.iter().map(|q| q.prompt.as_str())
}

pub fn patch_sweep(args: PatchSweepArgs) -> Result<()> {
    if !args.merge.is_empty() {
        let mut curves = Vec::new();
        for p in &args.merge {
            curves.extend(read_curves(p)?);
        }
        let mean = mean_curve(&curves)?;
        let file = CurveFile {
            curves,
            mean: Some(mean),
        };
        return write_output(args.out.as_deref(), &to_json_line(&file));
    }

    let input = args.input.as_deref().expect("clap requires --in without --merge");
    let records = read_dataset(input)?;
    let pairs = pair_records(&records);
    if pairs.is_empty() {
        return Err(Failure::Validation(format!("{}: no conjugate pairs", input.display())));
    }
    let mut model = match &args.model {
        Some(path) => load_model(path)?,
        None => {
            let config = ModelConfig {
                final_norm: args.final_norm,
                init_seed: args.seed,
                ..ModelConfig::default()
            };
            ToyResidualModel::random(config, Tokenizer::from_texts(prompts_of(&records)))?
        }
    };
    if args.final_norm {
        model.config.final_norm = true;
    }

    let mut curves = Vec::new();
    let mut skipped = 0;
    for pair in pairs.iter().take(args.limit.unwrap_or(usize::MAX)) {
        let (clean_q, conj_q) = (&pair.clean, &pair.conjugate);
        let readout = Readout::from_letters(&model.tokenizer, &clean_q.gold_letter, &conj_q.gold_letter)?;
        let clean = model.forward_text(&clean_q.prompt)?;
        if args.only_correct && readout.logit_diff(&clean.logits) <= 0.0 {
            skipped += 1;
            continue;
        }
        let (base_prompt, pair_id) = match args.baseline {
            Baseline::Conjugate => (conj_q.prompt.clone(), conj_q.query_id.clone()),
            Baseline::Random => {
                let seed = derive_seed(args.seed, &clean_q.query_id, 1);
                let c = random_corruption(&model.tokenizer, &clean_q.prompt, clean_q, seed)?;
                (c.text, format!("{}-random", clean_q.query_id))
            }
        };
        let base = model.forward_text(&base_prompt)?;
        curves.push(sweep_caches(&model, &clean, &base, args.mode, args.positions, readout, &pair_id)?);
    }
    if skipped > 0 {
        info!("{skipped} pairs skipped: clean query answered incorrectly");
    }
    if curves.is_empty() {
        return Err(Failure::Validation("every pair was filtered out".into()));
    }
    for c in &curves {
        if c.layers.len() != model.n_layers() || c.layers.iter().any(|e| !e.de_logit.is_finite() || !e.de_prob.is_finite()) {
            return Err(Failure::Invariant(format!("curve {} is malformed", c.pair_id)));
        }
    }
    let mean = mean_curve(&curves)?;
    let file = CurveFile {
        curves,
        mean: Some(mean),
    };
    write_output(args.out.as_deref(), &to_json_line(&file))
}

pub fn init_model(args: InitModelArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &args.input {
        records.extend(read_dataset(p)?);
    }
    let config = ModelConfig {
        d_model: args.d_model,
        n_layers: args.layers,
        n_heads: args.heads,
        d_mlp: 4 * args.d_model,
        final_norm: args.final_norm,
        init_seed: args.seed,
    };
    let model = ToyResidualModel::random(config, Tokenizer::from_texts(prompts_of(&records)))?;
    save_model(&model, &args.out)?;
    info!("wrote {} ({} tokens)", args.out.display(), model.vocab_size());
    Ok(())
}

pub fn selftest(args: SelftestArgs) -> Result<()> {
    let results = selftest::run_all(args.seed);
    let mut out = std::io::stdout().lock();
    for r in &results {
        writeln!(out, "{}", r.line())?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("selftest failed: {}", failed.join(", "))))
    }
}
