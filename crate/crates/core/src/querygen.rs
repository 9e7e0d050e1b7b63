//! Commonsense MCQA queries: prompt rendering, conjugate pairs, n-shot
//! assembly and frozen dataset export.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::CompactGraph;
use crate::sampler::{
    complete_trajectory, find_conjugate_trajectory, sample_distractor, sample_trajectory,
    split_at, Distractor, DistractorPolicy, SamplerError, SplitSample, Trajectory,
};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("template error: {0}")]
    Template(String),
    #[error("options share the text `{0}`")]
    DuplicateOptionText(String),
    #[error("gold text `{0}` appears in the context")]
    AnswerLeak(String),
    #[error("exemplar `{0}` is the target query")]
    Leakage(String),
    #[error("expected {expected} exemplars, got {got}")]
    ShotMismatch { expected: usize, got: usize },
    #[error("query uses template `{query}` but `{given}` was supplied")]
    TemplateMismatch { query: String, given: String },
    #[error("malformed query `{0}`: {1}")]
    Malformed(String, String),
    #[error("no sound conjugate context found for `{0}`")]
    NoSoundConjugate(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = QueryError> = std::result::Result<T, E>;

pub const LETTERS: &[&str] = &[
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M", "N", "O", "P", "Q", "R", "S",
    "T", "U", "V", "W", "X", "Y", "Z",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    /// Must contain `{activity}` and `{numbered_steps}` exactly once.
    pub question_format: String,
    /// Must contain `{letter}` and `{text}` exactly once.
    pub option_format: String,
    pub answer_cue: String,
    /// Must contain `{letter}` exactly once; the token a model should emit.
    pub answer_token_format: String,
    pub option_count: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            id: "mcqa-v1".into(),
            question_format: "Question: For the task {activity}, if the following steps are already completed in order {numbered_steps}, what should be the next suitable step for completing the task? ".into(),
            option_format: "{letter}. {text}".into(),
            answer_cue: "Answer:".into(),
            answer_token_format: " {letter}".into(),
            option_count: 2,
        }
    }
}

fn count(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

/// `1. first, 2. second, ...`
pub fn numbered_steps(steps: &[String]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join(", ")
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (&self.question_format, "{activity}"),
            (&self.question_format, "{numbered_steps}"),
            (&self.option_format, "{letter}"),
            (&self.option_format, "{text}"),
            (&self.answer_token_format, "{letter}"),
        ];
        for (field, placeholder) in checks {
            let c = count(field, placeholder);
            if c != 1 {
                return Err(QueryError::Template(format!(
                    "placeholder {placeholder} must appear exactly once in `{field}` (found {c})"
                )));
            }
        }
        if self.option_count < 2 || self.option_count > LETTERS.len() {
            return Err(QueryError::Template(format!(
                "option_count must be in 2..={}",
                LETTERS.len()
            )));
        }
        Ok(())
    }

    pub fn question(&self, activity: &str, context: &[String]) -> String {
        self.question_format
            .replacen("{activity}", activity, 1)
            .replacen("{numbered_steps}", &numbered_steps(context), 1)
    }

    pub fn option_block(&self, options: &[QueryOption]) -> String {
        options
            .iter()
            .map(|o| {
                format!(
                    "\n{}",
                    self.option_format
                        .replacen("{letter}", &o.letter, 1)
                        .replacen("{text}", &o.text, 1)
                )
            })
            .collect()
    }

    /// Full prompt, ending with the answer cue.
    pub fn render(&self, activity: &str, context: &[String], options: &[QueryOption]) -> String {
        format!(
            "{}{}\n{}",
            self.question(activity, context),
            self.option_block(options),
            self.answer_cue
        )
    }

    pub fn answer_token(&self, letter: &str) -> String {
        self.answer_token_format.replacen("{letter}", letter, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOption {
    pub letter: String,
    pub text: String,
    pub node: String,
}

/// Seeds sufficient to regenerate a record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTrace {
    pub root: u64,
    pub traj_index: u64,
    pub trajectory: u64,
    pub distractor: u64,
    pub shuffle: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conjugate: Option<u64>,
}

/// One dataset record (a line of the dataset JSONL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonsenseQuery {
    #[serde(rename = "id")]
    pub query_id: String,
    #[serde(rename = "scenario")]
    pub scenario_name: String,
    pub prompt: String,
    pub options: Vec<QueryOption>,
    #[serde(rename = "gold")]
    pub gold_letter: String,
    pub n: usize,
    pub m: usize,
    pub completion_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conjugate_of: Option<String>,
    #[serde(rename = "template")]
    pub template_id: String,
    #[serde(rename = "seeds")]
    pub seed_trace: SeedTrace,
    #[serde(rename = "context")]
    pub context_steps: Vec<String>,
    pub context_nodes: Vec<String>,
}

impl CommonsenseQuery {
    pub fn gold_option(&self) -> Option<&QueryOption> {
        self.options.iter().find(|o| o.letter == self.gold_letter)
    }

    pub fn gold_node(&self) -> Option<&str> {
        self.gold_option().map(|o| o.node.as_str())
    }

    /// The first option that is not gold.
    pub fn wrong_option(&self) -> Option<&QueryOption> {
        self.options.iter().find(|o| o.letter != self.gold_letter)
    }
}

pub fn completion_pct(n: usize, m: usize) -> f64 {
    100.0 * n as f64 / m as f64
}

fn letters_for(options: &mut [QueryOption]) {
    for (o, l) in options.iter_mut().zip(LETTERS) {
        o.letter = l.to_string();
    }
}

/// Render the query for a split sample. Options are assigned to letters by a
/// seeded uniform shuffle.
pub fn render_query(
    sample: &SplitSample,
    distractor: &Distractor,
    template: &PromptTemplate,
    shuffle_seed: u64,
    query_id: impl Into<String>,
) -> Result<CommonsenseQuery> {
    template.validate()?;
    let gold_text = sample.correct_text().to_string();
    if distractor.text == gold_text {
        return Err(QueryError::DuplicateOptionText(gold_text));
    }
    if sample.context.iter().any(|c| *c == gold_text) {
        return Err(QueryError::AnswerLeak(gold_text));
    }
    let mut options = vec![
        QueryOption {
            letter: String::new(),
            text: gold_text,
            node: sample.correct_node.clone(),
        },
        QueryOption {
            letter: String::new(),
            text: distractor.text.clone(),
            node: distractor.node_id.clone(),
        },
    ];
    options.shuffle(&mut rng_from_seed(shuffle_seed));
    letters_for(&mut options);
    let gold_letter = options
        .iter()
        .find(|o| o.node == sample.correct_node)
        .map(|o| o.letter.clone())
        .expect("gold option present");

    let activity = &sample.trajectory.scenario_name;
    Ok(CommonsenseQuery {
        query_id: query_id.into(),
        scenario_name: activity.clone(),
        prompt: template.render(activity, &sample.context, &options),
        options,
        gold_letter,
        n: sample.n,
        m: sample.m(),
        completion_pct: completion_pct(sample.n, sample.m()),
        conjugate_of: None,
        template_id: template.id.clone(),
        seed_trace: SeedTrace {
            shuffle: shuffle_seed,
            ..SeedTrace::default()
        },
        context_steps: sample.context.clone(),
        context_nodes: sample.context_nodes().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePair {
    pub clean: CommonsenseQuery,
    pub conjugate: CommonsenseQuery,
}

const CONJUGATE_ATTEMPTS: u64 = 32;

/// Build the conjugate of `clean`: same template and byte-identical option
/// block, with a context sampled so that the clean distractor becomes the
/// correct next step.
///
/// Candidate contexts that mention an option text, or whose last step could
/// also be followed by the clean gold node, are resampled (bounded).
pub fn make_conjugate_pair(
    clean: &CommonsenseQuery,
    graph: &CompactGraph,
    template: &PromptTemplate,
    seed: u64,
) -> Result<ConjugatePair> {
    if clean.template_id != template.id {
        return Err(QueryError::TemplateMismatch {
            query: clean.template_id.clone(),
            given: template.id.clone(),
        });
    }
    let malformed = |msg: &str| QueryError::Malformed(clean.query_id.clone(), msg.to_string());
    let gold = clean.gold_option().ok_or_else(|| malformed("gold letter has no option"))?;
    let wrong = clean
        .wrong_option()
        .ok_or_else(|| malformed("no wrong option"))?;
    let gold_idx = graph
        .index_of(&gold.node)
        .ok_or_else(|| SamplerError::UnknownNode(gold.node.clone()))?;
    let wrong_idx = graph
        .index_of(&wrong.node)
        .ok_or_else(|| SamplerError::UnknownNode(wrong.node.clone()))?;

    for attempt in 0..CONJUGATE_ATTEMPTS {
        let conj_seed = derive_seed(seed, "conjugate", attempt);
        let prefix = find_conjugate_trajectory(graph, &wrong.node, conj_seed)?;
        let last = graph
            .index_of(prefix.node_ids.last().expect("conjugate prefix is non-empty"))
            .expect("prefix nodes exist");
        let mentions_option = prefix
            .texts
            .iter()
            .any(|t| clean.options.iter().any(|o| o.text == *t));
        if mentions_option || graph.has_edge(last, gold_idx) {
            continue;
        }
        let full = extend_through(graph, &prefix, wrong_idx, wrong, derive_seed(conj_seed, "complete", 0));
        let n = prefix.len() + 1;
        let m = full.len();
        let conjugate = CommonsenseQuery {
            query_id: format!("{}-conj", clean.query_id),
            scenario_name: clean.scenario_name.clone(),
            prompt: template.render(&clean.scenario_name, &prefix.texts, &clean.options),
            options: clean.options.clone(),
            gold_letter: wrong.letter.clone(),
            n,
            m,
            completion_pct: completion_pct(n, m),
            conjugate_of: Some(clean.query_id.clone()),
            template_id: clean.template_id.clone(),
            seed_trace: SeedTrace {
                conjugate: Some(conj_seed),
                ..clean.seed_trace
            },
            context_steps: prefix.texts.clone(),
            context_nodes: prefix.node_ids.clone(),
        };
        return Ok(ConjugatePair {
            clean: clean.clone(),
            conjugate,
        });
    }
    Err(QueryError::NoSoundConjugate(clean.query_id.clone()))
}

// prefix + the distractor step (keeping its option text) + a uniform walk to END.
fn extend_through(
    graph: &CompactGraph,
    prefix: &Trajectory,
    node: usize,
    option: &QueryOption,
    seed: u64,
) -> Trajectory {
    let mut with_node = prefix.clone();
    let variant = graph
        .node(node)
        .variant_texts()
        .iter()
        .position(|t| *t == option.text)
        .unwrap_or(0);
    with_node.node_ids.push(option.node.clone());
    with_node.realization_choice.push(variant);
    with_node.texts.push(option.text.clone());
    complete_trajectory(graph, &with_node, node, seed)
}

/// `k` solved exemplar blocks followed by the open target block, separated
/// by blank lines.
pub fn assemble_nshot(
    target: &CommonsenseQuery,
    exemplars: &[(CommonsenseQuery, String)],
    k: usize,
    template: &PromptTemplate,
) -> Result<String> {
    if exemplars.len() != k {
        return Err(QueryError::ShotMismatch {
            expected: k,
            got: exemplars.len(),
        });
    }
    let mut out = String::new();
    for (q, letter) in exemplars {
        if q.query_id == target.query_id {
            return Err(QueryError::Leakage(q.query_id.clone()));
        }
        out.push_str(&q.prompt);
        out.push_str(&template.answer_token(letter));
        out.push_str("\n\n");
    }
    out.push_str(&target.prompt);
    Ok(out)
}

/// Pick `k` exemplars for `target` from `pool`: same scenario, never the
/// target itself (nor its conjugate partner), chosen by a seeded shuffle.
pub fn select_exemplars(
    target: &CommonsenseQuery,
    pool: &[CommonsenseQuery],
    k: usize,
    seed: u64,
) -> Vec<(CommonsenseQuery, String)> {
    let mut eligible: Vec<&CommonsenseQuery> = pool
        .iter()
        .filter(|q| q.scenario_name == target.scenario_name)
        .filter(|q| q.query_id != target.query_id)
        .filter(|q| q.conjugate_of.as_deref() != Some(target.query_id.as_str()))
        .filter(|q| target.conjugate_of.as_deref() != Some(q.query_id.as_str()))
        .collect();
    eligible.shuffle(&mut rng_from_seed(derive_seed(seed, &target.query_id, 0)));
    eligible
        .into_iter()
        .take(k)
        .map(|q| (q.clone(), q.gold_letter.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub n_trajectories: usize,
    pub policy: DistractorPolicy,
    pub template: PromptTemplate,
    pub seed: u64,
    /// Drop records whose prompt text already appeared.
    pub dedup: bool,
}

impl ExportConfig {
    pub fn new(n_trajectories: usize, seed: u64) -> Self {
        Self {
            n_trajectories,
            policy: DistractorPolicy::default(),
            template: PromptTemplate::default(),
            seed,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scenario: String,
    pub template_id: String,
    pub template: PromptTemplate,
    pub seed: u64,
    pub policy: DistractorPolicy,
    pub n_trajectories: usize,
    /// Σ m_i over sampled trajectories.
    pub trajectory_steps: usize,
    /// Σ (m_i - 1): one candidate query per split point.
    pub raw_queries: usize,
    pub skipped_empty_pool: usize,
    /// Splits dropped because an option text collided or leaked into the context.
    pub skipped_unsound: usize,
    pub dedup: bool,
    pub dedup_removed: usize,
    pub dedup_rate: f64,
    pub emitted: usize,
    pub jsonl_sha256: String,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub queries: Vec<CommonsenseQuery>,
    pub manifest: DatasetManifest,
}

pub fn query_id(scenario: &str, traj_index: usize, n: usize) -> String {
    let slug: String = scenario
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("{slug}-t{traj_index:05}-n{n:02}")
}

enum SplitOutcome {
    Query(Box<CommonsenseQuery>),
    EmptyPool,
    Unsound,
}

fn trajectory_seed(root: u64, traj_index: usize) -> u64 {
    derive_seed(root, "trajectory", traj_index as u64)
}

fn query_for_split(
    graph: &CompactGraph,
    config: &ExportConfig,
    traj_index: usize,
    traj_seed: u64,
    traj: &Trajectory,
    n: usize,
) -> Result<SplitOutcome> {
    let sample = split_at(traj, n)?;
    let distractor_seed = derive_seed(traj_seed, "distractor", n as u64);
    let shuffle_seed = derive_seed(traj_seed, "shuffle", n as u64);
    let policy = config.policy.with_seed(distractor_seed);
    let distractor = match sample_distractor(graph, &sample, &policy) {
        Ok(d) => d,
        Err(SamplerError::EmptyDistractorPool) => return Ok(SplitOutcome::EmptyPool),
        Err(e) => return Err(e.into()),
    };
    let id = query_id(graph.scenario_name(), traj_index, n);
    match render_query(&sample, &distractor, &config.template, shuffle_seed, id) {
        Ok(mut q) => {
            q.seed_trace = SeedTrace {
                root: config.seed,
                traj_index: traj_index as u64,
                trajectory: traj_seed,
                distractor: distractor_seed,
                shuffle: shuffle_seed,
                conjugate: None,
            };
            Ok(SplitOutcome::Query(Box::new(q)))
        }
        Err(QueryError::DuplicateOptionText(_)) | Err(QueryError::AnswerLeak(_)) => {
            Ok(SplitOutcome::Unsound)
        }
        Err(e) => Err(e),
    }
}

/// Regenerate the record for trajectory `traj_index`, split `n`.
pub fn replay_query(
    graph: &CompactGraph,
    config: &ExportConfig,
    traj_index: usize,
    n: usize,
) -> Result<Option<CommonsenseQuery>> {
    let traj_seed = trajectory_seed(config.seed, traj_index);
    let traj = sample_trajectory(graph, traj_seed);
    Ok(match query_for_split(graph, config, traj_index, traj_seed, &traj, n)? {
        SplitOutcome::Query(q) => Some(*q),
        _ => None,
    })
}

/// Sample `n_trajectories` trajectories and emit one query per split point
/// `n in 2..=m`, in (trajectory index, n) order.
pub fn generate_dataset(graph: &CompactGraph, config: &ExportConfig) -> Result<GeneratedDataset> {
    config.template.validate()?;
    if config.template.option_count != 2 {
        return Err(QueryError::Template(
            "dataset export renders exactly two options".into(),
        ));
    }
    if config.n_trajectories == 0 {
        return Err(QueryError::Template("n_trajectories must be >= 1".into()));
    }

    let per_traj: Vec<Result<(usize, Vec<SplitOutcome>)>> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let traj_seed = trajectory_seed(config.seed, i);
            let traj = sample_trajectory(graph, traj_seed);
            let outcomes = (2..=traj.len())
                .map(|n| query_for_split(graph, config, i, traj_seed, &traj, n))
                .collect::<Result<Vec<_>>>()?;
            Ok((traj.len(), outcomes))
        })
        .collect();

    let mut trajectory_steps = 0;
    let mut raw = 0;
    let mut skipped_empty_pool = 0;
    let mut skipped_unsound = 0;
    let mut dedup_removed = 0;
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for item in per_traj {
        let (m, outcomes) = item?;
        trajectory_steps += m;
        raw += m.saturating_sub(1);
        for outcome in outcomes {
            match outcome {
                SplitOutcome::Query(q) => {
                    if config.dedup && !seen.insert(q.prompt.clone()) {
                        dedup_removed += 1;
                        continue;
                    }
                    queries.push(*q);
                }
                SplitOutcome::EmptyPool => skipped_empty_pool += 1,
                SplitOutcome::Unsound => skipped_unsound += 1,
            }
        }
    }
    let generated = raw - skipped_empty_pool - skipped_unsound;
    let jsonl = to_jsonl(&queries);
    let manifest = DatasetManifest {
        format_version: 1,
        scenario: graph.scenario_name().to_string(),
        template_id: config.template.id.clone(),
        template: config.template.clone(),
        seed: config.seed,
        policy: config.policy.with_seed(0),
        n_trajectories: config.n_trajectories,
        trajectory_steps,
        raw_queries: raw,
        skipped_empty_pool,
        skipped_unsound,
        dedup: config.dedup,
        dedup_removed,
        dedup_rate: if generated == 0 {
            0.0
        } else {
            dedup_removed as f64 / generated as f64
        },
        emitted: queries.len(),
        jsonl_sha256: sha256_hex(jsonl.as_bytes()),
    };
    Ok(GeneratedDataset { queries, manifest })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// `data.jsonl` -> `data.manifest.json`
pub fn manifest_path(jsonl: &Path) -> PathBuf {
    jsonl.with_extension("manifest.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> QueryError + '_ {
    move |source| QueryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Generate and write the dataset JSONL to `out` and its manifest next to it.
pub fn export_dataset(
    graph: &CompactGraph,
    config: &ExportConfig,
    out: &Path,
) -> Result<DatasetManifest> {
    let data = generate_dataset(graph, config)?;
    write_jsonl(out, &data.queries)?;
    let mpath = manifest_path(out);
    let text = serde_json::to_string_pretty(&data.manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    Ok(data.manifest)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(to_jsonl(records).as_bytes())
        .map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| QueryError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<CommonsenseQuery>> {
    read_jsonl(path)
}

/// Group flat records into clean/conjugate pairs via `conjugate_of`.
pub fn pair_records(records: &[CommonsenseQuery]) -> Vec<ConjugatePair> {
    let by_id: std::collections::HashMap<&str, &CommonsenseQuery> = records
        .iter()
        .map(|q| (q.query_id.as_str(), q))
        .collect();
    records
        .iter()
        .filter_map(|conj| {
            let clean = by_id.get(conj.conjugate_of.as_deref()?)?;
            Some(ConjugatePair {
                clean: (*clean).clone(),
                conjugate: conj.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn planting_sample() -> SplitSample {
        let traj = Trajectory {
            scenario_name: "planting a tree".into(),
            node_ids: vec!["go".into(), "obtain".into(), "location".into()],
            realization_choice: vec![0, 0, 0],
            texts: vec![
                "Go to garden center".into(),
                "Obtain seedling.".into(),
                "Find a location to plant tree".into(),
            ],
            log_prob: 0.0,
        };
        split_at(&traj, 3).unwrap()
    }

    fn water() -> Distractor {
        Distractor {
            node_id: "water".into(),
            variant: 0,
            text: "Water tree".into(),
        }
    }

    fn seed_with_gold_at(letter: &str) -> u64 {
        (0..100)
            .find(|&s| {
                render_query(&planting_sample(), &water(), &PromptTemplate::default(), s, "q")
                    .unwrap()
                    .gold_letter
                    == letter
            })
            .unwrap()
    }

    #[test]
    fn planting_example_renders_exactly() {
        let q = render_query(
            &planting_sample(),
            &water(),
            &PromptTemplate::default(),
            seed_with_gold_at("B"),
            "q",
        )
        .unwrap();
        let expected = "Question: For the task planting a tree, if the following steps are already completed in order 1. Go to garden center, 2. Obtain seedling., what should be the next suitable step for completing the task? \nA. Water tree\nB. Find a location to plant tree\nAnswer:";
        assert_eq!(q.prompt, expected);
        assert_eq!(q.gold_letter, "B");
        assert_eq!(PromptTemplate::default().answer_token(&q.gold_letter), " B");
        assert_eq!(q.n, 3);
        assert_eq!(q.m, 3);
        assert_eq!(q.completion_pct, 100.0);
    }

    #[test]
    fn default_template_matches_normative_string() {
        let t = PromptTemplate::default();
        let opts = vec![
            QueryOption { letter: "A".into(), text: "{opt_a}".into(), node: "x".into() },
            QueryOption { letter: "B".into(), text: "{opt_b}".into(), node: "y".into() },
        ];
        let rendered = t
            .render("{activity}", &[], &opts)
            .replacen("in order ,", "in order {numbered_steps},", 1);
        assert_eq!(
            rendered,
            "Question: For the task {activity}, if the following steps are already completed in order {numbered_steps}, what should be the next suitable step for completing the task? \nA. {opt_a}\nB. {opt_b}\nAnswer:"
        );
    }

    #[test]
    fn shuffle_coherence() {
        let a = render_query(&planting_sample(), &water(), &PromptTemplate::default(), seed_with_gold_at("A"), "q").unwrap();
        let b = render_query(&planting_sample(), &water(), &PromptTemplate::default(), seed_with_gold_at("B"), "q").unwrap();
        assert_eq!(a.gold_letter, "A");
        assert_eq!(b.gold_letter, "B");
        assert_eq!(a.options[0].text, b.options[1].text);
        assert_eq!(a.options[1].text, b.options[0].text);
        for q in [&a, &b] {
            assert_eq!(q.gold_option().unwrap().text, "Find a location to plant tree");
        }
    }

    #[test]
    fn template_placeholders_checked() {
        let mut t = PromptTemplate::default();
        t.question_format = "Task {activity} {activity} {numbered_steps}".into();
        assert!(matches!(t.validate(), Err(QueryError::Template(_))));
        let mut t = PromptTemplate::default();
        t.option_format = "{letter})".into();
        assert!(matches!(
            render_query(&planting_sample(), &water(), &t, 0, "q"),
            Err(QueryError::Template(_))
        ));
    }

    #[test]
    fn duplicate_and_leaking_texts_rejected() {
        let mut d = water();
        d.text = "Find a location to plant tree".into();
        assert!(matches!(
            render_query(&planting_sample(), &d, &PromptTemplate::default(), 0, "q"),
            Err(QueryError::DuplicateOptionText(_))
        ));
        let mut s = planting_sample();
        s.context[0] = "Find a location to plant tree".into();
        assert!(matches!(
            render_query(&s, &water(), &PromptTemplate::default(), 0, "q"),
            Err(QueryError::AnswerLeak(_))
        ));
    }

    #[test]
    fn nshot_structure() {
        let t = PromptTemplate::default();
        let mk = |id: &str, s: u64| {
            render_query(&planting_sample(), &water(), &t, s, id).unwrap()
        };
        let target = mk("t", 0);
        assert_eq!(assemble_nshot(&target, &[], 0, &t).unwrap(), target.prompt);

        let ex = vec![(mk("e1", 1), "A".to_string()), (mk("e2", 2), "B".to_string())];
        let text = assemble_nshot(&target, &ex, 2, &t).unwrap();
        assert_eq!(text.matches("Answer: A\n").count() + text.matches("Answer: B\n").count(), 2);
        assert!(text.ends_with("Answer:"));
        assert_eq!(
            text,
            format!("{} A\n\n{} B\n\n{}", ex[0].0.prompt, ex[1].0.prompt, target.prompt)
        );

        assert!(matches!(
            assemble_nshot(&target, &[(mk("t", 3), "A".into())], 1, &t),
            Err(QueryError::Leakage(_))
        ));
        assert!(matches!(
            assemble_nshot(&target, &ex, 3, &t),
            Err(QueryError::ShotMismatch { .. })
        ));
    }

    #[test]
    fn one_trajectory_of_length_five_gives_four_queries() {
        // A chain never yields distractors, so use a chain of width 2 layers.
        let g = oracle::layered_graph(5, 2, 2);
        let mut config = ExportConfig::new(1, 11);
        config.dedup = false;
        let data = generate_dataset(&g, &config).unwrap();
        assert_eq!(data.manifest.trajectory_steps, 5);
        assert_eq!(data.manifest.raw_queries, 4);
        assert_eq!(
            data.queries.len() + data.manifest.skipped_empty_pool + data.manifest.skipped_unsound,
            4
        );
    }

    #[test]
    fn diamond_conjugate_pair() {
        let g = oracle::diamond_graph([1, 1, 1, 1]);
        // clean: context [a], gold b, distractor d.
        let traj = Trajectory {
            scenario_name: "diamond".into(),
            node_ids: vec!["a".into(), "b".into(), "d".into()],
            realization_choice: vec![0, 0, 0],
            texts: vec!["a variant 0".into(), "b variant 0".into(), "d variant 0".into()],
            log_prob: -(2f64.ln()),
        };
        let s = split_at(&traj, 2).unwrap();
        let d = sample_distractor(&g, &s, &DistractorPolicy::default()).unwrap();
        assert_eq!(d.node_id, "d");
        let t = PromptTemplate::default();
        let clean = render_query(&s, &d, &t, 5, "clean").unwrap();
        // [a, b] would repeat an option text inside the context, leaving
        // [a, c] as the only sound prefix ending before d.
        let pair = make_conjugate_pair(&clean, &g, &t, 9).unwrap();
        assert_eq!(pair.conjugate.context_nodes, vec!["a", "c"]);
        assert_eq!(pair.conjugate.options, clean.options);
        assert_ne!(pair.conjugate.gold_letter, clean.gold_letter);
        assert_eq!(pair.conjugate.gold_node(), Some("d"));
        assert_eq!(pair.conjugate.n, 3);
        assert_eq!(pair.conjugate.m, 3);
        assert_eq!(pair.conjugate.conjugate_of.as_deref(), Some("clean"));
        let block = t.option_block(&clean.options);
        assert!(pair.clean.prompt.contains(&block) && pair.conjugate.prompt.contains(&block));
    }

    #[test]
    fn record_serializes_with_schema_keys() {
        let q = render_query(&planting_sample(), &water(), &PromptTemplate::default(), 0, "q").unwrap();
        let v: serde_json::Value = serde_json::to_value(&q).unwrap();
        for key in ["id", "scenario", "prompt", "options", "gold", "n", "m", "completion_pct", "template", "seeds"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v.get("conjugate_of").is_none());
        let back: CommonsenseQuery = serde_json::from_value(v).unwrap();
        assert_eq!(back, q);
    }
}
