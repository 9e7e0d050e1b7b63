//! Joins model responses to gold labels and aggregates success rates by
//! scenario, model, shot count and task-completion decile.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::querygen::{read_jsonl, CommonsenseQuery, QueryError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("response references unknown query id `{0}`")]
    UnknownQueryId(String),
    #[error("duplicate response for query `{id}` (model `{model}`, {shots} shots)")]
    DuplicateResponse {
        id: String,
        model: String,
        shots: usize,
    },
    #[error("response for `{0}` has neither a choice nor logits")]
    EmptyResponse(String),
    #[error("response for `{id}` chooses {choice} but its logits favour {argmax}")]
    InconsistentResponse {
        id: String,
        choice: String,
        argmax: String,
    },
    #[error("response for `{id}` uses letter `{letter}`, which is not an option")]
    InvalidLetter { id: String, letter: String },
    #[error("response for `{0}` has a non-finite logit")]
    NonFiniteLogit(String),
    #[error(transparent)]
    Read(#[from] QueryError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// One model response (a line of the response JSONL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(rename = "id")]
    pub query_id: String,
    #[serde(rename = "model")]
    pub model_id: String,
    pub shots: usize,
    #[serde(rename = "choice", default, skip_serializing_if = "Option::is_none")]
    pub chosen_letter: Option<String>,
    #[serde(rename = "logits", default, skip_serializing_if = "Option::is_none")]
    pub option_logits: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub letter: String,
    /// Several letters shared the maximal logit.
    pub tie: bool,
    pub from_logits: bool,
}

impl EvalRecord {
    /// The effective answer. Logit-only responses are decided by argmax with
    /// ties going to the lexicographically smallest letter.
    pub fn decide(&self) -> Result<Decision> {
        let argmax = match &self.option_logits {
            None => None,
            Some(logits) => {
                if logits.values().any(|v| !v.is_finite()) {
                    return Err(EvalError::NonFiniteLogit(self.query_id.clone()));
                }
                let best = logits.values().copied().fold(f64::NEG_INFINITY, f64::max);
                // BTreeMap iterates letters in lexicographic order.
                let tied: Vec<&String> = logits
                    .iter()
                    .filter(|(_, &v)| v == best)
                    .map(|(k, _)| k)
                    .collect();
                let first = tied.first().map(|f| (*f).clone());
                first.map(|f| (f, tied.len() > 1, tied))
            }
        };
        match (&self.chosen_letter, argmax) {
            (None, None) => Err(EvalError::EmptyResponse(self.query_id.clone())),
            (Some(c), None) => Ok(Decision {
                letter: c.clone(),
                tie: false,
                from_logits: false,
            }),
            (None, Some((letter, tie, _))) => Ok(Decision {
                letter,
                tie,
                from_logits: true,
            }),
            (Some(c), Some((letter, tie, tied))) => {
                if tied.iter().any(|t| *t == c) {
                    Ok(Decision {
                        letter: c.clone(),
                        tie,
                        from_logits: false,
                    })
                } else {
                    Err(EvalError::InconsistentResponse {
                        id: self.query_id.clone(),
                        choice: c.clone(),
                        argmax: letter,
                    })
                }
            }
        }
    }
}

/// Completion decile `0..=9` for split `n` of `m`; `[90, 100]` is closed.
pub fn completion_bucket(n: usize, m: usize) -> u8 {
    ((10 * n) / m.max(1)).min(9) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub scenario: String,
    pub model: String,
    pub shots: usize,
    /// `None` aggregates every decile.
    pub bucket: Option<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub total: usize,
}

impl Counts {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuccessReport {
    pub groups: BTreeMap<GroupKey, Counts>,
    /// Logit decisions that needed the tie-break.
    pub ties: usize,
    pub decided_by_logits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub scenario: String,
    pub model: String,
    pub shots: usize,
    pub bucket: String,
    pub correct: usize,
    pub total: usize,
    pub rate: Option<f64>,
}

fn bucket_label(bucket: Option<u8>) -> String {
    match bucket {
        None => "all".into(),
        Some(b) => format!("{}-{}", 10 * b as u32, 10 * (b as u32 + 1)),
    }
}

impl SuccessReport {
    fn add(&mut self, key: GroupKey, correct: bool) {
        let c = self.groups.entry(key).or_default();
        c.total += 1;
        c.correct += usize::from(correct);
    }

    /// Sum of counts; associative and commutative, so shards can be scored
    /// independently.
    pub fn merge(&mut self, other: &SuccessReport) {
        for (k, c) in &other.groups {
            let e = self.groups.entry(k.clone()).or_default();
            e.correct += c.correct;
            e.total += c.total;
        }
        self.ties += other.ties;
        self.decided_by_logits += other.decided_by_logits;
    }

    /// Totals over every aggregate (`bucket = None`) group.
    pub fn overall(&self) -> Counts {
        self.groups
            .iter()
            .filter(|(k, _)| k.bucket.is_none())
            .fold(Counts::default(), |acc, (_, c)| Counts {
                correct: acc.correct + c.correct,
                total: acc.total + c.total,
            })
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.groups
            .iter()
            .map(|(k, c)| ReportRow {
                scenario: k.scenario.clone(),
                model: k.model.clone(),
                shots: k.shots,
                bucket: bucket_label(k.bucket),
                correct: c.correct,
                total: c.total,
                rate: c.rate(),
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let overall = self.overall();
        serde_json::json!({
            "overall": { "correct": overall.correct, "total": overall.total, "rate": overall.rate() },
            "ties": self.ties,
            "decided_by_logits": self.decided_by_logits,
            "groups": self.rows(),
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "model", "shots", "bucket", "correct", "total", "rate"])?;
        for r in self.rows() {
            w.write_record([
                r.scenario,
                r.model,
                r.shots.to_string(),
                r.bucket,
                r.correct.to_string(),
                r.total.to_string(),
                r.rate.map(|x| format!("{x:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush()
    }
}

/// Score in-memory responses against a dataset.
pub fn score_records(dataset: &[CommonsenseQuery], responses: &[EvalRecord]) -> Result<SuccessReport> {
    let by_id: HashMap<&str, &CommonsenseQuery> = dataset
        .iter()
        .map(|q| (q.query_id.as_str(), q))
        .collect();
    let mut seen = HashSet::new();
    let mut report = SuccessReport::default();
    for r in responses {
        let q = by_id
            .get(r.query_id.as_str())
            .ok_or_else(|| EvalError::UnknownQueryId(r.query_id.clone()))?;
        if !seen.insert((r.query_id.as_str(), r.model_id.as_str(), r.shots)) {
            return Err(EvalError::DuplicateResponse {
                id: r.query_id.clone(),
                model: r.model_id.clone(),
                shots: r.shots,
            });
        }
        let decision = r.decide()?;
        if !q.options.iter().any(|o| o.letter == decision.letter) {
            return Err(EvalError::InvalidLetter {
                id: r.query_id.clone(),
                letter: decision.letter,
            });
        }
        report.ties += usize::from(decision.tie);
        report.decided_by_logits += usize::from(decision.from_logits);
        let correct = decision.letter == q.gold_letter;
        let key = |bucket| GroupKey {
            scenario: q.scenario_name.clone(),
            model: r.model_id.clone(),
            shots: r.shots,
            bucket,
        };
        report.add(key(None), correct);
        report.add(key(Some(completion_bucket(q.n, q.m))), correct);
    }
    Ok(report)
}

/// Score a response JSONL file against a dataset JSONL file.
pub fn score(dataset: &Path, responses: &Path) -> Result<SuccessReport> {
    let queries: Vec<CommonsenseQuery> = read_jsonl(dataset)?;
    let records: Vec<EvalRecord> = read_jsonl(responses)?;
    score_records(&queries, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionBucketRow {
    pub scenario: String,
    pub model: String,
    pub shots: usize,
    pub bucket_lo: u32,
    pub bucket_hi: u32,
    pub n: usize,
    pub rate: Option<f64>,
}

/// Ten completion buckets per (scenario, model, shots); empty buckets carry a
/// `None` rate.
pub fn bucket_by_completion(report: &SuccessReport) -> Vec<CompletionBucketRow> {
    let keys: std::collections::BTreeSet<(String, String, usize)> = report
        .groups
        .keys()
        .map(|k| (k.scenario.clone(), k.model.clone(), k.shots))
        .collect();
    let mut rows = Vec::new();
    for (scenario, model, shots) in keys {
        for b in 0..10u8 {
            let c = report
                .groups
                .get(&GroupKey {
                    scenario: scenario.clone(),
                    model: model.clone(),
                    shots,
                    bucket: Some(b),
                })
                .copied()
                .unwrap_or_default();
            rows.push(CompletionBucketRow {
                scenario: scenario.clone(),
                model: model.clone(),
                shots,
                bucket_lo: 10 * b as u32,
                bucket_hi: 10 * (b as u32 + 1),
                n: c.total,
                rate: c.rate(),
            });
        }
    }
    rows
}
