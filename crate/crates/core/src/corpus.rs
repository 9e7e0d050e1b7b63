//! Scenario corpora: event sequence descriptions plus their cluster alignment.
//!
//! A corpus is one JSON document per scenario:
//!
//! ```json
//! { "scenario": "planting a tree",
//!   "esds": [ { "id": "e1", "steps": ["dig hole", { "text": "plant", "substeps": ["lower tree", "fill soil"] }] } ],
//!   "alignment": { "e1": ["c-dig", "c-plant"] } }
//! ```
//!
//! Every step of every ESD is aligned to exactly one cluster id; the alignment
//! list is parallel to the ESD's steps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("alignment mismatch at {location}: {message}")]
    AlignmentMismatch { location: String, message: String },
    #[error("invalid corpus: {0}")]
    Invalid(Diagnostic),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCorpus {
    pub scenario_name: String,
    pub esds: Vec<Esd>,
    /// esd id -> cluster id per step.
    pub alignment: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Esd {
    pub id: String,
    pub steps: Vec<EventStep>,
}

/// One telegram-style step, optionally expanded into miniature substeps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStep {
    pub text: String,
    pub substeps: Option<Vec<String>>,
}

impl EventStep {
    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            substeps: None,
        }
    }

    pub fn with_substeps(text: impl Into<String>, substeps: Vec<String>) -> Self {
        Self {
            text: text.into(),
            substeps: Some(substeps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    EmptyScenarioName,
    EmptyEsdId,
    DuplicateEsdId,
    EmptyEsd,
    EmptyStepText,
    EmptySubsteps,
    AlignmentUnknownEsd,
    AlignmentMissing,
    AlignmentLength,
    EmptyClusterId,
    SingletonCluster,
    UnknownField,
}

impl DiagnosticCode {
    pub fn severity(self) -> Severity {
        match self {
            DiagnosticCode::SingletonCluster | DiagnosticCode::UnknownField => Severity::Warning,
            _ => Severity::Error,
        }
    }

    fn is_alignment(self) -> bool {
        matches!(
            self,
            DiagnosticCode::AlignmentUnknownEsd
                | DiagnosticCode::AlignmentMissing
                | DiagnosticCode::AlignmentLength
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    /// JSON-path style location, e.g. `esds[3].steps[1]` or `alignment.e2`.
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    fn new(code: DiagnosticCode, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: code.severity(),
            code,
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

// Wire format.

#[derive(Deserialize)]
struct RawCorpus {
    scenario: String,
    esds: Vec<RawEsd>,
    alignment: BTreeMap<String, Vec<String>>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawEsd {
    id: String,
    steps: Vec<RawStep>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawStep {
    Plain(String),
    Detailed {
        text: String,
        substeps: Option<Vec<String>>,
        #[serde(flatten)]
        extra: BTreeMap<String, Value>,
    },
}

#[derive(Serialize)]
struct WireCorpus<'a> {
    scenario: &'a str,
    esds: Vec<WireEsd<'a>>,
    alignment: &'a BTreeMap<String, Vec<String>>,
}

#[derive(Serialize)]
struct WireEsd<'a> {
    id: &'a str,
    steps: Vec<WireStep<'a>>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireStep<'a> {
    Plain(&'a str),
    Detailed {
        text: &'a str,
        substeps: &'a [String],
    },
}

fn unknown_fields(extra: &BTreeMap<String, Value>, location: &str, out: &mut Vec<Diagnostic>) {
    for key in extra.keys() {
        out.push(Diagnostic::new(
            DiagnosticCode::UnknownField,
            location.to_string(),
            format!("unknown field `{key}` ignored"),
        ));
    }
}

/// Parse a corpus document, returning the corpus together with every
/// diagnostic (warnings included). Fails on the first error-severity finding.
pub fn parse_corpus_with_diagnostics(text: &str) -> Result<(ScenarioCorpus, Vec<Diagnostic>)> {
    let raw: RawCorpus = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut diagnostics = Vec::new();
    unknown_fields(&raw.extra, "$", &mut diagnostics);

    let mut esds = Vec::with_capacity(raw.esds.len());
    for (i, raw_esd) in raw.esds.into_iter().enumerate() {
        unknown_fields(&raw_esd.extra, &format!("esds[{i}]"), &mut diagnostics);
        let steps = raw_esd
            .steps
            .into_iter()
            .enumerate()
            .map(|(j, step)| match step {
                RawStep::Plain(text) => EventStep::plain(text),
                RawStep::Detailed {
                    text,
                    substeps,
                    extra,
                } => {
                    unknown_fields(&extra, &format!("esds[{i}].steps[{j}]"), &mut diagnostics);
                    EventStep { text, substeps }
                }
            })
            .collect();
        esds.push(Esd {
            id: raw_esd.id,
            steps,
        });
    }

    let corpus = ScenarioCorpus {
        scenario_name: raw.scenario,
        esds,
        alignment: raw.alignment,
    };

    diagnostics.extend(validate_corpus(&corpus));
    if let Some(first) = diagnostics.iter().find(|d| d.is_error()) {
        let first = first.clone();
        return Err(if first.code.is_alignment() {
            CorpusError::AlignmentMismatch {
                location: first.location,
                message: first.message,
            }
        } else {
            CorpusError::Invalid(first)
        });
    }
    Ok((corpus, diagnostics))
}

pub fn parse_corpus(text: &str) -> Result<ScenarioCorpus> {
    parse_corpus_with_diagnostics(text).map(|(c, _)| c)
}

pub fn load_corpus_with_diagnostics(path: &Path) -> Result<(ScenarioCorpus, Vec<Diagnostic>)> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus_with_diagnostics(&text)
}

/// Load and validate a corpus file.
pub fn load_corpus(path: &Path) -> Result<ScenarioCorpus> {
    load_corpus_with_diagnostics(path).map(|(c, _)| c)
}

/// Canonical JSON rendering: plain steps as strings, detailed steps as objects.
pub fn corpus_to_json(corpus: &ScenarioCorpus) -> String {
    let wire = WireCorpus {
        scenario: &corpus.scenario_name,
        esds: corpus
            .esds
            .iter()
            .map(|esd| WireEsd {
                id: &esd.id,
                steps: esd
                    .steps
                    .iter()
                    .map(|s| match &s.substeps {
                        None => WireStep::Plain(&s.text),
                        Some(sub) => WireStep::Detailed {
                            text: &s.text,
                            substeps: sub,
                        },
                    })
                    .collect(),
            })
            .collect(),
        alignment: &corpus.alignment,
    };
    serde_json::to_string_pretty(&wire).expect("corpus serialization cannot fail")
}

pub fn save_corpus(corpus: &ScenarioCorpus, path: &Path) -> Result<()> {
    fs::write(path, corpus_to_json(corpus)).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Check every corpus invariant. An empty result means the corpus is valid;
/// warnings (e.g. clusters used once) do not make it invalid.
pub fn validate_corpus(corpus: &ScenarioCorpus) -> Vec<Diagnostic> {
    use DiagnosticCode::*;
    let mut out = Vec::new();

    if corpus.scenario_name.trim().is_empty() {
        out.push(Diagnostic::new(
            EmptyScenarioName,
            "scenario",
            "scenario name is empty",
        ));
    }

    let mut seen: HashSet<&str> = HashSet::new();
    for (i, esd) in corpus.esds.iter().enumerate() {
        let loc = format!("esds[{i}]");
        if esd.id.is_empty() {
            out.push(Diagnostic::new(EmptyEsdId, loc.clone(), "ESD id is empty"));
        }
        if !seen.insert(esd.id.as_str()) {
            out.push(Diagnostic::new(
                DuplicateEsdId,
                loc.clone(),
                format!("duplicate ESD id `{}`", esd.id),
            ));
        }
        if esd.steps.is_empty() {
            out.push(Diagnostic::new(
                EmptyEsd,
                loc.clone(),
                format!("ESD `{}` has no steps", esd.id),
            ));
        }
        for (j, step) in esd.steps.iter().enumerate() {
            let sloc = format!("{loc}.steps[{j}]");
            if step.text.trim().is_empty() {
                out.push(Diagnostic::new(EmptyStepText, sloc.clone(), "step text is empty"));
            }
            if let Some(sub) = &step.substeps {
                if sub.is_empty() {
                    out.push(Diagnostic::new(
                        EmptySubsteps,
                        sloc.clone(),
                        "substeps list is present but empty",
                    ));
                }
                for (k, s) in sub.iter().enumerate() {
                    if s.trim().is_empty() {
                        out.push(Diagnostic::new(
                            EmptySubsteps,
                            format!("{sloc}.substeps[{k}]"),
                            "substep text is empty",
                        ));
                    }
                }
            }
        }
        match corpus.alignment.get(&esd.id) {
            None => out.push(Diagnostic::new(
                AlignmentMissing,
                format!("alignment.{}", esd.id),
                format!("ESD `{}` has no alignment entry", esd.id),
            )),
            Some(clusters) if clusters.len() != esd.steps.len() => out.push(Diagnostic::new(
                AlignmentLength,
                format!("alignment.{}", esd.id),
                format!(
                    "alignment has {} entries but ESD `{}` has {} steps",
                    clusters.len(),
                    esd.id,
                    esd.steps.len()
                ),
            )),
            Some(_) => {}
        }
    }

    let esd_ids: HashSet<&str> = corpus.esds.iter().map(|e| e.id.as_str()).collect();
    let mut usage: HashMap<&str, usize> = HashMap::new();
    let mut first_use: Vec<&str> = Vec::new();
    for (esd_id, clusters) in &corpus.alignment {
        if !esd_ids.contains(esd_id.as_str()) {
            out.push(Diagnostic::new(
                AlignmentUnknownEsd,
                format!("alignment.{esd_id}"),
                format!("alignment references unknown ESD `{esd_id}`"),
            ));
            continue;
        }
        for (j, c) in clusters.iter().enumerate() {
            if c.is_empty() {
                out.push(Diagnostic::new(
                    EmptyClusterId,
                    format!("alignment.{esd_id}[{j}]"),
                    "cluster id is empty",
                ));
                continue;
            }
            let n = usage.entry(c.as_str()).or_insert(0);
            if *n == 0 {
                first_use.push(c.as_str());
            }
            *n += 1;
        }
    }
    for c in first_use {
        if usage[c] == 1 {
            out.push(Diagnostic::new(
                SingletonCluster,
                format!("cluster.{c}"),
                format!("cluster `{c}` is used by exactly one step (likely annotation noise)"),
            ));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"scenario":"planting a tree","esds":[{"id":"e1","steps":["dig hole","plant"]}],"alignment":{"e1":["c-dig","c-plant"]}}"#;

    #[test]
    fn minimal_corpus_loads() {
        let c = parse_corpus(MINIMAL).unwrap();
        assert_eq!(c.esds.len(), 1);
        let clusters: HashSet<_> = c.alignment["e1"].iter().collect();
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn alignment_length_mismatch() {
        let bad = MINIMAL.replace(r#"["c-dig","c-plant"]"#, r#"["c-dig","c-plant","c-x"]"#);
        assert!(matches!(
            parse_corpus(&bad),
            Err(CorpusError::AlignmentMismatch { .. })
        ));
    }

    #[test]
    fn alignment_unknown_esd() {
        let bad = MINIMAL.replace(
            r#""alignment":{"#,
            r#""alignment":{"ghost":["c-dig"],"#,
        );
        match parse_corpus(&bad) {
            Err(CorpusError::AlignmentMismatch { location, .. }) => {
                assert_eq!(location, "alignment.ghost")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_corpus("{\n\"scenario\": \"x\",\n\"esds\": [,]\n}").unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn substeps_parse_and_round_trip() {
        let text = r#"{"scenario":"s","esds":[{"id":"e1","steps":["a",{"text":"b","substeps":["b1","b2"]}]}],"alignment":{"e1":["x","y"]}}"#;
        let c = parse_corpus(text).unwrap();
        assert_eq!(
            c.esds[0].steps[1].substeps.as_deref(),
            Some(&["b1".to_string(), "b2".to_string()][..])
        );
        assert_eq!(parse_corpus(&corpus_to_json(&c)).unwrap(), c);
    }

    #[test]
    fn empty_substeps_rejected() {
        let text = r#"{"scenario":"s","esds":[{"id":"e1","steps":[{"text":"b","substeps":[]}]}],"alignment":{"e1":["x"]}}"#;
        assert!(matches!(parse_corpus(text), Err(CorpusError::Invalid(_))));
    }

    #[test]
    fn unknown_fields_are_warnings() {
        let text = MINIMAL.replacen('{', r#"{"version":3,"#, 1);
        let (_, diags) = parse_corpus_with_diagnostics(&text).unwrap();
        assert!(diags
            .iter()
            .any(|d| d.code == DiagnosticCode::UnknownField && d.severity == Severity::Warning));
    }

    #[test]
    fn valid_corpus_has_no_diagnostics() {
        let c = ScenarioCorpus {
            scenario_name: "s".into(),
            esds: vec![
                Esd {
                    id: "e1".into(),
                    steps: vec![EventStep::plain("a"), EventStep::plain("b")],
                },
                Esd {
                    id: "e2".into(),
                    steps: vec![EventStep::plain("a2"), EventStep::plain("b2")],
                },
            ],
            alignment: [
                ("e1".to_string(), vec!["A".to_string(), "B".to_string()]),
                ("e2".to_string(), vec!["A".to_string(), "B".to_string()]),
            ]
            .into_iter()
            .collect(),
        };
        assert!(validate_corpus(&c).is_empty());
    }

    #[test]
    fn duplicate_id_is_one_error_naming_it() {
        let mut c = parse_corpus(MINIMAL).unwrap();
        c.esds.push(c.esds[0].clone());
        let errors: Vec<_> = validate_corpus(&c)
            .into_iter()
            .filter(|d| d.is_error())
            .collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].code, DiagnosticCode::DuplicateEsdId);
        assert!(errors[0].message.contains("e1"));
    }

    #[test]
    fn singleton_cluster_warns() {
        let c = ScenarioCorpus {
            scenario_name: "s".into(),
            esds: vec![
                Esd {
                    id: "e1".into(),
                    steps: vec![EventStep::plain("a"), EventStep::plain("b")],
                },
                Esd {
                    id: "e2".into(),
                    steps: vec![EventStep::plain("a"), EventStep::plain("rare")],
                },
            ],
            alignment: [
                ("e1".to_string(), vec!["A".to_string(), "B".to_string()]),
                ("e2".to_string(), vec!["A".to_string(), "R".to_string()]),
            ]
            .into_iter()
            .collect(),
        };
        let diags = validate_corpus(&c);
        let singles: Vec<_> = diags
            .iter()
            .filter(|d| d.code == DiagnosticCode::SingletonCluster)
            .collect();
        assert_eq!(singles.len(), 2);
        assert!(singles.iter().all(|d| d.severity == Severity::Warning));
        assert!(diags.iter().all(|d| !d.is_error()));
    }
}
