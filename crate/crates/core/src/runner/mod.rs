//! Runs framework × condition cells against a gateway, persists one JSONL
//! record per snippet, and turns run logs into reports.
//!
//! Layout under the output directory:
//!
//! ```text
//! out_dir/.lock
//! out_dir/<run_id>/records.jsonl
//! out_dir/<run_id>/manifest.json
//! ```
//!
//! Readers take the last record per snippet, so a resumed run may append a
//! fresh record for a snippet whose earlier request failed.

mod log;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use log::{read_log, LogContents, OutputLock, LOCK_FILE, MANIFEST_FILE, RECORDS_FILE};
pub use report::{build_report, load_run, write_report, ReportBundle, RunSummary};

use crate::gateway::{ChatBackend, CompletionError, CompletionRequest, Gateway, TopKStatus};
use crate::model::{Condition, DomainError, FallacyLabel, Framework, RunConfig, Snippet, SnippetKey};
use crate::parser::{self, ParseError, ParsedPrediction};
use crate::prompt::{PromptError, PromptForge, PromptSpec};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] DomainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{} snippet(s) have no tone triple: {}", .0.len(), join_keys(.0))]
    MissingTone(Vec<SnippetKey>),
    #[error("prompt for {0} reveals its gold label")]
    GoldLeak(SnippetKey),
    #[error("snippet {0} appears more than once")]
    DuplicateSnippet(SnippetKey),
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: corrupt record: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
    #[error("dataset digest mismatch for {run_id}: log has {recorded}, dataset is {actual}")]
    DigestMismatch {
        run_id: String,
        recorded: String,
        actual: String,
    },
    #[error("existing run {run_id} was made with different settings: {detail}")]
    ConfigMismatch { run_id: String, detail: String },
    #[error("{run_id}: {} snippet(s) have no completed record: {}", .keys.len(), join_keys(.keys))]
    MissingSnippets { run_id: String, keys: Vec<SnippetKey> },
    #[error("{run_id}: record for {key} does not match any dataset snippet")]
    UnknownSnippet { run_id: String, key: SnippetKey },
    #[error("{0}: no manifest found")]
    NoManifest(PathBuf),
    #[error(transparent)]
    Json(serde_json::Error),
}

fn join_keys(keys: &[SnippetKey]) -> String {
    const SHOWN: usize = 5;
    let mut s = keys
        .iter()
        .take(SHOWN)
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    if keys.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", keys.len() - SHOWN));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailureKind {
    Unparsable,
    Contradictory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordOutcome {
    Parsed {
        prediction: ParsedPrediction,
    },
    ParseFailed {
        reason: ParseFailureKind,
        message: String,
    },
    GatewayFailed {
        error: CompletionError,
    },
}

impl From<ParseError> for RecordOutcome {
    fn from(e: ParseError) -> Self {
        let reason = match e {
            ParseError::UnparsableResponse { .. } => ParseFailureKind::Unparsable,
            ParseError::ContradictoryLabel { .. } => ParseFailureKind::Contradictory,
        };
        RecordOutcome::ParseFailed {
            reason,
            message: e.to_string(),
        }
    }
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub framework: Framework,
    pub condition: Condition,
    pub snippet_key: SnippetKey,
    pub request_id: String,
    pub prompt_hash: String,
    /// Untouched completion text, thinking segment included.
    pub raw_text: Option<String>,
    pub finish_reason: Option<String>,
    pub attempts: u32,
    pub latency_ms: u64,
    pub outcome: RecordOutcome,
    pub timestamp: DateTime<Utc>,
}

impl RunRecord {
    /// True when the model answered, whether or not a label was found.
    pub fn is_completed(&self) -> bool {
        !matches!(self.outcome, RecordOutcome::GatewayFailed { .. })
    }

    /// `None` without a completion, `Some(None)` when unparsable.
    pub fn prediction(&self) -> Option<Option<FallacyLabel>> {
        match &self.outcome {
            RecordOutcome::Parsed { prediction } => Some(Some(prediction.label)),
            RecordOutcome::ParseFailed { .. } => Some(None),
            RecordOutcome::GatewayFailed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub unparsable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub framework: Framework,
    pub condition: Condition,
    pub config: RunConfig,
    pub top_k_status: TopKStatus,
    pub dataset_digest: String,
    pub counts: RunCounts,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

/// Outcome of a grid: manifests of the cells that ran, errors of those that
/// could not.
#[derive(Debug, Default)]
pub struct GridOutcome {
    pub manifests: Vec<RunManifest>,
    pub errors: Vec<(String, RunError)>,
}

pub fn run_dir(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join(run_id)
}

pub fn request_id(run_id: &str, key: &SnippetKey) -> String {
    format!("{run_id}:{key}")
}

/// Executes one cell, resuming from any existing log under `out_dir`.
pub async fn execute_run<B: ChatBackend>(
    cfg: &RunConfig,
    snippets: &[Snippet],
    out_dir: &Path,
    gateway: &Gateway<B>,
    forge: &PromptForge,
) -> Result<RunManifest, RunError> {
    let _lock = OutputLock::acquire(out_dir)?;
    run_locked(cfg, snippets, out_dir, gateway, forge).await
}

/// Runs every framework × condition cell. A cell that fails is reported in
/// [`GridOutcome::errors`] and does not stop the others.
pub async fn execute_grid<B: ChatBackend>(
    frameworks: &[Framework],
    conditions: &[Condition],
    base_cfg: &RunConfig,
    snippets: &[Snippet],
    out_dir: &Path,
    gateway: &Gateway<B>,
    forge: &PromptForge,
) -> Result<GridOutcome, RunError> {
    let _lock = OutputLock::acquire(out_dir)?;
    let mut outcome = GridOutcome::default();
    for &framework in frameworks {
        for &condition in conditions {
            let cfg = base_cfg.with_cell(framework, condition);
            let run_id = cfg.run_id();
            match run_locked(&cfg, snippets, out_dir, gateway, forge).await {
                Ok(m) => outcome.manifests.push(m),
                Err(e) => {
                    warn!(run_id = %run_id, error = %e, "cell failed");
                    outcome.errors.push((run_id, e));
                }
            }
        }
    }
    Ok(outcome)
}

/// Renders every prompt and checks preconditions before any request is sent.
fn prepare(cfg: &RunConfig, snippets: &[Snippet], forge: &PromptForge) -> Result<Vec<PromptSpec>, RunError> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    for s in snippets {
        if !seen.insert(s.key()) {
            return Err(RunError::DuplicateSnippet(s.key()));
        }
    }
    if cfg.condition.requires_tone() {
        let missing: Vec<SnippetKey> = snippets.iter().filter(|s| s.tone.is_none()).map(Snippet::key).collect();
        if !missing.is_empty() {
            return Err(RunError::MissingTone(missing));
        }
    }
    snippets
        .iter()
        .map(|s| {
            let spec = forge.render(cfg.framework, s, cfg.condition)?;
            if reveals_label(&spec.user_text, s.gold_label) {
                return Err(RunError::GoldLeak(s.key()));
            }
            Ok(spec)
        })
        .collect()
}

/// Looks for the label spelled the way an answer would spell it.
pub fn reveals_label(user_text: &str, gold: FallacyLabel) -> bool {
    let lower = user_text.to_lowercase();
    let contract = parser::contract_line(gold).to_lowercase();
    let inline = format!("{} ({})", gold.name().to_lowercase(), gold.code());
    lower.contains(&contract) || lower.contains(&inline)
}

fn check_resume(run_id: &str, prev: &RunManifest, cfg: &RunConfig, digest: &str) -> Result<(), RunError> {
    if prev.dataset_digest != digest {
        return Err(RunError::DigestMismatch {
            run_id: run_id.to_string(),
            recorded: prev.dataset_digest.clone(),
            actual: digest.to_string(),
        });
    }
    let a = &prev.config;
    let mut diffs = Vec::new();
    if a.model_name != cfg.model_name {
        diffs.push(format!("model {} vs {}", a.model_name, cfg.model_name));
    }
    if a.temperature != cfg.temperature || a.top_p != cfg.top_p || a.top_k != cfg.top_k {
        diffs.push("decoding parameters".to_string());
    }
    if a.seed != cfg.seed {
        diffs.push("seed".to_string());
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(RunError::ConfigMismatch {
            run_id: run_id.to_string(),
            detail: diffs.join(", "),
        })
    }
}

fn count(snippets: &[Snippet], log: &LogContents) -> RunCounts {
    let latest = log.latest();
    let mut counts = RunCounts {
        total: snippets.len(),
        ..RunCounts::default()
    };
    for s in snippets {
        match latest.get(&s.key()).map(|r| r.prediction()) {
            Some(Some(p)) => {
                counts.completed += 1;
                if p.is_none() {
                    counts.unparsable += 1;
                }
            }
            Some(None) => counts.failed += 1,
            None => {}
        }
    }
    counts
}

async fn run_locked<B: ChatBackend>(
    cfg: &RunConfig,
    snippets: &[Snippet],
    out_dir: &Path,
    gateway: &Gateway<B>,
    forge: &PromptForge,
) -> Result<RunManifest, RunError> {
    let prompts = prepare(cfg, snippets, forge)?;
    let run_id = cfg.run_id();
    let digest = crate::dataset::dataset_digest(snippets);
    let dir = run_dir(out_dir, &run_id);
    fs::create_dir_all(&dir).map_err(log::io_err(&dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let log_path = dir.join(RECORDS_FILE);

    let previous = log::read_manifest(&manifest_path)?;
    if let Some(prev) = &previous {
        check_resume(&run_id, prev, cfg, &digest)?;
    }
    let existing = read_log(&log_path)?;
    let known: HashSet<SnippetKey> = snippets.iter().map(Snippet::key).collect();
    if let Some(r) = existing.records.iter().find(|r| !known.contains(&r.snippet_key)) {
        return Err(RunError::UnknownSnippet {
            run_id,
            key: r.snippet_key.clone(),
        });
    }
    let done: HashSet<SnippetKey> = existing
        .latest()
        .into_iter()
        .filter(|(_, r)| r.is_completed())
        .map(|(k, _)| k)
        .collect();

    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        framework: cfg.framework,
        condition: cfg.condition,
        config: cfg.clone(),
        top_k_status: gateway.top_k_status(),
        dataset_digest: digest,
        counts: count(snippets, &existing),
        started_at: previous.as_ref().map_or_else(Utc::now, |p| p.started_at),
        finished_at: None,
    };
    log::write_manifest(&manifest_path, &manifest)?;

    let pending: Vec<(&Snippet, &PromptSpec)> = snippets
        .iter()
        .zip(&prompts)
        .filter(|(s, _)| !done.contains(&s.key()))
        .collect();
    info!(run_id = %run_id, pending = pending.len(), skipped = done.len(), "starting run");

    let mut writer = log::LogWriter::open(&log_path, existing.valid_len)?;
    let requests: Vec<CompletionRequest> = pending
        .iter()
        .map(|(s, p)| CompletionRequest::new(request_id(&run_id, &s.key()), p, cfg))
        .collect();
    let mut results = std::pin::pin!(gateway.complete_stream(requests, cfg));
    let mut i = 0;
    while let Some(result) = results.next().await {
        let (snippet, prompt) = pending[i];
        i += 1;
        let key = snippet.key();
        let record = match result {
            Ok(c) => RunRecord {
                run_id: run_id.clone(),
                framework: cfg.framework,
                condition: cfg.condition,
                request_id: c.request_id,
                prompt_hash: prompt.digest(),
                outcome: match parser::parse(&c.raw_text) {
                    Ok(prediction) => RecordOutcome::Parsed { prediction },
                    Err(e) => e.into(),
                },
                raw_text: Some(c.raw_text),
                finish_reason: Some(c.finish_reason),
                attempts: c.attempt_count,
                latency_ms: c.latency.as_millis() as u64,
                timestamp: Utc::now(),
                snippet_key: key,
            },
            Err(e) => RunRecord {
                run_id: run_id.clone(),
                framework: cfg.framework,
                condition: cfg.condition,
                request_id: request_id(&run_id, &key),
                prompt_hash: prompt.digest(),
                raw_text: None,
                finish_reason: None,
                attempts: e.attempts,
                latency_ms: 0,
                outcome: RecordOutcome::GatewayFailed { error: e },
                timestamp: Utc::now(),
                snippet_key: key,
            },
        };
        writer.append(&record)?;
    }
    writer.sync()?;

    let log = read_log(&log_path)?;
    manifest.counts = count(snippets, &log);
    manifest.finished_at = Some(Utc::now());
    log::write_manifest(&manifest_path, &manifest)?;
    info!(run_id = %run_id, completed = manifest.counts.completed, failed = manifest.counts.failed, "run finished");
    Ok(manifest)
}

/// Latest prediction per snippet key from a log.
pub fn predictions(log: &LogContents) -> BTreeMap<SnippetKey, Option<Option<FallacyLabel>>> {
    log.latest().into_iter().map(|(k, r)| (k, r.prediction())).collect()
}
