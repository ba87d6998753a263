use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::log::{io_err, read_manifest};
use super::{read_log, RunError, RunManifest, RunRecord, MANIFEST_FILE, RECORDS_FILE};
use crate::dataset::{dataset_digest, Strictness};
use crate::metrics::{difference, render_difference, render_matrix, render_tables, report, ConfusionMatrix, DifferenceMatrix, EvalReport};
use crate::model::{Condition, Framework, Snippet, SnippetKey};

/// Scores of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub framework: Framework,
    pub condition: Condition,
    pub report: EvalReport,
    /// Snippets left out because the run has no completion for them.
    pub missing: Vec<SnippetKey>,
    /// Counts of this run minus counts of the base run.
    pub difference: Option<DifferenceMatrix>,
    pub base_run_id: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub runs: Vec<RunSummary>,
    #[serde(skip)]
    pub markdown: String,
}

/// Reads the manifest and log of a run directory.
pub fn load_run(dir: &Path) -> Result<(RunManifest, Vec<RunRecord>), RunError> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?.ok_or_else(|| RunError::NoManifest(dir.to_path_buf()))?;
    let log = read_log(&dir.join(RECORDS_FILE))?;
    Ok((manifest, log.records))
}

struct Scored {
    manifest: RunManifest,
    matrix: ConfusionMatrix,
    missing: Vec<SnippetKey>,
}

fn score(dir: &Path, dataset: &[Snippet], digest: &str, strictness: Strictness) -> Result<Scored, RunError> {
    let (manifest, records) = load_run(dir)?;
    if manifest.dataset_digest != digest {
        return Err(RunError::DigestMismatch {
            run_id: manifest.run_id,
            recorded: manifest.dataset_digest,
            actual: digest.to_string(),
        });
    }
    let gold: HashMap<SnippetKey, _> = dataset.iter().map(|s| (s.key(), s.gold_label)).collect();
    let mut latest: BTreeMap<SnippetKey, &RunRecord> = BTreeMap::new();
    for r in &records {
        if !gold.contains_key(&r.snippet_key) {
            return Err(RunError::UnknownSnippet {
                run_id: manifest.run_id.clone(),
                key: r.snippet_key.clone(),
            });
        }
        latest.insert(r.snippet_key.clone(), r);
    }
    let mut matrix = ConfusionMatrix::default();
    let mut missing = Vec::new();
    for s in dataset {
        match latest.get(&s.key()).and_then(|r| r.prediction()) {
            Some(pred) => matrix.record(s.gold_label, pred),
            None => missing.push(s.key()),
        }
    }
    if !missing.is_empty() && strictness == Strictness::Strict {
        return Err(RunError::MissingSnippets {
            run_id: manifest.run_id,
            keys: missing,
        });
    }
    Ok(Scored {
        manifest,
        matrix,
        missing,
    })
}

/// Scores run directories against `dataset`, joining gold labels by snippet
/// key.
///
/// Difference matrices are taken against `base` when given. Otherwise each
/// run is compared with the Base-condition run of its framework when that run
/// is among `runs`. In strict mode a snippet without a completed record is an
/// error; in lenient mode it is left out and listed.
pub fn build_report(
    runs: &[PathBuf],
    base: Option<&Path>,
    dataset: &[Snippet],
    strictness: Strictness,
) -> Result<ReportBundle, RunError> {
    let digest = dataset_digest(dataset);
    let scored = runs
        .iter()
        .map(|dir| score(dir, dataset, &digest, strictness))
        .collect::<Result<Vec<_>, _>>()?;
    let explicit_base = base.map(|b| score(b, dataset, &digest, strictness)).transpose()?;

    let mut summaries = Vec::with_capacity(scored.len());
    for s in &scored {
        let base_run = match &explicit_base {
            Some(b) => Some(b),
            None if s.manifest.condition != Condition::Base => scored
                .iter()
                .find(|o| o.manifest.framework == s.manifest.framework && o.manifest.condition == Condition::Base),
            None => None,
        };
        summaries.push(RunSummary {
            run_id: s.manifest.run_id.clone(),
            framework: s.manifest.framework,
            condition: s.manifest.condition,
            report: report(&s.matrix),
            missing: s.missing.clone(),
            difference: base_run.map(|b| difference(&s.matrix, &b.matrix)),
            base_run_id: base_run.map(|b| b.manifest.run_id.clone()),
        });
    }
    summaries.sort_by_key(|s| (s.framework, s.condition));
    let markdown = render_markdown(&summaries);
    Ok(ReportBundle {
        runs: summaries,
        markdown,
    })
}

fn render_markdown(runs: &[RunSummary]) -> String {
    let mut out = String::from("# Results\n");
    for framework in Framework::ALL {
        let group: Vec<&RunSummary> = runs.iter().filter(|r| r.framework == framework).collect();
        if group.is_empty() {
            continue;
        }
        let _ = write!(out, "\n## {}\n\n", framework.title());
        let by_condition: BTreeMap<Condition, EvalReport> =
            group.iter().map(|r| (r.condition, r.report.clone())).collect();
        out.push_str(&render_tables(&by_condition));
        for r in &group {
            let _ = write!(
                out,
                "\n### Confusion matrix: {} / {}\n\n{}",
                framework.title(),
                r.condition.short(),
                render_matrix(&r.report.matrix)
            );
            if let (Some(diff), Some(base)) = (&r.difference, &r.base_run_id) {
                let _ = write!(
                    out,
                    "\n### Difference: {} vs {}\n\n{}",
                    r.run_id,
                    base,
                    render_difference(diff)
                );
            }
            if !r.missing.is_empty() {
                let _ = writeln!(out, "\nExcluded from {} (no completion): {}", r.run_id, r.missing.len());
                for k in &r.missing {
                    let _ = writeln!(out, "- {k}");
                }
            }
        }
    }
    out
}

/// Writes `report.md` and `report.json` into `dir`.
pub fn write_report(bundle: &ReportBundle, dir: &Path) -> Result<(PathBuf, PathBuf), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let md = dir.join("report.md");
    let json = dir.join("report.json");
    fs::write(&md, &bundle.markdown).map_err(io_err(&md))?;
    let mut text = serde_json::to_string_pretty(bundle).map_err(RunError::Json)?;
    text.push('\n');
    fs::write(&json, text).map_err(io_err(&json))?;
    Ok((md, json))
}
