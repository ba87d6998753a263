//! Snippet pools: loading, tone sidecar joins and class-balanced splits.
//!
//! The canonical interchange format is snippet-JSONL, one object per line:
//!
//! ```text
//! {"snippet_id":"17","date":"1988-09-25","text":"...","context":"...","label":2,
//!  "arousal":0.12,"dominance":0.61,"valence":-0.3}
//! ```
//!
//! `label` may be a code or a canonical name. The three tone keys are either
//! all present or all absent. CSV input uses the same header.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::model::{DomainError, EmotionalTone, FallacyLabel, Snippet, SnippetKey};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{} malformed row(s) in {path}; first: line {}: {}", rejections.len(), rejections[0].line, rejections[0].reason)]
    Malformed {
        path: String,
        rejections: Vec<Rejection>,
    },
    #[error("duplicate snippet key {0}")]
    DuplicateKey(SnippetKey),
    #[error("dataset {0} contains no snippets")]
    EmptyPool(String),
    #[error("tone row at line {line}: {reason}")]
    BadToneRow { line: usize, reason: String },
    #[error("tone row at line {line} references unknown snippet {key}")]
    UnknownToneKey { line: usize, key: SnippetKey },
    #[error("not enough {label} snippets: need {needed}, pool has {available}")]
    InsufficientClass {
        label: FallacyLabel,
        needed: usize,
        available: usize,
    },
    #[error("{} snippet(s) have no tone: {}", .0.len(), join_keys(.0))]
    MissingTone(Vec<SnippetKey>),
    #[error("snippet serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

fn join_keys(keys: &[SnippetKey]) -> String {
    keys.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// A row that could not be turned into a [`Snippet`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the source file (the CSV header is line 1).
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Any malformed row or dangling key is an error.
    #[default]
    Strict,
    /// Malformed rows are skipped and reported.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolFormat {
    Jsonl,
    Csv,
}

impl PoolFormat {
    /// Guesses from the extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => PoolFormat::Csv,
            _ => PoolFormat::Jsonl,
        }
    }
}

/// An ordered, validated collection of snippets.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPool {
    snippets: Vec<Snippet>,
    source_path: String,
}

impl DatasetPool {
    /// Validates key uniqueness and non-empty text.
    pub fn new(snippets: Vec<Snippet>, source_path: impl Into<String>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(snippets.len());
        for snippet in &snippets {
            if !seen.insert(snippet.key()) {
                return Err(DatasetError::DuplicateKey(snippet.key()));
            }
        }
        Ok(Self {
            snippets,
            source_path: source_path.into(),
        })
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn into_snippets(self) -> Vec<Snippet> {
        self.snippets
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}

/// Result of [`load_pool`]: the pool plus rows skipped in lenient mode.
#[derive(Debug)]
pub struct LoadedPool {
    pub pool: DatasetPool,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum IdField {
    Text(String),
    Int(i64),
}

impl IdField {
    fn into_string(self) -> String {
        match self {
            IdField::Text(s) => s,
            IdField::Int(i) => i.to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LabelField {
    Code(i64),
    Text(String),
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    snippet_id: IdField,
    date: String,
    text: String,
    #[serde(default)]
    context: Option<String>,
    label: LabelField,
    #[serde(default)]
    arousal: Option<f64>,
    #[serde(default)]
    dominance: Option<f64>,
    #[serde(default)]
    valence: Option<f64>,
    #[serde(default)]
    audio_path: Option<String>,
}

/// Serialized shape of a snippet; field order is the canonical key order.
#[derive(Debug, Serialize)]
struct CanonicalRecord<'a> {
    snippet_id: &'a str,
    date: String,
    text: &'a str,
    context: &'a str,
    label: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    arousal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dominance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    valence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    audio_path: Option<&'a str>,
}

fn parse_date(raw: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
        .map_err(|e| format!("date {raw:?} is not YYYY-MM-DD: {e}"))
}

impl RawRecord {
    fn into_snippet(self) -> Result<Snippet, String> {
        let debate_date = parse_date(&self.date)?;
        let snippet_id = self.snippet_id.into_string().trim().to_string();
        if snippet_id.is_empty() {
            return Err("empty snippet_id".into());
        }
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        let gold_label = match self.label {
            LabelField::Code(code) => FallacyLabel::from_code(code),
            LabelField::Text(text) => text.parse(),
        }
        .map_err(|e: DomainError| e.to_string())?;
        let tone = match (self.arousal, self.dominance, self.valence) {
            (None, None, None) => None,
            (Some(a), Some(d), Some(v)) => {
                Some(EmotionalTone::new(a, d, v).map_err(|e| e.to_string())?)
            }
            _ => return Err("arousal, dominance and valence must be given together".into()),
        };
        Ok(Snippet {
            snippet_id,
            debate_date,
            text: self.text,
            context: self.context.unwrap_or_default(),
            gold_label,
            tone,
            audio_path: self.audio_path.filter(|p| !p.is_empty()),
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads and validates a snippet file.
pub fn load_pool(
    path: &Path,
    format: PoolFormat,
    strictness: Strictness,
) -> Result<LoadedPool, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let source = path.display().to_string();
    let (snippets, rejections) = match format {
        PoolFormat::Jsonl => parse_jsonl(BufReader::new(file)).map_err(io_err(path))?,
        PoolFormat::Csv => parse_csv(file).map_err(io_err(path))?,
    };
    finish_load(snippets, rejections, source, strictness)
}

/// Parses snippet-JSONL from any reader. Blank lines are ignored.
pub fn read_jsonl<R: Read>(
    reader: R,
    source: &str,
    strictness: Strictness,
) -> Result<LoadedPool, DatasetError> {
    let (snippets, rejections) = parse_jsonl(BufReader::new(reader)).map_err(|source_err| {
        DatasetError::Io {
            path: PathBuf::from(source),
            source: source_err,
        }
    })?;
    finish_load(snippets, rejections, source.to_string(), strictness)
}

fn finish_load(
    snippets: Vec<Snippet>,
    rejections: Vec<Rejection>,
    source: String,
    strictness: Strictness,
) -> Result<LoadedPool, DatasetError> {
    if strictness == Strictness::Strict && !rejections.is_empty() {
        return Err(DatasetError::Malformed {
            path: source,
            rejections,
        });
    }
    for rejection in &rejections {
        warn!(line = rejection.line, reason = %rejection.reason, "skipping malformed row");
    }
    if snippets.is_empty() {
        return Err(DatasetError::EmptyPool(source));
    }
    let pool = DatasetPool::new(snippets, source)?;
    Ok(LoadedPool { pool, rejections })
}

fn parse_jsonl<R: BufRead>(reader: R) -> io::Result<(Vec<Snippet>, Vec<Rejection>)> {
    let mut snippets = Vec::new();
    let mut rejections = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(RawRecord::into_snippet);
        match parsed {
            Ok(snippet) => snippets.push(snippet),
            Err(reason) => rejections.push(Rejection {
                line: idx + 1,
                reason,
            }),
        }
    }
    Ok((snippets, rejections))
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    snippet_id: String,
    date: String,
    text: String,
    #[serde(default)]
    context: Option<String>,
    label: String,
    #[serde(default)]
    arousal: Option<f64>,
    #[serde(default)]
    dominance: Option<f64>,
    #[serde(default)]
    valence: Option<f64>,
    #[serde(default)]
    audio_path: Option<String>,
}

fn parse_csv<R: Read>(reader: R) -> io::Result<(Vec<Snippet>, Vec<Rejection>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(reader);
    let mut snippets = Vec::new();
    let mut rejections = Vec::new();
    for (idx, result) in rdr.deserialize::<CsvRecord>().enumerate() {
        // Header is line 1; multi-line quoted fields make this approximate.
        let line = idx + 2;
        let parsed = result.map_err(|e| e.to_string()).and_then(|rec| {
            RawRecord {
                snippet_id: IdField::Text(rec.snippet_id),
                date: rec.date,
                text: rec.text,
                context: rec.context,
                label: LabelField::Text(rec.label),
                arousal: rec.arousal,
                dominance: rec.dominance,
                valence: rec.valence,
                audio_path: rec.audio_path,
            }
            .into_snippet()
        });
        match parsed {
            Ok(snippet) => snippets.push(snippet),
            Err(reason) => rejections.push(Rejection { line, reason }),
        }
    }
    Ok((snippets, rejections))
}

/// Serializes one snippet as a canonical JSONL line (without the newline).
pub fn snippet_to_json(snippet: &Snippet) -> Result<String, serde_json::Error> {
    serde_json::to_string(&CanonicalRecord {
        snippet_id: &snippet.snippet_id,
        date: snippet.debate_date.format("%Y-%m-%d").to_string(),
        text: &snippet.text,
        context: &snippet.context,
        label: snippet.gold_label.code(),
        arousal: snippet.tone.map(|t| t.arousal()),
        dominance: snippet.tone.map(|t| t.dominance()),
        valence: snippet.tone.map(|t| t.valence()),
        audio_path: snippet.audio_path.as_deref(),
    })
}

pub fn write_jsonl<W: Write>(snippets: &[Snippet], mut out: W) -> Result<(), DatasetError> {
    let mut write = || -> Result<(), DatasetError> {
        for snippet in snippets {
            let line = snippet_to_json(snippet)?;
            writeln!(out, "{line}").map_err(io_err(Path::new("<output>")))?;
        }
        out.flush().map_err(io_err(Path::new("<output>")))
    };
    write()
}

/// SHA-256 over the canonical JSONL serialization, hex encoded.
pub fn dataset_digest(snippets: &[Snippet]) -> String {
    let mut hasher = Sha256::new();
    for snippet in snippets {
        // Canonical records contain only strings and finite numbers.
        let line = snippet_to_json(snippet).expect("canonical snippet serializes");
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Outcome of joining a tone sidecar onto a pool.
#[derive(Debug)]
pub struct ToneJoin {
    pub pool: DatasetPool,
    /// Tone rows that found their snippet.
    pub matched: usize,
    /// Tone rows whose key matched nothing (only possible in lenient mode).
    pub unmatched: Vec<SnippetKey>,
    /// Snippets left without a tone.
    pub without_tone: Vec<SnippetKey>,
}

#[derive(Debug, Deserialize)]
struct ToneRecord {
    date: String,
    snippet_id: String,
    arousal: f64,
    dominance: f64,
    valence: f64,
}

/// Reads a tone sidecar CSV (`date,snippet_id,arousal,dominance,valence`).
/// Lines starting with `#` are comments.
pub fn read_tone_sidecar<R: Read>(
    reader: R,
) -> Result<Vec<(usize, SnippetKey, EmotionalTone)>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::BadToneRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let mut rows = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| DatasetError::BadToneRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let rec: ToneRecord = record
            .deserialize(Some(&headers))
            .map_err(|e| DatasetError::BadToneRow {
                line,
                reason: e.to_string(),
            })?;
        let date = parse_date(&rec.date).map_err(|reason| DatasetError::BadToneRow { line, reason })?;
        let tone = EmotionalTone::new(rec.arousal, rec.dominance, rec.valence).map_err(|e| {
            DatasetError::BadToneRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let key = SnippetKey {
            date,
            snippet_id: rec.snippet_id,
        };
        rows.push((line, key, tone));
    }
    Ok(rows)
}

/// Joins tone values onto the pool by `(date, snippet_id)`.
pub fn attach_tones(
    pool: DatasetPool,
    tone_file: &Path,
    strictness: Strictness,
) -> Result<ToneJoin, DatasetError> {
    let file = File::open(tone_file).map_err(io_err(tone_file))?;
    attach_tones_from(pool, file, strictness)
}

pub fn attach_tones_from<R: Read>(
    pool: DatasetPool,
    reader: R,
    strictness: Strictness,
) -> Result<ToneJoin, DatasetError> {
    let rows = read_tone_sidecar(reader)?;
    let source = pool.source_path.clone();
    let mut snippets = pool.snippets;
    let index: HashMap<SnippetKey, usize> = snippets
        .iter()
        .enumerate()
        .map(|(i, s)| (s.key(), i))
        .collect();
    let mut matched = 0;
    let mut unmatched = Vec::new();
    let mut seen = HashSet::new();
    for (line, key, tone) in rows {
        if !seen.insert(key.clone()) {
            return Err(DatasetError::BadToneRow {
                line,
                reason: format!("duplicate tone row for {key}"),
            });
        }
        match index.get(&key) {
            Some(&i) => {
                snippets[i].tone = Some(tone);
                matched += 1;
            }
            None if strictness == Strictness::Strict => {
                return Err(DatasetError::UnknownToneKey { line, key });
            }
            None => {
                warn!(line, %key, "tone row references no snippet");
                unmatched.push(key);
            }
        }
    }
    let without_tone = snippets
        .iter()
        .filter(|s| s.tone.is_none())
        .map(Snippet::key)
        .collect();
    Ok(ToneJoin {
        pool: DatasetPool {
            snippets,
            source_path: source,
        },
        matched,
        unmatched,
        without_tone,
    })
}

/// Class-balanced validation and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedSplit {
    pub validation: Vec<Snippet>,
    pub test: Vec<Snippet>,
    pub per_class_val: usize,
    pub per_class_test: usize,
    pub seed: u64,
}

/// Draws `per_class_val + per_class_test` snippets of every label without
/// replacement. Each class is shuffled with a ChaCha8 stream seeded from
/// `seed`; the first draws go to validation and the rest to test. Output is
/// grouped by label code, in draw order within a label.
pub fn balanced_sample(
    pool: &DatasetPool,
    per_class_val: usize,
    per_class_test: usize,
    seed: u64,
) -> Result<BalancedSplit, DatasetError> {
    let needed = per_class_val + per_class_test;
    let mut by_label: BTreeMap<FallacyLabel, Vec<&Snippet>> =
        FallacyLabel::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for snippet in &pool.snippets {
        by_label.entry(snippet.gold_label).or_default().push(snippet);
    }
    for (&label, members) in &by_label {
        if members.len() < needed {
            return Err(DatasetError::InsufficientClass {
                label,
                needed,
                available: members.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut validation = Vec::with_capacity(per_class_val * FallacyLabel::COUNT);
    let mut test = Vec::with_capacity(per_class_test * FallacyLabel::COUNT);
    for members in by_label.values_mut() {
        members.shuffle(&mut rng);
        validation.extend(members[..per_class_val].iter().map(|s| (*s).clone()));
        test.extend(members[per_class_val..needed].iter().map(|s| (*s).clone()));
    }
    Ok(BalancedSplit {
        validation,
        test,
        per_class_val,
        per_class_test,
        seed,
    })
}

/// Per-label arithmetic mean of each tone component.
pub fn tone_distribution(
    snippets: &[Snippet],
) -> Result<BTreeMap<FallacyLabel, EmotionalTone>, DatasetError> {
    let missing: Vec<_> = snippets
        .iter()
        .filter(|s| s.tone.is_none())
        .map(Snippet::key)
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingTone(missing));
    }
    let mut sums: BTreeMap<FallacyLabel, ([f64; 3], usize)> = BTreeMap::new();
    for snippet in snippets {
        let tone = snippet.tone.expect("checked above");
        let (acc, n) = sums.entry(snippet.gold_label).or_insert(([0.0; 3], 0));
        acc[0] += tone.arousal();
        acc[1] += tone.dominance();
        acc[2] += tone.valence();
        *n += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(label, (acc, n))| {
            let n = n as f64;
            // Means of in-range values stay in range; clamp absorbs rounding.
            let mean = |x: f64| (x / n).clamp(-1.0, 1.0);
            let tone = EmotionalTone::new(mean(acc[0]), mean(acc[1]), mean(acc[2]))
                .expect("mean of valid tones is valid");
            (label, tone)
        })
        .collect())
}
