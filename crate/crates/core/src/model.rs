//! Shared domain types: the six-way fallacy taxonomy, tone triples, debate
//! snippets, prompting frameworks, input conditions and run configuration.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Errors raised when constructing domain values from untrusted input.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("fallacy code {0} is out of range (expected 0..=5)")]
    CodeOutOfRange(i64),
    #[error("unknown fallacy name {0:?}")]
    UnknownName(String),
    #[error("{dimension} value {value} is outside [-1, 1]")]
    ToneOutOfRange { dimension: &'static str, value: f64 },
    #[error("unknown framework {0:?} (expected basic, pd or pta)")]
    UnknownFramework(String),
    #[error("unknown condition {0:?} (expected base, context or context-audio)")]
    UnknownCondition(String),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
}

/// One of the six fallacy categories. The discriminant is the label code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FallacyLabel {
    AppealToEmotion = 0,
    AppealToAuthority = 1,
    AdHominem = 2,
    FalseCause = 3,
    SlipperySlope = 4,
    Slogans = 5,
}

impl FallacyLabel {
    pub const COUNT: usize = 6;

    /// All labels in code order.
    pub const ALL: [FallacyLabel; 6] = [
        FallacyLabel::AppealToEmotion,
        FallacyLabel::AppealToAuthority,
        FallacyLabel::AdHominem,
        FallacyLabel::FalseCause,
        FallacyLabel::SlipperySlope,
        FallacyLabel::Slogans,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Row/column position in a confusion matrix.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FallacyLabel::AppealToEmotion => "Appeal to Emotion",
            FallacyLabel::AppealToAuthority => "Appeal to Authority",
            FallacyLabel::AdHominem => "Ad Hominem",
            FallacyLabel::FalseCause => "False Cause",
            FallacyLabel::SlipperySlope => "Slippery Slope",
            FallacyLabel::Slogans => "Slogans",
        }
    }

    pub fn from_code(code: i64) -> Result<Self, DomainError> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
            .ok_or(DomainError::CodeOutOfRange(code))
    }

    /// Case-insensitive match on the canonical name; runs of whitespace are
    /// collapsed before comparison.
    pub fn from_name(name: &str) -> Result<Self, DomainError> {
        let wanted = normalize_name(name);
        Self::ALL
            .into_iter()
            .find(|label| normalize_name(label.name()) == wanted)
            .ok_or_else(|| DomainError::UnknownName(name.to_string()))
    }
}

fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for FallacyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<i64> for FallacyLabel {
    type Error = DomainError;

    fn try_from(code: i64) -> Result<Self, Self::Error> {
        Self::from_code(code)
    }
}

impl FromStr for FallacyLabel {
    type Err = DomainError;

    /// Accepts either a numeric code or a canonical name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        match trimmed.parse::<i64>() {
            Ok(code) => Self::from_code(code),
            Err(_) => Self::from_name(trimmed),
        }
    }
}

// Serialized as the integer code; deserializes from a code or a name.
impl Serialize for FallacyLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for FallacyLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Code(i64),
            Name(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Code(code) => Self::from_code(code),
            Raw::Name(name) => name.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Arousal, dominance and valence of a spoken snippet, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmotionalTone {
    arousal: f64,
    dominance: f64,
    valence: f64,
}

impl EmotionalTone {
    pub fn new(arousal: f64, dominance: f64, valence: f64) -> Result<Self, DomainError> {
        for (dimension, value) in [
            ("arousal", arousal),
            ("dominance", dominance),
            ("valence", valence),
        ] {
            if !value.is_finite() || !(-1.0..=1.0).contains(&value) {
                return Err(DomainError::ToneOutOfRange { dimension, value });
            }
        }
        Ok(Self {
            arousal,
            dominance,
            valence,
        })
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }

    pub fn dominance(&self) -> f64 {
        self.dominance
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }
}

impl<'de> Deserialize<'de> for EmotionalTone {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            arousal: f64,
            dominance: f64,
            valence: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        Self::new(raw.arousal, raw.dominance, raw.valence).map_err(serde::de::Error::custom)
    }
}

/// Identity of a snippet within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SnippetKey {
    pub date: NaiveDate,
    pub snippet_id: String,
}

impl fmt::Display for SnippetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.date, self.snippet_id)
    }
}

/// One debate statement with its gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub snippet_id: String,
    pub debate_date: NaiveDate,
    pub text: String,
    pub context: String,
    pub gold_label: FallacyLabel,
    pub tone: Option<EmotionalTone>,
    pub audio_path: Option<String>,
}

impl Snippet {
    pub fn key(&self) -> SnippetKey {
        SnippetKey {
            date: self.debate_date,
            snippet_id: self.snippet_id.clone(),
        }
    }
}

/// Prompting framework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Framework {
    Basic,
    #[serde(rename = "pd")]
    PragmaDialectics,
    #[serde(rename = "pta")]
    PeriodicTable,
}

impl Framework {
    pub const ALL: [Framework; 3] = [
        Framework::Basic,
        Framework::PragmaDialectics,
        Framework::PeriodicTable,
    ];

    /// Short identifier used in run ids and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            Framework::Basic => "basic",
            Framework::PragmaDialectics => "pd",
            Framework::PeriodicTable => "pta",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Framework::Basic => "Basic",
            Framework::PragmaDialectics => "Pragma-Dialectics",
            Framework::PeriodicTable => "Periodic Table of Arguments",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Framework {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basic" => Ok(Framework::Basic),
            "pd" | "pragma-dialectics" => Ok(Framework::PragmaDialectics),
            "pta" | "periodic-table" => Ok(Framework::PeriodicTable),
            _ => Err(DomainError::UnknownFramework(s.to_string())),
        }
    }
}

/// Input enrichment level. Ordering follows B, C, C+A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Base,
    Context,
    ContextAudio,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Base, Condition::Context, Condition::ContextAudio];

    pub fn slug(self) -> &'static str {
        match self {
            Condition::Base => "base",
            Condition::Context => "context",
            Condition::ContextAudio => "context-audio",
        }
    }

    /// Column header used in report tables.
    pub fn short(self) -> &'static str {
        match self {
            Condition::Base => "B",
            Condition::Context => "C",
            Condition::ContextAudio => "C + A",
        }
    }

    pub fn includes_context(self) -> bool {
        !matches!(self, Condition::Base)
    }

    pub fn requires_tone(self) -> bool {
        matches!(self, Condition::ContextAudio)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Condition {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" | "b" => Ok(Condition::Base),
            "context" | "c" => Ok(Condition::Context),
            "context-audio" | "context+audio" | "c+a" => Ok(Condition::ContextAudio),
            _ => Err(DomainError::UnknownCondition(s.to_string())),
        }
    }
}

/// Decoding temperature used for every run unless overridden.
pub const DEFAULT_TEMPERATURE: f64 = 0.6;
/// Nucleus sampling mass.
pub const DEFAULT_TOP_P: f64 = 0.95;
/// Top-k cutoff.
pub const DEFAULT_TOP_K: u32 = 20;
pub const DEFAULT_MODEL: &str = "Qwen/Qwen3-8B";
pub const DEFAULT_ENDPOINT: &str = "http://localhost:8000/v1";

/// Everything needed to execute one framework x condition cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub framework: Framework,
    pub condition: Condition,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub endpoint_url: String,
    pub model_name: String,
    pub max_concurrency: usize,
    pub seed: Option<u64>,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
    pub max_retries: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            framework: Framework::Basic,
            condition: Condition::Base,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            top_k: DEFAULT_TOP_K,
            endpoint_url: DEFAULT_ENDPOINT.to_string(),
            model_name: DEFAULT_MODEL.to_string(),
            max_concurrency: 4,
            seed: None,
            request_timeout: Duration::from_secs(300),
            max_retries: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(DomainError::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DomainError::InvalidConfig(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k < 1 {
            return Err(DomainError::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.max_concurrency < 1 {
            return Err(DomainError::InvalidConfig(
                "max_concurrency must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Identifier of the cell, e.g. `pd-context-audio`.
    pub fn run_id(&self) -> String {
        format!("{}-{}", self.framework.slug(), self.condition.slug())
    }

    pub fn with_cell(&self, framework: Framework, condition: Condition) -> Self {
        Self {
            framework,
            condition,
            ..self.clone()
        }
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}
