//! Discretizes tone values into low/moderate/high with per-dimension wording.

use std::fmt;

use serde::Serialize;

use super::PromptError;

/// Values strictly below `-TONE_THRESHOLD` are low, strictly above are high.
pub const TONE_THRESHOLD: f64 = 0.33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ToneDimension {
    Arousal,
    Dominance,
    Valence,
}

impl ToneDimension {
    pub const ALL: [ToneDimension; 3] = [
        ToneDimension::Arousal,
        ToneDimension::Dominance,
        ToneDimension::Valence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToneDimension::Arousal => "arousal",
            ToneDimension::Dominance => "dominance",
            ToneDimension::Valence => "valence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ToneLevel {
    Low,
    Moderate,
    High,
}

impl ToneLevel {
    pub const ALL: [ToneLevel; 3] = [ToneLevel::Low, ToneLevel::Moderate, ToneLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            ToneLevel::Low => "low",
            ToneLevel::Moderate => "moderate",
            ToneLevel::High => "high",
        }
    }
}

impl fmt::Display for ToneLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ToneBucket {
    pub level: ToneLevel,
    pub descriptor: &'static str,
}

pub fn descriptor(dimension: ToneDimension, level: ToneLevel) -> &'static str {
    use ToneDimension::*;
    use ToneLevel::*;
    match (dimension, level) {
        (Arousal, High) => "energetic",
        (Arousal, Low) => "lethargic",
        (Arousal, Moderate) => "calm",
        (Dominance, High) => "assertive",
        (Dominance, Low) => "submissive",
        (Dominance, Moderate) => "neutral in control",
        (Valence, High) => "positive",
        (Valence, Low) => "negative",
        (Valence, Moderate) => "emotionally neutral",
    }
}

/// Every descriptor that can appear in a prompt.
pub fn all_descriptors() -> Vec<&'static str> {
    ToneDimension::ALL
        .iter()
        .flat_map(|&d| ToneLevel::ALL.iter().map(move |&l| descriptor(d, l)))
        .collect()
}

pub fn bucketize(value: f64, dimension: ToneDimension) -> Result<ToneBucket, PromptError> {
    if !value.is_finite() || !(-1.0..=1.0).contains(&value) {
        return Err(PromptError::ToneOutOfRange {
            dimension: dimension.name(),
            value,
        });
    }
    let level = if value < -TONE_THRESHOLD {
        ToneLevel::Low
    } else if value > TONE_THRESHOLD {
        ToneLevel::High
    } else {
        ToneLevel::Moderate
    };
    Ok(ToneBucket {
        level,
        descriptor: descriptor(dimension, level),
    })
}
