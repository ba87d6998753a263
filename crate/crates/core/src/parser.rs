//! Extracts a fallacy label from free-form model output.
//!
//! Cascade, applied to the visible text after removing `<think>` segments:
//!
//! 1. the contract line `LABEL: <code> — <name>` (last occurrence wins);
//! 2. an inline `Name (code)` mention such as `Slogans (5)` (last wins);
//! 3. the canonical fallacy name that ends closest to the end of the text.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::FallacyLabel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("no label could be extracted from the response")]
    UnparsableResponse { raw_text: String },
    #[error("contract line names code {code} but {name:?}")]
    ContradictoryLabel { code: i64, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRoute {
    ContractLine,
    InlineCodePattern,
    NameFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub label: FallacyLabel,
    pub justification: String,
    pub parse_route: ParseRoute,
    pub confidence_note: String,
}

const NAME_ALTERNATION: &str =
    r"appeal\s+to\s+emotion|appeal\s+to\s+authority|ad\s+hominem|false\s+cause|slippery\s+slope|slogans?";

static THINK_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<think>.*?</think>").unwrap());

static CONTRACT_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?im)^[\s>*_#`-]*LABEL[*_`]*\s*[:：][*_`\s]*(?P<code>-?\d+)?[*_`\s]*(?:[—–:.)\-]+\s*)?[*_`]*(?P<name>[A-Za-z][A-Za-z ]*?)?[\s*_`]*(?:\(\s*\d\s*\))?[\s*_`.]*$",
    )
    .unwrap()
});

static INLINE_CODE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)\b(?P<name>{NAME_ALTERNATION})\b[*_'`\x22]*\s*\(\s*(?P<code>\d)\s*\)"
    ))
    .unwrap()
});

static BARE_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)\b(?:{NAME_ALTERNATION})\b")).unwrap());

fn label_from_mention(mention: &str) -> Option<FallacyLabel> {
    let normalized = mention.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.eq_ignore_ascii_case("slogan") {
        return Some(FallacyLabel::Slogans);
    }
    FallacyLabel::from_name(&normalized).ok()
}

/// Removes `<think>…</think>` segments. A dangling `</think>` hides
/// everything before it (templates that pre-fill the opening tag); a dangling
/// `<think>` hides everything after it.
pub fn strip_thinking(raw: &str) -> String {
    let mut visible = THINK_BLOCK.replace_all(raw, "").into_owned();
    let lower = visible.to_ascii_lowercase();
    if let Some(pos) = lower.rfind("</think>") {
        visible = visible[pos + "</think>".len()..].to_string();
    }
    let lower = visible.to_ascii_lowercase();
    if let Some(pos) = lower.find("<think>") {
        visible.truncate(pos);
    }
    visible
}

pub fn parse(raw_text: &str) -> Result<ParsedPrediction, ParseError> {
    let visible = strip_thinking(raw_text);

    if let Some(found) = CONTRACT_LINE.captures_iter(&visible).filter_map(contract_match).last() {
        let (label, span) = found?;
        let mut justification = String::with_capacity(visible.len());
        justification.push_str(&visible[..span.0]);
        justification.push_str(&visible[span.1..]);
        return Ok(ParsedPrediction {
            label,
            justification: justification.trim().to_string(),
            parse_route: ParseRoute::ContractLine,
            confidence_note: "final contract line".into(),
        });
    }

    let inline = INLINE_CODE.captures_iter(&visible).filter_map(|caps| {
        let label = label_from_mention(&caps["name"])?;
        let code: i64 = caps["code"].parse().ok()?;
        (i64::from(label.code()) == code).then(|| (label, caps.get(0).unwrap().as_str().to_string()))
    });
    if let Some((label, mention)) = inline.last() {
        return Ok(ParsedPrediction {
            label,
            justification: visible.trim().to_string(),
            parse_route: ParseRoute::InlineCodePattern,
            confidence_note: format!("inline mention {mention:?}"),
        });
    }

    let mentions: Vec<FallacyLabel> = BARE_NAME
        .find_iter(&visible)
        .filter_map(|m| label_from_mention(m.as_str()))
        .collect();
    if let Some(&label) = mentions.last() {
        let mut distinct = mentions.clone();
        distinct.sort();
        distinct.dedup();
        return Ok(ParsedPrediction {
            label,
            justification: visible.trim().to_string(),
            parse_route: ParseRoute::NameFallback,
            confidence_note: format!(
                "last of {} name mention(s), {} distinct label(s)",
                mentions.len(),
                distinct.len()
            ),
        });
    }

    Err(ParseError::UnparsableResponse {
        raw_text: raw_text.to_string(),
    })
}

type ContractMatch = Result<(FallacyLabel, (usize, usize)), ParseError>;

/// Interprets one contract-line match; `None` when it carries no usable label.
fn contract_match(caps: regex::Captures<'_>) -> Option<ContractMatch> {
    let whole = caps.get(0).unwrap();
    let span = (whole.start(), whole.end());
    let code = caps.name("code").and_then(|m| m.as_str().parse::<i64>().ok());
    let name = caps
        .name("name")
        .map(|m| m.as_str().trim())
        .filter(|n| !n.is_empty());
    let by_name = name.and_then(label_from_mention);
    let by_code = code.and_then(|c| FallacyLabel::from_code(c).ok());
    match (code, name, by_code, by_name) {
        (Some(c), Some(n), Some(a), Some(b)) if a != b => Some(Err(ParseError::ContradictoryLabel {
            code: c,
            name: n.to_string(),
        })),
        (Some(c), Some(n), None, Some(_)) => Some(Err(ParseError::ContradictoryLabel {
            code: c,
            name: n.to_string(),
        })),
        (_, _, Some(a), _) => Some(Ok((a, span))),
        (None, _, None, Some(b)) => Some(Ok((b, span))),
        _ => None,
    }
}

/// The contract line for `label`, as a model is instructed to write it.
pub fn contract_line(label: FallacyLabel) -> String {
    format!("LABEL: {} — {}", label.code(), label.name())
}
