#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use fallacy_core::dataset::{attach_tones, load_pool, PoolFormat, Strictness};
use fallacy_core::gateway::{ChatRequestBody, MockBackend, MockOutcome};
use fallacy_core::parser::contract_line;
use fallacy_core::{Condition, FallacyLabel, Framework, PromptForge, Snippet};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The 12-snippet split with its tone sidecar joined.
pub fn split12() -> Vec<Snippet> {
    let loaded = load_pool(&fixture("split12.jsonl"), PoolFormat::Jsonl, Strictness::Strict).unwrap();
    let joined = attach_tones(loaded.pool, &fixture("tones12.csv"), Strictness::Strict).unwrap();
    assert!(joined.without_tone.is_empty());
    joined.pool.into_snippets()
}

pub const CONDITIONS: [Condition; 3] = [Condition::Base, Condition::Context, Condition::ContextAudio];

/// Plain per-definition metrics, computed pair by pair.
#[derive(Debug)]
pub struct Oracle {
    pub accuracy: f64,
    pub precision: [f64; 6],
    pub recall: [f64; 6],
    pub f1: [f64; 6],
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// `None` predictions count as wrong for every class.
pub fn oracle(gold: &[FallacyLabel], pred: &[Option<FallacyLabel>]) -> Oracle {
    let n = gold.len();
    let mut o = Oracle {
        accuracy: 0.0,
        precision: [0.0; 6],
        recall: [0.0; 6],
        f1: [0.0; 6],
        macro_p: 0.0,
        macro_r: 0.0,
        macro_f1: 0.0,
        weighted_f1: 0.0,
    };
    let correct = gold.iter().zip(pred).filter(|(g, p)| Some(**g) == **p).count();
    o.accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    for c in FallacyLabel::ALL {
        let i = c.code() as usize;
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(pred) {
            let is_gold = *g == c;
            let is_pred = *p == Some(c);
            match (is_gold, is_pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        o.precision[i] = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        o.recall[i] = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let (p, r) = (o.precision[i], o.recall[i]);
        o.f1[i] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let support = tp + fn_;
        o.weighted_f1 += o.f1[i] * support as f64;
    }
    o.weighted_f1 = if n == 0 { 0.0 } else { o.weighted_f1 / n as f64 };
    o.macro_p = o.precision.iter().sum::<f64>() / 6.0;
    o.macro_r = o.recall.iter().sum::<f64>() / 6.0;
    o.macro_f1 = o.f1.iter().sum::<f64>() / 6.0;
    o
}

pub fn fw_index(fw: Framework) -> usize {
    Framework::ALL.iter().position(|f| *f == fw).unwrap()
}

pub fn cond_index(c: Condition) -> usize {
    CONDITIONS.iter().position(|x| *x == c).unwrap()
}

/// Scripted prediction for a cell and snippet position in the split.
/// `None` marks a deliberately unparsable answer.
pub fn scripted(fw: Framework, cond: Condition, pos: usize, gold: FallacyLabel) -> Option<FallacyLabel> {
    let (f, c) = (fw_index(fw), cond_index(cond));
    if f == 2 && c == 2 && pos == 0 {
        return None;
    }
    if (pos + f + c).is_multiple_of(2) {
        Some(gold)
    } else {
        let code = (gold.code() as usize + 1 + f + c) % 6;
        Some(FallacyLabel::ALL[code])
    }
}

/// Completion text for a scripted prediction, rotating through the answer
/// styles the parser accepts.
pub fn response_text(pred: Option<FallacyLabel>, style: usize) -> String {
    let Some(label) = pred else {
        return "I cannot decide which category applies here.".to_string();
    };
    match style % 4 {
        0 => format!("The statement has the hallmarks of this category.\n\n{}", contract_line(label)),
        1 => format!(
            "<think>Could it be {}? Checking the rules again.</think>\nFinal answer below.\n{}",
            FallacyLabel::ALL[(label.index() + 3) % 6].name(),
            contract_line(label)
        ),
        2 => format!("The reasoning fits {} ({}) best.", label.name(), label.code()),
        _ => format!("Overall this reads as {}.", label.name().to_lowercase()),
    }
}

/// Mock that answers each grid prompt with its scripted prediction.
pub fn grid_mock(snippets: &[Snippet], forge: &PromptForge) -> MockBackend {
    let mut answers: HashMap<(String, String), String> = HashMap::new();
    for fw in Framework::ALL {
        let system = forge.system_text(fw).unwrap();
        for cond in CONDITIONS {
            for (pos, s) in snippets.iter().enumerate() {
                let user = forge.user_text(s, cond).unwrap();
                let pred = scripted(fw, cond, pos, s.gold_label);
                let style = pos + fw_index(fw) + cond_index(cond);
                answers.insert((system.clone(), user), response_text(pred, style));
            }
        }
    }
    MockBackend::new(move |body: &ChatRequestBody, _| {
        let key = (body.messages[0].content.clone(), body.messages[1].content.clone());
        match answers.get(&key) {
            Some(text) => MockOutcome::reply(text.clone()),
            None => MockOutcome::reply("unexpected prompt"),
        }
    })
}

#[derive(Debug, serde::Deserialize)]
pub struct CorpusCase {
    pub id: String,
    pub raw: String,
    pub expected: Option<i64>,
    pub route: Option<fallacy_core::ParseRoute>,
}

pub fn parser_corpus() -> Vec<CorpusCase> {
    std::fs::read_to_string(fixture("parser_corpus.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Checks one corpus case, returning a description of any mismatch.
pub fn check_case(case: &CorpusCase) -> Result<(), String> {
    use fallacy_core::{parse, ParseError};
    match (parse(&case.raw), case.expected) {
        (Ok(p), Some(code)) if p.label.code() as i64 == code => match case.route {
            Some(route) if route != p.parse_route => {
                Err(format!("{}: route {:?}, expected {:?}", case.id, p.parse_route, route))
            }
            _ => Ok(()),
        },
        (Err(ParseError::UnparsableResponse { .. }), None) => Ok(()),
        (got, want) => Err(format!("{}: got {got:?}, expected {want:?}", case.id)),
    }
}
