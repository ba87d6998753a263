//! Synthetic inputs shared by the benchmarks.

use chrono::NaiveDate;
use fallacy_core::{EmotionalTone, FallacyLabel, Snippet};

/// `n` snippets cycling through the labels, each with a tone triple.
pub fn snippets(n: usize) -> Vec<Snippet> {
    (0..n)
        .map(|i| {
            let label = FallacyLabel::ALL[i % FallacyLabel::COUNT];
            let x = ((i * 37) % 200) as f64 / 100.0 - 1.0;
            Snippet {
                snippet_id: format!("s{i:05}"),
                debate_date: NaiveDate::from_ymd_opt(1960 + (i % 60) as i32, 10, 1 + (i % 28) as u32).unwrap(),
                text: format!("We cannot afford four more years of this, statement number {i}."),
                context: "The moderator asked about the economy and the candidate replied.".into(),
                gold_label: label,
                tone: Some(EmotionalTone::new(x, -x / 2.0, x / 3.0).unwrap()),
                audio_path: None,
            }
        })
        .collect()
}

/// Deterministic pseudo-random label sequence.
pub fn labels(n: usize, salt: u64) -> Vec<FallacyLabel> {
    let mut state = salt.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            FallacyLabel::ALL[((state >> 33) % 6) as usize]
        })
        .collect()
}
