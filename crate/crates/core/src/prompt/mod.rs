//! Renders the framework x condition prompts.
//!
//! The system message carries the framework (instructions, definitions,
//! rules). The user message is a sequence of blocks: the statement, then the
//! date and context for the enriched conditions, then the tone descriptors
//! for context+audio, and always the output contract last.

mod templates;
mod tone;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use templates::{fill, TemplateSet, TEMPLATE_FILES};
pub use tone::{
    all_descriptors, bucketize, descriptor, ToneBucket, ToneDimension, ToneLevel, TONE_THRESHOLD,
};

use crate::model::{Condition, EmotionalTone, Framework, Snippet};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{dimension} value {value} is outside [-1, 1]")]
    ToneOutOfRange { dimension: &'static str, value: f64 },
    #[error("condition context-audio requires a tone, but snippet {0} has none")]
    MissingTone(String),
    #[error("unknown template placeholder {{{{{0}}}}}")]
    UnknownPlaceholder(String),
    #[error("unclosed template placeholder near {0:?}")]
    UnclosedPlaceholder(String),
    #[error("cannot read template {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A fully rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub framework: Framework,
    pub condition: Condition,
    pub system_text: String,
    pub user_text: String,
    pub required_output_contract: String,
}

impl PromptSpec {
    /// Hex SHA-256 over both messages, length-prefixed so that moving text
    /// between them changes the digest.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for part in [&self.system_text, &self.user_text] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Renders prompts from a [`TemplateSet`].
#[derive(Debug, Clone, Default)]
pub struct PromptForge {
    templates: TemplateSet,
}

impl PromptForge {
    pub fn new(templates: TemplateSet) -> Self {
        Self { templates }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn render(
        &self,
        framework: Framework,
        snippet: &Snippet,
        condition: Condition,
    ) -> Result<PromptSpec, PromptError> {
        let user_text = self.user_text(snippet, condition)?;
        let system_text = self.system_text(framework)?;
        Ok(PromptSpec {
            framework,
            condition,
            system_text,
            user_text,
            required_output_contract: self.templates.output_contract.clone(),
        })
    }

    pub fn render_basic(&self, snippet: &Snippet, condition: Condition) -> Result<PromptSpec, PromptError> {
        self.render(Framework::Basic, snippet, condition)
    }

    pub fn render_pd(&self, snippet: &Snippet, condition: Condition) -> Result<PromptSpec, PromptError> {
        self.render(Framework::PragmaDialectics, snippet, condition)
    }

    pub fn render_pta(&self, snippet: &Snippet, condition: Condition) -> Result<PromptSpec, PromptError> {
        self.render(Framework::PeriodicTable, snippet, condition)
    }

    /// The framework's system message; independent of the snippet.
    pub fn system_text(&self, framework: Framework) -> Result<String, PromptError> {
        let t = &self.templates;
        match framework {
            Framework::Basic => fill(&t.basic_system, &[("taxonomy", &t.taxonomy)]),
            Framework::PragmaDialectics => fill(
                &t.pd_system,
                &[("pd_rules", &t.pd_rules), ("taxonomy", &t.taxonomy)],
            ),
            Framework::PeriodicTable => fill(
                &t.pta_system,
                &[
                    ("pta_decomposition", &t.pta_decomposition),
                    ("pta_constraints", &t.pta_constraints),
                    ("pta_mapping", &t.pta_mapping),
                    ("pta_hierarchy", &t.pta_hierarchy),
                ],
            ),
        }
    }

    /// The user message blocks in order; joined by blank lines to form the
    /// user text.
    pub fn user_blocks(&self, snippet: &Snippet, condition: Condition) -> Result<Vec<String>, PromptError> {
        let t = &self.templates;
        let tone = match (condition.requires_tone(), snippet.tone) {
            (true, None) => return Err(PromptError::MissingTone(snippet.key().to_string())),
            (true, Some(tone)) => Some(tone),
            (false, _) => None,
        };
        let mut blocks = vec![fill(&t.user_statement, &[("text", snippet.text.trim())])?];
        if condition.includes_context() {
            let date = snippet.debate_date.format("%Y-%m-%d").to_string();
            let context = snippet.context.trim();
            let context = if context.is_empty() { "(none)" } else { context };
            blocks.push(fill(&t.user_context, &[("date", &date), ("context", context)])?);
        }
        if let Some(tone) = tone {
            blocks.push(self.tone_block(&tone)?);
        }
        blocks.push(t.output_contract.clone());
        Ok(blocks)
    }

    pub fn user_text(&self, snippet: &Snippet, condition: Condition) -> Result<String, PromptError> {
        Ok(self.user_blocks(snippet, condition)?.join("\n\n"))
    }

    fn tone_block(&self, tone: &EmotionalTone) -> Result<String, PromptError> {
        let a = bucketize(tone.arousal(), ToneDimension::Arousal)?;
        let d = bucketize(tone.dominance(), ToneDimension::Dominance)?;
        let v = bucketize(tone.valence(), ToneDimension::Valence)?;
        fill(
            &self.templates.user_tone,
            &[
                ("arousal_level", a.level.as_str()),
                ("arousal_descriptor", a.descriptor),
                ("dominance_level", d.level.as_str()),
                ("dominance_descriptor", d.descriptor),
                ("valence_level", v.level.as_str()),
                ("valence_descriptor", v.descriptor),
            ],
        )
    }
}
