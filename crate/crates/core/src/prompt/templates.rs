//! Prompt text fixtures and `{{key}}` substitution.

use std::fs;
use std::path::Path;

use super::PromptError;

/// Fixture file names, in the order they are loaded.
pub const TEMPLATE_FILES: [&str; 13] = [
    "taxonomy.txt",
    "basic_system.txt",
    "pd_rules.txt",
    "pd_system.txt",
    "pta_decomposition.txt",
    "pta_constraints.txt",
    "pta_mapping.txt",
    "pta_hierarchy.txt",
    "pta_system.txt",
    "user_statement.txt",
    "user_context.txt",
    "user_tone.txt",
    "output_contract.txt",
];

/// The full set of prompt sections. Trailing whitespace of every file is
/// trimmed on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub taxonomy: String,
    pub basic_system: String,
    pub pd_rules: String,
    pub pd_system: String,
    pub pta_decomposition: String,
    pub pta_constraints: String,
    pub pta_mapping: String,
    pub pta_hierarchy: String,
    pub pta_system: String,
    pub user_statement: String,
    pub user_context: String,
    pub user_tone: String,
    pub output_contract: String,
}

macro_rules! builtin {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $name))
    };
}

impl TemplateSet {
    /// Templates compiled into the crate from `templates/`.
    pub fn builtin() -> Self {
        Self::from_sections([
            builtin!("taxonomy.txt"),
            builtin!("basic_system.txt"),
            builtin!("pd_rules.txt"),
            builtin!("pd_system.txt"),
            builtin!("pta_decomposition.txt"),
            builtin!("pta_constraints.txt"),
            builtin!("pta_mapping.txt"),
            builtin!("pta_hierarchy.txt"),
            builtin!("pta_system.txt"),
            builtin!("user_statement.txt"),
            builtin!("user_context.txt"),
            builtin!("user_tone.txt"),
            builtin!("output_contract.txt"),
        ])
    }

    /// Loads every file of [`TEMPLATE_FILES`] from `dir`.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let mut texts = Vec::with_capacity(TEMPLATE_FILES.len());
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|source| PromptError::TemplateIo {
                path: path.display().to_string(),
                source,
            })?;
            texts.push(text);
        }
        let arr: [&str; 13] = std::array::from_fn(|i| texts[i].as_str());
        Ok(Self::from_sections(arr))
    }

    fn from_sections(s: [&str; 13]) -> Self {
        let t = |i: usize| s[i].trim_end().to_string();
        Self {
            taxonomy: t(0),
            basic_system: t(1),
            pd_rules: t(2),
            pd_system: t(3),
            pta_decomposition: t(4),
            pta_constraints: t(5),
            pta_mapping: t(6),
            pta_hierarchy: t(7),
            pta_system: t(8),
            user_statement: t(9),
            user_context: t(10),
            user_tone: t(11),
            output_contract: t(12),
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Single-pass substitution of `{{key}}` placeholders. Substituted values are
/// never re-scanned, so snippet text containing braces is inserted verbatim.
/// Unknown placeholders are an error.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::UnclosedPlaceholder(truncate(after)))?;
        let key = after[..end].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::UnknownPlaceholder(key.to_string()))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn truncate(s: &str) -> String {
    s.chars().take(24).collect()
}
