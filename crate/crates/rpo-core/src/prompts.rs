//! Meta-prompt templates for the feedbacker, rewriter, and prompt-writer
//! agents. Defaults are compiled in; any of them can be replaced by an
//! editable text file named in the run config. Placeholders use `{name}`
//! syntax and are replaced verbatim.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {name} from {path}: {source}")]
    Io {
        name: String,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown template name {0}")]
    UnknownName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    text: String,
}

impl Template {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (name, value) in vars {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

pub const TEMPLATE_NAMES: [&str; 7] = [
    "mc_feedbacker",
    "td_feedbacker",
    "td_summary",
    "aggregate_feedback",
    "basic_rewriter",
    "replay_rewriter",
    "prompt_writer",
];

/// The full template set one run works with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPrompts {
    pub mc_feedbacker: Template,
    pub td_feedbacker: Template,
    pub td_summary: Template,
    pub aggregate_feedback: Template,
    pub basic_rewriter: Template,
    pub replay_rewriter: Template,
    pub prompt_writer: Template,
}

impl Default for MetaPrompts {
    fn default() -> Self {
        Self {
            mc_feedbacker: Template::new(include_str!("../templates/mc_feedbacker.txt")),
            td_feedbacker: Template::new(include_str!("../templates/td_feedbacker.txt")),
            td_summary: Template::new(include_str!("../templates/td_summary.txt")),
            aggregate_feedback: Template::new(include_str!("../templates/aggregate_feedback.txt")),
            basic_rewriter: Template::new(include_str!("../templates/basic_rewriter.txt")),
            replay_rewriter: Template::new(include_str!("../templates/replay_rewriter.txt")),
            prompt_writer: Template::new(include_str!("../templates/prompt_writer.txt")),
        }
    }
}

impl MetaPrompts {
    /// Defaults with selected templates replaced from files;
    /// `overrides` maps template name to file path.
    pub fn with_overrides(
        base_dir: &Path,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self, TemplateError> {
        let mut prompts = Self::default();
        for (name, rel_path) in overrides {
            let path = base_dir.join(rel_path);
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                name: name.clone(),
                path: path.display().to_string(),
                source,
            })?;
            let slot = match name.as_str() {
                "mc_feedbacker" => &mut prompts.mc_feedbacker,
                "td_feedbacker" => &mut prompts.td_feedbacker,
                "td_summary" => &mut prompts.td_summary,
                "aggregate_feedback" => &mut prompts.aggregate_feedback,
                "basic_rewriter" => &mut prompts.basic_rewriter,
                "replay_rewriter" => &mut prompts.replay_rewriter,
                "prompt_writer" => &mut prompts.prompt_writer,
                other => return Err(TemplateError::UnknownName(other.to_string())),
            };
            *slot = Template::new(text);
        }
        Ok(prompts)
    }
}
