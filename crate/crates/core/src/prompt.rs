//! Prompt templates and prompt synthesis.
//!
//! A template has three parts: a system description, an expert instruction and a
//! body. The body carries the literal placeholders `{Input Data}` (exactly once),
//! optionally `{Expert Instruction}` and `{Output Impression}`. Rendering is a single
//! left-to-right substitution, so placeholder-like text inside a finding is never
//! re-expanded.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, RadiologyReport, Reject};

pub const INPUT_DATA: &str = "{Input Data}";
pub const EXPERT_INSTRUCTION: &str = "{Expert Instruction}";
pub const OUTPUT_IMPRESSION: &str = "{Output Impression}";
pub const MAX_TEMPLATES: usize = 5;

const DEFAULT_TEMPLATES: &str = include_str!("../assets/templates.toml");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read template file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template file does not parse: {0}")]
    Parse(String),
    #[error("template file must hold 1 to {MAX_TEMPLATES} templates, found {0}")]
    Count(usize),
    #[error("template {id}: {reason}")]
    Invalid { id: u8, reason: String },
    #[error("duplicate template id {0}")]
    DuplicateId(u8),
    #[error("record {0:?} has an empty finding")]
    EmptyFinding(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(rename = "id")]
    pub template_id: u8,
    #[serde(rename = "system")]
    pub system_description: String,
    pub instruction: String,
    pub body: String,
}

#[derive(Deserialize)]
struct TemplateFile {
    #[serde(default)]
    template: Vec<PromptTemplate>,
}

/// A rendered prompt ready for a backend. `input` keeps the inserted finding so
/// echo-style backends and audits do not need the template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedPrompt {
    pub template_id: u8,
    pub record_id: String,
    #[serde(rename = "prompt")]
    pub rendered_text: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        let invalid = |reason: String| PromptError::Invalid {
            id: self.template_id,
            reason,
        };
        if !(1..=MAX_TEMPLATES as u8).contains(&self.template_id) {
            return Err(invalid(format!("id must be in 1..={MAX_TEMPLATES}")));
        }
        let inputs = self.body.matches(INPUT_DATA).count();
        if inputs != 1 {
            return Err(invalid(format!(
                "body must contain {INPUT_DATA} exactly once, found {inputs}"
            )));
        }
        if self.body.matches(EXPERT_INSTRUCTION).count() > 1 {
            return Err(invalid(format!("{EXPERT_INSTRUCTION} occurs more than once")));
        }
        match self.body.matches(OUTPUT_IMPRESSION).count() {
            0 => {}
            1 => {
                if self.body.find(OUTPUT_IMPRESSION) < self.body.find(INPUT_DATA) {
                    return Err(invalid(format!("{OUTPUT_IMPRESSION} must follow {INPUT_DATA}")));
                }
            }
            n => return Err(invalid(format!("{OUTPUT_IMPRESSION} occurs {n} times"))),
        }
        for (field, text) in [("system", &self.system_description), ("instruction", &self.instruction)] {
            if [INPUT_DATA, EXPERT_INSTRUCTION, OUTPUT_IMPRESSION]
                .iter()
                .any(|p| text.contains(p))
            {
                return Err(invalid(format!("{field} must not contain placeholders")));
            }
        }
        Ok(())
    }

    /// Fixed text before and after the inserted finding.
    pub fn delimiters(&self) -> (String, String) {
        let (head, tail) = self
            .body
            .split_once(INPUT_DATA)
            .expect("validated template contains the input placeholder");
        let mut prefix = String::new();
        if !self.system_description.is_empty() {
            prefix.push_str(&self.system_description);
            prefix.push_str("\n\n");
        }
        if !self.body.contains(EXPERT_INSTRUCTION) && !self.instruction.is_empty() {
            prefix.push_str(&self.instruction);
            prefix.push_str("\n\n");
        }
        let fill = |s: &str| {
            s.replacen(EXPERT_INSTRUCTION, &self.instruction, 1)
                .replacen(OUTPUT_IMPRESSION, "", 1)
        };
        prefix.push_str(&fill(head));
        (prefix, fill(tail))
    }

    pub fn render(&self, finding: &str) -> String {
        let (prefix, suffix) = self.delimiters();
        format!("{prefix}{finding}{suffix}")
    }

    /// Recovers the inserted finding from a prompt rendered with this template.
    pub fn extract_input<'a>(&self, rendered: &'a str) -> Option<&'a str> {
        let (prefix, suffix) = self.delimiters();
        rendered.strip_prefix(prefix.as_str())?.strip_suffix(suffix.as_str())
    }
}

pub fn parse_templates(text: &str) -> Result<Vec<PromptTemplate>, PromptError> {
    let file: TemplateFile = toml::from_str(text).map_err(|e| PromptError::Parse(e.to_string()))?;
    let templates = file.template;
    if templates.is_empty() || templates.len() > MAX_TEMPLATES {
        return Err(PromptError::Count(templates.len()));
    }
    let mut seen = HashSet::new();
    for t in &templates {
        t.validate()?;
        if !seen.insert(t.template_id) {
            return Err(PromptError::DuplicateId(t.template_id));
        }
    }
    Ok(templates)
}

pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_templates(&text)
}

/// The five bundled structural templates.
pub fn default_templates() -> Vec<PromptTemplate> {
    parse_templates(DEFAULT_TEMPLATES).expect("bundled templates are valid")
}

pub fn default_templates_source() -> &'static str {
    DEFAULT_TEMPLATES
}

pub fn synthesize_prompt(
    t: &PromptTemplate,
    r: &RadiologyReport,
    with_label: bool,
) -> Result<SynthesizedPrompt, PromptError> {
    if r.finding.trim().is_empty() {
        return Err(PromptError::EmptyFinding(r.record_id.clone()));
    }
    Ok(SynthesizedPrompt {
        template_id: t.template_id,
        record_id: r.record_id.clone(),
        rendered_text: t.render(&r.finding),
        input: r.finding.clone(),
        label: with_label.then(|| r.impression.clone()),
    })
}

/// Order-preserving map of [`synthesize_prompt`]; failing records become rejects.
pub fn synthesize_batch(
    t: &PromptTemplate,
    c: &Corpus,
    with_label: bool,
) -> (Vec<SynthesizedPrompt>, Vec<Reject>) {
    let mut prompts = Vec::with_capacity(c.len());
    let mut rejects = Vec::new();
    for r in &c.records {
        match synthesize_prompt(t, r, with_label) {
            Ok(p) => prompts.push(p),
            Err(e) => rejects.push(Reject {
                line: None,
                record_id: Some(r.record_id.clone()),
                reason: e.to_string(),
            }),
        }
    }
    (prompts, rejects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BodySystem, Modality, Sex};

    fn template(body: &str) -> PromptTemplate {
        PromptTemplate {
            template_id: 1,
            system_description: String::new(),
            instruction: String::new(),
            body: body.to_string(),
        }
    }

    fn record(id: &str, finding: &str) -> RadiologyReport {
        RadiologyReport {
            record_id: id.into(),
            institution: 1,
            system: BodySystem::Chest,
            modality: Modality::Ct,
            age: 40,
            sex: Sex::Male,
            finding: finding.into(),
            impression: "右肺结节".into(),
        }
    }

    #[test]
    fn literal_substitution() {
        let p = synthesize_prompt(&template("DX: {Input Data}"), &record("1", "nodule in RUL"), false)
            .unwrap();
        assert_eq!(p.rendered_text, "DX: nodule in RUL");
        assert_eq!(p.label, None);
    }

    #[test]
    fn label_is_the_impression_verbatim() {
        let p = synthesize_prompt(&template("{Input Data}"), &record("1", "x"), true).unwrap();
        assert_eq!(p.label.as_deref(), Some("右肺结节"));
    }

    #[test]
    fn instruction_and_system_are_placed() {
        let t = PromptTemplate {
            template_id: 2,
            system_description: "SYS".into(),
            instruction: "DO IT".into(),
            body: "I: {Expert Instruction}\nX: {Input Data}\nY: {Output Impression}".into(),
        };
        assert_eq!(t.render("abc"), "SYS\n\nI: DO IT\nX: abc\nY: ");
        let no_slot = PromptTemplate {
            body: "X: {Input Data}".into(),
            ..t
        };
        assert_eq!(no_slot.render("abc"), "SYS\n\nDO IT\n\nX: abc");
    }

    #[test]
    fn placeholder_text_inside_a_finding_is_not_expanded() {
        let t = template("A {Input Data} B {Output Impression}");
        assert_eq!(t.render("{Output Impression}"), "A {Output Impression} B ");
        assert_eq!(t.extract_input(&t.render("{Output Impression}")), Some("{Output Impression}"));
    }

    #[test]
    fn missing_input_placeholder_names_the_template() {
        let text = "[[template]]\nid = 3\nsystem = \"s\"\ninstruction = \"i\"\nbody = \"no slot\"\n";
        let err = parse_templates(text).unwrap_err();
        assert!(matches!(err, PromptError::Invalid { id: 3, .. }), "{err}");
    }

    #[test]
    fn output_slot_must_follow_input() {
        let t = template("{Output Impression} {Input Data}");
        assert!(t.validate().is_err());
        assert!(template("{Input Data} {Input Data}").validate().is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let one = "[[template]]\nid = 1\nsystem = \"\"\ninstruction = \"\"\nbody = \"{Input Data}\"\n";
        assert!(matches!(
            parse_templates(&format!("{one}{one}")),
            Err(PromptError::DuplicateId(1))
        ));
        assert!(matches!(parse_templates(""), Err(PromptError::Count(0))));
    }

    #[test]
    fn bundled_defaults_are_ids_one_to_five() {
        let ids: Vec<u8> = default_templates().iter().map(|t| t.template_id).collect();
        assert_eq!(ids, [1, 2, 3, 4, 5]);
    }

    #[test]
    fn empty_finding_is_an_error_and_a_batch_reject() {
        let t = template("{Input Data}");
        assert!(matches!(
            synthesize_prompt(&t, &record("9", "  "), false),
            Err(PromptError::EmptyFinding(_))
        ));
        let c = Corpus::new(vec![record("1", "a"), record("2", " "), record("3", "b")], "t");
        let (prompts, rejects) = synthesize_batch(&t, &c, true);
        assert_eq!(prompts.len(), 2);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects[0].record_id.as_deref(), Some("2"));
    }

    #[test]
    fn prompt_jsonl_uses_prompt_key() {
        let p = synthesize_prompt(&template("{Input Data}"), &record("1", "a"), false).unwrap();
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["prompt"], "a");
        assert!(v.get("label").is_none());
    }
}
