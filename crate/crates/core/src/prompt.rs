//! Prompt rendering from the shipped templates.
//!
//! Each template file under `templates/` holds a system section and a user
//! section (`<<<system>>>` / `<<<user>>>` marker lines) with `{{transcript}}`,
//! `{{examples}}` and `{{label}}` slots. Substitution is single-pass, so slot
//! markers inside a transcript are left alone.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::label::Label;
use crate::selection::DemonstrationSet;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{0} prompts take no demonstrations")]
    UnexpectedDemos(PromptKind),
    #[error("{0} prompts need at least one demonstration; render an empty set as ZeroShot")]
    MissingDemos(PromptKind),
    #[error("{kind} prompts need {expected} demonstrations")]
    WrongDemoKind { kind: PromptKind, expected: &'static str },
    #[error("rationale requests need the subject's known label")]
    MissingLabel,
    #[error("template {0}: {1}")]
    Template(&'static str, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    FewShot,
    RationaleGeneration,
    ReasoningInference,
    TotUnspecified,
    TotExpert,
    FinetuneEval,
    MultimodalEval,
}

impl PromptKind {
    pub const ALL: [PromptKind; 8] = [
        PromptKind::ZeroShot,
        PromptKind::FewShot,
        PromptKind::RationaleGeneration,
        PromptKind::ReasoningInference,
        PromptKind::TotUnspecified,
        PromptKind::TotExpert,
        PromptKind::FinetuneEval,
        PromptKind::MultimodalEval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::ZeroShot => "zero_shot",
            PromptKind::FewShot => "few_shot",
            PromptKind::RationaleGeneration => "rationale_generation",
            PromptKind::ReasoningInference => "reasoning_inference",
            PromptKind::TotUnspecified => "tot_unspecified",
            PromptKind::TotExpert => "tot_expert",
            PromptKind::FinetuneEval => "finetune_eval",
            PromptKind::MultimodalEval => "multimodal_eval",
        }
    }

    /// Raw template text as shipped.
    pub fn template_source(self) -> &'static str {
        match self {
            PromptKind::ZeroShot => include_str!("../templates/zero_shot.txt"),
            PromptKind::FewShot => include_str!("../templates/few_shot.txt"),
            PromptKind::RationaleGeneration => {
                include_str!("../templates/rationale_generation.txt")
            }
            PromptKind::ReasoningInference => include_str!("../templates/reasoning_inference.txt"),
            PromptKind::TotUnspecified => include_str!("../templates/tot_unspecified.txt"),
            PromptKind::TotExpert => include_str!("../templates/tot_expert.txt"),
            PromptKind::FinetuneEval => include_str!("../templates/finetune_eval.txt"),
            PromptKind::MultimodalEval => include_str!("../templates/multimodal_eval.txt"),
        }
    }

    /// Surface tokens the template uses for the two classes.
    pub fn lexicon(self) -> Lexicon {
        match self {
            PromptKind::FinetuneEval => Lexicon::ADRD_HEALTHY,
            PromptKind::MultimodalEval => Lexicon::DEMENTIA_CONTROL,
            _ => Lexicon::AD_HEALTHY,
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Class surface tokens. The first entry of each list is the one rendered;
/// every entry is accepted when parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lexicon {
    pub positive: &'static [&'static str],
    pub negative: &'static [&'static str],
}

impl Lexicon {
    pub const AD_HEALTHY: Lexicon = Lexicon { positive: &["AD", "ADRD"], negative: &["Healthy"] };
    pub const ADRD_HEALTHY: Lexicon = Lexicon { positive: &["ADRD", "AD"], negative: &["Healthy"] };
    pub const DEMENTIA_CONTROL: Lexicon = Lexicon { positive: &["dementia"], negative: &["control"] };
    /// Every surface token the harness knows.
    pub const ALL: Lexicon = Lexicon { positive: &["AD", "ADRD", "dementia"], negative: &["Healthy", "control"] };

    pub fn surface(&self, label: Label) -> &'static str {
        match label {
            Label::CI => self.positive[0],
            Label::CN => self.negative[0],
        }
    }

    /// Case-insensitive exact lookup of a surface token.
    pub fn classify(&self, token: &str) -> Option<Label> {
        let token = token.trim();
        if self.positive.iter().any(|p| p.eq_ignore_ascii_case(token)) {
            Some(Label::CI)
        } else if self.negative.iter().any(|n| n.eq_ignore_ascii_case(token)) {
            Some(Label::CN)
        } else {
            None
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = (&'static str, Label)> + '_ {
        self.positive.iter().map(|t| (*t, Label::CI)).chain(self.negative.iter().map(|t| (*t, Label::CN)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RationaleSource {
    #[serde(rename = "self")]
    SelfGenerated,
    Teacher,
}

/// A demonstration carrying an explanation of its (known) label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonedDemonstration {
    pub subject_id: String,
    pub transcript_text: String,
    pub rationale_text: String,
    pub label: Label,
    pub rationale_source: RationaleSource,
}

#[derive(Debug, Clone, Copy, Default)]
pub enum PromptDemos<'a> {
    #[default]
    None,
    Plain(&'a DemonstrationSet),
    Reasoned(&'a [ReasonedDemonstration]),
}

/// Variable parts of a prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptInput<'a> {
    pub transcript: &'a str,
    pub demos: PromptDemos<'a>,
    /// Required by rationale requests only.
    pub known_label: Option<Label>,
}

impl<'a> PromptInput<'a> {
    pub fn new(transcript: &'a str) -> Self {
        Self { transcript, demos: PromptDemos::None, known_label: None }
    }

    pub fn with_demos(mut self, demos: &'a DemonstrationSet) -> Self {
        self.demos = PromptDemos::Plain(demos);
        self
    }

    pub fn with_reasoned(mut self, demos: &'a [ReasonedDemonstration]) -> Self {
        self.demos = PromptDemos::Reasoned(demos);
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.known_label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Hex SHA-256 over the JSON serialization of a message list. The gateway
/// hashes outgoing messages the same way.
pub fn messages_hash(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub system: Option<String>,
    pub user: String,
    pub hash: String,
}

impl RenderedPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(2);
        if let Some(system) = &self.system {
            out.push(ChatMessage { role: Role::System, content: system.clone() });
        }
        out.push(ChatMessage { role: Role::User, content: self.user.clone() });
        out
    }

    /// Both messages under `=== system ===` / `=== user ===` headings.
    pub fn to_text(&self) -> String {
        format!("=== system ===\n{}\n=== user ===\n{}\n", self.system.as_deref().unwrap_or(""), self.user)
    }
}

struct Template {
    system: String,
    user: String,
}

fn parse_template(kind: PromptKind) -> Result<Template, PromptError> {
    let src = kind.template_source();
    let body = src
        .strip_prefix("<<<system>>>\n")
        .ok_or_else(|| PromptError::Template(kind.as_str(), "missing <<<system>>> header".into()))?;
    let (system, user) = body
        .split_once("<<<user>>>\n")
        .ok_or_else(|| PromptError::Template(kind.as_str(), "missing <<<user>>> marker".into()))?;
    let strip = |s: &str| s.strip_suffix('\n').unwrap_or(s).to_string();
    Ok(Template { system: strip(system), user: strip(user) })
}

fn substitute(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}").map(|end| (&after[..end], &after[end + 2..])) {
            Some((name, tail)) if slots.iter().any(|(k, _)| *k == name) => {
                out.push_str(slots.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or(""));
                rest = tail;
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn plain_block(transcript: &str, surface: &str) -> String {
    format!("Transcript: \"{transcript}\"\nLabel: {{\"label\": \"{surface}\"}}\n\n")
}

fn reasoned_block(transcript: &str, rationale: &str, surface: &str) -> String {
    let rationale = serde_json::to_string(rationale).expect("string serializes");
    format!("Transcript: \"{transcript}\"\n{{\"reason\": {rationale}, \"label\": \"{surface}\"}}\n\n")
}

/// Renders `kind` for the given input.
pub fn render(kind: PromptKind, input: &PromptInput<'_>) -> Result<RenderedPrompt, PromptError> {
    let lexicon = kind.lexicon();
    let examples = match (kind, input.demos) {
        (PromptKind::FewShot, PromptDemos::Plain(set)) => {
            if set.items.is_empty() {
                return Err(PromptError::MissingDemos(kind));
            }
            set.items.iter().map(|d| plain_block(&d.transcript_text, lexicon.surface(d.label))).collect::<String>()
        }
        (PromptKind::ReasoningInference, PromptDemos::Reasoned(demos)) => {
            if demos.is_empty() {
                return Err(PromptError::MissingDemos(kind));
            }
            demos
                .iter()
                .map(|d| reasoned_block(&d.transcript_text, &d.rationale_text, lexicon.surface(d.label)))
                .collect::<String>()
        }
        (PromptKind::FewShot, PromptDemos::None) | (PromptKind::ReasoningInference, PromptDemos::None) => {
            return Err(PromptError::MissingDemos(kind))
        }
        (PromptKind::FewShot, PromptDemos::Reasoned(_)) => {
            return Err(PromptError::WrongDemoKind { kind, expected: "plain" })
        }
        (PromptKind::ReasoningInference, PromptDemos::Plain(_)) => {
            return Err(PromptError::WrongDemoKind { kind, expected: "reasoned" })
        }
        (_, PromptDemos::None) => String::new(),
        (_, _) => return Err(PromptError::UnexpectedDemos(kind)),
    };
    let label = match kind {
        PromptKind::RationaleGeneration => lexicon.surface(input.known_label.ok_or(PromptError::MissingLabel)?),
        _ => "",
    };

    let template = parse_template(kind)?;
    let slots = [("transcript", input.transcript), ("examples", examples.as_str()), ("label", label)];
    let system = (!template.system.is_empty()).then(|| template.system.clone());
    let user = substitute(&template.user, &slots);
    let mut prompt = RenderedPrompt { kind, system, user, hash: String::new() };
    prompt.hash = messages_hash(&prompt.messages());
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{Demonstration, SelectionPolicy};

    fn set(items: &[(&str, Label)]) -> DemonstrationSet {
        DemonstrationSet {
            policy: SelectionPolicy::Random,
            n: items.len(),
            items: items
                .iter()
                .map(|(t, l)| Demonstration {
                    subject_id: t.to_string(),
                    transcript_text: t.to_string(),
                    label: *l,
                    score: None,
                })
                .collect(),
        }
    }

    #[test]
    fn zero_shot_has_no_examples() {
        let p = render(PromptKind::ZeroShot, &PromptInput::new("the boy")).unwrap();
        assert!(p.system.as_deref().unwrap().contains("Provide only the label ('Healthy' or 'AD')"));
        assert_eq!(p.user, "Transcript: \"the boy\"");
        assert!(!p.user.contains("example cases"));
    }

    #[test]
    fn few_shot_needs_plain_demos() {
        let empty = set(&[]);
        assert_eq!(
            render(PromptKind::FewShot, &PromptInput::new("t").with_demos(&empty)),
            Err(PromptError::MissingDemos(PromptKind::FewShot))
        );
        assert!(render(PromptKind::FewShot, &PromptInput::new("t")).is_err());
        let reasoned: Vec<ReasonedDemonstration> = vec![];
        assert!(matches!(
            render(PromptKind::FewShot, &PromptInput::new("t").with_reasoned(&reasoned)),
            Err(PromptError::WrongDemoKind { .. })
        ));
        let two = set(&[("x", Label::CN), ("y", Label::CI)]);
        assert_eq!(
            render(PromptKind::ZeroShot, &PromptInput::new("t").with_demos(&two)),
            Err(PromptError::UnexpectedDemos(PromptKind::ZeroShot))
        );
    }

    #[test]
    fn few_shot_blocks() {
        let two = set(&[("x", Label::CN), ("y", Label::CI)]);
        let p = render(PromptKind::FewShot, &PromptInput::new("t").with_demos(&two)).unwrap();
        assert_eq!(
            p.user,
            "Here are some example cases for your guidance:\n\n\
             Transcript: \"x\"\nLabel: {\"label\": \"Healthy\"}\n\n\
             Transcript: \"y\"\nLabel: {\"label\": \"AD\"}\n\n\
             Transcript: \"t\""
        );
        let again = render(PromptKind::FewShot, &PromptInput::new("t").with_demos(&two)).unwrap();
        assert_eq!(p.hash, again.hash);
        assert_eq!(p.hash.len(), 64);
    }

    #[test]
    fn slot_markers_in_transcripts_are_literal() {
        let p = render(PromptKind::ZeroShot, &PromptInput::new("say {{examples}} {{")).unwrap();
        assert_eq!(p.user, "Transcript: \"say {{examples}} {{\"");
    }

    #[test]
    fn rationale_request_needs_label() {
        assert_eq!(render(PromptKind::RationaleGeneration, &PromptInput::new("t")), Err(PromptError::MissingLabel));
        let p = render(PromptKind::RationaleGeneration, &PromptInput::new("t").with_label(Label::CI)).unwrap();
        assert_eq!(p.user, "Transcript: \"t\"\nLabel: {\"label\": \"AD\"}");
    }

    #[test]
    fn reasoned_rationale_is_json_escaped() {
        let demos = vec![ReasonedDemonstration {
            subject_id: "a".into(),
            transcript_text: "x".into(),
            rationale_text: "says \"uh\" often".into(),
            label: Label::CN,
            rationale_source: RationaleSource::Teacher,
        }];
        let p = render(PromptKind::ReasoningInference, &PromptInput::new("t").with_reasoned(&demos)).unwrap();
        assert!(p.user.contains("{\"reason\": \"says \\\"uh\\\" often\", \"label\": \"Healthy\"}\n\n"));
    }

    #[test]
    fn multimodal_has_no_system_message() {
        let p = render(PromptKind::MultimodalEval, &PromptInput::new("t")).unwrap();
        assert!(p.system.is_none());
        assert_eq!(p.messages().len(), 1);
        assert!(p.user.ends_with("with a single word: 'dementia' or 'control'."));
    }

    #[test]
    fn lexicon_lookup() {
        assert_eq!(Lexicon::AD_HEALTHY.classify("adrd"), Some(Label::CI));
        assert_eq!(Lexicon::AD_HEALTHY.classify(" healthy "), Some(Label::CN));
        assert_eq!(Lexicon::DEMENTIA_CONTROL.classify("AD"), None);
        assert_eq!(PromptKind::FinetuneEval.lexicon().surface(Label::CI), "ADRD");
    }

    #[test]
    fn rationale_source_wire_names() {
        assert_eq!(serde_json::to_string(&RationaleSource::SelfGenerated).unwrap(), "\"self\"");
        assert_eq!(serde_json::to_string(&RationaleSource::Teacher).unwrap(), "\"teacher\"");
    }
}
