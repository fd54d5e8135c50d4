//! Canonical class labels shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Cognitive status. `CI` is the positive class everywhere in the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    CI,
    CN,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::CI, Label::CN];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::CI => "CI",
            Label::CN => "CN",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::CI => Label::CN,
            Label::CN => Label::CI,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?} (expected CI or CN)")]
pub struct ParseLabelError(pub String);

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "CI" => Ok(Label::CI),
            "CN" => Ok(Label::CN),
            other => Err(ParseLabelError(other.to_string())),
        }
    }
}

/// A model decision: one of the two classes, or no recoverable label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Prediction {
    CI,
    CN,
    Abstain,
}

impl Prediction {
    pub fn label(self) -> Option<Label> {
        match self {
            Prediction::CI => Some(Label::CI),
            Prediction::CN => Some(Label::CN),
            Prediction::Abstain => None,
        }
    }

    pub fn is_abstain(self) -> bool {
        self == Prediction::Abstain
    }
}

impl From<Label> for Prediction {
    fn from(label: Label) -> Self {
        match label {
            Label::CI => Prediction::CI,
            Label::CN => Prediction::CN,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prediction::CI => "CI",
            Prediction::CN => "CN",
            Prediction::Abstain => "Abstain",
        })
    }
}
