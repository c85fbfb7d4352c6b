//! Dialogue ingestion, vocabulary and training-example carving.

mod examples;
mod tokenizer;
mod vocab;

use std::path::Path;

use serde::Deserialize;

pub use examples::{make_examples, make_examples_all, TrainingExample, MIN_CONTEXT_LEN};
pub use tokenizer::{tokenize, SPECIAL_TOKENS};
pub use vocab::{build_vocab, Vocab, BOS, CLS, EOS, NUM_RESERVED, PAD, SEP, UNK};

use crate::error::{Error, Result};

/// The twelve problem categories of the emotional-support dialogue corpus.
pub const ESCONV_PROBLEM_TYPES: [&str; 12] = [
    "ongoing depression",
    "job crisis",
    "breakup with partner",
    "problems with friends",
    "academic pressure",
    "procrastination",
    "alcohol abuse",
    "issues with parents",
    "sleep problems",
    "appearance anxiety",
    "school bullying",
    "issues with children",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    Seeker,
    Supporter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    /// Free-text description of what is troubling the seeker.
    pub situation: String,
    pub problem_type: String,
    pub label_id: usize,
    pub turns: Vec<Turn>,
}

/// Closed, ordered set of problem-type labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("label set is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Validation(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn esconv() -> Self {
        Self {
            labels: ESCONV_PROBLEM_TYPES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// One label per non-empty line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    content: String,
}

#[derive(Deserialize)]
struct RawDialogue {
    situation: String,
    problem_type: Option<String>,
    dialog: Vec<RawTurn>,
}

/// Parses a JSON array of dialogue records. Extra fields are ignored.
pub fn parse_corpus(text: &str, labels: &LabelSet) -> Result<Vec<Dialogue>> {
    let records: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| Error::Format {
            record: 0,
            message: format!("top level is not a JSON array of records: {e}"),
        })?;
    records
        .into_iter()
        .enumerate()
        .map(|(record, value)| {
            let raw: RawDialogue = serde_json::from_value(value).map_err(|e| Error::Format {
                record,
                message: e.to_string(),
            })?;
            let problem_type = raw.problem_type.ok_or_else(|| Error::Label {
                record,
                message: "missing problem_type".into(),
            })?;
            let label_id = labels.index(&problem_type).ok_or_else(|| Error::Label {
                record,
                message: format!("unknown problem_type `{problem_type}`"),
            })?;
            if raw.dialog.is_empty() {
                return Err(Error::Validation(format!(
                    "record {record} has an empty turn list"
                )));
            }
            let turns = raw
                .dialog
                .into_iter()
                .map(|t| {
                    let speaker = match t.speaker.as_str() {
                        "seeker" => Speaker::Seeker,
                        "supporter" => Speaker::Supporter,
                        other => {
                            return Err(Error::Format {
                                record,
                                message: format!("unknown speaker `{other}`"),
                            })
                        }
                    };
                    Ok(Turn {
                        speaker,
                        text: t.content,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Dialogue {
                situation: raw.situation,
                problem_type,
                label_id,
                turns,
            })
        })
        .collect()
}

pub fn load_corpus(path: &Path, labels: &LabelSet) -> Result<Vec<Dialogue>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_array_gives_no_dialogues() {
        assert!(parse_corpus("[]", &LabelSet::esconv()).unwrap().is_empty());
    }

    #[test]
    fn preserves_turn_order_and_ignores_extra_fields() {
        let text = r#"[{"situation": "lost my job", "problem_type": "job crisis", "emotion_type": "anxiety",
            "dialog": [{"speaker": "seeker", "content": "hi", "annotation": {}},
                       {"speaker": "supporter", "content": "hello"}]}]"#;
        let d = parse_corpus(text, &LabelSet::esconv()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].label_id, 1);
        assert_eq!(d[0].turns[0].speaker, Speaker::Seeker);
        assert_eq!(d[0].turns[1].text, "hello");
    }

    #[test]
    fn missing_problem_type_names_the_record() {
        let text = r#"[{"situation": "x", "problem_type": "job crisis", "dialog": [{"speaker": "seeker", "content": "a"}]},
                       {"situation": "y", "dialog": [{"speaker": "seeker", "content": "b"}]}]"#;
        match parse_corpus(text, &LabelSet::esconv()) {
            Err(Error::Label { record, .. }) => assert_eq!(record, 1),
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_empty_turns_are_rejected() {
        let unknown = r#"[{"situation": "x", "problem_type": "tax", "dialog": [{"speaker": "seeker", "content": "a"}]}]"#;
        assert!(matches!(
            parse_corpus(unknown, &LabelSet::esconv()),
            Err(Error::Label { record: 0, .. })
        ));
        let empty = r#"[{"situation": "x", "problem_type": "job crisis", "dialog": []}]"#;
        assert!(matches!(
            parse_corpus(empty, &LabelSet::esconv()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_record_reports_index() {
        let text = r#"[{"situation": "x", "problem_type": "job crisis", "dialog": [{"speaker": "seeker", "content": "a"}]},
                       {"situation": 3}]"#;
        assert!(matches!(
            parse_corpus(text, &LabelSet::esconv()),
            Err(Error::Format { record: 1, .. })
        ));
        let bad_speaker = r#"[{"situation": "x", "problem_type": "job crisis", "dialog": [{"speaker": "bot", "content": "a"}]}]"#;
        assert!(matches!(
            parse_corpus(bad_speaker, &LabelSet::esconv()),
            Err(Error::Format { record: 0, .. })
        ));
        assert!(matches!(
            parse_corpus("{", &LabelSet::esconv()),
            Err(Error::Format { .. })
        ));
    }
}
