//! Pluggable sources of the seeker's local intention phrase.
//!
//! The model only ever consumes the returned phrase. A commonsense
//! generator (with whatever relation-token framing it needs) can be added as
//! another [`IntentionProvider`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

pub const FALLBACK_INTENTION: &str = "to feel better";

const FUNCTION_WORDS: &[&str] = &[
    "i", "me", "my", "mine", "myself", "you", "your", "yours", "we", "us", "our", "he", "him",
    "his", "she", "her", "it", "its", "they", "them", "their", "a", "an", "the", "am", "is", "are",
    "was", "were", "be", "been", "being", "and", "or", "but", "so", "just", "really", "very", "um",
    "uh", "hi", "hello", "hey", "oh", "well", "m", "s", "t", "d", "ll", "re", "ve",
];

/// Identifies the seeker utterance an intention is inferred from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TurnKey {
    pub dialogue: usize,
    pub turn: usize,
}

pub trait IntentionProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Intention phrase for the seeker utterance `text` at `key`.
    fn intention(&self, key: TurnKey, text: &str) -> String;
}

/// Validates the input and asks `provider` for a phrase.
pub fn provide_intention(
    provider: &dyn IntentionProvider,
    key: TurnKey,
    text: &str,
) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::Validation(
            "intention requested for an empty utterance".into(),
        ));
    }
    Ok(provider.intention(key, text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Lookup,
    Template,
    Constant,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Lookup => "lookup",
            ProviderKind::Template => "template",
            ProviderKind::Constant => "constant",
        })
    }
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lookup" => Ok(ProviderKind::Lookup),
            "template" => Ok(ProviderKind::Template),
            "constant" => Ok(ProviderKind::Constant),
            other => Err(Error::Validation(format!(
                "unknown intention provider `{other}` (expected lookup, template or constant)"
            ))),
        }
    }
}

/// `"to " + content words of the utterance`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateProvider;

impl IntentionProvider for TemplateProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Template
    }

    fn intention(&self, _key: TurnKey, text: &str) -> String {
        let words: Vec<String> = tokenize(text)
            .into_iter()
            .filter(|t| {
                t.chars().all(char::is_alphanumeric) && !FUNCTION_WORDS.contains(&t.as_str())
            })
            .collect();
        if words.is_empty() {
            FALLBACK_INTENTION.to_string()
        } else {
            format!("to {}", words.join(" "))
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantProvider;

impl IntentionProvider for ConstantProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Constant
    }

    fn intention(&self, _key: TurnKey, _text: &str) -> String {
        FALLBACK_INTENTION.to_string()
    }
}

/// Annotated intentions keyed by (dialogue index, seeker turn index), with
/// the template provider as fall-through for missing keys.
#[derive(Debug, Clone, Default)]
pub struct LookupProvider {
    entries: HashMap<TurnKey, String>,
}

impl LookupProvider {
    pub fn new(entries: HashMap<TurnKey, String>) -> Self {
        Self { entries }
    }

    /// Parses `dialogue_id<TAB>turn_index<TAB>intention text` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Format {
                record: i + 1,
                message: format!("intention line: {msg}"),
            };
            let mut parts = line.splitn(3, '\t');
            let (Some(d), Some(t), Some(phrase)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected three tab-separated fields"));
            };
            let dialogue = d
                .trim()
                .parse()
                .map_err(|_| bad("dialogue id is not an integer"))?;
            let turn = t
                .trim()
                .parse()
                .map_err(|_| bad("turn index is not an integer"))?;
            entries.insert(TurnKey { dialogue, turn }, phrase.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl IntentionProvider for LookupProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Lookup
    }

    fn intention(&self, key: TurnKey, text: &str) -> String {
        match self.entries.get(&key) {
            Some(phrase) => phrase.clone(),
            None => {
                log::info!(
                    "no annotated intention for dialogue {} turn {}; using template",
                    key.dialogue,
                    key.turn
                );
                TemplateProvider.intention(key, text)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: TurnKey = TurnKey {
        dialogue: 0,
        turn: 2,
    };

    #[test]
    fn lookup_returns_annotated_phrase() {
        let p = LookupProvider::parse("0\t2\tto be financially stable\n").unwrap();
        assert_eq!(
            provide_intention(&p, KEY, "I need another job to pay more bills").unwrap(),
            "to be financially stable"
        );
    }

    #[test]
    fn lookup_falls_through_to_template() {
        let p = LookupProvider::parse("5\t1\tto rest\n").unwrap();
        assert_eq!(
            p.intention(KEY, "I need another job"),
            "to need another job"
        );
    }

    #[test]
    fn template_and_constant() {
        assert_eq!(
            TemplateProvider.intention(KEY, "I need another job"),
            "to need another job"
        );
        assert_eq!(
            TemplateProvider.intention(KEY, "Hi, I am ..."),
            FALLBACK_INTENTION
        );
        assert_eq!(
            ConstantProvider.intention(KEY, "whatever"),
            "to feel better"
        );
    }

    #[test]
    fn empty_utterance_is_rejected() {
        assert!(provide_intention(&ConstantProvider, KEY, "   ").is_err());
    }

    #[test]
    fn malformed_lookup_line_reports_line_number() {
        match LookupProvider::parse("0\t1\tok\nx\t2\tbad\n") {
            Err(Error::Format { record, .. }) => assert_eq!(record, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn provider_names_parse() {
        for k in [
            ProviderKind::Lookup,
            ProviderKind::Template,
            ProviderKind::Constant,
        ] {
            assert_eq!(k.to_string().parse::<ProviderKind>().unwrap(), k);
        }
        assert!("comet".parse::<ProviderKind>().is_err());
    }
}
