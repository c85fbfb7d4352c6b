/// Literal spellings of the reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"];

/// Lowercases and splits text into maximal alphanumeric runs; every other
/// non-whitespace character becomes a token on its own. Reserved token
/// literals such as `[SEP]` are kept whole so decoded text re-encodes to the
/// same ids.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c == '[' {
            if let Some(special) = SPECIAL_TOKENS.iter().find(|s| rest.starts_with(**s)) {
                flush(&mut word, &mut tokens);
                tokens.push((*special).to_string());
                rest = &rest[special.len()..];
                continue;
            }
        }
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut tokens);
            if !c.is_whitespace() {
                tokens.push(c.to_lowercase().collect());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_whitespace_and_punctuation() {
        assert_eq!(
            tokenize("I don't know, REALLY!"),
            ["i", "don", "'", "t", "know", ",", "really", "!"]
        );
    }

    #[test]
    fn keeps_special_literals_whole() {
        assert_eq!(tokenize("[CLS] hi [SEP]"), ["[CLS]", "hi", "[SEP]"]);
        assert_eq!(tokenize("[cls]"), ["[", "cls", "]"]);
    }

    #[test]
    fn empty_and_blank_inputs() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n").is_empty());
    }
}
