use std::collections::HashMap;
use std::path::PathBuf;

use glhg_core::corpus::{
    build_vocab, load_corpus, make_examples, parse_corpus, LabelSet, CLS, SEP,
};
use regex::Regex;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn words(text: &str) -> Vec<String> {
    let re = Regex::new(r"[\p{Alphabetic}\p{Nd}]+|\S").unwrap();
    re.find_iter(&text.to_lowercase())
        .map(|m| m.as_str().to_string())
        .collect()
}

#[test]
fn synthetic_vocabulary_matches_independent_count() {
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data("synthetic_corpus.json")).unwrap())
            .unwrap();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for record in raw.as_array().unwrap() {
        let mut texts = vec![record["situation"].as_str().unwrap()];
        texts.extend(
            record["dialog"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t["content"].as_str().unwrap()),
        );
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }

    let labels = LabelSet::load(&data("problem_types.txt")).unwrap();
    let dialogues = load_corpus(&data("synthetic_corpus.json"), &labels).unwrap();
    assert_eq!(dialogues.len(), 20);
    for min_freq in 1..=4 {
        let vocab = build_vocab(&dialogues, min_freq).unwrap();
        let mut expected: Vec<(&String, &usize)> =
            counts.iter().filter(|(_, &c)| c >= min_freq).collect();
        expected.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        assert_eq!(vocab.len(), 6 + expected.len(), "min_freq {min_freq}");
        let ours: Vec<&str> = vocab.tokens()[6..].iter().map(String::as_str).collect();
        let theirs: Vec<&str> = expected.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(ours, theirs);
    }
}

/// Joins every turn before the target with `[SEP]`, keeps the last `T − 1`
/// tokens and puts `[CLS]` back in front.
fn reference_context(turns: &[&str], target: usize, max_len: usize) -> Vec<String> {
    let mut joined: Vec<String> = Vec::new();
    for t in &turns[..target] {
        joined.extend(words(t));
        joined.push("[SEP]".into());
    }
    let keep = joined.len().min(max_len - 1);
    let mut out = vec!["[CLS]".to_string()];
    out.extend(joined[joined.len() - keep..].iter().cloned());
    out
}

#[test]
fn ten_turn_truncation_matches_reference() {
    let turns = [
        "I can't sleep at night.",
        "How long has this been going on?",
        "About two weeks now, since the exams.",
        "That sounds exhausting.",
        "Yes, I keep thinking about grades.",
        "Do you have someone to talk to?",
        "My sister, sometimes.",
        "That is good to hear.",
        "I just want to rest.",
        "Maybe a short walk before bed could help.",
    ];
    let dialog: Vec<String> = turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let speaker = if i % 2 == 0 { "seeker" } else { "supporter" };
            format!(r#"{{"speaker": "{speaker}", "content": "{t}"}}"#)
        })
        .collect();
    let json = format!(
        r#"[{{"situation": "exam stress", "problem_type": "academic pressure", "dialog": [{}]}}]"#,
        dialog.join(",")
    );
    let dialogues = parse_corpus(&json, &LabelSet::esconv()).unwrap();
    let vocab = build_vocab(&dialogues, 1).unwrap();
    let examples = make_examples(&dialogues[0], 0, &vocab, 16).unwrap();
    assert_eq!(examples.len(), 5);
    for ex in &examples {
        let expected = reference_context(&turns, ex.target_turn, 16);
        let got: Vec<String> = ex
            .context_ids
            .iter()
            .map(|&id| vocab.token(id).unwrap().to_string())
            .collect();
        assert_eq!(got, expected, "target turn {}", ex.target_turn);
        let seeker = words(turns[ex.seeker_turn]);
        let span: Vec<String> = got[ex.last_seeker_span.clone()].to_vec();
        assert_eq!(span, seeker);
        assert_eq!(got[ex.last_seeker_span.end], "[SEP]");
    }
}

#[test]
fn synthetic_examples_keep_structure_and_round_trip() {
    let labels = LabelSet::load(&data("problem_types.txt")).unwrap();
    let dialogues = load_corpus(&data("synthetic_corpus.json"), &labels).unwrap();
    let vocab = build_vocab(&dialogues, 1).unwrap();
    for (i, d) in dialogues.iter().enumerate() {
        for max_len in [8, 12, 32] {
            for ex in make_examples(d, i, &vocab, max_len).unwrap() {
                assert_eq!(ex.context_ids[0], CLS);
                assert!(ex.context_ids.len() <= max_len);
                assert_eq!(*ex.context_ids.last().unwrap(), SEP);
                assert!(
                    !ex.last_seeker_span.is_empty()
                        && ex.last_seeker_span.end < ex.context_ids.len()
                );
                let text = vocab.decode(&ex.context_ids);
                assert_eq!(vocab.encode(&text), ex.context_ids);
            }
        }
    }
    assert_eq!(build_vocab(&dialogues, 1).unwrap(), vocab);
}
