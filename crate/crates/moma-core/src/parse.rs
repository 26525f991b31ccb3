//! Extracts a multiple-choice selection from free-form model text. This is
//! the single point where raw completions become scored choices.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::types::OptionEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseStrategy {
    LetterPattern,
    ExactOption,
    NormalizedContainment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub choice: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub strategy_used: Option<ParseStrategy>,
    pub confidence_note: String,
}

impl ParseOutcome {
    fn absent(note: &str) -> Self {
        Self { choice: None, strategy_used: None, confidence_note: note.to_string() }
    }
}

fn letter_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?ix)
              \( ([a-c]) \)                                   # (a)
            | \b ([a-c]) \)                                   # a)
            | (?:^|[\s:]) ([a-c]) \. (?:\s|$)                 # a.
            | (?:answer|option|choice|choose|select)\s+(?:is\s+)?:?\s*\(? ([a-c]) \b \)?
            ",
        )
        .expect("letter pattern")
    })
}

/// Distinct option letters (as indices) matched in `text`, in match order.
fn letters_in(text: &str) -> Vec<usize> {
    let mut seen = Vec::new();
    for caps in letter_pattern().captures_iter(text) {
        let letter = (1..=4).find_map(|i| caps.get(i)).expect("one group matches");
        let idx = (letter.as_str().to_ascii_lowercase().bytes().next().unwrap() - b'a') as usize;
        if !seen.contains(&idx) {
            seen.push(idx);
        }
    }
    seen
}

/// Byte offset just past the end of the `n`-th sentence, where a sentence
/// ends at `.`, `!`, `?` or a newline followed by whitespace or EOT.
fn sentence_end(text: &str, n: usize) -> usize {
    let bytes = text.as_bytes();
    let mut count = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'\n' || ((b == b'.' || b == b'!' || b == b'?')
            && bytes.get(i + 1).map_or(true, |nb| nb.is_ascii_whitespace()))
        {
            count += 1;
            if count == n {
                return i + 1;
            }
        }
        i += 1;
    }
    text.len()
}

/// The text after the last sentence boundary (or the whole text).
fn last_sentence(text: &str) -> &str {
    let trimmed = text.trim_end();
    let bytes = trimmed.as_bytes();
    let mut boundary = 0;
    let mut i = 0;
    while i + 1 < bytes.len() {
        let b = bytes[i];
        if b == b'\n'
            || ((b == b'.' || b == b'!' || b == b'?') && bytes[i + 1].is_ascii_whitespace())
        {
            boundary = i + 1;
        }
        i += 1;
    }
    &trimmed[boundary..]
}

fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    out.trim_end().to_string()
}

/// Staged extraction. Strategies are tried in order; a stage with multiple
/// distinct candidates falls through to the next; when every stage fails the
/// choice is absent (absence is in-band, never an error).
///
/// Stage 1 scans the first two sentences for standalone option letters. If
/// two or more distinct letters appear there (CoT often enumerates options
/// before choosing), a rescue scan over the last sentence runs before the
/// stage abstains.
pub fn parse_choice(raw: &str, options: &[OptionEntry]) -> ParseOutcome {
    debug_assert_eq!(options.len(), 3, "parser is defined over 3 options");

    // Stage 1: letter pattern over the scan window.
    let window = &raw[..sentence_end(raw, 2)];
    let letters = letters_in(window);
    match letters.len() {
        1 if letters[0] < options.len() => {
            return ParseOutcome {
                choice: Some(letters[0]),
                strategy_used: Some(ParseStrategy::LetterPattern),
                confidence_note: "unique letter in scan window".to_string(),
            };
        }
        0 => {}
        _ => {
            let rescue = letters_in(last_sentence(raw));
            if rescue.len() == 1 && rescue[0] < options.len() {
                return ParseOutcome {
                    choice: Some(rescue[0]),
                    strategy_used: Some(ParseStrategy::LetterPattern),
                    confidence_note: "ambiguous window, unique letter in last sentence"
                        .to_string(),
                };
            }
        }
    }

    // Stage 2: whole-raw equals one option text.
    let stripped = raw.trim().trim_matches(|c: char| {
        c.is_ascii_punctuation() || c == '"' || c == '\u{201c}' || c == '\u{201d}'
    });
    let raw_norm = normalize(stripped);
    let exact: Vec<usize> = options
        .iter()
        .filter(|o| normalize(&o.text) == raw_norm && !raw_norm.is_empty())
        .map(|o| o.index)
        .collect();
    if exact.len() == 1 {
        return ParseOutcome {
            choice: Some(exact[0]),
            strategy_used: Some(ParseStrategy::ExactOption),
            confidence_note: "raw text equals option text".to_string(),
        };
    }

    // Stage 3: unique option contained in the normalized raw.
    let full_norm = normalize(raw);
    let contained: Vec<usize> = options
        .iter()
        .filter(|o| {
            let opt_norm = normalize(&o.text);
            !opt_norm.is_empty() && full_norm.contains(&opt_norm)
        })
        .map(|o| o.index)
        .collect();
    if contained.len() == 1 {
        return ParseOutcome {
            choice: Some(contained[0]),
            strategy_used: Some(ParseStrategy::NormalizedContainment),
            confidence_note: "unique option text contained in raw".to_string(),
        };
    }

    ParseOutcome::absent(if contained.len() > 1 {
        "multiple options contained in raw"
    } else {
        "no strategy matched"
    })
}

/// One regression case for the parser corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusCase {
    pub raw: String,
    pub options: Vec<String>,
    pub expected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Result of running the corpus: failures carry (case index, got).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub total: usize,
    pub passed: usize,
    pub expected_absent: usize,
    pub observed_absent: usize,
    pub failures: Vec<(usize, Option<usize>)>,
}

pub fn run_corpus(cases: &[CorpusCase]) -> CorpusReport {
    let mut report = CorpusReport {
        total: cases.len(),
        passed: 0,
        expected_absent: 0,
        observed_absent: 0,
        failures: Vec::new(),
    };
    for (i, case) in cases.iter().enumerate() {
        let options: Vec<OptionEntry> = case
            .options
            .iter()
            .enumerate()
            .map(|(index, text)| OptionEntry {
                index,
                text: text.clone(),
                tag: crate::types::OptionTag::Unknown,
            })
            .collect();
        let outcome = parse_choice(&case.raw, &options);
        if case.expected.is_none() {
            report.expected_absent += 1;
        }
        if outcome.choice.is_none() {
            report.observed_absent += 1;
        }
        if outcome.choice == case.expected {
            report.passed += 1;
        } else {
            report.failures.push((i, outcome.choice));
        }
    }
    report
}

pub fn load_corpus(path: &std::path::Path) -> std::io::Result<Vec<CorpusCase>> {
    let text = std::fs::read_to_string(path)?;
    let mut cases = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: CorpusCase = serde_json::from_str(line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("corpus line {}: {e}", lineno + 1),
            )
        })?;
        cases.push(case);
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::OptionTag;
    use proptest::prelude::*;

    fn opts(a: &str, b: &str, c: &str) -> Vec<OptionEntry> {
        [a, b, c]
            .iter()
            .enumerate()
            .map(|(index, text)| OptionEntry {
                index,
                text: text.to_string(),
                tag: OptionTag::Unknown,
            })
            .collect()
    }

    fn default_opts() -> Vec<OptionEntry> {
        opts("The cashier", "The lawyer", "Not enough info")
    }

    #[test]
    fn letter_pattern_finds_parenthesized_letter() {
        let out = parse_choice("The answer is (b) the lawyer.", &default_opts());
        assert_eq!(out.choice, Some(1));
        assert_eq!(out.strategy_used, Some(ParseStrategy::LetterPattern));
    }

    #[test]
    fn exact_option_text_matches() {
        let out = parse_choice("Not enough info", &default_opts());
        assert_eq!(out.choice, Some(2));
        assert_eq!(out.strategy_used, Some(ParseStrategy::ExactOption));
    }

    #[test]
    fn ambiguous_enumeration_abstains() {
        let out = parse_choice(
            "Either (a) or (b) could be right, but (a)…",
            &opts("First", "Second", "Third"),
        );
        assert_eq!(out.choice, None);
    }

    #[test]
    fn ambiguous_window_rescued_by_last_sentence() {
        let out = parse_choice(
            "It could be (a) or (b). Both have merit. The answer is (b).",
            &default_opts(),
        );
        assert_eq!(out.choice, Some(1));
    }

    #[test]
    fn containment_resolves_verbose_reply() {
        let out = parse_choice(
            "Based on the context, I believe the lawyer did well.",
            &default_opts(),
        );
        assert_eq!(out.choice, Some(1));
        assert_eq!(out.strategy_used, Some(ParseStrategy::NormalizedContainment));
    }

    #[test]
    fn refusal_parses_to_absent() {
        let out = parse_choice(
            "I cannot make assumptions about people based on their occupation.",
            &default_opts(),
        );
        assert_eq!(out.choice, None);
    }

    #[test]
    fn letter_beyond_window_is_ignored_when_window_is_clean() {
        // Letters only appear after the second sentence; window finds none,
        // stage falls through and containment decides.
        let out = parse_choice(
            "Let me think about this one. It is a hard question. My pick is (c).",
            &default_opts(),
        );
        // Window (2 sentences) has no letters; last-sentence rescue only runs
        // on ambiguity, so stage 1 yields nothing and stage 3 fails too.
        assert_eq!(out.choice, None);
    }

    proptest! {
        #[test]
        fn parser_is_deterministic_and_sound(raw in ".{0,200}") {
            let options = default_opts();
            let a = parse_choice(&raw, &options);
            let b = parse_choice(&raw, &options);
            prop_assert_eq!(&a, &b);
            if let Some(idx) = a.choice {
                prop_assert!(idx < 3);
            }
        }
    }
}
