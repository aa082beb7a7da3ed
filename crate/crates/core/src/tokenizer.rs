//! Sentence splitting and offset-preserving tokenization.
//!
//! A regex pass first turns hyphens between an attribute-like prefix and a
//! digit into spaces (`WBC-12.8` becomes `WBC 12.8`). The substitution is
//! 1-for-1 in code points, so token offsets always index the original text.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

const ABBREVIATIONS: &[&str] = &["Dr", "Mr", "Mrs", "vs", "e.g", "i.e"];

fn hyphen_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"([a-z A-Z]|O3|O2|B12)(-)([0-9])").unwrap())
}

/// Replaces the hyphen of every `<letter|space|O2|O3|B12>-<digit>` match with a
/// space, repeating until the text is stable.
pub fn preprocess(text: &str) -> String {
    let re = hyphen_pattern();
    let mut current = text.to_string();
    loop {
        let mut changed = false;
        let mut out = String::with_capacity(current.len());
        let mut last = 0;
        for caps in re.captures_iter(&current) {
            let hyphen = caps.get(2).unwrap();
            out.push_str(&current[last..hyphen.start()]);
            out.push(' ');
            last = hyphen.end();
            changed = true;
        }
        if !changed {
            return current;
        }
        out.push_str(&current[last..]);
        current = out;
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Punct,
}

fn class_of(c: char) -> Class {
    if c.is_ascii_digit() {
        Class::Digit
    } else if c.is_alphabetic() {
        Class::Letter
    } else {
        Class::Punct
    }
}

/// Tokenizes already-preprocessed sentence text. Offsets are `base_offset` plus
/// the code-point index within `sentence_text`.
pub fn tokenize(sentence_text: &str, base_offset: usize) -> Vec<Token> {
    let chars: Vec<char> = sentence_text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let emit = |tokens: &mut Vec<Token>, s: usize, e: usize| {
        tokens.push(Token {
            text: chars[s..e].iter().collect(),
            start: base_offset + s,
            end: base_offset + e,
        });
    };
    let digits_from = |mut j: usize| {
        while j < chars.len() && chars[j].is_ascii_digit() {
            j += 1;
        }
        j
    };
    let followed_by_digit =
        |j: usize| j + 1 < chars.len() && chars[j + 1].is_ascii_digit();

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match class_of(c) {
            Class::Digit => {
                let mut j = digits_from(i);
                if j < chars.len() && chars[j] == '.' && followed_by_digit(j) {
                    j = digits_from(j + 1);
                }
                if j < chars.len() && chars[j] == '/' && followed_by_digit(j) {
                    j = digits_from(j + 1);
                    if j < chars.len() && chars[j] == '.' && followed_by_digit(j) {
                        j = digits_from(j + 1);
                    }
                } else if j < chars.len() && (chars[j] == '%' || chars[j] == '+') {
                    j += 1;
                }
                i = j;
            }
            Class::Letter => {
                while i < chars.len() && class_of(chars[i]) == Class::Letter {
                    i += 1;
                }
            }
            Class::Punct => i += 1,
        }
        emit(&mut tokens, start, i);
    }
    tokens
}

/// Sentence ranges `[start, end)` in code points, trimmed of surrounding
/// whitespace.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut ranges = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_non_ws = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' || c == '\r' {
            if let Some(s) = start.take() {
                ranges.push((s, last_non_ws + 1));
            }
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        last_non_ws = i;
        if matches!(c, '.' | '!' | '?') && is_boundary(&chars, i) {
            // absorb runs like "?!" or "..."
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?') {
                j += 1;
            }
            ranges.push((start.take().unwrap(), j));
            i = j;
            continue;
        }
        i += 1;
    }
    if let Some(s) = start {
        ranges.push((s, last_non_ws + 1));
    }
    ranges
}

fn is_boundary(chars: &[char], i: usize) -> bool {
    if chars[i] != '.' {
        return true;
    }
    let prev = i.checked_sub(1).map(|p| chars[p]);
    let next = chars.get(i + 1).copied();
    if prev.is_some_and(|c| c.is_ascii_digit()) && next.is_some_and(|c| c.is_ascii_digit()) {
        return false;
    }
    if next.is_some_and(|c| !c.is_whitespace() && !matches!(c, '"' | '\'' | ')')) {
        return false;
    }
    let mut w = i;
    while w > 0 && !chars[w - 1].is_whitespace() {
        w -= 1;
    }
    let word: String = chars[w..i].iter().collect();
    if ABBREVIATIONS.contains(&word.as_str()) {
        return false;
    }
    if word == "sat" {
        let before: String = chars[..w].iter().collect();
        if before.trim_end().ends_with("O2") {
            return false;
        }
    }
    true
}

/// Splits a document into tokenized sentences. Sentences that tokenize to
/// nothing are dropped.
pub fn sentences(doc_id: &str, text: &str) -> Vec<Sentence> {
    let pre: Vec<char> = preprocess(text).chars().collect();
    let pre_text: String = pre.iter().collect();
    let mut out = Vec::new();
    for (start, end) in split_sentences(&pre_text) {
        let slice: String = pre[start..end].iter().collect();
        let tokens = tokenize(&slice, start);
        if tokens.is_empty() {
            continue;
        }
        out.push(Sentence {
            doc_id: doc_id.to_string(),
            index: out.len(),
            start,
            end,
            tokens,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        tokenize(&preprocess(s), 0).into_iter().map(|t| t.text).collect()
    }

    /// Character-level reimplementation of the hyphen rule, independent of the
    /// regex engine.
    fn hyphen_oracle(text: &str) -> String {
        let mut chars: Vec<char> = text.chars().collect();
        loop {
            let mut changed = false;
            let mut i = 0;
            while i < chars.len() {
                if chars[i] == '-' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit() && i > 0 {
                    let p = chars[i - 1];
                    let left_ok = p.is_ascii_alphabetic()
                        || p == ' '
                        || (i >= 2 && chars[i - 2] == 'O' && (p == '2' || p == '3'))
                        || (i >= 3 && chars[i - 3] == 'B' && chars[i - 2] == '1' && p == '2');
                    if left_ok {
                        chars[i] = ' ';
                        changed = true;
                        i += 2;
                        continue;
                    }
                }
                i += 1;
            }
            if !changed {
                return chars.into_iter().collect();
            }
        }
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess("WBC-12.8*#"), "WBC 12.8*#");
        assert_eq!(preprocess("x-ray"), "x-ray");
        assert_eq!(preprocess("B12-500 O2-94"), "B12 500 O2 94");
        assert_eq!(hyphen_oracle("B12-500 O2-94"), "B12 500 O2 94");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(words("WBC-12.8*#"), ["WBC", "12.8", "*", "#"]);
        assert_eq!(
            words("blood pressure 120/63,"),
            ["blood", "pressure", "120/63", ","]
        );
        assert!(words("").is_empty());
        assert_eq!(words("100% on 1+ x"), ["100%", "on", "1+", "x"]);
        assert_eq!(words("O2 saturation."), ["O", "2", "saturation", "."]);
        assert_eq!(words("98.6°F"), ["98.6", "°", "F"]);
    }

    #[test]
    fn offsets_index_original_text() {
        let text = "Temp 98.6° WBC-12.8";
        let toks = tokenize(&preprocess(text), 0);
        let chars: Vec<char> = text.chars().collect();
        for t in &toks {
            let s: String = chars[t.start..t.end].iter().collect();
            assert_eq!(s, t.text);
        }
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("Pulse 66. BP 120/63."), vec![(0, 9), (10, 20)]);
        assert_eq!(split_sentences("Temp 98.6 stable"), vec![(0, 16)]);
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("Seen by Dr. Smith today.").len(), 1);
        assert_eq!(split_sentences("O2 sat. 97% today").len(), 1);
        assert_eq!(split_sentences("a\nb").len(), 2);
        assert_eq!(split_sentences("Really?! Yes.").len(), 2);
    }

    #[test]
    fn document_sentences_carry_offsets() {
        let text = "Labs: WBC-12.8*#.\n  She is well.";
        let s = sentences("d", text);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].words(), ["Labs", ":", "WBC", "12.8", "*", "#", "."]);
        assert_eq!(s[1].index, 1);
        assert_eq!(s[1].tokens[0].start, 20);
    }

    proptest! {
        #[test]
        fn preprocess_matches_oracle_and_is_idempotent(s in "[a-zA-Z0-9OB \\-.]{0,24}") {
            let p = preprocess(&s);
            prop_assert_eq!(&p, &hyphen_oracle(&s));
            prop_assert_eq!(preprocess(&p), p.clone());
            prop_assert_eq!(p.chars().count(), s.chars().count());
        }

        #[test]
        fn tokens_are_ordered_and_whitespace_free(s in "[a-zA-Z0-9 .,/%+*#:()\\-°]{0,40}") {
            let pre = preprocess(&s);
            let toks = tokenize(&pre, 0);
            let chars: Vec<char> = pre.chars().collect();
            let mut prev_end = 0;
            for t in &toks {
                prop_assert!(t.start < t.end);
                prop_assert!(t.start >= prev_end);
                prop_assert!(!t.text.chars().any(char::is_whitespace));
                let slice: String = chars[t.start..t.end].iter().collect();
                prop_assert_eq!(&slice, &t.text);
                // only whitespace between tokens
                prop_assert!(chars[prev_end..t.start].iter().all(|c| c.is_whitespace()));
                prev_end = t.end;
            }
            prop_assert!(chars[prev_end..].iter().all(|c| c.is_whitespace()));
        }

        #[test]
        fn sentences_cover_all_non_whitespace(s in "[a-z0-9 .!?\\n]{0,40}") {
            let ranges = split_sentences(&s);
            let chars: Vec<char> = s.chars().collect();
            let mut covered = vec![false; chars.len()];
            let mut prev_end = 0;
            for (a, b) in ranges {
                prop_assert!(a < b && a >= prev_end);
                for c in covered.iter_mut().take(b).skip(a) { *c = true; }
                prev_end = b;
            }
            for (i, c) in chars.iter().enumerate() {
                if !c.is_whitespace() { prop_assert!(covered[i]); }
            }
        }
    }
}
