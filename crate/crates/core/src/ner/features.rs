use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::NerError;
use crate::tokenizer::Token;

const START: &str = "⟨S⟩";
const END: &str = "⟨/S⟩";

/// Feature family toggles and window sizes for the token feature factory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NerFeatureConfig {
    pub word: bool,
    pub position: bool,
    pub shape: bool,
    pub ngrams: bool,
    pub disjunctions: bool,
    pub ngram_max: usize,
    pub disjunction_window: usize,
}

impl Default for NerFeatureConfig {
    fn default() -> Self {
        NerFeatureConfig {
            word: true,
            position: true,
            shape: true,
            ngrams: true,
            disjunctions: true,
            ngram_max: 4,
            disjunction_window: 4,
        }
    }
}

pub(crate) fn word_shape(word: &str) -> String {
    word.chars()
        .map(|c| {
            if c.is_uppercase() {
                'X'
            } else if c.is_lowercase() {
                'x'
            } else if c.is_ascii_digit() {
                'd'
            } else {
                c
            }
        })
        .collect()
}

pub(crate) fn collapse_runs(shape: &str) -> String {
    let mut out = String::new();
    let mut prev = None;
    for c in shape.chars() {
        if prev != Some(c) {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

fn position_buckets(i: usize, n: usize) -> Vec<&'static str> {
    let mut out = Vec::new();
    if i == 0 {
        out.push("first");
    }
    if i == 1 && i + 1 != n {
        out.push("second");
    }
    if i + 2 == n && i != 0 {
        out.push("penultimate");
    }
    if i + 1 == n {
        out.push("last");
    }
    if out.is_empty() {
        out.push("middle");
    }
    out
}

/// Feature strings for token `i`, each prefixed by its family tag.
pub fn extract_ner_features(
    tokens: &[Token],
    i: usize,
    config: &NerFeatureConfig,
) -> Result<BTreeSet<String>, NerError> {
    if i >= tokens.len() {
        return Err(NerError::Argument(format!(
            "token index {i} out of range for sentence of length {}",
            tokens.len()
        )));
    }
    let n = tokens.len();
    let w = tokens[i].text.as_str();
    let mut f = BTreeSet::new();

    if config.word {
        f.insert(format!("w={w}"));
        f.insert(format!("lw={}", w.to_lowercase()));
        let prev = if i == 0 { START } else { tokens[i - 1].text.as_str() };
        let next = if i + 1 == n { END } else { tokens[i + 1].text.as_str() };
        f.insert(format!("w-1={prev}"));
        f.insert(format!("w+1={next}"));
    }
    if config.position {
        for b in position_buckets(i, n) {
            f.insert(format!("pos={b}"));
        }
        f.insert(format!("idx={}", i.min(10)));
    }
    if config.shape {
        let shape = word_shape(w);
        f.insert(format!("cshape={}", collapse_runs(&shape)));
        f.insert(format!("shape={shape}"));
    }
    if config.ngrams {
        let chars: Vec<char> = w.chars().collect();
        for k in 1..=config.ngram_max.min(chars.len()) {
            let pre: String = chars[..k].iter().collect();
            let suf: String = chars[chars.len() - k..].iter().collect();
            f.insert(format!("pre_{k}={pre}"));
            f.insert(format!("suf_{k}={suf}"));
        }
    }
    if config.disjunctions {
        let win = config.disjunction_window;
        for t in &tokens[i.saturating_sub(win)..i] {
            f.insert(format!("dis-={}", t.text));
        }
        for t in &tokens[(i + 1).min(n)..(i + 1 + win).min(n)] {
            f.insert(format!("dis+={}", t.text));
        }
    }
    Ok(f)
}
