//! Averaged-perceptron POS tagger with a deterministic rule fallback.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ShallowError;
use crate::corpus::Corpus;
use crate::tokenizer;

pub const POS_FORMAT_VERSION: u32 = 1;

/// Every tag the tagger may emit, in tie-break order.
pub const TAGSET: &[&str] = &[
    "NN", "NNS", "NNP", "JJ", "CD", "IN", "DT", "CC", "PRP", "PRP$", "RB", "MD", "TO", "VB",
    "VBD", "VBG", "VBN", "VBP", "VBZ", "SYM", ",", ".", ":",
];

const LEXICON: &[(&str, &str)] = &[
    ("of", "IN"),
    ("at", "IN"),
    ("on", "IN"),
    ("in", "IN"),
    ("with", "IN"),
    ("the", "DT"),
    ("a", "DT"),
    ("and", "CC"),
    ("or", "CC"),
    ("was", "VBD"),
    ("had", "VBD"),
    ("is", "VBZ"),
    ("her", "PRP$"),
    ("his", "PRP$"),
    ("she", "PRP"),
    ("he", "PRP"),
];

fn is_numeric_token(t: &str) -> bool {
    let body = t.strip_suffix('%').or_else(|| t.strip_suffix('+')).unwrap_or(t);
    if body.is_empty() {
        return false;
    }
    body.split('/').all(|part| {
        let mut pieces = part.split('.');
        let int = pieces.next().unwrap_or("");
        let frac = pieces.next();
        pieces.next().is_none()
            && !int.is_empty()
            && int.chars().all(|c| c.is_ascii_digit())
            && frac.is_none_or(|f| !f.is_empty() && f.chars().all(|c| c.is_ascii_digit()))
    })
}

/// Rule tagger: a pure function of the token string.
pub fn rule_tag(token: &str) -> &'static str {
    if is_numeric_token(token) {
        return "CD";
    }
    if !token.is_empty() && token.chars().all(|c| !c.is_alphanumeric()) {
        return match token {
            "," => ",",
            "." | "!" | "?" => ".",
            ":" | ";" => ":",
            _ => "SYM",
        };
    }
    let lower = token.to_lowercase();
    if let Some((_, tag)) = LEXICON.iter().find(|(w, _)| *w == lower) {
        return tag;
    }
    if lower.ends_with("ly") {
        "RB"
    } else if lower.ends_with("ing") {
        "VBG"
    } else if lower.ends_with("ed") {
        "VBD"
    } else if lower.ends_with('s') {
        "NNS"
    } else if token.chars().next().is_some_and(char::is_uppercase) {
        "NNP"
    } else {
        "NN"
    }
}

pub type TaggedSentence = Vec<(String, String)>;

/// Reads `token<TAB>tag` rows; blank lines separate sentences.
pub fn read_tagged<R: BufRead>(reader: R) -> Result<Vec<TaggedSentence>, ShallowError> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(tok), Some(tag), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(ShallowError::Format {
                line: i + 1,
                msg: format!("expected two tab-separated columns, got {line:?}"),
            });
        };
        if tok.is_empty() || !TAGSET.contains(&tag) {
            return Err(ShallowError::Format {
                line: i + 1,
                msg: format!("bad token or unknown tag {tag:?}"),
            });
        }
        cur.push((tok.to_string(), tag.to_string()));
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

pub fn write_tagged<W: Write>(sentences: &[TaggedSentence], mut w: W) -> std::io::Result<()> {
    for s in sentences {
        for (tok, tag) in s {
            writeln!(w, "{tok}\t{tag}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Tokenizes a corpus and tags it with the rule tagger: the training material
/// for the perceptron.
pub fn tag_corpus_with_rules(corpus: &Corpus) -> Vec<TaggedSentence> {
    corpus
        .documents
        .iter()
        .flat_map(|d| tokenizer::sentences(&d.id, &d.text))
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| (t.text.clone(), rule_tag(&t.text).to_string()))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosConfig {
    pub iterations: usize,
    pub seed: u64,
}

impl Default for PosConfig {
    fn default() -> Self {
        PosConfig {
            iterations: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosModel {
    format_version: u32,
    /// feature -> averaged weight per tag (indexed like `TAGSET`)
    weights: BTreeMap<String, Vec<f64>>,
    pub config: PosConfig,
}

fn features(words: &[&str], i: usize, prev_tag: &str) -> Vec<String> {
    let w = words[i];
    let lower = w.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut f = vec![format!("w={w}"), format!("lw={lower}")];
    for k in 1..=3.min(chars.len()) {
        let suf: String = chars[chars.len() - k..].iter().collect();
        f.push(format!("suf{k}={suf}"));
    }
    f.push(format!("pt={prev_tag}"));
    f.push(format!("pw={}", if i == 0 { "<S>" } else { words[i - 1] }));
    f.push(format!(
        "nw={}",
        if i + 1 == words.len() { "</S>" } else { words[i + 1] }
    ));
    f
}

impl PosModel {
    pub fn empty() -> Self {
        PosModel {
            format_version: POS_FORMAT_VERSION,
            ..PosModel::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn predict(&self, feats: &[String]) -> usize {
        let mut scores = vec![0.0; TAGSET.len()];
        for f in feats {
            if let Some(ws) = self.weights.get(f) {
                for (s, w) in scores.iter_mut().zip(ws) {
                    *s += w;
                }
            }
        }
        let mut best = 0;
        for t in 1..scores.len() {
            if scores[t] > scores[best] {
                best = t;
            }
        }
        best
    }

    /// One tag per token, greedy left to right. An empty model tags by rule.
    pub fn tag(&self, tokens: &[&str]) -> Result<Vec<&'static str>, super::ShallowError> {
        if tokens.is_empty() {
            return Err(ShallowError::Argument("cannot tag an empty sequence".into()));
        }
        if self.is_empty() {
            return Ok(tokens.iter().map(|t| rule_tag(t)).collect());
        }
        let mut out: Vec<&'static str> = Vec::with_capacity(tokens.len());
        for i in 0..tokens.len() {
            let prev = if i == 0 { "<S>" } else { out[i - 1] };
            out.push(TAGSET[self.predict(&features(tokens, i, prev))]);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, ShallowError> {
        let m: PosModel = serde_json::from_str(s).map_err(|e| ShallowError::Model(e.to_string()))?;
        if m.format_version != POS_FORMAT_VERSION {
            return Err(ShallowError::Model(format!(
                "unsupported POS format version {}",
                m.format_version
            )));
        }
        if m
            .weights
            .values()
            .any(|w| w.len() != TAGSET.len() || w.iter().any(|x| !x.is_finite()))
        {
            return Err(ShallowError::Model("malformed weight row".into()));
        }
        Ok(m)
    }
}

/// Averaged perceptron training with a seeded shuffle per epoch.
pub fn train_pos(data: &[TaggedSentence], config: &PosConfig) -> Result<PosModel, ShallowError> {
    if data.iter().all(|s| s.is_empty()) {
        return Err(ShallowError::Argument("no training sentences".into()));
    }
    let tag_index: HashMap<&str, usize> = TAGSET.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut gold: Vec<(Vec<&str>, Vec<usize>)> = Vec::new();
    for s in data.iter().filter(|s| !s.is_empty()) {
        let words = s.iter().map(|(w, _)| w.as_str()).collect();
        let tags = s
            .iter()
            .map(|(_, t)| {
                tag_index
                    .get(t.as_str())
                    .copied()
                    .ok_or_else(|| ShallowError::Argument(format!("unknown tag {t}")))
            })
            .collect::<Result<_, _>>()?;
        gold.push((words, tags));
    }

    let k = TAGSET.len();
    let mut weights: HashMap<String, Vec<f64>> = HashMap::new();
    let mut totals: HashMap<String, Vec<f64>> = HashMap::new();
    let mut stamps: HashMap<String, Vec<u64>> = HashMap::new();
    let mut clock: u64 = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..gold.len()).collect();

    let mut update = |weights: &mut HashMap<String, Vec<f64>>, f: &str, t: usize, delta: f64, clock: u64| {
        let w = weights.entry(f.to_string()).or_insert_with(|| vec![0.0; k]);
        let tot = totals.entry(f.to_string()).or_insert_with(|| vec![0.0; k]);
        let st = stamps.entry(f.to_string()).or_insert_with(|| vec![0; k]);
        tot[t] += (clock - st[t]) as f64 * w[t];
        st[t] = clock;
        w[t] += delta;
    };

    for _ in 0..config.iterations {
        order.shuffle(&mut rng);
        for &si in &order {
            let (words, tags) = &gold[si];
            let mut prev = "<S>";
            for (i, &truth) in tags.iter().enumerate() {
                clock += 1;
                let feats = features(words, i, prev);
                let mut scores = vec![0.0; k];
                for f in &feats {
                    if let Some(ws) = weights.get(f) {
                        for (s, w) in scores.iter_mut().zip(ws) {
                            *s += w;
                        }
                    }
                }
                let mut guess = 0;
                for t in 1..k {
                    if scores[t] > scores[guess] {
                        guess = t;
                    }
                }
                if guess != truth {
                    for f in &feats {
                        update(&mut weights, f, truth, 1.0, clock);
                        update(&mut weights, f, guess, -1.0, clock);
                    }
                }
                // condition on the gold tag while training
                prev = TAGSET[truth];
            }
        }
    }

    let mut averaged = BTreeMap::new();
    for (f, w) in &weights {
        let tot = &totals[f];
        let st = &stamps[f];
        let avg: Vec<f64> = (0..k)
            .map(|t| (tot[t] + (clock - st[t]) as f64 * w[t]) / clock.max(1) as f64)
            .collect();
        if avg.iter().any(|&x| x != 0.0) {
            averaged.insert(f.clone(), avg);
        }
    }
    Ok(PosModel {
        format_version: POS_FORMAT_VERSION,
        weights: averaged,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GeneratorConfig};

    #[test]
    fn rule_fallback_examples() {
        let empty = PosModel::empty();
        let tags = empty
            .tag(&["66", "120/63", "100%", "1+", "12.8", "pressure", "of", "Her", "WBC", ","])
            .unwrap();
        assert_eq!(tags, ["CD", "CD", "CD", "CD", "CD", "NN", "IN", "PRP$", "NNP", ","]);
        assert_eq!(rule_tag("quickly"), "RB");
        assert_eq!(rule_tag("ranging"), "VBG");
        assert_eq!(rule_tag("elevated"), "VBD");
        assert_eq!(rule_tag("liters"), "NNS");
        assert_eq!(rule_tag("*"), "SYM");
        assert!(empty.tag(&[]).is_err());
    }

    #[test]
    fn rule_tags_are_in_tagset() {
        for t in ["x", "X", "1/", "/", "%", "1.", "°", "ab12"] {
            assert!(TAGSET.contains(&rule_tag(t)), "{t}");
        }
    }

    #[test]
    fn memorizes_a_sentence() {
        let s: TaggedSentence = [("Lactate", "NN"), ("elevated", "VBN"), ("at", "IN"), ("6", "CD")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let m = train_pos(std::slice::from_ref(&s), &PosConfig::default()).unwrap();
        let words: Vec<&str> = s.iter().map(|(w, _)| w.as_str()).collect();
        let tags = m.tag(&words).unwrap();
        assert_eq!(tags, ["NN", "VBN", "IN", "CD"]);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let corpus = generate_synthetic(20, 4, &GeneratorConfig::default());
        let data = tag_corpus_with_rules(&corpus);
        let a = train_pos(&data, &PosConfig::default()).unwrap();
        let b = train_pos(&data, &PosConfig::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(PosModel::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn held_out_accuracy_on_synthetic_tagged_set() {
        let corpus = generate_synthetic(200, 21, &GeneratorConfig::default());
        let data = tag_corpus_with_rules(&corpus);
        assert!(data.len() >= 500, "only {} sentences", data.len());
        let (train, test) = data[..500].split_at(400);
        let model = train_pos(train, &PosConfig::default()).unwrap();
        let (mut right, mut total) = (0, 0);
        for s in test {
            let words: Vec<&str> = s.iter().map(|(w, _)| w.as_str()).collect();
            for (p, (_, g)) in model.tag(&words).unwrap().iter().zip(s) {
                right += (p == g) as usize;
                total += 1;
            }
        }
        let acc = right as f64 / total as f64;
        assert!(acc >= 0.90, "accuracy {acc}");
    }

    #[test]
    fn tagged_file_format() {
        let text = "heart\tNN\nrate\tNN\n\n66\tCD\n";
        let s = read_tagged(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        let mut buf = Vec::new();
        write_tagged(&s, &mut buf).unwrap();
        assert_eq!(read_tagged(buf.as_slice()).unwrap(), s);

        match read_tagged("heart NN\n".as_bytes()) {
            Err(ShallowError::Format { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        match read_tagged("a\tNN\nb\tXYZ\n".as_bytes()) {
            Err(ShallowError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
