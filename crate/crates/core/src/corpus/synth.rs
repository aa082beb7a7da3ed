//! Seeded generator of discharge-summary-like documents with gold annotations.
//!
//! Every document is assembled span by span, so entity offsets and relations
//! are correct by construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Document, Entity, EntityKind, Relation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a saturation clause puts its value before the attribute.
    pub inversion_rate: f64,
    /// Probability of a sentence being a pure distractor (numbers, no entities).
    pub distractor_rate: f64,
    /// Every `inverted_every`-th document opens with a vital-signs sentence whose
    /// saturation clause is value-first.
    pub inverted_every: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            min_sentences: 4,
            max_sentences: 8,
            inversion_rate: 0.5,
            distractor_rate: 0.2,
            inverted_every: 10,
        }
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Int(u32, u32),
    /// (lo, hi, decimals)
    Dec(f64, f64, usize),
    Ratio,
    Percent(u32, u32),
}

impl Shape {
    fn draw(self, rng: &mut ChaCha8Rng) -> String {
        match self {
            Shape::Int(lo, hi) => rng.gen_range(lo..=hi).to_string(),
            Shape::Dec(lo, hi, places) => {
                let scale = 10f64.powi(places as i32);
                let v = rng.gen_range((lo * scale) as u32..=(hi * scale) as u32);
                format!("{:.*}", places, v as f64 / scale)
            }
            Shape::Ratio => format!("{}/{}", rng.gen_range(90..=180), rng.gen_range(45..=100)),
            Shape::Percent(lo, hi) => format!("{}%", rng.gen_range(lo..=hi)),
        }
    }
}

const VITALS: &[(&str, Shape)] = &[
    ("heart rate", Shape::Int(48, 130)),
    ("pulse", Shape::Int(48, 130)),
    ("blood pressure", Shape::Ratio),
    ("respiratory rate", Shape::Int(10, 32)),
    ("temperature", Shape::Dec(95.5, 103.0, 1)),
];

const SATURATION: &[&str] = &["O2 saturation", "oxygen saturation"];

const VITAL_PREFIXES: &[&str] = &[
    "Her vital signs the following day, she had",
    "His vital signs the following day, he had",
    "On admission, she had",
    "On exam, he had",
    "Vital signs:",
    "Vitals on transfer were",
    "At discharge, she had",
];

const LAB_ABBREV: &[(&str, Shape)] = &[
    ("WBC", Shape::Dec(3.0, 20.0, 1)),
    ("RBC", Shape::Dec(2.5, 6.0, 2)),
    ("Hgb", Shape::Dec(7.0, 16.0, 1)),
    ("Hct", Shape::Dec(22.0, 50.0, 1)),
    ("Plt Ct", Shape::Int(80, 450)),
    ("Glucose", Shape::Int(60, 300)),
    ("UreaN", Shape::Int(5, 60)),
    ("Creat", Shape::Dec(0.5, 3.0, 1)),
    ("Na", Shape::Int(128, 148)),
    ("K", Shape::Dec(3.0, 5.8, 1)),
    ("AnGap", Shape::Int(6, 22)),
    ("B12", Shape::Int(200, 900)),
];

const LAB_PROSE: &[(&str, Shape)] = &[
    ("glucose", Shape::Int(60, 300)),
    ("sodium", Shape::Int(128, 148)),
    ("potassium", Shape::Dec(3.0, 5.8, 1)),
    ("anion gap", Shape::Int(6, 22)),
    ("hematocrit", Shape::Dec(22.0, 50.0, 1)),
    ("platelets count", Shape::Int(80, 450)),
    ("urea nitrogen", Shape::Int(5, 60)),
    ("WBC", Shape::Dec(3.0, 20.0, 1)),
    ("RBC", Shape::Dec(2.5, 6.0, 2)),
];

const PULSE_SITES: &[&str] = &[
    "right DP pulse",
    "left DP pulse",
    "right PT pulse",
    "left PT pulse",
    "right radial pulse",
    "left radial pulse",
];

const TRENDING: &[(&str, Shape)] = &[
    ("Lactate", Shape::Int(1, 12)),
    ("Troponin", Shape::Dec(0.1, 4.0, 2)),
    ("Glucose", Shape::Int(60, 300)),
    ("Creatinine", Shape::Dec(0.5, 4.0, 1)),
];

const DRUGS: &[&str] = &[
    "Metoprolol",
    "Lisinopril",
    "Furosemide",
    "Heparin",
    "Insulin",
    "Warfarin",
];

/// Accumulates text while recording entity spans in code points.
struct DocBuilder {
    text: String,
    len: usize,
    entities: Vec<Entity>,
    relations: Vec<Relation>,
}

impl DocBuilder {
    fn new() -> Self {
        DocBuilder {
            text: String::new(),
            len: 0,
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.len += s.chars().count();
    }

    fn entity(&mut self, kind: EntityKind, surface: &str) -> String {
        let id = format!("T{}", self.entities.len() + 1);
        let start = self.len;
        self.push(surface);
        self.entities
            .push(Entity::new(id.clone(), kind, start, self.len));
        id
    }

    fn attr(&mut self, surface: &str) -> String {
        self.entity(EntityKind::Attr, surface)
    }

    fn val(&mut self, surface: &str) -> String {
        self.entity(EntityKind::Val, surface)
    }

    fn relate(&mut self, attr: &str, value: &str) {
        self.relations.push(Relation::new(attr, value));
    }
}

/// Generates `n_docs` documents; document `i` depends only on `(seed, i)`.
pub fn generate_synthetic(n_docs: usize, seed: u64, config: &GeneratorConfig) -> Corpus {
    let documents = (0..n_docs)
        .map(|i| generate_document(i, seed, config))
        .collect();
    Corpus { documents }
}

fn generate_document(index: usize, seed: u64, config: &GeneratorConfig) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut b = DocBuilder::new();

    let lo = config.min_sentences.max(1);
    let hi = config.max_sentences.max(lo);
    let n_sentences = rng.gen_range(lo..=hi);
    let force_inverted = config.inverted_every > 0 && index.is_multiple_of(config.inverted_every);

    for s in 0..n_sentences {
        if s > 0 {
            b.push(if rng.gen_bool(0.3) { "\n" } else { " " });
        }
        if s == 0 && force_inverted {
            vitals(&mut b, &mut rng, config, true);
            continue;
        }
        if rng.gen_bool(config.distractor_rate.clamp(0.0, 1.0)) {
            distractor(&mut b, &mut rng);
            continue;
        }
        match rng.gen_range(0..10) {
            0..=3 => vitals(&mut b, &mut rng, config, false),
            4 | 5 => labs_hyphenated(&mut b, &mut rng),
            6 => labs_prose(&mut b, &mut rng),
            7 => pulses(&mut b, &mut rng),
            8 => trending(&mut b, &mut rng),
            _ => drug(&mut b, &mut rng),
        }
    }

    Document {
        id: format!("doc-{index:04}"),
        text: b.text,
        entities: b.entities,
        relations: b.relations,
    }
}

fn vitals(b: &mut DocBuilder, rng: &mut ChaCha8Rng, config: &GeneratorConfig, force_inverted: bool) {
    let prefix = *VITAL_PREFIXES.choose(rng).unwrap();
    if rng.gen_bool(0.15) {
        b.push(&format!("On hospital day {}, ", rng.gen_range(2..=14)));
        let mut p = prefix.to_string();
        p[..1].make_ascii_lowercase();
        b.push(&p);
    } else {
        b.push(prefix);
    }
    b.push(" ");

    let mut picks: Vec<usize> = (0..VITALS.len()).collect();
    picks.shuffle(rng);
    picks.truncate(rng.gen_range(1..=4));
    let with_sat = force_inverted || rng.gen_bool(0.7);
    let sat_inverted = force_inverted || rng.gen_bool(config.inversion_rate.clamp(0.0, 1.0));
    let sat_at = rng.gen_range(0..=picks.len());

    let mut first = true;
    for slot in 0..=picks.len() {
        if slot == sat_at && with_sat {
            if !first {
                b.push(", ");
            }
            first = false;
            saturation_clause(b, rng, sat_inverted);
        }
        if slot == picks.len() {
            break;
        }
        if !first {
            b.push(", ");
        }
        first = false;
        let (name, shape) = VITALS[picks[slot]];
        vital_clause(b, rng, name, shape);
    }
    b.push(".");
}

fn vital_clause(b: &mut DocBuilder, rng: &mut ChaCha8Rng, name: &str, shape: Shape) {
    let a = b.attr(name);
    match rng.gen_range(0..10) {
        0..=2 => b.push(" of "),
        3 => b.push(" was "),
        4 if matches!(shape, Shape::Int(..)) => {
            b.push(" ranging from ");
            let v = b.val(&shape.draw(rng));
            b.relate(&a, &v);
            b.push(" to ");
        }
        _ => b.push(" "),
    }
    let v = b.val(&shape.draw(rng));
    b.relate(&a, &v);
    if name == "temperature" && rng.gen_bool(0.3) {
        b.push("°F");
    }
}

fn saturation_clause(b: &mut DocBuilder, rng: &mut ChaCha8Rng, inverted: bool) {
    let name = *SATURATION.choose(rng).unwrap();
    let value = Shape::Percent(84, 100).draw(rng);
    if inverted {
        let v = b.val(&value);
        if rng.gen_bool(0.6) {
            b.push(&format!(" on {} liters nasal cannula ", rng.gen_range(1..=6)));
        } else {
            b.push(" on room air ");
        }
        let a = b.attr(name);
        b.relate(&a, &v);
    } else {
        let a = b.attr(name);
        b.push(if rng.gen_bool(0.3) { " of " } else { " " });
        let v = b.val(&value);
        b.relate(&a, &v);
        if rng.gen_bool(0.4) {
            b.push(&format!(" on {} liters", rng.gen_range(1..=6)));
        }
    }
}

fn labs_hyphenated(b: &mut DocBuilder, rng: &mut ChaCha8Rng) {
    let lead = ["Labs: ", "Admission labs: ", "Discharge labs: ", ""];
    b.push(lead.choose(rng).unwrap());
    let mut picks: Vec<usize> = (0..LAB_ABBREV.len()).collect();
    picks.shuffle(rng);
    picks.truncate(rng.gen_range(2..=6));
    for (k, &i) in picks.iter().enumerate() {
        if k > 0 {
            b.push(" ");
        }
        let (name, shape) = LAB_ABBREV[i];
        let a = b.attr(name);
        b.push("-");
        let v = b.val(&shape.draw(rng));
        b.relate(&a, &v);
        b.push(["", "", "*", "*#", "#"].choose(rng).unwrap());
    }
    b.push(".");
}

fn labs_prose(b: &mut DocBuilder, rng: &mut ChaCha8Rng) {
    let lead = ["Her labs showed", "Labs were notable for", "His labs revealed"];
    b.push(lead.choose(rng).unwrap());
    b.push(" ");
    let mut picks: Vec<usize> = (0..LAB_PROSE.len()).collect();
    picks.shuffle(rng);
    picks.truncate(rng.gen_range(1..=4));
    let n = picks.len();
    for (k, &i) in picks.iter().enumerate() {
        if k > 0 {
            b.push(if k + 1 == n { " and " } else { ", " });
        }
        let (name, shape) = LAB_PROSE[i];
        let a = b.attr(name);
        b.push([" of ", " ", " was "].choose(rng).unwrap());
        let v = b.val(&shape.draw(rng));
        b.relate(&a, &v);
    }
    b.push(".");
}

fn pulses(b: &mut DocBuilder, rng: &mut ChaCha8Rng) {
    if rng.gen_bool(0.3) {
        b.push("Pulses: ");
    }
    let mut picks: Vec<usize> = (0..PULSE_SITES.len()).collect();
    picks.shuffle(rng);
    picks.truncate(rng.gen_range(2..=4));
    for (k, &i) in picks.iter().enumerate() {
        if k > 0 {
            b.push(", ");
        }
        let v = b.val(&format!("{}+", rng.gen_range(0..=3)));
        b.push(" ");
        let a = b.attr(PULSE_SITES[i]);
        b.relate(&a, &v);
    }
    b.push(".");
}

fn trending(b: &mut DocBuilder, rng: &mut ChaCha8Rng) {
    let (name, shape) = *TRENDING.choose(rng).unwrap();
    let a = b.attr(name);
    b.push(
        [" elevated at ", " trended down to ", " peaked at ", " was noted to be "]
            .choose(rng)
            .unwrap(),
    );
    let v = b.val(&shape.draw(rng));
    b.relate(&a, &v);
    if rng.gen_bool(0.4) {
        b.push(&format!(" after {} hours", rng.gen_range(2..=48)));
    }
    b.push(".");
}

fn drug(b: &mut DocBuilder, rng: &mut ChaCha8Rng) {
    let name = *DRUGS.choose(rng).unwrap();
    match rng.gen_range(0..3) {
        0 => {
            b.push(&format!("{name} "));
            let a = b.attr("dosage");
            b.push(" of ");
            let v = b.val(&(rng.gen_range(1..=20) * 5).to_string());
            b.relate(&a, &v);
            b.push(" mg, ");
            let a = b.attr("frequency");
            b.push(" ");
            let v = b.val(&rng.gen_range(1..=4).to_string());
            b.relate(&a, &v);
            b.push(" times daily.");
        }
        1 => {
            b.push(&format!("Continue {name} with "));
            let a = b.attr("dosage");
            b.push(" ");
            let v = b.val(&(rng.gen_range(1..=20) * 5).to_string());
            b.relate(&a, &v);
            b.push(" mg and ");
            let a = b.attr("quantity");
            b.push(" ");
            let v = b.val(&rng.gen_range(10..=90).to_string());
            b.relate(&a, &v);
            b.push(" tablets.");
        }
        _ => {
            b.push(&format!("{name} {} mg with ", rng.gen_range(1..=20) * 5));
            let a = b.attr("periodic interval");
            b.push(" of ");
            let v = b.val(&rng.gen_range(4..=24).to_string());
            b.relate(&a, &v);
            b.push(" hours.");
        }
    }
}

fn distractor(b: &mut DocBuilder, rng: &mut ChaCha8Rng) {
    let n = rng.gen_range(2..=12);
    let s = match rng.gen_range(0..6) {
        0 => format!(
            "She is a {} year old woman with a history of hypertension.",
            rng.gen_range(25..=95)
        ),
        1 => format!("He was admitted {n} days ago with chest pain."),
        2 => format!("Follow up in {n} weeks with cardiology."),
        3 => format!("She received {n} units of packed red cells."),
        4 => format!("Patient was discharged on hospital day {n}."),
        _ => format!("He walked {} feet with physical therapy.", n * 25),
    };
    b.push(&s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{char_slice, parse_document, write_document};

    #[test]
    fn zero_docs_is_empty() {
        assert!(generate_synthetic(0, 1, &GeneratorConfig::default()).is_empty());
    }

    #[test]
    fn surfaces_are_plausible_and_documents_validate() {
        let corpus = generate_synthetic(100, 3, &GeneratorConfig::default());
        for doc in &corpus.documents {
            doc.validate().unwrap();
            let back = parse_document(&write_document(doc)).unwrap();
            assert_eq!(&back, doc);
            for e in &doc.entities {
                let s = char_slice(&doc.text, e.start, e.end);
                match e.kind {
                    EntityKind::Val => assert!(
                        s.chars().next().unwrap().is_ascii_digit(),
                        "value {s:?} in {}",
                        doc.id
                    ),
                    EntityKind::Attr => assert!(
                        s.chars().next().unwrap().is_alphabetic(),
                        "attr {s:?} in {}",
                        doc.id
                    ),
                }
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic(30, 11, &cfg).to_jsonl();
        let b = generate_synthetic(30, 11, &cfg).to_jsonl();
        let c = generate_synthetic(30, 12, &cfg).to_jsonl();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn contains_every_template_family() {
        let corpus = generate_synthetic(60, 5, &GeneratorConfig::default());
        let all: String = corpus
            .documents
            .iter()
            .map(|d| d.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        assert!(all.contains("nasal cannula") || all.contains("room air"));
        assert!(all.contains("WBC-") || all.contains("Hct-"));
        assert!(all.contains("pulse,") || all.contains("pulse."));
        assert!(all.contains("year old") || all.contains("days ago") || all.contains("weeks"));
    }
}
