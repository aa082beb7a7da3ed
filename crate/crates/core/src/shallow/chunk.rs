//! Regex-over-tags phrase chunker.
//!
//! NP := DT? (JJ | CD | NN | NNS | NNP)+
//! VP := MD? (VB | VBD | VBG | VBN | VBZ | VBP)+
//!
//! Longest match, non-overlapping, left to right.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChunkTag {
    BNp,
    INp,
    BVp,
    IVp,
    O,
}

impl ChunkTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkTag::BNp => "B-NP",
            ChunkTag::INp => "I-NP",
            ChunkTag::BVp => "B-VP",
            ChunkTag::IVp => "I-VP",
            ChunkTag::O => "O",
        }
    }
}

impl fmt::Display for ChunkTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn is_nominal(t: &str) -> bool {
    matches!(t, "JJ" | "CD" | "NN" | "NNS" | "NNP")
}

fn is_verbal(t: &str) -> bool {
    matches!(t, "VB" | "VBD" | "VBG" | "VBN" | "VBZ" | "VBP")
}

/// Length of the phrase starting at `i` built from an optional `opener` and a
/// run of `body` tags; 0 when there is no body.
fn phrase_len(tags: &[&str], i: usize, opener: &str, body: fn(&str) -> bool) -> usize {
    let mut j = i;
    if tags[j] == opener {
        j += 1;
    }
    let body_start = j;
    while j < tags.len() && body(tags[j]) {
        j += 1;
    }
    if j == body_start {
        0
    } else {
        j - i
    }
}

pub fn chunk<S: AsRef<str>>(tags: &[S]) -> Vec<ChunkTag> {
    let tags: Vec<&str> = tags.iter().map(|t| t.as_ref()).collect();
    let mut out = vec![ChunkTag::O; tags.len()];
    let mut i = 0;
    while i < tags.len() {
        let np = phrase_len(&tags, i, "DT", is_nominal);
        let vp = phrase_len(&tags, i, "MD", is_verbal);
        let (len, b, inside) = if np >= vp {
            (np, ChunkTag::BNp, ChunkTag::INp)
        } else {
            (vp, ChunkTag::BVp, ChunkTag::IVp)
        };
        if len == 0 {
            i += 1;
            continue;
        }
        out[i] = b;
        for t in out.iter_mut().skip(i + 1).take(len - 1) {
            *t = inside;
        }
        i += len;
    }
    out
}
