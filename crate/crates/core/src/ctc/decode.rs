//! Greedy decoding and prefix beam search over CTC log-probabilities.

use std::collections::BTreeMap;

use super::charset::Charset;
use super::loss::CtcError;
use crate::lm::{ArpaModel, SENT_START};

#[inline]
fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Per-frame argmax (ties to the lowest id), collapse adjacent repeats,
/// delete blanks.
pub fn greedy_decode(logprobs: &[f64], t: usize, charset: &Charset) -> String {
    let c = charset.class_count();
    assert_eq!(logprobs.len(), t * c, "logprob shape mismatch");
    let blank = charset.blank_id();
    let mut out = String::new();
    let mut prev: Option<u32> = None;
    for ti in 0..t {
        let row = &logprobs[ti * c..(ti + 1) * c];
        let mut best = 0usize;
        for ci in 1..c {
            if row[ci] > row[best] {
                best = ci;
            }
        }
        let best = best as u32;
        if best != blank && Some(best) != prev {
            out.push(charset.char_of(best).unwrap());
        }
        prev = Some(best);
    }
    out
}

/// Beam search knobs. `lm_alpha` weights word log-probabilities and
/// `word_bonus` is added per completed word.
pub struct DecodeParams<'a> {
    pub width: usize,
    pub lm: Option<&'a ArpaModel>,
    pub lm_alpha: f64,
    pub word_bonus: f64,
}

impl Default for DecodeParams<'_> {
    fn default() -> Self {
        DecodeParams {
            width: 128,
            lm: None,
            lm_alpha: 1.0,
            word_bonus: 1.5,
        }
    }
}

/// Log-probability a fully unknown word receives from the fusion layer.
const OOV_LOG_PROB: f64 = -10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSearchResult {
    pub transcript: String,
    pub score: f64,
}

#[derive(Clone, Copy)]
struct Mass {
    blank: f64,
    nonblank: f64,
}

impl Mass {
    const EMPTY: Mass = Mass {
        blank: f64::NEG_INFINITY,
        nonblank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        logaddexp(self.blank, self.nonblank)
    }
}

/// CTC prefix beam search. Each prefix tracks separate probabilities of
/// ending in blank and non-blank; completing a word (emitting a space) adds
/// `lm_alpha * ln P(word | previous words) + word_bonus`, and the final
/// ranking scores the trailing word the same way.
pub fn prefix_beam_search(
    logprobs: &[f64],
    t: usize,
    charset: &Charset,
    params: &DecodeParams,
) -> Result<BeamSearchResult, CtcError> {
    if params.width == 0 {
        return Err(CtcError::ZeroWidth);
    }
    let c = charset.class_count();
    if logprobs.len() != t * c {
        return Err(CtcError::ShapeMismatch {
            got: logprobs.len(),
            t,
            c,
        });
    }
    let blank = charset.blank_id();
    let space = charset.space_id();

    let mut beams: Vec<(Vec<u32>, Mass)> = vec![(
        Vec::new(),
        Mass {
            blank: 0.0,
            nonblank: f64::NEG_INFINITY,
        },
    )];

    for ti in 0..t {
        let row = &logprobs[ti * c..(ti + 1) * c];
        let mut next: BTreeMap<Vec<u32>, Mass> = BTreeMap::new();

        for (prefix, mass) in &beams {
            // blank keeps the prefix and moves mass to the blank side
            {
                let e = next.entry(prefix.clone()).or_insert(Mass::EMPTY);
                e.blank = logaddexp(e.blank, mass.total() + row[blank as usize]);
            }
            for ci in 0..c as u32 {
                if ci == blank {
                    continue;
                }
                let lp = row[ci as usize];
                if Some(&ci) == prefix.last() {
                    // same symbol twice in a row collapses onto the prefix
                    let e = next.entry(prefix.clone()).or_insert(Mass::EMPTY);
                    e.nonblank = logaddexp(e.nonblank, mass.nonblank + lp);
                    // only the blank-terminated mass can start a new copy
                    let mut ext = prefix.clone();
                    ext.push(ci);
                    let bonus = word_boundary_bonus(&ext, ci, space, charset, params);
                    let e = next.entry(ext).or_insert(Mass::EMPTY);
                    e.nonblank = logaddexp(e.nonblank, mass.blank + lp + bonus);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(ci);
                    let bonus = word_boundary_bonus(&ext, ci, space, charset, params);
                    let e = next.entry(ext).or_insert(Mass::EMPTY);
                    e.nonblank = logaddexp(e.nonblank, mass.total() + lp + bonus);
                }
            }
        }

        let mut pruned: Vec<(Vec<u32>, Mass)> = next.into_iter().collect();
        // score descending, ties by lexicographic prefix order
        pruned.sort_by(|a, b| {
            b.1.total()
                .partial_cmp(&a.1.total())
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        pruned.truncate(params.width);
        beams = pruned;
    }

    let best = beams
        .into_iter()
        .map(|(prefix, mass)| {
            let score = mass.total() + trailing_word_bonus(&prefix, space, charset, params);
            (prefix, score)
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(&a.0)))
        .expect("at least the empty prefix survives");

    Ok(BeamSearchResult {
        transcript: charset.decode(&best.0).expect("beam prefixes are valid"),
        score: best.1,
    })
}

/// LM contribution when `emitted` lands at the end of `prefix`. Non-space
/// symbols and empty words (consecutive spaces) contribute nothing.
fn word_boundary_bonus(
    prefix: &[u32],
    emitted: u32,
    space: u32,
    charset: &Charset,
    params: &DecodeParams,
) -> f64 {
    if emitted != space {
        return 0.0;
    }
    // the completed word is everything after the previous space
    score_word_at(&prefix[..prefix.len() - 1], space, charset, params)
}

fn trailing_word_bonus(
    prefix: &[u32],
    space: u32,
    charset: &Charset,
    params: &DecodeParams,
) -> f64 {
    score_word_at(prefix, space, charset, params)
}

fn score_word_at(ids: &[u32], space: u32, charset: &Charset, params: &DecodeParams) -> f64 {
    let Some(lm) = params.lm else {
        return 0.0;
    };
    if ids.is_empty() || ids.last() == Some(&space) {
        // consecutive spaces or a leading space: no pending word
        return 0.0;
    }
    let text: String = ids
        .iter()
        .map(|&id| charset.char_of(id).unwrap())
        .collect();
    let mut words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    let word = words.pop().expect("text ends in a non-space symbol");
    let mut context = vec![SENT_START];
    context.extend(words);
    let lm_score = lm.score_word(&context, word);
    let lm_score = if lm_score == f64::NEG_INFINITY {
        OOV_LOG_PROB
    } else {
        lm_score
    };
    params.lm_alpha * lm_score + params.word_bonus
}
