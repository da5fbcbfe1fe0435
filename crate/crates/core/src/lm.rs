//! ARPA-format backoff n-gram language models.
//!
//! File values are log10; the scoring API returns natural logs. Words are
//! case-folded to lowercase at load time.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

pub const SENT_START: &str = "<s>";
pub const SENT_END: &str = "</s>";
pub const UNK: &str = "<unk>";

const MAX_ORDER: usize = 9;
const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("arpa line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("order {order}: header declares {declared} entries but {found} were parsed")]
    CountMismatch {
        order: usize,
        declared: usize,
        found: usize,
    },
    #[error("cannot score an empty token sequence")]
    EmptyTokens,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    logp: f64,    // natural log
    backoff: f64, // natural log, 0 when the file omits it
}

/// A loaded backoff model: per-order maps from token-id tuples to
/// (probability, backoff weight).
#[derive(Debug)]
pub struct ArpaModel {
    order: usize,
    vocab: HashMap<String, u32>,
    grams: Vec<HashMap<Box<[u32]>, Entry>>,
}

impl ArpaModel {
    pub fn max_order(&self) -> usize {
        self.order
    }

    /// Vocabulary size (number of unigram entries).
    pub fn vocab_size(&self) -> usize {
        self.grams[0].len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(&word.to_lowercase())
    }

    fn id(&self, word: &str) -> Option<u32> {
        self.vocab.get(&word.to_lowercase()).copied()
    }

    fn lookup(&self, ids: &[Option<u32>]) -> Option<Entry> {
        let key: Option<Vec<u32>> = ids.iter().copied().collect();
        let key = key?;
        self.grams.get(key.len() - 1)?.get(key.as_slice()).copied()
    }

    /// Backoff score of `word` after `context`, in natural log. Contexts
    /// longer than `order - 1` are truncated to the most recent tokens.
    /// Returns the `<unk>` score when the word is absent from the
    /// vocabulary and `<unk>` is present, else negative infinity.
    pub fn score_word(&self, context: &[&str], word: &str) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx: Vec<Option<u32>> = context[context.len() - keep..]
            .iter()
            .map(|w| self.id(w))
            .collect();
        self.score_word_ids(&ctx, self.id(word))
    }

    // (context, word) listed -> its probability; otherwise the context's
    // backoff weight (0 when missing) plus the score one order down
    fn score_word_ids(&self, ctx: &[Option<u32>], word_id: Option<u32>) -> f64 {
        let mut key = ctx.to_vec();
        key.push(word_id);
        if let Some(e) = self.lookup(&key) {
            return e.logp;
        }
        if ctx.is_empty() {
            return match self.lookup(&[self.id(UNK)]) {
                Some(e) => e.logp,
                None => f64::NEG_INFINITY,
            };
        }
        let bow = self.lookup(ctx).map(|e| e.backoff).unwrap_or(0.0);
        bow + self.score_word_ids(&ctx[1..], word_id)
    }

    /// Total natural-log probability of a sentence: each token scored with
    /// `<s>`-padded history, plus the terminal `</s>`.
    pub fn score_sentence(&self, tokens: &[&str]) -> Result<f64, LmError> {
        if tokens.is_empty() {
            return Err(LmError::EmptyTokens);
        }
        let mut history: Vec<&str> = vec![SENT_START];
        let mut total = 0.0;
        for &tok in tokens {
            total += self.score_word(&history, tok);
            history.push(tok);
        }
        total += self.score_word(&history, SENT_END);
        Ok(total)
    }
}

/// Parse an ARPA model from a reader. Header counts must match the number
/// of entry lines per order exactly.
pub fn parse_arpa(reader: impl BufRead) -> Result<ArpaModel, LmError> {
    enum State {
        Preamble,
        Header,
        Grams(usize),
        Done,
    }

    let mut declared: Vec<(usize, usize)> = Vec::new();
    let mut found: HashMap<usize, usize> = HashMap::new();
    let mut vocab: HashMap<String, u32> = HashMap::new();
    let mut grams: Vec<HashMap<Box<[u32]>, Entry>> = Vec::new();
    let mut state = State::Preamble;

    let intern = |vocab: &mut HashMap<String, u32>, w: &str| -> u32 {
        let folded = w.to_lowercase();
        if let Some(&id) = vocab.get(&folded) {
            return id;
        }
        let id = vocab.len() as u32;
        vocab.insert(folded, id);
        id
    };

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        match state {
            State::Preamble => {
                if trimmed.is_empty() {
                    continue;
                }
                if trimmed == "\\data\\" {
                    state = State::Header;
                } else {
                    return Err(LmError::Parse {
                        line: lineno,
                        msg: format!("expected \\data\\, got {trimmed:?}"),
                    });
                }
            }
            State::Header => {
                if trimmed.is_empty() {
                    continue;
                }
                if let Some(rest) = trimmed.strip_prefix("ngram ") {
                    let (k, c) = rest.split_once('=').ok_or_else(|| LmError::Parse {
                        line: lineno,
                        msg: format!("malformed ngram count {rest:?}"),
                    })?;
                    let k: usize = k.trim().parse().map_err(|_| LmError::Parse {
                        line: lineno,
                        msg: format!("bad order {k:?}"),
                    })?;
                    let c: usize = c.trim().parse().map_err(|_| LmError::Parse {
                        line: lineno,
                        msg: format!("bad count {c:?}"),
                    })?;
                    if k == 0 || k > MAX_ORDER {
                        return Err(LmError::Parse {
                            line: lineno,
                            msg: format!("order {k} outside 1..={MAX_ORDER}"),
                        });
                    }
                    declared.push((k, c));
                } else if let Some(k) = parse_section_header(trimmed) {
                    begin_section(k, &declared, &mut grams, lineno)?;
                    state = State::Grams(k);
                } else {
                    return Err(LmError::Parse {
                        line: lineno,
                        msg: format!("expected ngram count or section header, got {trimmed:?}"),
                    });
                }
            }
            State::Grams(order) => {
                if trimmed.is_empty() {
                    continue;
                }
                if trimmed == "\\end\\" {
                    state = State::Done;
                    continue;
                }
                if let Some(k) = parse_section_header(trimmed) {
                    begin_section(k, &declared, &mut grams, lineno)?;
                    state = State::Grams(k);
                    continue;
                }
                let max_declared = declared.iter().map(|&(k, _)| k).max().unwrap_or(0);
                let (logp10, ids, backoff10) =
                    parse_entry(trimmed, order, lineno, |w| intern(&mut vocab, w))?;
                if order == max_declared && backoff10.is_some() {
                    return Err(LmError::Parse {
                        line: lineno,
                        msg: format!("backoff weight on a highest-order ({order}) entry"),
                    });
                }
                if logp10 > 0.0 {
                    return Err(LmError::Parse {
                        line: lineno,
                        msg: format!("positive log10 probability {logp10}"),
                    });
                }
                *found.entry(order).or_insert(0) += 1;
                grams[order - 1].insert(
                    ids.into_boxed_slice(),
                    Entry {
                        logp: logp10 * LN_10,
                        backoff: backoff10.unwrap_or(0.0) * LN_10,
                    },
                );
            }
            State::Done => {
                if !trimmed.is_empty() {
                    return Err(LmError::Parse {
                        line: lineno,
                        msg: format!("content after \\end\\: {trimmed:?}"),
                    });
                }
            }
        }
    }

    if !matches!(state, State::Done) {
        return Err(LmError::Parse {
            line: 0,
            msg: "missing \\end\\".into(),
        });
    }
    if declared.is_empty() {
        return Err(LmError::Parse {
            line: 0,
            msg: "no ngram counts declared".into(),
        });
    }
    for &(k, c) in &declared {
        let got = found.get(&k).copied().unwrap_or(0);
        if got != c {
            return Err(LmError::CountMismatch {
                order: k,
                declared: c,
                found: got,
            });
        }
    }

    let order = declared.iter().map(|&(k, _)| k).max().unwrap();
    grams.resize_with(order, HashMap::new);
    Ok(ArpaModel {
        order,
        vocab,
        grams,
    })
}

pub fn load_arpa(path: impl AsRef<Path>) -> Result<ArpaModel, LmError> {
    parse_arpa(BufReader::new(File::open(path)?))
}

fn parse_section_header(line: &str) -> Option<usize> {
    let inner = line.strip_prefix('\\')?.strip_suffix("-grams:")?;
    inner.parse().ok()
}

fn begin_section(
    k: usize,
    declared: &[(usize, usize)],
    grams: &mut Vec<HashMap<Box<[u32]>, Entry>>,
    lineno: usize,
) -> Result<(), LmError> {
    if !declared.iter().any(|&(d, _)| d == k) {
        return Err(LmError::Parse {
            line: lineno,
            msg: format!("section \\{k}-grams: was not declared in \\data\\"),
        });
    }
    while grams.len() < k {
        grams.push(HashMap::new());
    }
    Ok(())
}

fn parse_entry(
    line: &str,
    order: usize,
    lineno: usize,
    mut intern: impl FnMut(&str) -> u32,
) -> Result<(f64, Vec<u32>, Option<f64>), LmError> {
    // fields are tab-separated; tokens inside a field may be space-separated
    let items: Vec<&str> = line
        .split('\t')
        .flat_map(|f| f.split(' '))
        .filter(|s| !s.is_empty())
        .collect();
    if items.len() != order + 1 && items.len() != order + 2 {
        return Err(LmError::Parse {
            line: lineno,
            msg: format!(
                "expected {} tokens (+ optional backoff) for a {order}-gram, got {}",
                order + 1,
                items.len()
            ),
        });
    }
    let logp: f64 = items[0].parse().map_err(|_| LmError::Parse {
        line: lineno,
        msg: format!("bad log probability {:?}", items[0]),
    })?;
    let backoff = if items.len() == order + 2 {
        Some(items[order + 1].parse().map_err(|_| LmError::Parse {
            line: lineno,
            msg: format!("bad backoff weight {:?}", items[order + 1]),
        })?)
    } else {
        None
    };
    let ids = items[1..=order].iter().map(|w| intern(w)).collect();
    Ok((logp, ids, backoff))
}
