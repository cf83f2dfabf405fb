//! Synthetic document/summary pairs for desk-scale runs: "copy" (the
//! summary is the first sentence) and "lead" (the first k tokens), with
//! optional out-of-vocabulary tokens planted in the summary span.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, SENT_END_TOKEN};
use crate::error::{DcaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Copy,
    Lead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyOptions {
    pub kind: CorpusKind,
    pub size: usize,
    /// Distinct generated words `t0 … t{n−1}`.
    pub word_types: usize,
    pub paragraphs: usize,
    pub sentences_per_paragraph: usize,
    /// Words per sentence, before the sentence end, inclusive range.
    pub min_sentence: usize,
    pub max_sentence: usize,
    /// Summary length of the lead kind.
    pub lead_tokens: usize,
    /// Probability that a document receives one unseen token inside its
    /// summary span.
    pub oov_rate: f64,
    pub seed: u64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            kind: CorpusKind::Copy,
            size: 64,
            word_types: 40,
            paragraphs: 2,
            sentences_per_paragraph: 2,
            min_sentence: 3,
            max_sentence: 6,
            lead_tokens: 8,
            oov_rate: 0.0,
            seed: 1,
        }
    }
}

/// Generated in-vocabulary word.
pub fn word(i: usize) -> String {
    format!("t{i}")
}

/// Planted unseen token; never collides with [`word`].
pub fn oov_word(doc: usize) -> String {
    format!("q{doc}")
}

pub fn is_oov_word(token: &str) -> bool {
    token
        .strip_prefix('q')
        .is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
}

pub fn make_toy_corpus(opts: &ToyOptions) -> Result<Vec<Example>> {
    if opts.size == 0 {
        return Err(DcaError::Argument("corpus size must be at least 1".into()));
    }
    if opts.word_types == 0 || opts.paragraphs == 0 || opts.sentences_per_paragraph == 0 {
        return Err(DcaError::Argument(
            "word types, paragraphs and sentences must be positive".into(),
        ));
    }
    if opts.min_sentence == 0 || opts.min_sentence > opts.max_sentence {
        return Err(DcaError::Argument(format!(
            "sentence length range {}..={} is empty or allows empty sentences",
            opts.min_sentence, opts.max_sentence
        )));
    }
    if !(0.0..=1.0).contains(&opts.oov_rate) {
        return Err(DcaError::Argument(format!("oov_rate {} outside [0, 1]", opts.oov_rate)));
    }
    if opts.kind == CorpusKind::Lead && opts.lead_tokens == 0 {
        return Err(DcaError::Argument("lead summaries need at least one token".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.size)
        .map(|doc| {
            let mut paragraphs: Vec<Vec<Vec<String>>> = (0..opts.paragraphs)
                .map(|_| {
                    (0..opts.sentences_per_paragraph)
                        .map(|_| {
                            let n = rng.gen_range(opts.min_sentence..=opts.max_sentence);
                            (0..n).map(|_| word(rng.gen_range(0..opts.word_types))).collect()
                        })
                        .collect()
                })
                .collect();
            let first_len = paragraphs[0][0].len();
            let span = match opts.kind {
                CorpusKind::Copy => first_len,
                CorpusKind::Lead => opts.lead_tokens.min(first_len),
            };
            if rng.gen_bool(opts.oov_rate) {
                let at = rng.gen_range(0..span);
                paragraphs[0][0][at] = oov_word(doc);
            }
            let flat: Vec<String> = paragraphs
                .iter()
                .flatten()
                .flat_map(|s| s.iter().cloned().chain([SENT_END_TOKEN.to_string()]))
                .collect();
            let summary: Vec<String> = match opts.kind {
                CorpusKind::Copy => flat[..first_len + 1].to_vec(),
                CorpusKind::Lead => flat[..opts.lead_tokens.min(flat.len())].to_vec(),
            };
            let document = paragraphs
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|s| format!("{} {SENT_END_TOKEN}", s.join(" ")))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            Ok(Example {
                id: format!("toy{doc}"),
                document,
                summary: summary.join(" "),
            })
        })
        .collect()
}
