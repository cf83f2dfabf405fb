//! Corpus-level decoding and scoring, and the agent-count sweep.

use std::path::Path;
use std::thread;

use crate::checkpoint;
use crate::config::ModelConfig;
use crate::corpus::{prepare, Example, PreparedExample};
use crate::error::{DcaError, Result};
use crate::inference::{summarize, DecodeOptions, Decoded};
use crate::model::Model;
use crate::rouge::rouge_all;
use crate::train::{self, BEST_FILE};

impl DecodeOptions {
    /// Test-time settings from a config.
    pub fn from_config(c: &ModelConfig) -> Self {
        DecodeOptions {
            beam_width: c.beam_width,
            max_len: c.max_len_test,
            block_trigrams: c.block_trigrams,
        }
    }
}

/// Mean ROUGE F1 of one system over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub tag: String,
    pub examples: usize,
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
}

impl EvalRow {
    pub const HEADER: &'static str = "tag\texamples\trouge_1\trouge_2\trouge_l";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            self.tag, self.examples, self.rouge_1, self.rouge_2, self.rouge_l
        )
    }
}

/// Line-aligned hypotheses and references scored into one row.
pub fn score_corpus(tag: &str, hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<EvalRow> {
    if hyps.len() != refs.len() {
        return Err(DcaError::Argument(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(DcaError::EmptyCorpus);
    }
    let mut row = EvalRow {
        tag: tag.to_string(),
        examples: hyps.len(),
        rouge_1: 0.0,
        rouge_2: 0.0,
        rouge_l: 0.0,
    };
    for (h, r) in hyps.iter().zip(refs) {
        let t = rouge_all(h, r);
        row.rouge_1 += t.rouge_1.f1;
        row.rouge_2 += t.rouge_2.f1;
        row.rouge_l += t.rouge_l.f1;
    }
    let n = hyps.len() as f64;
    row.rouge_1 /= n;
    row.rouge_2 /= n;
    row.rouge_l /= n;
    Ok(row)
}

pub fn prepare_for_decoding(model: &Model, examples: &[Example]) -> Vec<PreparedExample> {
    let c = &model.config;
    examples
        .iter()
        .map(|e| prepare(e, &model.vocab, c.agents, c.per_agent_limit, c.max_len_test))
        .collect()
}

/// Decodes every example, spreading them over the available cores. Output
/// order follows the input.
pub fn decode_corpus(
    model: &Model,
    examples: &[PreparedExample],
    opts: DecodeOptions,
) -> Result<Vec<(Vec<String>, Decoded)>> {
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(examples.len().max(1));
    let chunk = examples.len().div_ceil(workers).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|ex| summarize(model, ex, opts))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(examples.len());
        for h in handles {
            out.extend(
                h.join()
                    .map_err(|_| DcaError::Contract("decoding worker panicked".into()))??,
            );
        }
        Ok(out)
    })
}

/// Beam-decodes and scores a corpus; the row is labeled with the config tag.
pub fn evaluate(model: &Model, examples: &[Example], opts: DecodeOptions) -> Result<EvalRow> {
    let prepared = prepare_for_decoding(model, examples);
    let decoded = decode_corpus(model, &prepared, opts)?;
    let hyps: Vec<Vec<String>> = decoded.into_iter().map(|(w, _)| w).collect();
    let refs: Vec<Vec<String>> = prepared.iter().map(|p| p.reference.clone()).collect();
    score_corpus(&model.config.tag, &hyps, &refs)
}

/// Trains and evaluates one model per agent count, each in its own
/// `agents{M}` subdirectory of `out_dir`.
pub fn sweep(
    config: &ModelConfig,
    agent_counts: &[usize],
    train_set: &[Example],
    valid_set: &[Example],
    test_set: &[Example],
    out_dir: &Path,
) -> Result<Vec<EvalRow>> {
    if agent_counts.is_empty() {
        return Err(DcaError::Argument("no agent counts to sweep".into()));
    }
    agent_counts
        .iter()
        .map(|&m| {
            let mut c = config.clone();
            c.agents = m;
            c.tag = format!("{}-{m}agents", config.tag);
            let dir = out_dir.join(format!("agents{m}"));
            train::train(&c, train_set, valid_set, &dir)?;
            let (model, _) = checkpoint::load(&dir.join(BEST_FILE))?;
            evaluate(&model, test_set, DecodeOptions::from_config(&model.config))
        })
        .collect()
}
