//! Decoding: greedy, sampled and beam-search rollouts over any step-wise
//! distribution source, plus UNK replacement by the strongest product of
//! word and agent attention.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::corpus::{AgentInput, ExtendedVocab, PreparedExample, Vocabulary, EOS, SENT_END, SOS, UNK, UNK_TOKEN};
use crate::decoder::DecoderState;
use crate::error::{DcaError, Result};
use crate::model::{Encoded, Model, TeacherForced};
use crate::objectives::{token_spans, RolloutRecord, PROB_FLOOR};

/// Attention values of one decoding step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepRecord {
    /// Per agent, one weight per input position.
    pub word_attention: Vec<Vec<f64>>,
    pub agent_attention: Vec<f64>,
}

pub struct StepOutput<S> {
    pub dist: Vec<f64>,
    pub record: StepRecord,
    pub state: S,
}

/// Anything that yields a next-token distribution from a state and the
/// previously emitted token.
pub trait StepModel {
    type State: Clone;
    fn start(&mut self) -> Result<Self::State>;
    fn step(&mut self, state: &Self::State, input: usize) -> Result<StepOutput<Self::State>>;
}

/// Encoded example plus the graph that holds it; used for decoding and for
/// the training step.
pub struct Session<'m> {
    pub model: &'m Model,
    pub graph: Graph<'m>,
    pub encoded: Encoded,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, ex: &PreparedExample) -> Result<Self> {
        let mut graph = Graph::new(&model.params);
        let encoded = model.encode(&mut graph, ex)?;
        Ok(Session { model, graph, encoded })
    }

    pub fn teacher_forced(&mut self, target: &[usize]) -> Result<TeacherForced> {
        self.model.teacher_forced(&mut self.graph, &self.encoded, target)
    }

    /// Multinomial rollout whose log-probabilities stay in the graph.
    pub fn sample_rollout(&mut self, max_len: usize, rng: &mut impl Rng) -> Result<RolloutRecord> {
        if max_len == 0 {
            return Err(DcaError::Argument("max_len must be at least 1".into()));
        }
        let mut state = self.encoded.initial;
        let mut input = SOS;
        let mut rec = RolloutRecord::default();
        for _ in 0..max_len {
            let (step, next) = self.model.step(&mut self.graph, &self.encoded.memory, &state, input)?;
            let tok = draw(self.graph.data(step.final_dist), rng)?;
            let p = self.graph.pick(step.final_dist, tok)?;
            rec.log_probs.push(self.graph.log_floor(p, PROB_FLOOR)?);
            if tok == SENT_END {
                rec.sentence_states.push(step.hidden);
            }
            rec.tokens.push(tok);
            state = next;
            input = tok;
            if tok == EOS {
                break;
            }
        }
        rec.boundaries = token_spans(&rec.tokens).iter().map(|r| r.end).collect();
        Ok(rec)
    }
}

impl StepModel for Session<'_> {
    type State = DecoderState;

    fn start(&mut self) -> Result<DecoderState> {
        Ok(self.encoded.initial)
    }

    fn step(&mut self, state: &DecoderState, input: usize) -> Result<StepOutput<DecoderState>> {
        let (step, next) = self.model.step(&mut self.graph, &self.encoded.memory, state, input)?;
        let g = &self.graph;
        Ok(StepOutput {
            dist: g.data(step.final_dist).to_vec(),
            record: StepRecord {
                word_attention: step.word_attention.iter().map(|&l| g.data(l).to_vec()).collect(),
                agent_attention: g.data(step.agent_attention).to_vec(),
            },
            state: next,
        })
    }
}

fn draw(dist: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let w = WeightedIndex::new(dist).map_err(|e| DcaError::NonFinite(format!("cannot sample: {e}")))?;
    Ok(w.sample(rng))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// A decoded sequence. `tokens` excludes EOS; `records` and `step_log_probs`
/// have one entry per step, including the step that produced EOS.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub records: Vec<StepRecord>,
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Decoded {
    /// Log-probability per step.
    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.records.len().max(1) as f64
    }
}

fn rollout<S: StepModel>(m: &mut S, max_len: usize, mut pick: impl FnMut(&[f64]) -> Result<usize>) -> Result<Decoded> {
    if max_len == 0 {
        return Err(DcaError::Argument("max_len must be at least 1".into()));
    }
    let mut state = m.start()?;
    let mut input = SOS;
    let mut out = Decoded::default();
    for _ in 0..max_len {
        let step = m.step(&state, input)?;
        let tok = pick(&step.dist)?;
        let lp = step.dist[tok].ln();
        out.log_prob += lp;
        out.step_log_probs.push(lp);
        out.records.push(step.record);
        if tok == EOS {
            out.finished = true;
            break;
        }
        out.tokens.push(tok);
        state = step.state;
        input = tok;
    }
    Ok(out)
}

/// Argmax decoding until EOS or `max_len` steps.
pub fn greedy_decode<S: StepModel>(m: &mut S, max_len: usize) -> Result<Decoded> {
    rollout(m, max_len, |d| Ok(argmax(d)))
}

/// Multinomial decoding at temperature 1 from a fixed seed.
pub fn sample_decode<S: StepModel>(m: &mut S, max_len: usize, seed: u64) -> Result<Decoded> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout(m, max_len, |d| draw(d, &mut rng))
}

#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    /// Extended ids without EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub trigrams: HashSet<[usize; 3]>,
    pub records: Vec<StepRecord>,
    pub finished: bool,
}

impl<S> Hypothesis<S> {
    /// Length-normalized score used for the final ranking.
    pub fn score(&self) -> f64 {
        self.log_prob / self.records.len().max(1) as f64
    }

    fn repeats(&self, tok: usize) -> bool {
        match self.tokens.as_slice() {
            [.., a, b] => self.trigrams.contains(&[*a, *b, tok]),
            _ => false,
        }
    }

    pub fn into_decoded(self) -> Decoded {
        Decoded {
            tokens: self.tokens,
            log_prob: self.log_prob,
            finished: self.finished,
            step_log_probs: Vec::new(),
            records: self.records,
        }
    }
}

/// Beam search over the extended vocabulary.
///
/// Each step keeps the `width` best expansions of all live hypotheses;
/// expansions ending in EOS are retired. Search stops when nothing is
/// live, `width` hypotheses have finished, or `max_len` steps have run.
/// With `block_trigrams`, a token that would repeat a trigram already in
/// its own hypothesis is never expanded. The result maximizes
/// log-probability divided by the number of steps.
pub fn beam_search<S: StepModel>(
    m: &mut S,
    width: usize,
    max_len: usize,
    block_trigrams: bool,
) -> Result<Hypothesis<S::State>> {
    if width == 0 {
        return Err(DcaError::Argument("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(DcaError::Argument("max_len must be at least 1".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: m.start()?,
        trigrams: HashSet::new(),
        records: Vec::new(),
        finished: false,
    }];
    let mut finished: Vec<Hypothesis<S::State>> = Vec::new();
    for _ in 0..max_len {
        let mut outputs = Vec::with_capacity(live.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let input = hyp.tokens.last().copied().unwrap_or(SOS);
            let out = m.step(&hyp.state, input)?;
            for (tok, &p) in out.dist.iter().enumerate() {
                if p > 0.0 && !(block_trigrams && hyp.repeats(tok)) {
                    candidates.push((hyp.log_prob + p.ln(), h, tok));
                }
            }
            outputs.push(out);
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (lp, h, tok) in candidates {
            let parent = &live[h];
            let mut records = parent.records.clone();
            records.push(outputs[h].record.clone());
            let mut hyp = Hypothesis {
                tokens: parent.tokens.clone(),
                log_prob: lp,
                state: outputs[h].state.clone(),
                trigrams: parent.trigrams.clone(),
                records,
                finished: tok == EOS,
            };
            if tok == EOS {
                finished.push(hyp);
                continue;
            }
            if let [.., a, b] = hyp.tokens.as_slice() {
                hyp.trigrams.insert([*a, *b, tok]);
            }
            hyp.tokens.push(tok);
            next.push(hyp);
        }
        live = next;
        if live.is_empty() || finished.len() >= width {
            break;
        }
    }
    let pool = if finished.is_empty() { live } else { finished };
    pool.into_iter()
        .reduce(|best, h| if h.score() > best.score() { h } else { best })
        .ok_or_else(|| DcaError::Contract("beam search produced no hypothesis".into()))
}

/// Surface tokens for a decoded sequence. Every UNK becomes the source
/// token at the agent/position maximizing `word attention × agent
/// attention` at that step (ties go to the lowest agent, then position);
/// extended ids are spelled through the example's extended vocabulary.
/// Padding and the `<unk>` placeholder of an empty agent are never picked;
/// when nothing else is available the UNK stays.
pub fn replace_unk(
    tokens: &[usize],
    records: &[StepRecord],
    agents: &[AgentInput],
    ext: &ExtendedVocab,
    vocab: &Vocabulary,
) -> Result<Vec<String>> {
    if records.len() < tokens.len() {
        return Err(DcaError::Contract(format!(
            "{} attention records for {} tokens",
            records.len(),
            tokens.len()
        )));
    }
    tokens
        .iter()
        .zip(records)
        .map(|(&tok, rec)| {
            if tok != UNK {
                return Ok(ext.token(tok, vocab).to_string());
            }
            if rec.word_attention.len() > agents.len() {
                return Err(DcaError::Contract(format!(
                    "attention over {} agents for {} inputs",
                    rec.word_attention.len(),
                    agents.len()
                )));
            }
            let mut best: Option<(f64, &str)> = None;
            for ((l, &g), ag) in rec.word_attention.iter().zip(&rec.agent_attention).zip(agents) {
                if l.len() > ag.tokens.len() {
                    return Err(DcaError::Contract(format!(
                        "attention points past agent {}'s input",
                        ag.index
                    )));
                }
                for ((&w, tok), &valid) in l.iter().zip(&ag.tokens).zip(&ag.mask) {
                    if !valid || tok == UNK_TOKEN {
                        continue;
                    }
                    let s = w * g;
                    if best.is_none_or(|(b, _)| s > b) {
                        best = Some((s, tok));
                    }
                }
            }
            Ok(best.map_or(UNK_TOKEN, |(_, t)| t).to_string())
        })
        .collect()
}

/// Options for turning an example into a summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub beam_width: usize,
    pub max_len: usize,
    pub block_trigrams: bool,
}

/// Beam-decoded summary with UNKs replaced, plus its attention records.
pub fn summarize(model: &Model, ex: &PreparedExample, opts: DecodeOptions) -> Result<(Vec<String>, Decoded)> {
    let mut session = Session::new(model, ex)?;
    let best = beam_search(&mut session, opts.beam_width, opts.max_len, opts.block_trigrams)?.into_decoded();
    let words = replace_unk(&best.tokens, &best.records, &ex.agents, &ex.ext, &model.vocab)?;
    Ok((words, best))
}
