//! LSTM decoder with hierarchical attention: word attention within each
//! agent, attention across agents, an optional feed of the previous agent
//! context into the output layer, and the final copy-aware distribution.

use crate::autodiff::{Graph, ParamId, Var};
use crate::corpus::UNK;
use crate::encoder::{lstm_step, EncoderOutput, LstmParams};
use crate::error::{DcaError, Result};
use crate::pointer::{self, PointerParams};

/// Additive attention `v · tanh(W_k key + W_q query + b)`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub v: ParamId,
    pub key: ParamId,
    pub query: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderParams {
    pub embedding: ParamId,
    pub lstm: LstmParams,
    pub word: AttentionParams,
    pub agent: AttentionParams,
    pub out_hidden: ParamId,
    pub out_hidden_bias: ParamId,
    pub out_vocab: ParamId,
    pub out_vocab_bias: ParamId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub caa: bool,
    pub pgen: bool,
    /// Per-agent generation probabilities; otherwise one shared value.
    pub mpgen: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    /// Previous agent context as fed to the LSTM input.
    pub input_feed: Var,
    /// Previous agent context as read by the vocabulary layer when
    /// contextual agent attention is on.
    pub prev_context: Var,
    pub step: usize,
}

/// Everything computed at one decoding step.
#[derive(Clone, Debug)]
pub struct StepDistribution {
    /// Distribution over the extended vocabulary.
    pub final_dist: Var,
    /// Generation distribution over the base vocabulary.
    pub vocab_dist: Var,
    pub word_attention: Vec<Var>,
    pub agent_attention: Var,
    pub gen_probs: Vec<Var>,
    pub word_contexts: Vec<Var>,
    pub agent_context: Var,
    /// Decoder hidden state after this step's input.
    pub hidden: Var,
}

/// Per-agent attention keys, computed once per example.
#[derive(Clone, Debug)]
pub struct AgentMemory {
    pub memory: Var,
    pub keys: Var,
    pub mask: Vec<bool>,
    pub ids: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct AttentionMemory {
    pub agents: Vec<AgentMemory>,
    pub extended_len: usize,
}

impl AttentionMemory {
    pub fn new(g: &mut Graph, p: &DecoderParams, enc: &EncoderOutput, extended_len: usize) -> Result<Self> {
        let wk = g.param(p.word.key);
        let agents = enc
            .agents
            .iter()
            .map(|a| {
                Ok(AgentMemory {
                    memory: a.memory,
                    keys: g.row_affine(a.memory, wk, None)?,
                    mask: a.mask.clone(),
                    ids: a.ids.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(AttentionMemory { agents, extended_len })
    }
}

/// Decoder starts from the first agent's last state with empty cell memory
/// and zero previous contexts.
pub fn init_state(g: &mut Graph, enc: &EncoderOutput) -> Result<DecoderState> {
    let first = enc
        .agents
        .first()
        .ok_or_else(|| DcaError::Contract("encoder output has no agents".into()))?;
    let hidden = first.last;
    let n = g.value(hidden).len();
    Ok(DecoderState {
        hidden,
        cell: g.zeros(n),
        input_feed: g.zeros(n),
        prev_context: g.zeros(n),
        step: 0,
    })
}

/// Attention over one agent's positions given precomputed keys `W_k h`.
pub fn word_attention(g: &mut Graph, p: &AttentionParams, keys: Var, state: Var, mask: &[bool]) -> Result<Var> {
    let wq = g.param(p.query);
    let b = g.param(p.bias);
    let v = g.param(p.v);
    let query = g.affine(wq, state, Some(b))?;
    let scores = g.additive_scores(keys, query, v)?;
    g.masked_softmax(scores, mask)
}

/// Attention over one agent's raw `[I, H]` state matrix.
pub fn word_attention_over(g: &mut Graph, p: &AttentionParams, memory: Var, state: Var, mask: &[bool]) -> Result<Var> {
    let wk = g.param(p.key);
    let keys = g.row_affine(memory, wk, None)?;
    word_attention(g, p, keys, state, mask)
}

pub fn word_context(g: &mut Graph, attention: Var, memory: Var) -> Result<Var> {
    g.weighted_rows(attention, memory)
}

/// Softmax over agents of `v · tanh(W_k c_a + W_q s + b)`, with one `W_k`
/// shared by every agent context.
pub fn agent_attention(g: &mut Graph, p: &AttentionParams, contexts: &[Var], state: Var) -> Result<Var> {
    let wk = g.param(p.key);
    let stacked = g.stack(contexts)?;
    let keys = g.row_affine(stacked, wk, None)?;
    let wq = g.param(p.query);
    let b = g.param(p.bias);
    let v = g.param(p.v);
    let query = g.affine(wq, state, Some(b))?;
    let scores = g.additive_scores(keys, query, v)?;
    g.softmax(scores)
}

pub fn agent_context(g: &mut Graph, attention: Var, contexts: &[Var]) -> Result<Var> {
    g.weighted_sum(attention, contexts)
}

/// Softmax of a one-hidden-layer tanh network over `[s, c*]`, or
/// `[s, c*, c*_prev]` when the previous context is supplied.
pub fn vocab_distribution(
    g: &mut Graph,
    p: &DecoderParams,
    state: Var,
    context: Var,
    prev_context: Option<Var>,
) -> Result<Var> {
    let x = match prev_context {
        Some(prev) => g.concat(&[state, context, prev])?,
        None => g.concat(&[state, context])?,
    };
    let w1 = g.param(p.out_hidden);
    let b1 = g.param(p.out_hidden_bias);
    let hidden = g.affine(w1, x, Some(b1))?;
    let hidden = g.tanh(hidden);
    let w2 = g.param(p.out_vocab);
    let b2 = g.param(p.out_vocab_bias);
    let logits = g.affine(w2, hidden, Some(b2))?;
    g.softmax(logits)
}

/// Embedding of a fed-back token; ids outside the base vocabulary read UNK.
pub fn embed_token(g: &mut Graph, embedding: ParamId, token: usize) -> Result<Var> {
    let vocab = g.store().get(embedding).shape()[0];
    g.param_row(embedding, if token < vocab { token } else { UNK })
}

/// One decoding step fed with `input` (an extended id).
pub fn decoder_step(
    g: &mut Graph,
    p: &DecoderParams,
    ptr: Option<&PointerParams>,
    memory: &AttentionMemory,
    state: &DecoderState,
    input: usize,
    flags: StepFlags,
) -> Result<(StepDistribution, DecoderState)> {
    let y = embed_token(g, p.embedding, input)?;
    let x = g.concat(&[y, state.input_feed])?;
    let (hidden, cell) = lstm_step(g, &p.lstm, x, state.hidden, state.cell)?;

    let mut word = Vec::with_capacity(memory.agents.len());
    let mut contexts = Vec::with_capacity(memory.agents.len());
    for a in &memory.agents {
        let l = word_attention(g, &p.word, a.keys, hidden, &a.mask)?;
        contexts.push(word_context(g, l, a.memory)?);
        word.push(l);
    }
    let agent_att = agent_attention(g, &p.agent, &contexts, hidden)?;
    let ctx = agent_context(g, agent_att, &contexts)?;
    let prev = flags.caa.then_some(state.prev_context);
    let vocab_dist = vocab_distribution(g, p, hidden, ctx, prev)?;

    let (final_dist, gen_probs) = if flags.pgen {
        let ptr = ptr.ok_or_else(|| DcaError::Contract("pointer parameters are missing".into()))?;
        let shared = if flags.mpgen {
            None
        } else {
            Some(pointer::generation_prob(g, ptr, ctx, hidden, y)?)
        };
        let mut dists = Vec::with_capacity(memory.agents.len());
        let mut probs = Vec::with_capacity(memory.agents.len());
        for ((a, &l), &c) in memory.agents.iter().zip(&word).zip(&contexts) {
            let pg = match shared {
                Some(pg) => pg,
                None => pointer::generation_prob(g, ptr, c, hidden, y)?,
            };
            let u = pointer::copy_distribution(g, l, &a.ids, memory.extended_len)?;
            dists.push(pointer::agent_distribution(g, pg, vocab_dist, u)?);
            probs.push(pg);
        }
        (pointer::final_distribution(g, agent_att, &dists)?, probs)
    } else {
        (g.zero_extend(vocab_dist, memory.extended_len)?, Vec::new())
    };

    let next = DecoderState {
        hidden,
        cell,
        input_feed: ctx,
        prev_context: ctx,
        step: state.step + 1,
    };
    Ok((
        StepDistribution {
            final_dist,
            vocab_dist,
            word_attention: word,
            agent_attention: agent_att,
            gen_probs,
            word_contexts: contexts,
            agent_context: ctx,
            hidden,
        },
        next,
    ))
}
