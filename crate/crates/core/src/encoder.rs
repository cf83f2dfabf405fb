//! Agent encoders: a local bidirectional LSTM per agent followed by
//! contextual bidirectional layers whose inputs fuse each token state with
//! the mean of the other agents' last states.

use crate::autodiff::{Graph, ParamId, Var};
use crate::corpus::{AgentInput, UNK};
use crate::error::{DcaError, Result};

/// One LSTM cell. `weight` stacks the input, forget, candidate and output
/// gates row-wise over the concatenated `[x, h]` input.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

/// Forward and backward cells plus the projection of their concatenated
/// states back to the hidden size.
#[derive(Clone, Copy, Debug)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub proj: ParamId,
}

/// Scores `v · tanh(W_h h + W_z z)` that feed each contextual layer.
#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub v: ParamId,
    pub state: ParamId,
    pub message: ParamId,
}

/// Parameters shared by every agent.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub local: BiLstmParams,
    pub contextual: Vec<BiLstmParams>,
    pub fusion: Option<FusionParams>,
    pub hidden: usize,
}

/// One LSTM step; returns the new hidden state and cell memory.
pub fn lstm_step(g: &mut Graph, p: &LstmParams, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let w = g.param(p.weight);
    let b = g.param(p.bias);
    let xh = g.concat(&[x, h])?;
    let z = g.affine(w, xh, Some(b))?;
    let n = p.hidden;
    let i = g.slice(z, 0, n)?;
    let i = g.sigmoid(i);
    let f = g.slice(z, n, n)?;
    let f = g.sigmoid(f);
    let cand = g.slice(z, 2 * n, n)?;
    let cand = g.tanh(cand);
    let o = g.slice(z, 3 * n, n)?;
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c2 = g.add(keep, write)?;
    let squashed = g.tanh(c2);
    let h2 = g.mul(o, squashed)?;
    Ok((h2, c2))
}

/// Runs a cell over `inputs` from zero state, left to right or right to
/// left. Output `i` is the state after reading input `i`.
pub fn run_lstm(g: &mut Graph, p: &LstmParams, inputs: &[Var], reverse: bool) -> Result<Vec<Var>> {
    let mut h = g.zeros(p.hidden);
    let mut c = g.zeros(p.hidden);
    let mut out = vec![h; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for i in order {
        (h, c) = lstm_step(g, p, inputs[i], h, c)?;
        out[i] = h;
    }
    Ok(out)
}

/// Bidirectional pass; each position's output is `proj · [→h_i, ←h_i]`.
pub fn bilstm(g: &mut Graph, p: &BiLstmParams, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(DcaError::Contract("cannot encode an empty sequence".into()));
    }
    let fwd = run_lstm(g, &p.forward, inputs, false)?;
    let bwd = run_lstm(g, &p.backward, inputs, true)?;
    let proj = g.param(p.proj);
    fwd.iter()
        .zip(&bwd)
        .map(|(&f, &b)| {
            let both = g.concat(&[f, b])?;
            g.affine(proj, both, None)
        })
        .collect()
}

/// First encoder layer over one agent's token embeddings.
pub fn local_encode(g: &mut Graph, p: &EncoderParams, embeddings: &[Var]) -> Result<Vec<Var>> {
    bilstm(g, &p.local, embeddings)
}

/// Mean of the other agents' last states; a zero vector for a lone agent.
pub fn message(g: &mut Graph, lasts: &[Var], receiver: usize, hidden: usize) -> Result<Var> {
    let others: Vec<Var> = lasts
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != receiver)
        .map(|(_, &v)| v)
        .collect();
    let Some((&first, rest)) = others.split_first() else {
        return Ok(g.zeros(hidden));
    };
    let mut total = first;
    for &v in rest {
        total = g.add(total, v)?;
    }
    Ok(g.scale(total, 1.0 / others.len() as f64))
}

/// Fused scalar input for a single state.
pub fn fuse(g: &mut Graph, p: &FusionParams, h: Var, z: Var) -> Result<Var> {
    let ws = g.param(p.state);
    let wm = g.param(p.message);
    let v = g.param(p.v);
    let a = g.affine(ws, h, None)?;
    let b = g.affine(wm, z, None)?;
    let s = g.add(a, b)?;
    let t = g.tanh(s);
    g.dot(v, t)
}

/// Fused scalar inputs for a whole sequence, sharing the message projection.
fn fuse_sequence(g: &mut Graph, p: &FusionParams, states: &[Var], z: Var) -> Result<Vec<Var>> {
    let ws = g.param(p.state);
    let wm = g.param(p.message);
    let v = g.param(p.v);
    let stacked = g.stack(states)?;
    let keys = g.row_affine(stacked, ws, None)?;
    let query = g.affine(wm, z, None)?;
    let scores = g.additive_scores(keys, query, v)?;
    (0..states.len()).map(|i| g.slice(scores, i, 1)).collect()
}

/// One contextual layer over the previous layer's states and the incoming
/// message.
pub fn contextual_layer(
    g: &mut Graph,
    layer: &BiLstmParams,
    fusion: &FusionParams,
    states: &[Var],
    z: Var,
) -> Result<Vec<Var>> {
    if states.is_empty() {
        return Err(DcaError::Contract("cannot encode an empty sequence".into()));
    }
    let inputs = fuse_sequence(g, fusion, states, z)?;
    bilstm(g, layer, &inputs)
}

/// Final-layer encoding of one agent.
#[derive(Clone, Debug)]
pub struct AgentEncoding {
    /// One state per input position; zero vectors at masked positions.
    pub states: Vec<Var>,
    /// `states` stacked as an `[I, H]` matrix.
    pub memory: Var,
    pub last: Var,
    /// Last valid state of every layer, local layer first.
    pub layer_lasts: Vec<Var>,
    pub mask: Vec<bool>,
    /// Extended ids of the input positions.
    pub ids: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub agents: Vec<AgentEncoding>,
}

/// Embedding lookups for the valid positions of one agent. Extended ids
/// outside the base vocabulary read the UNK row.
pub fn embed_agent(g: &mut Graph, embedding: ParamId, input: &AgentInput) -> Result<Vec<Var>> {
    let vocab = g.store().get(embedding).shape()[0];
    input
        .ids
        .iter()
        .zip(&input.mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| g.param_row(embedding, if id < vocab { id } else { UNK }))
        .collect()
}

/// Local layer for every agent, then `contextual.len()` contextual layers
/// with messages recomputed before each. With `comm_enabled` false every
/// message is the zero vector, so agents encode independently.
pub fn encode_document(
    g: &mut Graph,
    p: &EncoderParams,
    inputs: &[AgentInput],
    comm_enabled: bool,
) -> Result<EncoderOutput> {
    if inputs.is_empty() {
        return Err(DcaError::Contract("at least one agent input is required".into()));
    }
    let mut layers: Vec<Vec<Var>> = Vec::with_capacity(inputs.len());
    for input in inputs {
        if input.ids.len() != input.mask.len() {
            return Err(DcaError::shape(
                "encode_document",
                &[input.ids.len()],
                &[input.mask.len()],
            ));
        }
        let emb = embed_agent(g, p.embedding, input)?;
        if emb.is_empty() {
            return Err(DcaError::Contract(format!("agent {} has no valid tokens", input.index)));
        }
        layers.push(local_encode(g, p, &emb)?);
    }
    let mut layer_lasts: Vec<Vec<Var>> = layers.iter().map(|s| vec![*s.last().unwrap()]).collect();
    if !p.contextual.is_empty() {
        let fusion = p
            .fusion
            .ok_or_else(|| DcaError::Contract("contextual layers need fusion parameters".into()))?;
        for layer in &p.contextual {
            let lasts: Vec<Var> = layers.iter().map(|s| *s.last().unwrap()).collect();
            let mut next = Vec::with_capacity(layers.len());
            for (a, states) in layers.iter().enumerate() {
                let z = if comm_enabled {
                    message(g, &lasts, a, p.hidden)?
                } else {
                    g.zeros(p.hidden)
                };
                next.push(contextual_layer(g, layer, &fusion, states, z)?);
            }
            layers = next;
            for (a, s) in layers.iter().enumerate() {
                layer_lasts[a].push(*s.last().unwrap());
            }
        }
    }
    let zero = g.zeros(p.hidden);
    let mut agents = Vec::with_capacity(inputs.len());
    for ((input, valid), lasts) in inputs.iter().zip(layers).zip(layer_lasts) {
        let mut it = valid.iter();
        let states: Vec<Var> = input
            .mask
            .iter()
            .map(|&m| if m { *it.next().unwrap() } else { zero })
            .collect();
        let memory = g.stack(&states)?;
        agents.push(AgentEncoding {
            last: *valid.last().unwrap(),
            memory,
            states,
            layer_lasts: lasts,
            mask: input.mask.clone(),
            ids: input.ids.clone(),
        });
    }
    Ok(EncoderOutput { agents })
}
