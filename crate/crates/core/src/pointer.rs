//! Copy mechanism: each agent mixes the generation distribution with its
//! own attention mass scattered onto extended ids, and the agent attention
//! weights the per-agent mixtures into the final distribution.

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{DcaError, Result};

#[derive(Clone, Copy, Debug)]
pub struct PointerParams {
    pub context: ParamId,
    pub state: ParamId,
    pub input: ParamId,
    pub bias: ParamId,
}

/// `σ(w_c·c + w_s·s + w_y·y + b)`.
pub fn generation_prob(g: &mut Graph, p: &PointerParams, context: Var, state: Var, input: Var) -> Result<Var> {
    let wc = g.param(p.context);
    let ws = g.param(p.state);
    let wy = g.param(p.input);
    let b = g.param(p.bias);
    let a = g.dot(wc, context)?;
    let s = g.dot(ws, state)?;
    let y = g.dot(wy, input)?;
    let t = g.add(a, s)?;
    let t = g.add(t, y)?;
    let t = g.add(t, b)?;
    Ok(g.sigmoid(t))
}

/// Attention mass summed per extended id.
pub fn copy_distribution(g: &mut Graph, attention: Var, ids: &[usize], extended_len: usize) -> Result<Var> {
    g.scatter_add(attention, ids, extended_len)
}

/// `p · P_voc + (1 − p) · u`, with `P_voc` zero-extended to the length of `u`.
pub fn agent_distribution(g: &mut Graph, p_gen: Var, vocab_dist: Var, copy: Var) -> Result<Var> {
    let size = g.value(copy).len();
    let pv = g.zero_extend(vocab_dist, size)?;
    let gen = g.scale_by(p_gen, pv)?;
    let keep = g.one_minus(p_gen);
    let cp = g.scale_by(keep, copy)?;
    g.add(gen, cp)
}

/// Agent-attention-weighted mixture of the per-agent distributions.
pub fn final_distribution(g: &mut Graph, agent_attention: Var, dists: &[Var]) -> Result<Var> {
    if dists.is_empty() {
        return Err(DcaError::Argument("final_distribution needs at least one agent".into()));
    }
    g.weighted_sum(agent_attention, dists)
}
