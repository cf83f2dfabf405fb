//! Training losses: token-level negative log-likelihood, the semantic
//! cohesion penalty over sentence-end decoder states, self-critical policy
//! gradient with whole-summary or per-sentence rewards, and their mixture.

use std::hash::Hash;
use std::ops::Range;

use crate::autodiff::{Graph, Var};
use crate::config::RewardMode;
use crate::corpus::{EOS, SENT_END, SENT_END_TOKEN};
use crate::decoder::StepDistribution;
use crate::error::{DcaError, Result};
use crate::rouge::RougeMetric;

/// Probabilities are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over steps of `−ln max(P_t[y_t], floor)`.
pub fn mle_loss(g: &mut Graph, dists: &[Var], targets: &[usize]) -> Result<Var> {
    if dists.len() != targets.len() || dists.is_empty() {
        return Err(DcaError::Contract(format!(
            "{} distributions for {} targets",
            dists.len(),
            targets.len()
        )));
    }
    let mut terms = Vec::with_capacity(dists.len());
    for (&d, &y) in dists.iter().zip(targets) {
        if y >= g.value(d).len() {
            return Err(DcaError::Contract(format!(
                "target id {y} outside a distribution over {} ids",
                g.value(d).len()
            )));
        }
        let p = g.pick(d, y)?;
        terms.push(g.log_floor(p, PROB_FLOOR)?);
    }
    let all = g.concat(&terms)?;
    let total = g.sum(all);
    Ok(g.scale(total, -1.0 / targets.len() as f64))
}

/// Sum of cosine similarities between consecutive sentence-end states;
/// zero with fewer than two sentences.
pub fn sem_loss(g: &mut Graph, states: &[Var]) -> Result<Var> {
    if states.len() < 2 {
        return Ok(g.scalar(0.0));
    }
    let mut cos = Vec::with_capacity(states.len() - 1);
    for pair in states.windows(2) {
        cos.push(g.cosine_similarity(pair[1], pair[0])?);
    }
    let all = g.concat(&cos)?;
    Ok(g.sum(all))
}

/// Decoder states of the steps whose output token is the sentence end.
pub fn sentence_end_states(steps: &[StepDistribution], outputs: &[usize]) -> Vec<Var> {
    steps
        .iter()
        .zip(outputs)
        .filter(|(_, &t)| t == SENT_END)
        .map(|(s, _)| s.hidden)
        .collect()
}

/// Sentence spans over a sequence: each sentence end closes a span, and a
/// tail made only of end-of-sequence markers joins the last span.
pub fn sentence_spans<T>(items: &[T], is_end: impl Fn(&T) -> bool, is_eos: impl Fn(&T) -> bool) -> Vec<Range<usize>> {
    let mut spans: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    for (i, t) in items.iter().enumerate() {
        if is_end(t) {
            spans.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < items.len() {
        let only_eos = items[start..].iter().all(&is_eos);
        match spans.last_mut() {
            Some(last) if only_eos => last.end = items.len(),
            _ => spans.push(start..items.len()),
        }
    }
    spans
}

pub fn token_spans(tokens: &[usize]) -> Vec<Range<usize>> {
    sentence_spans(tokens, |&t| t == SENT_END, |&t| t == EOS)
}

pub fn word_sentences(words: &[String]) -> Vec<Vec<String>> {
    sentence_spans(words, |w| w == SENT_END_TOKEN, |_| false)
        .into_iter()
        .map(|r| words[r].to_vec())
        .collect()
}

/// Reward gained by each sentence: `r(prefix through q) − r(prefix through
/// q−1)`, with `r([]) = 0`. Scores lie on a dyadic grid, so the increments
/// add back to the score of the whole generation exactly.
pub fn intermediate_rewards<T: Eq + Hash + Clone>(
    sentences: &[Vec<T>],
    reference: &[T],
    metric: RougeMetric,
) -> Vec<f64> {
    let mut prefix: Vec<T> = Vec::new();
    let mut prev = 0.0;
    sentences
        .iter()
        .map(|s| {
            prefix.extend(s.iter().cloned());
            let r = metric.score(&prefix, reference).f1;
            let inc = r - prev;
            prev = r;
            inc
        })
        .collect()
}

/// A sampled decoding rollout whose log-probabilities stay differentiable.
#[derive(Clone, Debug, Default)]
pub struct RolloutRecord {
    /// Extended ids, including the final EOS when one was emitted.
    pub tokens: Vec<usize>,
    /// `ln P_t[token_t]` as scalar graph nodes.
    pub log_probs: Vec<Var>,
    /// Decoder states at the steps that emitted the sentence end.
    pub sentence_states: Vec<Var>,
    /// Exclusive end of every sentence span in `tokens`.
    pub boundaries: Vec<usize>,
}

impl RolloutRecord {
    pub fn spans(&self) -> Vec<Range<usize>> {
        token_spans(&self.tokens)
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RlOutcome {
    pub loss: Var,
    pub reward_sampled: f64,
    pub reward_greedy: f64,
}

/// Self-critical loss with the greedy rollout as baseline.
///
/// `sampled_words` are the surface forms of the sampled tokens without the
/// trailing EOS, position-aligned with `sampled.tokens`. End mode scales the
/// summed log-probabilities by `r_greedy − r_sampled`; intermediate mode
/// scales each sentence's log-probabilities by the difference of that
/// sentence's reward increments, using 0 where the greedy rollout has no
/// matching sentence. Rewards carry no gradient.
pub fn rl_loss(
    g: &mut Graph,
    sampled: &RolloutRecord,
    sampled_words: &[String],
    greedy_words: &[String],
    reference: &[String],
    mode: RewardMode,
    metric: RougeMetric,
) -> Result<RlOutcome> {
    if sampled.tokens.is_empty() {
        return Err(DcaError::Contract("empty sampled rollout".into()));
    }
    if sampled.log_probs.len() != sampled.tokens.len() {
        return Err(DcaError::Contract(format!(
            "{} log-probabilities for {} sampled tokens",
            sampled.log_probs.len(),
            sampled.tokens.len()
        )));
    }
    if sampled_words.len() != sampled.content().len() {
        return Err(DcaError::Contract(format!(
            "{} sampled words for {} sampled tokens",
            sampled_words.len(),
            sampled.content().len()
        )));
    }
    let reward_sampled = metric.score(sampled_words, reference).f1;
    let reward_greedy = metric.score(greedy_words, reference).f1;
    let loss = match mode {
        RewardMode::End => {
            let all = g.concat(&sampled.log_probs)?;
            let total = g.sum(all);
            g.scale(total, reward_greedy - reward_sampled)
        }
        RewardMode::Intermediate => {
            let spans = sampled.spans();
            let sentences: Vec<Vec<String>> = spans
                .iter()
                .map(|r| sampled_words[r.start.min(sampled_words.len())..r.end.min(sampled_words.len())].to_vec())
                .collect();
            let inc_sampled = intermediate_rewards(&sentences, reference, metric);
            let inc_greedy = intermediate_rewards(&word_sentences(greedy_words), reference, metric);
            let mut terms = Vec::with_capacity(spans.len());
            for (q, span) in spans.iter().enumerate() {
                let baseline = inc_greedy.get(q).copied().unwrap_or(0.0);
                let lp = g.concat(&sampled.log_probs[span.clone()])?;
                let lp = g.sum(lp);
                terms.push(g.scale(lp, baseline - inc_sampled[q]));
            }
            let all = g.concat(&terms)?;
            g.sum(all)
        }
    };
    Ok(RlOutcome {
        loss,
        reward_sampled,
        reward_greedy,
    })
}

/// Loss terms available for one example.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub mle: Var,
    pub sem: Option<Var>,
    pub rl: Option<RlOutcome>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mle: f64,
    pub sem: f64,
    pub rl: f64,
    pub reward_sampled: f64,
    pub reward_greedy: f64,
}

/// Without RL: `mle (+ λ·sem)`. With RL: `γ·rl + (1−γ)·(mle (+ λ·sem))`.
pub fn mixed_loss(
    g: &mut Graph,
    parts: &LossParts,
    gamma: f64,
    lambda: f64,
    sem_on: bool,
    rl_on: bool,
) -> Result<(Var, LossBreakdown)> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(DcaError::Argument(format!(
            "gamma {gamma} and lambda {lambda} must lie in [0, 1]"
        )));
    }
    let mut base = parts.mle;
    if sem_on {
        let sem = parts
            .sem
            .ok_or_else(|| DcaError::Contract("semantic cohesion term is missing".into()))?;
        let weighted = g.scale(sem, lambda);
        base = g.add(base, weighted)?;
    }
    let mut breakdown = LossBreakdown {
        mle: g.item(parts.mle),
        sem: parts.sem.map_or(0.0, |s| g.item(s)),
        ..Default::default()
    };
    let total = if rl_on {
        let rl = parts
            .rl
            .ok_or_else(|| DcaError::Contract("reinforcement term is missing".into()))?;
        breakdown.rl = g.item(rl.loss);
        breakdown.reward_sampled = rl.reward_sampled;
        breakdown.reward_greedy = rl.reward_greedy;
        let a = g.scale(rl.loss, gamma);
        let b = g.scale(base, 1.0 - gamma);
        g.add(a, b)?
    } else {
        base
    };
    breakdown.total = g.item(total);
    Ok((total, breakdown))
}
