//! Agent-attention analysis: per-example mean agent attention over the
//! decoded steps, binned by the largest agent's share.

use crate::corpus::PreparedExample;
use crate::error::{DcaError, Result};
use crate::evaluate::decode_corpus;
use crate::inference::{DecodeOptions, Decoded};
use crate::model::Model;
use crate::rouge::rouge_l;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean ROUGE-L F1 of the examples in the bin; `None` when empty.
    pub mean_rouge_l: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionReport {
    pub agents: usize,
    pub bins: Vec<AttentionBin>,
    /// Per example, the mean agent attention over its decoding steps.
    pub mean_attention: Vec<Vec<f64>>,
    pub max_share: Vec<f64>,
    pub rouge_l: Vec<f64>,
}

impl AttentionReport {
    pub const HEADER: &'static str = "bin\tlo\thi\tcount\tmean_rouge_l";

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for (i, b) in self.bins.iter().enumerate() {
            let mean = b.mean_rouge_l.map_or(String::new(), |m| format!("{m:.6}"));
            out.push_str(&format!("{i}\t{:.6}\t{:.6}\t{}\t{mean}\n", b.lo, b.hi, b.count));
        }
        out
    }
}

/// `bins + 1` equal-width edges over `[1/agents, 1]`.
pub fn bin_edges(agents: usize, bins: usize) -> Vec<f64> {
    let lo = 1.0 / agents as f64;
    (0..=bins).map(|k| lo + (1.0 - lo) * k as f64 / bins as f64).collect()
}

/// Bin of a max share; values at or below `1/agents` go to the first bin
/// and 1 goes to the last.
pub fn bin_index(share: f64, agents: usize, bins: usize) -> usize {
    let lo = 1.0 / agents as f64;
    let pos = ((share - lo) / (1.0 - lo) * bins as f64).floor();
    if pos <= 0.0 {
        0
    } else {
        (pos as usize).min(bins - 1)
    }
}

/// Mean of the per-step agent attentions.
pub fn mean_agent_attention(d: &Decoded, agents: usize) -> Result<Vec<f64>> {
    if d.records.is_empty() {
        return Err(DcaError::Contract("decoded sequence has no steps".into()));
    }
    let mut mean = vec![0.0; agents];
    for r in &d.records {
        if r.agent_attention.len() != agents {
            return Err(DcaError::shape(
                "mean_agent_attention",
                &[agents],
                &[r.agent_attention.len()],
            ));
        }
        for (m, g) in mean.iter_mut().zip(&r.agent_attention) {
            *m += g;
        }
    }
    let n = d.records.len() as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

pub fn analyze_attention(
    model: &Model,
    examples: &[PreparedExample],
    bins: usize,
    opts: DecodeOptions,
) -> Result<AttentionReport> {
    let agents = model.config.agents;
    if agents < 2 {
        return Err(DcaError::UnsupportedAnalysis(format!(
            "agent attention analysis needs at least 2 agents, config has {agents}"
        )));
    }
    if bins == 0 {
        return Err(DcaError::Argument("bin count must be at least 1".into()));
    }
    if examples.is_empty() {
        return Err(DcaError::EmptyCorpus);
    }
    let decoded = decode_corpus(model, examples, opts)?;
    let edges = bin_edges(agents, bins);
    let mut report = AttentionReport {
        agents,
        bins: edges
            .windows(2)
            .map(|w| AttentionBin {
                lo: w[0],
                hi: w[1],
                count: 0,
                mean_rouge_l: None,
            })
            .collect(),
        mean_attention: Vec::with_capacity(examples.len()),
        max_share: Vec::with_capacity(examples.len()),
        rouge_l: Vec::with_capacity(examples.len()),
    };
    let mut sums = vec![0.0; bins];
    for (ex, (words, d)) in examples.iter().zip(&decoded) {
        let mean = mean_agent_attention(d, agents)?;
        let share = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let score = rouge_l(words, &ex.reference).f1;
        let b = bin_index(share, agents, bins);
        report.bins[b].count += 1;
        sums[b] += score;
        report.mean_attention.push(mean);
        report.max_share.push(share);
        report.rouge_l.push(score);
    }
    for (bin, s) in report.bins.iter_mut().zip(sums) {
        if bin.count > 0 {
            bin.mean_rouge_l = Some(s / bin.count as f64);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;

    #[test]
    fn edges_are_equal_width() {
        let e = bin_edges(3, 5);
        assert_eq!(e.len(), 6);
        assert_eq!(e[0], 1.0 / 3.0);
        assert!((e[5] - 1.0).abs() < 1e-15);
        for w in e.windows(2) {
            assert!((w[1] - w[0] - (2.0 / 3.0) / 5.0).abs() < 1e-15);
        }
        assert_eq!(bin_index(1.0 / 3.0, 3, 5), 0);
        assert_eq!(bin_index(1.0 / 3.0 - 1e-17, 3, 5), 0);
        assert_eq!(bin_index(1.0, 3, 5), 4);
        assert_eq!(bin_index(0.5, 2, 2), 0);
        assert_eq!(bin_index(0.76, 2, 2), 1);
    }

    #[test]
    fn single_agent_is_unsupported() {
        let m = testutil::model(testutil::config(1, 4, 3, 10), 1);
        let ex = testutil::example(&m.vocab, &[3], 2, 1);
        let opts = DecodeOptions {
            beam_width: 1,
            max_len: 4,
            block_trigrams: false,
        };
        assert!(matches!(
            analyze_attention(&m, &[ex], 5, opts),
            Err(DcaError::UnsupportedAnalysis(_))
        ));
    }

    #[test]
    fn symmetric_model_lands_in_the_lowest_bin() {
        let mut m = testutil::model(testutil::config(3, 4, 3, 10), 1);
        m.params.get_mut(m.ids.decoder.agent.v).data_mut().fill(0.0);
        let exs: Vec<_> = (0..6).map(|s| testutil::example(&m.vocab, &[3, 2, 4], 2, s)).collect();
        let opts = DecodeOptions {
            beam_width: 2,
            max_len: 5,
            block_trigrams: true,
        };
        let r = analyze_attention(&m, &exs, 5, opts).unwrap();
        assert_eq!(r.bins[0].count, 6);
        for mean in &r.mean_attention {
            assert!((mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), 6);
        assert!(tsv.lines().nth(2).unwrap().ends_with("\t0\t"));
    }
}
