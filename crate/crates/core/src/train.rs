//! Training: per-example losses and gradients, the two-phase optimizer
//! loop, validation, metrics logging and best-checkpoint selection.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Gradients};
use crate::checkpoint;
use crate::config::ModelConfig;
use crate::corpus::{prepare, Example, PreparedExample, Vocabulary};
use crate::error::{DcaError, Result};
use crate::inference::{greedy_decode, replace_unk, Session};
use crate::model::Model;
use crate::objectives::{mixed_loss, mle_loss, rl_loss, sem_loss, sentence_end_states, LossBreakdown, LossParts};
use crate::rouge::rouge_l;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Likelihood, plus the cohesion term when enabled.
    Mle,
    /// Self-critical reward mixed with the likelihood objective.
    Mixed,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Mle => "mle",
            Phase::Mixed => "mixed",
        }
    }
}

/// Loss breakdown and parameter gradients for one example.
pub fn example_gradients(
    model: &Model,
    ex: &PreparedExample,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, Gradients)> {
    let c = &model.config;
    let mut s = Session::new(model, ex)?;
    let tf = s.teacher_forced(&ex.target)?;
    let mle = mle_loss(&mut s.graph, &tf.dists, &ex.target)?;
    let sem = if c.sem_enabled {
        let states = sentence_end_states(&tf.steps, &ex.target);
        Some(sem_loss(&mut s.graph, &states)?)
    } else {
        None
    };
    let rl = if phase == Phase::Mixed {
        let greedy = greedy_decode(&mut s, c.max_len_train)?;
        let greedy_words = ex.ext.detokenize(&greedy.tokens, &model.vocab);
        let sampled = s.sample_rollout(c.max_len_train, rng)?;
        let sampled_words = ex.ext.detokenize(sampled.content(), &model.vocab);
        Some(rl_loss(
            &mut s.graph,
            &sampled,
            &sampled_words,
            &greedy_words,
            &ex.reference,
            c.reward_mode,
            c.reward_metric,
        )?)
    } else {
        None
    };
    let parts = LossParts { mle, sem, rl };
    let (total, breakdown) = mixed_loss(
        &mut s.graph,
        &parts,
        c.gamma,
        c.lambda,
        c.sem_enabled,
        phase == Phase::Mixed,
    )?;
    if !breakdown.total.is_finite() {
        return Err(DcaError::NonFinite(format!(
            "loss {} on example {}",
            breakdown.total, ex.id
        )));
    }
    s.graph.backward(total)?;
    Ok((breakdown, s.graph.param_grads()))
}

/// One logged optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: LossBreakdown,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Adam over batch-size-1 steps, with global-norm clipping. Starting a
/// phase resets the optimizer moments.
pub struct Trainer {
    pub model: Model,
    pub phase: Phase,
    pub step: u64,
    adam: AdamState,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, seed: u64) -> Self {
        Trainer {
            adam: AdamState::new(&model.params),
            model,
            phase: Phase::Mle,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn start_phase(&mut self, phase: Phase) {
        self.phase = phase;
        self.adam = AdamState::new(&self.model.params);
    }

    fn lr(&self) -> f64 {
        match self.phase {
            Phase::Mle => self.model.config.lr_mle,
            Phase::Mixed => self.model.config.lr_rl,
        }
    }

    /// Computes gradients on `ex` and applies one update. On a non-finite
    /// loss or gradient the parameters are left untouched.
    pub fn train_step(&mut self, ex: &PreparedExample) -> Result<StepLog> {
        let (loss, mut grads) = example_gradients(&self.model, ex, self.phase, &mut self.rng)?;
        if !grads.all_finite() {
            return Err(DcaError::NonFinite(format!("gradient on example {}", ex.id)));
        }
        let grad_norm = grads.clip_global_norm(self.model.config.clip_norm);
        let lr = self.lr();
        self.adam.step(&mut self.model.params, &grads, lr)?;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            loss,
            grad_norm,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Validation {
    /// Mean per-token negative log-likelihood under teacher forcing.
    pub nll: f64,
    /// Mean ROUGE-L F1 of greedy decodes with UNKs replaced.
    pub rouge_l: f64,
}

pub fn validate(model: &Model, examples: &[PreparedExample], max_len: usize) -> Result<Validation> {
    if examples.is_empty() {
        return Err(DcaError::EmptyCorpus);
    }
    let mut v = Validation::default();
    for ex in examples {
        let mut s = Session::new(model, ex)?;
        let tf = s.teacher_forced(&ex.target)?;
        let nll = mle_loss(&mut s.graph, &tf.dists, &ex.target)?;
        v.nll += s.graph.item(nll);
        let d = greedy_decode(&mut s, max_len)?;
        let words = replace_unk(&d.tokens, &d.records, &ex.agents, &ex.ext, &model.vocab)?;
        v.rouge_l += rouge_l(&words, &ex.reference).f1;
    }
    let n = examples.len() as f64;
    v.nll /= n;
    v.rouge_l /= n;
    Ok(v)
}

pub fn prepare_all(
    examples: &[Example],
    vocab: &Vocabulary,
    config: &ModelConfig,
    max_target: usize,
) -> Vec<PreparedExample> {
    examples
        .iter()
        .map(|e| prepare(e, vocab, config.agents, config.per_agent_limit, max_target))
        .collect()
}

pub const METRICS_HEADER: &str =
    "phase\tstep\tloss\tmle\tsem\trl\treward_sampled\treward_greedy\tgrad_norm\tval_nll\tval_rouge_l";

fn metrics_row(phase: Phase, log: &StepLog, val: Option<Validation>) -> String {
    let l = &log.loss;
    let (nll, rl) = val.map_or((String::new(), String::new()), |v| {
        (v.nll.to_string(), v.rouge_l.to_string())
    });
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{nll}\t{rl}\n",
        phase.name(),
        log.step,
        l.total,
        l.mle,
        l.sem,
        l.rl,
        l.reward_sampled,
        l.reward_greedy,
        log.grad_norm
    )
}

/// Files written by [`train`].
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub steps: u64,
    pub best_nll: f64,
    /// Best validation ROUGE-L of the mixed phase, when it ran.
    pub best_rouge_l: Option<f64>,
    pub final_validation: Validation,
}

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const METRICS_FILE: &str = "metrics.tsv";
/// Best checkpoint of the run: by NLL after the likelihood phase, by
/// ROUGE-L once the mixed phase has run.
pub const BEST_FILE: &str = "best.ckpt";
pub const MLE_BEST_FILE: &str = "mle_best.ckpt";
pub const FINAL_FILE: &str = "final.ckpt";
pub const LAST_GOOD_FILE: &str = "last_good.ckpt";

struct Run<'a> {
    dir: &'a Path,
    metrics: File,
    train: Vec<PreparedExample>,
    valid: Vec<PreparedExample>,
    order: Vec<usize>,
    cursor: usize,
    shuffle: ChaCha8Rng,
}

impl Run<'_> {
    fn next_example(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.shuffle);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn validate(&self, t: &Trainer) -> Result<Validation> {
        validate(&t.model, &self.valid, t.model.config.max_len_train)
    }

    /// Runs `steps` updates; calls `improved` with each validation and
    /// saves the best checkpoint when it returns true.
    fn phase(
        &mut self,
        t: &mut Trainer,
        steps: usize,
        mut improved: impl FnMut(&Validation) -> bool,
    ) -> Result<Validation> {
        let every = t.model.config.validate_every.max(1);
        let mut last = None;
        for k in 1..=steps {
            let ex = self.next_example();
            let log = match t.train_step(&self.train[ex]) {
                Ok(log) => log,
                Err(e @ DcaError::NonFinite(_)) => {
                    checkpoint::save(&self.dir.join(LAST_GOOD_FILE), &t.model, t.step)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let val = if k % every == 0 || k == steps {
                let v = self.validate(t)?;
                if improved(&v) {
                    checkpoint::save(&self.dir.join(BEST_FILE), &t.model, t.step)?;
                }
                last = Some(v);
                Some(v)
            } else {
                None
            };
            self.metrics.write_all(metrics_row(t.phase, &log, val).as_bytes())?;
        }
        match last {
            Some(v) => Ok(v),
            None => self.validate(t),
        }
    }
}

/// Two-phase training into `out_dir`: resolved config, vocabulary, metrics
/// log and checkpoints. The mixed phase resumes from the best likelihood
/// checkpoint and runs only when RL is enabled.
pub fn train(config: &ModelConfig, train: &[Example], valid: &[Example], out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(DcaError::EmptyCorpus);
    }
    fs::create_dir_all(out_dir)?;
    let vocab = Vocabulary::build(train, config.vocab_size)?;
    let mut resolved = config.clone();
    resolved.vocab_size = vocab.len();
    resolved.save(&out_dir.join(CONFIG_FILE))?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;

    let mut model = Model::new(resolved.clone(), vocab, resolved.seed)?;
    if let Some(path) = &resolved.embedding_file {
        model.load_embeddings(Path::new(path))?;
    }
    let mut metrics = File::create(out_dir.join(METRICS_FILE))?;
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut run = Run {
        dir: out_dir,
        metrics,
        train: prepare_all(train, &model.vocab, &resolved, resolved.max_len_train),
        valid: {
            let limit = if resolved.validate_limit == 0 {
                valid.len()
            } else {
                resolved.validate_limit.min(valid.len())
            };
            prepare_all(&valid[..limit], &model.vocab, &resolved, resolved.max_len_train)
        },
        order: (0..train.len()).collect(),
        cursor: train.len(),
        shuffle: ChaCha8Rng::seed_from_u64(resolved.seed.wrapping_add(1)),
    };
    let mut trainer = Trainer::new(model, resolved.seed.wrapping_add(2));

    let mut best_nll = f64::INFINITY;
    let mut final_validation = run.phase(&mut trainer, resolved.mle_steps, |v| {
        let better = v.nll < best_nll;
        if better {
            best_nll = v.nll;
        }
        better
    })?;
    if best_nll == f64::INFINITY {
        checkpoint::save(&out_dir.join(BEST_FILE), &trainer.model, trainer.step)?;
    }
    fs::copy(out_dir.join(BEST_FILE), out_dir.join(MLE_BEST_FILE))?;

    let mut best_rouge_l = None;
    if resolved.rl_enabled && resolved.rl_steps > 0 {
        let (model, step) = checkpoint::load(&out_dir.join(BEST_FILE))?;
        trainer.model = model;
        trainer.step = step;
        trainer.start_phase(Phase::Mixed);
        let start = run.validate(&trainer)?;
        let mut best = start.rouge_l;
        final_validation = run.phase(&mut trainer, resolved.rl_steps, |v| {
            let better = v.rouge_l > best;
            if better {
                best = v.rouge_l;
            }
            better
        })?;
        best_rouge_l = Some(best);
    }
    checkpoint::save(&out_dir.join(FINAL_FILE), &trainer.model, trainer.step)?;
    run.metrics.flush()?;
    Ok(TrainReport {
        out_dir: out_dir.to_path_buf(),
        steps: trainer.step,
        best_nll,
        best_rouge_l,
        final_validation,
    })
}
