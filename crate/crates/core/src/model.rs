//! Full summarizer: parameter layout and initialization, and the encoder,
//! decoder and pointer wired together for one prepared example.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::config::ModelConfig;
use crate::corpus::{PreparedExample, Vocabulary, SOS};
use crate::decoder::{
    self, AttentionMemory, AttentionParams, DecoderParams, DecoderState, StepDistribution, StepFlags,
};
use crate::encoder::{self, BiLstmParams, EncoderOutput, EncoderParams, FusionParams, LstmParams};
use crate::error::{DcaError, Result};
use crate::pointer::PointerParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Uniform,
    Zeros,
    /// Zeros except the forget-gate quarter, which starts at 1.
    LstmBias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: impl Into<String>, shape: &[usize], init: Init) {
    out.push(ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    });
}

fn lstm_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, hidden: usize) {
    spec(out, format!("{prefix}.w"), &[4 * hidden, input + hidden], Init::Uniform);
    spec(out, format!("{prefix}.b"), &[4 * hidden], Init::LstmBias);
}

fn bilstm_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, hidden: usize) {
    lstm_specs(out, &format!("{prefix}.fwd"), input, hidden);
    lstm_specs(out, &format!("{prefix}.bwd"), input, hidden);
    spec(out, format!("{prefix}.proj"), &[hidden, 2 * hidden], Init::Uniform);
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, hidden: usize) {
    spec(out, format!("{prefix}.v"), &[hidden], Init::Uniform);
    spec(out, format!("{prefix}.key"), &[hidden, hidden], Init::Uniform);
    spec(out, format!("{prefix}.query"), &[hidden, hidden], Init::Uniform);
    spec(out, format!("{prefix}.b"), &[hidden], Init::Zeros);
}

/// Every learned array for `config`, in registration (and checkpoint) order.
pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let (h, n, v) = (config.hidden, config.embed, config.vocab_size);
    let mut out = Vec::new();
    spec(&mut out, "embedding", &[v, n], Init::Uniform);
    bilstm_specs(&mut out, "enc.local", n, h);
    for k in 1..config.layers {
        bilstm_specs(&mut out, &format!("enc.ctx{k}"), 1, h);
    }
    if config.layers > 1 {
        spec(&mut out, "enc.fuse.v", &[h], Init::Uniform);
        spec(&mut out, "enc.fuse.state", &[h, h], Init::Uniform);
        spec(&mut out, "enc.fuse.message", &[h, h], Init::Uniform);
    }
    lstm_specs(&mut out, "dec.lstm", n + h, h);
    attention_specs(&mut out, "dec.word", h);
    attention_specs(&mut out, "dec.agent", h);
    let out_in = if config.caa_enabled { 3 * h } else { 2 * h };
    spec(&mut out, "dec.out.hidden.w", &[h, out_in], Init::Uniform);
    spec(&mut out, "dec.out.hidden.b", &[h], Init::Zeros);
    spec(&mut out, "dec.out.vocab.w", &[v, h], Init::Uniform);
    spec(&mut out, "dec.out.vocab.b", &[v], Init::Zeros);
    if config.pgen_enabled {
        spec(&mut out, "ptr.context", &[h], Init::Uniform);
        spec(&mut out, "ptr.state", &[h], Init::Uniform);
        spec(&mut out, "ptr.input", &[n], Init::Uniform);
        spec(&mut out, "ptr.b", &[1], Init::Zeros);
    }
    out
}

fn initial_value(spec: &ParamSpec, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    match spec.init {
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::Uniform => {
            let len = spec.shape.iter().product();
            let data = (0..len)
                .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
                .collect();
            Tensor::new(spec.shape.clone(), data).expect("spec shape")
        }
        Init::LstmBias => {
            let mut t = Tensor::zeros(&spec.shape);
            let h = spec.shape[0] / 4;
            t.data_mut()[h..2 * h].fill(1.0);
            t
        }
    }
}

/// Resolved parameter handles.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub pointer: Option<PointerParams>,
}

impl ModelParams {
    fn resolve(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| DcaError::IncompatibleCheckpoint(format!("missing parameter {name}")))
        };
        let h = config.hidden;
        let lstm = |prefix: &str| -> Result<LstmParams> {
            Ok(LstmParams {
                weight: id(&format!("{prefix}.w"))?,
                bias: id(&format!("{prefix}.b"))?,
                hidden: h,
            })
        };
        let bilstm = |prefix: &str| -> Result<BiLstmParams> {
            Ok(BiLstmParams {
                forward: lstm(&format!("{prefix}.fwd"))?,
                backward: lstm(&format!("{prefix}.bwd"))?,
                proj: id(&format!("{prefix}.proj"))?,
            })
        };
        let attention = |prefix: &str| -> Result<AttentionParams> {
            Ok(AttentionParams {
                v: id(&format!("{prefix}.v"))?,
                key: id(&format!("{prefix}.key"))?,
                query: id(&format!("{prefix}.query"))?,
                bias: id(&format!("{prefix}.b"))?,
            })
        };
        let embedding = id("embedding")?;
        let encoder = EncoderParams {
            embedding,
            local: bilstm("enc.local")?,
            contextual: (1..config.layers)
                .map(|k| bilstm(&format!("enc.ctx{k}")))
                .collect::<Result<_>>()?,
            fusion: if config.layers > 1 {
                Some(FusionParams {
                    v: id("enc.fuse.v")?,
                    state: id("enc.fuse.state")?,
                    message: id("enc.fuse.message")?,
                })
            } else {
                None
            },
            hidden: h,
        };
        let decoder = DecoderParams {
            embedding,
            lstm: lstm("dec.lstm")?,
            word: attention("dec.word")?,
            agent: attention("dec.agent")?,
            out_hidden: id("dec.out.hidden.w")?,
            out_hidden_bias: id("dec.out.hidden.b")?,
            out_vocab: id("dec.out.vocab.w")?,
            out_vocab_bias: id("dec.out.vocab.b")?,
        };
        let pointer = if config.pgen_enabled {
            Some(PointerParams {
                context: id("ptr.context")?,
                state: id("ptr.state")?,
                input: id("ptr.input")?,
                bias: id("ptr.b")?,
            })
        } else {
            None
        };
        Ok(ModelParams {
            encoder,
            decoder,
            pointer,
        })
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub ids: ModelParams,
}

/// Encoder pass plus decoder attention keys for one example.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub encoder: EncoderOutput,
    pub memory: AttentionMemory,
    pub initial: DecoderState,
}

/// Teacher-forced rollout over a target sequence.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    pub steps: Vec<StepDistribution>,
    pub dists: Vec<Var>,
}

impl Model {
    /// Fresh model with parameters drawn from `seed`. The configured
    /// vocabulary size must equal the vocabulary's length.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(DcaError::Config(format!(
                "vocab_size {} does not match the vocabulary's {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in layout(&config) {
            let value = initial_value(&s, config.init_scale, &mut rng);
            store.add(s.name, value)?;
        }
        let ids = ModelParams::resolve(&store, &config)?;
        Ok(Model {
            config,
            vocab,
            params: store,
            ids,
        })
    }

    /// Wraps existing parameters after checking every name and shape against
    /// the layout implied by `config`.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(DcaError::IncompatibleCheckpoint(format!(
                "vocab_size {} does not match the stored vocabulary's {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let specs = layout(&config);
        if specs.len() != store.len() {
            return Err(DcaError::IncompatibleCheckpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                store.len()
            )));
        }
        for (s, (_, name, value)) in specs.iter().zip(store.iter()) {
            if s.name != name || s.shape != value.shape() {
                return Err(DcaError::IncompatibleCheckpoint(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    value.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        let ids = ModelParams::resolve(&store, &config)?;
        Ok(Model {
            config,
            vocab,
            params: store,
            ids,
        })
    }

    pub fn flags(&self) -> StepFlags {
        StepFlags {
            caa: self.config.caa_enabled,
            pgen: self.config.pgen_enabled,
            mpgen: self.config.mpgen_enabled,
        }
    }

    pub fn encode(&self, g: &mut Graph, ex: &PreparedExample) -> Result<Encoded> {
        let encoder = encoder::encode_document(g, &self.ids.encoder, &ex.agents, self.config.comm_enabled)?;
        let memory = AttentionMemory::new(g, &self.ids.decoder, &encoder, ex.extended_len())?;
        let initial = decoder::init_state(g, &encoder)?;
        Ok(Encoded {
            encoder,
            memory,
            initial,
        })
    }

    pub fn step(
        &self,
        g: &mut Graph,
        memory: &AttentionMemory,
        state: &DecoderState,
        input: usize,
    ) -> Result<(StepDistribution, DecoderState)> {
        decoder::decoder_step(
            g,
            &self.ids.decoder,
            self.ids.pointer.as_ref(),
            memory,
            state,
            input,
            self.flags(),
        )
    }

    /// Feeds SOS followed by `target[..len−1]` and returns one distribution
    /// per target position.
    pub fn teacher_forced(&self, g: &mut Graph, enc: &Encoded, target: &[usize]) -> Result<TeacherForced> {
        let mut state = enc.initial;
        let mut input = SOS;
        let mut steps = Vec::with_capacity(target.len());
        for &t in target {
            let (dist, next) = self.step(g, &enc.memory, &state, input)?;
            steps.push(dist);
            state = next;
            input = t;
        }
        let dists = steps.iter().map(|s| s.final_dist).collect();
        Ok(TeacherForced { steps, dists })
    }

    /// Overwrites embedding rows from a text file of `token v1 … vn` lines.
    /// Returns how many vocabulary rows were replaced.
    pub fn load_embeddings(&mut self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path)?;
        let n = self.config.embed;
        let mut rows: HashMap<usize, Vec<f64>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| DcaError::Schema {
                    line: i + 1,
                    message: format!("bad embedding value: {e}"),
                })?;
            if vals.len() != n {
                return Err(DcaError::Schema {
                    line: i + 1,
                    message: format!("expected {n} values, found {}", vals.len()),
                });
            }
            if let Some(id) = self.vocab.get(tok) {
                rows.insert(id, vals);
            }
        }
        let table = self.params.get_mut(self.ids.encoder.embedding);
        for (&id, vals) in &rows {
            table.data_mut()[id * n..(id + 1) * n].copy_from_slice(vals);
        }
        Ok(rows.len())
    }
}

/// Looks up a parameter id by name.
pub fn param_id(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| DcaError::Argument(format!("no parameter named {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::objectives::mle_loss;
    use crate::testutil;

    #[test]
    fn layout_follows_flags() {
        let names = |c: &ModelConfig| layout(c).into_iter().map(|s| s.name).collect::<Vec<_>>();
        let full = testutil::config(2, 4, 3, 10);
        let n = names(&full);
        assert!(n.contains(&"enc.fuse.v".to_string()));
        assert!(n.contains(&"ptr.b".to_string()));
        let hidden_w = layout(&full)
            .into_iter()
            .find(|s| s.name == "dec.out.hidden.w")
            .unwrap();
        assert_eq!(hidden_w.shape, vec![4, 12]);

        let mut plain = full.clone();
        plain.layers = 1;
        plain.pgen_enabled = false;
        plain.mpgen_enabled = false;
        plain.caa_enabled = false;
        let n = names(&plain);
        assert!(!n
            .iter()
            .any(|s| s.starts_with("enc.fuse") || s.starts_with("ptr.") || s.starts_with("enc.ctx")));
        let hidden_w = layout(&plain)
            .into_iter()
            .find(|s| s.name == "dec.out.hidden.w")
            .unwrap();
        assert_eq!(hidden_w.shape, vec![4, 8]);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = testutil::config(2, 4, 3, 10);
        let a = testutil::model(cfg.clone(), 3);
        let b = testutil::model(cfg.clone(), 3);
        let c = testutil::model(cfg, 4);
        let flat = |m: &Model| {
            m.params
                .iter()
                .flat_map(|(_, _, t)| t.data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
        let bias = a.params.get(a.params.id("enc.local.fwd.b").unwrap()).data();
        assert_eq!(&bias[..4], &[0.0; 4]);
        assert_eq!(&bias[4..8], &[1.0; 4]);
    }

    #[test]
    fn vocab_size_must_match() {
        let cfg = testutil::config(1, 4, 3, 10);
        assert!(matches!(
            Model::new(cfg, testutil::vocab(11), 1),
            Err(DcaError::Config(_))
        ));
    }

    #[test]
    fn from_parts_checks_layout() {
        let cfg = testutil::config(2, 4, 3, 10);
        let m = testutil::model(cfg.clone(), 1);
        assert!(Model::from_parts(cfg.clone(), m.vocab.clone(), m.params.clone()).is_ok());
        let mut other = cfg.clone();
        other.hidden = 5;
        assert!(matches!(
            Model::from_parts(other, m.vocab.clone(), m.params.clone()),
            Err(DcaError::IncompatibleCheckpoint(_))
        ));
        let mut no_ptr = cfg;
        no_ptr.pgen_enabled = false;
        no_ptr.mpgen_enabled = false;
        assert!(matches!(
            Model::from_parts(no_ptr, m.vocab.clone(), m.params.clone()),
            Err(DcaError::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn full_step_gradients_match_finite_differences() {
        let m = testutil::model(testutil::config(2, 4, 3, 6), 8);
        let ex = testutil::example(&m.vocab, &[3, 3], 3, 2);
        let mut store = m.params.clone();
        let ids: Vec<ParamId> = store.ids().collect();
        let report = gradient_check(&mut store, &ids, 1e-5, |g| {
            let enc = m.encode(g, &ex)?;
            let tf = m.teacher_forced(g, &enc, &ex.target)?;
            mle_loss(g, &tf.dists, &ex.target)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
        assert_eq!(report.coordinates, store.total_len());
    }

    #[test]
    fn embeddings_load_from_text() {
        let mut m = testutil::model(testutil::config(1, 4, 3, 10), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "w5 1 2 3\nnotavocabword 0 0 0\n\nw6 -1 -2 -3\n").unwrap();
        assert_eq!(m.load_embeddings(&path).unwrap(), 2);
        let e = m.params.get(m.ids.encoder.embedding).data();
        assert_eq!(&e[15..18], &[1.0, 2.0, 3.0]);
        assert_eq!(&e[18..21], &[-1.0, -2.0, -3.0]);
        std::fs::write(&path, "w5 1 2\n").unwrap();
        assert!(matches!(
            m.load_embeddings(&path),
            Err(DcaError::Schema { line: 1, .. })
        ));
    }
}
