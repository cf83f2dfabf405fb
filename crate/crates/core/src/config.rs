//! Model and training configuration, including the seven ablation presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DcaError, Result};
use crate::rouge::RougeMetric;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// One reward for the whole summary.
    #[default]
    End,
    /// Per-sentence ROUGE increments.
    Intermediate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Label printed in evaluation tables.
    pub tag: String,
    pub agents: usize,
    /// Local layer plus `layers − 1` contextual layers.
    pub layers: usize,
    pub hidden: usize,
    pub embed: usize,
    pub vocab_size: usize,
    pub per_agent_limit: usize,

    pub comm_enabled: bool,
    pub pgen_enabled: bool,
    /// One generation probability per agent; otherwise a single shared one
    /// computed from the agent context.
    pub mpgen_enabled: bool,
    pub caa_enabled: bool,
    pub sem_enabled: bool,
    pub rl_enabled: bool,
    pub reward_mode: RewardMode,
    pub reward_metric: RougeMetric,

    pub gamma: f64,
    pub lambda: f64,
    pub lr_mle: f64,
    pub lr_rl: f64,
    pub clip_norm: f64,
    pub init_scale: f64,
    pub beam_width: usize,
    pub block_trigrams: bool,
    pub max_len_train: usize,
    pub max_len_test: usize,

    pub seed: u64,
    pub embedding_file: Option<String>,
    pub mle_steps: usize,
    pub rl_steps: usize,
    pub validate_every: usize,
    /// Validation examples scored per validation round; 0 means all.
    pub validate_limit: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tag: "m7".into(),
            agents: 3,
            layers: 2,
            hidden: 128,
            embed: 200,
            vocab_size: 50_000,
            per_agent_limit: 200,
            comm_enabled: true,
            pgen_enabled: true,
            mpgen_enabled: true,
            caa_enabled: true,
            sem_enabled: true,
            rl_enabled: true,
            reward_mode: RewardMode::End,
            reward_metric: RougeMetric::RougeL,
            gamma: 0.97,
            lambda: 0.1,
            lr_mle: 1e-3,
            lr_rl: 1e-5,
            clip_norm: 2.0,
            init_scale: 0.1,
            beam_width: 5,
            block_trigrams: true,
            max_len_train: 100,
            max_len_test: 110,
            seed: 1,
            embedding_file: None,
            mle_steps: 1000,
            rl_steps: 0,
            validate_every: 50,
            validate_limit: 0,
        }
    }
}

pub const ABLATION_TAGS: [&str; 7] = ["m1", "m2", "m3", "m4", "m5", "m6", "m7"];

impl ModelConfig {
    /// Flag settings of one ablation preset, on top of the defaults.
    ///
    /// m1 single agent with pointer, m2 adds SEM, m3 adds RL; m4 three
    /// non-communicating agents with SEM and a shared pointer; m5 adds
    /// communication and per-agent pointers; m6 adds contextual agent
    /// attention; m7 adds RL.
    pub fn ablation(tag: &str) -> Result<Self> {
        let mut c = ModelConfig {
            tag: tag.to_string(),
            ..Default::default()
        };
        let single = |c: &mut ModelConfig| {
            c.agents = 1;
            c.pgen_enabled = true;
            c.mpgen_enabled = false;
            c.comm_enabled = false;
            c.caa_enabled = false;
            c.sem_enabled = false;
            c.rl_enabled = false;
        };
        let multi = |c: &mut ModelConfig| {
            c.agents = 3;
            c.pgen_enabled = true;
            c.mpgen_enabled = false;
            c.comm_enabled = false;
            c.caa_enabled = false;
            c.sem_enabled = true;
            c.rl_enabled = false;
        };
        match tag {
            "m1" => single(&mut c),
            "m2" => {
                single(&mut c);
                c.sem_enabled = true;
            }
            "m3" => {
                single(&mut c);
                c.rl_enabled = true;
                c.reward_mode = RewardMode::End;
            }
            "m4" => multi(&mut c),
            "m5" | "m6" | "m7" => {
                multi(&mut c);
                c.comm_enabled = true;
                c.mpgen_enabled = true;
                c.caa_enabled = tag != "m5";
                c.rl_enabled = tag == "m7";
            }
            other => return Err(DcaError::Config(format!("unknown ablation tag {other:?}"))),
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DcaError::Config(m.to_string()));
        if self.agents == 0 {
            return bad("agents must be at least 1");
        }
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.hidden == 0 || self.embed == 0 {
            return bad("hidden and embed sizes must be positive");
        }
        if self.vocab_size < crate::corpus::RESERVED.len() {
            return bad("vocab_size must cover the reserved tokens");
        }
        if self.per_agent_limit == 0 {
            return bad("per_agent_limit must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.lr_mle > 0.0 && self.lr_rl > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0)
            || !(self.init_scale.is_finite() && self.init_scale >= 0.0)
        {
            return bad("clip_norm must be positive and init_scale non-negative");
        }
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1");
        }
        if self.max_len_train < 1 || self.max_len_test < 1 {
            return bad("maximum lengths must be at least 1");
        }
        if self.validate_every == 0 {
            return bad("validate_every must be positive");
        }
        if self.mpgen_enabled && !self.pgen_enabled {
            return bad("mpgen_enabled requires pgen_enabled");
        }
        Ok(())
    }

    /// Fields that determine parameter shapes or the forward computation.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        self.agents == other.agents
            && self.layers == other.layers
            && self.hidden == other.hidden
            && self.embed == other.embed
            && self.vocab_size == other.vocab_size
            && self.comm_enabled == other.comm_enabled
            && self.pgen_enabled == other.pgen_enabled
            && self.mpgen_enabled == other.mpgen_enabled
            && self.caa_enabled == other.caa_enabled
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let c: ModelConfig =
            serde_json::from_str(&text).map_err(|e| DcaError::Config(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}
