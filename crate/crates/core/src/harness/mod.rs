//! Experiment engine behind the command-line tool: demonstration generation,
//! training, receding-horizon rollouts, evaluation reports and attention
//! dumps. Every artifact is a function of the run config and its seeds, except
//! fields that record wall-clock time.

mod attn;
mod demo;
mod eval;
mod rollout;
mod train;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::flowmatch::HORIZON;
use crate::par::Exec;
use crate::policynet::train::AdamConfig;
use crate::policynet::{Modality, NetConfig, Objective};
use crate::simenv::ScenarioConfig;

pub use attn::{attention_series, attn_csv, cmd_attn, AttnRow, QUERY_ACTION};
pub use demo::{cmd_demo_gen, generate_demos, run_expert_episode, DemoSummary};
pub use eval::{cmd_eval, evaluate, find_checkpoints, EvalReport, RolloutRecord, SeedSummary};
pub use rollout::{cmd_rollout, rollout, rollout_seeds, LoadedPolicy, RolloutResult};
pub use train::{cmd_train, train_seed, EpochLog, TrainSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Everything a command needs, read from a flat key-value file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    /// Modalities the network is built and trained with.
    pub modalities: Vec<Modality>,
    /// Modalities fed at rollout time; defaults to `modalities`.
    pub eval_modalities: Vec<Modality>,
    pub objective: Objective,
    pub masked_training: bool,
    pub p_mask: f64,
    /// Flow refinement steps (or DDIM steps for the diffusion objective).
    pub inference_steps: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr_schedule: LrSchedule,
    pub sigma_rot: f64,
    pub net: NetConfig,
    pub n_demos: usize,
    pub max_demo_attempts: usize,
    pub n_rollouts: usize,
    pub inference_latency_steps: usize,
    pub checkpoint_every: usize,
    pub parallel: bool,
    pub data_dir: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub resume: Option<PathBuf>,
    pub episode: Option<PathBuf>,
    pub save_episodes: bool,
    /// Free-form label echoed into aggregate reports.
    pub label: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioConfig::variable(),
            modalities: Modality::ALL.to_vec(),
            eval_modalities: Modality::ALL.to_vec(),
            objective: Objective::Flow,
            masked_training: false,
            p_mask: 0.5,
            inference_steps: 5,
            epochs: 500,
            seeds: vec![0, 1, 2],
            batch_size: 32,
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::Cosine,
            sigma_rot: 1.0,
            net: NetConfig::default(),
            n_demos: 20,
            max_demo_attempts: 200,
            n_rollouts: 10,
            inference_latency_steps: 1,
            checkpoint_every: 0,
            parallel: true,
            data_dir: None,
            checkpoints: Vec::new(),
            resume: None,
            episode: None,
            save_episodes: false,
            label: String::new(),
        }
    }
}

fn parse_modalities(kv: &mut KvConfig, key: &str) -> Result<Option<Vec<Modality>>> {
    let Some(list) = kv.take_list::<String>(key)? else {
        return Ok(None);
    };
    let mut out = Vec::new();
    for name in &list {
        let m = Modality::parse(name)
            .ok_or_else(|| Error::config(key, format!("unknown modality `{name}` (vision, tactile, proprio)")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::config(key, "modality set must be nonempty"));
    }
    Ok(Some(out))
}

impl RunConfig {
    /// Parses all keys of `kv`; unknown keys are an error.
    pub fn from_kv(mut kv: KvConfig) -> Result<Self> {
        let d = RunConfig::default();
        let kv = &mut kv;
        // the grasp default differs from the scenario's own default
        if !kv.contains("grasp") {
            kv.set("grasp", "variable");
        }
        let scenario = ScenarioConfig::from_kv(kv)?;
        let modalities = parse_modalities(kv, "modalities")?.unwrap_or(d.modalities);
        let eval_modalities = parse_modalities(kv, "eval_modalities")?.unwrap_or_else(|| modalities.clone());
        let objective = match kv.take_str("objective") {
            None => d.objective,
            Some(s) => Objective::parse(&s).ok_or_else(|| Error::config("objective", format!("unknown objective `{s}` (flow, bc, ddpm)")))?,
        };
        let lr_schedule = match kv.take_str("lr_schedule").as_deref() {
            None => d.lr_schedule,
            Some("constant") => LrSchedule::Constant,
            Some("cosine") => LrSchedule::Cosine,
            Some(s) => return Err(Error::config("lr_schedule", format!("unknown schedule `{s}` (constant, cosine)"))),
        };
        let adam = AdamConfig {
            lr: kv.take_or("lr", d.adam.lr)?,
            clip_norm: kv.take_or("clip_norm", d.adam.clip_norm)?,
            ..d.adam
        };
        let dn = &d.net;
        let net = NetConfig {
            latent_dim: kv.take_or("latent_dim", dn.latent_dim)?,
            layers: kv.take_or("layers", dn.layers)?,
            heads: kv.take_or("heads", dn.heads)?,
            ff_dim: kv.take_or("ff_dim", dn.ff_dim)?,
            horizon: HORIZON,
            image_size: scenario.image_size,
            tactile_size: scenario.tactile_size,
            modalities: modalities.clone(),
            ..dn.clone()
        };
        let path = |kv: &mut KvConfig, key: &str| kv.take_str(key).map(PathBuf::from);
        let cfg = RunConfig {
            scenario,
            eval_modalities,
            objective,
            masked_training: kv.take_bool("masked_training", d.masked_training)?,
            p_mask: kv.take_or("p_mask", d.p_mask)?,
            inference_steps: kv.take_or("inference_steps", d.inference_steps)?,
            epochs: kv.take_or("epochs", d.epochs)?,
            seeds: kv.take_list("seeds")?.unwrap_or(d.seeds),
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            adam,
            lr_schedule,
            sigma_rot: kv.take_or("sigma_rot", d.sigma_rot)?,
            net,
            n_demos: kv.take_or("n_demos", d.n_demos)?,
            max_demo_attempts: kv.take_or("max_demo_attempts", d.max_demo_attempts)?,
            n_rollouts: kv.take_or("n_rollouts", d.n_rollouts)?,
            inference_latency_steps: kv.take_or("inference_latency_steps", d.inference_latency_steps)?,
            checkpoint_every: kv.take_or("checkpoint_every", d.checkpoint_every)?,
            parallel: kv.take_bool("parallel", d.parallel)?,
            data_dir: path(kv, "data_dir"),
            checkpoints: kv
                .take_list::<String>("checkpoints")?
                .unwrap_or_default()
                .into_iter()
                .map(PathBuf::from)
                .collect(),
            resume: path(kv, "resume"),
            episode: path(kv, "episode"),
            save_episodes: kv.take_bool("save_episodes", d.save_episodes)?,
            label: kv.take_str("label").unwrap_or_default(),
            modalities,
        };
        std::mem::take(kv).finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KvConfig::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));
        if self.inference_steps == 0 {
            return bad("inference_steps", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p_mask) {
            return bad("p_mask", "must lie in [0, 1]");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.sigma_rot > 0.0) {
            return bad("sigma_rot", "must be positive");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed");
        }
        if self.masked_training && !self.modalities.contains(&Modality::Tactile) {
            return bad("masked_training", "masking drops tactile, which is not among the modalities");
        }
        if self.eval_modalities.iter().any(|m| !self.modalities.contains(m)) {
            return bad("eval_modalities", "must be a subset of modalities");
        }
        self.net
            .validate()
            .map_err(|e| Error::config("latent_dim", e.to_string()))
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    /// Probability of dropping tactile per training example.
    pub fn effective_p_mask(&self) -> f64 {
        if self.masked_training {
            self.p_mask
        } else {
            0.0
        }
    }
}

/// Mixes a base seed with stream and index tags (splitmix64 finalizer), so
/// that every episode, epoch and rollout draws from its own generator.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Seed streams.
pub(crate) mod stream {
    pub const DEMO: u64 = 1;
    pub const INIT: u64 = 2;
    pub const EPOCH: u64 = 3;
    pub const SCENARIO: u64 = 4;
    pub const POLICY: u64 = 5;
    pub const ATTN: u64 = 6;
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.vtf";
pub const DEMO_DIR: &str = "demos";

#[cfg(test)]
mod tests;
