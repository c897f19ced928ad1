use std::cell::RefCell;
use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{derive_seed, stream, RunConfig};
use crate::datastore::{to_net_input, write_episode, Episode, EpisodeRecorder, Normalization};
use crate::error::{Error, Result};
use crate::flowmatch::{ddim_sample, sample_actions, ActionModel, ActionSequence, CosineSchedule, SamplerConfig, VelocitySequence};
use crate::policynet::checkpoint::Checkpoint;
use crate::policynet::train::head_to_pose;
use crate::policynet::{Modality, Objective, Policy, PolicyNet, Token, TokenSet, ACTION_FEATURES};
use crate::simenv::{Observation, Outcome, ScenarioConfig, Simulator};

/// A trained network ready for inference.
pub struct LoadedPolicy {
    pub net: PolicyNet,
    pub params: Vec<f32>,
    pub objective: Objective,
    pub norm: Normalization,
    /// Modalities fed to the network.
    pub modalities: Vec<Modality>,
    pub sampler: SamplerConfig,
    schedule: CosineSchedule,
}

/// Records the last query a sampler made, for attention analysis.
struct Recording<'a> {
    inner: Policy<'a, f32>,
    last: RefCell<Option<(ActionSequence, f64)>>,
}

impl ActionModel for Recording<'_> {
    type Context = [Token<f32>];

    fn predict(&self, ctx: &[Token<f32>], actions: &ActionSequence, time: f64) -> Result<VelocitySequence> {
        *self.last.borrow_mut() = Some((actions.clone(), time));
        self.inner.predict(ctx, actions, time)
    }
}

impl LoadedPolicy {
    pub fn from_checkpoint(ck: &Checkpoint, cfg: &RunConfig) -> Result<Self> {
        let net = ck.net()?;
        let modalities: Vec<Modality> = cfg
            .eval_modalities
            .iter()
            .copied()
            .filter(|&m| net.cfg.has(m))
            .collect();
        if modalities.is_empty() {
            return Err(Error::config("eval_modalities", "none of them is available in the checkpoint"));
        }
        Ok(LoadedPolicy {
            params: ck.params.clone(),
            objective: ck.header.objective,
            norm: ck.header.normalization,
            modalities,
            sampler: SamplerConfig {
                horizon: net.cfg.horizon,
                steps: cfg.inference_steps,
                sigma_rot: cfg.sigma_rot,
            },
            schedule: CosineSchedule::default(),
            net,
        })
    }

    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, cfg)
    }

    pub fn observation_tokens(&self, obs: &Observation) -> Result<Vec<Token<f32>>> {
        let input = to_net_input(obs, &self.norm, &self.modalities);
        self.net.encode_observation(&self.params, &input, false)
    }

    /// Token set the direct-regression head reads: zero action features at
    /// time zero.
    fn bc_tokens(&self, obs: Vec<Token<f32>>) -> Result<TokenSet<f32>> {
        let feats = vec![0.0f32; self.net.cfg.horizon * ACTION_FEATURES];
        Ok(TokenSet {
            observations: obs,
            time: self.net.time_token(&self.params, 0.0),
            actions: self.net.action_tokens(&self.params, &feats)?,
        })
    }

    /// Generates an action sequence (denormalized, relative to the current
    /// end-effector frame). Also returns the token set of the final
    /// refinement iteration.
    pub fn act_with_tokens(&self, obs: &Observation, rng: &mut impl Rng) -> Result<(ActionSequence, TokenSet<f32>)> {
        let tokens = self.observation_tokens(obs)?;
        let model = Recording {
            inner: Policy {
                net: &self.net,
                params: &self.params,
            },
            last: RefCell::new(None),
        };
        let norm = &self.norm.actions;
        let seq = match self.objective {
            Objective::Flow => sample_actions(&model, &tokens, &self.sampler, norm, rng)?,
            Objective::Ddpm => ddim_sample(&model, &tokens, &self.schedule, &self.sampler, norm, rng)?,
            Objective::Bc => {
                let set = self.bc_tokens(tokens)?;
                let out = self.net.forward_tokens(&self.params, &set)?;
                let poses = out
                    .chunks_exact(6)
                    .map(|r| head_to_pose(&r.iter().map(|&v| v as f64).collect::<Vec<_>>()))
                    .collect();
                return Ok((norm.denormalize(&ActionSequence::new(poses)), set));
            }
        };
        let (actions, time) = model.last.into_inner().expect("sampler ran at least once");
        let set = self.net.token_set(&self.params, tokens, &actions, time)?;
        Ok((seq, set))
    }

    pub fn act(&self, obs: &Observation, rng: &mut impl Rng) -> Result<ActionSequence> {
        let tokens = self.observation_tokens(obs)?;
        let model = Policy {
            net: &self.net,
            params: &self.params,
        };
        let norm = &self.norm.actions;
        match self.objective {
            Objective::Flow => sample_actions(&model, &tokens, &self.sampler, norm, rng),
            Objective::Ddpm => ddim_sample(&model, &tokens, &self.schedule, &self.sampler, norm, rng),
            Objective::Bc => Ok(self.act_with_tokens(obs, rng)?.0),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RolloutResult {
    #[serde(skip)]
    pub episode: Episode,
    pub outcome: Outcome,
    pub episode_len: usize,
    pub max_force: f64,
    /// Wall-clock time of each action-generation call.
    pub infer_ms: Vec<f64>,
    /// Index into its sequence of every applied action.
    pub applied_index: Vec<usize>,
    /// Step at which the sequence used at each step was requested.
    pub source_step: Vec<usize>,
    /// Tip along-striker coordinate and height per frame, meters.
    pub tip_tangent: Vec<f64>,
    pub tip_height: Vec<f64>,
}

impl RolloutResult {
    pub fn mean_infer_ms(&self) -> f64 {
        if self.infer_ms.is_empty() {
            0.0
        } else {
            self.infer_ms.iter().sum::<f64>() / self.infer_ms.len() as f64
        }
    }
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric { layer, msg } => Error::Numeric {
            layer,
            msg: format!("step {step}: {msg}"),
        },
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("step {step}: {m}")),
        Error::Sim(m) => Error::Sim(format!("step {step}: {m}")),
        other => other,
    }
}

/// Runs one closed-loop episode under the asynchronous inference contract.
///
/// An inference call is started at every step `k` from that step's
/// observation and completes `latency` steps later. Each step applies one
/// action from the most recently completed sequence: if it was requested at
/// step `j`, the planned increment from entry `k - j - 1` to entry `k - j`
/// (clamped to the horizon), relative to the current end-effector frame.
/// The first call completes immediately so the robot can start moving.
pub fn rollout(
    policy: &LoadedPolicy,
    scenario: &ScenarioConfig,
    latency: usize,
    scenario_seed: u64,
    policy_seed: u64,
) -> Result<RolloutResult> {
    let mut scen_rng = ChaCha8Rng::seed_from_u64(scenario_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
    let (mut sim, mut obs) = Simulator::reset(scenario, &mut scen_rng)?;
    let mut rec = EpisodeRecorder::new(&sim, obs.clone());
    let tip_of = |sim: &Simulator| {
        let s = sim.state();
        let tip = s.tip();
        (s.striker.tangent_coord(&tip), s.striker.height(&tip))
    };
    let (t0, h0) = tip_of(&sim);
    let (mut tip_tangent, mut tip_height) = (vec![t0], vec![h0]);
    let mut infer_ms = Vec::new();
    let mut applied_index = Vec::new();
    let mut source_step = Vec::new();
    // (ready step, request step, sequence)
    let mut pending: VecDeque<(usize, usize, ActionSequence)> = VecDeque::new();
    let mut current: Option<(usize, ActionSequence)> = None;
    let horizon = policy.net.cfg.horizon;

    let outcome = 'episode: {
        for k in 0.. {
            let t = Instant::now();
            let seq = policy.act(&obs, &mut rng).map_err(|e| at_step(k, e))?;
            infer_ms.push(t.elapsed().as_secs_f64() * 1e3);
            pending.push_back((k + latency, k, seq));
            if current.is_none() {
                let (_, j, s) = pending.pop_front().expect("just pushed");
                current = Some((j, s));
            }
            while pending.front().is_some_and(|f| f.0 <= k) {
                let (_, j, s) = pending.pop_front().expect("nonempty");
                current = Some((j, s));
            }
            let (j, seq) = current.as_ref().expect("set above");
            let idx = (k - j).min(horizon - 1);
            let target = match idx {
                0 => seq.poses[0],
                i => seq.poses[i - 1].inverse().compose(&seq.poses[i]),
            };
            applied_index.push(idx);
            source_step.push(*j);
            let (next_obs, outcome) = sim.step(&target).map_err(|e| at_step(k, e))?;
            rec.push(&sim, next_obs.clone());
            let (t, h) = tip_of(&sim);
            tip_tangent.push(t);
            tip_height.push(h);
            obs = next_obs;
            if let Some(o) = outcome {
                break 'episode o;
            }
        }
        unreachable!("the simulator always terminates")
    };
    let episode = rec.finish(outcome);
    Ok(RolloutResult {
        outcome,
        episode_len: episode.len() - 1,
        max_force: episode.max_force(),
        episode,
        infer_ms,
        applied_index,
        source_step,
        tip_tangent,
        tip_height,
    })
}

/// Seeds of rollout `r`: the scenario draw depends only on `(base, r)`, so
/// every checkpoint faces the same grasps.
pub fn rollout_seeds(base: u64, ckpt_seed: u64, r: usize) -> (u64, u64) {
    (
        derive_seed(base, stream::SCENARIO, r as u64),
        derive_seed(derive_seed(base, stream::POLICY, ckpt_seed), stream::POLICY, r as u64),
    )
}

/// One rollout of `cfg.checkpoints[0]`, saved as `out/rollout.vte` plus a JSON
/// summary.
pub fn cmd_rollout(cfg: &RunConfig, out: &Path) -> Result<RolloutResult> {
    let path = super::eval::find_checkpoints(cfg, out)?
        .into_iter()
        .next()
        .expect("find_checkpoints returns at least one");
    let ck = Checkpoint::load(&path)?;
    let policy = LoadedPolicy::from_checkpoint(&ck, cfg)?;
    let (s, p) = rollout_seeds(cfg.scenario.seed, ck.header.seed, 0);
    let res = rollout(&policy, &cfg.scenario, cfg.inference_latency_steps, s, p)?;
    std::fs::create_dir_all(out)?;
    write_episode(&out.join("rollout.vte"), &res.episode)?;
    std::fs::write(out.join("rollout.json"), serde_json::to_vec_pretty(&res)?)?;
    Ok(res)
}
