use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::find_checkpoints;
use super::rollout::LoadedPolicy;
use super::{derive_seed, stream, RunConfig};
use crate::datastore::{read_episode, Episode};
use crate::error::{Error, Result};
use crate::policynet::{AttentionGroups, Modality};

/// Action index whose attention is reported.
pub const QUERY_ACTION: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttnRow {
    pub time_s: f64,
    pub weights: AttentionGroups,
}

/// Replays the observations of `episode`; for every frame, samples an action
/// sequence and reports the last layer's attention of action [`QUERY_ACTION`]
/// at the final refinement iteration, grouped by input category.
pub fn attention_series(policy: &LoadedPolicy, episode: &Episode, seed: u64) -> Result<Vec<AttnRow>> {
    let layer = policy.net.cfg.layers - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::ATTN, 0));
    episode
        .frames
        .iter()
        .map(|f| {
            let (_, tokens) = policy.act_with_tokens(&f.obs, &mut rng)?;
            let w = policy.net.attention_weights(&policy.params, &tokens, QUERY_ACTION, layer)?;
            Ok(AttnRow {
                time_s: f.time,
                weights: AttentionGroups::from_weights(&w, &tokens.kinds()),
            })
        })
        .collect()
}

/// CSV with `time_s`, `w_actions` and one column per modality the policy
/// reads, in the order proprio, tactile, vision.
pub fn attn_csv(rows: &[AttnRow], modalities: &[Modality]) -> String {
    let cols: Vec<Modality> = [Modality::Proprio, Modality::Tactile, Modality::Vision]
        .into_iter()
        .filter(|m| modalities.contains(m))
        .collect();
    let mut s = String::from("time_s,w_actions");
    for m in &cols {
        let _ = write!(s, ",w_{}", m.name());
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:.2},{:.6}", r.time_s, r.weights.actions);
        for m in &cols {
            let w = match m {
                Modality::Proprio => r.weights.proprio,
                Modality::Tactile => r.weights.tactile,
                Modality::Vision => r.weights.vision,
            };
            let _ = write!(s, ",{w:.6}");
        }
        s.push('\n');
    }
    s
}

/// Writes `out/attn.csv` for `cfg.episode` under the first checkpoint.
pub fn cmd_attn(cfg: &RunConfig, out: &Path) -> Result<Vec<AttnRow>> {
    let episode_path = cfg
        .episode
        .as_ref()
        .ok_or_else(|| Error::config("episode", "attn needs an episode file"))?;
    let ck_path = find_checkpoints(cfg, out)?.into_iter().next().expect("nonempty");
    let policy = LoadedPolicy::load(&ck_path, cfg)?;
    for m in Modality::ALL {
        if !policy.modalities.contains(&m) {
            warn!("checkpoint does not read {}; omitting its column", m.name());
        }
    }
    let episode = read_episode(episode_path)?;
    let rows = attention_series(&policy, &episode, cfg.scenario.seed)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("attn.csv"), attn_csv(&rows, &policy.modalities))?;
    Ok(rows)
}
