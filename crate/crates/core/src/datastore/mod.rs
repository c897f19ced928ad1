//! Demonstration episodes: recording, per-episode files with an ndjson
//! manifest, normalization statistics and training-example extraction.

mod format;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::{ActionSequence, Normalizer};
use crate::liegroup::{Pose, Twist};
use crate::policynet::train::TrainExample;
use crate::policynet::{Modality, NetInput};
use crate::simenv::{
    classify, Contact, ContactSummary, MatchState, Observation, Outcome, ScenarioConfig, Simulator, DT,
};

pub use format::{read_episode, write_episode, SCHEMA_VERSION};

/// Recording rate in Hz.
pub const RATE_HZ: f64 = 25.0;

/// One control step: what was observed at `time`, where the end effector was
/// and which relative motion it executed until the next frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub obs: Observation,
    /// Absolute end-effector pose.
    pub pose: Pose,
    /// Executed motion to the next frame, in this frame's end-effector frame;
    /// identity on the last frame.
    pub action: Pose,
    pub twist: Twist,
    pub time: f64,
    pub contact: Contact,
    pub match_state: MatchState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub scenario: ScenarioConfig,
    pub outcome: Outcome,
    pub grasp_offset: Pose,
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn max_force(&self) -> f64 {
        self.frames.iter().map(|f| f.contact.normal_force).fold(0.0, f64::max)
    }

    /// Checks the structural invariants every stored episode satisfies.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::format("frames", "an episode needs at least two frames"));
        }
        let f0 = &self.frames[0];
        let (img, tac) = (f0.obs.image.len(), f0.obs.tactile.len());
        for (k, f) in self.frames.iter().enumerate() {
            if f.obs.image.len() != img || f.obs.tactile.len() != tac {
                return Err(Error::format(format!("frames[{k}].obs"), "observation shape changes within the episode"));
            }
            if !f.pose.is_finite() || !f.action.is_finite() || !f.twist.is_finite() || !f.time.is_finite() {
                return Err(Error::format(format!("frames[{k}]"), "non-finite value"));
            }
            if k > 0 {
                let dt = f.time - self.frames[k - 1].time;
                if (dt - DT).abs() > 1e-9 {
                    return Err(Error::format(format!("frames[{k}].time"), format!("step of {dt} s, expected {DT}")));
                }
            }
        }
        Ok(())
    }
}

/// Collects frames while an episode runs.
#[derive(Clone, Debug)]
pub struct EpisodeRecorder {
    scenario: ScenarioConfig,
    grasp_offset: Pose,
    frames: Vec<Frame>,
}

impl EpisodeRecorder {
    /// Starts with the reset observation.
    pub fn new(sim: &Simulator, obs: Observation) -> Self {
        let mut rec = EpisodeRecorder {
            scenario: sim.config().clone(),
            grasp_offset: sim.state().grasp_offset,
            frames: Vec::new(),
        };
        rec.push(sim, obs);
        rec
    }

    /// Appends the state reached by the last step.
    pub fn push(&mut self, sim: &Simulator, obs: Observation) {
        let s = sim.state();
        if let Some(prev) = self.frames.last_mut() {
            prev.action = prev.pose.inverse().compose(&s.ee_pose);
        }
        self.frames.push(Frame {
            obs,
            pose: s.ee_pose,
            action: Pose::identity(),
            twist: s.ee_velocity,
            time: s.time,
            contact: s.contact,
            match_state: s.match_state,
        });
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn finish(self, outcome: Outcome) -> Episode {
        Episode {
            scenario: self.scenario,
            outcome,
            grasp_offset: self.grasp_offset,
            frames: self.frames,
        }
    }
}

/// Re-derives the outcome label from the recorded contact history.
pub fn classify_outcome(episode: &Episode) -> Result<Outcome> {
    let last = episode
        .frames
        .last()
        .ok_or_else(|| Error::invalid("empty episode"))?;
    let steps = episode.frames.len() - 1;
    if last.match_state == MatchState::Unlit && steps < episode.scenario.max_steps() {
        return Err(Error::invalid("episode has not terminated"));
    }
    let mut summary = ContactSummary::default();
    for f in &episode.frames[1..] {
        summary.update(&f.contact, 0.0);
    }
    Ok(classify(last.match_state, &summary))
}

/// Per-dimension statistics used to normalize action translations and the
/// proprioceptive twist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub actions: Normalizer,
    pub twist_mean: [f64; 6],
    pub twist_std: [f64; 6],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            actions: Normalizer::identity(),
            twist_mean: [0.0; 6],
            twist_std: [1.0; 6],
        }
    }
}

impl Normalization {
    pub fn normalize_twist(&self, t: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| (t[i] - self.twist_mean[i]) / self.twist_std[i])
    }

    pub fn denormalize_twist(&self, t: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| t[i] * self.twist_std[i] + self.twist_mean[i])
    }
}

fn mean_std<const D: usize>(rows: impl Iterator<Item = [f64; D]>) -> ([f64; D], [f64; D]) {
    let (mut sum, mut sum2, mut n) = ([0.0; D], [0.0; D], 0usize);
    let rows: Vec<[f64; D]> = rows.collect();
    for r in &rows {
        for i in 0..D {
            sum[i] += r[i];
        }
        n += 1;
    }
    let mean = sum.map(|s| s / n as f64);
    for r in &rows {
        for i in 0..D {
            sum2[i] += (r[i] - mean[i]).powi(2);
        }
    }
    let std = sum2.map(|s| (s / n as f64).sqrt().max(Normalizer::STD_FLOOR));
    (mean, std)
}

/// The `horizon` future poses of frame `k`, expressed in frame `k` and
/// padded by repeating the last recorded pose.
pub fn target_sequence(episode: &Episode, k: usize, horizon: usize) -> ActionSequence {
    let last = episode.frames.len() - 1;
    let inv = episode.frames[k].pose.inverse();
    ActionSequence::new(
        (1..=horizon)
            .map(|j| inv.compose(&episode.frames[(k + j).min(last)].pose))
            .collect(),
    )
}

/// Frames that start a training example: every frame that executed an action.
fn example_frames(episode: &Episode) -> std::ops::Range<usize> {
    0..episode.frames.len().saturating_sub(1)
}

/// Population mean and standard deviation of all target translations and of
/// all recorded twists.
pub fn compute_normalization(episodes: &[Episode], horizon: usize) -> Result<Normalization> {
    if episodes.iter().all(|e| e.frames.len() < 2) {
        return Err(Error::invalid("normalization needs at least one episode with two frames"));
    }
    let translations = episodes.iter().flat_map(|e| {
        example_frames(e).flat_map(move |k| {
            target_sequence(e, k, horizon)
                .poses
                .into_iter()
                .map(|p| [p.translation.x, p.translation.y, p.translation.z])
        })
    });
    let (mean, std) = mean_std(translations);
    let twists = episodes.iter().flat_map(|e| e.frames.iter().map(|f| f.twist.to_array()));
    let (twist_mean, twist_std) = mean_std(twists);
    Ok(Normalization {
        actions: Normalizer::new(mean, std),
        twist_mean,
        twist_std,
    })
}

/// Tactile counts are compressed with `ln(1 + c) / 2`.
pub fn tactile_feature(count: u16) -> f32 {
    (count as f32).ln_1p() * 0.5
}

/// Converts a raw observation into network inputs, keeping only `modalities`.
pub fn to_net_input(obs: &Observation, norm: &Normalization, modalities: &[Modality]) -> NetInput<f32> {
    let has = |m| modalities.contains(&m);
    NetInput {
        image: has(Modality::Vision).then(|| obs.image.clone()),
        tactile: has(Modality::Tactile).then(|| obs.tactile.iter().map(|&c| tactile_feature(c)).collect()),
        proprio: has(Modality::Proprio).then(|| norm.normalize_twist(&obs.proprio).iter().map(|&v| v as f32).collect()),
    }
}

/// One example per executed frame of every episode, in dataset order. Targets
/// are normalized.
pub fn make_training_examples(
    episodes: &[Episode],
    norm: &Normalization,
    horizon: usize,
    modalities: &[Modality],
) -> Result<Vec<TrainExample<f32>>> {
    if episodes.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    Ok(episodes
        .iter()
        .flat_map(|e| {
            example_frames(e).map(move |k| TrainExample {
                input: to_net_input(&e.frames[k].obs, norm, modalities),
                target: norm.actions.normalize(&target_sequence(e, k, horizon)),
            })
        })
        .collect())
}

/// Example visiting order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Manifest line describing one stored episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub outcome: Outcome,
    pub frames: usize,
    pub grasp_offset: Pose,
}

pub const MANIFEST: &str = "manifest.ndjson";

/// Writes every episode to `dir` as `episode_NNNN.vte` plus the manifest.
pub fn record_dataset(dir: &Path, episodes: &[Episode]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    let mut paths = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let file = format!("episode_{i:04}.vte");
        let path = dir.join(&file);
        write_episode(&path, ep)?;
        let entry = ManifestEntry {
            file,
            outcome: ep.outcome,
            frames: ep.len(),
            grasp_offset: ep.grasp_offset,
        };
        serde_json::to_writer(&mut manifest, &entry)?;
        manifest.push(b'\n');
        paths.push(path);
    }
    fs::File::create(dir.join(MANIFEST))?.write_all(&manifest)?;
    Ok(paths)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let f = fs::File::open(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(format!("{MANIFEST}:{}", i + 1), e.to_string()))?,
        );
    }
    Ok(out)
}

/// Loads every episode listed in the manifest of `dir`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Episode>> {
    let entries = read_manifest(dir)?;
    if entries.is_empty() {
        return Err(Error::invalid(format!("no episodes listed in {}", dir.join(MANIFEST).display())));
    }
    entries.iter().map(|e| read_episode(&dir.join(&e.file))).collect()
}
