use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, seed_dir, stream, LrSchedule, RunConfig, CHECKPOINT_FILE, DEMO_DIR};
use crate::datastore::{compute_normalization, epoch_order, load_dataset, make_training_examples, Normalization};
use crate::error::{Error, Result};
use crate::flowmatch::CosineSchedule;
use crate::policynet::checkpoint::Checkpoint;
use crate::policynet::train::{prepare, train_step, Adam, PrepareConfig, TrainExample};
use crate::policynet::PolicyNet;

/// One line of `train_log.ndjson`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub seed: u64,
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub lr: f64,
    /// Fraction of tactile-bearing examples whose tactile input was dropped.
    pub tactile_drop_fraction: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochLog>,
}

impl TrainSummary {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

fn lr_at(cfg: &RunConfig, epoch: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.adam.lr,
        LrSchedule::Cosine => {
            let frac = epoch as f64 / cfg.epochs.max(1) as f64;
            cfg.adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

fn run_info(cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "modalities": cfg.modalities,
        "masked_training": cfg.masked_training,
        "p_mask": cfg.effective_p_mask(),
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr_schedule": cfg.lr_schedule,
        "sigma_rot": cfg.sigma_rot,
        "label": cfg.label,
    })
}

/// Trains one seed on prepared examples, writing the log and checkpoints to
/// `dir`. Epoch `e` draws its shuffle, noise and masks from a generator
/// seeded by `(seed, e)`, so a run resumed from a checkpoint continues
/// exactly like an uninterrupted one.
pub fn train_seed(
    cfg: &RunConfig,
    examples: &[TrainExample<f32>],
    norm: &Normalization,
    seed: u64,
    dir: &Path,
    resume: Option<&Checkpoint>,
) -> Result<TrainSummary> {
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    fs::create_dir_all(dir)?;
    let net = PolicyNet::new(cfg.net.clone())?;
    let (mut params, mut adam, start) = match resume {
        Some(ck) => {
            if ck.header.net != cfg.net || ck.header.objective != cfg.objective {
                return Err(Error::config("resume", "checkpoint was trained with a different network or objective"));
            }
            let adam = ck
                .adam
                .clone()
                .ok_or_else(|| Error::config("resume", "checkpoint has no optimizer state"))?;
            (ck.params.clone(), adam, ck.header.epoch)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::INIT, 0));
            let params: Vec<f32> = net.init_params(&mut rng);
            let n = params.len();
            (params, Adam::new(cfg.adam, n), 0)
        }
    };
    let prep = PrepareConfig {
        objective: cfg.objective,
        sigma_rot: cfg.sigma_rot,
        p_mask: cfg.effective_p_mask(),
    };
    let schedule = CosineSchedule::default();
    let exec = cfg.exec();
    let log_path = dir.join("train_log.ndjson");
    let mut log = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)?;
    let save = |params: &[f32], adam: &Adam<f32>, epoch: usize, path: &Path| -> Result<()> {
        let mut ck = Checkpoint::new(&net, cfg.objective, *norm, seed, epoch, params.to_vec(), Some(adam.clone()));
        ck.header.run = run_info(cfg);
        ck.save(path)
    };

    let mut epochs = Vec::new();
    for epoch in start..cfg.epochs {
        let t0 = Instant::now();
        let lr = lr_at(cfg, epoch);
        adam.cfg.lr = lr;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::EPOCH, epoch as u64));
        let order = epoch_order(examples.len(), derive_seed(seed, stream::EPOCH, epoch as u64), epoch);
        let (mut loss_sum, mut batches, mut dropped, mut with_tactile) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (ex, drop) = prepare(&examples[i], &prep, &schedule, &mut rng)?;
                with_tactile += examples[i].input.tactile.is_some() as usize;
                dropped += drop as usize;
                batch.push(ex);
            }
            let loss = train_step(&net, &mut params, &mut adam, &batch, exec).map_err(|e| match e {
                Error::Numeric { layer, msg } => Error::Numeric {
                    layer,
                    msg: format!("training diverged in epoch {epoch}: {msg}"),
                },
                other => other,
            })?;
            loss_sum += loss;
            batches += 1;
        }
        let entry = EpochLog {
            seed,
            epoch,
            loss: loss_sum / batches as f64,
            lr,
            tactile_drop_fraction: if with_tactile > 0 { dropped as f64 / with_tactile as f64 } else { 0.0 },
            wall_s: t0.elapsed().as_secs_f64(),
        };
        serde_json::to_writer(&mut log, &entry)?;
        log.write_all(b"\n")?;
        if epoch % 10 == 0 || epoch + 1 == cfg.epochs {
            info!("seed {seed} epoch {epoch}: loss {:.5}", entry.loss);
        }
        epochs.push(entry);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            save(&params, &adam, epoch + 1, &dir.join(format!("checkpoint_epoch_{}.vtf", epoch + 1)))?;
        }
    }
    let checkpoint = dir.join(CHECKPOINT_FILE);
    save(&params, &adam, cfg.epochs.max(start), &checkpoint)?;
    Ok(TrainSummary { seed, checkpoint, epochs })
}

/// Trains every configured seed on the dataset in `data_dir` (default
/// `out/demos`); seed `s` writes to `out/seed_s`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<TrainSummary>> {
    let data_dir = cfg.data_dir.clone().unwrap_or_else(|| out.join(DEMO_DIR));
    let episodes = load_dataset(&data_dir)?;
    let norm = compute_normalization(&episodes, cfg.net.horizon)?;
    let examples = make_training_examples(&episodes, &norm, cfg.net.horizon, &cfg.modalities)?;
    info!("{} episodes, {} training examples", episodes.len(), examples.len());
    let resume = cfg.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut out_list = Vec::new();
    for &seed in &cfg.seeds {
        let r = resume.as_ref().filter(|ck| ck.header.seed == seed);
        out_list.push(train_seed(cfg, &examples, &norm, seed, &seed_dir(out, seed), r)?);
    }
    Ok(out_list)
}
