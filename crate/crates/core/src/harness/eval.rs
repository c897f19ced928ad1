use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use super::rollout::{rollout, rollout_seeds, LoadedPolicy, RolloutResult};
use super::{RunConfig, CHECKPOINT_FILE};
use crate::datastore::write_episode;
use crate::error::{Error, Result};
use crate::par;
use crate::policynet::checkpoint::Checkpoint;
use crate::simenv::Outcome;

/// One row of `report.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RolloutRecord {
    pub seed: u64,
    pub rollout: usize,
    pub outcome: Outcome,
    pub episode_len: usize,
    pub max_force: f64,
    pub mean_infer_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rollouts: usize,
    pub success_rate: f64,
    /// Fraction of rollouts per outcome label, all five present.
    pub fractions: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub label: String,
    pub rows: Vec<RolloutRecord>,
    pub seeds: Vec<SeedSummary>,
    pub mean_success: f64,
    /// Population standard deviation of the per-seed success rates.
    pub std_success: f64,
    pub histogram: BTreeMap<String, usize>,
    pub mean_infer_ms: f64,
}

impl EvalReport {
    pub fn from_rows(label: &str, rows: Vec<RolloutRecord>) -> Self {
        let mut by_seed: BTreeMap<u64, Vec<&RolloutRecord>> = BTreeMap::new();
        for r in &rows {
            by_seed.entry(r.seed).or_default().push(r);
        }
        let seeds: Vec<SeedSummary> = by_seed
            .iter()
            .map(|(&seed, rs)| {
                let n = rs.len() as f64;
                let fractions: BTreeMap<String, f64> = Outcome::ALL
                    .iter()
                    .map(|o| (o.name().to_string(), rs.iter().filter(|r| r.outcome == *o).count() as f64 / n))
                    .collect();
                SeedSummary {
                    seed,
                    rollouts: rs.len(),
                    success_rate: fractions["success"],
                    fractions,
                }
            })
            .collect();
        let k = seeds.len().max(1) as f64;
        let mean_success = seeds.iter().map(|s| s.success_rate).sum::<f64>() / k;
        let std_success = (seeds.iter().map(|s| (s.success_rate - mean_success).powi(2)).sum::<f64>() / k).sqrt();
        let histogram = Outcome::ALL
            .iter()
            .map(|o| (o.name().to_string(), rows.iter().filter(|r| r.outcome == *o).count()))
            .collect();
        let mean_infer_ms = if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.mean_infer_ms).sum::<f64>() / rows.len() as f64
        };
        EvalReport {
            label: label.to_string(),
            rows,
            seeds,
            mean_success,
            std_success,
            histogram,
            mean_infer_ms,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,rollout,outcome,episode_len,max_force,mean_infer_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.3}",
                r.seed, r.rollout, r.outcome, r.episode_len, r.max_force, r.mean_infer_ms
            );
        }
        s
    }

    /// Per-seed lines followed by one aggregate line.
    pub fn to_ndjson(&self) -> Result<String> {
        let mut s = String::new();
        for seed in &self.seeds {
            let mut v = serde_json::to_value(seed)?;
            v["kind"] = "seed".into();
            v["label"] = self.label.clone().into();
            s.push_str(&serde_json::to_string(&v)?);
            s.push('\n');
        }
        let agg = serde_json::json!({
            "kind": "aggregate",
            "label": self.label,
            "seeds": self.seeds.len(),
            "rollouts": self.rows.len(),
            "mean_success": self.mean_success,
            "std_success": self.std_success,
            "histogram": self.histogram,
            "mean_infer_ms": self.mean_infer_ms,
        });
        s.push_str(&serde_json::to_string(&agg)?);
        s.push('\n');
        Ok(s)
    }
}

/// Checkpoints named in the config, or else every `seed_*/checkpoint.vtf`
/// under `out`, in seed order.
pub fn find_checkpoints(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if !cfg.checkpoints.is_empty() {
        return Ok(cfg.checkpoints.clone());
    }
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    if let Ok(dir) = fs::read_dir(out) {
        for entry in dir.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse::<u64>().ok()) {
                let p = entry.path().join(CHECKPOINT_FILE);
                if p.is_file() {
                    found.push((seed, p));
                }
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::config("checkpoints", format!("none given and none found under {}", out.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Rolls out every checkpoint `n_rollouts` times. Rollout `r` of every
/// checkpoint faces the same scenario draw.
pub fn evaluate(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<(EvalReport, Vec<(u64, RolloutResult)>)> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for path in checkpoints {
        let ck = Checkpoint::load(path)?;
        let seed = ck.header.seed;
        let policy = LoadedPolicy::from_checkpoint(&ck, cfg)?;
        let runs = par::map_range(cfg.exec(), cfg.n_rollouts, |r| {
            let (s, p) = rollout_seeds(cfg.scenario.seed, seed, r);
            rollout(&policy, &cfg.scenario, cfg.inference_latency_steps, s, p)
        });
        for (r, res) in runs.into_iter().enumerate() {
            let res = res?;
            rows.push(RolloutRecord {
                seed,
                rollout: r,
                outcome: res.outcome,
                episode_len: res.episode_len,
                max_force: res.max_force,
                mean_infer_ms: res.mean_infer_ms(),
            });
            results.push((seed, res));
        }
        let wins = rows.iter().filter(|r| r.seed == seed && r.outcome == Outcome::Success).count();
        info!("{}: seed {seed} succeeded in {wins}/{}", path.display(), cfg.n_rollouts);
    }
    Ok((EvalReport::from_rows(&cfg.label, rows), results))
}

/// Writes `report.csv`, `aggregate.ndjson` and `trajectories.ndjson` (tip
/// coordinates per step) to `out`; with `save_episodes` also every rollout
/// episode under `out/episodes`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let checkpoints = find_checkpoints(cfg, out)?;
    let (report, results) = evaluate(cfg, &checkpoints)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("aggregate.ndjson"), report.to_ndjson()?)?;
    let mut traj = String::new();
    for (row, (_, res)) in report.rows.iter().zip(&results) {
        let line = serde_json::json!({
            "seed": row.seed,
            "rollout": row.rollout,
            "outcome": row.outcome,
            "time_s": res.episode.frames.iter().map(|f| f.time).collect::<Vec<_>>(),
            "tip_tangent": res.tip_tangent,
            "tip_height": res.tip_height,
            "normal_force": res.episode.frames.iter().map(|f| f.contact.normal_force).collect::<Vec<_>>(),
        });
        traj.push_str(&serde_json::to_string(&line)?);
        traj.push('\n');
    }
    fs::write(out.join("trajectories.ndjson"), traj)?;
    if cfg.save_episodes {
        let dir = out.join("episodes");
        fs::create_dir_all(&dir)?;
        for (row, (_, res)) in report.rows.iter().zip(&results) {
            write_episode(&dir.join(format!("seed{}_rollout{:03}.vte", row.seed, row.rollout)), &res.episode)?;
        }
    }
    Ok(report)
}
