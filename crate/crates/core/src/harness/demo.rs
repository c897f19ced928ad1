use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{derive_seed, stream, RunConfig, DEMO_DIR};
use crate::datastore::{record_dataset, Episode, EpisodeRecorder};
use crate::error::{Error, Result};
use crate::simenv::{scripted_expert, Outcome, ScenarioConfig, Simulator};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoSummary {
    pub attempts: usize,
    pub successes: usize,
    pub discarded: Vec<Outcome>,
}

/// Runs the scripted expert for one episode, executing the first action of
/// every freshly planned sequence.
pub fn run_expert_episode(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
    let (mut sim, obs) = Simulator::reset(cfg, rng)?;
    let mut rec = EpisodeRecorder::new(&sim, obs);
    loop {
        let plan = scripted_expert(sim.state(), cfg, rng);
        let first = plan.first().ok_or_else(|| Error::Sim("expert returned no actions".into()))?;
        let (obs, outcome) = sim.step(first)?;
        rec.push(&sim, obs);
        if let Some(o) = outcome {
            return Ok(rec.finish(o));
        }
    }
}

/// Collects `n_demos` successful expert episodes; attempt `i` draws from a
/// generator seeded by `(seed, i)`. Aborts once the success rate can no longer
/// reach one half over `max_demo_attempts` attempts.
pub fn generate_demos(cfg: &RunConfig, seed: u64) -> Result<(Vec<Episode>, DemoSummary)> {
    let mut episodes = Vec::with_capacity(cfg.n_demos);
    let mut discarded = Vec::new();
    let max_failures = cfg.max_demo_attempts / 2;
    let mut attempt = 0usize;
    while episodes.len() < cfg.n_demos {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::DEMO, attempt as u64));
        let ep = run_expert_episode(&cfg.scenario, &mut rng)?;
        attempt += 1;
        if ep.outcome == Outcome::Success {
            episodes.push(ep);
        } else {
            discarded.push(ep.outcome);
            if discarded.len() > max_failures || attempt >= cfg.max_demo_attempts {
                return Err(Error::Sim(format!(
                    "expert succeeded in only {} of {attempt} attempts; check the scenario thresholds",
                    episodes.len()
                )));
            }
        }
    }
    info!(
        "collected {} demonstrations in {attempt} attempts ({} failures discarded)",
        episodes.len(),
        discarded.len()
    );
    let summary = DemoSummary {
        attempts: attempt,
        successes: episodes.len(),
        discarded,
    };
    Ok((episodes, summary))
}

/// Writes the demonstrations to `out/demos` with their manifest.
pub fn cmd_demo_gen(cfg: &RunConfig, out: &Path) -> Result<DemoSummary> {
    let (episodes, summary) = generate_demos(cfg, cfg.scenario.seed)?;
    let dir = out.join(DEMO_DIR);
    record_dataset(&dir, &episodes)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}
