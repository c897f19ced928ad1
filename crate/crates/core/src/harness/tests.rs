use std::path::Path;

use approx::assert_abs_diff_eq;
use tempfile::tempdir;

use super::*;
use crate::datastore::{compute_normalization, load_dataset, make_training_examples};
use crate::policynet::checkpoint::Checkpoint;
use crate::simenv::Outcome;

const TINY: &str = "
latent_dim = 16
layers = 1
heads = 2
ff_dim = 32
image_size = 16, 16
tactile_size = 8, 8
n_demos = 3
epochs = 2
seeds = 0
batch_size = 16
n_rollouts = 2
timeout_s = 1.0
parallel = false
";

/// The tiny config with the `key = value` lines of `extra` replacing or
/// adding to its own.
fn tiny(extra: &str) -> RunConfig {
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let base: Vec<&str> = TINY.lines().filter(|l| !overridden.contains(&key(l))).collect();
    RunConfig::from_kv(KvConfig::parse(&format!("{}\n{extra}", base.join("\n"))).unwrap()).unwrap()
}

fn config_error(text: &str) -> String {
    match RunConfig::from_kv(KvConfig::parse(text).unwrap()) {
        Err(Error::Config { key, .. }) => key,
        other => panic!("expected a config error, got {other:?}"),
    }
}

/// Demonstrations plus one trained seed under `out`.
fn trained(cfg: &RunConfig, out: &Path) -> Vec<TrainSummary> {
    cmd_demo_gen(cfg, out).unwrap();
    cmd_train(cfg, out).unwrap()
}

#[test]
fn empty_config_gives_defaults() {
    let cfg = RunConfig::from_kv(KvConfig::default()).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.epochs, 500);
    assert_eq!(cfg.seeds, vec![0, 1, 2]);
    assert_eq!(cfg.inference_latency_steps, 1);
    assert_eq!(cfg.effective_p_mask(), 0.0);
}

#[test]
fn config_overrides_reach_every_part() {
    let cfg = tiny("modalities = vision, proprio\nobjective = ddpm\nlr = 0.01\nk_n = 800\nlr_schedule = constant");
    assert_eq!(cfg.modalities, vec![Modality::Vision, Modality::Proprio]);
    assert_eq!(cfg.eval_modalities, cfg.modalities);
    assert_eq!(cfg.net.modalities, cfg.modalities);
    assert_eq!(cfg.net.image_size, [16, 16]);
    assert_eq!(cfg.objective, Objective::Ddpm);
    assert_eq!(cfg.adam.lr, 0.01);
    assert_eq!(cfg.scenario.k_n, 800.0);
    assert_eq!(cfg.lr_schedule, LrSchedule::Constant);
    assert_eq!(cfg.n_demos, 3);
}

#[test]
fn config_errors_name_the_key() {
    assert_eq!(config_error("epochz = 3"), "epochz");
    assert_eq!(config_error("objective = gan"), "objective");
    assert_eq!(config_error("modalities = sonar"), "modalities");
    assert_eq!(config_error("epochs = many"), "epochs");
    assert_eq!(config_error("p_mask = 1.5"), "p_mask");
    assert_eq!(config_error("lr = 0"), "lr");
    assert_eq!(config_error("modalities = vision\nmasked_training = true"), "masked_training");
    assert_eq!(config_error("modalities = vision\neval_modalities = tactile"), "eval_modalities");
    assert_eq!(config_error("latent_dim = 30\nheads = 4"), "latent_dim");
}

#[test]
fn derived_seeds_differ_across_streams_and_indices() {
    let mut seen = std::collections::HashSet::new();
    for base in 0..4 {
        for s in 1..=6 {
            for i in 0..50 {
                assert!(seen.insert(derive_seed(base, s, i)));
            }
        }
    }
    assert_eq!(derive_seed(7, 3, 9), derive_seed(7, 3, 9));
}

#[test]
fn demo_generation_is_seeded_and_diverse() {
    let cfg = tiny("");
    let (a, sa) = generate_demos(&cfg, 11).unwrap();
    let (b, _) = generate_demos(&cfg, 11).unwrap();
    let (c, _) = generate_demos(&cfg, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(sa.successes, 3);
    assert!(a.iter().all(|e| e.outcome == Outcome::Success));
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            assert_ne!(a[i].grasp_offset, a[j].grasp_offset);
        }
    }
}

#[test]
fn demo_generation_aborts_on_an_impossible_scenario() {
    let cfg = tiny("force_min = 7.9\nforce_max = 8\nmax_demo_attempts = 6");
    assert!(matches!(generate_demos(&cfg, 0), Err(Error::Sim(_))));
}

#[test]
fn seeds_train_independently() {
    let dir = tempdir().unwrap();
    let cfg = tiny("seeds = 0, 1, 2");
    let runs = trained(&cfg, dir.path());
    assert_eq!(runs.len(), 3);
    let losses: Vec<f64> = runs.iter().map(|r| r.final_loss().unwrap()).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[0] != losses[1] && losses[1] != losses[2] && losses[0] != losses[2]);
    for r in &runs {
        assert!(r.checkpoint.is_file());
        let log = std::fs::read_to_string(seed_dir(dir.path(), r.seed).join("train_log.ndjson")).unwrap();
        assert_eq!(log.lines().count(), 2);
        let ck = Checkpoint::load(&r.checkpoint).unwrap();
        assert_eq!(ck.header.seed, r.seed);
        assert_eq!(ck.header.epoch, 2);
    }
}

#[test]
fn masked_training_drops_tactile_at_the_configured_rate() {
    let dir = tempdir().unwrap();
    let cfg = tiny("masked_training = true\nepochs = 4");
    let runs = trained(&cfg, dir.path());
    let fracs: Vec<f64> = runs[0].epochs.iter().map(|e| e.tactile_drop_fraction).collect();
    let mean = fracs.iter().sum::<f64>() / fracs.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "{fracs:?}");

    let plain = trained(&tiny(""), dir.path());
    assert!(plain[0].epochs.iter().all(|e| e.tactile_drop_fraction == 0.0));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempdir().unwrap();
    let cfg = tiny("epochs = 4\ncheckpoint_every = 2");
    let full = trained(&cfg, dir.path());
    let full_ck = Checkpoint::load(&full[0].checkpoint).unwrap();

    let episodes = load_dataset(&dir.path().join(DEMO_DIR)).unwrap();
    let norm = compute_normalization(&episodes, cfg.net.horizon).unwrap();
    let examples = make_training_examples(&episodes, &norm, cfg.net.horizon, &cfg.modalities).unwrap();
    let mid = Checkpoint::load(&seed_dir(dir.path(), 0).join("checkpoint_epoch_2.vtf")).unwrap();
    assert_eq!(mid.header.epoch, 2);
    let out = dir.path().join("resumed");
    let resumed = train_seed(&cfg, &examples, &norm, 0, &out, Some(&mid)).unwrap();
    assert_eq!(resumed.epochs.len(), 2);
    let resumed_ck = Checkpoint::load(&resumed.checkpoint).unwrap();
    for (a, b) in full_ck.params.iter().zip(&resumed_ck.params) {
        assert!((a - b).abs() <= 1e-6);
    }
    assert_abs_diff_eq!(resumed.final_loss().unwrap(), full[0].final_loss().unwrap(), epsilon = 1e-9);
}

#[test]
fn resume_refuses_a_mismatched_network() {
    let dir = tempdir().unwrap();
    let cfg = tiny("checkpoint_every = 1");
    let runs = trained(&cfg, dir.path());
    let ck = Checkpoint::load(&runs[0].checkpoint).unwrap();
    let other = tiny("ff_dim = 16");
    let episodes = load_dataset(&dir.path().join(DEMO_DIR)).unwrap();
    let norm = compute_normalization(&episodes, 16).unwrap();
    let examples = make_training_examples(&episodes, &norm, 16, &other.modalities).unwrap();
    let r = train_seed(&other, &examples, &norm, 0, &dir.path().join("x"), Some(&ck));
    assert!(matches!(r, Err(Error::Config { .. })));
}

fn rollout_with_latency(dir: &Path, latency: usize) -> RolloutResult {
    let cfg = tiny("");
    let ck = seed_dir(dir, 0).join(CHECKPOINT_FILE);
    let policy = LoadedPolicy::load(&ck, &cfg).unwrap();
    rollout(&policy, &cfg.scenario, latency, 5, 6).unwrap()
}

#[test]
fn latency_selects_which_action_is_applied() {
    let dir = tempdir().unwrap();
    trained(&tiny(""), dir.path());

    let r0 = rollout_with_latency(dir.path(), 0);
    assert!(r0.applied_index.iter().all(|&i| i == 0));
    assert!(r0.source_step.iter().enumerate().all(|(k, &j)| j == k));

    let r2 = rollout_with_latency(dir.path(), 2);
    assert_eq!(r2.applied_index.len(), r2.episode_len);
    assert_eq!(r2.infer_ms.len(), r2.episode_len);
    for (k, (&i, &j)) in r2.applied_index.iter().zip(&r2.source_step).enumerate() {
        let (want_j, want_i) = if k < 2 { (0, k) } else { (k - 2, 2) };
        assert_eq!((j, i), (want_j, want_i), "step {k}");
    }

    let again = rollout_with_latency(dir.path(), 2);
    assert_eq!(again.episode, r2.episode);
    assert_eq!(again.outcome, r2.outcome);
}

#[test]
fn rollout_seeds_share_scenarios_across_checkpoints() {
    let (s0, p0) = rollout_seeds(9, 0, 3);
    let (s1, p1) = rollout_seeds(9, 1, 3);
    assert_eq!(s0, s1);
    assert_ne!(p0, p1);
    assert_ne!(rollout_seeds(9, 0, 4).0, s0);
}

fn record(seed: u64, rollout: usize, outcome: Outcome) -> RolloutRecord {
    RolloutRecord {
        seed,
        rollout,
        outcome,
        episode_len: 10 + rollout,
        max_force: 1.5,
        mean_infer_ms: 2.0,
    }
}

#[test]
fn report_aggregates_by_seed() {
    use Outcome::*;
    let rows = vec![
        record(0, 0, Success),
        record(0, 1, Success),
        record(0, 2, TooMuchForce),
        record(0, 3, NoContact),
        record(1, 0, Success),
        record(1, 1, WrongLocation),
        record(1, 2, InsufficientForce),
        record(1, 3, InsufficientForce),
    ];
    let r = EvalReport::from_rows("x", rows);
    assert_eq!(r.seeds.len(), 2);
    assert_abs_diff_eq!(r.seeds[0].success_rate, 0.5);
    assert_abs_diff_eq!(r.seeds[1].success_rate, 0.25);
    assert_abs_diff_eq!(r.mean_success, 0.375);
    assert_abs_diff_eq!(r.std_success, 0.125);
    for s in &r.seeds {
        assert_eq!(s.fractions.len(), 5);
        assert_abs_diff_eq!(s.fractions.values().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
    assert_eq!(r.histogram["insufficient_force"], 2);
    assert_eq!(r.histogram.values().sum::<usize>(), 8);

    let csv = r.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seed,rollout,outcome,episode_len,max_force,mean_infer_ms"));
    assert_eq!(lines.next(), Some("0,0,success,10,1.500000,2.000"));
    assert_eq!(csv.lines().count(), 9);

    let nd = r.to_ndjson().unwrap();
    let last: serde_json::Value = serde_json::from_str(nd.lines().last().unwrap()).unwrap();
    assert_eq!(last["kind"], "aggregate");
    assert_eq!(last["rollouts"], 8);
    assert_eq!(nd.lines().count(), 3);
}

#[test]
fn eval_writes_reports_for_every_checkpoint() {
    let dir = tempdir().unwrap();
    let cfg = tiny("seeds = 3, 4\nsave_episodes = true");
    trained(&cfg, dir.path());
    let found = find_checkpoints(&cfg, dir.path()).unwrap();
    assert_eq!(found.len(), 2);
    let report = cmd_eval(&cfg, dir.path()).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![3, 4]);
    for f in ["report.csv", "aggregate.ndjson", "trajectories.ndjson"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(dir.path().join("episodes")).unwrap().count(), 4);
    let traj = std::fs::read_to_string(dir.path().join("trajectories.ndjson")).unwrap();
    assert_eq!(traj.lines().count(), 4);
}

#[test]
fn eval_without_checkpoints_is_a_config_error() {
    let dir = tempdir().unwrap();
    assert!(matches!(find_checkpoints(&tiny(""), dir.path()), Err(Error::Config { .. })));
}

#[test]
fn attention_rows_are_distributions() {
    let dir = tempdir().unwrap();
    let cfg = tiny("");
    trained(&cfg, dir.path());
    let res = cmd_rollout(&cfg, dir.path()).unwrap();
    let ep_path = dir.path().join("rollout.vte");
    assert!(ep_path.is_file());
    let cfg = tiny(&format!("episode = {}", ep_path.display()));
    let rows = cmd_attn(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), res.episode.len());
    for r in &rows {
        let w = r.weights;
        assert_abs_diff_eq!(w.actions + w.proprio + w.tactile + w.vision, 1.0, epsilon = 1e-5);
        assert!(w.tactile > 0.0);
    }
    let csv = std::fs::read_to_string(dir.path().join("attn.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("time_s,w_actions,w_proprio,w_tactile,w_vision"));
}

#[test]
fn attention_csv_omits_absent_modalities() {
    let dir = tempdir().unwrap();
    let cfg = tiny("modalities = vision, proprio");
    trained(&cfg, dir.path());
    cmd_rollout(&cfg, dir.path()).unwrap();
    let cfg = tiny(&format!(
        "modalities = vision, proprio\nepisode = {}",
        dir.path().join("rollout.vte").display()
    ));
    let rows = cmd_attn(&cfg, dir.path()).unwrap();
    assert!(rows.iter().all(|r| r.weights.tactile == 0.0));
    let csv = std::fs::read_to_string(dir.path().join("attn.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("time_s,w_actions,w_proprio,w_vision"));
}

#[test]
fn attn_needs_an_episode() {
    let dir = tempdir().unwrap();
    assert!(matches!(cmd_attn(&tiny(""), dir.path()), Err(Error::Config { .. })));
}
