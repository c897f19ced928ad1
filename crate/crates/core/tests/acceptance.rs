//! End-to-end acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Property criteria (1-4, 9, 10) make the process exit non-zero when they
//! fail. The overfit oracle (5) and the directional criteria (6-8), which
//! compare trained policies, are reported but do not affect the exit status.
//!
//! `VTFLOW_ACCEPT_EPOCHS` overrides the training epochs of the directional
//! runs; `VTFLOW_ACCEPT_SKIP_DIRECTIONAL=1` skips criteria 6-8 and 10.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtflow::config::KvConfig;
use vtflow::datastore::{compute_normalization, target_sequence, to_net_input};
use vtflow::flowmatch::{
    interpolate, sample_actions, sample_noise, target_velocity, ActionModel, ActionSequence, CosineSchedule,
    Normalizer, SamplerConfig, VelocitySequence,
};
use vtflow::harness::{cmd_demo_gen, cmd_eval, cmd_train, generate_demos, EvalReport, RunConfig};
use vtflow::liegroup::{Pose, Rotation, Vec3};
use vtflow::par::Exec;
use vtflow::policynet::train::{example_loss, prepare, train_step, Adam, AdamConfig, PrepareConfig, TrainExample};
use vtflow::policynet::{Modality, NetConfig, NetInput, Objective, Policy, PolicyNet, HEAD_OUT};
use vtflow::simenv::{Outcome, ScenarioConfig, Simulator};

/// Scenario and training settings shared by the directional runs.
const BASE: &str = "
camera_tilt_deg = 0
image_size = 32, 32
latent_dim = 32
layers = 2
heads = 4
ff_dim = 128
lr = 0.001
batch_size = 8
seeds = 0, 1, 2
n_rollouts = 20
n_demos = 20
";
const DEFAULT_EPOCHS: usize = 100;

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Property,
    Oracle,
    Directional,
}

struct Line {
    id: usize,
    pass: bool,
    kind: Kind,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(r: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        r.random_range(-scale..scale),
        r.random_range(-scale..scale),
        r.random_range(-scale..scale),
    )
}

fn random_pose(r: &mut impl Rng) -> Pose {
    let mut w = random_vec(r, 2.0);
    if w.norm() > 3.0 {
        w *= 3.0 / w.norm();
    }
    Pose::new(random_vec(r, 5.0), Rotation::exp(&w))
}

fn mat_err(a: &Pose, b: &Pose) -> f64 {
    (a.to_homogeneous() - b.to_homogeneous()).amax()
}

fn lie_group() -> Line {
    let t0 = Instant::now();
    let mut r = rng(1);
    let mut round_trip = 0.0f64;
    for _ in 0..10_000 {
        let mut w = random_vec(&mut r, 2.0);
        if w.norm() >= 3.1 {
            w *= 3.1 / w.norm();
        }
        round_trip = round_trip.max((Rotation::exp(&w).log() - w).amax());
    }
    let mut law = 0.0f64;
    for _ in 0..10_000 {
        let (a, b, c) = (random_pose(&mut r), random_pose(&mut r), random_pose(&mut r));
        law = law
            .max(mat_err(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))))
            .max(mat_err(&a.compose(&a.inverse()), &Pose::identity()))
            .max(mat_err(&Pose::identity().compose(&a), &a))
            .max((a.compose(&b).to_homogeneous() - a.to_homogeneous() * b.to_homogeneous()).amax());
    }
    let secs = t0.elapsed().as_secs_f64();
    Line {
        id: 1,
        pass: round_trip < 1e-9 && law < 1e-10 && secs < 5.0,
        kind: Kind::Property,
        detail: format!("log(exp) err {round_trip:.2e} (< 1e-9), group law err {law:.2e} (< 1e-10), {secs:.2} s (< 5 s)"),
    }
}

struct Oracle(ActionSequence);

impl ActionModel for Oracle {
    type Context = ();
    fn predict(&self, _: &(), actions: &ActionSequence, t: f64) -> vtflow::Result<VelocitySequence> {
        target_velocity(actions, &self.0, t)
    }
}

fn max_pose_err(a: &ActionSequence, b: &ActionSequence) -> f64 {
    a.poses
        .iter()
        .zip(&b.poses)
        .map(|(x, y)| {
            let dp = (x.translation - y.translation).amax();
            let dr = x.rotation.inverse().compose(&y.rotation).log().amax();
            dp.max(dr)
        })
        .fold(0.0, f64::max)
}

fn rectified_flow() -> Line {
    let t0 = Instant::now();
    let mut r = rng(2);
    let mut path = 0.0f64;
    for _ in 0..100 {
        let a0 = sample_noise(&mut r, 16, 0.8);
        let a1 = sample_noise(&mut r, 16, 0.8);
        let v0 = target_velocity(&a0, &a1, 0.0).unwrap();
        for i in 1..20 {
            let t = 0.05 * i as f64;
            let v = target_velocity(&interpolate(&a0, &a1, t).unwrap(), &a1, t).unwrap();
            for (a, b) in v.twists.iter().zip(&v0.twists) {
                path = path.max((a.linear - b.linear).amax()).max((a.angular - b.angular).amax());
            }
        }
    }
    let mut endpoint = 0.0f64;
    for trial in 0..20 {
        let target = sample_noise(&mut r, 16, 0.8);
        for k in [1, 2, 5, 10] {
            let cfg = SamplerConfig { steps: k, ..Default::default() };
            let out = sample_actions(&Oracle(target.clone()), &(), &cfg, &Normalizer::identity(), &mut rng(100 + trial)).unwrap();
            endpoint = endpoint.max(max_pose_err(&out, &target));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Line {
        id: 2,
        pass: path < 1e-8 && endpoint < 1e-9 && secs < 5.0,
        kind: Kind::Property,
        detail: format!("path-constancy dev {path:.2e} (< 1e-8), oracle endpoint err {endpoint:.2e} (< 1e-9) for K in 1,2,5,10, {secs:.2} s (< 5 s)"),
    }
}

fn random_input<T: vtflow::policynet::ops::Scalar>(cfg: &NetConfig, r: &mut impl Rng) -> NetInput<T> {
    let mut v = |n: usize| -> Vec<T> { (0..n).map(|_| T::from_f64(r.random_range(0.0..1.0)).unwrap()).collect() };
    NetInput {
        image: Some(v(cfg.image_size[0] * cfg.image_size[1])),
        tactile: Some(v(2 * cfg.tactile_size[0] * cfg.tactile_size[1])),
        proprio: Some(v(cfg.proprio_dim)),
    }
}

fn mask_contract() -> Line {
    let cfg = NetConfig::reduced();
    let net = PolicyNet::new(cfg.clone()).unwrap();
    let p: Vec<f32> = net.init_params(&mut rng(3));
    let mut r = rng(4);
    let d = cfg.latent_dim;

    // observation stream is bitwise independent of the action inputs
    let mut bitwise = true;
    for _ in 0..5 {
        let input = random_input::<f32>(&cfg, &mut r);
        let obs = net.encode_observation(&p, &input, false).unwrap();
        let n_ctx = obs.len() + 1;
        let a = net.token_set(&p, obs.clone(), &sample_noise(&mut r, 16, 0.5), 0.3).unwrap();
        let b = net.token_set(&p, obs, &sample_noise(&mut r, 16, 0.5), 0.3).unwrap();
        let (_, ca) = net.forward_tokens_cached(&p, &a).unwrap();
        let (_, cb) = net.forward_tokens_cached(&p, &b).unwrap();
        for (ha, hb) in ca.hidden_states().iter().zip(cb.hidden_states()) {
            bitwise &= ha[..n_ctx * d].iter().zip(&hb[..n_ctx * d]).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }

    // action i never sees actions after it
    let mut causal = 0.0f32;
    let input = random_input::<f32>(&cfg, &mut r);
    let obs = net.encode_observation(&p, &input, false).unwrap();
    let base = sample_noise(&mut r, 16, 0.5);
    let out0 = net.forward_tokens(&p, &net.token_set(&p, obs.clone(), &base, 0.6).unwrap()).unwrap();
    for j in 0..16 {
        let mut pert = base.clone();
        pert.poses[j] = Pose::new(Vec3::new(1.0, -2.0, 0.5), Rotation::about_z(1.0));
        let out = net.forward_tokens(&p, &net.token_set(&p, obs.clone(), &pert, 0.6).unwrap()).unwrap();
        for i in 0..j * HEAD_OUT {
            causal = causal.max((out0[i] - out[i]).abs());
        }
    }

    // every nonempty modality subset runs
    let mut subsets = 0;
    for bits in 1..8u32 {
        let subset: Vec<Modality> = Modality::ALL.into_iter().filter(|m| bits & (1 << m.index()) != 0).collect();
        let sub_cfg = NetConfig {
            modalities: subset.clone(),
            ..cfg.clone()
        };
        let net = PolicyNet::new(sub_cfg.clone()).unwrap();
        let p: Vec<f32> = net.init_params(&mut rng(5));
        let input = random_input::<f32>(&sub_cfg, &mut r);
        let obs = net.encode_observation(&p, &input, false).unwrap();
        let tokens = net.token_set(&p, obs, &sample_noise(&mut r, 16, 0.5), 0.5).unwrap();
        let out = net.forward_tokens(&p, &tokens).unwrap();
        if tokens.observations.len() == subset.len() && out.len() == 16 * HEAD_OUT && out.iter().all(|v| v.is_finite()) {
            subsets += 1;
        }
    }
    Line {
        id: 3,
        pass: bitwise && causal <= 1e-6 && subsets == 7,
        kind: Kind::Property,
        detail: format!("observation stream bitwise invariant: {bitwise}, causal leak {causal:.2e} (<= 1e-6), subsets {subsets}/7"),
    }
}

fn gradient_check() -> Line {
    let t0 = Instant::now();
    let cfg = NetConfig::reduced();
    let net = PolicyNet::new(cfg.clone()).unwrap();
    let params: Vec<f64> = net.init_params(&mut rng(6));
    let schedule = CosineSchedule::default();
    let mut r = rng(7);
    let ex = TrainExample {
        input: random_input::<f64>(&cfg, &mut r),
        target: sample_noise(&mut r, cfg.horizon, 0.5),
    };
    let (mut worst, mut sampled) = (0.0f64, 0);
    for objective in [Objective::Flow, Objective::Bc, Objective::Ddpm] {
        let pc = PrepareConfig {
            objective,
            ..Default::default()
        };
        let (prep, _) = prepare(&ex, &pc, &schedule, &mut r).unwrap();
        let mut grads = vec![0.0; params.len()];
        example_loss(&net, &params, &prep, Some((&mut grads, 1.0))).unwrap();
        let eps = 1e-3;
        for _ in 0..200 {
            let i = r.random_range(0..params.len());
            let mut p = params.clone();
            p[i] = params[i] + eps;
            let lp = example_loss(&net, &p, &prep, None).unwrap();
            p[i] = params[i] - eps;
            let lm = example_loss(&net, &p, &prep, None).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            worst = worst.max((fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-4));
            sampled += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Line {
        id: 4,
        pass: worst < 1e-4 && sampled >= 200 && secs < 120.0,
        kind: Kind::Property,
        detail: format!("max rel err {worst:.2e} (< 1e-4) over {sampled} parameters, {secs:.1} s (< 120 s)"),
    }
}

/// Memorizes the first frame of five demonstrations, then samples from those
/// states and compares the final planned pose with the demonstration's.
fn overfit() -> Line {
    let run = RunConfig {
        n_demos: 5,
        ..RunConfig::default()
    };
    let (episodes, _) = generate_demos(&run, 8).unwrap();
    let norm = compute_normalization(&episodes, run.net.horizon).unwrap();
    let examples: Vec<TrainExample<f32>> = episodes
        .iter()
        .map(|ep| TrainExample {
            input: to_net_input(&ep.frames[0].obs, &norm, &run.modalities),
            target: norm.actions.normalize(&target_sequence(ep, 0, run.net.horizon)),
        })
        .collect();
    let net = PolicyNet::new(run.net.clone()).unwrap();
    let mut params: Vec<f32> = net.init_params(&mut rng(9));
    let mut opt = Adam::new(
        AdamConfig {
            lr: 1e-3,
            ..Default::default()
        },
        params.len(),
    );
    let schedule = CosineSchedule::default();
    let prep_cfg = PrepareConfig::default();
    let mut r = rng(10);
    let mut losses = Vec::new();
    for _ in 0..500 {
        let batch: Vec<_> = examples
            .iter()
            .map(|e| prepare(e, &prep_cfg, &schedule, &mut r).unwrap().0)
            .collect();
        losses.push(train_step(&net, &mut params, &mut opt, &batch, Exec::Parallel).unwrap());
    }
    let initial = losses[0];
    let tail = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    let policy = Policy { net: &net, params: &params };
    let sampler = SamplerConfig::default();
    let mut worst = 0.0f64;
    for ep in &episodes {
        let tokens = net.encode_observation(&params, &to_net_input(&ep.frames[0].obs, &norm, &run.modalities), false).unwrap();
        let demo = target_sequence(ep, 0, run.net.horizon);
        let seq = sample_actions(&policy, tokens.as_slice(), &sampler, &norm.actions, &mut r).unwrap();
        let last = run.net.horizon - 1;
        worst = worst.max((seq.poses[last].translation - demo.poses[last].translation).norm());
    }
    Line {
        id: 5,
        pass: tail < 0.01 * initial && worst < 0.02,
        kind: Kind::Oracle,
        detail: format!(
            "loss {initial:.4} -> {tail:.5} ({:.2}% of initial, < 1%), final-pose err {:.2} cm (< 2 cm)",
            100.0 * tail / initial,
            worst * 100.0
        ),
    }
}

fn random_target(r: &mut impl Rng) -> Pose {
    let t = Vec3::new(r.random_range(-0.02..0.025), r.random_range(-0.01..0.01), r.random_range(-0.01..0.02));
    let w = Vec3::new(0.0, r.random_range(-0.1..0.1), 0.0);
    Pose::new(t, Rotation::exp(&w))
}

fn taxonomy_fuzz() -> Line {
    let cfg = ScenarioConfig {
        timeout_s: 2.0,
        ..ScenarioConfig::variable()
    };
    let mut r = rng(11);
    let mut counts = [0usize; 5];
    let mut errors = 0;
    for _ in 0..10_000 {
        let Ok((mut sim, _)) = Simulator::reset(&cfg, &mut r) else {
            errors += 1;
            continue;
        };
        sim.set_render(false);
        let outcome = loop {
            match sim.step(&random_target(&mut r)) {
                Ok((_, Some(o))) => break Some(o),
                Ok((_, None)) => {}
                Err(_) => break None,
            }
        };
        match outcome {
            Some(o) => counts[o.index()] += 1,
            None => errors += 1,
        }
    }
    let total: usize = counts.iter().sum();
    let hist: Vec<String> = Outcome::ALL.iter().map(|o| format!("{}={}", o.name(), counts[o.index()])).collect();
    Line {
        id: 9,
        pass: errors == 0 && total == 10_000,
        kind: Kind::Property,
        detail: format!("{total}/10000 classified, {errors} errors; {}", hist.join(" ")),
    }
}

fn run_config(extra: &str, epochs: usize, data_dir: &Path) -> RunConfig {
    let text = format!("{BASE}\nepochs = {epochs}\ndata_dir = {}\n{extra}", data_dir.display());
    RunConfig::from_kv(KvConfig::parse(&text).unwrap()).unwrap()
}

fn train_and_eval(name: &str, extra: &str, epochs: usize, root: &Path) -> EvalReport {
    let t0 = Instant::now();
    let out = root.join(name);
    let cfg = run_config(extra, epochs, &root.join("demos"));
    cmd_train(&cfg, &out).unwrap();
    let report = cmd_eval(&cfg, &out).unwrap();
    let per_seed: Vec<String> = report.seeds.iter().map(|s| format!("{:.2}", s.success_rate)).collect();
    println!(
        "  {name}: success {:.3} (std {:.3}; seeds {}) {:?} [{:.0} s]",
        report.mean_success,
        report.std_success,
        per_seed.join(" "),
        report.histogram,
        t0.elapsed().as_secs_f64()
    );
    report
}

fn demos(root: &Path) {
    let cfg = run_config("", 1, &root.join("demos"));
    cmd_demo_gen(&cfg, root).unwrap();
}

fn directional(epochs: usize, root: &Path) -> Vec<Line> {
    demos(root);
    let v = train_and_eval("vision", "modalities = vision, proprio", epochs, root);
    let vt = train_and_eval("vision_touch", "modalities = vision, tactile, proprio", epochs, root);
    let masked = train_and_eval(
        "masked_vision",
        "modalities = vision, tactile, proprio\nmasked_training = true\neval_modalities = vision, proprio",
        epochs,
        root,
    );
    let bc = train_and_eval("bc", "objective = bc", epochs, root);
    let ddpm = train_and_eval("ddpm", "objective = ddpm", epochs, root);
    let pct = |x: f64| 100.0 * x;
    vec![
        Line {
            id: 6,
            pass: vt.mean_success >= v.mean_success + 0.2 && vt.mean_success >= 0.6,
            kind: Kind::Directional,
            detail: format!(
                "vision+touch {:.1}% vs vision-only {:.1}% (need +20 pp and >= 60%), {epochs} epochs",
                pct(vt.mean_success),
                pct(v.mean_success)
            ),
        },
        Line {
            id: 7,
            pass: masked.mean_success > v.mean_success,
            kind: Kind::Directional,
            detail: format!(
                "masked-trained, vision-only eval {:.1}% vs standard vision-only {:.1}% (need strictly greater)",
                pct(masked.mean_success),
                pct(v.mean_success)
            ),
        },
        Line {
            id: 8,
            pass: vt.mean_success >= bc.mean_success && vt.mean_success >= ddpm.mean_success,
            kind: Kind::Directional,
            detail: format!(
                "flow {:.1}% vs bc {:.1}%, ddim {:.1}% (need flow >= both)",
                pct(vt.mean_success),
                pct(bc.mean_success),
                pct(ddpm.mean_success)
            ),
        },
    ]
}

/// Runs the criterion-6 pipeline twice from scratch at reduced length and
/// compares the reports with the timing column removed.
fn determinism(root: &Path) -> Line {
    let epochs = 3;
    let strip = |csv: &str| -> String {
        csv.lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut reports = Vec::new();
    for rep in 0..2 {
        let dir = root.join(format!("repeat_{rep}"));
        demos(&dir);
        for (name, mods) in [("vision", "vision, proprio"), ("vision_touch", "vision, tactile, proprio")] {
            let cfg = run_config(&format!("modalities = {mods}\nparallel = {}", rep == 0), epochs, &dir.join("demos"));
            let out = dir.join(name);
            cmd_train(&cfg, &out).unwrap();
            cmd_eval(&cfg, &out).unwrap();
        }
        let text: String = ["vision", "vision_touch"]
            .iter()
            .map(|n| strip(&std::fs::read_to_string(dir.join(n).join("report.csv")).unwrap()))
            .collect::<Vec<_>>()
            .join("\n");
        reports.push(text);
    }
    let rows = reports[0].lines().count();
    Line {
        id: 10,
        pass: reports[0] == reports[1],
        kind: Kind::Property,
        detail: format!(
            "two runs ({epochs} epochs, 3 seeds, parallel then sequential): report.csv without timing {} ({rows} lines)",
            if reports[0] == reports[1] { "identical" } else { "differs" }
        ),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let epochs = std::env::var("VTFLOW_ACCEPT_EPOCHS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_EPOCHS);
    let skip = std::env::var("VTFLOW_ACCEPT_SKIP_DIRECTIONAL").is_ok_and(|v| v == "1");

    let mut lines = vec![lie_group(), rectified_flow(), mask_contract(), gradient_check(), overfit()];
    let tmp = tempfile::tempdir().unwrap();
    if !skip {
        lines.extend(directional(epochs, &tmp.path().join("directional")));
    }
    lines.push(taxonomy_fuzz());
    if !skip {
        lines.push(determinism(tmp.path()));
    }
    lines.sort_by_key(|l| l.id);

    let mut ok = true;
    for l in &lines {
        let tag = if l.pass { "PASS" } else { "FAIL" };
        let kind = match l.kind {
            Kind::Property => "property",
            Kind::Oracle => "oracle",
            Kind::Directional => "directional",
        };
        println!("criterion {:>2} [{kind}]: {tag} - {}", l.id, l.detail);
        ok &= l.pass || l.kind != Kind::Property;
    }
    if skip {
        println!("criteria 6, 7, 8, 10 skipped");
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
