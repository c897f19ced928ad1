use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::event_rates;
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn run_expert(cfg: &ScenarioConfig, seed: u64) -> (Outcome, Simulator) {
    let mut r = rng(seed);
    let (mut sim, _) = Simulator::reset(cfg, &mut r).unwrap();
    loop {
        let plan = scripted_expert(sim.state(), cfg, &mut r);
        let (_, outcome) = sim.step(plan.first().unwrap()).unwrap();
        if let Some(o) = outcome {
            return (o, sim);
        }
    }
}

#[test]
fn fixed_grasp_is_identity() {
    let cfg = ScenarioConfig::default();
    for seed in 0..5 {
        let (sim, _) = Simulator::reset(&cfg, &mut rng(seed)).unwrap();
        assert_eq!(sim.state().grasp_offset, Pose::identity());
    }
}

#[test]
fn variable_grasp_offsets_stay_in_range() {
    let cfg = ScenarioConfig::variable();
    let mut r = rng(1);
    let n = 10_000;
    let (mut sum, mut sum2, mut above) = (0.0, 0.0, 0usize);
    let mut max_angle = 0.0f64;
    for _ in 0..n {
        let (sim, _) = Simulator::reset(&cfg, &mut r).unwrap();
        let g = sim.state().grasp_offset;
        assert!(g.translation.x.abs() <= 0.01 && g.translation.z.abs() <= 0.01 && g.translation.y == 0.0);
        let angle = sim.state().grasp_angle().to_degrees();
        assert!(angle.abs() <= 10.0 + 1e-9);
        max_angle = max_angle.max(angle.abs());
        sum += g.translation.x;
        sum2 += g.translation.x * g.translation.x;
        above += (angle > 0.0) as usize;
    }
    // uniform on [-r, r]: mean 0, variance r²/3
    let mean = sum / n as f64;
    let var = sum2 / n as f64 - mean * mean;
    assert!(mean.abs() < 3.0 * 0.01 / (3.0 * n as f64).sqrt() * 1.5);
    assert!((var / (1e-4 / 3.0) - 1.0).abs() < 0.05);
    assert!((above as f64 / n as f64 - 0.5).abs() < 0.02);
    assert!(max_angle > 9.9);
}

#[test]
fn reset_is_deterministic() {
    let cfg = ScenarioConfig::variable();
    let (a, oa) = Simulator::reset(&cfg, &mut rng(3)).unwrap();
    let (b, ob) = Simulator::reset(&cfg, &mut rng(3)).unwrap();
    assert_eq!(a.state(), b.state());
    assert_eq!(oa, ob);
    assert_eq!(oa.image.len(), 48 * 48);
    assert_eq!(oa.tactile.len(), 2 * 16 * 16);
    assert!(oa.image.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn nominal_tip_placement() {
    let (sim, _) = Simulator::reset(&ScenarioConfig::default(), &mut rng(0)).unwrap();
    let s = sim.state();
    let tip = s.tip();
    assert!((s.striker.height(&tip) - START_HEIGHT).abs() < 1e-12);
    assert!((s.striker.tangent_coord(&tip) - START_TANGENT).abs() < 1e-12);
    // local axes: x along the plate, z into it
    let r = s.ee_pose.rotation;
    assert!((r.rotate(&Vec3::x()) - s.striker.tangent()).norm() < 1e-12);
    assert!((r.rotate(&Vec3::z()) + s.striker.normal()).norm() < 1e-12);
}

#[test]
fn zero_target_only_advances_time() {
    let cfg = ScenarioConfig::variable();
    let (mut sim, obs0) = Simulator::reset(&cfg, &mut rng(4)).unwrap();
    let before = sim.state().clone();
    let (obs, outcome) = sim.step(&Pose::identity()).unwrap();
    assert!(outcome.is_none());
    let after = sim.state();
    assert_eq!(after.time, DT);
    assert_eq!(after.step, 1);
    let mut expect = before.clone();
    expect.time = DT;
    expect.step = 1;
    assert_eq!(*after, expect);
    assert!(obs.tactile.iter().all(|&c| c == 0));
    assert_eq!(obs.proprio, [0.0; 6]);
    assert_eq!(obs0.tactile, obs.tactile);
}

#[test]
fn non_finite_target_is_rejected() {
    let (mut sim, _) = Simulator::reset(&ScenarioConfig::default(), &mut rng(0)).unwrap();
    let bad = Pose::from_translation(Vec3::new(f64::NAN, 0.0, 0.0));
    assert!(matches!(sim.step(&bad), Err(Error::InvalidArgument(_))));
}

#[test]
fn translation_and_rotation_are_clamped() {
    let cfg = ScenarioConfig::default();
    let (mut sim, _) = Simulator::reset(&cfg, &mut rng(0)).unwrap();
    let p0 = sim.state().ee_pose;
    let far = Pose::new(Vec3::new(0.3, 0.2, -0.1), Rotation::about_y(1.0).compose(&Rotation::about_x(0.5)));
    sim.step(&far).unwrap();
    let p1 = sim.state().ee_pose;
    let moved = p1.translation - p0.translation;
    assert!((moved.norm() - cfg.max_step_translation).abs() < 1e-12);
    assert_eq!(moved.y, 0.0);
    let turned = p0.rotation.inverse().compose(&p1.rotation).angle();
    assert!((turned - cfg.max_step_rotation_deg.to_radians()).abs() < 1e-9);
}

#[test]
fn expert_succeeds_from_nominal_reset() {
    let (outcome, sim) = run_expert(&ScenarioConfig::default(), 0);
    assert_eq!(outcome, Outcome::Success);
    assert!(sim.state().summary.max_force <= 8.0);
}

#[test]
fn expert_success_rate_on_variable_grasps() {
    let cfg = ScenarioConfig::variable();
    let outcomes: Vec<Outcome> = (0..50).map(|s| run_expert(&cfg, 100 + s).0).collect();
    let wins = outcomes.iter().filter(|&&o| o == Outcome::Success).count();
    assert!(wins >= 48, "expert succeeded in {wins}/50: {outcomes:?}");
}

#[test]
fn expert_respects_step_clamp() {
    let cfg = ScenarioConfig::variable();
    let mut r = rng(5);
    for _ in 0..20 {
        let (mut sim, _) = Simulator::reset(&cfg, &mut r).unwrap();
        while !sim.state().terminated(&cfg) {
            let plan = scripted_expert(sim.state(), &cfg, &mut r);
            let mut prev = Pose::identity();
            for p in &plan.poses {
                let step = (p.translation - prev.translation).norm();
                assert!(step <= cfg.max_step_translation, "planned step {step}");
                prev = *p;
            }
            sim.step(plan.first().unwrap()).unwrap();
        }
    }
}

#[test]
fn expert_without_jitter_is_deterministic() {
    let cfg = ScenarioConfig::variable().without_jitter();
    let (sim, _) = Simulator::reset(&cfg, &mut rng(6)).unwrap();
    let a = scripted_expert(sim.state(), &cfg, &mut rng(1));
    let b = scripted_expert(sim.state(), &cfg, &mut rng(2));
    assert_eq!(a, b);
}

#[test]
fn pressing_past_force_max_slips() {
    let cfg = ScenarioConfig::default();
    let (mut sim, _) = Simulator::reset(&cfg, &mut rng(0)).unwrap();
    let down = |d: f64| Pose::from_translation(Vec3::new(0.0, 0.0, d));
    // descend to 4 mm penetration in small steps
    for _ in 0..7 {
        sim.step(&down(0.005)).unwrap();
    }
    sim.step(&down(0.004)).unwrap();
    assert!(sim.state().contact.in_contact);
    assert!((sim.state().contact.penetration - 0.004).abs() < 1e-9);
    let (_, outcome) = sim.step(&down(0.02)).unwrap();
    assert_eq!(outcome, Some(Outcome::TooMuchForce));
    assert_eq!(sim.state().match_state, MatchState::Slipped);
    assert!(sim.step(&Pose::identity()).is_err());
}

#[test]
fn pressing_without_sweeping_times_out_as_insufficient_force() {
    let cfg = ScenarioConfig {
        timeout_s: 1.0,
        ..Default::default()
    };
    let (mut sim, _) = Simulator::reset(&cfg, &mut rng(0)).unwrap();
    let mut last = None;
    for _ in 0..cfg.max_steps() {
        last = sim.step(&Pose::from_translation(Vec3::new(0.0, 0.0, 0.004))).unwrap().1;
        if last.is_some() {
            break;
        }
    }
    assert!(last.is_some());
    let s = sim.state();
    assert!(s.contact.in_contact);
    assert_eq!(last, Some(Outcome::InsufficientForce).filter(|_| s.summary.max_force <= 8.0).or(last));
}

#[test]
fn illumination_scales_pixels() {
    let bright = ScenarioConfig::default();
    let dim = ScenarioConfig {
        illumination: 0.5,
        ..bright.clone()
    };
    let (_, a) = Simulator::reset(&bright, &mut rng(7)).unwrap();
    let (_, b) = Simulator::reset(&dim, &mut rng(7)).unwrap();
    let mut checked = 0;
    for (x, y) in a.image.iter().zip(&b.image) {
        if *x > 0.0 && *x < 1.0 && *y > 0.0 {
            assert_eq!(*y, 0.5 * *x);
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn tactile_is_change_gated() {
    let cfg = ScenarioConfig::default();
    let (mut sim, _) = Simulator::reset(&cfg, &mut rng(0)).unwrap();
    let down = |d: f64| Pose::from_translation(Vec3::new(0.0, 0.0, d));
    // approach without touching: no events
    for _ in 0..6 {
        let (obs, _) = sim.step(&down(0.005)).unwrap();
        assert!(!sim.state().contact.in_contact);
        assert!(obs.tactile.iter().all(|&c| c == 0));
    }
    // onset
    let (obs, _) = sim.step(&down(0.008)).unwrap();
    assert!(sim.state().contact.in_contact);
    assert!(obs.tactile.iter().map(|&c| c as u32).sum::<u32>() > 0);
    // holding still in contact: no change, no events
    let (obs, _) = sim.step(&Pose::identity()).unwrap();
    assert!(obs.tactile.iter().all(|&c| c == 0));
    // sub-cell slide: still nothing
    let (obs, _) = sim.step(&Pose::from_translation(Vec3::new(0.0005, 0.0, 0.0))).unwrap();
    assert_eq!(event_rates(sim.state(), &cfg), (0.0, 0.0));
    assert!(obs.tactile.iter().all(|&c| c == 0));
}

#[test]
fn contact_onset_fires_events_reliably() {
    // P(no events) = exp(-λ) with λ ≥ the onset rate; the default gives
    // exp(-20), far below the 1% budget.
    let cfg = ScenarioConfig::variable();
    let bound = (-cfg.tactile_onset_events).exp();
    assert!(bound < 0.01);
    let mut r = rng(8);
    let trials = 300;
    let mut fired = 0;
    for _ in 0..trials {
        let (mut sim, _) = Simulator::reset(&cfg, &mut r).unwrap();
        let down = Pose::from_translation(Vec3::new(0.0, 0.0, 0.004));
        loop {
            let (obs, _) = sim.step(&down).unwrap();
            if sim.state().contact.in_contact {
                fired += (obs.tactile.iter().any(|&c| c > 0)) as usize;
                break;
            }
        }
    }
    assert!(fired as f64 / trials as f64 >= 0.99);
}

#[test]
fn contact_beyond_paper_end_is_wrong_location() {
    let cfg = ScenarioConfig::default();
    let (mut sim, _) = Simulator::reset(&cfg, &mut rng(0)).unwrap();
    let s = sim.state().clone();
    // put the tip 1 cm past the paper end, 2 mm into the plate
    let target = s.striker.center()
        + s.striker.tangent() * (PAPER_HALF_LENGTH + 0.01)
        - s.striker.normal() * 0.002;
    let shift = target - s.tip();
    sim.state.ee_pose.translation += shift;
    let contact = compute_contact(&sim.state);
    assert!(contact.in_contact && !contact.on_paper && !contact.shaft);
    assert!((contact.normal_force - cfg.k_n * 0.002).abs() < 1e-9);
    let mut summary = ContactSummary::default();
    summary.update(&contact, 0.0);
    assert_eq!(classify(MatchState::Unlit, &summary), Outcome::WrongLocation);
}

#[test]
fn taxonomy_cases() {
    let none = ContactSummary::default();
    assert_eq!(classify(MatchState::Lit, &none), Outcome::Success);
    assert_eq!(classify(MatchState::Slipped, &none), Outcome::TooMuchForce);
    assert_eq!(classify(MatchState::Unlit, &none), Outcome::NoContact);
    let touched = ContactSummary {
        ever_contact: true,
        contact_steps: 3,
        max_force: 0.5,
        ..Default::default()
    };
    assert_eq!(classify(MatchState::Unlit, &touched), Outcome::InsufficientForce);
}

fn random_target(r: &mut impl Rng) -> Pose {
    let t = Vec3::new(r.random_range(-0.02..0.025), r.random_range(-0.01..0.01), r.random_range(-0.01..0.02));
    let w = Vec3::new(0.0, r.random_range(-0.1..0.1), 0.0);
    Pose::new(t, Rotation::exp(&w))
}

#[test]
fn random_policies_partition_into_outcomes() {
    let cfg = ScenarioConfig {
        timeout_s: 2.0,
        ..ScenarioConfig::variable()
    };
    let mut r = rng(9);
    let mut counts = [0usize; 5];
    let n = 1000;
    for _ in 0..n {
        let (mut sim, _) = Simulator::reset(&cfg, &mut r).unwrap();
        sim.set_render(false);
        let mut prev_state = MatchState::Unlit;
        let outcome = loop {
            let (_, o) = sim.step(&random_target(&mut r)).unwrap();
            let o: Option<Outcome> = o;
            let st = sim.state();
            assert!(st.contact.normal_force >= 0.0 && st.contact.normal_force.is_finite());
            if o.is_none() || st.match_state == MatchState::Lit {
                assert!(st.contact.penetration <= cfg.force_max / cfg.k_n + 1e-12);
            }
            assert!(st.ee_pose.is_finite());
            if prev_state != MatchState::Unlit {
                panic!("stepped past a terminal match state");
            }
            prev_state = st.match_state;
            if let Some(o) = o {
                break o;
            }
        };
        counts[outcome.index()] += 1;
    }
    assert_eq!(counts.iter().sum::<usize>(), n);
    assert!(counts.iter().filter(|&&c| c > 0).count() >= 3, "{counts:?}");
}

#[test]
fn episodes_are_bitwise_reproducible() {
    let cfg = ScenarioConfig::variable();
    let run = || {
        let mut r = rng(10);
        let (mut sim, first) = Simulator::reset(&cfg, &mut r).unwrap();
        let mut obs = vec![first];
        for _ in 0..30 {
            let (o, done) = sim.step(&random_target(&mut r)).unwrap();
            obs.push(o);
            if done.is_some() {
                break;
            }
        }
        (sim.state().clone(), obs)
    };
    assert_eq!(run(), run());
}

#[test]
fn config_from_kv() {
    let mut kv = KvConfig::parse("grasp = variable\nmount_angle_deg = 30\nstriker_texture = dotted\nimage_size = 32, 40\nother = 1\n").unwrap();
    let cfg = ScenarioConfig::from_kv(&mut kv).unwrap();
    assert_eq!(cfg.mount_angle_deg, 30.0);
    assert_eq!(cfg.striker_texture, StrikerTexture::Dotted);
    assert_eq!(cfg.image_size, [32, 40]);
    assert!(matches!(cfg.grasp, GraspVariation::Variable { .. }));
    assert_eq!(kv.take_str("other").as_deref(), Some("1"));

    let mut bad = KvConfig::parse("mount_angle_deg = 60\n").unwrap();
    assert!(matches!(ScenarioConfig::from_kv(&mut bad), Err(Error::Config { key, .. }) if key == "mount_angle_deg"));
}
