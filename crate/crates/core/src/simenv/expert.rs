//! Privileged scripted demonstrator.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ScenarioConfig, WorldState, DT, START_TANGENT};
use crate::flowmatch::{ActionSequence, HORIZON};
use crate::liegroup::{Pose, Rotation, Vec3};

/// Normal force added by one approach step once touching, N; sets the
/// approach speed for the plate stiffness.
const APPROACH_FORCE_STEP: f64 = 2.4;
/// Largest along-plate correction per step during the approach.
const ALIGN_STEP: f64 = 0.007;
/// Normal force held while sweeping, N.
const PRESS_FORCE: f64 = 4.5;
/// Largest normal-force correction per step while sweeping, N.
const PRESS_FORCE_STEP: f64 = 1.6;
/// Largest normal-force change per step while pressing before the sweep, N.
const SETTLE_FORCE_STEP: f64 = 3.0;
/// The sweep starts once the force is this close to [`PRESS_FORCE`], N.
const SETTLE_TOLERANCE: f64 = 1.0;
/// Sweep speed ramp, meters per step: `start + ramp * k`, capped.
const SWEEP_START: f64 = 0.008;
const SWEEP_RAMP: f64 = 0.002;
const SWEEP_MAX: f64 = 0.012;

/// Plans the next [`HORIZON`] end-effector poses, relative to the current
/// end-effector frame: approach the plate along its normal at constant speed
/// while aligning the tip with the start of the paper; once touching, press
/// without sliding until the force is near [`PRESS_FORCE`]; then accelerate
/// along the plate while holding that force. Each pose receives independent
/// Gaussian jitter from the scenario config.
pub fn scripted_expert(state: &WorldState, cfg: &ScenarioConfig, rng: &mut impl Rng) -> ActionSequence {
    let s = &state.striker;
    let (u, n) = (s.tangent(), s.normal());
    let tip = state.tip();
    let mut tau = s.tangent_coord(&tip);
    let mut height = s.height(&tip);
    let press_depth = PRESS_FORCE / s.k_n;
    let approach = APPROACH_FORCE_STEP / s.k_n;
    let press_step = PRESS_FORCE_STEP / s.k_n;
    let settle_step = SETTLE_FORCE_STEP / s.k_n;
    let settle_tol = SETTLE_TOLERANCE / s.k_n;
    let mut touched = state.summary.contact_steps > 0 || (state.contact.in_contact && !state.contact.shaft);
    // sweep speed of the last step, zero before the sweep started
    let mut speed = if state.contact.in_contact { state.contact.tangential_speed * DT } else { 0.0 };
    if speed < SWEEP_START / 2.0 {
        speed = 0.0;
    }

    let mut offset = Vec3::zeros();
    let mut world = Vec::with_capacity(HORIZON);
    for _ in 0..HORIZON {
        let (d_tau, d_h) = if touched {
            let err = press_depth + height;
            if speed == 0.0 && err.abs() > settle_tol {
                (0.0, -err.clamp(-settle_step, settle_step))
            } else {
                speed = if speed == 0.0 { SWEEP_START } else { (speed + SWEEP_RAMP).min(SWEEP_MAX) };
                (speed, -err.clamp(-press_step, press_step))
            }
        } else {
            let d_tau = (START_TANGENT - tau).clamp(-ALIGN_STEP, ALIGN_STEP);
            if height - approach <= 0.0 {
                touched = true;
            }
            (d_tau, -approach)
        };
        tau += d_tau;
        height += d_h;
        offset += u * d_tau + n * d_h;
        world.push(offset);
    }

    let rot_inv = state.ee_pose.rotation.inverse();
    let sigma_t = cfg.expert_jitter_translation;
    let sigma_r = cfg.expert_jitter_rotation_deg.to_radians();
    let jitter_t = (sigma_t > 0.0).then(|| Normal::new(0.0, sigma_t).expect("valid sigma"));
    let jitter_r = (sigma_r > 0.0).then(|| Normal::new(0.0, sigma_r).expect("valid sigma"));
    let poses = world
        .into_iter()
        .map(|w| {
            let t = rot_inv.rotate(&w) + draw3(&jitter_t, rng);
            let r = Rotation::exp(&draw3(&jitter_r, rng));
            Pose::new(t, r)
        })
        .collect();
    ActionSequence::new(poses)
}

fn draw3(d: &Option<Normal<f64>>, rng: &mut impl Rng) -> Vec3 {
    match d {
        Some(d) => Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng)),
        None => Vec3::zeros(),
    }
}
