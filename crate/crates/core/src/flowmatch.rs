//! Rectified linear flow over sequences of SE(3) poses, plus the two baseline
//! objectives it is compared against (direct regression and ε-prediction
//! diffusion with a deterministic DDIM sampler).
//!
//! Translation and rotation are treated separately: translations follow the
//! Euclidean straight line, rotations follow the SO(3) geodesic. Translations
//! are handled in normalized units (see [`Normalizer`]); rotations are never
//! normalized.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{geodesic_interp, Pose, Rotation, Twist, Vec3};

/// Default action horizon.
pub const HORIZON: usize = 16;

/// Largest admissible flow time when computing targets.
pub const MAX_TARGET_TIME: f64 = 1.0 - 1e-6;

/// Upper end of the training flow-time distribution.
pub const TRAIN_TIME_MAX: f64 = 0.999;

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSequence {
    pub poses: Vec<Pose>,
}

impl ActionSequence {
    pub fn new(poses: Vec<Pose>) -> Self {
        ActionSequence { poses }
    }

    pub fn identity(n: usize) -> Self {
        ActionSequence {
            poses: vec![Pose::identity(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn first(&self) -> Option<&Pose> {
        self.poses.first()
    }

    pub fn is_finite(&self) -> bool {
        self.poses.iter().all(Pose::is_finite)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct VelocitySequence {
    pub twists: Vec<Twist>,
}

impl VelocitySequence {
    pub fn new(twists: Vec<Twist>) -> Self {
        VelocitySequence { twists }
    }

    pub fn zeros(n: usize) -> Self {
        VelocitySequence {
            twists: vec![Twist::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.twists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.twists.is_empty()
    }

    /// Row-major `[n, 6]` view: linear then angular per entry.
    pub fn to_flat(&self) -> Vec<f64> {
        self.twists.iter().flat_map(|t| t.to_array()).collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        VelocitySequence {
            twists: v.chunks_exact(6).map(Twist::from_slice).collect(),
        }
    }
}

/// Per-axis affine normalization of action translations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::identity()
    }
}

impl Normalizer {
    pub const STD_FLOOR: f64 = 1e-6;

    pub fn identity() -> Self {
        Normalizer {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Self {
        Normalizer {
            mean,
            std: std.map(|s| s.max(Self::STD_FLOOR)),
        }
    }

    pub fn normalize_point(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| (p[i] - self.mean[i]) / self.std[i])
    }

    pub fn denormalize_point(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| p[i] * self.std[i] + self.mean[i])
    }

    pub fn normalize(&self, seq: &ActionSequence) -> ActionSequence {
        self.map(seq, |p| self.normalize_point(p))
    }

    pub fn denormalize(&self, seq: &ActionSequence) -> ActionSequence {
        self.map(seq, |p| self.denormalize_point(p))
    }

    fn map(&self, seq: &ActionSequence, f: impl Fn(&Vec3) -> Vec3) -> ActionSequence {
        ActionSequence {
            poses: seq
                .poses
                .iter()
                .map(|p| Pose::new(f(&p.translation), p.rotation))
                .collect(),
        }
    }
}

/// A learned or analytic field over action sequences.
///
/// `time` is the flow time in `[0, 1)` for the flow sampler and
/// `t_idx / T_diff` for the diffusion sampler. For the flow objective the
/// output is a velocity; for diffusion it is the predicted noise.
pub trait ActionModel {
    type Context: ?Sized;

    fn predict(
        &self,
        ctx: &Self::Context,
        actions: &ActionSequence,
        time: f64,
    ) -> Result<VelocitySequence>;
}

fn standard_normal3(rng: &mut impl Rng) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Draws the flow's source sample: standard normal translations and
/// `exp(ω)` rotations with `ω ~ N(0, σ_rot² I)`.
pub fn sample_noise(rng: &mut impl Rng, n: usize, sigma_rot: f64) -> ActionSequence {
    let poses = (0..n)
        .map(|_| {
            let p = standard_normal3(rng);
            let w = standard_normal3(rng) * sigma_rot;
            Pose::new(p, Rotation::exp(&w))
        })
        .collect();
    ActionSequence { poses }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: length mismatch {a} vs {b}")));
    }
    Ok(())
}

/// Point on the straight path from `a0` (t = 0) to `a1` (t = 1).
pub fn interpolate(a0: &ActionSequence, a1: &ActionSequence, t: f64) -> Result<ActionSequence> {
    check_len(a0.len(), a1.len(), "interpolate")?;
    let poses = a0
        .poses
        .iter()
        .zip(&a1.poses)
        .map(|(p0, p1)| {
            let p = p1.translation * t + p0.translation * (1.0 - t);
            Ok(Pose::new(p, geodesic_interp(&p0.rotation, &p1.rotation, t)?))
        })
        .collect::<Result<_>>()?;
    Ok(ActionSequence { poses })
}

/// Velocity that carries `a_t` to `a1` in the remaining time `1 - t`.
pub fn target_velocity(
    a_t: &ActionSequence,
    a1: &ActionSequence,
    t: f64,
) -> Result<VelocitySequence> {
    check_len(a_t.len(), a1.len(), "target_velocity")?;
    if !(0.0..MAX_TARGET_TIME).contains(&t) {
        return Err(Error::invalid(format!(
            "flow time {t} outside [0, {MAX_TARGET_TIME})"
        )));
    }
    let remaining = 1.0 - t;
    let twists = a_t
        .poses
        .iter()
        .zip(&a1.poses)
        .map(|(pt, p1)| {
            let linear = (p1.translation - pt.translation) / remaining;
            let angular = pt.rotation.inverse().compose(&p1.rotation).log() / remaining;
            Twist::new(linear, angular)
        })
        .collect();
    Ok(VelocitySequence { twists })
}

/// Squared error summed over linear and angular parts, averaged over the
/// sequence.
pub fn flow_loss(predicted: &VelocitySequence, target: &VelocitySequence) -> Result<f64> {
    check_len(predicted.len(), target.len(), "flow_loss")?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predicted
        .twists
        .iter()
        .zip(&target.twists)
        .map(|(a, b)| (a.linear - b.linear).norm_squared() + (a.angular - b.angular).norm_squared())
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// Squared translation error plus squared geodesic distance, averaged over the
/// sequence.
pub fn bc_loss(predicted: &ActionSequence, demo: &ActionSequence) -> Result<f64> {
    check_len(predicted.len(), demo.len(), "bc_loss")?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predicted
        .poses
        .iter()
        .zip(&demo.poses)
        .map(|(a, b)| {
            (a.translation - b.translation).norm_squared()
                + a.rotation.inverse().compose(&b.rotation).log().norm_squared()
        })
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// One explicit Euler step: `p += Δt v_p`, `r ← r · exp(Δt v_r)`.
pub fn euler_step(actions: &ActionSequence, velocity: &VelocitySequence, dt: f64) -> Result<ActionSequence> {
    check_len(actions.len(), velocity.len(), "euler_step")?;
    let poses = actions
        .poses
        .iter()
        .zip(&velocity.twists)
        .map(|(p, v)| {
            Pose::new(
                p.translation + v.linear * dt,
                p.rotation.compose(&Rotation::exp(&(v.angular * dt))),
            )
        })
        .collect();
    Ok(ActionSequence { poses })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub horizon: usize,
    pub steps: usize,
    pub sigma_rot: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            horizon: HORIZON,
            steps: 5,
            sigma_rot: 1.0,
        }
    }
}

/// Generates an action sequence by `steps` Euler refinements of a noise
/// sample. The result is de-normalized with `norm`.
pub fn sample_actions<M: ActionModel>(
    model: &M,
    ctx: &M::Context,
    cfg: &SamplerConfig,
    norm: &Normalizer,
    rng: &mut impl Rng,
) -> Result<ActionSequence> {
    if cfg.steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    let mut actions = sample_noise(rng, cfg.horizon, cfg.sigma_rot);
    let dt = 1.0 / cfg.steps as f64;
    for k in 0..cfg.steps {
        let t = k as f64 * dt;
        let v = model.predict(ctx, &actions, t)?;
        actions = euler_step(&actions, &v, dt)?;
    }
    Ok(norm.denormalize(&actions))
}

/// Improved-DDPM cosine noise schedule, stored as cumulative `ᾱ` per step.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineSchedule {
    alpha_bar: Vec<f64>,
}

impl CosineSchedule {
    pub const DEFAULT_STEPS: usize = 100;

    pub fn new(steps: usize) -> Self {
        const S: f64 = 0.008;
        let f = |t: f64| ((t / steps as f64 + S) / (1.0 + S) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for i in 0..steps {
            let beta = (1.0 - f(i as f64 + 1.0) / f(i as f64)).min(0.999);
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        debug_assert!(f0 > 0.0);
        CosineSchedule { alpha_bar }
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }

    pub fn alpha_bar(&self, t_idx: usize) -> f64 {
        self.alpha_bar[t_idx]
    }

    /// Time fed to the model for diffusion step `t_idx`.
    pub fn model_time(&self, t_idx: usize) -> f64 {
        t_idx as f64 / self.len() as f64
    }

    /// Descending DDIM timesteps, `steps` of them, starting at `T - 1`.
    pub fn ddim_timesteps(&self, steps: usize) -> Vec<usize> {
        let t = self.len();
        let steps = steps.clamp(1, t);
        (0..steps).map(|i| t - 1 - i * t / steps).collect()
    }
}

impl Default for CosineSchedule {
    fn default() -> Self {
        CosineSchedule::new(Self::DEFAULT_STEPS)
    }
}

/// Forward diffusion of `a1` to step `t_idx`. Returns the noised sequence and
/// the injected noise (translation then rotation tangent per pose).
pub fn ddpm_target(
    a1: &ActionSequence,
    t_idx: usize,
    schedule: &CosineSchedule,
    rng: &mut impl Rng,
) -> Result<(ActionSequence, VelocitySequence)> {
    if t_idx >= schedule.len() {
        return Err(Error::invalid(format!(
            "diffusion step {t_idx} outside [0, {})",
            schedule.len()
        )));
    }
    let ab = schedule.alpha_bar(t_idx);
    let (signal, sigma) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut poses = Vec::with_capacity(a1.len());
    let mut noise = Vec::with_capacity(a1.len());
    for p in &a1.poses {
        let eps_p = standard_normal3(rng);
        let eps_r = standard_normal3(rng);
        poses.push(Pose::new(
            p.translation * signal + eps_p * sigma,
            p.rotation.compose(&Rotation::exp(&(eps_r * sigma))),
        ));
        noise.push(Twist::new(eps_p, eps_r));
    }
    Ok((ActionSequence { poses }, VelocitySequence { twists: noise }))
}

/// Deterministic DDIM (η = 0) sampler for an ε-prediction model. Rotations are
/// denoised in the tangent space at the current sample.
pub fn ddim_sample<M: ActionModel>(
    model: &M,
    ctx: &M::Context,
    schedule: &CosineSchedule,
    cfg: &SamplerConfig,
    norm: &Normalizer,
    rng: &mut impl Rng,
) -> Result<ActionSequence> {
    if cfg.steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    let mut actions = sample_noise(rng, cfg.horizon, cfg.sigma_rot);
    let timesteps = schedule.ddim_timesteps(cfg.steps);
    for (i, &t_idx) in timesteps.iter().enumerate() {
        let ab = schedule.alpha_bar(t_idx);
        let ab_prev = timesteps.get(i + 1).map_or(1.0, |&p| schedule.alpha_bar(p));
        let eps = model.predict(ctx, &actions, schedule.model_time(t_idx))?;
        check_len(actions.len(), eps.len(), "ddim_sample")?;
        let (sig, sig_prev) = ((1.0 - ab).sqrt(), (1.0 - ab_prev).sqrt());
        actions.poses = actions
            .poses
            .iter()
            .zip(&eps.twists)
            .map(|(p, e)| {
                let p1 = (p.translation - e.linear * sig) / ab.sqrt();
                let r1 = p.rotation.compose(&Rotation::exp(&(-e.angular * sig)));
                Pose::new(
                    p1 * ab_prev.sqrt() + e.linear * sig_prev,
                    r1.compose(&Rotation::exp(&(e.angular * sig_prev))),
                )
            })
            .collect();
    }
    Ok(norm.denormalize(&actions))
}
