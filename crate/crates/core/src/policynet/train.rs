//! Training objectives, gradient accumulation and the Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{c, to_f64, Scalar};
use super::{action_features, apply_modality_mask, NetInput, Objective, PolicyNet, ACTION_FEATURES, HEAD_OUT};
use crate::error::{Error, Result};
use crate::flowmatch::{
    ddpm_target, interpolate, sample_noise, target_velocity, ActionSequence, CosineSchedule, TRAIN_TIME_MAX,
};
use crate::liegroup::{right_jacobian, Rotation, Vec3};
use crate::par::{self, Exec};

/// One (observation, demonstrated action sequence) pair. The target is in
/// normalized translation units.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample<T> {
    pub input: NetInput<T>,
    pub target: ActionSequence,
}

#[derive(Clone, Debug, PartialEq)]
enum Target {
    /// `[horizon, 6]` regression target (velocity or injected noise).
    Vector(Vec<f64>),
    /// Demonstrated poses for the direct-regression objective.
    Poses(ActionSequence),
}

/// An example with its stochastic training inputs (noise, time, masking)
/// already drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample<T> {
    pub input: NetInput<T>,
    pub action_feats: Vec<T>,
    pub time: f64,
    target: Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub objective: Objective,
    pub sigma_rot: f64,
    /// Probability of dropping the tactile input; zero disables masking.
    pub p_mask: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            objective: Objective::Flow,
            sigma_rot: 1.0,
            p_mask: 0.0,
        }
    }
}

/// Draws noise, flow time (or diffusion step) and the tactile mask for one
/// example. Returns the prepared example and whether tactile was dropped.
pub fn prepare<T: Scalar>(
    example: &TrainExample<T>,
    cfg: &PrepareConfig,
    schedule: &CosineSchedule,
    rng: &mut impl Rng,
) -> Result<(PreparedExample<T>, bool)> {
    let mut input = example.input.clone();
    let dropped = cfg.p_mask > 0.0 && input.tactile.is_some() && apply_modality_mask(&mut input, cfg.p_mask, rng);
    let n = example.target.len();
    let a1 = &example.target;
    let prepared = match cfg.objective {
        Objective::Flow => {
            let t = rng.random_range(0.0..=TRAIN_TIME_MAX);
            let a0 = sample_noise(rng, n, cfg.sigma_rot);
            let at = interpolate(&a0, a1, t)?;
            let v = target_velocity(&at, a1, t)?;
            PreparedExample {
                input,
                action_feats: action_features(&at),
                time: t,
                target: Target::Vector(v.to_flat()),
            }
        }
        Objective::Ddpm => {
            let t_idx = rng.random_range(0..schedule.len());
            let (noised, eps) = ddpm_target(a1, t_idx, schedule, rng)?;
            PreparedExample {
                input,
                action_feats: action_features(&noised),
                time: schedule.model_time(t_idx),
                target: Target::Vector(eps.to_flat()),
            }
        }
        Objective::Bc => PreparedExample {
            input,
            action_feats: vec![T::zero(); n * ACTION_FEATURES],
            time: 0.0,
            target: Target::Poses(a1.clone()),
        },
    };
    Ok((prepared, dropped))
}

/// Decodes a direct-regression head output row into a pose.
pub fn head_to_pose(row: &[f64]) -> crate::liegroup::Pose {
    crate::liegroup::Pose::new(
        Vec3::new(row[0], row[1], row[2]),
        Rotation::exp(&Vec3::new(row[3], row[4], row[5])),
    )
}

/// Loss of one prepared example; accumulates `scale · dL/dθ` into `grads`
/// when given.
pub fn example_loss<T: Scalar>(
    net: &PolicyNet,
    params: &[T],
    ex: &PreparedExample<T>,
    grads: Option<(&mut [T], f64)>,
) -> Result<f64> {
    let (out, cache) = net.forward_train(params, &ex.input, &ex.action_feats, ex.time)?;
    let out: Vec<f64> = out.iter().map(|&v| to_f64(v)).collect();
    let n = out.len() / HEAD_OUT;
    let inv_n = 1.0 / n as f64;
    let mut d_out = vec![0.0; out.len()];
    let loss = match &ex.target {
        Target::Vector(target) => {
            let mut s = 0.0;
            for ((o, t), d) in out.iter().zip(target).zip(d_out.iter_mut()) {
                let e = o - t;
                s += e * e;
                *d = 2.0 * e * inv_n;
            }
            s * inv_n
        }
        Target::Poses(demo) => {
            let mut s = 0.0;
            for ((row, p), d) in out.chunks_exact(HEAD_OUT).zip(&demo.poses).zip(d_out.chunks_exact_mut(HEAD_OUT)) {
                let dp = Vec3::new(row[0], row[1], row[2]) - p.translation;
                let w = Vec3::new(row[3], row[4], row[5]);
                let e = Rotation::exp(&w).inverse().compose(&p.rotation).log();
                s += dp.norm_squared() + e.norm_squared();
                let dw = -2.0 * right_jacobian(&w).transpose() * e;
                for i in 0..3 {
                    d[i] = 2.0 * dp[i] * inv_n;
                    d[3 + i] = dw[i] * inv_n;
                }
            }
            s * inv_n
        }
    };
    if !loss.is_finite() {
        return Err(Error::numeric(None, "non-finite loss"));
    }
    if let Some((g, scale)) = grads {
        let d: Vec<T> = d_out.iter().map(|&v| c(v * scale)).collect();
        net.backward(params, &cache, &d, g);
    }
    Ok(loss)
}

/// Mean loss and gradient over a batch. Per-example work is scheduled by
/// `exec`; the reduction order is fixed so results do not depend on it.
pub fn batch_loss_grad<T: Scalar>(
    net: &PolicyNet,
    params: &[T],
    batch: &[PreparedExample<T>],
    exec: Exec,
) -> Result<(f64, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts = par::map(exec, batch, |ex| {
        let mut g = vec![T::zero(); params.len()];
        example_loss(net, params, ex, Some((&mut g, scale))).map(|l| (l, g))
    });
    let mut total = vec![T::zero(); params.len()];
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l * scale;
        for (a, b) in total.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, total))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam {
            cfg,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T]) {
        self.update_with_lr(params, grads, self.cfg.lr);
    }

    pub fn update_with_lr(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        let norm = grads.iter().map(|&g| to_f64(g).powi(2)).sum::<f64>().sqrt();
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let step_size = c::<T>(lr * bc2.sqrt() / bc1);
        let (b1t, b2t) = (c::<T>(b1), c::<T>(b2));
        let (one_b1, one_b2) = (c::<T>(1.0 - b1), c::<T>(1.0 - b2));
        let eps = c::<T>(self.cfg.eps * bc2.sqrt());
        let clip = c::<T>(clip);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g * clip;
            *m = b1t * *m + one_b1 * g;
            *v = b2t * *v + one_b2 * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        }
    }
}

/// One optimizer step on a prepared batch. Returns the batch loss before the
/// update.
pub fn train_step<T: Scalar>(
    net: &PolicyNet,
    params: &mut [T],
    opt: &mut Adam<T>,
    batch: &[PreparedExample<T>],
    exec: Exec,
) -> Result<f64> {
    let (loss, grads) = batch_loss_grad(net, params, batch, exec)?;
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric(None, format!("non-finite loss or gradient (loss {loss})")));
    }
    opt.update(params, &grads);
    Ok(loss)
}
