//! Wrist-camera and event-tactile rendering.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{Observation, ScenarioConfig, StrikerTexture, WorldState, PLATE_WIDTH};
use crate::liegroup::Vec3;

/// Width of the camera footprint in meters.
const VIEW_SPAN: f64 = 0.12;
/// Local `x` of the view center.
const VIEW_CENTER_X: f64 = -0.03;
/// Local depth of the view center.
const VIEW_CENTER_Z: f64 = 0.1286;

const BACKGROUND: f32 = 0.15;
const PLATE: f32 = 0.45;
const PAPER: f32 = 0.6;
const DOT: f32 = 0.3;
const OUTLINE: f32 = 0.8;
const JAW: f32 = 0.7;
const MATCH: f32 = 0.95;
const HEAD: f32 = 1.0;

/// Normal-force changes below this (N) produce no events.
const FORCE_DEADBAND: f64 = 1e-9;

struct Camera {
    w: usize,
    h: usize,
    px: f64,
    cos_t: f64,
    sin_t: f64,
}

impl Camera {
    fn new(cfg: &ScenarioConfig) -> Self {
        let [h, w] = cfg.image_size;
        let t = cfg.camera_tilt_deg.to_radians();
        Camera {
            w,
            h,
            px: VIEW_SPAN / w as f64,
            cos_t: t.cos(),
            sin_t: t.sin(),
        }
    }

    /// Orthographic projection of an end-effector-frame point to pixel
    /// coordinates (column, row).
    fn project(&self, p: &Vec3) -> (f64, f64) {
        let u = (p.x - VIEW_CENTER_X) / self.px + self.w as f64 / 2.0;
        let v_m = p.y * self.cos_t + (p.z - VIEW_CENTER_Z) * self.sin_t;
        let v = v_m / self.px + self.h as f64 / 2.0;
        (u, v)
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, cover: f64, shade: f32) {
        if cover <= 0.0 {
            return;
        }
        let c = cover.min(1.0) as f32;
        let p = &mut self.px[y * self.w + x];
        *p = c * shade + (1.0 - c) * *p;
    }

    /// Anti-aliased stroke about 2 px wide.
    fn line(&mut self, a: (f64, f64), b: (f64, f64), shade: f32) {
        let (x0, x1) = (a.0.min(b.0) - 2.0, a.0.max(b.0) + 2.0);
        let (y0, y1) = (a.1.min(b.1) - 2.0, a.1.max(b.1) + 2.0);
        for y in clamp_range(y0, y1, self.h) {
            for x in clamp_range(x0, x1, self.w) {
                let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                self.blend(x, y, 1.5 - d, shade);
            }
        }
    }

    fn disc(&mut self, c: (f64, f64), r: f64, shade: f32) {
        for y in clamp_range(c.1 - r - 1.0, c.1 + r + 1.0, self.h) {
            for x in clamp_range(c.0 - r - 1.0, c.0 + r + 1.0, self.w) {
                let d = ((x as f64 + 0.5 - c.0).powi(2) + (y as f64 + 0.5 - c.1).powi(2)).sqrt();
                self.blend(x, y, r + 0.5 - d, shade);
            }
        }
    }

    /// Fills a convex quadrilateral with a one-pixel soft edge.
    fn quad(&mut self, q: [(f64, f64); 4], shade: f32) {
        let xs = q.iter().map(|p| p.0);
        let ys = q.iter().map(|p| p.1);
        let (x0, x1) = (xs.clone().fold(f64::MAX, f64::min), xs.fold(f64::MIN, f64::max));
        let (y0, y1) = (ys.clone().fold(f64::MAX, f64::min), ys.fold(f64::MIN, f64::max));
        let area: f64 = (0..4).map(|i| cross(q[i], q[(i + 1) % 4])).sum();
        let sign = area.signum();
        for y in clamp_range(y0 - 1.0, y1 + 1.0, self.h) {
            for x in clamp_range(x0 - 1.0, x1 + 1.0, self.w) {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = (0..4)
                    .map(|i| {
                        let (a, b) = (q[i], q[(i + 1) % 4]);
                        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt().max(1e-9);
                        sign * ((b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)) / len
                    })
                    .fold(f64::MAX, f64::min);
                self.blend(x, y, inside + 0.5, shade);
            }
        }
    }
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn clamp_range(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let lo = lo.floor().max(0.0) as usize;
    let hi = (hi.ceil().max(0.0) as usize).min(n);
    lo.min(hi)..hi
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn render_image(state: &WorldState, cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<f32> {
    let cam = Camera::new(cfg);
    let mut canvas = Canvas {
        w: cam.w,
        h: cam.h,
        px: vec![BACKGROUND; cam.w * cam.h],
    };
    let to_local = state.ee_pose.inverse();
    let s = &state.striker;
    let half_w = PLATE_WIDTH / 2.0;
    let side = Vec3::y() * half_w;
    let proj = |p: Vec3| cam.project(&to_local.transform_point(&p));
    let rect = |a: Vec3, b: Vec3| [proj(a - side), proj(b - side), proj(b + side), proj(a + side)];

    let plate = rect(s.a, s.b);
    canvas.quad(plate, PLATE);
    let paper = rect(s.paper_a, s.paper_b);
    canvas.quad(paper, PAPER);
    if cfg.striker_texture == StrikerTexture::Dotted {
        let pitch = 0.008;
        let n_along = ((s.paper_b - s.paper_a).norm() / pitch) as usize;
        let u = s.tangent();
        for i in 0..=n_along {
            for j in [-1.0, 0.0, 1.0] {
                let p = s.paper_a + u * (i as f64 * pitch) + Vec3::y() * (j * half_w * 0.6);
                canvas.disc(proj(p), 0.6, DOT);
            }
        }
    }
    for i in 0..4 {
        canvas.line(plate[i], plate[(i + 1) % 4], OUTLINE);
    }

    let base = state.match_base_local();
    for y in [-0.012, 0.012] {
        let a = Vec3::new(base.x - 0.008, y, base.z);
        let b = Vec3::new(base.x + 0.008, y, base.z);
        canvas.line(cam.project(&a), cam.project(&b), JAW);
    }
    let tip = state.tip_local();
    canvas.line(cam.project(&base), cam.project(&tip), MATCH);
    canvas.disc(cam.project(&tip), 1.2, HEAD);

    let gain = cfg.illumination as f32;
    let noise = (cfg.image_noise > 0.0).then(|| Normal::new(0.0, cfg.image_noise).expect("valid sigma"));
    canvas
        .px
        .into_iter()
        .map(|v| {
            let n = noise.map(|d| d.sample(rng) as f32).unwrap_or(0.0);
            (gain * (v + n)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Expected event totals `(positive, negative)` for the last step.
pub(super) fn event_rates(state: &WorldState, cfg: &ScenarioConfig) -> (f64, f64) {
    let (prev, now) = (&state.prev_contact, &state.contact);
    if !prev.in_contact && !now.in_contact {
        return (0.0, 0.0);
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    if prev.in_contact != now.in_contact {
        if now.in_contact {
            pos += cfg.tactile_onset_events;
        } else {
            neg += cfg.tactile_onset_events;
        }
    }
    let df = now.normal_force - prev.normal_force;
    if df > FORCE_DEADBAND {
        pos += cfg.tactile_force_rate * df;
    } else if df < -FORCE_DEADBAND {
        neg += cfg.tactile_force_rate * -df;
    }
    if prev.in_contact && now.in_contact {
        let cells = (now.contact_point - prev.contact_point).norm() / cfg.tactile_resolution;
        if cells >= 1.0 {
            pos += 0.5 * cfg.tactile_slide_rate * cells;
            neg += 0.5 * cfg.tactile_slide_rate * cells;
        }
    }
    (pos, neg)
}

fn render_tactile(state: &WorldState, cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<u16> {
    let [h, w] = cfg.tactile_size;
    let mut out = vec![0u16; 2 * h * w];
    let (pos, neg) = event_rates(state, cfg);
    if pos == 0.0 && neg == 0.0 {
        return out;
    }
    // the pressure center on the pad shifts with the grasp angle
    let cx = (w as f64 - 1.0) / 2.0 + 0.3 * state.grasp_angle().to_degrees();
    let cy = (h as f64 - 1.0) / 2.0;
    let sigma = 2.0;
    let mut weights: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    for (ch, rate) in [pos, neg].into_iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        for (cell, &wgt) in weights.iter().enumerate() {
            let lambda = rate * wgt;
            if lambda > 1e-12 {
                let k: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
                out[ch * h * w + cell] = k.min(u16::MAX as f64) as u16;
            }
        }
    }
    out
}

/// Renders the camera image, the event-tactile frame for the last step and
/// the proprioceptive twist.
pub fn render_observation(state: &WorldState, cfg: &ScenarioConfig, rng: &mut impl Rng) -> Observation {
    Observation {
        image: render_image(state, cfg, rng),
        tactile: render_tactile(state, cfg, rng),
        proprio: state.ee_velocity.to_array(),
    }
}
