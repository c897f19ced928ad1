//! Planar match-striking simulator.
//!
//! The end effector moves in the vertical `x`–`z` plane. A striker plate is
//! tilted by the mount angle about the world `y` axis; the match is held in
//! the gripper with a per-episode grasp offset. Contact is a penalty spring on
//! the match tip's penetration into the plate, and the match lights once the
//! tip has been dragged across the striker paper fast enough, with a force in
//! the allowed window, for two consecutive steps.
//!
//! End-effector frame convention: local `x` runs along the striker (sweep
//! direction), local `z` points into the plate, local `y` is the plane normal.

mod expert;
mod render;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::liegroup::{Pose, Rotation, Twist, Vec3};

pub use expert::scripted_expert;
pub use render::render_observation;

/// Control period in seconds (25 Hz).
pub const DT: f64 = 0.04;

/// Grasp point in the end-effector frame.
pub const GRASP_POINT: [f64; 3] = [0.0, 0.0, 0.04];
/// Match length from grasp point to tip.
pub const MATCH_LENGTH: f64 = 0.07;
/// Angle between the match and the local approach axis, tilted backwards
/// against the sweep direction.
pub const MATCH_TILT_DEG: f64 = 40.0;
/// Striker plate geometry: half-lengths of the plate and the paper strip on
/// it, and the plate width along `y`.
pub const PLATE_HALF_LENGTH: f64 = 0.07;
pub const PAPER_HALF_LENGTH: f64 = 0.04;
pub const PLATE_WIDTH: f64 = 0.04;
/// Plate center in the world.
pub const PLATE_CENTER: [f64; 3] = [0.0, 0.0, 0.10];
/// Nominal tip start: along-striker coordinate and height above the plate.
pub const START_TANGENT: f64 = -0.025;
pub const START_HEIGHT: f64 = 0.035;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraspVariation {
    Fixed,
    Variable {
        translation_range: f64,
        rotation_range_deg: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrikerTexture {
    Plain,
    Dotted,
}

impl FromStr for StrikerTexture {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(StrikerTexture::Plain),
            "dotted" => Ok(StrikerTexture::Dotted),
            _ => Err(format!("unknown texture `{s}` (plain, dotted)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub grasp: GraspVariation,
    pub mount_angle_deg: f64,
    pub striker_texture: StrikerTexture,
    pub illumination: f64,
    pub seed: u64,
    /// Contact stiffness, N/m.
    pub k_n: f64,
    pub force_min: f64,
    pub force_max: f64,
    /// Minimum tangential tip speed for ignition, m/s.
    pub speed_min: f64,
    pub max_step_translation: f64,
    pub max_step_rotation_deg: f64,
    pub timeout_s: f64,
    pub image_size: [usize; 2],
    pub tactile_size: [usize; 2],
    pub camera_tilt_deg: f64,
    /// Standard deviation of additive pixel noise before the illumination gain.
    pub image_noise: f64,
    /// Expected events on contact onset or release.
    pub tactile_onset_events: f64,
    /// Expected events per newton of normal-force change.
    pub tactile_force_rate: f64,
    /// Expected events per tactile cell of contact-point travel.
    pub tactile_slide_rate: f64,
    /// Tactile cell pitch in meters.
    pub tactile_resolution: f64,
    pub expert_jitter_translation: f64,
    pub expert_jitter_rotation_deg: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grasp: GraspVariation::Fixed,
            mount_angle_deg: 20.0,
            striker_texture: StrikerTexture::Plain,
            illumination: 1.0,
            seed: 0,
            k_n: 400.0,
            force_min: 1.0,
            force_max: 8.0,
            speed_min: 0.15,
            max_step_translation: 0.02,
            max_step_rotation_deg: 5.0,
            timeout_s: 10.0,
            image_size: [48, 48],
            tactile_size: [16, 16],
            camera_tilt_deg: 12.0,
            image_noise: 0.02,
            tactile_onset_events: 20.0,
            tactile_force_rate: 10.0,
            tactile_slide_rate: 2.0,
            tactile_resolution: 0.001,
            expert_jitter_translation: 0.001,
            expert_jitter_rotation_deg: 0.5,
        }
    }
}

impl ScenarioConfig {
    pub fn variable() -> Self {
        ScenarioConfig {
            grasp: GraspVariation::Variable {
                translation_range: 0.01,
                rotation_range_deg: 10.0,
            },
            ..Default::default()
        }
    }

    /// Reads scenario keys from `kv`, leaving other keys in place.
    pub fn from_kv(kv: &mut KvConfig) -> Result<Self> {
        let d = ScenarioConfig::default();
        let grasp = match kv.take_str("grasp").as_deref() {
            None | Some("fixed") => GraspVariation::Fixed,
            Some("variable") => GraspVariation::Variable {
                translation_range: 0.01,
                rotation_range_deg: 10.0,
            },
            Some(other) => return Err(Error::config("grasp", format!("expected fixed or variable, got `{other}`"))),
        };
        let grasp = match grasp {
            GraspVariation::Variable {
                translation_range,
                rotation_range_deg,
            } => GraspVariation::Variable {
                translation_range: kv.take_or("grasp_translation_range", translation_range)?,
                rotation_range_deg: kv.take_or("grasp_rotation_range_deg", rotation_range_deg)?,
            },
            GraspVariation::Fixed => GraspVariation::Fixed,
        };
        let pair = |kv: &mut KvConfig, key: &str, def: [usize; 2]| -> Result<[usize; 2]> {
            match kv.take_list::<usize>(key)? {
                None => Ok(def),
                Some(v) if v.len() == 2 => Ok([v[0], v[1]]),
                Some(_) => Err(Error::config(key, "expected two comma-separated sizes")),
            }
        };
        let cfg = ScenarioConfig {
            grasp,
            mount_angle_deg: kv.take_or("mount_angle_deg", d.mount_angle_deg)?,
            striker_texture: kv.take_or("striker_texture", d.striker_texture)?,
            illumination: kv.take_or("illumination", d.illumination)?,
            seed: kv.take_or("seed", d.seed)?,
            k_n: kv.take_or("k_n", d.k_n)?,
            force_min: kv.take_or("force_min", d.force_min)?,
            force_max: kv.take_or("force_max", d.force_max)?,
            speed_min: kv.take_or("speed_min", d.speed_min)?,
            max_step_translation: kv.take_or("max_step_translation", d.max_step_translation)?,
            max_step_rotation_deg: kv.take_or("max_step_rotation_deg", d.max_step_rotation_deg)?,
            timeout_s: kv.take_or("timeout_s", d.timeout_s)?,
            image_size: pair(kv, "image_size", d.image_size)?,
            tactile_size: pair(kv, "tactile_size", d.tactile_size)?,
            camera_tilt_deg: kv.take_or("camera_tilt_deg", d.camera_tilt_deg)?,
            image_noise: kv.take_or("image_noise", d.image_noise)?,
            tactile_onset_events: kv.take_or("tactile_onset_events", d.tactile_onset_events)?,
            tactile_force_rate: kv.take_or("tactile_force_rate", d.tactile_force_rate)?,
            tactile_slide_rate: kv.take_or("tactile_slide_rate", d.tactile_slide_rate)?,
            tactile_resolution: kv.take_or("tactile_resolution", d.tactile_resolution)?,
            expert_jitter_translation: kv.take_or("expert_jitter_translation", d.expert_jitter_translation)?,
            expert_jitter_rotation_deg: kv.take_or("expert_jitter_rotation_deg", d.expert_jitter_rotation_deg)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));
        if !(0.0..=45.0).contains(&self.mount_angle_deg) {
            return bad("mount_angle_deg", "must lie in [0, 45]");
        }
        if let GraspVariation::Variable {
            translation_range,
            rotation_range_deg,
        } = self.grasp
        {
            if !(0.0..=0.02).contains(&translation_range) {
                return bad("grasp_translation_range", "must lie in [0, 0.02] m");
            }
            if !(0.0..=30.0).contains(&rotation_range_deg) {
                return bad("grasp_rotation_range_deg", "must lie in [0, 30] degrees");
            }
        }
        if !(self.illumination > 0.0) {
            return bad("illumination", "must be positive");
        }
        if !(self.k_n > 0.0) {
            return bad("k_n", "must be positive");
        }
        if !(self.force_min >= 0.0 && self.force_max > self.force_min) {
            return bad("force_max", "need 0 <= force_min < force_max");
        }
        if !(self.speed_min >= 0.0) {
            return bad("speed_min", "must be nonnegative");
        }
        if !(self.max_step_translation > 0.0 && self.max_step_rotation_deg > 0.0) {
            return bad("max_step_translation", "step clamps must be positive");
        }
        if !(self.timeout_s >= 2.0 * DT) {
            return bad("timeout_s", "must allow at least two steps");
        }
        if self.image_size.contains(&0) || self.tactile_size.contains(&0) {
            return bad("image_size", "sizes must be positive");
        }
        if !(0.0..90.0).contains(&self.camera_tilt_deg) {
            return bad("camera_tilt_deg", "must lie in [0, 90)");
        }
        let rates = [
            self.image_noise,
            self.tactile_onset_events,
            self.tactile_force_rate,
            self.tactile_slide_rate,
            self.expert_jitter_translation,
            self.expert_jitter_rotation_deg,
        ];
        if rates.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("tactile_force_rate", "noise levels and rates must be finite and nonnegative");
        }
        if !(self.tactile_resolution > 0.0) {
            return bad("tactile_resolution", "must be positive");
        }
        Ok(())
    }

    /// Number of steps until timeout.
    pub fn max_steps(&self) -> usize {
        (self.timeout_s / DT).round() as usize
    }

    pub fn without_jitter(&self) -> Self {
        ScenarioConfig {
            expert_jitter_translation: 0.0,
            expert_jitter_rotation_deg: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchState {
    Unlit,
    Lit,
    Slipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    WrongLocation,
    NoContact,
    InsufficientForce,
    TooMuchForce,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::Success,
        Outcome::WrongLocation,
        Outcome::NoContact,
        Outcome::InsufficientForce,
        Outcome::TooMuchForce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::WrongLocation => "wrong_location",
            Outcome::NoContact => "no_contact",
            Outcome::InsufficientForce => "insufficient_force",
            Outcome::TooMuchForce => "too_much_force",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}

/// Striker geometry and ignition thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Striker {
    pub mount_angle_deg: f64,
    /// Plate end points.
    pub a: Vec3,
    pub b: Vec3,
    /// Ends of the striker paper (the valid sub-segment).
    pub paper_a: Vec3,
    pub paper_b: Vec3,
    pub force_min: f64,
    pub force_max: f64,
    pub speed_min: f64,
    pub k_n: f64,
}

impl Striker {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let center = Vec3::from(PLATE_CENTER);
        let u = Self::tangent_for(cfg.mount_angle_deg);
        Striker {
            mount_angle_deg: cfg.mount_angle_deg,
            a: center - u * PLATE_HALF_LENGTH,
            b: center + u * PLATE_HALF_LENGTH,
            paper_a: center - u * PAPER_HALF_LENGTH,
            paper_b: center + u * PAPER_HALF_LENGTH,
            force_min: cfg.force_min,
            force_max: cfg.force_max,
            speed_min: cfg.speed_min,
            k_n: cfg.k_n,
        }
    }

    fn tangent_for(angle_deg: f64) -> Vec3 {
        let a = angle_deg.to_radians();
        Vec3::new(a.cos(), 0.0, a.sin())
    }

    pub fn center(&self) -> Vec3 {
        (self.a + self.b) * 0.5
    }

    /// Unit vector along the plate.
    pub fn tangent(&self) -> Vec3 {
        (self.b - self.a).normalize()
    }

    /// Outward plate normal.
    pub fn normal(&self) -> Vec3 {
        let u = self.tangent();
        Vec3::new(-u.z, 0.0, u.x)
    }

    /// Along-plate coordinate of `p` relative to the plate center.
    pub fn tangent_coord(&self, p: &Vec3) -> f64 {
        (p - self.center()).dot(&self.tangent())
    }

    /// Signed height of `p` above the plate surface.
    pub fn height(&self, p: &Vec3) -> f64 {
        (p - self.center()).dot(&self.normal())
    }

    pub fn half_length(&self) -> f64 {
        (self.b - self.a).norm() * 0.5
    }

    pub fn paper_half_length(&self) -> f64 {
        (self.paper_b - self.paper_a).norm() * 0.5
    }

    /// Nominal end-effector orientation: local `x` along the plate, local `z`
    /// into it.
    pub fn nominal_rotation(&self) -> Rotation {
        let alpha = self.mount_angle_deg.to_radians();
        Rotation::about_y(-alpha).compose(&Rotation::about_x(std::f64::consts::PI))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub in_contact: bool,
    pub normal_force: f64,
    pub tangential_speed: f64,
    pub contact_point: Vec3,
    pub penetration: f64,
    /// Contact point lies on the striker paper.
    pub on_paper: bool,
    /// The match shaft, not the tip, touches the plate.
    pub shaft: bool,
}

/// Running facts about an episode used by the outcome taxonomy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactSummary {
    pub ever_contact: bool,
    pub wrong_location: bool,
    /// Steps with the tip in contact.
    pub contact_steps: usize,
    pub max_force: f64,
    /// Accumulated along-plate tip travel, meters.
    pub sweep: f64,
}

impl ContactSummary {
    pub fn update(&mut self, contact: &Contact, tangent_travel: f64) {
        if contact.in_contact {
            self.ever_contact = true;
            if !contact.on_paper || contact.shaft {
                self.wrong_location = true;
            }
            if !contact.shaft {
                self.contact_steps += 1;
            }
        }
        self.max_force = self.max_force.max(contact.normal_force);
        self.sweep += tangent_travel.abs();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee_pose: Pose,
    /// End-effector velocity over the last step, per second, in the
    /// end-effector frame.
    pub ee_velocity: Twist,
    /// Match pose relative to its nominal placement in the gripper.
    pub grasp_offset: Pose,
    pub striker: Striker,
    pub match_state: MatchState,
    pub contact: Contact,
    pub prev_contact: Contact,
    pub time: f64,
    pub step: usize,
    /// Consecutive steps meeting the ignition predicate.
    pub qualifying_steps: usize,
    pub summary: ContactSummary,
}

impl WorldState {
    /// Grasp point in the end-effector frame.
    pub fn match_base_local(&self) -> Vec3 {
        Vec3::from(GRASP_POINT) + self.grasp_offset.translation
    }

    /// Match tip in the end-effector frame.
    pub fn tip_local(&self) -> Vec3 {
        let tilt = MATCH_TILT_DEG.to_radians();
        let dir = Vec3::new(-tilt.sin(), 0.0, tilt.cos());
        self.match_base_local() + self.grasp_offset.rotation.rotate(&(dir * MATCH_LENGTH))
    }

    pub fn tip(&self) -> Vec3 {
        self.ee_pose.transform_point(&self.tip_local())
    }

    pub fn match_base(&self) -> Vec3 {
        self.ee_pose.transform_point(&self.match_base_local())
    }

    /// Grasp rotation offset about the plane normal, radians.
    pub fn grasp_angle(&self) -> f64 {
        self.grasp_offset.rotation.log().y
    }

    pub fn terminated(&self, cfg: &ScenarioConfig) -> bool {
        self.match_state != MatchState::Unlit || self.step >= cfg.max_steps()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `[H, W]` grayscale in `[0, 1]`.
    pub image: Vec<f32>,
    /// `[2, H, W]` positive and negative event counts.
    pub tactile: Vec<u16>,
    /// End-effector twist `[vx, vy, vz, wx, wy, wz]`.
    pub proprio: [f64; 6],
}

fn compute_contact(state: &WorldState) -> Contact {
    let s = &state.striker;
    let tip = state.tip();
    let base = state.match_base();
    let half = s.half_length();
    let within = |p: &Vec3| s.tangent_coord(p).abs() <= half;
    let tip_h = s.height(&tip);
    let base_h = s.height(&base);
    let tau = s.tangent_coord(&tip);
    let point = |p: &Vec3| s.center() + s.tangent() * s.tangent_coord(p);
    if tip_h < 0.0 && within(&tip) {
        let pen = -tip_h;
        return Contact {
            in_contact: true,
            normal_force: s.k_n * pen,
            tangential_speed: 0.0,
            contact_point: point(&tip),
            penetration: pen,
            on_paper: tau.abs() <= s.paper_half_length(),
            shaft: false,
        };
    }
    if base_h < 0.0 && within(&base) {
        let pen = -base_h;
        return Contact {
            in_contact: true,
            normal_force: s.k_n * pen,
            tangential_speed: 0.0,
            contact_point: point(&base),
            penetration: pen,
            on_paper: false,
            shaft: true,
        };
    }
    Contact::default()
}

/// Deterministic simulator: the scenario, the world state and the sensor
/// noise stream.
#[derive(Clone, Debug)]
pub struct Simulator {
    cfg: ScenarioConfig,
    state: WorldState,
    rng: ChaCha8Rng,
    render: bool,
}

impl Simulator {
    /// Samples a grasp offset and places the end effector at the nominal
    /// pre-strike pose.
    pub fn reset(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<(Simulator, Observation)> {
        cfg.validate()?;
        let grasp_offset = match cfg.grasp {
            GraspVariation::Fixed => Pose::identity(),
            GraspVariation::Variable {
                translation_range: tr,
                rotation_range_deg: rr,
            } => {
                let mut u = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
                let (dx, dz) = (u(tr), u(tr));
                let theta = u(rr).to_radians();
                Pose::new(Vec3::new(dx, 0.0, dz), Rotation::about_y(theta))
            }
        };
        let striker = Striker::new(cfg);
        let rotation = striker.nominal_rotation();
        let nominal = WorldState {
            ee_pose: Pose::new(Vec3::zeros(), rotation),
            ee_velocity: Twist::zero(),
            grasp_offset: Pose::identity(),
            striker: striker.clone(),
            match_state: MatchState::Unlit,
            contact: Contact::default(),
            prev_contact: Contact::default(),
            time: 0.0,
            step: 0,
            qualifying_steps: 0,
            summary: ContactSummary::default(),
        };
        let tip_target = striker.center() + striker.tangent() * START_TANGENT + striker.normal() * START_HEIGHT;
        let ee_translation = tip_target - rotation.rotate(&nominal.tip_local());
        let mut state = WorldState {
            ee_pose: Pose::new(ee_translation, rotation),
            grasp_offset,
            ..nominal
        };
        state.contact = compute_contact(&state);
        state.prev_contact = state.contact;
        let mut sim = Simulator {
            cfg: cfg.clone(),
            state,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            render: true,
        };
        let obs = sim.observe();
        Ok((sim, obs))
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Disables image and tactile rendering (observations come back empty);
    /// used for fast fuzzing of the dynamics.
    pub fn set_render(&mut self, on: bool) {
        self.render = on;
    }

    fn observe(&mut self) -> Observation {
        if self.render {
            render_observation(&self.state, &self.cfg, &mut self.rng)
        } else {
            Observation {
                image: Vec::new(),
                tactile: Vec::new(),
                proprio: self.state.ee_velocity.to_array(),
            }
        }
    }

    /// Advances one control period toward `target`, a pose relative to the
    /// current end-effector frame. Returns the new observation and, when the
    /// episode ended, its outcome.
    pub fn step(&mut self, target: &Pose) -> Result<(Observation, Option<Outcome>)> {
        if !target.is_finite() {
            return Err(Error::invalid("non-finite target pose"));
        }
        if self.state.terminated(&self.cfg) {
            return Err(Error::Sim("step after termination".into()));
        }
        let st = &mut self.state;
        let ee = st.ee_pose;
        let goal = ee.compose(target);

        // translation restricted to the plane, clamped
        let mut dp = goal.translation - ee.translation;
        dp.y = 0.0;
        let n = dp.norm();
        if n > self.cfg.max_step_translation {
            dp *= self.cfg.max_step_translation / n;
        }
        // rotation restricted to the plane normal, clamped
        let axis = ee.rotation.inverse().rotate(&Vec3::y());
        let w = ee.rotation.inverse().compose(&goal.rotation).log();
        let mut angle = w.dot(&axis);
        let max_rot = self.cfg.max_step_rotation_deg.to_radians();
        angle = angle.clamp(-max_rot, max_rot);
        let rotation = if angle == 0.0 {
            ee.rotation
        } else {
            ee.rotation.compose(&Rotation::exp(&(axis * angle)))
        };
        let new_pose = Pose::new(ee.translation + dp, rotation);

        let tau_before = st.striker.tangent_coord(&st.tip());
        st.ee_pose = new_pose;
        st.ee_velocity = Twist::new(rotation.inverse().rotate(&dp) / DT, axis * (angle / DT));
        st.step += 1;
        st.time = st.step as f64 * DT;
        let tau_after = st.striker.tangent_coord(&st.tip());
        let travel = tau_after - tau_before;

        st.prev_contact = st.contact;
        let mut contact = compute_contact(st);
        if contact.in_contact {
            contact.tangential_speed = travel.abs() / DT;
        }
        st.contact = contact;
        st.summary.update(&contact, travel);

        if contact.normal_force > st.striker.force_max {
            st.match_state = MatchState::Slipped;
        } else {
            let s = &st.striker;
            let qualifies = contact.in_contact
                && !contact.shaft
                && contact.on_paper
                && contact.normal_force >= s.force_min
                && contact.tangential_speed >= s.speed_min;
            st.qualifying_steps = if qualifies { st.qualifying_steps + 1 } else { 0 };
            if st.qualifying_steps >= 2 {
                st.match_state = MatchState::Lit;
            }
        }

        let outcome = self
            .state
            .terminated(&self.cfg)
            .then(|| classify(self.state.match_state, &self.state.summary));
        let obs = self.observe();
        Ok((obs, outcome))
    }
}

/// Outcome taxonomy from the final match state and the contact history.
pub fn classify(state: MatchState, summary: &ContactSummary) -> Outcome {
    match state {
        MatchState::Lit => Outcome::Success,
        MatchState::Slipped => Outcome::TooMuchForce,
        MatchState::Unlit if !summary.ever_contact => Outcome::NoContact,
        MatchState::Unlit if summary.wrong_location => Outcome::WrongLocation,
        MatchState::Unlit => Outcome::InsufficientForce,
    }
}

#[cfg(test)]
mod tests;
