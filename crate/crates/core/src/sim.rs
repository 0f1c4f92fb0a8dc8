//! Deterministic scenario generator and error metrics.
//!
//! A scripted person walks up to each object, reaches for it, drags or
//! swings it while holding on, lets go and walks on. The generator returns
//! the ground truth and the sensor streams the pipeline consumes: drifting
//! IMU body parameters in the IMU frame, noisy camera localizations with
//! confidences, object observations outside interactions, and contact
//! labels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, BodyParams, Vertex};
use crate::fuse::LocalizationStream;
use crate::geometry::{so3, wrap_angle, RigidTransform3, TimedPose, Vec2, Vec3};
use crate::object::{Hand, HandSet, InteractionLabel, MotionModel, ObjectModel, ObjectObservation, PerHand};
use crate::pipeline::{ObjectInteraction, ObjectStream, ObjectTrack, Sequence, Solution};
use crate::{Error, Result};

/// Hand-to-contact tolerance checked at generation.
pub const CONTACT_TOL: f64 = 1e-9;

/// Localization confidence inside and outside interactions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub inside: f64,
    pub outside: f64,
}

/// How the object moves while held. Shifts are in the world XY plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObjectMotion {
    /// Planar drag: the object centre follows a bowed path to `shift` while
    /// turning by `turn`. `bulge` is the sideways excursion at mid path.
    Drag { shift: Vec2, turn: f64, bulge: f64 },
    /// Rotation about the hinge by `angle`.
    Swing { angle: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedInteraction {
    pub hands: HandSet,
    /// Contact points in the object frame.
    pub contacts: PerHand<Vec3>,
    /// Body heading relative to the object heading while holding it.
    pub stance_yaw: f64,
    /// Forward distance from the pelvis axis to the hands (meters).
    pub reach: f64,
    pub duration: f64,
    pub motion: ObjectMotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioObject {
    pub model: ObjectModel,
    pub initial_pose: RigidTransform3,
    pub interaction: ScriptedInteraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Total length (seconds). The script must fit.
    pub duration: f64,
    pub frame_rate: f64,
    /// One camera localization every this many IMU frames.
    pub camera_stride: usize,
    /// Position drift per meter travelled.
    pub drift_rate: f64,
    /// Heading drift (radians per second).
    pub drift_rot_rate: f64,
    pub loc_noise_sigma: f64,
    /// Rotation noise of localizations and object observations (radians).
    pub loc_rot_noise_sigma: f64,
    pub loc_confidence: ConfidenceModel,
    pub outlier_fraction: f64,
    /// Per-axis spread of outlier positions (meters).
    pub outlier_sigma: f64,
    pub true_x_wz: RigidTransform3,
    pub true_x_ic: RigidTransform3,
    /// Camera clock minus IMU clock (seconds).
    pub time_offset: f64,
    /// Start position and heading of the walk.
    pub start: Vec3,
    pub walk_speed: f64,
    /// Shortest walk to the first object (seconds).
    pub lead_in: f64,
    pub reach_time: f64,
    /// Where the person walks after the last interaction.
    pub exit: Vec2,
    /// Amplitude of head nodding and turning (radians).
    pub head_motion: f64,
    pub objects: Vec<ScenarioObject>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::table(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub times: Vec<f64>,
    /// Body parameters in the scene frame.
    pub body: Vec<BodyParams>,
    pub objects: Vec<ObjectTrack>,
    /// Head sensor poses in the scene frame.
    pub head: Vec<RigidTransform3>,
    pub interactions: Vec<ObjectInteraction>,
}

impl GroundTruth {
    pub fn solution(&self) -> Solution {
        Solution {
            times: self.times.clone(),
            body: self.body.clone(),
            objects: self.objects.clone(),
        }
    }
}

/// A cart with a push bar at hand height, pushed with both hands.
pub fn cart_model(id: &str) -> ObjectModel {
    let mut points = Vec::new();
    for i in 0..5 {
        for j in 0..4 {
            points.push(Vec3::new(
                -0.5 + 0.25 * i as f64,
                -0.35 + 0.7 / 3.0 * j as f64,
                0.8,
            ));
        }
    }
    for (x, y) in [(-0.5, -0.35), (0.5, -0.35), (0.5, 0.35), (-0.5, 0.35)] {
        points.push(Vec3::new(x, y, 0.0));
    }
    for k in 0..11 {
        points.push(Vec3::new(-0.6, -0.3 + 0.06 * k as f64, 1.0));
    }
    ObjectModel {
        id: id.into(),
        points,
        motion_model: MotionModel::PlanarFree,
        hinge_point: None,
        scan_pose: None,
    }
}

/// Door panel 0.9 m wide and 2 m high with its frame at the panel centre,
/// the hinge on the left edge and a handle near the right edge.
pub fn door_model(id: &str, pose: &RigidTransform3) -> ObjectModel {
    let mut points = Vec::new();
    for i in 0..6 {
        for j in 0..8 {
            points.push(Vec3::new(-0.45 + 0.18 * i as f64, 0.0, 2.0 / 7.0 * j as f64));
        }
    }
    points.push(DOOR_HANDLE);
    ObjectModel {
        id: id.into(),
        points,
        motion_model: MotionModel::Hinged,
        hinge_point: Some(pose.transform_point(&Vec3::new(-0.45, 0.0, 0.0))),
        scan_pose: None,
    }
}

const DOOR_HANDLE: Vec3 = Vec3::new(0.35, -0.06, 1.0);

impl ScenarioConfig {
    fn base(seed: u64) -> Self {
        Self {
            seed,
            duration: 24.0,
            frame_rate: 60.0,
            camera_stride: 6,
            drift_rate: 0.01,
            drift_rot_rate: 0.002,
            loc_noise_sigma: 0.05,
            loc_rot_noise_sigma: 0.01,
            loc_confidence: ConfidenceModel {
                inside: 0.3,
                outside: 0.9,
            },
            outlier_fraction: 0.05,
            outlier_sigma: 1.0,
            true_x_wz: RigidTransform3::planar(0.7, Vec3::new(2.0, -1.0, 0.05)),
            true_x_ic: RigidTransform3::from_axis_angle(
                Vec3::new(0.1, -0.2, 0.05),
                Vec3::new(0.08, 0.02, 0.1),
            ),
            time_offset: 6.0 / 60.0,
            start: Vec3::zeros(),
            walk_speed: 1.0,
            lead_in: 9.0,
            reach_time: 0.6,
            exit: Vec2::zeros(),
            head_motion: 0.15,
            objects: Vec::new(),
        }
    }

    /// Places an object about eight meters from a random start, with a
    /// curved approach.
    fn place(rng: &mut ChaCha8Rng, cfg: &mut Self, stance: &RigidTransform3) {
        let dir = rng.random_range(-PI..PI);
        let dist = rng.random_range(7.0..8.5);
        let s = stance.translation;
        cfg.start = Vec3::new(s.x + dist * dir.cos(), s.y + dist * dir.sin(), 0.0);
        let toward = (s.y - cfg.start.y).atan2(s.x - cfg.start.x);
        let bend = rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        cfg.start.z = wrap_angle(toward + bend);
    }

    /// A two-handed cart push along a bowed path, seeded layout.
    pub fn table(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ab1e);
        let mut cfg = Self::base(seed);
        let yaw = rng.random_range(-PI..PI);
        let pose = RigidTransform3::planar(
            yaw,
            Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0),
        );
        let heading = yaw + rng.random_range(-0.4..0.4);
        let len = rng.random_range(1.5..2.5);
        let motion = ObjectMotion::Drag {
            shift: Vec2::new(heading.cos(), heading.sin()) * len,
            turn: rng.random_range(-0.6..0.6),
            bulge: rng.random_range(0.15..0.4) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        };
        let interaction = ScriptedInteraction {
            hands: HandSet::Both,
            contacts: PerHand {
                left: Some(Vec3::new(-0.6, 0.18, 1.0)),
                right: Some(Vec3::new(-0.6, -0.18, 1.0)),
            },
            stance_yaw: 0.0,
            reach: 0.3,
            duration: rng.random_range(3.5..5.0),
            motion,
        };
        let object = ScenarioObject {
            model: ObjectModel {
                scan_pose: Some(pose),
                ..cart_model("cart")
            },
            initial_pose: pose,
            interaction,
        };
        let stance = stance_pose(&object).expect("cart stance");
        Self::place(&mut rng, &mut cfg, &stance);
        cfg.exit = exit_point(&mut rng, &object);
        cfg.objects.push(object);
        cfg
    }

    /// A one-handed door swing about its hinge, seeded layout.
    pub fn door(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd00e);
        let mut cfg = Self::base(seed);
        let yaw = rng.random_range(-PI..PI);
        let pose = RigidTransform3::planar(
            yaw,
            Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0),
        );
        let interaction = ScriptedInteraction {
            hands: HandSet::Right,
            contacts: PerHand {
                left: None,
                right: Some(DOOR_HANDLE),
            },
            stance_yaw: FRAC_PI_2,
            reach: 0.3,
            duration: rng.random_range(3.0..4.5),
            motion: ObjectMotion::Swing {
                angle: rng.random_range(70f64..100.0).to_radians(),
            },
        };
        let object = ScenarioObject {
            model: ObjectModel {
                scan_pose: Some(pose),
                ..door_model("door", &pose)
            },
            initial_pose: pose,
            interaction,
        };
        let stance = stance_pose(&object).expect("door stance");
        Self::place(&mut rng, &mut cfg, &stance);
        cfg.exit = exit_point(&mut rng, &object);
        cfg.objects.push(object);
        cfg
    }

    /// Zero drift, noise and outliers.
    pub fn noiseless(mut self) -> Self {
        self.drift_rate = 0.0;
        self.drift_rot_rate = 0.0;
        self.loc_noise_sigma = 0.0;
        self.loc_rot_noise_sigma = 0.0;
        self.outlier_fraction = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.into()));
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return bad("frame_rate must be positive");
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad("duration must be positive");
        }
        if self.camera_stride == 0 {
            return bad("camera_stride must be >= 1");
        }
        if !(self.drift_rate >= 0.0) || !self.drift_rot_rate.is_finite() {
            return bad("drift_rate must be >= 0");
        }
        if !(self.loc_noise_sigma >= 0.0)
            || !(self.loc_rot_noise_sigma >= 0.0)
            || !(self.outlier_sigma >= 0.0)
        {
            return bad("noise levels must be >= 0");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.outlier_fraction)
            || !unit(self.loc_confidence.inside)
            || !unit(self.loc_confidence.outside)
        {
            return bad("fractions and confidences must lie in [0, 1]");
        }
        if !(self.walk_speed > 0.0) || !(self.reach_time > 0.0) || !(self.lead_in >= 0.0) {
            return bad("walk_speed and reach_time must be positive");
        }
        if !self.time_offset.is_finite() {
            return bad("time_offset must be finite");
        }
        for o in &self.objects {
            o.model.validate()?;
            let i = &o.interaction;
            if !(i.duration > 0.0) {
                return bad("interaction duration must be positive");
            }
            for &h in i.hands.hands() {
                if i.contacts.get(h).is_none() {
                    return Err(Error::Invalid(format!(
                        "{} has no contact for the {h:?} hand",
                        o.model.id
                    )));
                }
            }
            if let ObjectMotion::Swing { .. } = i.motion {
                if o.model.motion_model != MotionModel::Hinged {
                    return Err(Error::Invalid(format!("{} swings but is not hinged", o.model.id)));
                }
            }
        }
        Ok(())
    }
}

fn exit_point(rng: &mut ChaCha8Rng, object: &ScenarioObject) -> Vec2 {
    let end = stance_at(object, 1.0).expect("stance").translation;
    let a = rng.random_range(-PI..PI);
    Vec2::new(end.x, end.y) + 3.0 * Vec2::new(a.cos(), a.sin())
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Object motion relative to its initial pose at progress `s` in `[0, 1]`.
fn motion_at(object: &ScenarioObject, s: f64) -> RigidTransform3 {
    match object.interaction.motion {
        ObjectMotion::Drag { shift, turn, bulge } => {
            let c = object.initial_pose.translation;
            let perp = match shift.try_normalize(1e-12) {
                Some(d) => Vec2::new(-d.y, d.x),
                None => Vec2::zeros(),
            };
            let p = shift * s + perp * (4.0 * bulge * s * (1.0 - s));
            RigidTransform3::from_translation(Vec3::new(p.x, p.y, 0.0)).compose(
                &RigidTransform3::rotation_about_z(turn * s, &Vec3::new(c.x, c.y, 0.0)),
            )
        }
        ObjectMotion::Swing { angle } => {
            let h = object.model.hinge_point.unwrap_or_default();
            RigidTransform3::rotation_about_z(angle * s, &Vec3::new(h.x, h.y, 0.0))
        }
    }
}

/// Planar root pose (yaw and XY, z = 0) that puts the hands at the start
/// contacts.
fn stance_pose(object: &ScenarioObject) -> Result<RigidTransform3> {
    let i = &object.interaction;
    let yaw = object.initial_pose.yaw() + i.stance_yaw;
    let hands = i.hands.hands();
    let mut mid = Vec3::zeros();
    for &h in hands {
        let c = i.contacts.get(h).ok_or(Error::Empty("contact"))?;
        mid += object.initial_pose.transform_point(c);
    }
    mid /= hands.len() as f64;
    let lateral = match i.hands {
        HandSet::Left => SHOULDER_Y,
        HandSet::Right => -SHOULDER_Y,
        HandSet::Both => 0.0,
    };
    let (s, c) = yaw.sin_cos();
    let fwd = Vec2::new(c, s) * i.reach + Vec2::new(-s, c) * lateral;
    Ok(RigidTransform3::planar(
        yaw,
        Vec3::new(mid.x - fwd.x, mid.y - fwd.y, 0.0),
    ))
}

/// Root pose while holding the object, at progress `s`.
fn stance_at(object: &ScenarioObject, s: f64) -> Result<RigidTransform3> {
    Ok(motion_at(object, s).compose(&stance_pose(object)?))
}

const SHOULDER_Y: f64 = 0.18;

/// Planar pose as (x, y, yaw).
#[derive(Debug, Clone, Copy)]
struct Planar {
    xy: Vec2,
    yaw: f64,
}

impl Planar {
    fn of(t: &RigidTransform3) -> Self {
        Self {
            xy: Vec2::new(t.translation.x, t.translation.y),
            yaw: t.yaw(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Walk { from: Planar, to: Planar },
    Reach { object: usize, inward: bool },
    Hold { object: usize },
    Idle { at: Planar },
}

struct Timeline {
    /// First and one-past-last frame of each phase; the last phase is open.
    phases: Vec<(usize, usize, Phase)>,
    /// First and last frame of each object's interaction.
    holds: Vec<(usize, usize)>,
}

fn build_timeline(cfg: &ScenarioConfig, frames: usize) -> Result<Timeline> {
    let mut phases = Vec::new();
    let mut holds = Vec::new();
    let to_frames = |seconds: f64| ((seconds * cfg.frame_rate).round() as usize).max(1);
    let mut k = 0;
    let mut at = Planar {
        xy: Vec2::new(cfg.start.x, cfg.start.y),
        yaw: cfg.start.z,
    };
    let walk_time = |a: &Planar, b: &Planar, min: f64| ((b.xy - a.xy).norm() / cfg.walk_speed * 1.5).max(min);
    let reach = to_frames(cfg.reach_time);
    for (i, o) in cfg.objects.iter().enumerate() {
        let stance = Planar::of(&stance_pose(o)?);
        let d = to_frames(walk_time(&at, &stance, if i == 0 { cfg.lead_in } else { 2.0 }));
        phases.push((k, k + d, Phase::Walk { from: at, to: stance }));
        k += d;
        phases.push((
            k,
            k + reach,
            Phase::Reach {
                object: i,
                inward: true,
            },
        ));
        k += reach;
        let hold = to_frames(o.interaction.duration);
        phases.push((k, k + hold, Phase::Hold { object: i }));
        holds.push((k, k + hold));
        k += hold;
        phases.push((
            k,
            k + reach,
            Phase::Reach {
                object: i,
                inward: false,
            },
        ));
        k += reach;
        at = Planar::of(&stance_at(o, 1.0)?);
    }
    let heading = (cfg.exit - at.xy).y.atan2((cfg.exit - at.xy).x);
    let exit = Planar {
        xy: cfg.exit,
        yaw: heading,
    };
    let d = to_frames(walk_time(&at, &exit, 2.0));
    phases.push((k, k + d, Phase::Walk { from: at, to: exit }));
    k += d;
    if k >= frames {
        return Err(Error::InfeasibleScript(format!(
            "script needs {:.2} s but duration is {} s",
            k as f64 / cfg.frame_rate,
            cfg.duration
        )));
    }
    phases.push((k, usize::MAX, Phase::Idle { at: exit }));
    Ok(Timeline { phases, holds })
}

/// Cubic Hermite walk with tangents along the start and end headings,
/// traversed with smoothstep timing.
fn walk_pose(from: &Planar, to: &Planar, u: f64) -> Planar {
    let s = smoothstep(u);
    let len = (to.xy - from.xy).norm();
    let m0 = Vec2::new(from.yaw.cos(), from.yaw.sin()) * len;
    let m1 = Vec2::new(to.yaw.cos(), to.yaw.sin()) * len;
    let (s2, s3) = (s * s, s * s * s);
    let xy = from.xy * (2.0 * s3 - 3.0 * s2 + 1.0)
        + m0 * (s3 - 2.0 * s2 + s)
        + to.xy * (-2.0 * s3 + 3.0 * s2)
        + m1 * (s3 - s2);
    Planar {
        xy,
        yaw: from.yaw + wrap_angle(to.yaw - from.yaw) * s,
    }
}

/// Places the wrist of `hand` at `target` with the shoulder and elbow
/// joints. The elbow bends about its local y axis; the shoulder takes the
/// smallest rotation relative to its parent.
fn solve_arm(body: &BodyModel, params: &mut BodyParams, hand: Hand, target: &Vec3) -> Result<()> {
    let chain = body.chain(body.vertex_joint(hand.vertex()));
    let n = chain.len();
    let (shoulder, elbow) = (chain[n - 3], chain[n - 2]);
    let parent = chain[n - 4];
    params.set_joint_rotation(shoulder, &Vec3::zeros());
    params.set_joint_rotation(elbow, &Vec3::zeros());
    let posed = body.pose(params)?;
    let e = body.joints()[elbow].offset;
    let w = body.joints()[chain[n - 1]].offset;
    let d = posed.rotations[parent].transpose() * (target - posed.positions[shoulder]);
    // |e + Ry(b) w|^2 = d^2  <=>  A cos b + B sin b = C
    let a = e.x * w.x + e.z * w.z;
    let b = e.x * w.z - e.z * w.x;
    let c = 0.5 * (d.norm_squared() - e.norm_squared() - w.norm_squared()) - e.y * w.y;
    let r = a.hypot(b);
    let ratio = c / r;
    if !(ratio.abs() <= 1.0 + 1e-9) {
        return Err(Error::InfeasibleScript(format!(
            "{hand:?} hand cannot reach a point {:.3} m from the shoulder",
            d.norm()
        )));
    }
    let beta = b.atan2(a) - ratio.clamp(-1.0, 1.0).acos();
    let ry = Vec3::new(0.0, beta, 0.0);
    let v = e + so3::exp(&ry) * w;
    params.set_joint_rotation(elbow, &ry);
    params.set_joint_rotation(shoulder, &so3::log(&so3::between(&v, &d)));
    Ok(())
}

/// Body parameters with the root at `root`, arms hanging and the head
/// moving slightly.
fn base_params(body: &BodyModel, root: &Planar, t: f64, amp: f64) -> BodyParams {
    let mut p = BodyParams::zero(body.joint_count());
    p.gamma = Vec3::new(root.xy.x, root.xy.y, 0.0);
    p.set_joint_rotation(
        body.vertex_joint(Vertex::Root),
        &Vec3::new(0.0, 0.0, wrap_angle(root.yaw)),
    );
    let tau = 2.0 * PI * t;
    let head = Vec3::new(
        amp * (0.31 * tau).sin(),
        amp * (0.23 * tau + 1.0).sin(),
        amp * (0.17 * tau + 2.0).sin(),
    );
    p.set_joint_rotation(body.vertex_joint(Vertex::Head), &head);
    p
}

fn planar_frame(root: &Planar) -> RigidTransform3 {
    RigidTransform3::planar(root.yaw, Vec3::new(root.xy.x, root.xy.y, 0.0))
}

/// True body and object poses for every frame.
fn script(
    cfg: &ScenarioConfig,
    body: &BodyModel,
    times: &[f64],
) -> Result<(Vec<BodyParams>, Vec<Vec<RigidTransform3>>, Timeline)> {
    let tl = build_timeline(cfg, times.len())?;
    let rest = {
        let p = BodyParams::zero(body.joint_count());
        PerHand {
            left: Some(body.forward_kinematics(&p, Vertex::HandLeft)?),
            right: Some(body.forward_kinematics(&p, Vertex::HandRight)?),
        }
    };
    let mut params = Vec::with_capacity(times.len());
    let mut objects: Vec<Vec<RigidTransform3>> = vec![Vec::with_capacity(times.len()); cfg.objects.len()];
    let mut phase = 0;
    let progress = |k: usize, (k0, k1): (usize, usize)| (k as f64 - k0 as f64) / (k1 - k0) as f64;
    for (k, &t) in times.iter().enumerate() {
        while k >= tl.phases[phase].1 && phase + 1 < tl.phases.len() {
            phase += 1;
        }
        let (k0, k1, ph) = tl.phases[phase];
        let u = progress(k, (k0, k1)).clamp(0.0, 1.0);
        for (i, o) in cfg.objects.iter().enumerate() {
            let s = smoothstep(progress(k, tl.holds[i]));
            objects[i].push(motion_at(o, s).compose(&o.initial_pose));
        }
        let (root, targets) = match ph {
            Phase::Walk { from, to } => (walk_pose(&from, &to, u), None),
            Phase::Idle { at } => (at, None),
            Phase::Hold { object } => {
                let o = &cfg.objects[object];
                let s = smoothstep(progress(k, tl.holds[object]));
                let pose = objects[object].last().copied().unwrap_or(o.initial_pose);
                let targets = o.interaction.contacts.map(|_, c| pose.transform_point(c));
                (Planar::of(&stance_at(o, s)?), Some(targets))
            }
            Phase::Reach { object, inward } => {
                let o = &cfg.objects[object];
                let root = Planar::of(&stance_at(o, if inward { 0.0 } else { 1.0 })?);
                let frame = planar_frame(&root);
                let pose = objects[object].last().copied().unwrap_or(o.initial_pose);
                let w = smoothstep(if inward { u } else { 1.0 - u });
                let mut targets = PerHand::default();
                for &h in o.interaction.hands.hands() {
                    let (Some(c), Some(r)) = (o.interaction.contacts.get(h), rest.get(h)) else {
                        continue;
                    };
                    let local = frame.inverse().transform_point(&pose.transform_point(c));
                    targets.set(h, frame.transform_point(&(r * (1.0 - w) + local * w)));
                }
                (root, Some(targets))
            }
        };
        let mut p = base_params(body, &root, t, cfg.head_motion);
        if let Some(targets) = targets {
            for (h, target) in targets.iter() {
                solve_arm(body, &mut p, h, target)?;
            }
        }
        params.push(p);
    }
    Ok((params, objects, tl))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Adds position noise, rotation noise and outliers to a pose.
fn corrupt(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, pose: &RigidTransform3) -> RigidTransform3 {
    let mut t = pose.translation + gaussian_vec(rng, cfg.loc_noise_sigma);
    let r = so3::exp(&gaussian_vec(rng, cfg.loc_rot_noise_sigma)) * pose.rotation;
    if cfg.outlier_fraction > 0.0 && rng.random_bool(cfg.outlier_fraction) {
        t += gaussian_vec(rng, cfg.outlier_sigma);
    }
    RigidTransform3::new(r, t)
}

/// Generates ground truth and sensor streams. Fully determined by `cfg`.
pub fn generate(cfg: &ScenarioConfig) -> Result<(GroundTruth, Sequence)> {
    cfg.validate()?;
    let body = BodyModel::standard();
    let n = (cfg.duration * cfg.frame_rate).round() as usize + 1;
    let times: Vec<f64> = (0..n).map(|k| k as f64 / cfg.frame_rate).collect();
    let (truth_params, object_poses, tl) = script(cfg, &body, &times)?;

    let mut interactions = Vec::new();
    for (o, &(h0, h1)) in cfg.objects.iter().zip(&tl.holds) {
        interactions.push(ObjectInteraction {
            object: o.model.id.clone(),
            label: InteractionLabel::new(times[h0], times[h1], o.interaction.hands)?,
        });
    }
    for (k, o) in cfg.objects.iter().enumerate() {
        let label = &interactions[k].label;
        for (i, &t) in times.iter().enumerate() {
            if !label.contains(t) {
                continue;
            }
            for &h in o.interaction.hands.hands() {
                let c = o.interaction.contacts.get(h).ok_or(Error::Empty("contact"))?;
                let want = object_poses[k][i].transform_point(c);
                let got = body.forward_kinematics(&truth_params[i], h.vertex())?;
                if (want - got).norm() > CONTACT_TOL {
                    return Err(Error::InfeasibleScript(format!(
                        "{h:?} hand misses the {} contact by {:.3e} m at t={t}",
                        o.model.id,
                        (want - got).norm()
                    )));
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let drift_dir = rng.random_range(-PI..PI);
    let drift_u = Vec2::new(drift_dir.cos(), drift_dir.sin());
    let drift_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };

    let root_joint = body.vertex_joint(Vertex::Root);
    let root_xy = |p: &BodyParams| {
        let o = body.joints()[root_joint].offset;
        Vec2::new(p.gamma.x + o.x, p.gamma.y + o.y)
    };
    let wz_inv = cfg.true_x_wz.inverse();
    let mut imu_params = Vec::with_capacity(n);
    let mut imu_head = Vec::with_capacity(n);
    let mut head_truth = Vec::with_capacity(n);
    let mut drifted = root_xy(&truth_params[0]);
    for (k, p) in truth_params.iter().enumerate() {
        let pos = root_xy(p);
        let psi = drift_sign * cfg.drift_rot_rate * times[k];
        if k > 0 {
            let step = pos - root_xy(&truth_params[k - 1]);
            let rot = nalgebra::Rotation2::new(psi);
            drifted += rot * step + drift_u * (cfg.drift_rate * step.norm());
        }
        let r = so3::rot_z(psi);
        let shift = Vec3::new(drifted.x, drifted.y, 0.0) - r * Vec3::new(pos.x, pos.y, 0.0);
        let d = RigidTransform3::new(r, shift);
        let raw = body.transform_params(p, &wz_inv.compose(&d));
        let head_joint = body.vertex_joint(Vertex::Head);
        imu_head.push(TimedPose::new(
            times[k],
            body.pose(&raw)?.joint_transform(head_joint),
            1.0,
        ));
        head_truth.push(body.pose(p)?.joint_transform(head_joint));
        imu_params.push(raw);
    }

    let inside = |t: f64| interactions.iter().any(|i| i.label.contains(t));
    let mut camera = Vec::new();
    for k in (0..n).step_by(cfg.camera_stride) {
        let truth = head_truth[k].compose(&cfg.true_x_ic);
        let conf = if inside(times[k]) {
            cfg.loc_confidence.inside
        } else {
            cfg.loc_confidence.outside
        };
        camera.push(TimedPose::new(
            times[k] + cfg.time_offset,
            corrupt(&mut rng, cfg, &truth),
            conf,
        ));
    }

    let mut object_observations = Vec::new();
    for (k, o) in cfg.objects.iter().enumerate() {
        let label = &interactions[k].label;
        let mut obs = Vec::new();
        for i in (0..n).step_by(cfg.camera_stride) {
            if label.contains(times[i]) {
                continue;
            }
            obs.push(ObjectObservation {
                time: times[i] + cfg.time_offset,
                pose: corrupt(&mut rng, cfg, &object_poses[k][i]),
                confidence: cfg.loc_confidence.outside,
            });
        }
        object_observations.push(ObjectStream {
            object: o.model.id.clone(),
            observations: obs,
        });
    }

    let truth = GroundTruth {
        times: times.clone(),
        body: truth_params,
        objects: cfg
            .objects
            .iter()
            .zip(object_poses)
            .map(|(o, poses)| ObjectTrack {
                object: o.model.id.clone(),
                poses,
            })
            .collect(),
        head: head_truth,
        interactions: interactions.clone(),
    };
    let sequence = Sequence {
        frame_rate: cfg.frame_rate,
        body,
        imu_params,
        imu_head,
        camera: LocalizationStream::new(camera)?,
        objects: cfg.objects.iter().map(|o| o.model.clone()).collect(),
        object_observations,
        interactions,
    };
    Ok((truth, sequence))
}

/// Mean distance from each point of `from` to its nearest point of `to`.
/// `to` must be sorted by x (see [`sort_by_x`]).
fn mean_nearest_sorted(from: &[Vec3], to: &[Vec3]) -> f64 {
    if from.is_empty() || to.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for p in from {
        let start = to.partition_point(|q| q.x < p.x);
        let mut best = f64::INFINITY;
        for q in to[start..].iter() {
            if (q.x - p.x).powi(2) >= best {
                break;
            }
            best = best.min((q - p).norm_squared());
        }
        for q in to[..start].iter().rev() {
            if (q.x - p.x).powi(2) >= best {
                break;
            }
            best = best.min((q - p).norm_squared());
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

fn sort_by_x(mut pts: Vec<Vec3>) -> Vec<Vec3> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    pts
}

/// Mean nearest-neighbour distance from `from` to `to`.
pub fn mean_nearest_distance(from: &[Vec3], to: &[Vec3]) -> f64 {
    mean_nearest_sorted(from, &sort_by_x(to.to_vec()))
}

/// Interior samples per bone used for body distances.
pub const BODY_SAMPLES_PER_BONE: usize = 2;

/// Per-frame object and body distances to the truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    /// Mean over objects of the object distance, per frame.
    pub object: Vec<f64>,
    pub body: Vec<f64>,
}

/// Frame-wise Chamfer-style distances of a solution to the truth.
pub fn error_series(
    solution: &Solution,
    truth: &GroundTruth,
    body: &BodyModel,
    objects: &[ObjectModel],
) -> Result<ErrorSeries> {
    let n = truth.times.len();
    if solution.body.len() != n {
        return Err(Error::LengthMismatch {
            what: "solution vs truth frames",
            left: solution.body.len(),
            right: n,
        });
    }
    let mut out = ErrorSeries {
        times: truth.times.clone(),
        object: vec![0.0; n],
        body: vec![0.0; n],
    };
    for (i, (est, tru)) in solution.body.iter().zip(&truth.body).enumerate() {
        let a = body.surface_points(&body.pose(est)?, BODY_SAMPLES_PER_BONE);
        let b = sort_by_x(body.surface_points(&body.pose(tru)?, BODY_SAMPLES_PER_BONE));
        out.body[i] = mean_nearest_sorted(&a, &b);
    }
    if !truth.objects.is_empty() {
        for track in &truth.objects {
            let model = objects
                .iter()
                .find(|o| o.id == track.object)
                .ok_or_else(|| Error::Invalid(format!("no model for object {}", track.object)))?;
            let est = solution
                .objects
                .iter()
                .find(|o| o.object == track.object)
                .ok_or_else(|| Error::Invalid(format!("solution lacks object {}", track.object)))?;
            if est.poses.len() != n || track.poses.len() != n {
                return Err(Error::LengthMismatch {
                    what: "object track frames",
                    left: est.poses.len(),
                    right: n,
                });
            }
            for i in 0..n {
                let a = model.posed_points(&est.poses[i]);
                let b = sort_by_x(model.posed_points(&track.poses[i]));
                out.object[i] += mean_nearest_sorted(&a, &b) / truth.objects.len() as f64;
            }
        }
    }
    Ok(out)
}

/// Mean object and body errors over all frames, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Errors {
    pub e_obj: f64,
    pub e_body: f64,
}

pub fn eval_errors(
    solution: &Solution,
    truth: &GroundTruth,
    body: &BodyModel,
    objects: &[ObjectModel],
) -> Result<Errors> {
    let s = error_series(solution, truth, body, objects)?;
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(Errors {
        e_obj: mean(&s.object),
        e_body: mean(&s.body),
    })
}
