//! Interaction refinement: an end-of-interaction object anchor is pushed
//! back through the hand contacts, the hand paths are bent to meet it, and
//! object poses and body parameters are regenerated from the bent hands.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bending::{
    bend_trajectory, deform_pose_trajectory, free_window, BendOptions, ControlPoint2, PoseControlPoint,
    Trajectory2,
};
use crate::body::{BodyModel, BodyParams, Vertex};
use crate::geometry::{so3, wrap_angle, Mat3, RigidTransform3, Vec2, Vec3};
use crate::object::{
    hinge_pose, hinged_poses, track_dragged, track_hinged, Hand, InteractionLabel, MotionModel, ObjectModel,
    PerHand, HINGE_EPS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    /// Bending of the hand paths towards the contact points.
    pub hand_bend: BendOptions,
    /// Pose re-fit of the body onto the refined hand paths.
    pub pose_bend: BendOptions,
    /// Extra frames before and after the interaction whose parameters may
    /// change during the body re-fit.
    pub window_w: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            hand_bend: BendOptions::default(),
            pose_bend: BendOptions {
                iterations: 800,
                ..BendOptions::default()
            },
            window_w: 30,
        }
    }
}

/// Largest hand-to-contact XY distance at each end of the interaction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactResiduals {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSolution {
    /// Index of the first interaction frame in the sequence.
    pub first_frame: usize,
    /// One pose per interaction frame.
    pub object_poses: Vec<RigidTransform3>,
    /// The whole sequence of body parameters after the re-fit.
    pub body: Vec<BodyParams>,
    pub hand_paths: PerHand<Trajectory2>,
    pub residuals: ContactResiduals,
    /// End anchor after projection onto the object's motion model.
    pub end_anchor: Option<RigidTransform3>,
    pub warnings: Vec<String>,
}

/// Contact points at the end of the interaction: `o_e * o_s^-1 * c_s`.
pub fn end_contacts(c_s: &PerHand<Vec3>, o_s: &RigidTransform3, o_e: &RigidTransform3) -> PerHand<Vec3> {
    let rel = o_e.compose(&o_s.inverse());
    c_s.map(|_, c| rel.transform_point(c))
}

/// Per-frame rotations about z, turning linearly along the shortest arc from
/// the yaw of `start_rot` to the yaw of `end_rot`.
pub fn interpolate_one_hand_rotation(start_rot: &Mat3, end_rot: &Mat3, frames: usize) -> Vec<Mat3> {
    interpolate_yaw(so3::yaw(start_rot), so3::yaw(end_rot), frames)
        .into_iter()
        .map(so3::rot_z)
        .collect()
}

fn interpolate_yaw(start: f64, end: f64, frames: usize) -> Vec<f64> {
    let d = wrap_angle(end - start);
    match frames {
        0 => Vec::new(),
        1 => alloc::vec![start],
        n => (0..n).map(|k| start + d * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Closest pose to `o_e` that the motion model can reach from `o_s`: a
/// rotation about the hinge for doors, otherwise a yaw plus a horizontal
/// shift.
pub fn project_end_anchor(
    object: &ObjectModel,
    o_s: &RigidTransform3,
    o_e: &RigidTransform3,
) -> Result<RigidTransform3> {
    let rel = o_e.compose(&o_s.inverse());
    let yaw = rel.yaw();
    match object.motion_model {
        MotionModel::Hinged => Ok(hinge_pose(object, yaw)?.compose(o_s)),
        MotionModel::PlanarFree => {
            let t = Vec3::new(rel.translation.x, rel.translation.y, 0.0);
            Ok(RigidTransform3::new(so3::rot_z(yaw), t).compose(o_s))
        }
    }
}

/// Dragged object poses from hand paths. Two hands fix the rotation; a
/// single hand turns the object about itself by `one_hand_yaw`, spread
/// linearly over the interaction.
fn dragged_poses(
    paths: &PerHand<Trajectory2>,
    o_s: &RigidTransform3,
    one_hand_yaw: f64,
) -> Result<Vec<RigidTransform3>> {
    let left = paths.left.as_ref().map(|t| t.xy());
    let right = paths.right.as_ref().map(|t| t.xy());
    let mut poses = track_dragged(left, right, o_s)?;
    if left.is_some() != right.is_some() && one_hand_yaw != 0.0 {
        let lead = left.or(right).unwrap_or(&[]);
        let h0 = lead[0];
        let pivot = Vec3::new(h0.x, h0.y, 0.0);
        let angles = interpolate_yaw(0.0, one_hand_yaw, lead.len());
        for ((pose, h), a) in poses.iter_mut().zip(lead).zip(angles) {
            let shift = RigidTransform3::from_translation(Vec3::new(h.x - h0.x, h.y - h0.y, 0.0));
            *pose = shift
                .compose(&RigidTransform3::rotation_about_z(a, &pivot))
                .compose(o_s);
        }
    }
    Ok(poses)
}

fn hinge_xy(object: &ObjectModel) -> Result<Vec2> {
    match (object.motion_model, object.hinge_point) {
        (MotionModel::Hinged, Some(h)) => Ok(Vec2::new(h.x, h.y)),
        _ => Err(Error::NotHinged(object.id.clone())),
    }
}

fn lead_path(paths: &PerHand<Trajectory2>) -> Result<&Trajectory2> {
    paths
        .right
        .as_ref()
        .or(paths.left.as_ref())
        .ok_or(Error::Empty("hand paths"))
}

/// Object poses implied by the hand paths under the object's motion model.
fn track_object(
    object: &ObjectModel,
    paths: &PerHand<Trajectory2>,
    o_s: &RigidTransform3,
    one_hand_yaw: f64,
) -> Result<Vec<RigidTransform3>> {
    match object.motion_model {
        MotionModel::PlanarFree => dragged_poses(paths, o_s, one_hand_yaw),
        MotionModel::Hinged => {
            let angles = track_hinged(lead_path(paths)?.xy(), &hinge_xy(object)?, 0.0);
            hinged_poses(object, o_s, &angles)
        }
    }
}

/// Weight of the root rotation and translation against the arm joints in
/// the per-frame hand fit.
const ROOT_WEIGHT: f64 = 0.05;
const FIT_ITERATIONS: usize = 50;
const FIT_DAMPING: f64 = 1e-6;
const FIT_TOL: f64 = 1e-12;

/// Moves the free joints and root XY of one frame so the hands reach
/// `targets`, by weighted damped least squares.
fn fit_hands(
    body: &BodyModel,
    params: &BodyParams,
    free: &[usize],
    targets: &[(Vertex, Vec2)],
) -> Result<BodyParams> {
    let g = 3 * body.joint_count();
    let mut cols: Vec<(usize, f64)> = Vec::new();
    for &j in free {
        let w = if body.joints()[j].parent.is_none() {
            ROOT_WEIGHT
        } else {
            1.0
        };
        cols.extend((0..3).map(|c| (3 * j + c, w)));
    }
    cols.extend([(g, ROOT_WEIGHT), (g + 1, ROOT_WEIGHT)]);
    let m = 2 * targets.len();
    let mut p = params.clone();
    for _ in 0..FIT_ITERATIONS {
        let mut jac = DMatrix::zeros(m, cols.len());
        let mut r = DVector::zeros(m);
        for (i, (v, t)) in targets.iter().enumerate() {
            let h = body.forward_kinematics(&p, *v)?;
            r[2 * i] = t.x - h.x;
            r[2 * i + 1] = t.y - h.y;
            let jv = body.vertex_jacobian(&p, *v)?;
            for (k, &(c, _)) in cols.iter().enumerate() {
                jac[(2 * i, k)] = jv[(0, c)];
                jac[(2 * i + 1, k)] = jv[(1, c)];
            }
        }
        if r.norm() < FIT_TOL {
            break;
        }
        let w = DVector::from_iterator(cols.len(), cols.iter().map(|c| c.1));
        let jw = DMatrix::from_fn(m, cols.len(), |i, k| jac[(i, k)] * w[k]);
        let a = &jw * jac.transpose() + DMatrix::identity(m, m) * FIT_DAMPING;
        let Some(y) = a.lu().solve(&r) else {
            break;
        };
        let step = jw.transpose() * y;
        for (k, &(c, _)) in cols.iter().enumerate() {
            match c.checked_sub(g) {
                Some(0) => p.gamma.x += step[k],
                Some(_) => p.gamma.y += step[k],
                None => p.theta[c] += step[k],
            }
        }
    }
    Ok(p)
}

/// `p + s * d` over the pose vector and root translation.
fn offset(p: &BodyParams, d: &BodyParams, s: f64) -> BodyParams {
    BodyParams {
        theta: p.theta.iter().zip(&d.theta).map(|(a, b)| a + s * b).collect(),
        gamma: p.gamma + d.gamma * s,
    }
}

fn difference(a: &BodyParams, b: &BodyParams) -> BodyParams {
    BodyParams {
        theta: a.theta.iter().zip(&b.theta).map(|(x, y)| x - y).collect(),
        gamma: a.gamma - b.gamma,
    }
}

/// Starting point for the body re-fit: every interaction frame is fitted to
/// its hand targets, starting from the change found for the frame before.
/// The changes at the interval ends fade out over the free frames on either
/// side.
fn warm_start(
    body: &BodyModel,
    params: &[BodyParams],
    paths: &PerHand<Trajectory2>,
    first: usize,
    window: core::ops::RangeInclusive<usize>,
) -> Result<Vec<BodyParams>> {
    let frames = paths.iter().next().map_or(0, |(_, p)| p.len());
    if frames == 0 {
        return Ok(params.to_vec());
    }
    let free = body.default_free_joints();
    let last = first + frames - 1;
    let mut out = params.to_vec();
    let mut deltas = Vec::with_capacity(frames);
    for k in 0..frames {
        let i = first + k;
        let start = match deltas.last() {
            Some(d) => offset(&params[i], d, 1.0),
            None => params[i].clone(),
        };
        let targets: Vec<(Vertex, Vec2)> = paths.iter().map(|(h, p)| (h.vertex(), p.xy()[k])).collect();
        out[i] = fit_hands(body, &start, &free, &targets)?;
        deltas.push(difference(&out[i], &params[i]));
    }
    let lo = *window.start();
    for i in lo..first {
        out[i] = offset(
            &params[i],
            &deltas[0],
            fade((i + 1 - lo) as f64 / (first + 1 - lo) as f64),
        );
    }
    let hi = *window.end();
    for i in last + 1..=hi {
        out[i] = offset(
            &params[i],
            &deltas[frames - 1],
            fade((hi + 1 - i) as f64 / (hi + 1 - last) as f64),
        );
    }
    Ok(out)
}

fn fade(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Moves the path endpoints exactly onto `a` and `b` with a correction that
/// ramps linearly in time.
fn snap_endpoints(path: &Trajectory2, a: &Vec2, b: &Vec2) -> Result<Trajectory2> {
    let n = path.len();
    let (t0, t1) = (path.start_time(), path.end_time());
    let e0 = a - path.xy()[0];
    let e1 = b - path.xy()[n - 1];
    let xy = path
        .xy()
        .iter()
        .zip(path.times())
        .enumerate()
        .map(|(i, (p, &t))| match i {
            0 => *a,
            _ if i == n - 1 => *b,
            _ => {
                let s = (t - t0) / (t1 - t0);
                p + e0 * (1.0 - s) + e1 * s
            }
        })
        .collect();
    path.with_xy(xy)
}

/// Hand paths carried by the object poses from their start contacts, so two
/// hands on a rigid object keep their spacing.
fn rigid_paths(
    paths: &PerHand<Trajectory2>,
    poses: &[RigidTransform3],
    o_s: &RigidTransform3,
) -> Result<PerHand<Trajectory2>> {
    let mut out = PerHand::default();
    for (hand, path) in paths.iter() {
        let local = o_s.inverse().transform_point(&path.point(0));
        let xy = poses
            .iter()
            .map(|pose| {
                let c = pose.transform_point(&local);
                Vec2::new(c.x, c.y)
            })
            .collect();
        out.set(hand, path.with_xy(xy)?);
    }
    Ok(out)
}

/// Radial projection onto the circle of radius `r` about `center`.
fn project_to_circle(path: &Trajectory2, center: &Vec2, r: f64) -> Result<Trajectory2> {
    let xy = path
        .xy()
        .iter()
        .map(|p| {
            let d = p - center;
            let n = d.norm();
            if n < HINGE_EPS {
                center + Vec2::new(r, 0.0)
            } else {
                center + d * (r / n)
            }
        })
        .collect();
    path.with_xy(xy)
}

/// Refines one interaction.
///
/// `hand_paths` hold the contact-tracked hand positions for each hand of
/// `interval`, sampled at the interaction frames of `times`; their first
/// points are the start contacts. Without an end anchor the hand paths are
/// kept and the object follows them.
#[allow(clippy::too_many_arguments)]
pub fn refine_interaction(
    times: &[f64],
    body_params: &[BodyParams],
    hand_paths: &PerHand<Trajectory2>,
    object: &ObjectModel,
    o_s: &RigidTransform3,
    o_e: Option<&RigidTransform3>,
    interval: &InteractionLabel,
    body: &BodyModel,
    opts: &RefineOptions,
) -> Result<InteractionSolution> {
    object.validate()?;
    if times.len() != body_params.len() {
        return Err(Error::LengthMismatch {
            what: "times and body parameters",
            left: times.len(),
            right: body_params.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::Empty("body sequence"));
    }
    let first = crate::bending::nearest_index(times, interval.start);
    let last = crate::bending::nearest_index(times, interval.end);
    let frames = last - first + 1;
    for &hand in interval.hands.hands() {
        let path = hand_paths
            .get(hand)
            .ok_or_else(|| Error::Invalid(format!("no path for {hand:?} hand")))?;
        if path.len() != frames {
            return Err(Error::LengthMismatch {
                what: "hand path and interaction frames",
                left: path.len(),
                right: frames,
            });
        }
    }
    let mut paths = PerHand::default();
    for &hand in interval.hands.hands() {
        paths.set(
            hand,
            hand_paths.get(hand).cloned().ok_or(Error::Empty("hand path"))?,
        );
    }
    let c_s = paths.map(|_, p| p.point(0));
    if object.motion_model == MotionModel::Hinged {
        let j = hinge_xy(object)?;
        if c_s
            .iter()
            .any(|(_, c)| (Vec2::new(c.x, c.y) - j).norm() < HINGE_EPS)
        {
            return Err(Error::DegenerateHingeContact);
        }
    }

    let mut warnings = Vec::new();
    let (end_anchor, one_hand_yaw) = match o_e {
        Some(o_e) => {
            let anchor = project_end_anchor(object, o_s, o_e)?;
            let yaw = anchor.compose(&o_s.inverse()).yaw();
            let c_e = end_contacts(&c_s, o_s, &anchor);
            for &hand in interval.hands.hands() {
                let (Some(path), Some(a), Some(b)) = (paths.get(hand), c_s.get(hand), c_e.get(hand)) else {
                    continue;
                };
                let (a, b) = (Vec2::new(a.x, a.y), Vec2::new(b.x, b.y));
                let controls = [
                    ControlPoint2::new(path.start_time(), a),
                    ControlPoint2::new(path.end_time(), b),
                ];
                let bent = bend_trajectory(path, &controls, &opts.hand_bend)?;
                let mut refined = snap_endpoints(&bent, &a, &b)?;
                if object.motion_model == MotionModel::Hinged {
                    let j = hinge_xy(object)?;
                    refined = project_to_circle(&refined, &j, (a - j).norm())?;
                }
                paths.set(hand, refined);
            }
            (Some(anchor), yaw)
        }
        None => {
            let msg = format!(
                "no end anchor for interaction [{}, {}] with {}: keeping contact tracking",
                interval.start, interval.end, object.id
            );
            log::warn!("{msg}");
            warnings.push(msg);
            (None, 0.0)
        }
    };

    let object_poses = track_object(object, &paths, o_s, one_hand_yaw)?;
    if end_anchor.is_some() && paths.left.is_some() && paths.right.is_some() {
        paths = rigid_paths(&paths, &object_poses, o_s)?;
    }

    let mut controls = Vec::new();
    for (hand, path) in paths.iter() {
        for (k, p) in path.xy().iter().enumerate() {
            controls.push(PoseControlPoint {
                time: times[first + k],
                vertex: hand.vertex(),
                target_xy: *p,
            });
        }
    }
    let window = free_window(times, interval.start, interval.end, opts.window_w);
    let warm = warm_start(body, body_params, &paths, first, window.clone())?;
    let refit = deform_pose_trajectory(
        times,
        &warm,
        &controls,
        body,
        &opts.pose_bend,
        &body.default_free_joints(),
        window,
    )?;

    let mut residuals = ContactResiduals::default();
    for (hand, path) in paths.iter() {
        for (frame, k, slot) in [
            (first, 0, &mut residuals.start),
            (last, frames - 1, &mut residuals.end),
        ] {
            let h = body.forward_kinematics(&refit.params[frame], hand.vertex())?;
            let r = (Vec2::new(h.x, h.y) - path.xy()[k]).norm();
            *slot = slot.max(r);
        }
    }
    Ok(InteractionSolution {
        first_frame: first,
        object_poses,
        body: refit.params,
        hand_paths: paths,
        residuals,
        end_anchor,
        warnings,
    })
}

/// Hand paths over the interaction frames from body forward kinematics.
pub fn hand_paths_from_body(
    times: &[f64],
    params: &[BodyParams],
    interval: &InteractionLabel,
    body: &BodyModel,
) -> Result<PerHand<Trajectory2>> {
    let first = crate::bending::nearest_index(times, interval.start);
    let last = crate::bending::nearest_index(times, interval.end);
    let mut out = PerHand::default();
    for &hand in interval.hands.hands() {
        let pts = params[first..=last]
            .iter()
            .map(|p| body.forward_kinematics(p, hand.vertex()))
            .collect::<Result<Vec<_>>>()?;
        out.set(
            hand,
            Trajectory2::from_points(times[first..=last].to_vec(), &pts)?,
        );
    }
    Ok(out)
}

/// Which hand leads a hinged or one-handed interaction.
pub fn lead_hand(paths: &PerHand<Trajectory2>) -> Option<Hand> {
    if paths.right.is_some() {
        Some(Hand::Right)
    } else if paths.left.is_some() {
        Some(Hand::Left)
    } else {
        None
    }
}
