//! Drift correction of the IMU head path against visual localizations and
//! transfer of the correction onto the body parameters.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::bending::{bend_trajectory, BendOptions, ControlPoint2, Trajectory2};
use crate::body::{BodyModel, BodyParams};
use crate::calibrate::{head_in_world, map_body_to_scene, CalibrationResult};
use crate::geometry::{so3, wrap_angle, RigidTransform3, TimedPose, Vec3};
use crate::{Error, Result};

/// Segments shorter than this (meters) reuse the previous heading change.
pub const SEGMENT_EPS: f64 = 2e-3;

/// Camera poses with confidence scores, in non-decreasing time order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TimedPose>", into = "Vec<TimedPose>")]
pub struct LocalizationStream {
    entries: Vec<TimedPose>,
}

impl TryFrom<Vec<TimedPose>> for LocalizationStream {
    type Error = Error;

    fn try_from(entries: Vec<TimedPose>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<LocalizationStream> for Vec<TimedPose> {
    fn from(s: LocalizationStream) -> Self {
        s.entries
    }
}

impl LocalizationStream {
    pub fn new(entries: Vec<TimedPose>) -> Result<Self> {
        if let Some(i) = entries.windows(2).position(|w| w[1].time < w[0].time) {
            return Err(Error::Invalid(alloc::format!(
                "localization times decrease at entry {}",
                i + 1
            )));
        }
        if entries.iter().any(|e| !e.time.is_finite() || !e.pose.is_finite()) {
            return Err(Error::NonFinite("localizations"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TimedPose] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The same stream with every time shifted by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| TimedPose {
                    time: e.time + dt,
                    ..*e
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub conf_threshold: f64,
    pub bend: BendOptions,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.5,
            bend: BendOptions {
                step_size: 0.01,
                iterations: 600,
                smoothing: 3.0,
                ..BendOptions::default()
            },
        }
    }
}

/// Bends the head path through the XY positions of the reliable
/// localizations. Localizations outside the path's time span are ignored.
pub fn correct_drift(
    head_traj: &Trajectory2,
    localizations: &LocalizationStream,
    conf_threshold: f64,
    opts: &BendOptions,
) -> Result<Trajectory2> {
    let half = 0.5 * (head_traj.end_time() - head_traj.start_time()) / (head_traj.len() - 1) as f64;
    let controls: Vec<ControlPoint2> = localizations
        .entries()
        .iter()
        .filter(|e| e.confidence >= conf_threshold)
        .filter(|e| e.time >= head_traj.start_time() - half && e.time <= head_traj.end_time() + half)
        .map(|e| ControlPoint2::new(e.time, e.pose.translation.xy()))
        .collect();
    if controls.is_empty() {
        log::warn!("drift correction: no localization reaches confidence {conf_threshold}");
        return Ok(head_traj.clone());
    }
    bend_trajectory(head_traj, &controls, opts)
}

/// Carries a trajectory correction over to the body: frame `i` is moved by
/// the planar rigid motion that takes the original trajectory point to the
/// refined one and turns by the change in segment heading.
pub fn adapt_body_params(
    body: &BodyModel,
    params: &[BodyParams],
    original: &Trajectory2,
    refined: &Trajectory2,
) -> Result<Vec<BodyParams>> {
    if params.len() != original.len() {
        return Err(Error::LengthMismatch {
            what: "body parameters vs trajectory",
            left: params.len(),
            right: original.len(),
        });
    }
    if refined.len() != original.len() {
        return Err(Error::LengthMismatch {
            what: "refined vs original trajectory",
            left: refined.len(),
            right: original.len(),
        });
    }
    let (a, b) = (original.xy(), refined.xy());
    let mut dalpha = 0.0;
    let mut out = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            let v = a[i] - a[i - 1];
            let vh = b[i] - b[i - 1];
            if v.norm() >= SEGMENT_EPS && vh.norm() >= SEGMENT_EPS {
                dalpha = wrap_angle(vh.y.atan2(vh.x) - v.y.atan2(v.x));
            }
        }
        if dalpha == 0.0 && a[i] == b[i] {
            out.push(p.clone());
            continue;
        }
        let rz = so3::rot_z(dalpha);
        let from = Vec3::new(a[i].x, a[i].y, 0.0);
        let to = Vec3::new(b[i].x, b[i].y, 0.0);
        let tf = RigidTransform3::new(rz, to - rz * from);
        out.push(body.transform_params(p, &tf));
    }
    Ok(out)
}

/// Scene-registered body parameters and the head paths before and after
/// drift correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub params: Vec<BodyParams>,
    pub head_path: Trajectory2,
    pub corrected_head_path: Trajectory2,
}

/// Maps the raw IMU body into the scene, builds the head sensor path
/// `X_wz H X_ic`, corrects its drift against the localizations (shifted
/// into the IMU clock) and carries the correction over to the body.
pub fn register_human(
    body: &BodyModel,
    raw_imu: &[BodyParams],
    imu_head: &[TimedPose],
    localizations: &LocalizationStream,
    calib: &CalibrationResult,
    config: &DriftConfig,
) -> Result<Registration> {
    if raw_imu.len() != imu_head.len() {
        return Err(Error::LengthMismatch {
            what: "IMU body parameters vs head poses",
            left: raw_imu.len(),
            right: imu_head.len(),
        });
    }
    let mapped = map_body_to_scene(body, raw_imu, &calib.x_wz);
    let times: Vec<f64> = imu_head.iter().map(|h| h.time).collect();
    let points: Vec<Vec3> = imu_head
        .iter()
        .map(|h| head_in_world(calib, &h.pose).translation)
        .collect();
    let head_path = Trajectory2::from_points(times, &points)?;
    if localizations.is_empty() {
        log::warn!("registration: empty localization stream, drift left uncorrected");
        return Ok(Registration {
            params: mapped,
            corrected_head_path: head_path.clone(),
            head_path,
        });
    }
    let locs = localizations.shifted(-calib.time_offset);
    let corrected = correct_drift(&head_path, &locs, config.conf_threshold, &config.bend)?;
    let params = adapt_body_params(body, &mapped, &head_path, &corrected)?;
    Ok(Registration {
        params,
        head_path,
        corrected_head_path: corrected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Vertex;
    use crate::geometry::Vec2;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn walk(n: usize, fps: f64) -> (Vec<f64>, Vec<Vec2>) {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / fps).collect();
        let xy = times
            .iter()
            .map(|&t| Vec2::new(t, 1.5 * (0.3 * t).sin()))
            .collect();
        (times, xy)
    }

    fn locs_at(times: &[f64], xy: &[Vec2], step: usize, conf: f64) -> LocalizationStream {
        LocalizationStream::new(
            (0..times.len())
                .step_by(step)
                .map(|k| {
                    TimedPose::new(
                        times[k],
                        RigidTransform3::from_translation(Vec3::new(xy[k].x, xy[k].y, 1.7)),
                        conf,
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn anchors_on_the_path_leave_it_unchanged() {
        let (times, xy) = walk(300, 30.0);
        let traj = Trajectory2::new(times.clone(), xy.clone(), vec![1.7; 300]).unwrap();
        let out = correct_drift(
            &traj,
            &locs_at(&times, &xy, 30, 0.9),
            0.5,
            &DriftConfig::default().bend,
        )
        .unwrap();
        for (a, b) in out.xy().iter().zip(traj.xy()) {
            assert!((a - b).norm() < 1e-6);
        }
        let out = correct_drift(
            &traj,
            &locs_at(&times, &xy, 30, 0.4),
            0.5,
            &DriftConfig::default().bend,
        )
        .unwrap();
        assert_eq!(out, traj);
    }

    /// Truth walk plus drift of 1 cm per meter travelled, and the truth.
    fn drifting(fps: f64, seconds: f64) -> (Trajectory2, Vec<Vec2>) {
        let n = (seconds * fps) as usize + 1;
        let (times, truth) = walk(n, fps);
        let dir = Vec2::new(0.3, 1.0).normalize();
        let mut travelled = 0.0;
        let mut drifted = vec![truth[0]];
        for k in 1..n {
            travelled += (truth[k] - truth[k - 1]).norm();
            drifted.push(truth[k] + dir * 0.01 * travelled);
        }
        let z: Vec<f64> = (0..n).map(|k| 1.7 + 0.01 * (k as f64).sin()).collect();
        (Trajectory2::new(times, drifted, z).unwrap(), truth)
    }

    #[test]
    fn drift_is_removed_at_anchor_times() {
        let fps = 60.0;
        let (traj, truth) = drifting(fps, 20.0);
        let locs = locs_at(traj.times(), &truth, 120, 0.9);
        let out = correct_drift(&traj, &locs, 0.5, &DriftConfig::default().bend).unwrap();
        for k in (0..traj.len()).step_by(120) {
            assert!((out.xy()[k] - truth[k]).norm() < 0.02, "frame {k}");
        }
        assert_eq!(out.z(), traj.z());
    }

    #[test]
    fn far_from_anchors_moves_at_most_the_largest_correction() {
        let fps = 30.0;
        let (traj, truth) = drifting(fps, 30.0);
        // Anchors only in the first 10 s.
        let entries: Vec<TimedPose> = (0..=300)
            .step_by(60)
            .map(|k| {
                TimedPose::new(
                    traj.times()[k],
                    RigidTransform3::from_translation(Vec3::new(truth[k].x, truth[k].y, 0.0)),
                    1.0,
                )
            })
            .collect();
        let max_corr = (0..=300)
            .step_by(60)
            .map(|k| (traj.xy()[k] - truth[k]).norm())
            .fold(0.0, f64::max);
        let out = correct_drift(
            &traj,
            &LocalizationStream::new(entries).unwrap(),
            0.5,
            &DriftConfig::default().bend,
        )
        .unwrap();
        for k in 0..traj.len() {
            if traj.times()[k] > 15.0 {
                assert!((out.xy()[k] - traj.xy()[k]).norm() <= max_corr + 1e-9);
            }
        }
    }

    fn head_params(body: &BodyModel, n: usize) -> (Vec<BodyParams>, Trajectory2) {
        let params: Vec<BodyParams> = (0..n)
            .map(|i| {
                let t = i as f64 * 0.1;
                let mut p = BodyParams::zero(body.joint_count());
                p.theta[2] = 0.3 * t;
                p.theta[3 * 7 + 1] = 0.2 * t.sin();
                p.gamma = Vec3::new(t, 0.5 * t * t, 0.0);
                p
            })
            .collect();
        let heads: Vec<Vec3> = params
            .iter()
            .map(|p| body.forward_kinematics(p, Vertex::Head).unwrap())
            .collect();
        let times = (0..n).map(|i| i as f64 * 0.1).collect();
        (params, Trajectory2::from_points(times, &heads).unwrap())
    }

    #[test]
    fn adapt_examples() {
        let body = BodyModel::standard();
        let (params, traj) = head_params(&body, 20);
        assert_eq!(adapt_body_params(&body, &params, &traj, &traj).unwrap(), params);

        let shifted = traj
            .with_xy(traj.xy().iter().map(|p| p + Vec2::new(1.0, 0.0)).collect())
            .unwrap();
        let out = adapt_body_params(&body, &params, &traj, &shifted).unwrap();
        for (a, b) in out.iter().zip(&params) {
            assert_relative_eq!(a.gamma, b.gamma + Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
            assert_relative_eq!(a.theta.as_slice(), b.theta.as_slice(), epsilon = 1e-12);
        }

        let r = nalgebra::Rotation2::new(30f64.to_radians());
        let rotated = traj.with_xy(traj.xy().iter().map(|p| r * p).collect()).unwrap();
        let out = adapt_body_params(&body, &params, &traj, &rotated).unwrap();
        for (p, target) in out.iter().zip(rotated.points()) {
            let h = body.forward_kinematics(p, Vertex::Head).unwrap();
            assert!((h - target).norm() < 1e-6);
        }
        assert!(adapt_body_params(&body, &params[1..], &traj, &traj).is_err());
    }

    #[test]
    fn registration_without_drift_is_the_scene_mapping() {
        let body = BodyModel::standard();
        let (params, _) = head_params(&body, 40);
        let heads: Vec<TimedPose> = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let posed = body.pose(p).unwrap();
                TimedPose::new(
                    i as f64 * 0.1,
                    posed.joint_transform(crate::body::joints::HEAD),
                    1.0,
                )
            })
            .collect();
        let calib = CalibrationResult {
            x_wz: RigidTransform3::identity(),
            x_ic: RigidTransform3::identity(),
            time_offset: 0.0,
            inlier_ratio: 1.0,
        };
        let locs = LocalizationStream::new(heads.iter().step_by(5).copied().collect()).unwrap();
        let reg = register_human(&body, &params, &heads, &locs, &calib, &DriftConfig::default()).unwrap();
        for (a, b) in reg.params.iter().zip(&params) {
            assert!((a.gamma - b.gamma).norm() < 1e-6);
            for (x, y) in a.theta.iter().zip(&b.theta) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let reg = register_human(
            &body,
            &params,
            &heads,
            &LocalizationStream::default(),
            &calib,
            &DriftConfig::default(),
        )
        .unwrap();
        assert_eq!(reg.head_path, reg.corrected_head_path);
        for (a, b) in reg.params.iter().zip(&params) {
            assert!((a.gamma - b.gamma).norm() < 1e-12);
            assert!(a.theta.iter().zip(&b.theta).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn stream_must_be_time_ordered() {
        let e = TimedPose::new(1.0, RigidTransform3::identity(), 1.0);
        assert!(LocalizationStream::new(vec![e, TimedPose { time: 0.5, ..e }]).is_err());
    }
}
