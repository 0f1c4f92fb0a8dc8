//! World (IMU frame to scene) and local (camera to head sensor) calibration.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, BodyParams};
use nalgebra::{SMatrix, SVector};

use crate::geometry::{
    chordal_mean_rotation, grid_search_time_offset, so3, symmetric_offset_grid, Mat3, RansacConfig,
    RansacFit, RigidTransform3, TimedPoint3, TimedPose, Vec3,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// IMU frame to scene. Rotation is about +z only.
    pub x_wz: RigidTransform3,
    /// Camera to head sensor.
    pub x_ic: RigidTransform3,
    /// Camera clock minus IMU clock (seconds).
    pub time_offset: f64,
    pub inlier_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub ransac: RansacConfig,
    /// Largest time offset searched (seconds).
    pub max_time_offset: f64,
    pub offset_step: f64,
    /// Skips the search and uses this offset.
    pub time_offset_override: Option<f64>,
    /// Number of camera poses averaged for the local calibration.
    pub k: usize,
    /// Only IMU samples this many seconds after the first one are used.
    pub window: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            max_time_offset: 0.5,
            offset_step: 1.0 / 60.0,
            time_offset_override: None,
            k: 5,
            window: Some(8.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldCalibration {
    pub x_wz: RigidTransform3,
    pub time_offset: f64,
    pub inlier_ratio: f64,
    /// Mean truncated squared XY residual of the fit.
    pub cost: f64,
}

/// Camera centres predicted from head poses and a camera-to-head guess.
fn camera_centres(imu_head: &[TimedPose], x_ic: &RigidTransform3) -> Vec<TimedPoint3> {
    imu_head
        .iter()
        .map(|h| TimedPoint3::new(h.time, h.pose.compose(x_ic).translation, 1.0))
        .collect()
}

/// Aligns head positions to camera positions in the XY plane with RANSAC
/// and a time-offset search. The vertical offset is the mean z residual of
/// the inliers.
pub fn calibrate_world(
    imu_head: &[TimedPose],
    cam: &[TimedPoint3],
    config: &CalibrationConfig,
) -> Result<WorldCalibration> {
    calibrate_world_with(imu_head, cam, &RigidTransform3::identity(), config)
}

/// As [`calibrate_world`], aligning the predicted camera centres
/// `H_t * x_ic` instead of the raw head positions.
pub fn calibrate_world_with(
    imu_head: &[TimedPose],
    cam: &[TimedPoint3],
    x_ic: &RigidTransform3,
    config: &CalibrationConfig,
) -> Result<WorldCalibration> {
    let grid = match config.time_offset_override {
        Some(o) => alloc::vec![o],
        None => symmetric_offset_grid(config.max_time_offset, config.offset_step),
    };
    Ok(world_fit(imu_head, cam, x_ic, &grid, &config.ransac)?.0)
}

fn world_fit(
    imu_head: &[TimedPose],
    cam: &[TimedPoint3],
    x_ic: &RigidTransform3,
    grid: &[f64],
    ransac: &RansacConfig,
) -> Result<(WorldCalibration, RansacFit)> {
    let src = camera_centres(imu_head, x_ic);
    let (offset, fit) = grid_search_time_offset(&src, cam, grid, ransac)?;
    let (dz, n) = fit
        .pairs
        .iter()
        .zip(&fit.inliers)
        .filter(|(_, &keep)| keep)
        .fold((0.0, 0usize), |(acc, n), (&(s, t), _)| {
            (acc + cam[t].position.z - src[s].position.z, n + 1)
        });
    let dz = if n == 0 { 0.0 } else { dz / n as f64 };
    let world = WorldCalibration {
        x_wz: fit.transform.to_3d(dz),
        time_offset: offset,
        inlier_ratio: fit.inlier_ratio(),
        cost: fit.mean_cost(),
    };
    Ok((world, fit))
}

/// Averages `H_k^-1 X_wz^-1 C_k` over the `k` camera poses closest to their
/// predicted positions. Fewer poses than `k` are all used with a warning.
pub fn calibrate_local(
    cam_poses: &[TimedPose],
    imu_head: &[TimedPose],
    x_wz: &RigidTransform3,
    time_offset: f64,
    k: usize,
    max_time_gap: f64,
) -> Result<RigidTransform3> {
    calibrate_local_with(
        cam_poses,
        imu_head,
        x_wz,
        time_offset,
        k,
        max_time_gap,
        &RigidTransform3::identity(),
    )
}

fn calibrate_local_with(
    cam_poses: &[TimedPose],
    imu_head: &[TimedPose],
    x_wz: &RigidTransform3,
    time_offset: f64,
    k: usize,
    max_time_gap: f64,
    x_ic_guess: &RigidTransform3,
) -> Result<RigidTransform3> {
    if cam_poses.is_empty() {
        return Err(Error::Empty("camera poses"));
    }
    let src = camera_centres(imu_head, x_ic_guess);
    let tgt: Vec<TimedPoint3> = cam_poses.iter().map(|c| c.position()).collect();
    let pairs = crate::geometry::match_by_time(&src, &tgt, time_offset, max_time_gap);
    if pairs.is_empty() {
        return Err(Error::InsufficientPairs { needed: 1, got: 0 });
    }
    let mut ranked: Vec<(f64, f64, usize, usize)> = pairs
        .iter()
        .map(|&(s, c)| {
            let d = (x_wz.transform_point(&src[s].position) - tgt[c].position).norm();
            (d, cam_poses[c].time, s, c)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.3.cmp(&b.3)));
    if ranked.len() < k {
        log::warn!(
            "local calibration: {} camera poses available, wanted {k}",
            ranked.len()
        );
    }
    let chosen = &ranked[..k.min(ranked.len()).max(1)];
    let wz_inv = x_wz.inverse();
    let estimates: Vec<RigidTransform3> = chosen
        .iter()
        .map(|&(_, _, s, c)| {
            imu_head[s]
                .pose
                .inverse()
                .compose(&wz_inv)
                .compose(&cam_poses[c].pose)
        })
        .collect();
    let t = estimates.iter().map(|e| e.translation).sum::<Vec3>() / estimates.len() as f64;
    let rots: Vec<_> = estimates.iter().map(|e| e.rotation).collect();
    Ok(RigidTransform3::new(chordal_mean_rotation(&rots)?, t))
}

fn in_window(imu_head: &[TimedPose], window: Option<f64>) -> Vec<TimedPose> {
    match (window, imu_head.first()) {
        (Some(w), Some(first)) => imu_head
            .iter()
            .copied()
            .filter(|h| h.time - first.time <= w)
            .collect(),
        _ => imu_head.to_vec(),
    }
}

/// Full calibration. For every candidate time offset, head positions are
/// aligned to camera positions with RANSAC, then the planar world transform
/// and the camera position on the head are refined jointly on the inliers.
/// The offset with the lowest final cost wins; ties go to the smaller
/// magnitude. The camera-to-head transform comes from [`calibrate_local`]
/// under the winning world transform.
pub fn calibrate(
    imu_head: &[TimedPose],
    cam_poses: &[TimedPose],
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    if imu_head.is_empty() {
        return Err(Error::Empty("IMU head poses"));
    }
    if cam_poses.is_empty() {
        return Err(Error::Empty("camera poses"));
    }
    let imu = in_window(imu_head, config.window);
    let cam: Vec<TimedPoint3> = cam_poses.iter().map(|c| c.position()).collect();
    let grid = match config.time_offset_override {
        Some(o) => alloc::vec![o],
        None => symmetric_offset_grid(config.max_time_offset, config.offset_step),
    };
    let mut best: Option<(f64, CalibrationResult)> = None;
    let mut last_err = None;
    for &offset in &grid {
        match calibrate_at_offset(&imu, cam_poses, &cam, offset, config) {
            Ok((cost, result)) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(c, b)| cost < *c || (cost == *c && offset.abs() < b.time_offset.abs()));
                if better {
                    best = Some((cost, result));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, r)) => Ok(r),
        None => Err(last_err.unwrap_or(Error::Empty("time offset grid"))),
    }
}

fn calibrate_at_offset(
    imu: &[TimedPose],
    cam_poses: &[TimedPose],
    cam: &[TimedPoint3],
    offset: f64,
    config: &CalibrationConfig,
) -> Result<(f64, CalibrationResult)> {
    let (world, fit) = world_fit(imu, cam, &RigidTransform3::identity(), &[offset], &config.ransac)?;
    let mut model = LeverModel {
        yaw: world.x_wz.yaw(),
        t_wz: world.x_wz.translation,
        t_ic: Vec3::zeros(),
    };
    let thr2 = config.ransac.threshold * config.ransac.threshold;
    let mut inliers = fit.inliers.clone();
    for _ in 0..10 {
        let used: Vec<(usize, usize)> = fit
            .pairs
            .iter()
            .zip(&inliers)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        if used.len() < 2 {
            break;
        }
        model = model.refine(imu, cam, &used);
        let next: Vec<bool> = fit
            .pairs
            .iter()
            .map(|&(s, t)| model.residual_xy2(&imu[s].pose, &cam[t].position) < thr2)
            .collect();
        if next == inliers {
            break;
        }
        inliers = next;
    }
    let cost = if fit.pairs.is_empty() {
        f64::INFINITY
    } else {
        fit.pairs
            .iter()
            .map(|&(s, t)| model.residual_xy2(&imu[s].pose, &cam[t].position).min(thr2))
            .sum::<f64>()
            / fit.pairs.len() as f64
    };
    let x_wz = RigidTransform3::planar(model.yaw, model.t_wz);
    let guess = RigidTransform3::from_translation(model.t_ic);
    let gap = config.ransac.max_time_gap;
    let x_ic = calibrate_local_with(cam_poses, imu, &x_wz, offset, config.k, gap, &guess)?;
    let ratio = if inliers.is_empty() {
        0.0
    } else {
        inliers.iter().filter(|&&b| b).count() as f64 / inliers.len() as f64
    };
    Ok((
        cost,
        CalibrationResult {
            x_wz,
            x_ic,
            time_offset: offset,
            inlier_ratio: ratio,
        },
    ))
}

/// Planar world transform plus the camera position in the head frame.
#[derive(Debug, Clone, Copy)]
struct LeverModel {
    yaw: f64,
    t_wz: Vec3,
    t_ic: Vec3,
}

impl LeverModel {
    fn predict(&self, head: &RigidTransform3) -> Vec3 {
        so3::rot_z(self.yaw) * head.transform_point(&self.t_ic) + self.t_wz
    }

    fn residual_xy2(&self, head: &RigidTransform3, cam: &Vec3) -> f64 {
        let r = self.predict(head) - cam;
        r.x * r.x + r.y * r.y
    }

    /// Gauss-Newton on the 3D residuals of the given pairs. Directions the
    /// data cannot see (such as the lever height when the head never tilts)
    /// keep their current values.
    fn refine(mut self, imu: &[TimedPose], cam: &[TimedPoint3], pairs: &[(usize, usize)]) -> Self {
        for _ in 0..30 {
            let mut jtj = SMatrix::<f64, 7, 7>::zeros();
            let mut jtr = SVector::<f64, 7>::zeros();
            let rz = so3::rot_z(self.yaw);
            for &(s, t) in pairs {
                let h = &imu[s].pose;
                let q = rz * h.transform_point(&self.t_ic);
                let r = q + self.t_wz - cam[t].position;
                let mut j = SMatrix::<f64, 3, 7>::zeros();
                j.fixed_view_mut::<3, 1>(0, 0)
                    .copy_from(&Vec3::new(-q.y, q.x, 0.0));
                j.fixed_view_mut::<3, 3>(0, 1).copy_from(&Mat3::identity());
                j.fixed_view_mut::<3, 3>(0, 4).copy_from(&(rz * h.rotation));
                jtj += j.transpose() * j;
                jtr += j.transpose() * r;
            }
            let svd = jtj.svd(true, true);
            let tol = svd.singular_values.max() * 1e-10;
            let Ok(step) = svd.solve(&jtr, tol) else {
                break;
            };
            self.yaw -= step[0];
            self.t_wz -= step.fixed_rows::<3>(1);
            self.t_ic -= step.fixed_rows::<3>(4);
            if step.norm() < 1e-15 {
                break;
            }
        }
        self
    }
}

/// Reruns [`calibrate`] on the camera poses whose confidence reaches
/// `conf_threshold`, keeping the previous time offset.
pub fn recalibrate(
    imu_head: &[TimedPose],
    cam_poses: &[TimedPose],
    previous: &CalibrationResult,
    conf_threshold: f64,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let reliable: Vec<TimedPose> = cam_poses
        .iter()
        .copied()
        .filter(|c| c.confidence >= conf_threshold)
        .collect();
    let cfg = CalibrationConfig {
        time_offset_override: Some(previous.time_offset),
        ..*config
    };
    calibrate(imu_head, &reliable, &cfg)
}

/// Moves body parameters from the IMU frame into the scene.
pub fn map_body_to_scene(body: &BodyModel, params: &[BodyParams], x_wz: &RigidTransform3) -> Vec<BodyParams> {
    params.iter().map(|p| body.transform_params(p, x_wz)).collect()
}

/// Head sensor pose in the scene, `X_wz H X_ic`.
pub fn head_in_world(calib: &CalibrationResult, head: &RigidTransform3) -> RigidTransform3 {
    calib.x_wz.compose(head).compose(&calib.x_ic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Vertex;
    use approx::assert_relative_eq;

    fn head_path(n: usize) -> Vec<TimedPose> {
        (0..n)
            .map(|k| {
                let t = k as f64 / 60.0;
                let yaw = 0.4 * t + 0.3 * (1.3 * t).sin();
                let p = Vec3::new(
                    2.0 * (0.3 * t).sin() + t,
                    1.5 * (0.5 * t).cos(),
                    1.6 + 0.02 * (3.0 * t).sin(),
                );
                let nod = so3::exp(&Vec3::new(0.1 * (2.1 * t).sin(), 0.15 * (1.7 * t).cos(), 0.0));
                TimedPose::new(t, RigidTransform3::new(so3::rot_z(yaw) * nod, p), 1.0)
            })
            .collect()
    }

    fn cameras(
        head: &[TimedPose],
        x_wz: &RigidTransform3,
        x_ic: &RigidTransform3,
        offset: f64,
    ) -> Vec<TimedPose> {
        head.iter()
            .step_by(6)
            .map(|h| TimedPose::new(h.time + offset, x_wz.compose(&h.pose).compose(x_ic), 0.9))
            .collect()
    }

    #[test]
    fn noise_free_round_trip() {
        let head = head_path(480);
        let x_wz = RigidTransform3::planar(0.8, Vec3::new(3.0, -2.0, 0.1));
        let x_ic = RigidTransform3::from_axis_angle(Vec3::new(0.1, -0.2, 0.05), Vec3::new(0.08, 0.02, 0.1));
        let offset = 6.0 / 60.0;
        let cams = cameras(&head, &x_wz, &x_ic, offset);
        let calib = calibrate(&head, &cams, &CalibrationConfig::default()).unwrap();
        let (t, r) = calib.x_wz.distance_to(&x_wz);
        assert!(t < 1e-6 && r < 1e-6, "x_wz error {t} {r} {calib:?}");
        let (t, r) = calib.x_ic.distance_to(&x_ic);
        assert!(t < 1e-6 && r < 1e-6, "x_ic error {t} {r}");
        assert!((calib.time_offset - offset).abs() < 1e-6);
        for (h, c) in head.iter().step_by(6).zip(&cams) {
            let (t, r) = head_in_world(&calib, &h.pose).distance_to(&c.pose);
            assert!(t < 1e-6 && r < 1e-6);
        }
    }

    #[test]
    fn identity_data_gives_identity() {
        let head = head_path(300);
        let cams = cameras(
            &head,
            &RigidTransform3::identity(),
            &RigidTransform3::identity(),
            0.0,
        );
        let calib = calibrate(&head, &cams, &CalibrationConfig::default()).unwrap();
        let (t, r) = calib.x_wz.distance_to(&RigidTransform3::identity());
        assert!(t < 1e-9 && r < 1e-9);
        assert_eq!(calib.time_offset, 0.0);
    }

    #[test]
    fn local_calibration_examples() {
        let head = head_path(60);
        let x_ic = RigidTransform3::planar(0.2, Vec3::new(0.1, 0.0, 0.05));
        let cams = cameras(&head, &RigidTransform3::identity(), &x_ic, 0.0);
        let est = calibrate_local(&cams, &head, &RigidTransform3::identity(), 0.0, 5, 0.02).unwrap();
        let (t, r) = est.distance_to(&x_ic);
        assert!(t < 1e-9 && r < 1e-9);

        // Symmetric rotation errors average out.
        let h = TimedPose::new(0.0, RigidTransform3::identity(), 1.0);
        let heads = [h, TimedPose { time: 1.0, ..h }];
        let cams = [
            TimedPose::new(
                0.0,
                RigidTransform3::planar(5f64.to_radians(), Vec3::zeros()),
                1.0,
            ),
            TimedPose::new(
                1.0,
                RigidTransform3::planar(-5f64.to_radians(), Vec3::zeros()),
                1.0,
            ),
        ];
        let est = calibrate_local(&cams, &heads, &RigidTransform3::identity(), 0.0, 5, 0.02).unwrap();
        assert_relative_eq!(est.rotation, Mat3Id::identity(), epsilon = 1e-12);
        assert!(calibrate_local(&[], &heads, &RigidTransform3::identity(), 0.0, 5, 0.02).is_err());
    }

    type Mat3Id = crate::geometry::Mat3;

    #[test]
    fn local_calibration_ignores_duplicates_beyond_k() {
        let head = head_path(120);
        let x_ic = RigidTransform3::planar(-0.3, Vec3::new(0.05, 0.01, 0.1));
        let cams = cameras(&head, &RigidTransform3::identity(), &x_ic, 0.0);
        let a = calibrate_local(&cams, &head, &RigidTransform3::identity(), 0.0, 5, 0.02).unwrap();
        let mut dup = cams.clone();
        dup.extend(cams.iter().skip(10).copied());
        dup.sort_by(|a, b| a.time.total_cmp(&b.time));
        let b = calibrate_local(&dup, &head, &RigidTransform3::identity(), 0.0, 5, 0.02).unwrap();
        let (t, r) = a.distance_to(&b);
        assert!(t < 1e-12 && r < 1e-12, "{a:?} {b:?} {t} {r}");
    }

    #[test]
    fn map_body_examples() {
        let body = BodyModel::standard();
        let mut p = BodyParams::zero(body.joint_count());
        p.theta[0..3].copy_from_slice(&[0.1, -0.2, 0.7]);
        p.gamma = Vec3::new(0.5, 0.2, 0.0);
        let same = map_body_to_scene(&body, &[p.clone()], &RigidTransform3::identity());
        assert_relative_eq!(same[0].gamma, p.gamma);
        let d = Vec3::new(1.0, -2.0, 0.3);
        let moved = map_body_to_scene(&body, &[p.clone()], &RigidTransform3::from_translation(d));
        assert_relative_eq!(moved[0].gamma, p.gamma + d, epsilon = 1e-12);
        assert_relative_eq!(moved[0].theta.as_slice(), p.theta.as_slice(), epsilon = 1e-12);

        let tf = RigidTransform3::new(so3::rot_z(core::f64::consts::FRAC_PI_2), Vec3::new(0.3, 0.0, 0.0));
        let mapped = map_body_to_scene(&body, &[p.clone()], &tf);
        for v in [Vertex::Head, Vertex::Root, Vertex::HandRight] {
            let before = body.forward_kinematics(&p, v).unwrap();
            let after = body.forward_kinematics(&mapped[0], v).unwrap();
            assert_relative_eq!(after, tf.transform_point(&before), epsilon = 1e-9);
        }
    }
}
