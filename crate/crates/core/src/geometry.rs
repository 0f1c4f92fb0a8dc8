//! Rigid-body primitives, rotation averaging and robust planar alignment.
//!
//! Rotations are stored as 3x3 matrices. Axis-angle vectors only appear at the
//! pose-parameter boundary (see [`so3::exp`] and [`so3::log`]).

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % TAU;
    if r > PI {
        r -= TAU;
    } else if r <= -PI {
        r += TAU;
    }
    r
}

/// Signed angle that rotates `from` onto `to` in the plane.
pub fn signed_angle(from: &Vec2, to: &Vec2) -> f64 {
    let cross = from.x * to.y - from.y * to.x;
    let dot = from.dot(to);
    cross.atan2(dot)
}

pub mod so3 {
    use super::{Mat3, Vec3};
    #[allow(unused_imports)]
    use num_traits::Float;

    pub fn skew(v: &Vec3) -> Mat3 {
        Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
    }

    /// Rodrigues formula.
    pub fn exp(w: &Vec3) -> Mat3 {
        let theta2 = w.norm_squared();
        let k = skew(w);
        let (a, b) = if theta2 < 1e-16 {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        Mat3::identity() + k * a + k * k * b
    }

    /// Inverse of [`exp`], returning the axis-angle vector with angle in `[0, pi]`.
    pub fn log(r: &Mat3) -> Vec3 {
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = cos.acos();
        let v = Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        if theta < 1e-6 {
            return v * (0.5 + theta * theta / 12.0);
        }
        if core::f64::consts::PI - theta > 1e-4 {
            return v * (theta / (2.0 * theta.sin()));
        }
        // Near pi: recover the axis from the symmetric part.
        let s = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
        let diag = Vec3::new(s[(0, 0)], s[(1, 1)], s[(2, 2)]);
        let i = diag.imax();
        let mut axis = s.column(i).into_owned();
        axis /= axis.norm();
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    /// Right Jacobian: `exp(w + d) ~= exp(w) exp(J_r(w) d)` for small `d`.
    pub fn right_jacobian(w: &Vec3) -> Mat3 {
        let theta2 = w.norm_squared();
        let k = skew(w);
        let (a, b) = if theta2 < 1e-10 {
            (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            let theta = theta2.sqrt();
            (
                (1.0 - theta.cos()) / theta2,
                (theta - theta.sin()) / (theta2 * theta),
            )
        };
        Mat3::identity() - k * a + k * k * b
    }

    pub fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// Heading of the rotated x axis projected onto the XY plane.
    pub fn yaw(r: &Mat3) -> f64 {
        r[(1, 0)].atan2(r[(0, 0)])
    }

    /// Angle of the relative rotation `a^T b`.
    pub fn geodesic_distance(a: &Mat3, b: &Mat3) -> f64 {
        let r = a.transpose() * b;
        let sin = 0.5
            * Vec3::new(
                r[(2, 1)] - r[(1, 2)],
                r[(0, 2)] - r[(2, 0)],
                r[(1, 0)] - r[(0, 1)],
            )
            .norm();
        let cos = 0.5 * (r.trace() - 1.0);
        sin.atan2(cos)
    }

    /// Smallest rotation taking direction `from` onto direction `to`.
    pub fn between(from: &Vec3, to: &Vec3) -> Mat3 {
        let a = from.normalize();
        let b = to.normalize();
        let axis = a.cross(&b);
        let sin = axis.norm();
        let cos = a.dot(&b);
        if sin < 1e-12 {
            if cos > 0.0 {
                return Mat3::identity();
            }
            let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let perp = a.cross(&helper).normalize();
            return exp(&(perp * core::f64::consts::PI));
        }
        exp(&(axis * (sin.atan2(cos) / sin)))
    }
}

/// Element of SE(3): `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform3> for TransformRepr {
    fn from(t: RigidTransform3) -> Self {
        let r = &t.rotation;
        TransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform3 {
    type Error = &'static str;

    fn try_from(r: TransformRepr) -> core::result::Result<Self, Self::Error> {
        let m = &r.rotation;
        let rotation = Mat3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        let t = RigidTransform3 {
            rotation,
            translation: Vec3::from(r.translation),
        };
        if !t.is_finite() {
            return Err("non-finite transform");
        }
        if !t.is_valid(1e-6) {
            return Err("rotation is not orthonormal with determinant +1");
        }
        Ok(t)
    }
}

impl Default for RigidTransform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform3 {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    pub fn from_axis_angle(w: Vec3, t: Vec3) -> Self {
        Self::new(so3::exp(&w), t)
    }

    /// Rotation about +z followed by a translation.
    pub fn planar(yaw: f64, t: Vec3) -> Self {
        Self::new(so3::rot_z(yaw), t)
    }

    /// Rotation by `angle` about the vertical axis through `pivot`.
    pub fn rotation_about_z(angle: f64, pivot: &Vec3) -> Self {
        let r = so3::rot_z(angle);
        let pivot_xy = Vec3::new(pivot.x, pivot.y, 0.0);
        Self::new(r, pivot_xy - r * pivot_xy)
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform3) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn yaw(&self) -> f64 {
        so3::yaw(&self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Orthonormality and determinant check at tolerance `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Mat3::identity()).norm();
        err < tol && (self.rotation.determinant() - 1.0).abs() < tol
    }

    /// Planar part of the transform: z-rotation and XY translation.
    pub fn to_planar(&self) -> RigidTransform2 {
        RigidTransform2::new(self.yaw(), Vec2::new(self.translation.x, self.translation.y))
    }

    /// Translation distance and rotation angle between two transforms.
    pub fn distance_to(&self, other: &RigidTransform3) -> (f64, f64) {
        (
            (self.translation - other.translation).norm(),
            so3::geodesic_distance(&self.rotation, &other.rotation),
        )
    }
}

/// Element of SE(2) with the angle kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2 {
    pub angle: f64,
    pub translation: Vec2,
}

impl Default for RigidTransform2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform2 {
    pub fn new(angle: f64, translation: Vec2) -> Self {
        Self {
            angle: wrap_angle(angle),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, Vec2::zeros())
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn apply(&self, p: &Vec2) -> Vec2 {
        self.rotation() * p + self.translation
    }

    pub fn compose(&self, other: &RigidTransform2) -> Self {
        Self::new(
            self.angle + other.angle,
            self.rotation() * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let r_inv = Self::new(-self.angle, Vec2::zeros()).rotation();
        Self::new(-self.angle, -(r_inv * self.translation))
    }

    /// Lifts to SE(3) as a z-rotation with the given z translation.
    pub fn to_3d(&self, z: f64) -> RigidTransform3 {
        RigidTransform3::planar(self.angle, Vec3::new(self.translation.x, self.translation.y, z))
    }
}

/// Timestamped position with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint3 {
    pub time: f64,
    pub position: Vec3,
    pub confidence: f64,
}

impl TimedPoint3 {
    pub fn new(time: f64, position: Vec3, confidence: f64) -> Self {
        Self {
            time,
            position,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn xy(&self) -> Vec2 {
        Vec2::new(self.position.x, self.position.y)
    }
}

/// A timestamped pose with a confidence score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub time: f64,
    pub pose: RigidTransform3,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

impl TimedPose {
    pub fn new(time: f64, pose: RigidTransform3, confidence: f64) -> Self {
        Self {
            time,
            pose,
            confidence,
        }
    }

    pub fn position(&self) -> TimedPoint3 {
        TimedPoint3::new(self.time, self.pose.translation, self.confidence)
    }
}

/// Chordal L2 mean: the rotation minimizing the summed squared Frobenius
/// distance to the inputs, obtained by projecting the arithmetic mean matrix
/// onto SO(3).
pub fn chordal_mean_rotation(rotations: &[Mat3]) -> Result<Mat3> {
    if rotations.is_empty() {
        return Err(Error::Empty("rotation set"));
    }
    let mean = rotations.iter().fold(Mat3::zeros(), |acc, r| acc + r) / rotations.len() as f64;
    project_to_so3(&mean)
}

/// Orthogonal polar factor with determinant +1.
pub fn project_to_so3(m: &Mat3) -> Result<Mat3> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateRotationSet),
    };
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[1] < 1e-9 {
        return Err(Error::DegenerateRotationSet);
    }
    let smallest = s.imin();
    let mut d = Mat3::identity();
    d[(smallest, smallest)] = (u * v_t).determinant().signum();
    Ok(u * d * v_t)
}

/// Closed-form least-squares rigid alignment `dst ~= R src + t` in the plane.
pub fn procrustes_2d(src: &[Vec2], dst: &[Vec2]) -> Result<RigidTransform2> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch {
            what: "procrustes point sets",
            left: src.len(),
            right: dst.len(),
        });
    }
    if src.is_empty() {
        return Err(Error::Empty("procrustes point sets"));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec2>() / n;
    let cd = dst.iter().sum::<Vec2>() / n;
    let (mut dot, mut cross) = (0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        let b = d - cd;
        dot += a.dot(&b);
        cross += a.x * b.y - a.y * b.x;
    }
    let angle = if dot == 0.0 && cross == 0.0 {
        0.0
    } else {
        cross.atan2(dot)
    };
    let rot = RigidTransform2::new(angle, Vec2::zeros());
    Ok(RigidTransform2::new(angle, cd - rot.rotation() * cs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier residual bound (meters).
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Largest time gap for pairing samples of the two streams (seconds).
    pub max_time_gap: f64,
    /// Source spread below which no rotation can be estimated (meters).
    pub min_baseline: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            iterations: 500,
            seed: 0,
            max_time_gap: 0.02,
            min_baseline: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    /// Maps source XY onto target XY.
    pub transform: RigidTransform2,
    /// Matched `(source index, target index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// One flag per entry of `pairs`.
    pub inliers: Vec<bool>,
    /// Set when the source points carry no direction information and only a
    /// translation was fitted.
    pub translation_only: bool,
    /// Truncated squared residual sum, `sum min(r^2, threshold^2)`.
    pub cost: f64,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    /// Cost per matched pair. Offsets that match fewer pairs are not favoured.
    pub fn mean_cost(&self) -> f64 {
        if self.pairs.is_empty() {
            f64::INFINITY
        } else {
            self.cost / self.pairs.len() as f64
        }
    }

    pub fn inlier_ratio(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.inlier_count() as f64 / self.pairs.len() as f64
        }
    }
}

/// Pairs source and target samples that are mutually nearest in time after
/// shifting source times by `offset`, with a gap of at most `max_gap`. Ties
/// pick the earlier sample. Pairs come out in source order.
pub fn match_by_time(
    source: &[TimedPoint3],
    target: &[TimedPoint3],
    offset: f64,
    max_gap: f64,
) -> Vec<(usize, usize)> {
    let src_times: Vec<f64> = source.iter().map(|s| s.time + offset).collect();
    let tgt_times: Vec<f64> = target.iter().map(|t| t.time).collect();
    let src_index = TimeIndex::new(&src_times);
    let tgt_index = TimeIndex::new(&tgt_times);
    (0..source.len())
        .filter_map(|si| {
            let (ti, gap) = tgt_index.nearest(src_times[si])?;
            if gap > max_gap {
                return None;
            }
            let (back, _) = src_index.nearest(tgt_times[ti])?;
            (back == si).then_some((si, ti))
        })
        .collect()
}

/// Sorted view of a time series for nearest-sample queries.
struct TimeIndex<'a> {
    times: &'a [f64],
    order: Vec<usize>,
}

impl<'a> TimeIndex<'a> {
    fn new(times: &'a [f64]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
        Self { times, order }
    }

    /// Index and gap of the sample nearest to `t`; the lowest index among
    /// equally near samples.
    fn nearest(&self, t: f64) -> Option<(usize, f64)> {
        let k = self.order.partition_point(|&i| self.times[i] < t);
        let mut best: Option<(usize, f64)> = None;
        let mut consider = |i: usize| {
            let gap = (self.times[i] - t).abs();
            if best.is_none_or(|(b, g)| gap < g || (gap == g && i < b)) {
                best = Some((i, gap));
            }
        };
        // Walk outwards over runs of equal times on both sides.
        if k > 0 {
            let tb = self.times[self.order[k - 1]];
            let mut j = k;
            while j > 0 && self.times[self.order[j - 1]] == tb {
                j -= 1;
                consider(self.order[j]);
            }
        }
        if k < self.order.len() {
            let ta = self.times[self.order[k]];
            let mut j = k;
            while j < self.order.len() && self.times[self.order[j]] == ta {
                consider(self.order[j]);
                j += 1;
            }
        }
        best
    }
}

/// Robust planar alignment of temporally matched samples.
pub fn ransac_align_2d(
    source: &[TimedPoint3],
    target: &[TimedPoint3],
    config: &RansacConfig,
) -> Result<RansacFit> {
    ransac_align_2d_with_offset(source, target, 0.0, config)
}

pub(crate) fn ransac_align_2d_with_offset(
    source: &[TimedPoint3],
    target: &[TimedPoint3],
    offset: f64,
    config: &RansacConfig,
) -> Result<RansacFit> {
    let pairs = match_by_time(source, target, offset, config.max_time_gap);
    if pairs.len() < 2 {
        return Err(Error::InsufficientPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    let src: Vec<Vec2> = pairs.iter().map(|&(s, _)| source[s].xy()).collect();
    let dst: Vec<Vec2> = pairs.iter().map(|&(_, t)| target[t].xy()).collect();
    let threshold = config.threshold;
    let mark = |tf: &RigidTransform2| -> Vec<bool> {
        src.iter()
            .zip(&dst)
            .map(|(s, d)| (tf.apply(s) - d).norm() < threshold)
            .collect()
    };
    let cost = |tf: &RigidTransform2| -> f64 {
        src.iter()
            .zip(&dst)
            .map(|(s, d)| (tf.apply(s) - d).norm_squared().min(threshold * threshold))
            .sum()
    };

    let spread = src.iter().map(|p| (p - src[0]).norm()).fold(0.0, f64::max);
    if spread < config.min_baseline {
        let fit_translation = |mask: Option<&[bool]>| -> Vec2 {
            let (sum, n) =
                src.iter()
                    .zip(&dst)
                    .enumerate()
                    .fold((Vec2::zeros(), 0usize), |(acc, n), (i, (s, d))| {
                        if mask.is_none_or(|m| m[i]) {
                            (acc + (d - s), n + 1)
                        } else {
                            (acc, n)
                        }
                    });
            if n == 0 {
                Vec2::zeros()
            } else {
                sum / n as f64
            }
        };
        let mut tf = RigidTransform2::new(0.0, fit_translation(None));
        let mut inliers = mark(&tf);
        if inliers.iter().any(|&b| b) {
            tf = RigidTransform2::new(0.0, fit_translation(Some(&inliers)));
            inliers = mark(&tf);
        }
        log::warn!("ransac: degenerate source geometry, fitted translation only");
        return Ok(RansacFit {
            cost: cost(&tf),
            transform: tf,
            pairs,
            inliers,
            translation_only: true,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = src.len();
    let mut best: Option<(f64, RigidTransform2)> = None;
    for _ in 0..config.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let ds = src[j] - src[i];
        if ds.norm() < config.min_baseline {
            continue;
        }
        let dd = dst[j] - dst[i];
        let angle = signed_angle(&ds, &dd);
        let rot = RigidTransform2::new(angle, Vec2::zeros());
        let mid_s = (src[i] + src[j]) * 0.5;
        let mid_d = (dst[i] + dst[j]) * 0.5;
        let hypothesis = RigidTransform2::new(angle, mid_d - rot.rotation() * mid_s);
        let c = cost(&hypothesis);
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, hypothesis));
        }
    }
    let mut tf = match best {
        Some((_, h)) => h,
        None => procrustes_2d(&src, &dst)?,
    };
    let mut inliers = mark(&tf);
    let mut best_cost = cost(&tf);
    for _ in 0..10 {
        let (s_in, d_in): (Vec<Vec2>, Vec<Vec2>) = src
            .iter()
            .zip(&dst)
            .zip(&inliers)
            .filter(|(_, &keep)| keep)
            .map(|((s, d), _)| (*s, *d))
            .unzip();
        if s_in.len() < 2 {
            break;
        }
        let refit = procrustes_2d(&s_in, &d_in)?;
        let c = cost(&refit);
        if c > best_cost {
            break;
        }
        tf = refit;
        best_cost = c;
        let next = mark(&tf);
        if next == inliers {
            break;
        }
        inliers = next;
    }
    Ok(RansacFit {
        transform: tf,
        pairs,
        inliers,
        translation_only: false,
        cost: best_cost,
    })
}

/// Runs RANSAC once per candidate offset (source times shifted by the
/// offset) and keeps the offset with the lowest mean truncated cost. Equal
/// costs prefer the smaller `|offset|`, then the earlier candidate.
pub fn grid_search_time_offset(
    source: &[TimedPoint3],
    target: &[TimedPoint3],
    offsets: &[f64],
    config: &RansacConfig,
) -> Result<(f64, RansacFit)> {
    if offsets.is_empty() {
        return Err(Error::Empty("time offset grid"));
    }
    let mut best: Option<(f64, RansacFit)> = None;
    let mut last_err = None;
    for &offset in offsets {
        match ransac_align_2d_with_offset(source, target, offset, config) {
            Ok(fit) => {
                let better = match &best {
                    None => true,
                    Some((o, b)) => {
                        let (c, bc) = (fit.mean_cost(), b.mean_cost());
                        c < bc || (c == bc && offset.abs() < o.abs())
                    }
                };
                if better {
                    best = Some((offset, fit));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(b) => Ok(b),
        None => Err(last_err.unwrap_or(Error::Empty("time offset grid"))),
    }
}

/// Multiples of `step` with magnitude at most `max`, in increasing order.
pub fn symmetric_offset_grid(max: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || max <= 0.0 {
        return alloc::vec![0.0];
    }
    let n = (max / step + 1e-9).floor() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

/// Evenly spaced offsets from `min` to `max` inclusive.
pub fn offset_grid(min: f64, max: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || max < min {
        return alloc::vec![min];
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| min + step * k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rz(deg: f64) -> Mat3 {
        so3::rot_z(deg.to_radians())
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let a = RigidTransform3::new(rz(30.0), Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform3::new(rz(60.0), Vec3::zeros());
        let c = a.compose(&b);
        let h = a.to_homogeneous() * b.to_homogeneous();
        assert_relative_eq!(c.to_homogeneous(), h, epsilon = 1e-12);
        assert_relative_eq!(c.rotation, rz(90.0), epsilon = 1e-12);
        assert_relative_eq!(c.translation, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = RigidTransform3::from_axis_angle(Vec3::new(0.3, -0.2, 1.1), Vec3::new(1.0, 2.0, -3.0));
        let id = t.compose(&t.inverse());
        assert_relative_eq!(id.rotation, Mat3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vec3::zeros(), epsilon = 1e-12);
        assert_eq!(RigidTransform3::identity().compose(&t), t);
    }

    #[test]
    fn exp_log_round_trip_near_pi() {
        for w in [
            Vec3::new(0.0, 0.0, 3.14159),
            Vec3::new(1e-9, 0.0, 0.0),
            Vec3::new(2.0, -1.0, 0.5),
            Vec3::new(0.0, core::f64::consts::PI, 0.0),
        ] {
            let r = so3::exp(&w);
            assert_relative_eq!(so3::exp(&so3::log(&r)), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn chordal_mean_examples() {
        let r = so3::exp(&Vec3::new(0.2, 0.4, -0.1));
        assert_relative_eq!(chordal_mean_rotation(&[r, r, r]).unwrap(), r, epsilon = 1e-12);
        assert_relative_eq!(
            chordal_mean_rotation(&[rz(10.0), rz(-10.0)]).unwrap(),
            Mat3::identity(),
            epsilon = 1e-12
        );
        assert!(matches!(chordal_mean_rotation(&[]), Err(Error::Empty(_))));
        assert_eq!(
            chordal_mean_rotation(&[rz(0.0), rz(180.0)]),
            Err(Error::DegenerateRotationSet)
        );
    }

    #[test]
    fn chordal_mean_of_quarter_turn_matches_grid_search() {
        // Brute force over z rotations on a 0.01 degree grid.
        let inputs = [rz(0.0), rz(90.0)];
        let cost = |deg: f64| -> f64 { inputs.iter().map(|r| (rz(deg) - r).norm_squared()).sum() };
        let mut best = (0.0, f64::INFINITY);
        for k in 0..=36000 {
            let deg = -180.0 + k as f64 * 0.01;
            let c = cost(deg);
            if c < best.1 {
                best = (deg, c);
            }
        }
        assert_relative_eq!(best.0, 45.0, epsilon = 1e-9);
        let mean = chordal_mean_rotation(&inputs).unwrap();
        assert_relative_eq!(so3::yaw(&mean).to_degrees(), best.0, epsilon = 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            RigidTransform2::new(7.0, Vec2::zeros()).angle,
            7.0 - TAU,
            epsilon = 1e-12
        );
    }

    fn pts(v: &[(f64, f64)]) -> Vec<TimedPoint3> {
        v.iter()
            .enumerate()
            .map(|(i, &(x, y))| TimedPoint3::new(i as f64, Vec3::new(x, y, 0.0), 1.0))
            .collect()
    }

    #[test]
    fn ransac_noise_free_matches_procrustes() {
        let truth = RigidTransform2::new(30f64.to_radians(), Vec2::new(1.0, 2.0));
        let raw = [
            (0.0, 0.0),
            (1.0, 0.3),
            (2.0, -0.5),
            (0.5, 1.5),
            (-1.0, 0.7),
            (3.0, 2.0),
        ];
        let src = pts(&raw);
        let dst: Vec<TimedPoint3> = src
            .iter()
            .map(|p| {
                let q = truth.apply(&p.xy());
                TimedPoint3::new(p.time, Vec3::new(q.x, q.y, 0.0), 1.0)
            })
            .collect();
        let fit = ransac_align_2d(&src, &dst, &RansacConfig::default()).unwrap();
        let s: Vec<Vec2> = src.iter().map(|p| p.xy()).collect();
        let d: Vec<Vec2> = dst.iter().map(|p| p.xy()).collect();
        let oracle = procrustes_2d(&s, &d).unwrap();
        assert_relative_eq!(fit.transform.angle, oracle.angle, epsilon = 1e-9);
        assert_relative_eq!(fit.transform.translation, oracle.translation, epsilon = 1e-9);
        assert_relative_eq!(fit.transform.angle, truth.angle, epsilon = 1e-6);
        assert_relative_eq!(fit.transform.translation, truth.translation, epsilon = 1e-6);
        assert!(fit.inliers.iter().all(|&b| b));
    }

    #[test]
    fn ransac_identity_and_errors() {
        let src = pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]);
        let fit = ransac_align_2d(&src, &src, &RansacConfig::default()).unwrap();
        assert_relative_eq!(fit.transform.angle, 0.0, epsilon = 1e-12);
        assert_relative_eq!(fit.transform.translation.norm(), 0.0, epsilon = 1e-12);
        assert_eq!(fit.inlier_count(), 3);

        let one = pts(&[(0.0, 0.0)]);
        assert_eq!(
            ransac_align_2d(&one, &one, &RansacConfig::default()),
            Err(Error::InsufficientPairs { needed: 2, got: 1 })
        );
    }

    #[test]
    fn ransac_coincident_source_falls_back_to_translation() {
        let src = pts(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        let dst = pts(&[(2.0, 1.5), (2.0, 1.5), (2.0, 1.5)]);
        let fit = ransac_align_2d(&src, &dst, &RansacConfig::default()).unwrap();
        assert!(fit.translation_only);
        assert_relative_eq!(fit.transform.translation, Vec2::new(1.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn match_by_time_respects_gap_and_offset() {
        let src = pts(&[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        let dst: Vec<TimedPoint3> = [0.5, 1.5, 2.5, 9.0]
            .iter()
            .map(|&t| TimedPoint3::new(t, Vec3::zeros(), 1.0))
            .collect();
        assert_eq!(match_by_time(&src, &dst, 0.5, 0.01), [(0, 0), (1, 1), (2, 2)]);
        assert!(match_by_time(&src, &dst, 0.0, 0.01).is_empty());

        // A dense source against a sparse target keeps one pair per target.
        let dense: Vec<TimedPoint3> = (0..7)
            .map(|k| TimedPoint3::new(k as f64 / 6.0, Vec3::zeros(), 1.0))
            .collect();
        let sparse: Vec<TimedPoint3> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&t| TimedPoint3::new(t, Vec3::zeros(), 1.0))
            .collect();
        assert_eq!(match_by_time(&dense, &sparse, 0.0, 0.2), [(0, 0), (3, 1), (6, 2)]);
        assert_eq!(symmetric_offset_grid(0.25, 0.1), [-0.2, -0.1, 0.0, 0.1, 0.2]);
    }

    #[test]
    fn grid_search_prefers_smaller_offset_on_ties() {
        // Stationary samples: every offset fits with zero cost.
        let src: Vec<TimedPoint3> = (0..10)
            .map(|i| TimedPoint3::new(i as f64, Vec3::new(1.0, 1.0, 0.0), 1.0))
            .collect();
        let fit = grid_search_time_offset(
            &src,
            &src,
            &[-1.0, 1.0, 0.0, 0.5],
            &RansacConfig {
                max_time_gap: 10.0,
                threshold: 100.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.0, 0.0);
        let fit = grid_search_time_offset(
            &src,
            &src,
            &[1.0, -1.0],
            &RansacConfig {
                max_time_gap: 10.0,
                threshold: 100.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fit.0, 1.0);
        assert!(grid_search_time_offset(&src, &src, &[], &RansacConfig::default()).is_err());
    }

    #[test]
    fn grid_search_recovers_offset_on_curved_path() {
        let truth = RigidTransform2::new(0.7, Vec2::new(2.0, -1.0));
        let src: Vec<TimedPoint3> = (0..60)
            .map(|k| {
                let t = k as f64 * 0.1;
                TimedPoint3::new(t, Vec3::new(t.cos() * 3.0, (0.7 * t).sin() * 2.0, 1.6), 1.0)
            })
            .collect();
        let dst: Vec<TimedPoint3> = src
            .iter()
            .map(|p| {
                let q = truth.apply(&p.xy());
                TimedPoint3::new(p.time + 0.3, Vec3::new(q.x, q.y, 0.0), 1.0)
            })
            .collect();
        let grid = offset_grid(-0.5, 0.5, 0.1);
        let (offset, fit) = grid_search_time_offset(&src, &dst, &grid, &RansacConfig::default()).unwrap();
        assert!((offset - 0.3).abs() < 1e-9);
        assert!((fit.transform.angle - 0.7).abs() < 1e-9);
        assert_relative_eq!(fit.transform.translation, truth.translation, epsilon = 1e-9);
    }

    #[test]
    fn offset_grid_is_inclusive() {
        let g = offset_grid(-1.0, 1.0, 0.1);
        assert_eq!(g.len(), 21);
        assert_relative_eq!(g[20], 1.0, epsilon = 1e-12);
    }
}
