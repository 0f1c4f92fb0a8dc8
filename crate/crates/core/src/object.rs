//! Object models, anchor localization and contact-driven tracking.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, BodyParams, Vertex};
use crate::geometry::{chordal_mean_rotation, so3, wrap_angle, RigidTransform3, Vec2, Vec3};
use crate::{Error, Result};

/// Label value for points that belong to no cluster.
pub const NOISE: i32 = -1;

/// Hand-to-hinge distances below this carry no angle information.
pub const HINGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    PlanarFree,
    Hinged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub id: String,
    /// Representative points in the object frame.
    pub points: Vec<Vec3>,
    pub motion_model: MotionModel,
    /// World position of the vertical hinge axis. Required for hinged objects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hinge_point: Option<Vec3>,
    /// Pose from a prior scan, used when no observation group yields an anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_pose: Option<RigidTransform3>,
}

impl ObjectModel {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Empty("object points"));
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("object points"));
        }
        match (self.motion_model, self.hinge_point) {
            (MotionModel::Hinged, None) => Err(Error::Invalid(alloc::format!(
                "hinged object {} has no hinge point",
                self.id
            ))),
            (MotionModel::Hinged, Some(h)) if !h.iter().all(|v| v.is_finite()) => {
                Err(Error::NonFinite("hinge point"))
            }
            _ => Ok(()),
        }
    }

    /// Object points mapped to the world by `pose`.
    pub fn posed_points(&self, pose: &RigidTransform3) -> Vec<Vec3> {
        self.points.iter().map(|p| pose.transform_point(p)).collect()
    }

    fn hinge(&self) -> Result<Vec3> {
        match (self.motion_model, self.hinge_point) {
            (MotionModel::Hinged, Some(h)) => Ok(h),
            _ => Err(Error::NotHinged(self.id.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectObservation {
    pub time: f64,
    /// Object-to-world pose.
    pub pose: RigidTransform3,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn vertex(self) -> Vertex {
        match self {
            Hand::Left => Vertex::HandLeft,
            Hand::Right => Vertex::HandRight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandSet {
    Left,
    Right,
    Both,
}

impl HandSet {
    pub fn hands(self) -> &'static [Hand] {
        match self {
            HandSet::Left => &[Hand::Left],
            HandSet::Right => &[Hand::Right],
            HandSet::Both => &[Hand::Left, Hand::Right],
        }
    }

    pub fn contains(self, hand: Hand) -> bool {
        self.hands().contains(&hand)
    }
}

/// Per-hand values. Absent entries mean the hand is not involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerHand<T> {
    pub left: Option<T>,
    pub right: Option<T>,
}

impl<T> Default for PerHand<T> {
    fn default() -> Self {
        Self {
            left: None,
            right: None,
        }
    }
}

impl<T> PerHand<T> {
    pub fn get(&self, hand: Hand) -> Option<&T> {
        match hand {
            Hand::Left => self.left.as_ref(),
            Hand::Right => self.right.as_ref(),
        }
    }

    pub fn set(&mut self, hand: Hand, value: T) {
        match hand {
            Hand::Left => self.left = Some(value),
            Hand::Right => self.right = Some(value),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Hand, &T)> {
        self.left
            .iter()
            .map(|v| (Hand::Left, v))
            .chain(self.right.iter().map(|v| (Hand::Right, v)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(Hand, &T) -> U) -> PerHand<U> {
        PerHand {
            left: self.left.as_ref().map(|v| f(Hand::Left, v)),
            right: self.right.as_ref().map(|v| f(Hand::Right, v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionLabel {
    pub start: f64,
    pub end: f64,
    pub hands: HandSet,
}

impl InteractionLabel {
    pub fn new(start: f64, end: f64, hands: HandSet) -> Result<Self> {
        if !(start < end) {
            return Err(Error::Invalid(alloc::format!(
                "interaction start {start} is not before end {end}"
            )));
        }
        Ok(Self { start, end, hands })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Checks that labels are well formed, sorted and disjoint.
pub fn validate_interactions(labels: &[InteractionLabel]) -> Result<()> {
    for l in labels {
        if !(l.start < l.end) {
            return Err(Error::Invalid(alloc::format!(
                "interaction [{}, {}] is empty",
                l.start,
                l.end
            )));
        }
    }
    for w in labels.windows(2) {
        if w[1].start <= w[0].end {
            return Err(Error::Invalid(alloc::format!(
                "interactions [{}, {}] and [{}, {}] overlap or are unsorted",
                w[0].start,
                w[0].end,
                w[1].start,
                w[1].end
            )));
        }
    }
    Ok(())
}

/// Density-based clustering. Points are visited in index order and each new
/// core point seeds a cluster that is expanded breadth first, so labels are
/// deterministic for a given input order. Neighbourhoods include the point
/// itself and use `distance <= eps`.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| (points[i] - points[j]).norm() <= eps)
            .collect()
    };
    const UNSEEN: i32 = i32::MIN;
    let mut labels = vec![UNSEEN; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i] != UNSEEN {
            continue;
        }
        let seed = neighbours(i);
        if seed.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = id;
        let mut queue: VecDeque<usize> = seed.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = id;
            }
            if labels[j] != UNSEEN {
                continue;
            }
            labels[j] = id;
            let nj = neighbours(j);
            if nj.len() >= min_pts {
                queue.extend(
                    nj.into_iter()
                        .filter(|&k| labels[k] == UNSEEN || labels[k] == NOISE),
                );
            }
        }
    }
    labels
}

/// Object pose estimate for the time between two interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGroup {
    /// End of the preceding interaction, if any.
    pub span_start: Option<f64>,
    /// Start of the following interaction, if any.
    pub span_end: Option<f64>,
    pub pose: Option<RigidTransform3>,
    /// Observations in the kept cluster.
    pub support: usize,
}

/// Splits observations into the `K + 1` static spans around `K`
/// interactions and averages the largest translation cluster of each.
pub fn anchor_localize(
    observations: &[ObjectObservation],
    interactions: &[InteractionLabel],
    eps: f64,
    min_pts: usize,
) -> Result<Vec<AnchorGroup>> {
    validate_interactions(interactions)?;
    let k = interactions.len();
    let mut groups = Vec::with_capacity(k + 1);
    for g in 0..=k {
        let lo = if g == 0 {
            None
        } else {
            Some(interactions[g - 1].end)
        };
        let hi = interactions.get(g).map(|l| l.start);
        let members: Vec<&ObjectObservation> = observations
            .iter()
            .filter(|o| lo.is_none_or(|t| o.time >= t) && hi.is_none_or(|t| o.time <= t))
            .collect();
        let (pose, support) = group_anchor(&members, eps, min_pts)?;
        if pose.is_none() {
            log::warn!("anchor group {g} has no usable observations");
        }
        groups.push(AnchorGroup {
            span_start: lo,
            span_end: hi,
            pose,
            support,
        });
    }
    Ok(groups)
}

fn group_anchor(
    members: &[&ObjectObservation],
    eps: f64,
    min_pts: usize,
) -> Result<(Option<RigidTransform3>, usize)> {
    let pts: Vec<Vec3> = members.iter().map(|o| o.pose.translation).collect();
    let labels = dbscan(&pts, eps, min_pts);
    let clusters = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    // (size, latest time) per cluster
    let mut stats = vec![(0usize, f64::NEG_INFINITY); clusters];
    for (o, &l) in members.iter().zip(&labels) {
        if l >= 0 {
            let s = &mut stats[l as usize];
            s.0 += 1;
            s.1 = s.1.max(o.time);
        }
    }
    let best = stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .max_by(|(_, a), (_, b)| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let Some((id, &(size, _))) = best else {
        return Ok((None, 0));
    };
    let chosen: Vec<&ObjectObservation> = members
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l == id as i32)
        .map(|(o, _)| *o)
        .collect();
    let t = chosen.iter().map(|o| o.pose.translation).sum::<Vec3>() / size as f64;
    let rots: Vec<_> = chosen.iter().map(|o| o.pose.rotation).collect();
    let r = chordal_mean_rotation(&rots)?;
    Ok((Some(RigidTransform3::new(r, t)), size))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactOffset {
    /// Root displacement that brings the hands onto the object.
    pub r_offset: Vec3,
    /// World contact point per involved hand.
    pub contacts: PerHand<Vec3>,
}

/// Nearest object point to each hand, and the mean hand-to-contact offset.
pub fn contact_offset(
    body: &BodyModel,
    params: &BodyParams,
    object_pose: &RigidTransform3,
    object: &ObjectModel,
    hands: HandSet,
) -> Result<ContactOffset> {
    object.validate()?;
    let world = object.posed_points(object_pose);
    let mut contacts = PerHand::default();
    let mut sum = Vec3::zeros();
    for &hand in hands.hands() {
        let h = body.forward_kinematics(params, hand.vertex())?;
        let c = nearest_point(&world, &h);
        sum += c - h;
        contacts.set(hand, c);
    }
    Ok(ContactOffset {
        r_offset: sum / hands.hands().len() as f64,
        contacts,
    })
}

/// First point at minimal distance from `q`.
pub fn nearest_point(points: &[Vec3], q: &Vec3) -> Vec3 {
    let mut best = (f64::INFINITY, points[0]);
    for p in points {
        let d = (p - q).norm_squared();
        if d < best.0 {
            best = (d, *p);
        }
    }
    best.1
}

/// Object poses while dragged by one or two hands. With two hands the
/// object follows the right hand and turns about it by the change in
/// direction of the left-to-right vector. With one hand it only translates.
/// The z components of the pose stay at their start values.
pub fn track_dragged(
    left: Option<&[Vec2]>,
    right: Option<&[Vec2]>,
    start_pose: &RigidTransform3,
) -> Result<Vec<RigidTransform3>> {
    let (lead, other) = match (right, left) {
        (Some(r), l) => (r, l),
        (None, Some(l)) => (l, None),
        (None, None) => return Err(Error::Empty("hand trajectories")),
    };
    if let Some(o) = other {
        if o.len() != lead.len() {
            return Err(Error::LengthMismatch {
                what: "hand trajectories",
                left: o.len(),
                right: lead.len(),
            });
        }
    }
    if lead.is_empty() {
        return Ok(Vec::new());
    }
    let angles = match other {
        Some(l) => {
            let dirs: Vec<Vec2> = lead.iter().zip(l).map(|(r, l)| r - l).collect();
            accumulate_angles(&dirs, 0.0)
        }
        None => vec![0.0; lead.len()],
    };
    let h0 = lead[0];
    let pivot0 = Vec3::new(h0.x, h0.y, 0.0);
    Ok(lead
        .iter()
        .zip(&angles)
        .map(|(h, &a)| {
            let moved = RigidTransform3::rotation_about_z(a, &pivot0);
            let shift = RigidTransform3::from_translation(Vec3::new(h.x - h0.x, h.y - h0.y, 0.0));
            shift.compose(&moved).compose(start_pose)
        })
        .collect())
}

/// Cumulative signed angle of a sequence of direction vectors, starting at
/// `start`. A vector shorter than [`HINGE_EPS`] adds no rotation, and the
/// next increment is measured against the last usable vector.
fn accumulate_angles(dirs: &[Vec2], start: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(dirs.len());
    let mut acc = start;
    let mut last: Option<Vec2> = None;
    for d in dirs {
        if d.norm() >= HINGE_EPS {
            if let Some(prev) = last {
                acc += wrap_angle(d.y.atan2(d.x) - prev.y.atan2(prev.x));
            }
            last = Some(*d);
        }
        out.push(acc);
    }
    out
}

/// Door angle per frame from a hand path around the hinge.
pub fn track_hinged(hand: &[Vec2], hinge: &Vec2, start_angle: f64) -> Vec<f64> {
    let dirs: Vec<Vec2> = hand.iter().map(|h| h - hinge).collect();
    accumulate_angles(&dirs, start_angle)
}

/// Rotation by `angle` about the vertical axis through the hinge.
pub fn hinge_pose(object: &ObjectModel, angle: f64) -> Result<RigidTransform3> {
    let h = object.hinge()?;
    Ok(RigidTransform3::rotation_about_z(angle, &h))
}

/// Hinged object poses for per-frame door angles relative to `angles[0]`.
pub fn hinged_poses(
    object: &ObjectModel,
    start_pose: &RigidTransform3,
    angles: &[f64],
) -> Result<Vec<RigidTransform3>> {
    let a0 = angles.first().copied().unwrap_or(0.0);
    angles
        .iter()
        .map(|a| Ok(hinge_pose(object, a - a0)?.compose(start_pose)))
        .collect()
}

/// Drops roll and pitch, keeping yaw and translation.
pub fn planarize(pose: &RigidTransform3) -> RigidTransform3 {
    RigidTransform3::new(so3::rot_z(pose.yaw()), pose.translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::FRAC_PI_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Core points joined when within eps form components, numbered by their
    /// smallest core index. Border points take the smallest adjacent
    /// component. Everything else is noise.
    fn dbscan_oracle(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<i32> {
        let n = points.len();
        let adj = |i: usize, j: usize| (points[i] - points[j]).norm() <= eps;
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| adj(i, j)).count() >= min_pts)
            .collect();
        let mut comp = vec![usize::MAX; n];
        for i in 0..n {
            if core[i] && comp[i] == usize::MAX {
                let mut stack = vec![i];
                comp[i] = i;
                while let Some(a) = stack.pop() {
                    for b in 0..n {
                        if core[b] && comp[b] == usize::MAX && adj(a, b) {
                            comp[b] = i;
                            stack.push(b);
                        }
                    }
                }
            }
        }
        let mut roots: Vec<usize> = (0..n).filter(|&i| core[i] && comp[i] == i).collect();
        roots.sort();
        let id = |root: usize| roots.iter().position(|&r| r == root).unwrap() as i32;
        (0..n)
            .map(|i| {
                if core[i] {
                    id(comp[i])
                } else {
                    (0..n)
                        .filter(|&j| core[j] && adj(i, j))
                        .map(|j| id(comp[j]))
                        .min()
                        .unwrap_or(NOISE)
                }
            })
            .collect()
    }

    #[test]
    fn dbscan_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts: Vec<Vec3> = (0..10)
            .map(|_| Vec3::new(rng.random_range(0.0..0.01), rng.random_range(0.0..0.01), 0.0))
            .collect();
        pts.push(Vec3::new(5.0, 0.0, 0.0));
        pts.push(Vec3::new(0.0, 5.0, 0.0));
        let labels = dbscan(&pts, 0.1, 3);
        assert_eq!(labels, dbscan_oracle(&pts, 0.1, 3));
        assert_eq!(&labels[..10], &[0; 10]);
        assert_eq!(&labels[10..], &[NOISE, NOISE]);
        assert_eq!(dbscan(&[Vec3::zeros()], 0.1, 1), [0]);
        assert!(dbscan(&[], 0.1, 3).is_empty());
    }

    #[test]
    fn dbscan_matches_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(0..=50);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0))
                .collect();
            let eps = rng.random_range(0.05..0.25);
            let min_pts = rng.random_range(1..6);
            assert_eq!(dbscan(&pts, eps, min_pts), dbscan_oracle(&pts, eps, min_pts));
        }
    }

    fn obs(t: f64, x: f64, y: f64, yaw: f64) -> ObjectObservation {
        ObjectObservation {
            time: t,
            pose: RigidTransform3::planar(yaw, Vec3::new(x, y, 0.0)),
            confidence: 1.0,
        }
    }

    #[test]
    fn anchors_around_one_interaction() {
        let label = InteractionLabel::new(5.0, 8.0, HandSet::Both).unwrap();
        let mut o: Vec<_> = (0..5).map(|k| obs(k as f64, 1.0, 2.0, 0.3)).collect();
        o.extend((9..12).map(|k| obs(k as f64, 3.0, 2.0, -0.2)));
        let groups = anchor_localize(&o, &[label], 0.15, 3).unwrap();
        assert_eq!(groups.len(), 2);
        let a = groups[0].pose.unwrap();
        let b = groups[1].pose.unwrap();
        assert_relative_eq!(a.translation, Vec3::new(1.0, 2.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(a.yaw(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(b.translation, Vec3::new(3.0, 2.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(b.yaw(), -0.2, epsilon = 1e-12);
        assert_eq!((groups[0].span_start, groups[0].span_end), (None, Some(5.0)));
        assert_eq!((groups[1].span_start, groups[1].span_end), (Some(8.0), None));

        let only_before: Vec<_> = o.iter().copied().filter(|x| x.time < 5.0).collect();
        let groups = anchor_localize(&only_before, &[label], 0.15, 3).unwrap();
        assert!(groups[0].pose.is_some());
        assert!(groups[1].pose.is_none());
    }

    #[test]
    fn anchor_ignores_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let mut o: Vec<_> = (0..10)
            .map(|k| {
                use rand_distr::Distribution;
                obs(
                    k as f64 * 0.1,
                    1.0 + normal.sample(&mut rng),
                    2.0 + normal.sample(&mut rng),
                    0.0,
                )
            })
            .collect();
        o.push(obs(1.05, 4.0, 0.0, 0.0));
        o.push(obs(1.1, -2.0, 1.0, 0.0));
        let groups = anchor_localize(
            &o,
            &[InteractionLabel::new(2.0, 3.0, HandSet::Right).unwrap()],
            0.15,
            3,
        )
        .unwrap();
        let cluster_mean = o[..10].iter().map(|x| x.pose.translation).sum::<Vec3>() / 10.0;
        let a = groups[0].pose.unwrap();
        assert_relative_eq!(a.translation, cluster_mean, epsilon = 1e-12);
        assert!((a.translation - Vec3::new(1.0, 2.0, 0.0)).norm() < 0.01);
        assert_eq!(groups[0].support, 10);
    }

    #[test]
    fn anchor_tie_prefers_latest_cluster() {
        let o = [
            obs(0.0, 0.0, 0.0, 0.0),
            obs(0.1, 0.0, 0.0, 0.0),
            obs(0.2, 5.0, 0.0, 0.0),
            obs(0.3, 5.0, 0.0, 0.0),
        ];
        let groups = anchor_localize(&o, &[], 0.15, 2).unwrap();
        assert_relative_eq!(groups[0].pose.unwrap().translation.x, 5.0);
        let mut rev = o;
        rev.reverse();
        let groups = anchor_localize(&rev, &[], 0.15, 2).unwrap();
        assert_relative_eq!(groups[0].pose.unwrap().translation.x, 5.0);
    }

    fn table() -> ObjectModel {
        ObjectModel {
            id: "t".into(),
            points: vec![Vec3::new(0.2, 0.0, 1.0), Vec3::new(5.0, 5.0, 5.0)],
            motion_model: MotionModel::PlanarFree,
            hinge_point: None,
            scan_pose: None,
        }
    }

    #[test]
    fn contact_offset_examples() {
        let body = BodyModel::standard();
        let mut params = BodyParams::zero(body.joint_count());
        let h = body.forward_kinematics(&params, Vertex::HandRight).unwrap();
        // Shift the body so the right hand sits at (0, 0, 1).
        params.gamma = Vec3::new(0.0, 0.0, 1.0) - h;
        let c = contact_offset(
            &body,
            &params,
            &RigidTransform3::identity(),
            &table(),
            HandSet::Right,
        )
        .unwrap();
        assert_relative_eq!(c.r_offset, Vec3::new(0.2, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(c.contacts.right.unwrap(), Vec3::new(0.2, 0.0, 1.0));
        assert!(c.contacts.left.is_none());

        let params = BodyParams::zero(body.joint_count());
        let hl = body.forward_kinematics(&params, Vertex::HandLeft).unwrap();
        let hr = body.forward_kinematics(&params, Vertex::HandRight).unwrap();
        let obj = ObjectModel {
            points: vec![hl + Vec3::new(0.1, 0.0, 0.0), hr + Vec3::new(0.3, 0.0, 0.0)],
            ..table()
        };
        let c = contact_offset(&body, &params, &RigidTransform3::identity(), &obj, HandSet::Both).unwrap();
        assert_relative_eq!(c.r_offset, Vec3::new(0.2, 0.0, 0.0), epsilon = 1e-12);

        let on = ObjectModel {
            points: vec![hr],
            ..table()
        };
        let c = contact_offset(&body, &params, &RigidTransform3::identity(), &on, HandSet::Right).unwrap();
        assert_eq!(c.r_offset, Vec3::zeros());
    }

    #[test]
    fn drag_examples() {
        let start = RigidTransform3::planar(0.4, Vec3::new(1.0, 1.0, 0.3));
        let l: Vec<Vec2> = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)];
        let r: Vec<Vec2> = vec![Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0)];
        let poses = track_dragged(Some(&l), Some(&r), &start).unwrap();
        assert_relative_eq!(poses[1].translation, Vec3::new(2.0, 1.0, 0.3), epsilon = 1e-12);
        assert_relative_eq!(poses[1].rotation, start.rotation, epsilon = 1e-12);

        // Left hand fixed, right hand swings a quarter turn.
        let l = vec![Vec2::zeros(); 2];
        let r = vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let poses = track_dragged(Some(&l), Some(&r), &RigidTransform3::identity()).unwrap();
        assert_relative_eq!(poses[1].yaw(), FRAC_PI_2, epsilon = 1e-12);
        // Pivot (1,0) moves by (-1,1) and the frame turns about it.
        let expected = RigidTransform3::from_translation(Vec3::new(-1.0, 1.0, 0.0)).compose(
            &RigidTransform3::rotation_about_z(FRAC_PI_2, &Vec3::new(1.0, 0.0, 0.0)),
        );
        assert_relative_eq!(poses[1].translation, expected.translation, epsilon = 1e-12);
        assert_relative_eq!(
            poses[1].transform_point(&Vec3::new(1.0, 0.0, 0.0)),
            Vec3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );

        let r = vec![Vec2::zeros(), Vec2::new(0.5, 0.0)];
        let poses = track_dragged(None, Some(&r), &start).unwrap();
        assert_relative_eq!(poses[1].translation, start.translation + Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(poses[1].rotation, start.rotation);
        assert!(track_dragged(None, None, &start).is_err());
    }

    #[test]
    fn drag_with_coincident_hands_holds_rotation() {
        let l = vec![Vec2::zeros(), Vec2::new(0.5, 0.5), Vec2::new(0.0, 0.0)];
        let r = vec![Vec2::new(1.0, 0.0), Vec2::new(0.5, 0.5), Vec2::new(0.0, 1.0)];
        let poses = track_dragged(Some(&l), Some(&r), &RigidTransform3::identity()).unwrap();
        assert_relative_eq!(poses[1].yaw(), 0.0);
        assert_relative_eq!(poses[2].yaw(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn hinge_examples() {
        let n = 50;
        let arc: Vec<Vec2> = (0..=n)
            .map(|k| {
                let a = FRAC_PI_2 * k as f64 / n as f64;
                Vec2::new(a.cos(), a.sin())
            })
            .collect();
        let angles = track_hinged(&arc, &Vec2::zeros(), 0.2);
        assert_relative_eq!(*angles.last().unwrap(), 0.2 + FRAC_PI_2, epsilon = 1e-12);
        let still = vec![Vec2::new(1.0, 1.0); 5];
        assert!(track_hinged(&still, &Vec2::zeros(), 0.5)
            .iter()
            .all(|&a| a == 0.5));
        let ray: Vec<Vec2> = (1..6).map(|k| Vec2::new(k as f64, k as f64)).collect();
        assert!(track_hinged(&ray, &Vec2::zeros(), 0.0)
            .iter()
            .all(|&a| a.abs() < 1e-15));

        let door = ObjectModel {
            motion_model: MotionModel::Hinged,
            hinge_point: Some(Vec3::new(1.0, 0.0, 0.0)),
            ..table()
        };
        assert_relative_eq!(
            hinge_pose(&door, 0.0).unwrap().to_homogeneous(),
            RigidTransform3::identity().to_homogeneous()
        );
        let p = hinge_pose(&door, FRAC_PI_2)
            .unwrap()
            .transform_point(&Vec3::new(2.0, 0.0, 1.0));
        assert_relative_eq!(p, Vec3::new(1.0, 1.0, 1.0), epsilon = 1e-12);
        let j = hinge_pose(&door, 1.234)
            .unwrap()
            .transform_point(&Vec3::new(1.0, 0.0, 0.0));
        assert!((j - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(hinge_pose(&table(), 0.1), Err(Error::NotHinged("t".into())));
    }

    #[test]
    fn interaction_validation() {
        assert!(InteractionLabel::new(1.0, 1.0, HandSet::Left).is_err());
        let a = InteractionLabel::new(0.0, 1.0, HandSet::Left).unwrap();
        let b = InteractionLabel::new(0.5, 2.0, HandSet::Left).unwrap();
        assert!(validate_interactions(&[a, b]).is_err());
        assert!(anchor_localize(&[], &[a, b], 0.1, 1).is_err());
    }
}
