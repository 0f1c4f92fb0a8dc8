use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{energy_and_gradient, nearest_index, BendOptions, ReferenceAngles, Trajectory2, DISTANCE_EPS};
use crate::body::{BodyModel, BodyParams, Vertex};
use crate::geometry::Vec2;
use crate::optim;
use crate::{Error, Result};

/// Target XY position for a body vertex at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseControlPoint {
    pub time: f64,
    pub vertex: Vertex,
    pub target_xy: Vec2,
}

/// Pose-sequence bending energy: summed norm of the difference between the
/// candidate's and the reference's first temporal derivatives, integrated
/// over time.
pub fn bending_energy_pose(times: &[f64], candidate: &[BodyParams], reference: &[BodyParams]) -> Result<f64> {
    if candidate.len() != reference.len() || candidate.len() != times.len() {
        return Err(Error::LengthMismatch {
            what: "pose sequences",
            left: candidate.len(),
            right: reference.len(),
        });
    }
    let mut total = 0.0;
    for k in 0..candidate.len().saturating_sub(1) {
        let (a0, a1, b0, b1) = (&candidate[k], &candidate[k + 1], &reference[k], &reference[k + 1]);
        if a0.theta.len() != b0.theta.len()
            || a1.theta.len() != a0.theta.len()
            || b1.theta.len() != b0.theta.len()
        {
            return Err(Error::LengthMismatch {
                what: "pose vector",
                left: a0.theta.len(),
                right: b0.theta.len(),
            });
        }
        let dt = times[k + 1] - times[k];
        let sq: f64 = (0..a0.theta.len())
            .map(|i| {
                let d = ((a1.theta[i] - a0.theta[i]) - (b1.theta[i] - b0.theta[i])) / dt;
                d * d
            })
            .sum();
        total += sq.sqrt() * dt;
    }
    Ok(total)
}

/// Frames of `[start, end]` widened by `window_w` samples on each side.
pub fn free_window(times: &[f64], start: f64, end: f64, window_w: usize) -> RangeInclusive<usize> {
    let first = nearest_index(times, start).saturating_sub(window_w);
    let last = (nearest_index(times, end) + window_w).min(times.len().saturating_sub(1));
    first..=last
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseDeformation {
    pub params: Vec<BodyParams>,
    pub translation: Trajectory2,
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// The pose objective over the free parameters: for each free frame, three
/// axis-angle values per free joint followed by the root translation XY.
pub struct PoseProblem<'a> {
    body: &'a BodyModel,
    times: &'a [f64],
    reference: &'a [BodyParams],
    ref_gamma_xy: Vec<Vec2>,
    ref_gamma_angles: ReferenceAngles,
    first: usize,
    last: usize,
    joints: Vec<usize>,
    controls: Vec<(usize, usize, Vec2)>,
    opts: BendOptions,
}

impl<'a> PoseProblem<'a> {
    pub fn new(
        times: &'a [f64],
        reference: &'a [BodyParams],
        controls: &[PoseControlPoint],
        body: &'a BodyModel,
        opts: &BendOptions,
        joint_mask: &[usize],
        free_frames: RangeInclusive<usize>,
    ) -> Result<Self> {
        if times.len() != reference.len() {
            return Err(Error::LengthMismatch {
                what: "pose times",
                left: times.len(),
                right: reference.len(),
            });
        }
        if reference.is_empty() {
            return Err(Error::Empty("pose sequence"));
        }
        for p in reference {
            if p.theta.len() != 3 * body.joint_count() {
                return Err(Error::LengthMismatch {
                    what: "pose vector",
                    left: p.theta.len(),
                    right: 3 * body.joint_count(),
                });
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("pose parameters"));
            }
        }
        let (first, last) = (*free_frames.start(), *free_frames.end());
        if first > last || last >= reference.len() {
            return Err(Error::Invalid(format!(
                "free frame range {first}..={last} out of bounds"
            )));
        }
        let mut joints: Vec<usize> = joint_mask.to_vec();
        joints.sort_unstable();
        joints.dedup();
        if let Some(&bad) = joints.iter().find(|&&j| j >= body.joint_count()) {
            return Err(Error::Invalid(format!("joint mask entry {bad} out of range")));
        }
        let mut resolved = Vec::with_capacity(controls.len());
        for c in controls {
            let joint = body.vertex_joint(c.vertex);
            let frame = nearest_index(times, c.time);
            if !body.chain(joint).iter().any(|j| joints.contains(j)) {
                return Err(Error::UnreachableControl(format!(
                    "{:?} has no free joint on its chain",
                    c.vertex
                )));
            }
            if frame < first || frame > last {
                return Err(Error::UnreachableControl(format!(
                    "{:?} at t={} lies outside the free frames",
                    c.vertex, c.time
                )));
            }
            if !c.target_xy.x.is_finite() || !c.target_xy.y.is_finite() {
                return Err(Error::NonFinite("pose control target"));
            }
            resolved.push((frame, joint, c.target_xy));
        }
        let ref_gamma_xy: Vec<Vec2> = reference
            .iter()
            .map(|p| Vec2::new(p.gamma.x, p.gamma.y))
            .collect();
        let ref_gamma_angles = ReferenceAngles::new(&ref_gamma_xy, opts.eps_angle);
        Ok(Self {
            body,
            times,
            reference,
            ref_gamma_xy,
            ref_gamma_angles,
            first,
            last,
            joints,
            controls: resolved,
            opts: *opts,
        })
    }

    fn stride(&self) -> usize {
        3 * self.joints.len() + 2
    }

    pub fn param_count(&self) -> usize {
        self.stride() * (self.last - self.first + 1)
    }

    pub fn initial_params(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.param_count());
        for p in &self.reference[self.first..=self.last] {
            for &j in &self.joints {
                x.extend_from_slice(&p.theta[3 * j..3 * j + 3]);
            }
            x.push(p.gamma.x);
            x.push(p.gamma.y);
        }
        x
    }

    /// Free-frame parameters with `params` written in.
    fn frames(&self, params: &[f64]) -> Vec<BodyParams> {
        let s = self.stride();
        self.reference[self.first..=self.last]
            .iter()
            .zip(params.chunks_exact(s))
            .map(|(p, chunk)| {
                let mut q = p.clone();
                for (k, &j) in self.joints.iter().enumerate() {
                    q.theta[3 * j..3 * j + 3].copy_from_slice(&chunk[3 * k..3 * k + 3]);
                }
                q.gamma.x = chunk[s - 2];
                q.gamma.y = chunk[s - 1];
                q
            })
            .collect()
    }

    /// The full sequence with `params` applied to the free frames.
    pub fn apply(&self, params: &[f64]) -> Vec<BodyParams> {
        let mut out = self.reference.to_vec();
        for (i, p) in self.frames(params).into_iter().enumerate() {
            out[self.first + i] = p;
        }
        out
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.evaluate(params, None)
    }

    pub fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.evaluate(params, Some(grad))
    }

    fn evaluate(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let s = self.stride();
        let frames = self.frames(params);
        let lambda = self.opts.rigidness;
        let n = self.reference.len();
        let theta_of = |f: usize| -> &[f64] {
            if f >= self.first && f <= self.last {
                &frames[f - self.first].theta
            } else {
                &self.reference[f].theta
            }
        };
        // Column of joint component `c` in the free-frame block, if free.
        let slot = |joint: usize| self.joints.iter().position(|&j| j == joint);

        // Pose energy over every pair touching a free frame.
        let mut e_theta = 0.0;
        let lo = self.first.saturating_sub(1);
        let hi = (self.last + 1).min(n - 1);
        let dim = self.reference[0].theta.len();
        let mut delta = vec![0.0; dim];
        for k in lo..hi {
            let (a0, a1) = (theta_of(k), theta_of(k + 1));
            let (b0, b1) = (&self.reference[k].theta, &self.reference[k + 1].theta);
            for i in 0..dim {
                delta[i] = (a1[i] - a0[i]) - (b1[i] - b0[i]);
            }
            let sq: f64 = delta.iter().map(|d| d * d).sum();
            e_theta += sq.sqrt();
            if let Some(g) = grad.as_deref_mut() {
                let norm = (sq + DISTANCE_EPS * DISTANCE_EPS).sqrt();
                for (frame, sign) in [(k + 1, 1.0), (k, -1.0)] {
                    if frame < self.first || frame > self.last {
                        continue;
                    }
                    let base = (frame - self.first) * s;
                    for (slot_k, &j) in self.joints.iter().enumerate() {
                        for c in 0..3 {
                            g[base + 3 * slot_k + c] += lambda * sign * delta[3 * j + c] / norm;
                        }
                    }
                }
            }
        }

        // Translation bending energy.
        let mut gamma_xy = self.ref_gamma_xy.clone();
        for (i, p) in frames.iter().enumerate() {
            gamma_xy[self.first + i] = Vec2::new(p.gamma.x, p.gamma.y);
        }
        let mut tr_grad = grad.as_ref().map(|_| vec![0.0; 2 * n]);
        let e_tr = energy_and_gradient(
            &gamma_xy,
            &self.ref_gamma_angles,
            self.times,
            self.opts.eps_angle,
            self.opts.energy,
            lambda,
            tr_grad.as_deref_mut(),
        );
        if let (Some(g), Some(tg)) = (grad.as_deref_mut(), tr_grad.as_ref()) {
            for i in 0..frames.len() {
                let f = self.first + i;
                g[i * s + s - 2] += tg[2 * f];
                g[i * s + s - 1] += tg[2 * f + 1];
            }
        }

        // Control distances.
        let mut data = 0.0;
        let mut posed_cache: Vec<Option<crate::body::Posed>> = vec![None; frames.len()];
        for &(frame, joint, target) in &self.controls {
            let i = frame - self.first;
            let posed = posed_cache[i].get_or_insert_with(|| self.body.pose_unchecked(&frames[i]));
            let p = posed.positions[joint];
            let r = Vec2::new(p.x - target.x, p.y - target.y);
            data += r.norm();
            if let Some(g) = grad.as_deref_mut() {
                let sn = (r.norm_squared() + DISTANCE_EPS * DISTANCE_EPS).sqrt();
                let u = r / sn;
                let base = i * s;
                self.body.jacobian_into(&frames[i], posed, joint, |col, block| {
                    if let Some(k) = slot(col / 3) {
                        for c in 0..3 {
                            g[base + 3 * k + c] += u.x * block[(0, c)] + u.y * block[(1, c)];
                        }
                    }
                });
                g[base + s - 2] += u.x;
                g[base + s - 1] += u.y;
            }
        }
        data + lambda * (e_theta + e_tr)
    }
}

/// Deforms pose and translation parameters so the controlled vertices reach
/// their XY targets while the sequence keeps its temporal derivatives. Only
/// `joint_mask` joints and the root XY translation of frames in
/// `free_frames` change.
pub fn deform_pose_trajectory(
    times: &[f64],
    poses: &[BodyParams],
    controls: &[PoseControlPoint],
    body: &BodyModel,
    opts: &BendOptions,
    joint_mask: &[usize],
    free_frames: RangeInclusive<usize>,
) -> Result<PoseDeformation> {
    opts.validate()?;
    let problem = PoseProblem::new(times, poses, controls, body, opts, joint_mask, free_frames)?;
    let translation = |ps: &[BodyParams]| {
        let pts: Vec<_> = ps.iter().map(|p| p.gamma).collect();
        Trajectory2::from_points(times.to_vec(), &pts)
    };
    if controls.is_empty() {
        return Ok(PoseDeformation {
            params: poses.to_vec(),
            translation: translation(poses)?,
            initial_objective: 0.0,
            final_objective: 0.0,
        });
    }
    let stride = problem.stride();
    let count = problem.last - problem.first + 1;
    let beta = opts.smoothing_beta(times);
    let out = optim::minimize_preconditioned(
        problem.initial_params(),
        opts.schedule(),
        |x, g| problem.value_and_gradient(x, g),
        |g| {
            for c in 0..stride {
                optim::smooth_series(g, c, stride, count, beta);
            }
        },
    );
    assert!(
        out.value <= out.initial,
        "pose objective increased: {} > {}",
        out.value,
        out.initial
    );
    let params = problem.apply(&out.params);
    Ok(PoseDeformation {
        translation: translation(&params)?,
        params,
        initial_objective: out.initial,
        final_objective: out.value,
    })
}
