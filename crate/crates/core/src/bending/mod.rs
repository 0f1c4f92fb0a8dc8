//! Bending-energy deformation of planar trajectories and pose sequences.
//!
//! A trajectory is pulled towards a set of control points while the temporal
//! derivative of its tangent angle stays close to that of the reference
//! curve. Only the XY components are deformed; z is carried through.

mod pose;

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Vec2, Vec3};
use crate::optim::{self, Schedule};
use crate::{Error, Result};

pub use pose::{
    bending_energy_pose, deform_pose_trajectory, free_window, PoseControlPoint, PoseDeformation, PoseProblem,
};

/// Smoothing of the unsquared control-distance term near zero residual.
pub const DISTANCE_EPS: f64 = 1e-8;

/// Timestamped planar curve with a carried-through z component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory2 {
    times: Vec<f64>,
    xy: Vec<Vec2>,
    z: Vec<f64>,
}

impl Trajectory2 {
    pub fn new(times: Vec<f64>, xy: Vec<Vec2>, z: Vec<f64>) -> Result<Self> {
        if xy.len() != times.len() {
            return Err(Error::LengthMismatch {
                what: "trajectory xy",
                left: xy.len(),
                right: times.len(),
            });
        }
        if z.len() != times.len() {
            return Err(Error::LengthMismatch {
                what: "trajectory z",
                left: z.len(),
                right: times.len(),
            });
        }
        if times.len() < 3 {
            return Err(Error::Invalid(alloc::format!(
                "trajectory needs at least 3 samples, got {}",
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, xy, z })
    }

    pub fn from_points(times: Vec<f64>, points: &[Vec3]) -> Result<Self> {
        let xy = points.iter().map(|p| Vec2::new(p.x, p.y)).collect();
        let z = points.iter().map(|p| p.z).collect();
        Self::new(times, xy, z)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn xy(&self) -> &[Vec2] {
        &self.xy
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn point(&self, i: usize) -> Vec3 {
        Vec3::new(self.xy[i].x, self.xy[i].y, self.z[i])
    }

    pub fn points(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        self.times[self.len() - 1]
    }

    /// Index of the sample nearest to `time`; ties pick the earlier sample.
    pub fn nearest_index(&self, time: f64) -> usize {
        nearest_index(&self.times, time)
    }

    /// Same timestamps and z, new XY.
    pub fn with_xy(&self, xy: Vec<Vec2>) -> Result<Self> {
        Self::new(self.times.clone(), xy, self.z.clone())
    }

    fn is_finite(&self) -> bool {
        self.times.iter().all(|t| t.is_finite())
            && self.xy.iter().all(|p| p.x.is_finite() && p.y.is_finite())
            && self.z.iter().all(|z| z.is_finite())
    }
}

pub(crate) fn nearest_index(times: &[f64], time: f64) -> usize {
    let k = times.partition_point(|&t| t < time);
    if k == 0 {
        return 0;
    }
    if k >= times.len() {
        return times.len() - 1;
    }
    if time - times[k - 1] <= times[k] - time {
        k - 1
    } else {
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// Squared difference of angle derivatives.
    Squared,
    /// Absolute difference of angle derivatives.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BendOptions {
    /// Rigidness coefficient lambda.
    pub rigidness: f64,
    pub iterations: usize,
    pub step_size: f64,
    /// Final step size as a fraction of `step_size`.
    pub final_step_ratio: f64,
    /// Segments shorter than this (meters) reuse the previous tangent angle.
    pub eps_angle: f64,
    pub energy: EnergyMode,
    /// Time scale (seconds) over which the gradient is smoothed before each
    /// step. Zero disables smoothing.
    pub smoothing: f64,
}

impl Default for BendOptions {
    fn default() -> Self {
        Self {
            rigidness: 0.01,
            iterations: 500,
            step_size: 0.005,
            final_step_ratio: 0.01,
            eps_angle: 1e-4,
            energy: EnergyMode::Squared,
            smoothing: 0.5,
        }
    }
}

impl BendOptions {
    fn validate(&self) -> Result<()> {
        if !(self.rigidness >= 0.0) || !self.rigidness.is_finite() {
            return Err(Error::Invalid("rigidness must be finite and >= 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Invalid("iterations must be >= 1".into()));
        }
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            return Err(Error::Invalid("smoothing must be finite and >= 0".into()));
        }
        if !(self.step_size > 0.0) || !(self.eps_angle > 0.0) {
            return Err(Error::Invalid("step size and eps_angle must be positive".into()));
        }
        Ok(())
    }

    /// Smoothing strength in samples squared for the given time stamps.
    pub(crate) fn smoothing_beta(&self, times: &[f64]) -> f64 {
        if times.len() < 2 || self.smoothing == 0.0 {
            return 0.0;
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        let samples = self.smoothing / dt;
        samples * samples
    }

    pub(crate) fn schedule(&self) -> Schedule {
        Schedule {
            iterations: self.iterations,
            step_size: self.step_size,
            final_step_ratio: self.final_step_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint2 {
    pub time: f64,
    pub target: Vec2,
}

impl ControlPoint2 {
    pub fn new(time: f64, target: Vec2) -> Self {
        Self { time, target }
    }
}

/// Per-segment tangent angles. `source[k]` names the segment whose raw angle
/// segment `k` uses: itself when long enough, otherwise the previous valid
/// segment (or the first valid one for a degenerate prefix).
pub(crate) struct SegmentAngles {
    raw: Vec<f64>,
    source: Vec<Option<usize>>,
}

impl SegmentAngles {
    fn compute(xy: &[Vec2], eps: f64) -> Self {
        Self::compute_masked(xy, eps, None)
    }

    /// As `compute`, but a segment also counts as short when `usable[k]` is
    /// false.
    fn compute_masked(xy: &[Vec2], eps: f64, usable: Option<&[bool]>) -> Self {
        let n = xy.len().saturating_sub(1);
        let mut raw = vec![0.0; n];
        let mut source = vec![None; n];
        let mut last = None;
        for k in 0..n {
            let d = xy[k + 1] - xy[k];
            if d.norm() >= eps && usable.is_none_or(|u| u[k]) {
                raw[k] = d.y.atan2(d.x);
                last = Some(k);
            }
            source[k] = last;
        }
        if let Some(first) = source.iter().flatten().next().copied() {
            for s in source.iter_mut().take_while(|s| s.is_none()) {
                *s = Some(first);
            }
        }
        Self { raw, source }
    }

    fn angle(&self, k: usize) -> f64 {
        self.source[k].map_or(0.0, |s| self.raw[s])
    }

    /// Wrapped differences between consecutive segment angles.
    fn deltas(&self) -> Vec<f64> {
        (0..self.raw.len().saturating_sub(1))
            .map(|k| wrap_angle(self.angle(k + 1) - self.angle(k)))
            .collect()
    }
}

/// Angle changes of a reference curve, plus which of its segments are long
/// enough to carry an angle. Segments that are short in the reference stay
/// angle-free in every candidate, so a stationary stretch of the reference
/// does not pick up arbitrary headings once it is deformed.
#[derive(Debug, Clone)]
pub(crate) struct ReferenceAngles {
    deltas: Vec<f64>,
    usable: Vec<bool>,
}

impl ReferenceAngles {
    pub(crate) fn new(xy: &[Vec2], eps: f64) -> Self {
        let seg = SegmentAngles::compute(xy, eps);
        let usable = seg
            .source
            .iter()
            .enumerate()
            .map(|(k, s)| *s == Some(k))
            .collect();
        Self {
            deltas: seg.deltas(),
            usable,
        }
    }
}

/// Time between the midpoints of segments `k` and `k + 1`.
fn midpoint_dt(times: &[f64], k: usize) -> f64 {
    0.5 * (times[k + 2] - times[k])
}

/// Tangent angle per sample, unwrapped so consecutive differences lie in
/// `(-pi, pi]`. Sample `k` takes the angle of segment `k`; the last sample
/// repeats the final segment.
pub fn tangent_angles(traj: &Trajectory2, eps_angle: f64) -> Vec<f64> {
    let seg = SegmentAngles::compute(traj.xy(), eps_angle);
    let n = seg.raw.len();
    let mut out = Vec::with_capacity(traj.len());
    let mut acc = seg.angle(0);
    out.push(acc);
    for k in 1..n {
        acc += wrap_angle(seg.angle(k) - seg.angle(k - 1));
        out.push(acc);
    }
    out.push(acc);
    out
}

fn check_same_times(a: &Trajectory2, b: &Trajectory2) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "trajectory timestamps",
            left: a.len(),
            right: b.len(),
        });
    }
    match a.times.iter().zip(&b.times).position(|(x, y)| x != y) {
        Some(i) => Err(Error::TimestampMismatch(i)),
        None => Ok(()),
    }
}

/// Discretized bending energy between a candidate and its reference curve.
pub fn bending_energy_tr(
    candidate: &Trajectory2,
    reference: &Trajectory2,
    opts: &BendOptions,
) -> Result<f64> {
    check_same_times(candidate, reference)?;
    let refs = ReferenceAngles::new(reference.xy(), opts.eps_angle);
    let cand = SegmentAngles::compute_masked(candidate.xy(), opts.eps_angle, Some(&refs.usable)).deltas();
    Ok(energy_from_deltas(
        &cand,
        &refs.deltas,
        candidate.times(),
        opts.energy,
    ))
}

fn energy_from_deltas(cand: &[f64], refd: &[f64], times: &[f64], mode: EnergyMode) -> f64 {
    cand.iter()
        .zip(refd)
        .enumerate()
        .map(|(k, (a, b))| {
            let d = wrap_angle(a - b);
            match mode {
                EnergyMode::Squared => d * d / midpoint_dt(times, k),
                EnergyMode::Absolute => d.abs(),
            }
        })
        .sum()
}

/// Bending energy of a flat `[x0, y0, x1, y1, ...]` candidate against
/// precomputed reference deltas, accumulating `scale * dE/dxy` into `grad`.
pub(crate) fn energy_and_gradient(
    xy: &[Vec2],
    reference: &ReferenceAngles,
    times: &[f64],
    eps_angle: f64,
    mode: EnergyMode,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let seg = SegmentAngles::compute_masked(xy, eps_angle, Some(&reference.usable));
    let deltas = seg.deltas();
    let mut energy = 0.0;
    let mut d_angle = vec![0.0; seg.raw.len()];
    for (k, (a, b)) in deltas.iter().zip(&reference.deltas).enumerate() {
        let d = wrap_angle(a - b);
        let dedd = match mode {
            EnergyMode::Squared => {
                let dt = midpoint_dt(times, k);
                energy += d * d / dt;
                2.0 * d / dt
            }
            EnergyMode::Absolute => {
                energy += d.abs();
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        d_angle[k + 1] += dedd;
        d_angle[k] -= dedd;
    }
    if let Some(g) = grad {
        let mut d_raw = vec![0.0; seg.raw.len()];
        for (k, da) in d_angle.iter().enumerate() {
            if let Some(s) = seg.source[k] {
                d_raw[s] += da;
            }
        }
        for (k, dr) in d_raw.iter().enumerate() {
            if *dr == 0.0 {
                continue;
            }
            let d = xy[k + 1] - xy[k];
            let n2 = d.norm_squared();
            // d atan2(dy, dx) / d(dx, dy) = (-dy, dx) / |d|^2
            let gx = -d.y / n2 * dr * scale;
            let gy = d.x / n2 * dr * scale;
            g[2 * (k + 1)] += gx;
            g[2 * (k + 1) + 1] += gy;
            g[2 * k] -= gx;
            g[2 * k + 1] -= gy;
        }
    }
    energy
}

/// The trajectory objective: summed control distances plus `lambda` times
/// the bending energy, over flat XY parameters.
#[derive(Debug, Clone)]
pub struct TrajectoryProblem<'a> {
    reference: &'a Trajectory2,
    ref_angles: ReferenceAngles,
    controls: Vec<(usize, Vec2)>,
    opts: BendOptions,
}

impl<'a> TrajectoryProblem<'a> {
    pub fn new(reference: &'a Trajectory2, controls: &[ControlPoint2], opts: &BendOptions) -> Self {
        let ref_angles = ReferenceAngles::new(reference.xy(), opts.eps_angle);
        let controls = controls
            .iter()
            .map(|c| (reference.nearest_index(c.time), c.target))
            .collect();
        Self {
            reference,
            ref_angles,
            controls,
            opts: *opts,
        }
    }

    pub fn initial_params(&self) -> Vec<f64> {
        flatten(self.reference.xy())
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.evaluate(params, None)
    }

    pub fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.evaluate(params, Some(grad))
    }

    fn evaluate(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let xy = unflatten(params);
        let mut total = 0.0;
        for &(i, target) in &self.controls {
            let r = xy[i] - target;
            total += r.norm();
            if let Some(g) = grad.as_deref_mut() {
                let s = (r.norm_squared() + DISTANCE_EPS * DISTANCE_EPS).sqrt();
                g[2 * i] += r.x / s;
                g[2 * i + 1] += r.y / s;
            }
        }
        let lambda = self.opts.rigidness;
        let energy = energy_and_gradient(
            &xy,
            &self.ref_angles,
            self.reference.times(),
            self.opts.eps_angle,
            self.opts.energy,
            lambda,
            grad,
        );
        total + lambda * energy
    }
}

pub(crate) fn flatten(xy: &[Vec2]) -> Vec<f64> {
    xy.iter().flat_map(|p| [p.x, p.y]).collect()
}

pub(crate) fn unflatten(params: &[f64]) -> Vec<Vec2> {
    params.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect()
}

/// Objective values before and after a bend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendReport {
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// Deforms `traj` towards `controls` while preserving its bending
/// characteristics. Control times snap to the nearest sample.
pub fn bend_trajectory(
    traj: &Trajectory2,
    controls: &[ControlPoint2],
    opts: &BendOptions,
) -> Result<Trajectory2> {
    bend_trajectory_with_report(traj, controls, opts).map(|(t, _)| t)
}

pub fn bend_trajectory_with_report(
    traj: &Trajectory2,
    controls: &[ControlPoint2],
    opts: &BendOptions,
) -> Result<(Trajectory2, BendReport)> {
    opts.validate()?;
    if !traj.is_finite() {
        return Err(Error::NonFinite("trajectory"));
    }
    if controls
        .iter()
        .any(|c| !c.time.is_finite() || !c.target.x.is_finite() || !c.target.y.is_finite())
    {
        return Err(Error::NonFinite("control points"));
    }
    if controls.is_empty() {
        return Ok((
            traj.clone(),
            BendReport {
                initial_objective: 0.0,
                final_objective: 0.0,
            },
        ));
    }
    let problem = TrajectoryProblem::new(traj, controls, opts);
    let beta = opts.smoothing_beta(traj.times());
    let n = traj.len();
    let out = optim::minimize_preconditioned(
        problem.initial_params(),
        opts.schedule(),
        |x, g| problem.value_and_gradient(x, g),
        |g| {
            optim::smooth_series(g, 0, 2, n, beta);
            optim::smooth_series(g, 1, 2, n, beta);
        },
    );
    assert!(
        out.value <= out.initial,
        "bend objective increased: {} > {}",
        out.value,
        out.initial
    );
    let bent = traj.with_xy(unflatten(&out.params))?;
    Ok((
        bent,
        BendReport {
            initial_objective: out.initial,
            final_objective: out.value,
        },
    ))
}
