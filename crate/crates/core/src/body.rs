//! Simplified kinematic body: a joint tree with axis-angle joint rotations,
//! differentiable forward kinematics and named end effectors.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{Matrix3xX, OMatrix, U3};
use serde::{Deserialize, Serialize};

use crate::geometry::{so3, Mat3, RigidTransform3, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` only for the root joint.
    pub parent: Option<usize>,
    /// Rest offset from the parent joint in the parent frame. For the root
    /// this is the rest position relative to the body translation.
    pub offset: Vec3,
}

/// Named vertices used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vertex {
    Root,
    Head,
    HandLeft,
    HandRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BodyModelRepr", into = "BodyModelRepr")]
pub struct BodyModel {
    joints: Vec<Joint>,
    root: usize,
    head: usize,
    hand_left: usize,
    hand_right: usize,
}

/// Text schema of a body model: joints listed parent-first, parents
/// referenced by name, offsets in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodyModelRepr {
    pub joints: Vec<JointRepr>,
    pub vertices: VertexNames,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointRepr {
    pub name: String,
    pub parent: Option<String>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexNames {
    pub root: String,
    pub head: String,
    pub hand_left: String,
    pub hand_right: String,
}

impl TryFrom<BodyModelRepr> for BodyModel {
    type Error = Error;

    fn try_from(repr: BodyModelRepr) -> Result<Self> {
        let mut joints: Vec<Joint> = Vec::with_capacity(repr.joints.len());
        for j in &repr.joints {
            let parent = match &j.parent {
                None => None,
                Some(p) => Some(joints.iter().position(|q| &q.name == p).ok_or_else(|| {
                    Error::Invalid(alloc::format!(
                        "joint {} references parent {} that is not listed before it",
                        j.name,
                        p
                    ))
                })?),
            };
            joints.push(Joint {
                name: j.name.clone(),
                parent,
                offset: Vec3::from(j.offset),
            });
        }
        let find = |name: &str| -> Result<usize> {
            joints
                .iter()
                .position(|j| j.name == name)
                .ok_or_else(|| Error::UnknownVertex(name.to_string()))
        };
        let (root, head, hand_left, hand_right) = (
            find(&repr.vertices.root)?,
            find(&repr.vertices.head)?,
            find(&repr.vertices.hand_left)?,
            find(&repr.vertices.hand_right)?,
        );
        BodyModel::new(joints, root, head, hand_left, hand_right)
    }
}

impl From<BodyModel> for BodyModelRepr {
    fn from(m: BodyModel) -> Self {
        let name = |i: usize| m.joints[i].name.clone();
        BodyModelRepr {
            joints: m
                .joints
                .iter()
                .map(|j| JointRepr {
                    name: j.name.clone(),
                    parent: j.parent.map(name),
                    offset: [j.offset.x, j.offset.y, j.offset.z],
                })
                .collect(),
            vertices: VertexNames {
                root: name(m.root),
                head: name(m.head),
                hand_left: name(m.hand_left),
                hand_right: name(m.hand_right),
            },
        }
    }
}

/// Pose vector (three axis-angle values per joint, root first) and root
/// translation for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub theta: Vec<f64>,
    pub gamma: Vec3,
}

impl BodyParams {
    pub fn zero(joint_count: usize) -> Self {
        Self {
            theta: alloc::vec![0.0; 3 * joint_count],
            gamma: Vec3::zeros(),
        }
    }

    pub fn joint_rotation(&self, joint: usize) -> Vec3 {
        Vec3::new(
            self.theta[3 * joint],
            self.theta[3 * joint + 1],
            self.theta[3 * joint + 2],
        )
    }

    pub fn set_joint_rotation(&mut self, joint: usize, w: &Vec3) {
        self.theta[3 * joint..3 * joint + 3].copy_from_slice(w.as_slice());
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite()) && self.gamma.iter().all(|v| v.is_finite())
    }
}

/// World rotation and position of every joint for one set of parameters.
#[derive(Debug, Clone)]
pub struct Posed {
    pub rotations: Vec<Mat3>,
    pub positions: Vec<Vec3>,
}

impl Posed {
    pub fn joint_transform(&self, joint: usize) -> RigidTransform3 {
        RigidTransform3::new(self.rotations[joint], self.positions[joint])
    }
}

pub mod joints {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const L_SHOULDER: usize = 4;
    pub const L_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const R_SHOULDER: usize = 7;
    pub const R_ELBOW: usize = 8;
    pub const R_WRIST: usize = 9;
    pub const L_KNEE: usize = 10;
    pub const L_ANKLE: usize = 11;
    pub const R_KNEE: usize = 12;
    pub const R_ANKLE: usize = 13;
}

impl Default for BodyModel {
    fn default() -> Self {
        Self::standard()
    }
}

impl BodyModel {
    pub fn new(
        joints: Vec<Joint>,
        root: usize,
        head: usize,
        hand_left: usize,
        hand_right: usize,
    ) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Empty("joint list"));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::Invalid("joint 0 must be the root".into())),
                (_, None) => return Err(Error::Invalid(alloc::format!("joint {} has no parent", j.name))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::Invalid(alloc::format!(
                        "joint {} must come after its parent",
                        j.name
                    )))
                }
                _ => {}
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("joint offset"));
            }
        }
        if root != 0 {
            return Err(Error::Invalid("root vertex must be joint 0".into()));
        }
        let model = Self {
            joints,
            root,
            head,
            hand_left,
            hand_right,
        };
        for (v, idx) in [
            (Vertex::Head, head),
            (Vertex::HandLeft, hand_left),
            (Vertex::HandRight, hand_right),
        ] {
            if idx >= model.joints.len() {
                return Err(Error::UnknownVertex(alloc::format!("{v:?}")));
            }
        }
        if model.chain(head).len() < 3
            || model.chain(hand_left).len() < 4
            || model.chain(hand_right).len() < 4
        {
            return Err(Error::Invalid(
                "model needs pelvis-spine-head and shoulder-elbow-wrist chains".into(),
            ));
        }
        Ok(model)
    }

    /// Fourteen-joint body with average adult segment lengths (x forward,
    /// y left, z up).
    pub fn standard() -> Self {
        let j = |name: &str, parent: Option<usize>, o: [f64; 3]| Joint {
            name: name.to_string(),
            parent,
            offset: Vec3::from(o),
        };
        let joints = alloc::vec![
            j("pelvis", None, [0.0, 0.0, 0.95]),
            j("spine", Some(0), [0.0, 0.0, 0.25]),
            j("neck", Some(1), [0.0, 0.0, 0.25]),
            j("head", Some(2), [0.0, 0.0, 0.15]),
            j("l_shoulder", Some(2), [0.0, 0.18, -0.05]),
            j("l_elbow", Some(4), [0.0, 0.0, -0.30]),
            j("l_wrist", Some(5), [0.0, 0.0, -0.28]),
            j("r_shoulder", Some(2), [0.0, -0.18, -0.05]),
            j("r_elbow", Some(7), [0.0, 0.0, -0.30]),
            j("r_wrist", Some(8), [0.0, 0.0, -0.28]),
            j("l_knee", Some(0), [0.0, 0.10, -0.48]),
            j("l_ankle", Some(10), [0.0, 0.0, -0.45]),
            j("r_knee", Some(0), [0.0, -0.10, -0.48]),
            j("r_ankle", Some(12), [0.0, 0.0, -0.45]),
        ];
        Self::new(
            joints,
            joints::PELVIS,
            joints::HEAD,
            joints::L_WRIST,
            joints::R_WRIST,
        )
        .expect("standard body model is valid")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn param_count(&self) -> usize {
        3 * self.joints.len() + 3
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn vertex_joint(&self, v: Vertex) -> usize {
        match v {
            Vertex::Root => self.root,
            Vertex::Head => self.head,
            Vertex::HandLeft => self.hand_left,
            Vertex::HandRight => self.hand_right,
        }
    }

    /// Joint indices from the root down to `joint`, inclusive.
    pub fn chain(&self, joint: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(joint);
        while let Some(j) = cur {
            out.push(j);
            cur = self.joints[j].parent;
        }
        out.reverse();
        out
    }

    /// Hands, arms, shoulders and pelvis.
    pub fn default_free_joints(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for hand in [self.hand_left, self.hand_right] {
            for j in self.chain(hand) {
                let on_spine = self.chain(self.head).contains(&j);
                if (j == self.root || !on_spine) && !out.contains(&j) {
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn check_params(&self, params: &BodyParams) -> Result<()> {
        if params.theta.len() != 3 * self.joints.len() {
            return Err(Error::LengthMismatch {
                what: "pose vector",
                left: params.theta.len(),
                right: 3 * self.joints.len(),
            });
        }
        Ok(())
    }

    pub fn pose(&self, params: &BodyParams) -> Result<Posed> {
        self.check_params(params)?;
        Ok(self.pose_unchecked(params))
    }

    pub(crate) fn pose_unchecked(&self, params: &BodyParams) -> Posed {
        let n = self.joints.len();
        let mut rotations = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        for (i, joint) in self.joints.iter().enumerate() {
            let local = so3::exp(&params.joint_rotation(i));
            match joint.parent {
                None => {
                    rotations.push(local);
                    positions.push(params.gamma + joint.offset);
                }
                Some(p) => {
                    let pos = positions[p] + rotations[p] * joint.offset;
                    rotations.push(rotations[p] * local);
                    positions.push(pos);
                }
            }
        }
        Posed { rotations, positions }
    }

    /// Position of a named vertex.
    pub fn forward_kinematics(&self, params: &BodyParams, vertex: Vertex) -> Result<Vec3> {
        self.joint_position(params, self.vertex_joint(vertex))
    }

    pub fn joint_position(&self, params: &BodyParams, joint: usize) -> Result<Vec3> {
        if joint >= self.joints.len() {
            return Err(Error::UnknownVertex(alloc::format!("joint {joint}")));
        }
        Ok(self.pose(params)?.positions[joint])
    }

    /// Jacobian of a joint position with respect to `[theta, gamma]`.
    pub fn fk_jacobian(&self, params: &BodyParams, joint: usize) -> Result<Matrix3xX<f64>> {
        if joint >= self.joints.len() {
            return Err(Error::UnknownVertex(alloc::format!("joint {joint}")));
        }
        let posed = self.pose(params)?;
        let mut jac = Matrix3xX::zeros(self.param_count());
        self.jacobian_into(params, &posed, joint, |col, block| {
            jac.fixed_view_mut::<3, 3>(0, col).copy_from(block);
        });
        let g = 3 * self.joints.len();
        jac.fixed_view_mut::<3, 3>(0, g).copy_from(&Mat3::identity());
        Ok(jac)
    }

    pub fn vertex_jacobian(&self, params: &BodyParams, vertex: Vertex) -> Result<Matrix3xX<f64>> {
        self.fk_jacobian(params, self.vertex_joint(vertex))
    }

    /// Calls `sink(first_column, block)` with the 3x3 block of every joint on
    /// the chain of `joint`. Columns of joints off the chain are zero.
    pub(crate) fn jacobian_into<F>(&self, params: &BodyParams, posed: &Posed, joint: usize, mut sink: F)
    where
        F: FnMut(usize, &OMatrix<f64, U3, U3>),
    {
        let target = posed.positions[joint];
        let mut cur = Some(joint);
        while let Some(j) = cur {
            let w = posed.rotations[j];
            let q = w.transpose() * (target - posed.positions[j]);
            let block = -(w * so3::skew(&q) * so3::right_jacobian(&params.joint_rotation(j)));
            sink(3 * j, &block);
            cur = self.joints[j].parent;
        }
    }

    /// Moves the whole body rigidly: the root rotation is pre-composed with
    /// the rotation of `tf` and the translation is chosen so every joint
    /// position maps through `tf`.
    pub fn transform_params(&self, params: &BodyParams, tf: &RigidTransform3) -> BodyParams {
        let mut out = params.clone();
        let root_rot = tf.rotation * so3::exp(&params.joint_rotation(self.root));
        out.set_joint_rotation(self.root, &so3::log(&root_rot));
        let o = self.joints[self.root].offset;
        out.gamma = tf.rotation * (params.gamma + o) + tf.translation - o;
        out
    }

    /// Sample points over the body used for surface-distance metrics: every
    /// joint plus `per_bone` interior points along each bone.
    pub fn surface_points(&self, posed: &Posed, per_bone: usize) -> Vec<Vec3> {
        let mut pts = posed.positions.clone();
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                for k in 1..=per_bone {
                    let s = k as f64 / (per_bone + 1) as f64;
                    pts.push(posed.positions[p] * (1.0 - s) + posed.positions[i] * s);
                }
            }
        }
        pts
    }
}
