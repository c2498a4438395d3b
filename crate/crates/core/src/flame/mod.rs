//! The FLAME statistical head model: a fixed-topology template mesh deformed
//! by linear shape/pose/expression blend shapes and posed with linear blend
//! skinning over a small joint hierarchy, with a global head rotation applied
//! last about the root joint.

mod fkm;
mod mini;
pub mod rotation;

pub use fkm::{load_fkm, save_fkm};
pub use mini::mini_flame;
pub use rotation::{log_rotation, matrix_to_yaw_pitch_roll, rodrigues, yaw_pitch_roll_matrix, Rot6d};

use crate::error::{Error, Result};
use crate::math::{add3, mat_mul, mat_vec, sub3, Mat3, Vec3};

/// Sentinel parent index marking the root of the joint tree.
pub const ROOT_SENTINEL: u32 = u32::MAX;

/// Joint index of the jaw in the FLAME ordering (neck, jaw, eye L, eye R).
pub const JAW_JOINT: usize = 1;

/// A triangle mesh produced by the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    /// Flat xyz vertex coordinates, length `3 * n_vertices`, meters.
    pub vertices: Vec<f64>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn vertex(&self, i: usize) -> Vec3 {
        [self.vertices[3 * i], self.vertices[3 * i + 1], self.vertices[3 * i + 2]]
    }
}

/// The statistical head asset. Immutable after construction; all operations
/// on it are pure functions, so sharing across threads is safe.
#[derive(Clone, Debug)]
pub struct FlameModel {
    /// Rest mesh, flat xyz, length `3n`.
    template: Vec<f64>,
    /// `3n x |shape|`, row-major.
    shape_basis: Vec<f64>,
    /// `3n x 9k`, row-major; columns follow the vectorized `R(theta_j) - I`
    /// feature of the non-global joints.
    pose_basis: Vec<f64>,
    /// `3n x |expr|`, row-major.
    expr_basis: Vec<f64>,
    /// `3k x 3n`, row-major; maps shaped vertices to joint locations.
    joint_regressor: Vec<f64>,
    /// `k x n`, row-major; column v holds the blend weights of vertex v.
    skin_weights: Vec<f64>,
    faces: Vec<[u32; 3]>,
    /// Parent joint per joint; exactly one entry is [`ROOT_SENTINEL`].
    kintree: Vec<u32>,
    n_vertices: usize,
    n_joints: usize,
    shape_dim: usize,
    expr_dim: usize,
    /// Joint evaluation order, parents before children.
    topo_order: Vec<usize>,
}

impl FlameModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        template: Vec<f64>,
        shape_basis: Vec<f64>,
        pose_basis: Vec<f64>,
        expr_basis: Vec<f64>,
        joint_regressor: Vec<f64>,
        skin_weights: Vec<f64>,
        faces: Vec<[u32; 3]>,
        kintree: Vec<u32>,
        n_vertices: usize,
        n_joints: usize,
        shape_dim: usize,
        expr_dim: usize,
    ) -> Result<Self> {
        let check = |name: &str, len: usize, want: usize| -> Result<()> {
            if len != want {
                Err(Error::dim(format!("FlameModel.{name}"), want.to_string(), len.to_string()))
            } else {
                Ok(())
            }
        };
        check("template", template.len(), 3 * n_vertices)?;
        check("shape_basis", shape_basis.len(), 3 * n_vertices * shape_dim)?;
        check("pose_basis", pose_basis.len(), 3 * n_vertices * 9 * n_joints)?;
        check("expr_basis", expr_basis.len(), 3 * n_vertices * expr_dim)?;
        check("joint_regressor", joint_regressor.len(), 3 * n_joints * 3 * n_vertices)?;
        check("skin_weights", skin_weights.len(), n_joints * n_vertices)?;
        check("kintree", kintree.len(), n_joints)?;

        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v as usize >= n_vertices {
                    return Err(Error::InvalidModel(format!(
                        "face {fi} references vertex {v} >= n_vertices {n_vertices}"
                    )));
                }
            }
        }
        for v in 0..n_vertices {
            let mut sum = 0.0;
            for j in 0..n_joints {
                let w = skin_weights[j * n_vertices + v];
                if w < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "skin_weights[{j},{v}] = {w} is negative"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidModel(format!(
                    "skin weights of vertex {v} sum to {sum}, expected 1"
                )));
            }
        }
        let topo_order = toposort_kintree(&kintree)?;

        Ok(FlameModel {
            template,
            shape_basis,
            pose_basis,
            expr_basis,
            joint_regressor,
            skin_weights,
            faces,
            kintree,
            n_vertices,
            n_joints,
            shape_dim,
            expr_dim,
            topo_order,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dim
    }

    pub fn expr_dim(&self) -> usize {
        self.expr_dim
    }

    /// Length of a pose vector: global rotation plus one axis-angle per joint.
    pub fn pose_dim(&self) -> usize {
        3 * self.n_joints + 3
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn kintree(&self) -> &[u32] {
        &self.kintree
    }

    pub fn template(&self) -> &[f64] {
        &self.template
    }

    /// `3n x |shape|`, row-major.
    pub fn shape_basis(&self) -> &[f64] {
        &self.shape_basis
    }

    /// `3n x 9k`, row-major.
    pub fn pose_basis(&self) -> &[f64] {
        &self.pose_basis
    }

    /// `3n x |expr|`, row-major.
    pub fn expr_basis(&self) -> &[f64] {
        &self.expr_basis
    }

    /// `3k x 3n`, row-major.
    pub fn joint_regressor(&self) -> &[f64] {
        &self.joint_regressor
    }

    /// `k x n`, row-major.
    pub fn skin_weights(&self) -> &[f64] {
        &self.skin_weights
    }

    pub(crate) fn arrays(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("template", &self.template),
            ("shape_basis", &self.shape_basis),
            ("pose_basis", &self.pose_basis),
            ("expr_basis", &self.expr_basis),
            ("joint_regressor", &self.joint_regressor),
            ("skin_weights", &self.skin_weights),
        ]
    }

    fn validate_params(&self, params: &FlameParams) -> Result<()> {
        let check = |name: &str, len: usize, want: usize| -> Result<()> {
            if len != want {
                Err(Error::dim(format!("FlameParams.{name}"), want.to_string(), len.to_string()))
            } else {
                Ok(())
            }
        };
        check("shape", params.shape.len(), self.shape_dim)?;
        check("pose", params.pose.len(), self.pose_dim())?;
        check("expr", params.expr.len(), self.expr_dim)?;
        for (name, vals) in [
            ("shape", &params.shape),
            ("pose", &params.pose),
            ("expr", &params.expr),
        ] {
            if !vals.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "FlameParams.{name} contains non-finite entries"
                )));
            }
        }
        Ok(())
    }

    /// Rest mesh plus shape, pose-corrective and expression blend shapes.
    pub fn blend_shapes(&self, params: &FlameParams) -> Result<Vec<f64>> {
        self.validate_params(params)?;
        let mut out = self.template.clone();
        axpy_matvec(&mut out, &self.shape_basis, &params.shape);
        axpy_matvec(&mut out, &self.expr_basis, &params.expr);
        let feature = pose_feature(&params.pose, self.n_joints);
        axpy_matvec(&mut out, &self.pose_basis, &feature);
        Ok(out)
    }

    /// Vertices with shape and expression offsets only; this is what the
    /// joint regressor sees (pose correctives do not move joints).
    fn shaped_vertices(&self, params: &FlameParams) -> Vec<f64> {
        let mut out = self.template.clone();
        axpy_matvec(&mut out, &self.shape_basis, &params.shape);
        axpy_matvec(&mut out, &self.expr_basis, &params.expr);
        out
    }

    /// Rest-pose joint locations regressed from the shaped vertices.
    pub fn rest_joints(&self, params: &FlameParams) -> Result<Vec<Vec3>> {
        self.validate_params(params)?;
        let shaped = self.shaped_vertices(params);
        Ok(self.regress_joints(&shaped))
    }

    fn regress_joints(&self, shaped: &[f64]) -> Vec<Vec3> {
        let rows = 3 * self.n_joints;
        let cols = 3 * self.n_vertices;
        let mut joints = vec![[0.0; 3]; self.n_joints];
        for j in 0..self.n_joints {
            for c in 0..3 {
                let row = &self.joint_regressor[(3 * j + c) * cols..(3 * j + c + 1) * cols];
                let mut acc = 0.0;
                for (r, v) in row.iter().zip(shaped) {
                    acc += r * v;
                }
                joints[j][c] = acc;
            }
        }
        debug_assert_eq!(rows, 3 * self.n_joints);
        joints
    }

    /// Linear blend skinning of already-blended vertices `t_p`, followed by
    /// the global head rotation about the root joint.
    pub fn lbs(&self, t_p: &[f64], params: &FlameParams) -> Result<Mesh> {
        self.validate_params(params)?;
        if t_p.len() != 3 * self.n_vertices {
            return Err(Error::dim(
                "lbs t_p",
                (3 * self.n_vertices).to_string(),
                t_p.len().to_string(),
            ));
        }
        // Unposed skinning is the identity map; short-circuit so a rest pose
        // reproduces its input bit for bit.
        if params.pose.iter().all(|&v| v == 0.0) {
            return Ok(Mesh {
                vertices: t_p.to_vec(),
                faces: self.faces.clone(),
            });
        }
        let joints = self.rest_joints(params)?;
        let transforms = self.joint_transforms(&joints, &params.pose);

        let global = rodrigues([params.pose[0], params.pose[1], params.pose[2]]);
        let root = self.topo_order[0];
        let pivot = joints[root];

        let n = self.n_vertices;
        let mut out = vec![0.0; 3 * n];
        for v in 0..n {
            let p = [t_p[3 * v], t_p[3 * v + 1], t_p[3 * v + 2]];
            let mut acc = [0.0; 3];
            for (j, tf) in transforms.iter().enumerate() {
                let w = self.skin_weights[j * n + v];
                if w == 0.0 {
                    continue;
                }
                let moved = add3(mat_vec(&tf.rot, p), tf.trans);
                acc = add3(acc, scale(moved, w));
            }
            let rotated = add3(mat_vec(&global, sub3(acc, pivot)), pivot);
            out[3 * v] = rotated[0];
            out[3 * v + 1] = rotated[1];
            out[3 * v + 2] = rotated[2];
        }
        Ok(Mesh {
            vertices: out,
            faces: self.faces.clone(),
        })
    }

    /// World transform per joint composed along the kinematic tree, with the
    /// rest-joint offset folded in (`A_j = G_j * translate(-J_j)`).
    fn joint_transforms(&self, joints: &[Vec3], pose: &[f64]) -> Vec<RigidTransform> {
        let k = self.n_joints;
        let mut world: Vec<RigidTransform> = vec![RigidTransform::identity(); k];
        for &j in &self.topo_order {
            let local_rot = rodrigues([pose[3 + 3 * j], pose[4 + 3 * j], pose[5 + 3 * j]]);
            let parent = self.kintree[j];
            let (rot, trans) = if parent == ROOT_SENTINEL {
                (local_rot, joints[j])
            } else {
                let p = &world[parent as usize];
                let offset = sub3(joints[j], joints[parent as usize]);
                (mat_mul(&p.rot, &local_rot), add3(mat_vec(&p.rot, offset), p.trans))
            };
            world[j] = RigidTransform { rot, trans };
        }
        // Fold in the inverse rest location so the transform maps rest-space
        // vertices directly.
        for (j, tf) in world.iter_mut().enumerate() {
            let shifted = mat_vec(&tf.rot, joints[j]);
            tf.trans = sub3(tf.trans, shifted);
        }
        world
    }

    /// Full model evaluation: blend shapes then skinning.
    pub fn forward(&self, params: &FlameParams) -> Result<Mesh> {
        let t_p = self.blend_shapes(params)?;
        self.lbs(&t_p, params)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct RigidTransform {
    pub rot: Mat3,
    pub trans: Vec3,
}

impl RigidTransform {
    fn identity() -> Self {
        RigidTransform {
            rot: crate::math::IDENTITY3,
            trans: [0.0; 3],
        }
    }
}

fn scale(v: Vec3, s: f64) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// `out += basis @ coeffs` where basis is `len(out) x len(coeffs)` row-major.
fn axpy_matvec(out: &mut [f64], basis: &[f64], coeffs: &[f64]) {
    let cols = coeffs.len();
    if cols == 0 {
        return;
    }
    debug_assert_eq!(basis.len(), out.len() * cols);
    for (row, slot) in out.iter_mut().enumerate() {
        let b = &basis[row * cols..(row + 1) * cols];
        let mut acc = 0.0;
        for (x, y) in b.iter().zip(coeffs) {
            acc += x * y;
        }
        *slot += acc;
    }
}

/// Vectorized `R(theta_j) - I` over the non-global joints, the input to the
/// pose-corrective basis.
pub fn pose_feature(pose: &[f64], n_joints: usize) -> Vec<f64> {
    let mut feature = vec![0.0; 9 * n_joints];
    for j in 0..n_joints {
        let r = rodrigues([pose[3 + 3 * j], pose[4 + 3 * j], pose[5 + 3 * j]]);
        for row in 0..3 {
            for col in 0..3 {
                let v = r[row][col] - if row == col { 1.0 } else { 0.0 };
                feature[9 * j + 3 * row + col] = v;
            }
        }
    }
    feature
}

/// Per-frame model parameters; dimensions must match the bound model.
#[derive(Clone, Debug, PartialEq)]
pub struct FlameParams {
    pub shape: Vec<f64>,
    /// Global axis-angle rotation in `[0..3]`, then one axis-angle per joint.
    pub pose: Vec<f64>,
    pub expr: Vec<f64>,
}

impl FlameParams {
    pub fn zeros(model: &FlameModel) -> Self {
        FlameParams {
            shape: vec![0.0; model.shape_dim()],
            pose: vec![0.0; model.pose_dim()],
            expr: vec![0.0; model.expr_dim()],
        }
    }
}

/// Decode the 12-float head+jaw 6D pose block into a full FLAME pose vector:
/// head rotation goes to the global slot, jaw to its joint, and the remaining
/// joints (neck, eyeballs) are zero-filled.
pub fn pose_vec_to_flame(f_pose: &[f64], n_joints: usize) -> Result<Vec<f64>> {
    if f_pose.len() != 12 {
        return Err(Error::dim("pose_vec_to_flame", "12", f_pose.len().to_string()));
    }
    if !f_pose.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite pose vector".into()));
    }
    let head = Rot6d(f_pose[0..6].try_into().unwrap()).to_matrix()?;
    let jaw = Rot6d(f_pose[6..12].try_into().unwrap()).to_matrix()?;
    let mut pose = vec![0.0; 3 * n_joints + 3];
    pose[0..3].copy_from_slice(&log_rotation(&head));
    if JAW_JOINT < n_joints {
        pose[3 + 3 * JAW_JOINT..6 + 3 * JAW_JOINT].copy_from_slice(&log_rotation(&jaw));
    }
    Ok(pose)
}

/// Encode head and jaw rotation matrices into the 12-float pose block.
pub fn flame_to_pose_vec(head: &Mat3, jaw: &Mat3) -> [f64; 12] {
    let h = Rot6d::from_matrix(head).0;
    let j = Rot6d::from_matrix(jaw).0;
    let mut out = [0.0; 12];
    out[..6].copy_from_slice(&h);
    out[6..].copy_from_slice(&j);
    out
}

fn toposort_kintree(kintree: &[u32]) -> Result<Vec<usize>> {
    let k = kintree.len();
    let mut roots = 0;
    for (j, &p) in kintree.iter().enumerate() {
        if p == ROOT_SENTINEL {
            roots += 1;
        } else if p as usize >= k {
            return Err(Error::InvalidModel(format!(
                "kintree parent {p} of joint {j} out of range"
            )));
        }
    }
    if roots != 1 {
        return Err(Error::InvalidModel(format!(
            "kintree must have exactly one root, found {roots}"
        )));
    }
    let mut order = Vec::with_capacity(k);
    let mut placed = vec![false; k];
    while order.len() < k {
        let before = order.len();
        for j in 0..k {
            if placed[j] {
                continue;
            }
            let p = kintree[j];
            if p == ROOT_SENTINEL || placed[p as usize] {
                order.push(j);
                placed[j] = true;
            }
        }
        if order.len() == before {
            return Err(Error::InvalidModel("kintree contains a cycle".into()));
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_reproduce_template() {
        let model = mini_flame();
        let params = FlameParams::zeros(&model);
        let t_p = model.blend_shapes(&params).unwrap();
        assert_eq!(t_p, model.template().to_vec());
        let mesh = model.forward(&params).unwrap();
        assert_eq!(mesh.vertices, model.template().to_vec());
    }

    #[test]
    fn shape_unit_vector_adds_one_basis_column() {
        let model = mini_flame();
        let mut params = FlameParams::zeros(&model);
        params.shape[1] = 1.0;
        let t_p = model.blend_shapes(&params).unwrap();
        let cols = model.shape_dim();
        for (row, (&got, &base)) in t_p.iter().zip(model.template()).enumerate() {
            let want = base + model.shape_basis[row * cols + 1];
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn blend_shapes_linearity_at_zero_pose() {
        let model = mini_flame();
        let mut a = FlameParams::zeros(&model);
        let mut b = FlameParams::zeros(&model);
        a.shape = vec![0.3, -0.7, 0.2, 0.9];
        b.shape = vec![-1.1, 0.4, 0.0, 0.5];
        let mut ab = FlameParams::zeros(&model);
        for i in 0..4 {
            ab.shape[i] = a.shape[i] + b.shape[i];
        }
        let fa = model.blend_shapes(&a).unwrap();
        let fb = model.blend_shapes(&b).unwrap();
        let fab = model.blend_shapes(&ab).unwrap();
        for i in 0..fa.len() {
            let residual = fab[i] - fa[i] - fb[i] + model.template()[i];
            assert!(residual.abs() < 1e-9);
        }
    }

    #[test]
    fn zero_pose_is_identity_skinning() {
        let model = mini_flame();
        let mut params = FlameParams::zeros(&model);
        params.shape = vec![0.5, -0.3, 0.8, 0.1];
        params.expr = vec![0.2, 0.0, -0.4, 0.3, 0.0, 0.6];
        let t_p = model.blend_shapes(&params).unwrap();
        let mesh = model.lbs(&t_p, &params).unwrap();
        for (got, want) in mesh.vertices.iter().zip(&t_p) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_names_field() {
        let model = mini_flame();
        let mut params = FlameParams::zeros(&model);
        params.expr.push(0.0);
        let err = model.blend_shapes(&params).unwrap_err();
        assert!(err.to_string().contains("expr"), "got: {err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let model = mini_flame();
        let mut params = FlameParams::zeros(&model);
        params.shape = vec![0.4, 0.1, -0.2, 0.7];
        params.pose[4] = 0.3;
        params.pose[0] = -0.2;
        let a = model.forward(&params).unwrap();
        let b = model.forward(&params).unwrap();
        assert_eq!(a.vertices, b.vertices);
    }

    #[test]
    fn single_joint_quarter_turn() {
        // One joint at the origin, one vertex fully bound to it; a 90 degree
        // rotation about z maps (1,0,0) to (0,1,0).
        let model = FlameModel::new(
            vec![1.0, 0.0, 0.0],
            vec![],
            vec![0.0; 3 * 9],
            vec![],
            vec![0.0; 9],
            vec![1.0],
            vec![],
            vec![ROOT_SENTINEL],
            1,
            1,
            0,
            0,
        )
        .unwrap();
        let mut params = FlameParams::zeros(&model);
        params.pose[5] = std::f64::consts::FRAC_PI_2; // joint 0, z component
        let mesh = model.forward(&params).unwrap();
        assert!((mesh.vertices[0]).abs() < 1e-9);
        assert!((mesh.vertices[1] - 1.0).abs() < 1e-9);
        assert!((mesh.vertices[2]).abs() < 1e-9);
    }

    #[test]
    fn pose_vec_identity_blocks_decode_to_zero() {
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let pose = pose_vec_to_flame(&id, 4).unwrap();
        assert_eq!(pose, vec![0.0; 15]);
    }

    #[test]
    fn pose_vec_yaw_decodes_to_axis_angle() {
        let yaw = std::f64::consts::FRAC_PI_6;
        let head = crate::math::rot_y(yaw);
        let block = flame_to_pose_vec(&head, &crate::math::IDENTITY3);
        let pose = pose_vec_to_flame(&block, 4).unwrap();
        let norm = (pose[0] * pose[0] + pose[1] * pose[1] + pose[2] * pose[2]).sqrt();
        assert!((norm - yaw).abs() < 1e-12);
        assert!((pose[1] - yaw).abs() < 1e-12, "rotation should be about +y");
        for v in &pose[3..] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn kintree_validation() {
        let bad_cycle = toposort_kintree(&[1, 0]);
        assert!(bad_cycle.is_err());
        let two_roots = toposort_kintree(&[ROOT_SENTINEL, ROOT_SENTINEL]);
        assert!(two_roots.is_err());
        let ok = toposort_kintree(&[ROOT_SENTINEL, 0, 0, 1]).unwrap();
        assert_eq!(ok[0], 0);
    }
}
