//! Oracle tests for the head model: an independent dense homogeneous-matrix
//! implementation of blend shapes + skinning, built from quaternion-based
//! rotations, checked against the library on random parameter draws.

mod common;

use flamekit::flame::{mini_flame, FlameModel, FlameParams, ROOT_SENTINEL};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

type Mat4 = [[f64; 4]; 4];

const ID4: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for (k, brow) in b.iter().enumerate() {
                out[i][j] += a[i][k] * brow[j];
            }
        }
    }
    out
}

fn mat4_apply(m: &Mat4, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, row) in m.iter().take(3).enumerate() {
        out[i] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
    }
    out
}

/// Axis-angle to rotation via the quaternion route (independent of the
/// library's Rodrigues series).
fn quat_rotation(aa: [f64; 3]) -> Mat4 {
    let angle = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
    if angle == 0.0 {
        return ID4;
    }
    let axis = [aa[0] / angle, aa[1] / angle, aa[2] / angle];
    let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
    let (w, x, y, z) = (c, axis[0] * s, axis[1] * s, axis[2] * s);
    let mut m = ID4;
    m[0][0] = 1.0 - 2.0 * (y * y + z * z);
    m[0][1] = 2.0 * (x * y - w * z);
    m[0][2] = 2.0 * (x * z + w * y);
    m[1][0] = 2.0 * (x * y + w * z);
    m[1][1] = 1.0 - 2.0 * (x * x + z * z);
    m[1][2] = 2.0 * (y * z - w * x);
    m[2][0] = 2.0 * (x * z - w * y);
    m[2][1] = 2.0 * (y * z + w * x);
    m[2][2] = 1.0 - 2.0 * (x * x + y * y);
    m
}

fn translation(t: [f64; 3]) -> Mat4 {
    let mut m = ID4;
    m[0][3] = t[0];
    m[1][3] = t[1];
    m[2][3] = t[2];
    m
}

/// Naive per-vertex blend-shape sum.
fn oracle_blend(model: &FlameModel, params: &FlameParams) -> Vec<f64> {
    let rows = 3 * model.n_vertices();
    let (sd, ed, k) = (model.shape_dim(), model.expr_dim(), model.n_joints());
    let mut pose_feature = vec![0.0; 9 * k];
    for j in 0..k {
        let r = quat_rotation([
            params.pose[3 + 3 * j],
            params.pose[4 + 3 * j],
            params.pose[5 + 3 * j],
        ]);
        for row in 0..3 {
            for col in 0..3 {
                pose_feature[9 * j + 3 * row + col] = r[row][col] - if row == col { 1.0 } else { 0.0 };
            }
        }
    }
    let mut out = vec![0.0; rows];
    for row in 0..rows {
        let mut acc = model.template()[row];
        for d in 0..sd {
            acc += model.shape_basis()[row * sd + d] * params.shape[d];
        }
        for e in 0..ed {
            acc += model.expr_basis()[row * ed + e] * params.expr[e];
        }
        for (f, feat) in pose_feature.iter().enumerate() {
            acc += model.pose_basis()[row * 9 * k + f] * feat;
        }
        out[row] = acc;
    }
    out
}

/// Joint world transforms as dense 4x4 products along the tree.
fn oracle_joint_transforms(model: &FlameModel, params: &FlameParams) -> (Vec<Mat4>, Vec<[f64; 3]>) {
    let k = model.n_joints();
    let n = model.n_vertices();
    // Shaped vertices without pose correctives feed the regressor.
    let mut shaped = model.template().to_vec();
    for (row, slot) in shaped.iter_mut().enumerate() {
        for d in 0..model.shape_dim() {
            *slot += model.shape_basis()[row * model.shape_dim() + d] * params.shape[d];
        }
        for e in 0..model.expr_dim() {
            *slot += model.expr_basis()[row * model.expr_dim() + e] * params.expr[e];
        }
    }
    let mut joints = vec![[0.0; 3]; k];
    for j in 0..k {
        for c in 0..3 {
            let mut acc = 0.0;
            for col in 0..3 * n {
                acc += model.joint_regressor()[(3 * j + c) * 3 * n + col] * shaped[col];
            }
            joints[j][c] = acc;
        }
    }

    let mut world: Vec<Option<Mat4>> = vec![None; k];
    while world.iter().any(Option::is_none) {
        for j in 0..k {
            if world[j].is_some() {
                continue;
            }
            let parent = model.kintree()[j];
            let local = mat4_mul(
                &translation(if parent == ROOT_SENTINEL {
                    joints[j]
                } else {
                    let p = joints[parent as usize];
                    [joints[j][0] - p[0], joints[j][1] - p[1], joints[j][2] - p[2]]
                }),
                &quat_rotation([
                    params.pose[3 + 3 * j],
                    params.pose[4 + 3 * j],
                    params.pose[5 + 3 * j],
                ]),
            );
            if parent == ROOT_SENTINEL {
                world[j] = Some(local);
            } else if let Some(pw) = world[parent as usize] {
                world[j] = Some(mat4_mul(&pw, &local));
            }
        }
    }
    let transforms = world
        .into_iter()
        .zip(&joints)
        .map(|(g, j)| mat4_mul(&g.unwrap(), &translation([-j[0], -j[1], -j[2]])))
        .collect();
    (transforms, joints)
}

/// Full forward: blend, 4x4 weight-blended skinning, global rotation about
/// the root joint.
fn oracle_forward(model: &FlameModel, params: &FlameParams) -> Vec<f64> {
    let t_p = oracle_blend(model, params);
    let (transforms, joints) = oracle_joint_transforms(model, params);
    let n = model.n_vertices();

    let root = model
        .kintree()
        .iter()
        .position(|&p| p == ROOT_SENTINEL)
        .expect("one root");
    let pivot = joints[root];
    let global = mat4_mul(
        &mat4_mul(&translation(pivot), &quat_rotation([params.pose[0], params.pose[1], params.pose[2]])),
        &translation([-pivot[0], -pivot[1], -pivot[2]]),
    );

    let mut out = vec![0.0; 3 * n];
    for v in 0..n {
        let mut blended = [[0.0; 4]; 4];
        for (j, tf) in transforms.iter().enumerate() {
            let w = model.skin_weights()[j * n + v];
            for r in 0..4 {
                for c in 0..4 {
                    blended[r][c] += w * tf[r][c];
                }
            }
        }
        let p = [t_p[3 * v], t_p[3 * v + 1], t_p[3 * v + 2]];
        let posed = mat4_apply(&blended, p);
        let rotated = mat4_apply(&global, posed);
        out[3 * v..3 * v + 3].copy_from_slice(&rotated);
    }
    out
}

fn random_params(model: &FlameModel, rng: &mut ChaCha8Rng) -> FlameParams {
    let mut params = FlameParams::zeros(model);
    for v in params.shape.iter_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    for v in params.expr.iter_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    for v in params.pose.iter_mut() {
        *v = rng.random_range(-0.9..0.9);
    }
    params
}

#[test]
fn blend_shapes_matches_naive_summation() {
    let model = mini_flame();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let params = random_params(&model, &mut rng);
        let got = model.blend_shapes(&params).unwrap();
        let want = oracle_blend(&model, &params);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }
}

#[test]
fn lbs_matches_dense_homogeneous_oracle() {
    let model = mini_flame();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..300 {
        let params = random_params(&model, &mut rng);
        let t_p = model.blend_shapes(&params).unwrap();
        let got = model.lbs(&t_p, &params).unwrap();
        // Oracle consumes the same t_p through its own path.
        let want = {
            let (transforms, joints) = oracle_joint_transforms(&model, &params);
            let n = model.n_vertices();
            let root = model
                .kintree()
                .iter()
                .position(|&p| p == ROOT_SENTINEL)
                .unwrap();
            let pivot = joints[root];
            let global = mat4_mul(
                &mat4_mul(
                    &translation(pivot),
                    &quat_rotation([params.pose[0], params.pose[1], params.pose[2]]),
                ),
                &translation([-pivot[0], -pivot[1], -pivot[2]]),
            );
            let mut out = vec![0.0; 3 * n];
            for v in 0..n {
                let mut blended = [[0.0; 4]; 4];
                for (j, tf) in transforms.iter().enumerate() {
                    let w = model.skin_weights()[j * n + v];
                    for r in 0..4 {
                        for c in 0..4 {
                            blended[r][c] += w * tf[r][c];
                        }
                    }
                }
                let p = [t_p[3 * v], t_p[3 * v + 1], t_p[3 * v + 2]];
                let posed = mat4_apply(&blended, p);
                let rotated = mat4_apply(&global, posed);
                out[3 * v..3 * v + 3].copy_from_slice(&rotated);
            }
            out
        };
        for (g, w) in got.vertices.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }
}

#[test]
fn forward_matches_composed_oracle() {
    let model = mini_flame();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..300 {
        let params = random_params(&model, &mut rng);
        let got = model.forward(&params).unwrap();
        let want = oracle_forward(&model, &params);
        for (g, w) in got.vertices.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }
}

/// One-hot skin weights make vertices move rigidly with their joint: all
/// distances to the (posed) joint are preserved.
#[test]
fn one_hot_weights_preserve_joint_distance() {
    let base = mini_flame();
    let n = base.n_vertices();
    let k = base.n_joints();
    // Assign each vertex entirely to its heaviest joint.
    let mut one_hot = vec![0.0; k * n];
    for v in 0..n {
        let mut best = 0;
        for j in 1..k {
            if base.skin_weights()[j * n + v] > base.skin_weights()[best * n + v] {
                best = j;
            }
        }
        one_hot[best * n + v] = 1.0;
    }
    let model = FlameModel::new(
        base.template().to_vec(),
        base.shape_basis().to_vec(),
        vec![0.0; base.pose_basis().len()],
        base.expr_basis().to_vec(),
        base.joint_regressor().to_vec(),
        one_hot.clone(),
        base.faces().to_vec(),
        base.kintree().to_vec(),
        n,
        k,
        base.shape_dim(),
        base.expr_dim(),
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..50 {
        let mut params = FlameParams::zeros(&model);
        for v in params.pose.iter_mut() {
            *v = rng.random_range(-0.9..0.9);
        }
        let t_p = model.blend_shapes(&params).unwrap();
        let posed = model.lbs(&t_p, &params).unwrap();
        let (transforms, joints) = oracle_joint_transforms(&model, &params);
        let root = model
            .kintree()
            .iter()
            .position(|&p| p == ROOT_SENTINEL)
            .unwrap();
        let pivot = joints[root];
        let global = mat4_mul(
            &mat4_mul(
                &translation(pivot),
                &quat_rotation([params.pose[0], params.pose[1], params.pose[2]]),
            ),
            &translation([-pivot[0], -pivot[1], -pivot[2]]),
        );
        for v in 0..n {
            let j = (0..k).find(|&j| one_hot[j * n + v] == 1.0).unwrap();
            let joint_posed = mat4_apply(&global, mat4_apply(&transforms[j], joints[j]));
            let vertex_posed = [
                posed.vertices[3 * v],
                posed.vertices[3 * v + 1],
                posed.vertices[3 * v + 2],
            ];
            let rest = [
                t_p[3 * v] - joints[j][0],
                t_p[3 * v + 1] - joints[j][1],
                t_p[3 * v + 2] - joints[j][2],
            ];
            let now = [
                vertex_posed[0] - joint_posed[0],
                vertex_posed[1] - joint_posed[1],
                vertex_posed[2] - joint_posed[2],
            ];
            let d_rest = (rest[0] * rest[0] + rest[1] * rest[1] + rest[2] * rest[2]).sqrt();
            let d_now = (now[0] * now[0] + now[1] * now[1] + now[2] * now[2]).sqrt();
            assert!(
                (d_rest - d_now).abs() < 1e-9,
                "vertex {v} joint {j}: {d_rest} vs {d_now}"
            );
        }
    }
}
