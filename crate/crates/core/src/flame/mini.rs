//! A deterministic synthetic "mini" head asset: 12 icosahedron vertices,
//! 4 joints (neck root, jaw, two eyeballs), 4 shape and 6 expression
//! components. Licensed head-model data cannot ship with the crate, so every
//! test and default pipeline runs on this asset; a converted full asset in
//! the same file format is drop-in compatible.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{FlameModel, ROOT_SENTINEL};

const MINI_SEED: u64 = 0x0F1A_3E01;
/// Head radius in meters.
const RADIUS: f64 = 0.1;

pub fn mini_flame() -> FlameModel {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw: [[f64; 3]; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let scale = RADIUS / (1.0 + phi * phi).sqrt();
    let mut template = Vec::with_capacity(36);
    for v in raw {
        template.extend(v.iter().map(|c| c * scale));
    }

    let faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    let n = 12;
    let k = 4;
    let shape_dim = 4;
    let expr_dim = 6;

    // Joint regressor: each joint is a fixed convex combination of vertices
    // (neck low, jaw front-low, eyeballs up-front left/right), expanded to a
    // per-coordinate block structure.
    let joint_weights: [&[(usize, f64)]; 4] = [
        &[(2, 0.25), (3, 0.25), (4, 0.25), (6, 0.25)],
        &[(4, 0.6), (9, 0.2), (11, 0.2)],
        &[(0, 0.4), (11, 0.3), (5, 0.3)],
        &[(1, 0.4), (9, 0.3), (5, 0.3)],
    ];
    let mut joint_regressor = vec![0.0; 3 * k * 3 * n];
    for (j, weights) in joint_weights.iter().enumerate() {
        for &(v, w) in *weights {
            for c in 0..3 {
                joint_regressor[(3 * j + c) * 3 * n + 3 * v + c] = w;
            }
        }
    }

    // Skin weights: gaussian falloff from the rest joint locations,
    // normalized per vertex (columns sum to one).
    let mut rest_joints = [[0.0; 3]; 4];
    for (j, weights) in joint_weights.iter().enumerate() {
        for &(v, w) in *weights {
            for c in 0..3 {
                rest_joints[j][c] += w * template[3 * v + c];
            }
        }
    }
    let sigma2 = (0.12 * RADIUS / 0.1).powi(2);
    let mut skin_weights = vec![0.0; k * n];
    for v in 0..n {
        let p = [template[3 * v], template[3 * v + 1], template[3 * v + 2]];
        let mut col = [0.0; 4];
        let mut sum = 0.0;
        for (j, joint) in rest_joints.iter().enumerate() {
            let d2 = (0..3).map(|c| (p[c] - joint[c]).powi(2)).sum::<f64>();
            col[j] = (-d2 / sigma2).exp();
            sum += col[j];
        }
        for j in 0..k {
            skin_weights[j * n + v] = col[j] / sum;
        }
    }

    // Blend-shape bases: small seeded offsets, shape strongest, pose
    // correctives weakest. Sampling order is fixed, so the asset is
    // bit-identical on every call.
    let mut rng = ChaCha8Rng::seed_from_u64(MINI_SEED);
    let mut sample = |len: usize, amp: f64| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0) * amp).collect()
    };
    let shape_basis = sample(3 * n * shape_dim, 0.01);
    let expr_basis = sample(3 * n * expr_dim, 0.005);
    let pose_basis = sample(3 * n * 9 * k, 0.002);

    FlameModel::new(
        template,
        shape_basis,
        pose_basis,
        expr_basis,
        joint_regressor,
        skin_weights,
        faces,
        vec![ROOT_SENTINEL, 0, 0, 0],
        n,
        k,
        shape_dim,
        expr_dim,
    )
    .expect("mini asset is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mini_flame_is_deterministic() {
        let a = mini_flame();
        let b = mini_flame();
        assert_eq!(a.template(), b.template());
        for ((_, x), (_, y)) in a.arrays().iter().zip(b.arrays().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn mini_flame_dimensions() {
        let m = mini_flame();
        assert_eq!(m.n_vertices(), 12);
        assert_eq!(m.n_joints(), 4);
        assert_eq!(m.shape_dim(), 4);
        assert_eq!(m.expr_dim(), 6);
        assert_eq!(m.pose_dim(), 15);
        assert_eq!(m.faces().len(), 20);
    }
}
