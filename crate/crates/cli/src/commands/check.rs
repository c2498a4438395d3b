//! `flamekit check` — the self-contained verification suite: schedule
//! sanity, forward-process moments, finite-difference gradient checks for
//! every loss and attention kernel, naive-loop kernel oracles, rotation
//! codec round trips, the dense-matrix head-model oracle, rasterizer
//! projection/depth checks, smoothing behavior, and an attention demo over
//! rendered frame patches. Exits nonzero if any check fails.
//!
//! The oracles here are deliberately re-derived with plain loops rather
//! than shared with the library code paths they verify.

use anyhow::Result;
use clap::Args;
use flamekit::attention::{
    attention, reference_attention, reference_attention_node, reshape_contract,
    reshape_contract_inverse, temporal_attention, view_attention, AttentionVars, AttentionWeights,
    ReshapePattern,
};
use flamekit::autodiff::Graph;
use flamekit::corpus::{builtin_patterns, synth_dataset};
use flamekit::diffusion::{
    dm_loss, dm_loss_grad, eps_loss, eps_loss_grad, q_sample, smooth, Cond, DenoiserConfig,
    DenoiserNet, LossSample, NoiseSchedule, Parameterization,
};
use flamekit::flame::rotation::Rot6d;
use flamekit::flame::{mini_flame, FlameParams};
use flamekit::math::{mat_mul, transpose, IDENTITY3};
use flamekit::metrics::variability;
use flamekit::render::{project_point, render_mesh_at, CameraPose};
use flamekit::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::Shared;

#[derive(Args)]
pub struct CheckArgs {
    #[command(flatten)]
    shared: Shared,
}

struct Runner {
    failures: Vec<String>,
    passed: usize,
}

impl Runner {
    fn run(&mut self, name: &str, f: impl FnOnce() -> std::result::Result<(), String>) {
        match f() {
            Ok(()) => {
                println!("check {name}: ok");
                self.passed += 1;
            }
            Err(msg) => {
                println!("check {name}: FAIL ({msg})");
                self.failures.push(name.to_string());
            }
        }
    }
}

pub fn run(args: CheckArgs) -> Result<()> {
    let _ = args.shared.file_config()?;
    let mut r = Runner {
        failures: Vec::new(),
        passed: 0,
    };

    r.run("schedule-endpoints", check_schedule);
    r.run("forward-process-moments", check_qsample_moments);
    r.run("gradients-simple-loss", || check_loss_grads(0.0, false));
    r.run("gradients-velocity-loss", || check_loss_grads(1.0, false));
    r.run("gradients-combined-loss", || check_loss_grads(0.5, false));
    r.run("gradients-eps-loss", || check_loss_grads(0.0, true));
    r.run("kernel-oracle-attention", check_attention_oracle);
    r.run("kernel-oracle-reference", check_reference_oracle);
    r.run("kernel-oracle-temporal", check_temporal_oracle);
    r.run("kernel-oracle-view", check_view_oracle);
    r.run("kernel-gradients", check_kernel_grads);
    r.run("reshape-roundtrip", check_reshape);
    r.run("rot6d-codec", check_rot6d);
    r.run("flame-forward-oracle", check_flame_oracle);
    r.run("raster-projection", check_projection);
    r.run("raster-depth", check_depth);
    r.run("smoothing-variability", check_smoothing);
    r.run("attention-demo-on-render", check_render_demo);

    let ok = r.failures.is_empty();
    crate::summary(serde_json::json!({
        "status": if ok { "ok" } else { "error" },
        "command": "check",
        "passed": r.passed,
        "failed": r.failures,
    }));
    anyhow::ensure!(ok, "{} check(s) failed: {:?}", r.failures.len(), r.failures);
    Ok(())
}

fn err(msg: impl Into<String>) -> std::result::Result<(), String> {
    Err(msg.into())
}

fn check_schedule() -> std::result::Result<(), String> {
    let s = NoiseSchedule::cosine(1000);
    if s.alpha_bar(0) <= 0.999 {
        return err(format!("alpha_bar[0] = {}", s.alpha_bar(0)));
    }
    if s.alpha_bar(999) >= 1e-4 {
        return err(format!("alpha_bar[999] = {}", s.alpha_bar(999)));
    }
    for t in 1..1000 {
        if s.alpha_bar(t) >= s.alpha_bar(t - 1) {
            return err(format!("not strictly decreasing at {t}"));
        }
    }
    Ok(())
}

fn check_qsample_moments() -> std::result::Result<(), String> {
    let sched = NoiseSchedule::cosine(1000);
    let t = 300;
    let ab = sched.alpha_bar(t);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let f0 = Tensor::scalar(1.5);
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..n {
        let eps = Tensor::scalar(rng.sample(rand_distr::StandardNormal));
        let x = q_sample(&f0, t, &eps, &sched).map_err(|e| e.to_string())?.item();
        sum += x;
        sumsq += x * x;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    let want_mean = ab.sqrt() * 1.5;
    let want_var = 1.0 - ab;
    let mean_tol = 3.0 * want_var.sqrt() / (n as f64).sqrt();
    let var_tol = 3.0 * want_var * (2.0 / n as f64).sqrt();
    if (mean - want_mean).abs() > mean_tol {
        return err(format!("mean {mean} vs {want_mean}"));
    }
    if (var - want_var).abs() > var_tol {
        return err(format!("var {var} vs {want_var}"));
    }
    Ok(())
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn check_loss_grads(lambda: f64, epsilon: bool) -> std::result::Result<(), String> {
    let sched = NoiseSchedule::cosine(30);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for round in 0..2 {
        let cfg = DenoiserConfig {
            feature_dim: 2,
            latent_dim: 8,
            layers: 1,
            ff_dim: 12,
            vocab: vec!["x".into()],
            parameterization: Parameterization::X0,
            channel: None,
            fps: 30.0,
        };
        let net = DenoiserNet::new(cfg, 10 + round).unwrap();
        let f0 = Tensor::from_fn([3, 2], |_| rng.random_range(-1.0..1.0));
        let eps = Tensor::from_fn([3, 2], |_| rng.sample(rand_distr::StandardNormal));
        let tokens = [0usize];
        let ls = LossSample {
            f0: &f0,
            mask: None,
            cond: Cond::Tokens(&tokens),
            t: 12,
            eps: &eps,
        };
        let analytic = if epsilon {
            eps_loss_grad(&net, &sched, &ls).map_err(|e| e.to_string())?.1
        } else {
            dm_loss_grad(&net, &sched, &ls, lambda).map_err(|e| e.to_string())?.1
        };
        let h = 1e-5;
        for i in (0..net.param_count()).step_by(7) {
            let eval = |delta: f64| -> f64 {
                let mut probe = DenoiserNet::from_parts(
                    net.config().clone(),
                    net.params().to_vec(),
                    net.norm().clone(),
                )
                .unwrap();
                probe.params_mut()[i] += delta;
                if epsilon {
                    eps_loss(&probe, &sched, &ls).unwrap()
                } else {
                    dm_loss(&probe, &sched, &ls, lambda).unwrap().total
                }
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            if rel_err(analytic[i], fd) > 1e-4 {
                return err(format!("param {i}: {} vs fd {}", analytic[i], fd));
            }
        }
    }
    Ok(())
}

fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<f64> {
    let (tq, d) = (q.shape()[0], q.shape()[1]);
    let tk = k.shape()[0];
    let mut out = vec![0.0; tq * d];
    for i in 0..tq {
        let mut w = vec![0.0; tk];
        let mut denom = 0.0;
        for j in 0..tk {
            let mut dot = 0.0;
            for c in 0..d {
                dot += q.data()[i * d + c] * k.data()[j * d + c];
            }
            w[j] = (dot / (d as f64).sqrt()).exp();
            denom += w[j];
        }
        for j in 0..tk {
            for c in 0..d {
                out[i * d + c] += w[j] / denom * v.data()[j * d + c];
            }
        }
    }
    out
}

fn check_attention_oracle() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let d = rng.random_range(1..=5);
        let tq = rng.random_range(1..=5);
        let tk = rng.random_range(1..=5);
        let q = Tensor::from_fn([tq, d], |_| rng.random_range(-1.0..1.0));
        let k = Tensor::from_fn([tk, d], |_| rng.random_range(-1.0..1.0));
        let v = Tensor::from_fn([tk, d], |_| rng.random_range(-1.0..1.0));
        let got = attention(&q, &k, &v).map_err(|e| e.to_string())?;
        for (g, w) in got.data().iter().zip(&naive_attention(&q, &k, &v)) {
            if (g - w).abs() > 1e-12 {
                return err(format!("{g} vs {w}"));
            }
        }
    }
    Ok(())
}

fn naive_reference(z: &Tensor, y: &Tensor, w: &AttentionWeights) -> Vec<f64> {
    let c = z.shape()[1];
    let d = w.proj_dim();
    let (tz, tr) = (z.shape()[0], y.shape()[0]);
    let mut kv = z.data().to_vec();
    kv.extend_from_slice(y.data());
    let project = |src: &[f64], rows: usize, m: &Tensor| -> Tensor {
        let mut out = vec![0.0; rows * d];
        for i in 0..rows {
            for j in 0..d {
                for x in 0..c {
                    out[i * d + j] += src[i * c + x] * m.data()[x * d + j];
                }
            }
        }
        Tensor::new([rows, d], out).unwrap()
    };
    let q = project(z.data(), tz, &w.wq);
    let k = project(&kv, tz + tr, &w.wk);
    let v = project(&kv, tz + tr, &w.wv);
    let att = naive_attention(&q, &k, &v);
    let mut out = vec![0.0; tz * c];
    for i in 0..tz {
        for j in 0..c {
            let mut acc = z.data()[i * c + j];
            for x in 0..d {
                acc += att[i * d + x] * w.wo.data()[x * c + j];
            }
            out[i * c + j] = acc;
        }
    }
    out
}

fn check_reference_oracle() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let c = rng.random_range(2..=5);
        let tz = rng.random_range(1..=4);
        let tr = rng.random_range(0..=4);
        let z = Tensor::from_fn([tz, c], |_| rng.random_range(-1.0..1.0));
        let y = Tensor::from_fn([tr, c], |_| rng.random_range(-1.0..1.0));
        let w = AttentionWeights::seeded(c, c, rng.random());
        let got = reference_attention(&z, &y, &w).map_err(|e| e.to_string())?;
        for (g, want) in got.data().iter().zip(&naive_reference(&z, &y, &w)) {
            if (g - want).abs() > 1e-12 {
                return err(format!("{g} vs {want}"));
            }
        }
    }
    Ok(())
}

fn check_temporal_oracle() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, t, h, wd, c) = (1, 3, 2, 2, 3);
    let x = Tensor::from_fn([b, t, h, wd, c], |_| rng.random_range(-1.0..1.0));
    let w = AttentionWeights::seeded(c, c, 9);
    let got = temporal_attention(&x, &w, false).map_err(|e| e.to_string())?;
    let empty = Tensor::zeros([0, c]);
    for hy in 0..h {
        for wx in 0..wd {
            let mut track = Vec::new();
            for ti in 0..t {
                for ci in 0..c {
                    track.push(x.at(&[0, ti, hy, wx, ci]));
                }
            }
            let z = Tensor::new([t, c], track).unwrap();
            let want = naive_reference(&z, &empty, &w);
            for ti in 0..t {
                for ci in 0..c {
                    let g = got.at(&[0, ti, hy, wx, ci]);
                    if (g - want[ti * c + ci]).abs() > 1e-12 {
                        return err(format!("site ({hy},{wx}) frame {ti}"));
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_view_oracle() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (b, m, t, h, wd, c) = (1, 4, 2, 2, 1, 3);
    let x = Tensor::from_fn([b, m, t, h, wd, c], |_| rng.random_range(-1.0..1.0));
    let w = AttentionWeights::seeded(c, c, 10);
    let got = view_attention(&x, &w, false).map_err(|e| e.to_string())?;
    let empty = Tensor::zeros([0, c]);
    for ti in 0..t {
        for hy in 0..h {
            for wx in 0..wd {
                let mut track = Vec::new();
                for mi in 0..m {
                    for ci in 0..c {
                        track.push(x.at(&[0, mi, ti, hy, wx, ci]));
                    }
                }
                let z = Tensor::new([m, c], track).unwrap();
                let want = naive_reference(&z, &empty, &w);
                for mi in 0..m {
                    for ci in 0..c {
                        let g = got.at(&[0, mi, ti, hy, wx, ci]);
                        if (g - want[mi * c + ci]).abs() > 1e-12 {
                            return err(format!("site ({ti},{hy},{wx}) view {mi}"));
                        }
                    }
                }
            }
        }
    }
    // Permutation equivariance, exact.
    let perm = [3usize, 1, 0, 2];
    let stride = t * h * wd * c;
    let permute = |t_in: &Tensor| -> Tensor {
        let mut out = t_in.clone();
        for (dst, &src) in perm.iter().enumerate() {
            let data = t_in.data()[src * stride..(src + 1) * stride].to_vec();
            out.data_mut()[dst * stride..(dst + 1) * stride].copy_from_slice(&data);
        }
        out
    };
    let lhs = view_attention(&permute(&x), &w, false).map_err(|e| e.to_string())?;
    let rhs = permute(&got);
    if lhs != rhs {
        return err("permutation equivariance violated");
    }
    Ok(())
}

fn check_kernel_grads() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = 3;
    let w = AttentionWeights::seeded(c, c, 11);
    let z = Tensor::from_fn([3, c], |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_fn([2, c], |_| rng.random_range(-1.0..1.0));
    let probe = Tensor::from_fn([3, c], |_| rng.random_range(-1.0..1.0));

    let eval = |w: &AttentionWeights, z: &Tensor, y: &Tensor| -> f64 {
        let out = reference_attention(z, y, w).unwrap();
        out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut g = Graph::new();
    let wv = AttentionVars::bind(&mut g, &w);
    let zv = g.input(z.clone());
    let yv = g.input(y.clone());
    let out = reference_attention_node(&mut g, zv, Some(yv), &wv);
    let pv = g.input(probe.clone());
    let prod = g.mul(out, pv);
    let loss = g.sum_all(prod);
    let grads = g.backward(loss);

    let h = 1e-5;
    let dz = grads.wrt(zv).unwrap();
    for i in 0..z.len() {
        let mut hi = z.clone();
        hi.data_mut()[i] += h;
        let mut lo = z.clone();
        lo.data_mut()[i] -= h;
        let fd = (eval(&w, &hi, &y) - eval(&w, &lo, &y)) / (2.0 * h);
        if rel_err(dz.data()[i], fd) > 1e-4 {
            return err(format!("z grad {i}: {} vs {}", dz.data()[i], fd));
        }
    }
    let dwq = grads.wrt(wv.wq).unwrap();
    for i in 0..w.wq.len() {
        let mut hi = w.clone();
        hi.wq.data_mut()[i] += h;
        let mut lo = w.clone();
        lo.wq.data_mut()[i] -= h;
        let fd = (eval(&hi, &z, &y) - eval(&lo, &z, &y)) / (2.0 * h);
        if rel_err(dwq.data()[i], fd) > 1e-4 {
            return err(format!("wq grad {i}: {} vs {}", dwq.data()[i], fd));
        }
    }
    Ok(())
}

fn check_reshape() -> std::result::Result<(), String> {
    let x = Tensor::from_fn([2, 3, 2, 2, 2, 3], |i| i as f64);
    for pattern in [
        ReshapePattern::MergeAllButView,
        ReshapePattern::MergeViewIntoBatch,
    ] {
        let merged = reshape_contract(&x, pattern).map_err(|e| e.to_string())?;
        let back =
            reshape_contract_inverse(&merged, pattern, x.shape()).map_err(|e| e.to_string())?;
        if back != x {
            return err(format!("{pattern:?} roundtrip"));
        }
    }
    let x5 = Tensor::from_fn([2, 3, 2, 2, 3], |i| i as f64);
    let merged =
        reshape_contract(&x5, ReshapePattern::MergeSpatialForTime).map_err(|e| e.to_string())?;
    let back = reshape_contract_inverse(&merged, ReshapePattern::MergeSpatialForTime, x5.shape())
        .map_err(|e| e.to_string())?;
    if back != x5 {
        return err("spatial roundtrip");
    }
    // Flat order of the batch merge.
    let small = Tensor::from_fn([2, 2, 1, 1, 1, 1], |i| i as f64);
    let merged = reshape_contract(&small, ReshapePattern::MergeViewIntoBatch).unwrap();
    if merged.data() != [0.0, 1.0, 2.0, 3.0] {
        return err("flat order");
    }
    Ok(())
}

fn check_rot6d() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        // Quaternion-sampled rotation.
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (w, x, y, z) = (a * u2.cos(), a * u2.sin(), b * u3.cos(), b * u3.sin());
        let m = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let back = Rot6d::from_matrix(&m).to_matrix().map_err(|e| e.to_string())?;
        for i in 0..3 {
            for j in 0..3 {
                if (back[i][j] - m[i][j]).abs() > 1e-12 {
                    return err("roundtrip");
                }
            }
        }
        // Noisy decode stays orthonormal.
        let noisy = Rot6d(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
        if let Ok(m) = noisy.to_matrix() {
            let mtm = mat_mul(&m, &transpose(&m));
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (mtm[i][j] - want).abs() > 1e-6 {
                        return err("orthonormality");
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_flame_oracle() -> std::result::Result<(), String> {
    // Dense per-vertex oracle with its own rotation path (quaternions).
    let model = mini_flame();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let quat_rot = |aa: [f64; 3]| -> [[f64; 3]; 3] {
        let angle = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
        if angle == 0.0 {
            return IDENTITY3;
        }
        let axis = [aa[0] / angle, aa[1] / angle, aa[2] / angle];
        let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
        let (w, x, y, z) = (c, axis[0] * s, axis[1] * s, axis[2] * s);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    };
    for _ in 0..50 {
        let mut params = FlameParams::zeros(&model);
        for v in params.shape.iter_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
        for v in params.expr.iter_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
        for v in params.pose.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
        let got = model.forward(&params).map_err(|e| e.to_string())?;

        // Oracle: naive blend, 4x4 transforms, weighted blend, global.
        let n = model.n_vertices();
        let k = model.n_joints();
        let (sd, ed) = (model.shape_dim(), model.expr_dim());
        let mut feature = vec![0.0; 9 * k];
        for j in 0..k {
            let r = quat_rot([params.pose[3 + 3 * j], params.pose[4 + 3 * j], params.pose[5 + 3 * j]]);
            for a in 0..3 {
                for b in 0..3 {
                    feature[9 * j + 3 * a + b] = r[a][b] - if a == b { 1.0 } else { 0.0 };
                }
            }
        }
        let mut t_p = vec![0.0; 3 * n];
        let mut shaped = vec![0.0; 3 * n];
        for row in 0..3 * n {
            let mut acc = model.template()[row];
            for d in 0..sd {
                acc += model.shape_basis()[row * sd + d] * params.shape[d];
            }
            for e in 0..ed {
                acc += model.expr_basis()[row * ed + e] * params.expr[e];
            }
            shaped[row] = acc;
            for (f, feat) in feature.iter().enumerate() {
                acc += model.pose_basis()[row * 9 * k + f] * feat;
            }
            t_p[row] = acc;
        }
        let mut joints = vec![[0.0; 3]; k];
        for j in 0..k {
            for c in 0..3 {
                for col in 0..3 * n {
                    joints[j][c] += model.joint_regressor()[(3 * j + c) * 3 * n + col] * shaped[col];
                }
            }
        }
        // World transforms along the tree (parents first in kintree order
        // for the mini asset).
        let mut rot_w = vec![IDENTITY3; k];
        let mut tr_w = vec![[0.0; 3]; k];
        for j in 0..k {
            let local = quat_rot([params.pose[3 + 3 * j], params.pose[4 + 3 * j], params.pose[5 + 3 * j]]);
            let parent = model.kintree()[j];
            if parent == flamekit::flame::ROOT_SENTINEL {
                rot_w[j] = local;
                tr_w[j] = joints[j];
            } else {
                let p = parent as usize;
                rot_w[j] = mat_mul(&rot_w[p], &local);
                let off = [
                    joints[j][0] - joints[p][0],
                    joints[j][1] - joints[p][1],
                    joints[j][2] - joints[p][2],
                ];
                let moved = flamekit::math::mat_vec(&rot_w[p], off);
                tr_w[j] = [tr_w[p][0] + moved[0], tr_w[p][1] + moved[1], tr_w[p][2] + moved[2]];
            }
        }
        let global = quat_rot([params.pose[0], params.pose[1], params.pose[2]]);
        let pivot = joints[0];
        for v in 0..n {
            let p = [t_p[3 * v], t_p[3 * v + 1], t_p[3 * v + 2]];
            let mut acc = [0.0; 3];
            for j in 0..k {
                let wgt = model.skin_weights()[j * n + v];
                let local = [p[0] - joints[j][0], p[1] - joints[j][1], p[2] - joints[j][2]];
                let moved = flamekit::math::mat_vec(&rot_w[j], local);
                for c in 0..3 {
                    acc[c] += wgt * (moved[c] + tr_w[j][c]);
                }
            }
            let rel = [acc[0] - pivot[0], acc[1] - pivot[1], acc[2] - pivot[2]];
            let rotated = flamekit::math::mat_vec(&global, rel);
            for c in 0..3 {
                let want = rotated[c] + pivot[c];
                let have = got.vertices[3 * v + c];
                if (have - want).abs() > 1e-9 {
                    return err(format!("vertex {v} coord {c}: {have} vs {want}"));
                }
            }
        }
    }
    Ok(())
}

fn check_projection() -> std::result::Result<(), String> {
    let cam = CameraPose {
        fov_y: std::f64::consts::FRAC_PI_2,
        ..CameraPose::default()
    };
    let (px, py, _) = project_point(&cam, [0.0; 3], 512, 512, [0.1, -0.05, 0.0])
        .ok_or("projection rejected visible point")?;
    let want_x = 256.0 + 256.0 * (0.1 / 0.4);
    let want_y = 256.0 + 256.0 * (0.05 / 0.4);
    if (px - want_x).abs() > 0.5 || (py - want_y).abs() > 0.5 {
        return err(format!("({px},{py}) vs ({want_x},{want_y})"));
    }
    Ok(())
}

fn check_depth() -> std::result::Result<(), String> {
    let near = flamekit::flame::Mesh {
        vertices: [[-0.1, -0.1, 0.05], [0.1, -0.1, 0.05], [0.0, 0.1, 0.05]].concat(),
        faces: vec![[0, 1, 2]],
    };
    let far = flamekit::flame::Mesh {
        vertices: [[-0.1, -0.1, -0.05], [0.1, -0.1, -0.05], [0.0, 0.1, -0.05]].concat(),
        faces: vec![[0, 1, 2]],
    };
    let both = flamekit::flame::Mesh {
        vertices: [near.vertices.clone(), far.vertices.clone()].concat(),
        faces: vec![[0, 1, 2], [3, 4, 5]],
    };
    let cam = CameraPose::default();
    let fa = render_mesh_at(&near, &cam, [0.0; 3], 48, 48).map_err(|e| e.to_string())?;
    let fb = render_mesh_at(&far, &cam, [0.0; 3], 48, 48).map_err(|e| e.to_string())?;
    let fboth = render_mesh_at(&both, &cam, [0.0; 3], 48, 48).map_err(|e| e.to_string())?;
    for i in 0..fboth.depth.len() {
        if fboth.depth[i] != fa.depth[i].min(fb.depth[i]) {
            return err(format!("pixel {i} depth"));
        }
    }
    Ok(())
}

fn check_smoothing() -> std::result::Result<(), String> {
    let data = synth_dataset(&builtin_patterns()[..4], 3, 24, 30.0, 12).map_err(|e| e.to_string())?;
    for item in &data.items {
        let raw = variability(&item.seq).map_err(|e| e.to_string())?;
        let s3 = variability(&smooth(&item.seq, 3).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let s5 = variability(&smooth(&item.seq, 5).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if s3 > raw || s5 > s3 {
            return err(format!("{}: raw {raw} w3 {s3} w5 {s5}", item.text));
        }
    }
    Ok(())
}

/// Demo wiring: render a short turntable of the mini head, embed 8x8 pixel
/// patches as channels, and push the resulting view/time feature map
/// through the three kernels.
fn check_render_demo() -> std::result::Result<(), String> {
    let model = mini_flame();
    let mut params = FlameParams::zeros(&model);
    let (views, frames, size, patch) = (2usize, 3usize, 32usize, 8usize);
    let mut grid = Vec::new();
    for v in 0..views {
        let cam = CameraPose::turntable((v as f64 - 0.5) * 0.6);
        let mut row = Vec::new();
        for f in 0..frames {
            params.pose[4] = 0.1 * f as f64;
            let mesh = model.forward(&params).map_err(|e| e.to_string())?;
            row.push(render_mesh_at(&mesh, &cam, [0.0; 3], size, size).map_err(|e| e.to_string())?);
        }
        grid.push(row);
    }
    // Patch embedding: mean intensity per patch -> channel grid.
    let hp = size / patch;
    let c = 4;
    let mut x = Tensor::zeros([1, views, frames, hp, hp, c]);
    for (v, row) in grid.iter().enumerate() {
        for (f, frame) in row.iter().enumerate() {
            for py in 0..hp {
                for px in 0..hp {
                    let mut mean = 0.0;
                    for dy in 0..patch {
                        for dx in 0..patch {
                            let idx = ((py * patch + dy) * size + px * patch + dx) * 3;
                            mean += frame.rgb[idx] as f64 / 255.0;
                        }
                    }
                    mean /= (patch * patch) as f64;
                    for ci in 0..c {
                        let flat = x.flat_index(&[0, v, f, py, px, ci]);
                        x.data_mut()[flat] = mean * (ci + 1) as f64 / c as f64;
                    }
                }
            }
        }
    }
    let w = AttentionWeights::seeded(c, c, 13);
    let after_view = view_attention(&x, &w, false).map_err(|e| e.to_string())?;
    let merged = reshape_contract(&after_view, ReshapePattern::MergeViewIntoBatch)
        .map_err(|e| e.to_string())?;
    let after_time = temporal_attention(&merged, &w, false).map_err(|e| e.to_string())?;
    if !after_time.all_finite() {
        return err("non-finite demo activations");
    }
    // Reference attention between the first view's token set and the
    // second's, as an appearance-injection stand-in.
    let tokens = frames * hp * hp;
    let z = Tensor::new(
        [tokens, c],
        after_view.data()[..tokens * c].to_vec(),
    )
    .unwrap();
    let y = Tensor::new(
        [tokens, c],
        after_view.data()[tokens * c..2 * tokens * c].to_vec(),
    )
    .unwrap();
    let out = reference_attention(&z, &y, &w).map_err(|e| e.to_string())?;
    if !out.all_finite() {
        return err("non-finite reference output");
    }
    Ok(())
}
