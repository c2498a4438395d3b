//! Micro-profile of the training hot path: raw gemm throughput, one forward
//! prediction, and one loss+gradient evaluation.

use std::time::Instant;

use flamekit::diffusion::{dm_loss_grad, Cond, DenoiserConfig, DenoiserNet, LossSample, NoiseSchedule};
use flamekit::Tensor;

fn main() {
    // Raw 2D gemm throughput at the denoiser's dominant shape.
    let (m, k, n) = (31, 64, 256);
    let a = Tensor::filled([m, k], 0.5);
    let b = Tensor::filled([k, n], 0.25);
    let mut g = flamekit::autodiff::Graph::new();
    let (av, bv) = (g.input(a), g.input(b));
    let reps = 2000;
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = g.matmul(av, bv);
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n) as f64 * reps as f64;
    println!(
        "graph matmul {m}x{k}x{n}: {:.2} GFLOP/s ({:.1} us/op)",
        flops / dt / 1e9,
        dt / reps as f64 * 1e6
    );

    let cfg = DenoiserConfig::new(12, vec!["a".into(), "b".into(), "c".into(), "d".into()]);
    let net = DenoiserNet::new(cfg, 1).unwrap();
    println!("params: {}", net.param_count());
    let sched = NoiseSchedule::cosine(1000);
    let f0 = Tensor::filled([30, 12], 0.1);
    let eps = Tensor::filled([30, 12], 0.3);

    let reps = 200;
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = net.predict(&f0, 500, Cond::Null);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("predict: {:.3} ms", dt * 1e3);

    let tokens = [0usize];
    let ls = LossSample {
        f0: &f0,
        mask: None,
        cond: Cond::Tokens(&tokens),
        t: 500,
        eps: &eps,
    };
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = dm_loss_grad(&net, &sched, &ls, 0.5).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("loss+grad: {:.3} ms  (batch-64 step est {:.3} s single-core)", dt * 1e3, dt * 64.0);

    // Batched prediction: per-sample cost at sampler scale.
    let batch = Tensor::filled([64, 30, 12], 0.1);
    let t0 = Instant::now();
    let reps2 = 40;
    for _ in 0..reps2 {
        let _ = net.predict_batch(&batch, 500, Cond::Null);
    }
    let dt = t0.elapsed().as_secs_f64() / reps2 as f64;
    println!(
        "predict_batch(64): {:.2} ms total, {:.3} ms/sample",
        dt * 1e3,
        dt * 1e3 / 64.0
    );

    // One full batched training step via train() with 1 step.
    use flamekit::corpus::{builtin_patterns, synth_dataset};
    use flamekit::diffusion::{train, TrainConfig};
    let data = synth_dataset(&builtin_patterns()[..4], 20, 30, 30.0, 5).unwrap();
    for parallel in [false, true] {
        let cfg = TrainConfig {
            steps: 20,
            parallel,
            seed: 2,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let _ = train(&data, &cfg).unwrap();
        println!(
            "train step (parallel={parallel}): {:.3} s/step",
            t0.elapsed().as_secs_f64() / 20.0
        );
    }
}
