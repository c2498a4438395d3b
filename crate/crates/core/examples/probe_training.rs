//! Calibration probe for the desk-scale training setup: trains the pose
//! model on the synthetic corpus and reports classifier accuracy, timing,
//! and null-sample entropy at several checkpoints.

use std::time::Instant;

use flamekit::corpus::{builtin_patterns, synth_dataset};
use flamekit::diffusion::{train, NoiseSchedule, TrainConfig};
use flamekit::metrics::{axis_variability, jaw_angles};
use flamekit::diffusion::FlameSequence;

fn classify(seq: &FlameSequence) -> usize {
    // Axis-dominance: 0 nodding (pitch), 1 shaking (yaw), 2 tilting (roll),
    // 3 talking (jaw).
    let [yaw, pitch, roll] = axis_variability(seq).unwrap();
    let jaw = jaw_angles(seq).unwrap();
    let jaw_var = jaw
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum::<f64>()
        / (jaw.len() - 1) as f64;
    let scores = [pitch, yaw, roll, jaw_var];
    scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let n_per_label: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let n_samples: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(25);
    let t_steps: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1000);

    let patterns = builtin_patterns();
    let pose_patterns = &patterns[..4];
    let labels = ["nodding", "shaking head", "tilting head", "talking"];
    let data = synth_dataset(pose_patterns, n_per_label, 30, 30.0, 1234).unwrap();
    println!("dataset: {} sequences", data.len());

    // Sanity: ground-truth corpus classification accuracy.
    let mut correct = 0;
    for item in &data.items {
        let want = labels.iter().position(|l| *l == item.text).unwrap();
        if classify(&item.seq) == want {
            correct += 1;
        }
    }
    println!(
        "corpus ground-truth classifier accuracy: {:.3}",
        correct as f64 / data.len() as f64
    );

    let cfg = TrainConfig {
        steps,
        batch: 64,
        lr: 1e-4,
        lambda_vel: 0.5,
        max_frames: 30,
        cfg_drop_prob: 0.1,
        seed: 7,
        diffusion_steps: t_steps,
        parallel: true,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (net, record) = train(&data, &cfg).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    flamekit::diffusion::save_checkpoint(&net, format!("/tmp/probe_{steps}.dmck"), false).unwrap();
    println!(
        "trained {} steps in {:.1} s ({:.3} s/step); loss {:.4} -> {:.4}",
        steps,
        train_time,
        train_time / steps as f64,
        record.loss[0],
        record.loss[record.loss.len() - 20..].iter().sum::<f64>() / 20.0
    );

    let sched = NoiseSchedule::cosine(t_steps);
    let t1 = Instant::now();
    for (li, label) in labels.iter().enumerate() {
        let tokens = net.tokens_for(label).unwrap();
        let seqs = flamekit::diffusion::sample_batch(
            &net,
            flamekit::diffusion::Cond::Tokens(&tokens),
            n_samples,
            30,
            &sched,
            2.5,
            999 + li as u64,
            true,
        )
        .unwrap();
        let mut hits = 0;
        let mut var_sum = 0.0;
        for s in &seqs {
            let raw = net.norm().invert(s);
            let seq = FlameSequence::from_tensor(flamekit::diffusion::Channel::Pose, 30.0, &raw).unwrap();
            if classify(&seq) == li {
                hits += 1;
            }
            var_sum += axis_variability(&seq).unwrap()[li.min(2)];
        }
        println!(
            "label {:14} accuracy {:.3}  (mean axis var {:.4})",
            label,
            hits as f64 / n_samples as f64,
            var_sum / n_samples as f64
        );
    }

    // Null-conditioned samples: label distribution entropy.
    let seqs = flamekit::diffusion::sample_batch(
        &net,
        flamekit::diffusion::Cond::Null,
        n_samples * 2,
        30,
        &sched,
        1.0,
        4242,
        true,
    )
    .unwrap();
    let mut counts = [0usize; 4];
    for s in &seqs {
        let raw = net.norm().invert(s);
        let seq = FlameSequence::from_tensor(flamekit::diffusion::Channel::Pose, 30.0, &raw).unwrap();
        counts[classify(&seq)] += 1;
    }
    let total: usize = counts.iter().sum();
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    println!("null sample label counts {counts:?}, entropy {entropy:.3} bits");
    println!("sampling time {:.1} s", t1.elapsed().as_secs_f64());
}
