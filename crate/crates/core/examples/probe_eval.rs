//! Evaluate a saved checkpoint: classifier accuracy per label and null
//! entropy at a given guidance scale.

use flamekit::diffusion::{load_checkpoint, sample_batch, Channel, Cond, FlameSequence, NoiseSchedule};
use flamekit::metrics::{axis_variability, jaw_angles};

fn classify(seq: &FlameSequence) -> usize {
    let [yaw, pitch, roll] = axis_variability(seq).unwrap();
    let jaw = jaw_angles(seq).unwrap();
    let jaw_var = jaw.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (jaw.len() - 1) as f64;
    [pitch, yaw, roll, jaw_var]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = args.get(1).expect("usage: probe_eval CKPT [guidance] [count] [steps]");
    let guidance: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2.5);
    let count: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(25);
    let t_steps: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1000);

    let net = load_checkpoint(ckpt).unwrap();
    let sched = NoiseSchedule::cosine(t_steps);
    let labels = ["nodding", "shaking head", "tilting head", "talking"];
    let t0 = std::time::Instant::now();
    for (li, label) in labels.iter().enumerate() {
        let tokens = net.tokens_for(label).unwrap();
        let draws = sample_batch(&net, Cond::Tokens(&tokens), count, 30, &sched, guidance, 900 + li as u64, true).unwrap();
        let mut hits = 0;
        let mut main_var = 0.0;
        for d in &draws {
            let raw = net.norm().invert(d);
            let seq = FlameSequence::from_tensor(Channel::Pose, 30.0, &raw).unwrap();
            if classify(&seq) == li {
                hits += 1;
            }
            let [y, p, r] = axis_variability(&seq).unwrap();
            main_var += [p, y, r, 0.0][li.min(3)];
        }
        println!(
            "guidance {guidance}: label {label:>13} accuracy {:.3} (axis var {:.4})",
            hits as f64 / count as f64,
            main_var / count as f64
        );
    }
    let draws = sample_batch(&net, Cond::Null, count * 2, 30, &sched, 1.0, 4242, true).unwrap();
    let mut counts = [0usize; 4];
    for d in &draws {
        let raw = net.norm().invert(d);
        let seq = FlameSequence::from_tensor(Channel::Pose, 30.0, &raw).unwrap();
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
    println!("null counts {counts:?} entropy {entropy:.3} bits; eval time {:.0}s", t0.elapsed().as_secs_f64());
}
