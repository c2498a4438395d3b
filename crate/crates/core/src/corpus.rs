//! Synthetic text-to-sequence corpus. Each label has a procedural motion or
//! expression rule (sinusoid axis, jaw oscillation, expression impulse or
//! drift); per-sample amplitude, frequency, phase and onset are jittered by
//! a seeded stream, so a (seed, frame count) pair fully determines the
//! dataset.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{Channel, Dataset, DatasetItem, FlameSequence};
use crate::error::{Error, Result};
use crate::flame::flame_to_pose_vec;
use crate::flame::rotation::yaw_pitch_roll_matrix;
use crate::math::rot_x;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadAxis {
    Yaw,
    Pitch,
    Roll,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PatternKind {
    /// Sinusoidal head rotation about one axis, small wobble on the others.
    HeadSine { axis: HeadAxis },
    /// Fast jaw open/close oscillation with a near-still head.
    JawOscillation,
    /// A raised-cosine bump on some expression components.
    ExprImpulse { dims: Vec<usize> },
    /// Slow expression drift on some components.
    ExprDrift { dims: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionPattern {
    pub label: String,
    pub channel: Channel,
    pub kind: PatternKind,
}

/// The built-in label set: four pose patterns (each dominating a distinct
/// axis) and two expression patterns.
pub fn builtin_patterns() -> Vec<MotionPattern> {
    vec![
        MotionPattern {
            label: "nodding".into(),
            channel: Channel::Pose,
            kind: PatternKind::HeadSine {
                axis: HeadAxis::Pitch,
            },
        },
        MotionPattern {
            label: "shaking head".into(),
            channel: Channel::Pose,
            kind: PatternKind::HeadSine { axis: HeadAxis::Yaw },
        },
        MotionPattern {
            label: "tilting head".into(),
            channel: Channel::Pose,
            kind: PatternKind::HeadSine {
                axis: HeadAxis::Roll,
            },
        },
        MotionPattern {
            label: "talking".into(),
            channel: Channel::Pose,
            kind: PatternKind::JawOscillation,
        },
        MotionPattern {
            label: "surprised".into(),
            channel: Channel::Expr,
            kind: PatternKind::ExprImpulse { dims: vec![0, 1] },
        },
        MotionPattern {
            label: "sad".into(),
            channel: Channel::Expr,
            kind: PatternKind::ExprDrift { dims: vec![2, 3] },
        },
    ]
}

pub fn pattern_by_label(label: &str) -> Result<MotionPattern> {
    builtin_patterns()
        .into_iter()
        .find(|p| p.label == label)
        .ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            vocabulary: builtin_patterns().into_iter().map(|p| p.label).collect(),
        })
}

/// Generate `n_per_label` sequences per pattern at `n_frames` frames each.
pub fn synth_dataset(
    patterns: &[MotionPattern],
    n_per_label: usize,
    n_frames: usize,
    fps: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_label == 0 {
        return Err(Error::InvalidArgument("n_per_label must be >= 1".into()));
    }
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    if patterns.is_empty() {
        return Err(Error::InvalidArgument("no patterns given".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(patterns.len() * n_per_label);
    for pattern in patterns {
        for _ in 0..n_per_label {
            let seq = generate_one(pattern, n_frames, fps, &mut rng)?;
            items.push(DatasetItem {
                text: pattern.label.clone(),
                seq,
            });
        }
    }
    Ok(Dataset { items })
}

fn generate_one(
    pattern: &MotionPattern,
    n_frames: usize,
    fps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FlameSequence> {
    match (&pattern.kind, pattern.channel) {
        (PatternKind::HeadSine { axis }, Channel::Pose) => {
            let main = Sine::jittered(rng, 0.2..0.4, 0.8..1.5);
            let wobble_a = Sine::jittered(rng, 0.004..0.008, 0.5..2.0);
            let wobble_b = Sine::jittered(rng, 0.004..0.008, 0.5..2.0);
            let jaw = Sine::jittered(rng, 0.002..0.006, 1.0..3.0);
            let frames = (0..n_frames)
                .map(|i| {
                    let t = i as f64 / fps;
                    let (main_v, wa, wb) = (main.at(t), wobble_a.at(t), wobble_b.at(t));
                    let (yaw, pitch, roll) = match axis {
                        HeadAxis::Yaw => (main_v, wa, wb),
                        HeadAxis::Pitch => (wa, main_v, wb),
                        HeadAxis::Roll => (wa, wb, main_v),
                    };
                    let head = yaw_pitch_roll_matrix(yaw, pitch, roll);
                    let jaw_m = rot_x(jaw.at(t).abs());
                    flame_to_pose_vec(&head, &jaw_m).to_vec()
                })
                .collect();
            FlameSequence::new(Channel::Pose, fps, frames)
        }
        (PatternKind::JawOscillation, Channel::Pose) => {
            let amp = rng.random_range(0.15..0.3);
            let freq = rng.random_range(2.0..4.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let wobble_y = Sine::jittered(rng, 0.003..0.007, 0.4..1.2);
            let wobble_p = Sine::jittered(rng, 0.003..0.007, 0.4..1.2);
            let frames = (0..n_frames)
                .map(|i| {
                    let t = i as f64 / fps;
                    // Jaw opens downward only: offset sine in [0, amp].
                    let jaw_angle = amp * (0.5 + 0.5 * (std::f64::consts::TAU * freq * t + phase).sin());
                    let head = yaw_pitch_roll_matrix(wobble_y.at(t), wobble_p.at(t), 0.0);
                    flame_to_pose_vec(&head, &rot_x(jaw_angle)).to_vec()
                })
                .collect();
            FlameSequence::new(Channel::Pose, fps, frames)
        }
        (PatternKind::ExprImpulse { dims }, Channel::Expr) => {
            let d = Channel::Expr.feature_dim();
            let amp = rng.random_range(0.8..1.6);
            let center = rng.random_range(0.3..0.7) * n_frames as f64;
            let width = rng.random_range(2.0..4.0);
            let frames = (0..n_frames)
                .map(|i| {
                    let mut f = vec![0.0; d];
                    let bump = amp * (-((i as f64 - center).powi(2)) / (2.0 * width * width)).exp();
                    for &dim in dims {
                        f[dim % d] = bump;
                    }
                    f
                })
                .collect();
            FlameSequence::new(Channel::Expr, fps, frames)
        }
        (PatternKind::ExprDrift { dims }, Channel::Expr) => {
            let d = Channel::Expr.feature_dim();
            let drift = Sine::jittered(rng, 0.4..0.8, 0.2..0.5);
            let frames = (0..n_frames)
                .map(|i| {
                    let mut f = vec![0.0; d];
                    let v = drift.at(i as f64 / fps);
                    for &dim in dims {
                        f[dim % d] = v;
                    }
                    f
                })
                .collect();
            FlameSequence::new(Channel::Expr, fps, frames)
        }
        (kind, channel) => Err(Error::InvalidArgument(format!(
            "pattern kind {kind:?} does not produce {channel:?} sequences"
        ))),
    }
}

struct Sine {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Sine {
    fn jittered(rng: &mut ChaCha8Rng, amp: std::ops::Range<f64>, freq: std::ops::Range<f64>) -> Self {
        Sine {
            amp: rng.random_range(amp),
            freq: rng.random_range(freq),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amp * (std::f64::consts::TAU * self.freq * t + self.phase).sin()
    }
}
