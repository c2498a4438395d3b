//! Parameter-space metrics: variability (mean per-frame absolute change of
//! the head yaw/pitch/roll angles, a proxy for motion expressiveness) and
//! the mean absolute difference between two parameter sequences.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Channel, FlameSequence};
use crate::error::{Error, Result};
use crate::flame::rotation::{matrix_to_yaw_pitch_roll, Rot6d};
use crate::flame::log_rotation;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VariabilityReport {
    /// Mean over the three angles, radians per frame.
    pub mean: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FlameL1Report {
    pub pose: Option<f64>,
    pub expr: Option<f64>,
    pub combined: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variability: Option<VariabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flame_l1: Option<FlameL1Report>,
}

impl MetricReport {
    /// Aligned plain-text rendering of the report.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, f64)> = Vec::new();
        if let Some(v) = &self.variability {
            rows.push(("variability.mean".into(), v.mean));
            rows.push(("variability.yaw".into(), v.yaw));
            rows.push(("variability.pitch".into(), v.pitch));
            rows.push(("variability.roll".into(), v.roll));
        }
        if let Some(l) = &self.flame_l1 {
            if let Some(p) = l.pose {
                rows.push(("flame_l1.pose".into(), p));
            }
            if let Some(e) = l.expr {
                rows.push(("flame_l1.expr".into(), e));
            }
            rows.push(("flame_l1.combined".into(), l.combined));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v:.9}\n"));
        }
        out
    }
}

/// Head yaw/pitch/roll per frame, decoded from the first 6D block of a pose
/// sequence (intrinsic yaw(Y)-pitch(X)-roll(Z) convention).
pub fn pose_angles(seq: &FlameSequence) -> Result<Vec<[f64; 3]>> {
    if seq.channel() != Channel::Pose {
        return Err(Error::InvalidArgument(
            "pose_angles needs a pose-channel sequence".into(),
        ));
    }
    let mut out = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        let frame = seq.frame(i);
        let head = Rot6d(frame[0..6].try_into().unwrap()).to_matrix()?;
        let (yaw, pitch, roll) = matrix_to_yaw_pitch_roll(&head);
        out.push([yaw, pitch, roll]);
    }
    Ok(out)
}

/// Total jaw rotation angle per frame (norm of the jaw block's axis-angle).
pub fn jaw_angles(seq: &FlameSequence) -> Result<Vec<f64>> {
    if seq.channel() != Channel::Pose {
        return Err(Error::InvalidArgument(
            "jaw_angles needs a pose-channel sequence".into(),
        ));
    }
    let mut out = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        let frame = seq.frame(i);
        let jaw = Rot6d(frame[6..12].try_into().unwrap()).to_matrix()?;
        let aa = log_rotation(&jaw);
        out.push((aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt());
    }
    Ok(out)
}

/// Mean absolute first difference per head angle (yaw, pitch, roll).
pub fn axis_variability(seq: &FlameSequence) -> Result<[f64; 3]> {
    if seq.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "variability needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    let angles = pose_angles(seq)?;
    let mut acc = [0.0; 3];
    for pair in angles.windows(2) {
        for a in 0..3 {
            acc[a] += (pair[1][a] - pair[0][a]).abs();
        }
    }
    let denom = (seq.len() - 1) as f64;
    Ok([acc[0] / denom, acc[1] / denom, acc[2] / denom])
}

/// Variability: mean of the per-axis values over yaw, pitch and roll.
pub fn variability(seq: &FlameSequence) -> Result<f64> {
    let [y, p, r] = axis_variability(seq)?;
    Ok((y + p + r) / 3.0)
}

pub fn variability_report(seq: &FlameSequence) -> Result<VariabilityReport> {
    let [yaw, pitch, roll] = axis_variability(seq)?;
    Ok(VariabilityReport {
        mean: (yaw + pitch + roll) / 3.0,
        yaw,
        pitch,
        roll,
    })
}

/// Mean absolute difference over all frames and channels of two equal-shape
/// sequences.
pub fn flame_l1(a: &FlameSequence, b: &FlameSequence) -> Result<f64> {
    if a.channel() != b.channel() || a.len() != b.len() {
        return Err(Error::dim(
            "flame_l1",
            format!("{:?} x {} frames", a.channel(), a.len()),
            format!("{:?} x {} frames", b.channel(), b.len()),
        ));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("flame_l1 on empty sequences".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Combined report for a pose/expression sequence pair.
pub fn flame_l1_report(
    pose: Option<(&FlameSequence, &FlameSequence)>,
    expr: Option<(&FlameSequence, &FlameSequence)>,
) -> Result<FlameL1Report> {
    let pose_l1 = pose.map(|(a, b)| flame_l1(a, b)).transpose()?;
    let expr_l1 = expr.map(|(a, b)| flame_l1(a, b)).transpose()?;
    let mut total = 0.0;
    let mut count = 0usize;
    if let Some((a, b)) = pose {
        total += a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();
        count += a.data().len();
    }
    if let Some((a, b)) = expr {
        total += a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();
        count += a.data().len();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("flame_l1_report needs at least one pair".into()));
    }
    Ok(FlameL1Report {
        pose: pose_l1,
        expr: expr_l1,
        combined: total / count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flame::flame_to_pose_vec;
    use crate::flame::rotation::yaw_pitch_roll_matrix;
    use crate::math::IDENTITY3;

    pub(crate) fn pose_seq_from_angles(angles: &[[f64; 3]]) -> FlameSequence {
        let frames = angles
            .iter()
            .map(|&[y, p, r]| {
                let head = yaw_pitch_roll_matrix(y, p, r);
                flame_to_pose_vec(&head, &IDENTITY3).to_vec()
            })
            .collect();
        FlameSequence::new(Channel::Pose, 30.0, frames).unwrap()
    }

    #[test]
    fn constant_sequence_has_zero_variability() {
        let seq = pose_seq_from_angles(&[[0.2, -0.1, 0.05]; 6]);
        assert_eq!(variability(&seq).unwrap(), 0.0);
    }

    #[test]
    fn linear_yaw_ramp_hand_computed() {
        let angles: Vec<[f64; 3]> = (0..10).map(|i| [0.02 * i as f64, 0.0, 0.0]).collect();
        let seq = pose_seq_from_angles(&angles);
        let v = variability(&seq).unwrap();
        assert!((v - 0.02 / 3.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn variability_invariant_to_constant_offset() {
        let base: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                let t = i as f64;
                [0.1 * (t * 0.9).sin(), 0.15 * (t * 1.3).cos(), 0.05 * (t * 0.4).sin()]
            })
            .collect();
        let offset: Vec<[f64; 3]> = base
            .iter()
            .map(|&[y, p, r]| [y + 0.3, p - 0.2, r + 0.1])
            .collect();
        let va = variability(&pose_seq_from_angles(&base)).unwrap();
        let vb = variability(&pose_seq_from_angles(&offset)).unwrap();
        assert!((va - vb).abs() < 1e-9, "{va} vs {vb}");
    }

    #[test]
    fn variability_needs_two_frames() {
        let seq = pose_seq_from_angles(&[[0.0; 3]]);
        assert!(variability(&seq).is_err());
    }

    #[test]
    fn flame_l1_basics() {
        let a = pose_seq_from_angles(&[[0.1, 0.0, 0.0]; 3]);
        assert_eq!(flame_l1(&a, &a).unwrap(), 0.0);

        let mut frames = Vec::new();
        for i in 0..3 {
            frames.push(a.frame(i).iter().map(|v| v + 0.5).collect::<Vec<f64>>());
        }
        let b = FlameSequence::new(Channel::Pose, 30.0, frames).unwrap();
        assert!((flame_l1(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_table_is_aligned() {
        let report = MetricReport {
            variability: Some(VariabilityReport {
                mean: 0.01,
                yaw: 0.02,
                pitch: 0.005,
                roll: 0.005,
            }),
            flame_l1: None,
        };
        let table = report.to_table();
        assert!(table.contains("variability.mean"));
        assert_eq!(table.lines().count(), 4);
    }
}
