//! Diffusion over FLAME parameter sequences: the cosine noise schedule and
//! forward process, a small encoder-transformer denoiser trained with the
//! clean-signal + velocity loss (or the epsilon parameterization), ancestral
//! sampling with classifier-free guidance, and sliding-window smoothing.
//!
//! Pose and expression are handled by independent model instances over
//! 12-dim (head + jaw 6D pose) and 50-dim (expression) frames respectively.

mod checkpoint;
mod dataset;
mod loss;
mod model;
mod sample;
mod schedule;
mod smooth;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, DMCK_VERSION};
pub use dataset::{Dataset, DatasetItem};
pub use loss::{dm_loss, dm_loss_grad, eps_loss, eps_loss_grad, x0_from_eps, LossBreakdown, LossSample};
pub use model::{Cond, DenoiserConfig, DenoiserNet, Normalization, ParamView, Parameterization};
pub use sample::{sample, sample_batch, Denoiser};
pub use schedule::{q_sample, NoiseSchedule};
pub use smooth::smooth;
pub use train::{train, TrainConfig, TrainRecord};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FSEQ_VERSION: &str = "fseq-v1";

/// Which FLAME parameter block a sequence carries. The pose channel packs the
/// head and jaw rotations as two 6D blocks (12 floats); the expression
/// channel carries 50 expression coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Pose,
    Expr,
}

impl Channel {
    pub fn feature_dim(self) -> usize {
        match self {
            Channel::Pose => 12,
            Channel::Expr => 50,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Pose => "pose",
            Channel::Expr => "expr",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose" => Ok(Channel::Pose),
            "expr" => Ok(Channel::Expr),
            other => Err(Error::InvalidArgument(format!(
                "unknown channel {other:?}, expected \"pose\" or \"expr\""
            ))),
        }
    }
}

/// A length-N sequence of per-frame parameter vectors for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FlameSequence {
    channel: Channel,
    fps: f64,
    /// Row-major `n_frames x feature_dim`.
    data: Vec<f64>,
    n_frames: usize,
}

impl FlameSequence {
    pub fn new(channel: Channel, fps: f64, frames: Vec<Vec<f64>>) -> Result<Self> {
        let d = channel.feature_dim();
        let mut data = Vec::with_capacity(frames.len() * d);
        for (i, frame) in frames.iter().enumerate() {
            if frame.len() != d {
                return Err(Error::dim(
                    format!("FlameSequence frame {i}"),
                    d.to_string(),
                    frame.len().to_string(),
                ));
            }
            data.extend_from_slice(frame);
        }
        Self::from_flat(channel, fps, data, frames.len())
    }

    pub fn from_flat(channel: Channel, fps: f64, data: Vec<f64>, n_frames: usize) -> Result<Self> {
        if data.len() != n_frames * channel.feature_dim() {
            return Err(Error::dim(
                "FlameSequence",
                format!("{} values", n_frames * channel.feature_dim()),
                data.len().to_string(),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sequence values".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        Ok(FlameSequence {
            channel,
            fps,
            data,
            n_frames,
        })
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.channel.feature_dim()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.n_frames, self.feature_dim()], self.data.clone()).expect("consistent")
    }

    pub fn from_tensor(channel: Channel, fps: f64, t: &Tensor) -> Result<Self> {
        if t.ndim() != 2 || t.shape()[1] != channel.feature_dim() {
            return Err(Error::dim(
                "FlameSequence::from_tensor",
                format!("(n, {})", channel.feature_dim()),
                format!("{:?}", t.shape()),
            ));
        }
        Self::from_flat(channel, fps, t.data().to_vec(), t.shape()[0])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let d = self.feature_dim();
        let file = FseqFile {
            version: FSEQ_VERSION.to_string(),
            channel: self.channel,
            fps: self.fps,
            frames: (0..self.n_frames)
                .map(|i| self.data[i * d..(i + 1) * d].to_vec())
                .collect(),
        };
        let bytes = serde_json::to_vec_pretty(&file).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: FseqFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        if file.version != FSEQ_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported version {:?}", file.version),
            });
        }
        FlameSequence::new(file.channel, file.fps, file.frames)
    }
}

#[derive(Serialize, Deserialize)]
struct FseqFile {
    version: String,
    channel: Channel,
    fps: f64,
    frames: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.fseq.json");
        let seq = FlameSequence::new(
            Channel::Pose,
            30.0,
            vec![vec![0.25; 12], vec![-0.5; 12], vec![1.0; 12]],
        )
        .unwrap();
        seq.save(&path).unwrap();
        let loaded = FlameSequence::load(&path).unwrap();
        assert_eq!(loaded, seq);
    }

    #[test]
    fn frame_width_is_enforced() {
        assert!(FlameSequence::new(Channel::Pose, 30.0, vec![vec![0.0; 11]]).is_err());
        assert!(FlameSequence::new(Channel::Expr, 30.0, vec![vec![0.0; 50]]).is_ok());
    }
}
