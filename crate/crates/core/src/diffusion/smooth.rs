//! Sliding-window smoothing of parameter sequences: per-channel centered
//! moving average. At the boundaries the window shrinks to the valid index
//! range instead of padding, which preserves the sequence mean.

use super::FlameSequence;
use crate::error::{Error, Result};

pub fn smooth(seq: &FlameSequence, window: usize) -> Result<FlameSequence> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    if window == 1 || seq.len() <= 1 {
        return Ok(seq.clone());
    }
    let n = seq.len();
    let d = seq.feature_dim();
    let half = window / 2;
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let count = (hi - lo + 1) as f64;
        for c in 0..d {
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += seq.data()[j * d + c];
            }
            out[i * d + c] = acc / count;
        }
    }
    FlameSequence::from_flat(seq.channel(), seq.fps(), out, n)
}
