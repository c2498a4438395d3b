//! Ancestral DDPM sampling in the clean-signal parameterization. Starting
//! from Gaussian noise, each step predicts `f0_hat = DM(f_t, t, y)` (with
//! classifier-free guidance combining the null and conditional predictions),
//! forms the standard posterior mean, and adds posterior noise until t = 0,
//! where the prediction itself is returned.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::loss::x0_from_eps;
use super::model::{Cond, DenoiserNet, Parameterization};
use super::schedule::NoiseSchedule;
use super::{Channel, FlameSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A clean-signal predictor; the trained net implements this, and tests can
/// substitute analytic predictors.
pub trait Denoiser: Sync {
    fn feature_dim(&self) -> usize;

    /// Predict the clean sequence from a noisy one at step `t` (both in the
    /// model's normalized space).
    fn predict_x0(&self, f_t: &Tensor, t: usize, cond: Cond<'_>, sched: &NoiseSchedule) -> Tensor;

    /// Batched form over `(batch, frames, features)`. Implementations must
    /// keep every slice bit-identical to a `predict_x0` call on that slice;
    /// the default does exactly that.
    fn predict_x0_batch(
        &self,
        f_t: &Tensor,
        t: usize,
        cond: Cond<'_>,
        sched: &NoiseSchedule,
    ) -> Tensor {
        let (b, n, d) = (f_t.shape()[0], f_t.shape()[1], f_t.shape()[2]);
        let mut out = Vec::with_capacity(b * n * d);
        for i in 0..b {
            let slice = Tensor::new([n, d], f_t.data()[i * n * d..(i + 1) * n * d].to_vec())
                .expect("slice shape");
            out.extend_from_slice(self.predict_x0(&slice, t, cond, sched).data());
        }
        Tensor::new([b, n, d], out).expect("batch shape")
    }
}

impl Denoiser for DenoiserNet {
    fn feature_dim(&self) -> usize {
        self.config().feature_dim
    }

    fn predict_x0(&self, f_t: &Tensor, t: usize, cond: Cond<'_>, sched: &NoiseSchedule) -> Tensor {
        let out = self.predict(f_t, t, cond);
        match self.config().parameterization {
            Parameterization::X0 => out,
            Parameterization::Epsilon => {
                x0_from_eps(f_t, &out, t, sched).expect("shapes match by construction")
            }
        }
    }

    fn predict_x0_batch(
        &self,
        f_t: &Tensor,
        t: usize,
        cond: Cond<'_>,
        sched: &NoiseSchedule,
    ) -> Tensor {
        let out = self.predict_batch(f_t, t, cond);
        match self.config().parameterization {
            Parameterization::X0 => out,
            Parameterization::Epsilon => {
                x0_from_eps(f_t, &out, t, sched).expect("shapes match by construction")
            }
        }
    }
}

fn gaussian(rng: &mut impl Rng, shape: [usize; 2]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample(StandardNormal))
}

/// Draw one sequence in the model's normalized space. With
/// `guidance_scale == 1` the null branch is skipped entirely, so the
/// trajectory is exactly the conditional-only one.
pub fn sample<D: Denoiser>(
    net: &D,
    cond: Cond<'_>,
    n_frames: usize,
    sched: &NoiseSchedule,
    guidance_scale: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be positive".into()));
    }
    if !(guidance_scale.is_finite() && guidance_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "guidance scale must be >= 0, got {guidance_scale}"
        )));
    }
    let d = net.feature_dim();
    let steps = sched.len();
    let mut f = gaussian(rng, [n_frames, d]);

    for t in (0..steps).rev() {
        let use_guidance = guidance_scale != 1.0 && matches!(cond, Cond::Tokens(_));
        let x0 = if use_guidance {
            let x_cond = net.predict_x0(&f, t, cond, sched);
            let x_null = net.predict_x0(&f, t, Cond::Null, sched);
            let data = x_null
                .data()
                .iter()
                .zip(x_cond.data())
                .map(|(n, c)| n + guidance_scale * (c - n))
                .collect();
            Tensor::new([n_frames, d], data)?
        } else {
            net.predict_x0(&f, t, cond, sched)
        };
        if t == 0 {
            return Ok(x0);
        }
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let alpha = sched.alpha(t);
        let beta = 1.0 - alpha;
        let one_m_ab = 1.0 - ab;
        let coef_x0 = ab_prev.sqrt() * beta / one_m_ab;
        let coef_ft = alpha.sqrt() * (1.0 - ab_prev) / one_m_ab;
        let sigma = ((1.0 - ab_prev) / one_m_ab * beta).sqrt();
        let noise = gaussian(rng, [n_frames, d]);
        let data = x0
            .data()
            .iter()
            .zip(f.data())
            .zip(noise.data())
            .map(|((x, ft), z)| coef_x0 * x + coef_ft * ft + sigma * z)
            .collect();
        f = Tensor::new([n_frames, d], data)?;
    }
    unreachable!("loop returns at t = 0");
}

/// Draw `count` independent sequences. Each chain draws its noise from its
/// own substream of the seed and chains are advanced together in batched
/// network evaluations, so the results are bit-identical to running
/// [`sample`] per chain on stream `i + 1` — whether or not chunks run in
/// parallel.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch<D: Denoiser>(
    net: &D,
    cond: Cond<'_>,
    count: usize,
    n_frames: usize,
    sched: &NoiseSchedule,
    guidance_scale: f64,
    seed: u64,
    parallel: bool,
) -> Result<Vec<Tensor>> {
    use rand::SeedableRng;
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be positive".into()));
    }
    if !(guidance_scale.is_finite() && guidance_scale >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "guidance scale must be >= 0, got {guidance_scale}"
        )));
    }
    const CHUNK: usize = 64;
    let d = net.feature_dim();
    let steps = sched.len();

    let run_chunk = |(chunk_idx, chunk_len): (usize, usize)| -> Result<Vec<Tensor>> {
        let b = chunk_len;
        let mut rngs: Vec<rand_chacha::ChaCha8Rng> = (0..b)
            .map(|i| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((chunk_idx * CHUNK + i) as u64 + 1);
                rng
            })
            .collect();
        let draw = |rngs: &mut [rand_chacha::ChaCha8Rng]| -> Vec<f64> {
            let mut data = Vec::with_capacity(b * n_frames * d);
            for rng in rngs.iter_mut() {
                for _ in 0..n_frames * d {
                    data.push(rng.sample(StandardNormal));
                }
            }
            data
        };
        let mut f = Tensor::new([b, n_frames, d], draw(&mut rngs))?;
        for t in (0..steps).rev() {
            let use_guidance = guidance_scale != 1.0 && matches!(cond, Cond::Tokens(_));
            let x0 = if use_guidance {
                let x_cond = net.predict_x0_batch(&f, t, cond, sched);
                let x_null = net.predict_x0_batch(&f, t, Cond::Null, sched);
                let data = x_null
                    .data()
                    .iter()
                    .zip(x_cond.data())
                    .map(|(n, c)| n + guidance_scale * (c - n))
                    .collect();
                Tensor::new([b, n_frames, d], data)?
            } else {
                net.predict_x0_batch(&f, t, cond, sched)
            };
            if t == 0 {
                f = x0;
                break;
            }
            let ab = sched.alpha_bar(t);
            let ab_prev = sched.alpha_bar(t - 1);
            let alpha = sched.alpha(t);
            let beta = 1.0 - alpha;
            let one_m_ab = 1.0 - ab;
            let coef_x0 = ab_prev.sqrt() * beta / one_m_ab;
            let coef_ft = alpha.sqrt() * (1.0 - ab_prev) / one_m_ab;
            let sigma = ((1.0 - ab_prev) / one_m_ab * beta).sqrt();
            let noise = draw(&mut rngs);
            let data = x0
                .data()
                .iter()
                .zip(f.data())
                .zip(&noise)
                .map(|((x, ft), z)| coef_x0 * x + coef_ft * ft + sigma * z)
                .collect();
            f = Tensor::new([b, n_frames, d], data)?;
        }
        Ok((0..b)
            .map(|i| {
                Tensor::new(
                    [n_frames, d],
                    f.data()[i * n_frames * d..(i + 1) * n_frames * d].to_vec(),
                )
                .expect("slice shape")
            })
            .collect())
    };

    let chunks: Vec<(usize, usize)> = (0..count.div_ceil(CHUNK))
        .map(|ci| (ci, CHUNK.min(count - ci * CHUNK)))
        .collect();
    let per_chunk: Vec<Vec<Tensor>> = if parallel {
        chunks.par_iter().copied().map(run_chunk).collect::<Result<_>>()?
    } else {
        chunks.iter().copied().map(run_chunk).collect::<Result<_>>()?
    };
    Ok(per_chunk.into_iter().flatten().collect())
}

impl DenoiserNet {
    /// Sample a sequence for a condition string (empty = unconditional),
    /// denormalized back to raw parameter values.
    pub fn generate(
        &self,
        text: &str,
        n_frames: usize,
        sched: &NoiseSchedule,
        guidance_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<FlameSequence> {
        let tokens;
        let cond = if text.trim().is_empty() {
            Cond::Null
        } else {
            tokens = self.tokens_for(text)?;
            Cond::Tokens(&tokens)
        };
        let normalized = sample(self, cond, n_frames, sched, guidance_scale, rng)?;
        let raw = self.norm().invert(&normalized);
        let channel = self.config().channel.or(match self.config().feature_dim {
            12 => Some(Channel::Pose),
            50 => Some(Channel::Expr),
            _ => None,
        });
        let channel = channel.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "cannot infer channel for feature dim {}",
                self.config().feature_dim
            ))
        })?;
        FlameSequence::from_tensor(channel, self.config().fps, &raw)
    }
}
