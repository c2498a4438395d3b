//! The training loop. Deterministic under a fixed seed: all randomness
//! (batch indices, timesteps, noise, guidance dropout) is drawn from one
//! seeded stream *before* gradients are evaluated, so the optional parallel
//! batch evaluation reduces per-sample gradients in index order and produces
//! bit-identical parameters to the sequential path.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::dataset::Dataset;
use super::loss::{dm_loss_grad, eps_loss_grad, LossBreakdown, LossSample};
use super::model::{Cond, DenoiserConfig, DenoiserNet, Normalization, Parameterization};
use super::schedule::NoiseSchedule;
use super::smooth::smooth;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lambda_vel: f64,
    pub max_frames: usize,
    pub cfg_drop_prob: f64,
    pub seed: u64,
    /// Diffusion step count for the cosine schedule.
    pub diffusion_steps: usize,
    pub layers: usize,
    pub latent_dim: usize,
    pub ff_dim: usize,
    /// Sliding-window smoothing applied to the training data (1 disables).
    pub smooth_window: usize,
    /// Fit per-feature normalization on the corpus.
    pub normalize: bool,
    /// Evaluate per-sample gradients on the rayon pool. The reduction order
    /// is fixed, so results are bit-identical to the sequential path.
    pub parallel: bool,
    pub parameterization: Parameterization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch: 64,
            lr: 1e-4,
            lambda_vel: 0.5,
            max_frames: 30,
            cfg_drop_prob: 0.1,
            seed: 0,
            diffusion_steps: 1000,
            layers: 1,
            latent_dim: 64,
            ff_dim: 128,
            smooth_window: 3,
            normalize: true,
            parallel: false,
            parameterization: Parameterization::X0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("steps", self.steps),
            ("batch", self.batch),
            ("max_frames", self.max_frames),
            ("diffusion_steps", self.diffusion_steps),
            ("layers", self.layers),
            ("latent_dim", self.latent_dim),
            ("ff_dim", self.ff_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("TrainConfig.{name} must be positive")));
            }
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(self.lambda_vel.is_finite() && self.lambda_vel >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda_vel must be >= 0, got {}",
                self.lambda_vel
            )));
        }
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return Err(Error::InvalidArgument(format!(
                "cfg_drop_prob must be in [0, 1], got {}",
                self.cfg_drop_prob
            )));
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "smooth_window must be odd, got {}",
                self.smooth_window
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainRecord {
    pub loss: Vec<f64>,
    pub simple: Vec<f64>,
    pub velocity: Vec<f64>,
}

struct PreparedItem {
    tokens: Vec<usize>,
    frames: Tensor,
    mask: Vec<bool>,
}

/// Pad or truncate to `max_frames`; padded frames are zero and masked out.
fn prepare_item(seq: &Tensor, max_frames: usize) -> (Tensor, Vec<bool>) {
    let (n, d) = (seq.shape()[0], seq.shape()[1]);
    let keep = n.min(max_frames);
    let mut data = vec![0.0; max_frames * d];
    data[..keep * d].copy_from_slice(&seq.data()[..keep * d]);
    let mut mask = vec![false; max_frames];
    for m in mask.iter_mut().take(keep) {
        *m = true;
    }
    (Tensor::new([max_frames, d], data).unwrap(), mask)
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Train a denoiser on a labeled corpus; returns the net and the loss curve.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(DenoiserNet, TrainRecord)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let channel = data.channel()?;
    let d = channel.feature_dim();
    let vocab = data.labels();
    let fps = data.items[0].seq.fps();

    let mut net_config = DenoiserConfig::new(d, vocab);
    net_config.latent_dim = cfg.latent_dim;
    net_config.layers = cfg.layers;
    net_config.ff_dim = cfg.ff_dim;
    net_config.parameterization = cfg.parameterization;
    net_config.channel = Some(channel);
    net_config.fps = fps;
    let mut net = DenoiserNet::new(net_config, cfg.seed)?;

    // Data prep: smoothing, padding, token resolution.
    let mut prepared = Vec::with_capacity(data.len());
    for item in &data.items {
        let smoothed = smooth(&item.seq, cfg.smooth_window)?;
        let (frames, mask) = prepare_item(&smoothed.to_tensor(), cfg.max_frames);
        let tokens = net.tokens_for(&item.text)?;
        prepared.push(PreparedItem {
            tokens,
            frames,
            mask,
        });
    }

    if cfg.normalize {
        let rows = prepared.iter().flat_map(|p| {
            p.mask
                .iter()
                .enumerate()
                .filter(|(_, &keep)| keep)
                .map(move |(i, _)| &p.frames.data()[i * d..(i + 1) * d])
        });
        // Normalization::fit wants a cloneable iterator; collect first.
        let collected: Vec<&[f64]> = rows.collect();
        net.set_norm(Normalization::fit(collected.iter().copied(), d));
    }

    let sched = NoiseSchedule::cosine(cfg.diffusion_steps);
    let mut adam = Adam::new(net.param_count(), cfg.lr);
    let mut record = TrainRecord::default();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xDA7A);

    struct Draw {
        item: usize,
        t: usize,
        eps: Tensor,
        use_null: bool,
    }

    for step in 0..cfg.steps {
        // Fixed draw order, independent of evaluation strategy.
        let draws: Vec<Draw> = (0..cfg.batch)
            .map(|_| {
                let item = rng.random_range(0..prepared.len());
                let t = rng.random_range(0..sched.len());
                let eps = Tensor::from_fn([cfg.max_frames, d], |_| rng.sample(StandardNormal));
                let use_null = rng.random::<f64>() < cfg.cfg_drop_prob;
                Draw {
                    item,
                    t,
                    eps,
                    use_null,
                }
            })
            .collect();

        let eval = |draw: &Draw| -> Result<(LossBreakdown, Vec<f64>)> {
            let p = &prepared[draw.item];
            let cond = if draw.use_null {
                Cond::Null
            } else {
                Cond::Tokens(&p.tokens)
            };
            let sample = LossSample {
                f0: &p.frames,
                mask: Some(&p.mask),
                cond,
                t: draw.t,
                eps: &draw.eps,
            };
            match cfg.parameterization {
                Parameterization::X0 => dm_loss_grad(&net, &sched, &sample, cfg.lambda_vel),
                Parameterization::Epsilon => {
                    let (loss, grad) = eps_loss_grad(&net, &sched, &sample)?;
                    Ok((
                        LossBreakdown {
                            total: loss,
                            simple: loss,
                            velocity: 0.0,
                        },
                        grad,
                    ))
                }
            }
        };

        let (losses, grad) = if cfg.parallel {
            // Data-parallel per-sample gradients, reduced in index order.
            // This differs from the batched path only by float
            // reassociation.
            let results: Vec<(LossBreakdown, Vec<f64>)> =
                draws.par_iter().map(eval).collect::<Result<_>>()?;
            let mut grad = vec![0.0; net.param_count()];
            let mut losses = LossBreakdown::default();
            for (bd, g) in &results {
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += x;
                }
                losses.total += bd.total;
                losses.simple += bd.simple;
                losses.velocity += bd.velocity;
            }
            let inv = 1.0 / cfg.batch as f64;
            for g in grad.iter_mut() {
                *g *= inv;
            }
            losses.total *= inv;
            losses.simple *= inv;
            losses.velocity *= inv;
            (losses, grad)
        } else {
            // Single-threaded: the whole batch in one graph; the per-sample
            // weighting already averages over the batch.
            let samples: Vec<LossSample<'_>> = draws
                .iter()
                .map(|draw| {
                    let p = &prepared[draw.item];
                    LossSample {
                        f0: &p.frames,
                        mask: Some(&p.mask),
                        cond: if draw.use_null {
                            Cond::Null
                        } else {
                            Cond::Tokens(&p.tokens)
                        },
                        t: draw.t,
                        eps: &draw.eps,
                    }
                })
                .collect();
            let mut g = crate::autodiff::Graph::new();
            let built = super::loss::build_batched_loss(
                &mut g,
                &net,
                &sched,
                &samples,
                cfg.lambda_vel,
                matches!(cfg.parameterization, Parameterization::Epsilon),
            )?;
            let grads = g.backward(built.total);
            let grad = net.flat_grad(&grads, &built.bound);
            let losses = LossBreakdown {
                total: g.value(built.total).item(),
                simple: g.value(built.simple).item(),
                velocity: built.velocity.map(|v| g.value(v).item()).unwrap_or(0.0),
            };
            (losses, grad)
        };

        if !losses.total.is_finite() {
            return Err(Error::TrainDiverged { step });
        }

        adam.step(net.params_mut(), &grad);
        record.loss.push(losses.total);
        record.simple.push(losses.simple);
        record.velocity.push(losses.velocity);
    }

    Ok((net, record))
}
