//! Cosine noise schedule and the closed-form forward (noising) process.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-step `alpha_t` and cumulative `alpha_bar_t` for a T-step diffusion.
/// Index `t` in `0..T` refers to noising step `t+1`, so `alpha_bars[0]` is
/// close to 1 and `alpha_bars[T-1]` close to 0.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule: `alpha_bar(u) = f(u)/f(0)` with
    /// `f(u) = cos^2(((u + s) / (1 + s)) * pi/2)`, `s = 0.008`, discretized
    /// at `u = t/T` and clipped so every per-step alpha stays >= 0.001.
    pub fn cosine(t_steps: usize) -> Self {
        assert!(t_steps >= 1, "schedule needs at least one step");
        const S: f64 = 0.008;
        let f = |u: f64| (((u + S) / (1.0 + S)) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let mut alphas = Vec::with_capacity(t_steps);
        let mut alpha_bars = Vec::with_capacity(t_steps);
        let mut prev = 1.0;
        let mut cum = 1.0;
        for t in 1..=t_steps {
            let cur = f(t as f64 / t_steps as f64) / f0;
            let alpha = (cur / prev).clamp(0.001, 1.0 - f64::EPSILON);
            prev = cur;
            cum *= alpha;
            alphas.push(alpha);
            alpha_bars.push(cum);
        }
        NoiseSchedule { alphas, alpha_bars }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// Closed-form marginal of the noising process:
/// `f_t = sqrt(alpha_bar_t) * f0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn q_sample(f0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if f0.shape() != eps.shape() {
        return Err(Error::dim(
            "q_sample",
            format!("eps of shape {:?}", f0.shape()),
            format!("{:?}", eps.shape()),
        ));
    }
    if t >= sched.len() {
        return Err(Error::InvalidArgument(format!(
            "step {t} out of range for schedule of length {}",
            sched.len()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = f0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| a * x + b * e)
        .collect();
    Tensor::new(f0.shape().to_vec(), data)
}
