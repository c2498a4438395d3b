//! Training losses. The main objective is the clean-signal reconstruction
//! `|f0 - DM(f_t, t, y)|^2` (mean over valid elements) plus a velocity term
//! penalizing mismatched first temporal differences, weighted by
//! `lambda_vel`. The epsilon parameterization (`|eps - eps_hat|^2`) is kept
//! as an alternative, with the algebraic conversion back to a clean-signal
//! prediction exposed for the sampler.
//!
//! Losses evaluate one sequence at a time; gradients flow through the whole
//! expression by reverse mode on the graph. Padded frames are masked out of
//! both terms, and velocity pairs straddling a pad boundary are dropped.

use super::model::{BoundNet, Cond, DenoiserNet};
use super::schedule::{q_sample, NoiseSchedule};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub simple: f64,
    pub velocity: f64,
}

/// One training example with its noise draw fixed by the caller, which keeps
/// the loss deterministic and finite-difference checkable. Classifier-free
/// guidance dropout is expressed by passing `Cond::Null`.
pub struct LossSample<'a> {
    /// Raw (unnormalized) clean sequence, `n_frames x feature_dim`.
    pub f0: &'a Tensor,
    /// Per-frame validity; `None` means every frame is valid.
    pub mask: Option<&'a [bool]>,
    pub cond: Cond<'a>,
    pub t: usize,
    pub eps: &'a Tensor,
}

impl LossSample<'_> {
    fn validate(&self, net: &DenoiserNet, sched: &NoiseSchedule) -> Result<(usize, usize)> {
        let d = net.config().feature_dim;
        let (n, fd) = match self.f0.shape() {
            [n, fd] => (*n, *fd),
            s => {
                return Err(Error::dim("loss f0", "(frames, features)", format!("{s:?}")));
            }
        };
        if fd != d {
            return Err(Error::dim("loss f0 width", d.to_string(), fd.to_string()));
        }
        if self.eps.shape() != self.f0.shape() {
            return Err(Error::dim(
                "loss eps",
                format!("{:?}", self.f0.shape()),
                format!("{:?}", self.eps.shape()),
            ));
        }
        if let Some(mask) = self.mask {
            if mask.len() != n {
                return Err(Error::dim("loss mask", n.to_string(), mask.len().to_string()));
            }
        }
        if self.t >= sched.len() {
            return Err(Error::InvalidArgument(format!(
                "step {} out of range for schedule of length {}",
                self.t,
                sched.len()
            )));
        }
        if !self.f0.all_finite() || !self.eps.all_finite() {
            return Err(Error::InvalidArgument("non-finite loss inputs".into()));
        }
        Ok((n, d))
    }
}

struct BuiltLoss {
    total: Var,
    simple: Var,
    velocity: Option<Var>,
    bound: BoundNet,
}

/// Assemble the loss graph for one sample. With `epsilon_target` the network
/// output is compared against the injected noise and the velocity term is
/// omitted; otherwise the target is the normalized clean sequence.
fn build_loss(
    g: &mut Graph,
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    s: &LossSample<'_>,
    lambda_vel: f64,
    epsilon_target: bool,
) -> Result<BuiltLoss> {
    let (n, d) = s.validate(net, sched)?;
    let f0n = net.norm().apply(s.f0);
    let f_t = q_sample(&f0n, s.t, s.eps, sched)?;

    let bound = net.bind(g);
    let f_t_var = g.input(f_t);
    let pred = net.forward_node(g, &bound, f_t_var, s.t, s.cond);

    let mask_data: Vec<bool> = match s.mask {
        Some(m) => m.to_vec(),
        None => vec![true; n],
    };
    let valid = mask_data.iter().filter(|&&b| b).count();
    if valid == 0 {
        return Err(Error::InvalidArgument("all frames masked out".into()));
    }
    let mask_var = g.input(Tensor::from_fn([n, d], |i| {
        if mask_data[i / d] {
            1.0
        } else {
            0.0
        }
    }));

    let target = if epsilon_target { s.eps.clone() } else { f0n.clone() };
    let target_var = g.input(target);
    let diff = g.sub(pred, target_var);
    let masked = g.mul(diff, mask_var);
    let sq = g.mul(masked, masked);
    let sum = g.sum_all(sq);
    let simple = g.scale(sum, 1.0 / (valid * d) as f64);

    // Velocity term: mean over valid frame pairs of the squared norm of the
    // difference of first differences. Defined as zero for N < 2.
    let velocity = if !epsilon_target && n >= 2 {
        let pair_mask: Vec<bool> = (0..n - 1).map(|i| mask_data[i] && mask_data[i + 1]).collect();
        let pairs = pair_mask.iter().filter(|&&b| b).count();
        if pairs > 0 {
            let head = g.slice(pred, 0, 1, n - 1);
            let tail = g.slice(pred, 0, 0, n - 1);
            let vel_pred = g.sub(head, tail);
            let vel_target_var = g.input(Tensor::from_fn([n - 1, d], |i| {
                let (r, c) = (i / d, i % d);
                f0n.data()[(r + 1) * d + c] - f0n.data()[r * d + c]
            }));
            let vdiff = g.sub(vel_pred, vel_target_var);
            let pmask_var = g.input(Tensor::from_fn([n - 1, d], |i| {
                if pair_mask[i / d] {
                    1.0
                } else {
                    0.0
                }
            }));
            let vmasked = g.mul(vdiff, pmask_var);
            let vsq = g.mul(vmasked, vmasked);
            let vsum = g.sum_all(vsq);
            Some(g.scale(vsum, 1.0 / pairs as f64))
        } else {
            None
        }
    } else {
        None
    };

    let total = match velocity {
        Some(v) => {
            let weighted = g.scale(v, lambda_vel);
            g.add(simple, weighted)
        }
        None => simple,
    };
    Ok(BuiltLoss {
        total,
        simple,
        velocity,
        bound,
    })
}

fn breakdown(g: &Graph, built: &BuiltLoss) -> LossBreakdown {
    LossBreakdown {
        total: g.value(built.total).item(),
        simple: g.value(built.simple).item(),
        velocity: built.velocity.map(|v| g.value(v).item()).unwrap_or(0.0),
    }
}

/// Combined loss value for one sample.
pub fn dm_loss(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    s: &LossSample<'_>,
    lambda_vel: f64,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let built = build_loss(&mut g, net, sched, s, lambda_vel, false)?;
    Ok(breakdown(&g, &built))
}

/// Combined loss and its gradient with respect to the flat parameter vector.
pub fn dm_loss_grad(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    s: &LossSample<'_>,
    lambda_vel: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut g = Graph::new();
    let built = build_loss(&mut g, net, sched, s, lambda_vel, false)?;
    let grads = g.backward(built.total);
    let flat = net.flat_grad(&grads, &built.bound);
    Ok((breakdown(&g, &built), flat))
}

/// Epsilon-prediction loss value.
pub fn eps_loss(net: &DenoiserNet, sched: &NoiseSchedule, s: &LossSample<'_>) -> Result<f64> {
    let mut g = Graph::new();
    let built = build_loss(&mut g, net, sched, s, 0.0, true)?;
    Ok(g.value(built.total).item())
}

/// Epsilon-prediction loss and flat-parameter gradient.
pub fn eps_loss_grad(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    s: &LossSample<'_>,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let built = build_loss(&mut g, net, sched, s, 0.0, true)?;
    let grads = g.backward(built.total);
    let flat = net.flat_grad(&grads, &built.bound);
    Ok((g.value(built.total).item(), flat))
}

/// Whole-batch loss in one graph: predictions run through the batched
/// forward pass and the per-sample normalizations are folded into weight
/// tensors, so the scalar equals the batch mean of per-sample losses (up to
/// float reassociation) at a fraction of the graph overhead.
pub(crate) struct BatchedLoss {
    pub total: Var,
    pub simple: Var,
    pub velocity: Option<Var>,
    pub bound: BoundNet,
}

pub(crate) fn build_batched_loss(
    g: &mut Graph,
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    items: &[LossSample<'_>],
    lambda_vel: f64,
    epsilon_target: bool,
) -> Result<BatchedLoss> {
    let b = items.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (n, d) = items[0].validate(net, sched)?;
    let mut f_t = Vec::with_capacity(b * n * d);
    let mut target = Vec::with_capacity(b * n * d);
    let mut weight = Vec::with_capacity(b * n * d);
    let mut vel_target = Vec::with_capacity(b * (n.saturating_sub(1)) * d);
    let mut vel_weight = Vec::with_capacity(b * (n.saturating_sub(1)) * d);
    let mut steps = Vec::with_capacity(b);
    let mut conds = Vec::with_capacity(b);
    let mut any_pairs = false;

    for item in items {
        let (ni, di) = item.validate(net, sched)?;
        if ni != n || di != d {
            return Err(Error::dim(
                "batched loss",
                format!("uniform ({n}, {d}) sequences"),
                format!("({ni}, {di})"),
            ));
        }
        let f0n = net.norm().apply(item.f0);
        let noisy = q_sample(&f0n, item.t, item.eps, sched)?;
        f_t.extend_from_slice(noisy.data());
        let mask: Vec<bool> = match item.mask {
            Some(m) => m.to_vec(),
            None => vec![true; n],
        };
        let valid = mask.iter().filter(|&&x| x).count();
        if valid == 0 {
            return Err(Error::InvalidArgument("all frames masked out".into()));
        }
        let w = 1.0 / (valid * d * b) as f64;
        for (i, &keep) in mask.iter().enumerate() {
            let row = if epsilon_target {
                &item.eps.data()[i * d..(i + 1) * d]
            } else {
                &f0n.data()[i * d..(i + 1) * d]
            };
            target.extend_from_slice(row);
            weight.extend(std::iter::repeat(if keep { w } else { 0.0 }).take(d));
        }
        if !epsilon_target && n >= 2 {
            let pair_mask: Vec<bool> = (0..n - 1).map(|i| mask[i] && mask[i + 1]).collect();
            let pairs = pair_mask.iter().filter(|&&x| x).count();
            let wp = if pairs > 0 { 1.0 / (pairs * b) as f64 } else { 0.0 };
            any_pairs |= pairs > 0;
            for (i, &keep) in pair_mask.iter().enumerate() {
                for c in 0..d {
                    vel_target.push(f0n.data()[(i + 1) * d + c] - f0n.data()[i * d + c]);
                }
                vel_weight.extend(std::iter::repeat(if keep { wp } else { 0.0 }).take(d));
            }
        }
        steps.push(item.t);
        conds.push(item.cond);
    }

    let bound = net.bind(g);
    let f_t_var = g.input(Tensor::new([b, n, d], f_t)?);
    let pred = net.forward_batch_node(g, &bound, f_t_var, &steps, &conds);

    let target_var = g.input(Tensor::new([b, n, d], target)?);
    let weight_var = g.input(Tensor::new([b, n, d], weight)?);
    let diff = g.sub(pred, target_var);
    let sq = g.mul(diff, diff);
    let weighted = g.mul(sq, weight_var);
    let simple = g.sum_all(weighted);

    let velocity = if !epsilon_target && n >= 2 && any_pairs {
        let head = g.slice(pred, 1, 1, n - 1);
        let tail = g.slice(pred, 1, 0, n - 1);
        let vel_pred = g.sub(head, tail);
        let vel_target_var = g.input(Tensor::new([b, n - 1, d], vel_target)?);
        let vel_weight_var = g.input(Tensor::new([b, n - 1, d], vel_weight)?);
        let vdiff = g.sub(vel_pred, vel_target_var);
        let vsq = g.mul(vdiff, vdiff);
        let vweighted = g.mul(vsq, vel_weight_var);
        Some(g.sum_all(vweighted))
    } else {
        None
    };

    let total = match velocity {
        Some(v) => {
            let scaled = g.scale(v, lambda_vel);
            g.add(simple, scaled)
        }
        None => simple,
    };
    Ok(BatchedLoss {
        total,
        simple,
        velocity,
        bound,
    })
}

/// Convert an epsilon prediction back to a clean-signal prediction:
/// `f0_hat = (f_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)`.
pub fn x0_from_eps(f_t: &Tensor, eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    if f_t.shape() != eps_hat.shape() {
        return Err(Error::dim(
            "x0_from_eps",
            format!("{:?}", f_t.shape()),
            format!("{:?}", eps_hat.shape()),
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
    let data = f_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(x, e)| (x - b * e) / a)
        .collect();
    Tensor::new(f_t.shape().to_vec(), data)
}
