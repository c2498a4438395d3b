//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a flat tape of nodes built per evaluation; ops cover what
//! the denoiser and the attention kernels need (matmul in 2D and batched 3D
//! form, softmax, GELU, reshapes, gather, concat/slice, reductions). The
//! backward pass walks the tape in reverse and accumulates gradients for
//! every node, so gradients with respect to both parameters and inputs are
//! available.
//!
//! Shape errors here are programmer errors and panic; public library entry
//! points validate their arguments before building a graph.

use crate::tensor::{gemm_acc, gemm_acc_ta, gemm_acc_tb, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Gelu { a: Var },
    SoftmaxLast { a: Var },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    GatherRows { table: Var, rows: Vec<usize> },
    SumAll { a: Var },
    Attend { q: Var, k: Var, v: Var, scale: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, materializing zeros when the variable does not
    /// influence the loss.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.grads[v.0].as_ref() {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Shape bookkeeping for the matmul variants: 2D x 2D, batched 3D x 3D and
/// batched 3D with a shared 2D right-hand side.
struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_batched: bool,
}

fn matmul_dims(a: &[usize], b: &[usize], transpose_b: bool) -> MatDims {
    let (batch, m, k) = match a {
        [m, k] => (1, *m, *k),
        [bt, m, k] => (*bt, *m, *k),
        _ => panic!("matmul lhs must be 2D or 3D, got {:?}", a),
    };
    let (b_batch, bk, n, b_batched) = match (b, transpose_b) {
        ([k2, n], false) => (1, *k2, *n, false),
        ([n, k2], true) => (1, *k2, *n, false),
        ([bt, k2, n], false) => (*bt, *k2, *n, true),
        ([bt, n, k2], true) => (*bt, *k2, *n, true),
        _ => panic!("matmul rhs must be 2D or 3D, got {:?}", b),
    };
    assert_eq!(k, bk, "matmul inner dims differ: lhs {:?} rhs {:?}", a, b);
    if b_batched {
        assert_eq!(batch, b_batch, "matmul batch dims differ: lhs {:?} rhs {:?}", a, b);
        assert!(a.len() == 3, "batched rhs requires batched lhs");
    }
    MatDims {
        batch,
        m,
        k,
        n,
        b_batched,
    }
}

struct AttendDims {
    batch: usize,
    tq: usize,
    tk: usize,
    d: usize,
    dv: usize,
}

fn attend_dims(q: &[usize], k: &[usize], v: &[usize]) -> AttendDims {
    let (qb, tq, d) = match q {
        [t, d] => (1, *t, *d),
        [b, t, d] => (*b, *t, *d),
        _ => panic!("attend q must be 2D or 3D, got {:?}", q),
    };
    let (kb, tk, kd) = match k {
        [t, d] => (1, *t, *d),
        [b, t, d] => (*b, *t, *d),
        _ => panic!("attend k must be 2D or 3D, got {:?}", k),
    };
    let (vb, vt, dv) = match v {
        [t, d] => (1, *t, *d),
        [b, t, d] => (*b, *t, *d),
        _ => panic!("attend v must be 2D or 3D, got {:?}", v),
    };
    assert_eq!(q.len(), k.len(), "attend rank mismatch");
    assert_eq!(q.len(), v.len(), "attend rank mismatch");
    assert_eq!(qb, kb, "attend batch mismatch");
    assert_eq!(qb, vb, "attend batch mismatch");
    assert_eq!(d, kd, "attend feature mismatch");
    assert_eq!(tk, vt, "attend key/value token mismatch");
    assert!(tk > 0, "attend needs at least one key");
    AttendDims {
        batch: qb,
        tq,
        tk,
        d,
        dv,
    }
}

/// Order-invariant sum: sorting makes the result a function of the value
/// multiset only.
fn sorted_sum(vals: &mut [f64]) -> f64 {
    vals.sort_unstable_by(f64::total_cmp);
    vals.iter().sum()
}

fn attend_row_weights(qrow: &[f64], ks: &[f64], tk: usize, d: usize, scale: f64, w: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for j in 0..tk {
        let krow = &ks[j * d..(j + 1) * d];
        let mut dot = 0.0;
        for (a, b) in qrow.iter().zip(krow) {
            dot += a * b;
        }
        let logit = dot * scale;
        w[j] = logit;
        max = max.max(logit);
    }
    for x in w.iter_mut() {
        *x = (*x - max).exp();
    }
    let denom = sorted_sum(&mut w.to_vec());
    for x in w.iter_mut() {
        *x /= denom;
    }
}

#[allow(clippy::too_many_arguments)]
fn attend_forward(
    qs: &[f64],
    ks: &[f64],
    vs: &[f64],
    os: &mut [f64],
    tq: usize,
    tk: usize,
    d: usize,
    dv: usize,
    scale: f64,
) {
    let mut w = vec![0.0; tk];
    let mut products = vec![0.0; tk];
    for i in 0..tq {
        attend_row_weights(&qs[i * d..(i + 1) * d], ks, tk, d, scale, &mut w);
        for c in 0..dv {
            for j in 0..tk {
                products[j] = w[j] * vs[j * dv + c];
            }
            os[i * dv + c] = sorted_sum(&mut products);
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Move the value of `v` out of the graph (the graph is consumed).
    pub fn into_value(mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros([0]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T`; `b` is stored as `(n, k)` (or `(batch, n, k)`).
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let d = matmul_dims(av.shape(), bv.shape(), transpose_b);
        let out_shape: Vec<usize> = if av.ndim() == 3 {
            vec![d.batch, d.m, d.n]
        } else {
            vec![d.m, d.n]
        };
        let mut out = vec![0.0; d.batch * d.m * d.n];
        for t in 0..d.batch {
            let a_sl = &av.data()[t * d.m * d.k..(t + 1) * d.m * d.k];
            let b_sl = if d.b_batched {
                &bv.data()[t * d.k * d.n..(t + 1) * d.k * d.n]
            } else {
                bv.data()
            };
            let c_sl = &mut out[t * d.m * d.n..(t + 1) * d.m * d.n];
            if transpose_b {
                gemm_acc_tb(c_sl, a_sl, b_sl, d.m, d.k, d.n);
            } else {
                gemm_acc(c_sl, a_sl, b_sl, d.m, d.k, d.n);
            }
        }
        self.push(
            Tensor::new(out_shape, out).expect("matmul output shape"),
            Op::MatMul { a, b, transpose_b },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        self.push(
            Tensor::new(av.shape().to_vec(), data).unwrap(),
            Op::Add { a, b },
        )
    }

    /// Broadcast a vector over the last axis: `out[..., j] = a[..., j] + bias[j]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        assert_eq!(bv.ndim(), 1, "bias must be a vector");
        let n = bv.shape()[0];
        assert_eq!(*av.shape().last().unwrap(), n, "bias length mismatch");
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push(
            Tensor::new(av.shape().to_vec(), data).unwrap(),
            Op::AddBias { a, bias },
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        self.push(
            Tensor::new(av.shape().to_vec(), data).unwrap(),
            Op::Sub { a, b },
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        self.push(
            Tensor::new(av.shape().to_vec(), data).unwrap(),
            Op::Mul { a, b },
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = &self.nodes[a.0].value;
        self.push(av.map(|x| x * factor), Op::Scale { a, factor })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        self.push(av.map(gelu), Op::Gelu { a })
    }

    /// Numerically stabilized softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let n = *av.shape().last().expect("softmax needs at least 1 axis");
        assert!(n > 0, "softmax over empty axis");
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(
            Tensor::new(av.shape().to_vec(), data).unwrap(),
            Op::SoftmaxLast { a },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let av = &self.nodes[a.0].value;
        let value = av.clone().reshape(shape.into()).expect("reshape element count");
        self.push(value, Op::Reshape { a })
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        let value = av.permute(perm).expect("valid permutation");
        self.push(
            value,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        let ndim = first.len();
        assert!(axis < ndim);
        let mut axis_total = 0;
        for &p in parts {
            let s = self.nodes[p.0].value.shape();
            assert_eq!(s.len(), ndim, "concat rank mismatch");
            for d in 0..ndim {
                if d != axis {
                    assert_eq!(s[d], first[d], "concat dim {} mismatch", d);
                }
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let row = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            let pa = pv.shape()[axis];
            for o in 0..outer {
                let src = &pv.data()[o * pa * inner..(o + 1) * pa * inner];
                let dst = &mut data[o * row + offset..o * row + offset + pa * inner];
                dst.copy_from_slice(src);
            }
            offset += pa * inner;
        }
        self.push(
            Tensor::new(out_shape, data).unwrap(),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let av = &self.nodes[a.0].value;
        let shape = av.shape().to_vec();
        assert!(axis < shape.len());
        assert!(start + len <= shape[axis], "slice out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = &av.data()[(o * shape[axis] + start) * inner..(o * shape[axis] + start + len) * inner];
            data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        self.push(
            Tensor::new(out_shape, data).unwrap(),
            Op::Slice { a, axis, start },
        )
    }

    /// Row lookup into a 2D table with fixed (non-differentiable) indices.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let tv = &self.nodes[table.0].value;
        assert_eq!(tv.ndim(), 2, "gather_rows needs a 2D table");
        let (r, c) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            assert!(row < r, "gather row {} out of range {}", row, r);
            data.extend_from_slice(&tv.data()[row * c..(row + 1) * c]);
        }
        self.push(
            Tensor::new([rows.len(), c], data).unwrap(),
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { a })
    }

    /// Fused scaled-dot-product attention `softmax(q k^T * scale) v` whose
    /// token-axis reductions sum in value-sorted order. Reordering the
    /// key/value rows therefore reproduces the output bit for bit, which the
    /// permutation-equivariance contract of the view/temporal kernels needs.
    /// Shapes: `(tokens_q, d) x (tokens_k, d) x (tokens_k, d)` or the batched
    /// 3D versions with a shared batch axis.
    pub fn attend(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Var {
        let (qv, kv, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        let dims = attend_dims(qv.shape(), kv.shape(), vv.shape());
        let mut out_shape = qv.shape().to_vec();
        *out_shape.last_mut().unwrap() = dims.dv;
        let mut out = vec![0.0; dims.batch * dims.tq * dims.dv];
        for b in 0..dims.batch {
            let qs = &qv.data()[b * dims.tq * dims.d..(b + 1) * dims.tq * dims.d];
            let ks = &kv.data()[b * dims.tk * dims.d..(b + 1) * dims.tk * dims.d];
            let vs = &vv.data()[b * dims.tk * dims.dv..(b + 1) * dims.tk * dims.dv];
            let os = &mut out[b * dims.tq * dims.dv..(b + 1) * dims.tq * dims.dv];
            attend_forward(qs, ks, vs, os, dims.tq, dims.tk, dims.d, dims.dv, scale);
        }
        self.push(
            Tensor::new(out_shape, out).unwrap(),
            Op::Attend { q, k, v, scale },
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            // Re-store; other consumers may still accumulate into it.
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::MatMul { a, b, transpose_b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let d = matmul_dims(av.shape(), bv.shape(), *transpose_b);
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; bv.len()];
                    for t in 0..d.batch {
                        let g = &grad.data()[t * d.m * d.n..(t + 1) * d.m * d.n];
                        let a_sl = &av.data()[t * d.m * d.k..(t + 1) * d.m * d.k];
                        let (b_sl, db_sl) = if d.b_batched {
                            (
                                &bv.data()[t * d.k * d.n..(t + 1) * d.k * d.n],
                                t * d.k * d.n,
                            )
                        } else {
                            (bv.data(), 0)
                        };
                        let da_sl = &mut da[t * d.m * d.k..(t + 1) * d.m * d.k];
                        let db_sl = &mut db[db_sl..db_sl + d.k * d.n];
                        if *transpose_b {
                            // C = A @ B^T, B stored (n, k)
                            gemm_acc(da_sl, g, b_sl, d.m, d.n, d.k);
                            gemm_acc_ta(db_sl, g, a_sl, d.m, d.n, d.k);
                        } else {
                            gemm_acc_tb(da_sl, g, b_sl, d.m, d.n, d.k);
                            gemm_acc_ta(db_sl, a_sl, g, d.m, d.k, d.n);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                    accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad.clone());
                }
                Op::AddBias { a, bias } => {
                    let n = self.nodes[bias.0].value.shape()[0];
                    let mut dbias = vec![0.0; n];
                    for row in grad.data().chunks(n) {
                        for (d, g) in dbias.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *bias, Tensor::new([n], dbias).unwrap());
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad.map(|x| -x));
                }
                Op::Mul { a, b } => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = &self.nodes[b.0].value;
                    let da: Vec<f64> = grad.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = grad.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                    accumulate(&mut grads, *b, Tensor::new(av.shape().to_vec(), db).unwrap());
                }
                Op::Scale { a, factor } => {
                    let f = *factor;
                    accumulate(&mut grads, *a, grad.map(|x| x * f));
                }
                Op::Gelu { a } => {
                    let av = &self.nodes[a.0].value;
                    let da: Vec<f64> = grad
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(g, &x)| g * gelu_grad(x))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                Op::SoftmaxLast { a } => {
                    // dx = y * (dy - sum(dy * y)) per row, y = saved output
                    let y = &node.value;
                    let n = *y.shape().last().unwrap();
                    let mut da = vec![0.0; y.len()];
                    for ((drow, yrow), grow) in da
                        .chunks_mut(n)
                        .zip(y.data().chunks(n))
                        .zip(grad.data().chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, v)| g * v).sum();
                        for ((d, &g), &v) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = v * (g - dot);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), da).unwrap());
                }
                Op::Reshape { a } => {
                    let src_shape = self.nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads, *a, grad.clone().reshape(src_shape).unwrap());
                }
                Op::Permute { a, perm } => {
                    let mut inv = vec![0usize; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    accumulate(&mut grads, *a, grad.permute(&inv).unwrap());
                }
                Op::Concat { parts, axis } => {
                    let out_shape = node.value.shape();
                    let outer: usize = out_shape[..*axis].iter().product();
                    let inner: usize = out_shape[*axis + 1..].iter().product();
                    let row = out_shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let ps = self.nodes[p.0].value.shape().to_vec();
                        let pa = ps[*axis];
                        let mut dp = vec![0.0; outer * pa * inner];
                        for o in 0..outer {
                            let src = &grad.data()[o * row + offset..o * row + offset + pa * inner];
                            dp[o * pa * inner..(o + 1) * pa * inner].copy_from_slice(src);
                        }
                        accumulate(&mut grads, p, Tensor::new(ps, dp).unwrap());
                        offset += pa * inner;
                    }
                }
                Op::Slice { a, axis, start } => {
                    let src_shape = self.nodes[a.0].value.shape().to_vec();
                    let len = node.value.shape()[*axis];
                    let outer: usize = src_shape[..*axis].iter().product();
                    let inner: usize = src_shape[*axis + 1..].iter().product();
                    let mut da = vec![0.0; self.nodes[a.0].value.len()];
                    for o in 0..outer {
                        let dst = &mut da[(o * src_shape[*axis] + start) * inner
                            ..(o * src_shape[*axis] + start + len) * inner];
                        let src = &grad.data()[o * len * inner..(o + 1) * len * inner];
                        for (d, g) in dst.iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(src_shape, da).unwrap());
                }
                Op::GatherRows { table, rows } => {
                    let tv = &self.nodes[table.0].value;
                    let c = tv.shape()[1];
                    let mut dt = vec![0.0; tv.len()];
                    for (i, &row) in rows.iter().enumerate() {
                        let src = &grad.data()[i * c..(i + 1) * c];
                        let dst = &mut dt[row * c..(row + 1) * c];
                        for (d, g) in dst.iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *table, Tensor::new(tv.shape().to_vec(), dt).unwrap());
                }
                Op::SumAll { a } => {
                    let g = grad.item();
                    let av = &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, Tensor::filled(av.shape().to_vec(), g));
                }
                Op::Attend { q, k, v, scale } => {
                    let qv = &self.nodes[q.0].value;
                    let kv = &self.nodes[k.0].value;
                    let vv = &self.nodes[v.0].value;
                    let dims = attend_dims(qv.shape(), kv.shape(), vv.shape());
                    let mut dq = vec![0.0; qv.len()];
                    let mut dk = vec![0.0; kv.len()];
                    let mut dv_acc = vec![0.0; vv.len()];
                    let mut w = vec![0.0; dims.tk];
                    let mut ds = vec![0.0; dims.tk];
                    for b in 0..dims.batch {
                        let qs = &qv.data()[b * dims.tq * dims.d..(b + 1) * dims.tq * dims.d];
                        let ks = &kv.data()[b * dims.tk * dims.d..(b + 1) * dims.tk * dims.d];
                        let vs = &vv.data()[b * dims.tk * dims.dv..(b + 1) * dims.tk * dims.dv];
                        let gy = &grad.data()[b * dims.tq * dims.dv..(b + 1) * dims.tq * dims.dv];
                        let dq_b = &mut dq[b * dims.tq * dims.d..(b + 1) * dims.tq * dims.d];
                        let dk_b = &mut dk[b * dims.tk * dims.d..(b + 1) * dims.tk * dims.d];
                        let dv_b = &mut dv_acc[b * dims.tk * dims.dv..(b + 1) * dims.tk * dims.dv];
                        for i in 0..dims.tq {
                            let qrow = &qs[i * dims.d..(i + 1) * dims.d];
                            let gyrow = &gy[i * dims.dv..(i + 1) * dims.dv];
                            attend_row_weights(qrow, ks, dims.tk, dims.d, *scale, &mut w);
                            // dW[i,j] = sum_c dY[i,c] * V[j,c]; dV += W^T dY
                            let mut dot_dw_w = 0.0;
                            for j in 0..dims.tk {
                                let vrow = &vs[j * dims.dv..(j + 1) * dims.dv];
                                let mut dw = 0.0;
                                for (gyc, vc) in gyrow.iter().zip(vrow) {
                                    dw += gyc * vc;
                                }
                                ds[j] = dw;
                                dot_dw_w += dw * w[j];
                                let dvrow = &mut dv_b[j * dims.dv..(j + 1) * dims.dv];
                                for (dvc, gyc) in dvrow.iter_mut().zip(gyrow) {
                                    *dvc += w[j] * gyc;
                                }
                            }
                            // softmax backward and score gradients
                            for j in 0..dims.tk {
                                let dsj = w[j] * (ds[j] - dot_dw_w) * scale;
                                let krow = &ks[j * dims.d..(j + 1) * dims.d];
                                let dqrow = &mut dq_b[i * dims.d..(i + 1) * dims.d];
                                for (dqc, kc) in dqrow.iter_mut().zip(krow) {
                                    *dqc += dsj * kc;
                                }
                                let dkrow = &mut dk_b[j * dims.d..(j + 1) * dims.d];
                                for (dkc, qc) in dkrow.iter_mut().zip(qrow) {
                                    *dkc += dsj * qc;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, Tensor::new(qv.shape().to_vec(), dq).unwrap());
                    accumulate(&mut grads, *k, Tensor::new(kv.shape().to_vec(), dk).unwrap());
                    accumulate(&mut grads, *v, Tensor::new(vv.shape().to_vec(), dv_acc).unwrap());
                }
            }
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), g.shape());
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences through an arbitrary graph-building closure.
    fn fd_check(build: impl Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor], tol: f64) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss);

        let h = 1e-5;
        for (ti, t) in inputs.iter().enumerate() {
            let analytic = grads.wrt_or_zeros(vars[ti], t.shape());
            for e in 0..t.len() {
                let eval = |delta: f64| -> f64 {
                    let mut mod_inputs = inputs.to_vec();
                    mod_inputs[ti].data_mut()[e] += delta;
                    let mut g2 = Graph::new();
                    let vars2: Vec<Var> = mod_inputs.iter().map(|t| g2.input(t.clone())).collect();
                    let loss2 = build(&mut g2, &vars2);
                    g2.value(loss2).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[e];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "input {} elem {}: analytic {} vs fd {}",
                    ti,
                    e,
                    a,
                    fd
                );
            }
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        fd_check(
            |g, vars| {
                let c = g.matmul(vars[0], vars[1]);
                let sq = g.mul(c, c);
                g.sum_all(sq)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn matmul_batched_and_transposed_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, &[2, 3, 4]);
        let b = rand_tensor(&mut rng, &[2, 5, 4]);
        fd_check(
            |g, vars| {
                let c = g.matmul_tb(vars[0], vars[1]); // 2x3x5
                let sm = g.softmax_last(c);
                let sq = g.mul(sm, sm);
                g.sum_all(sq)
            },
            &[a, b],
            1e-6,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, &[2, 3, 4]);
        let b = rand_tensor(&mut rng, &[4, 5]);
        fd_check(
            |g, vars| {
                let c = g.matmul(vars[0], vars[1]);
                let gl = g.gelu(c);
                g.sum_all(gl)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn composite_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let bias = rand_tensor(&mut rng, &[4]);
        let table = rand_tensor(&mut rng, &[5, 4]);
        fd_check(
            |g, vars| {
                let (x, bias, table) = (vars[0], vars[1], vars[2]);
                let picked = g.gather_rows(table, &[1, 4, 1]);
                let xb = g.add_bias(x, bias);
                let joined = g.concat(&[xb, picked], 0); // 6x4
                let part = g.slice(joined, 0, 1, 4);
                let resh = g.reshape(part, vec![2, 2, 4]);
                let perm = g.permute(resh, &[1, 0, 2]);
                let diff = g.sub(perm, perm);
                let s = g.add(perm, diff);
                let sc = g.scale(s, 1.7);
                let sq = g.mul(sc, sc);
                g.mean_all(sq)
            },
            &[x, bias, table],
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[7, 9]);
        let mut g = Graph::new();
        let v = g.input(x);
        let s = g.softmax_last(v);
        for row in g.value(s).data().chunks(9) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum((x + x) * x) = sum(2 x^2), dloss/dx = 4x
        let x = Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let two_x = g.add(v, v);
        let prod = g.mul(two_x, v);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        let gx = grads.wrt(v).unwrap();
        for (gi, xi) in gx.data().iter().zip(x.data()) {
            assert!((gi - 4.0 * xi).abs() < 1e-12);
        }
    }
}
