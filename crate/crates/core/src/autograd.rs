//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is built fresh for each forward pass. Nodes are appended in
//! creation order, which is also a valid topological order, so the backward
//! sweep simply walks the tape in reverse.

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::{numel, strides, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2`; requires odd kernels.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Broadcast { kind: BinKind, a: Var, b: Var },
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Sigmoid(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    ReduceMean { x: Var, axes: Vec<usize> },
    Sum(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    TemporalDiff(Var),
    RepeatInterleave { x: Var, axis: usize, repeats: usize },
    Concat { a: Var, b: Var, axis: usize },
    CrossEntropy { logits: Var, labels: Vec<usize> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op,
    saved: Vec<Tensor<F>>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient of `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Graph<F: Real = f32> {
    nodes: Vec<Node<F>>,
    record: bool,
    relu_signature: u64,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn outer_mid_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl<F: Real> Graph<F> {
    /// A recording graph: ops on values that require gradients are taped.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            record: true,
            relu_signature: FNV_OFFSET,
        }
    }

    /// A graph that never tapes; used for evaluation.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of the sign pattern of every relu input seen so far. Two forward
    /// passes with equal signatures lie on the same linear piece of every relu.
    pub fn relu_signature(&self) -> u64 {
        self.relu_signature
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        let requires_grad = self.record;
        self.leaf(t, requires_grad)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            saved: Vec::new(),
            requires_grad: requires_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<F>, op: Op, saved: Vec<Tensor<F>>, inputs: &[Var]) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let (op, saved) = if requires_grad { (op, saved) } else { (Op::Leaf, Vec::new()) };
        self.nodes.push(Node {
            value,
            op,
            saved,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), vec![], &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), vec![], &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), vec![], &[a, b]))
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(Error::shape(op, sa, sb));
        }
        sa.iter()
            .zip(sb)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, y) => Ok(y),
                (x, 1) => Ok(x),
                _ => Err(Error::shape(op, sa, sb)),
            })
            .collect()
    }

    fn broadcast(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinKind::Add => "broadcast_add",
            BinKind::Mul => "broadcast_mul",
        };
        let out_shape = self.broadcast_shape(name, a, b)?;
        let sa = kernels::broadcast_strides(self.shape(a), &out_shape);
        let sb = kernels::broadcast_strides(self.shape(b), &out_shape);
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![F::zero(); numel(&out_shape)];
        kernels::walk2(&out_shape, &sa, &sb, |i, ia, ib| {
            out[i] = match kind {
                BinKind::Add => x[ia] + y[ib],
                BinKind::Mul => x[ia] * y[ib],
            }
        });
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Broadcast { kind, a, b },
            vec![],
            &[a, b],
        ))
    }

    /// Elementwise product where either operand may have extent 1 on any axis
    /// (same rank required), e.g. masks `(N,T,1,H,W)` or `(N,T,C,1,1)`
    /// against `(N,T,C,H,W)`.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast(BinKind::Mul, a, b)
    }

    /// Elementwise sum with the same broadcasting rule as [`Graph::mul_bcast`].
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast(BinKind::Add, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let k = F::lit(s);
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, s), vec![], &[a])
    }

    /// Adds `bias[D]` to every row of `x[.., D]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (v, &bj) in row.iter_mut().zip(&b) {
                *v += bj;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), vec![], &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        kernels::gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), vec![], &[a, b]))
    }

    /// Batched matmul `[B,m,k]·[B,k,n]`, or `[B,m,k]·[B,n,k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![F::zero(); bs * m * n];
        let (x, y) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            let xa = &x[i * m * k..(i + 1) * m * k];
            let yb = &y[i * k * n..(i + 1) * k * n];
            let c = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                kernels::gemm_nt(xa, yb, c, m, k, n);
            } else {
                kernels::gemm_nn(xa, yb, c, m, k, n);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![bs, m, n], out),
            Op::Bmm { a, b, trans_b },
            vec![],
            &[a, b],
        ))
    }

    /// `x[.., in] · w[in, out] + b[out]`, any leading axes.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d_in = *shape.last().ok_or_else(|| Error::shape("linear", &shape, self.shape(w)))?;
        let rows = numel(&shape) / d_in;
        let flat = self.reshape(x, &[rows, d_in])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_bias(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.shape(w)[1];
        self.reshape(y, &out_shape)
    }

    /// Cross-correlation of `x[N,C,H,W]` with `w[Cout,C,kh,kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (kh, kw) = (sw[2], sw[3]);
        let pad = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 || kh != kw {
                    return Err(Error::Config(format!(
                        "same padding needs an odd square kernel, got {kh}x{kw}"
                    )));
                }
                kh / 2
            }
            Padding::Valid => 0,
        };
        if sx[2] + 2 * pad < kh || sx[3] + 2 * pad < kw {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let cout = sw[0];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv2d bias", &sw, self.shape(b)));
            }
        }
        let geom = ConvGeom {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kh,
            kw,
            stride,
            pad,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let ncol = oh * ow;
        let ckk = geom.col_rows();
        let img_len = sx[1] * sx[2] * sx[3];
        let mut out = vec![F::zero(); sx[0] * cout * ncol];
        let mut cols = vec![F::zero(); ckk * ncol];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = bias.map(|b| self.value(b).data().to_vec());
        for n in 0..sx[0] {
            kernels::im2col(&xv[n * img_len..(n + 1) * img_len], &geom, &mut cols);
            let o = &mut out[n * cout * ncol..(n + 1) * cout * ncol];
            if let Some(bv) = &bv {
                for (co, plane) in o.chunks_exact_mut(ncol).enumerate() {
                    plane.fill(bv[co]);
                }
            }
            kernels::gemm_nn(wv, &cols, o, cout, ckk, ncol);
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::from_parts(vec![sx[0], cout, oh, ow], out),
            Op::Conv2d { x, w, b: bias, geom },
            vec![],
            &inputs,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), vec![], &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut h = self.relu_signature;
        let mut bits = 0u64;
        for (i, &v) in self.value(x).data().iter().enumerate() {
            bits = (bits << 1) | u64::from(v > F::zero());
            if i % 64 == 63 {
                h = (h ^ bits).wrapping_mul(FNV_PRIME);
                bits = 0;
            }
        }
        self.relu_signature = (h ^ bits).wrapping_mul(FNV_PRIME);
        let out = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        self.push(out, Op::Relu(x), vec![], &[x])
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let (outer, mid, inner) = outer_mid_inner(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * mid + j) * inner + i;
                let mut mx = F::neg_infinity();
                for j in 0..mid {
                    mx = mx.max(xv[at(j)]);
                }
                let mut sum = F::zero();
                for j in 0..mid {
                    let e = (xv[at(j)] - mx).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..mid {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }, vec![], &[x]))
    }

    /// Arithmetic mean over `axes`, which are removed from the shape. An
    /// empty axis list is the identity.
    pub fn reduce_mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        if axes.is_empty() {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() || sorted.iter().any(|&a| a >= shape.len()) {
            return Err(Error::Contract(format!(
                "reduce_mean axes {axes:?} invalid for shape {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = (0..shape.len())
            .filter(|d| !sorted.contains(d))
            .map(|d| shape[d])
            .collect();
        let ostr = reduce_strides(&shape, &sorted);
        let count: usize = sorted.iter().map(|&a| shape[a]).product();
        let mut acc = vec![F::zero(); numel(&out_shape)];
        let xv = self.value(x).data();
        let zeros = vec![0; shape.len()];
        kernels::walk2(&shape, &ostr, &zeros, |i, o, _| acc[o] += xv[i]);
        let inv = F::one() / F::lit(count as f64);
        acc.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(
            Tensor::from_parts(out_shape, acc),
            Op::ReduceMean { x, axes: sorted },
            vec![],
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: F = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), vec![], &[x])
    }

    /// Normalises over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&1);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gamma)));
        }
        let rows = numel(&shape) / d;
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![F::zero(); xv.len()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xv.len()];
        let inv_d = F::one() / F::lit(d as f64);
        let eps = F::lit(eps);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let saved = vec![
            Tensor::from_parts(shape.clone(), xhat),
            Tensor::from_parts(vec![rows], rstd),
        ];
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm { x, gamma, beta },
            saved,
            &[x, gamma, beta],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), vec![], &[x]))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut check = axes.to_vec();
        check.sort_unstable();
        if check != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::Contract(format!("permutation {axes:?} for shape {shape:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let st = strides(&shape);
        let src: Vec<usize> = axes.iter().map(|&a| st[a]).collect();
        let zeros = vec![0; shape.len()];
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        kernels::walk2(&out_shape, &src, &zeros, |i, s, _| out[i] = xv[s]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Permute { x, axes: axes.to_vec() },
            vec![],
            &[x],
        ))
    }

    /// `out[:, t] = x[:, t+1] - x[:, t]` along axis 1; the last slot is zero.
    pub fn temporal_diff(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[1] < 2 {
            return Err(Error::Contract(format!(
                "temporal difference needs at least two frames, got shape {shape:?}"
            )));
        }
        let (outer, t, inner) = outer_mid_inner(&shape, 1);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        for o in 0..outer {
            let base = o * t * inner;
            for s in 0..t - 1 {
                let (cur, next) = (base + s * inner, base + (s + 1) * inner);
                for k in 0..inner {
                    out[cur + k] = xv[next + k] - xv[cur + k];
                }
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::TemporalDiff(x), vec![], &[x]))
    }

    /// Repeats every slice along `axis` `repeats` times in place.
    pub fn repeat_interleave(&mut self, x: Var, axis: usize, repeats: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || repeats == 0 {
            return Err(Error::Contract(format!(
                "repeat_interleave axis {axis} x{repeats} for shape {shape:?}"
            )));
        }
        let (outer, mid, inner) = outer_mid_inner(&shape, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xv.len() * repeats);
        for o in 0..outer {
            for j in 0..mid {
                let src = &xv[(o * mid + j) * inner..(o * mid + j + 1) * inner];
                for _ in 0..repeats {
                    out.extend_from_slice(src);
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] *= repeats;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::RepeatInterleave { x, axis, repeats },
            vec![],
            &[x],
        ))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && (0..sa.len()).all(|d| d == axis || sa[d] == sb[d]);
        if !compatible {
            return Err(Error::shape("concat", &sa, &sb));
        }
        let (outer, ma, inner) = outer_mid_inner(&sa, axis);
        let mb = sb[axis];
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for o in 0..outer {
            out.extend_from_slice(&xa[o * ma * inner..(o + 1) * ma * inner]);
            out.extend_from_slice(&xb[o * mb * inner..(o + 1) * mb * inner]);
        }
        let mut out_shape = sa;
        out_shape[axis] += mb;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Concat { a, b, axis },
            vec![],
            &[a, b],
        ))
    }

    /// Mean cross-entropy of `logits[N,K]` against class indices, via
    /// log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("cross_entropy", &shape, &[labels.len()]));
        }
        let (n, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![F::zero(); n * k];
        let mut total = F::zero();
        for r in 0..n {
            let row = &z[r * k..(r + 1) * k];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let sum: F = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + sum.ln();
            total += lse - row[labels[r]];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / F::lit(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec() },
            vec![Tensor::from_parts(shape, probs)],
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.record {
            return Err(Error::Contract("backward on a non-recording graph".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, || g.clone());
                self.accum(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, || g.clone());
                self.accum(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, || zip_map(g, bv, |x, y| x * y));
                self.accum(grads, *b, || zip_map(g, av, |x, y| x * y));
            }
            Op::Broadcast { kind, a, b } => {
                let out_shape = g.shape();
                let (av, bv) = (self.value(*a), self.value(*b));
                let sa = kernels::broadcast_strides(av.shape(), out_shape);
                let sb = kernels::broadcast_strides(bv.shape(), out_shape);
                let mut ga = self.wants(*a).then(|| vec![F::zero(); av.len()]);
                let mut gb = self.wants(*b).then(|| vec![F::zero(); bv.len()]);
                let (x, y) = (av.data(), bv.data());
                kernels::walk2(out_shape, &sa, &sb, |i, ia, ib| {
                    let gi = gd[i];
                    match kind {
                        BinKind::Add => {
                            if let Some(ga) = ga.as_mut() {
                                ga[ia] += gi;
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[ib] += gi;
                            }
                        }
                        BinKind::Mul => {
                            if let Some(ga) = ga.as_mut() {
                                ga[ia] += gi * y[ib];
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[ib] += gi * x[ia];
                            }
                        }
                    }
                });
                if let Some(ga) = ga {
                    self.accum(grads, *a, || Tensor::from_parts(av.shape().to_vec(), ga));
                }
                if let Some(gb) = gb {
                    self.accum(grads, *b, || Tensor::from_parts(bv.shape().to_vec(), gb));
                }
            }
            Op::Scale(a, s) => {
                let k = F::lit(*s);
                self.accum(grads, *a, || g.map(|v| v * k));
            }
            Op::AddBias(x, b) => {
                self.accum(grads, *x, || g.clone());
                self.accum(grads, *b, || {
                    let d = self.value(*b).len();
                    let mut gb = vec![F::zero(); d];
                    for row in gd.chunks_exact(d) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    Tensor::from_parts(vec![d], gb)
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.accum(grads, *a, || {
                    let mut ga = vec![F::zero(); m * k];
                    kernels::gemm_nt(gd, bv.data(), &mut ga, m, n, k);
                    Tensor::from_parts(vec![m, k], ga)
                });
                self.accum(grads, *b, || {
                    let mut gb = vec![F::zero(); k * n];
                    kernels::gemm_tn(av.data(), gd, &mut gb, k, m, n);
                    Tensor::from_parts(vec![k, n], gb)
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = g.shape()[2];
                self.accum(grads, *a, || {
                    let mut ga = vec![F::zero(); bs * m * k];
                    for i in 0..bs {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                        let c = &mut ga[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            kernels::gemm_nn(gi, bi, c, m, n, k);
                        } else {
                            kernels::gemm_nt(gi, bi, c, m, n, k);
                        }
                    }
                    Tensor::from_parts(av.shape().to_vec(), ga)
                });
                self.accum(grads, *b, || {
                    let mut gb = vec![F::zero(); bs * k * n];
                    for i in 0..bs {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let c = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            kernels::gemm_tn(gi, ai, c, n, m, k);
                        } else {
                            kernels::gemm_tn(ai, gi, c, k, m, n);
                        }
                    }
                    Tensor::from_parts(bv.shape().to_vec(), gb)
                });
            }
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let batch = xv.shape()[0];
                let cout = wv.shape()[0];
                let ncol = geom.col_cols();
                let ckk = geom.col_rows();
                let img_len = geom.channels * geom.height * geom.width;
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                let mut gx = want_x.then(|| vec![F::zero(); xv.len()]);
                let mut gw = want_w.then(|| vec![F::zero(); wv.len()]);
                let mut cols = vec![F::zero(); ckk * ncol];
                let mut gcols = vec![F::zero(); ckk * ncol];
                for n in 0..batch {
                    let go = &gd[n * cout * ncol..(n + 1) * cout * ncol];
                    if let Some(gw) = gw.as_mut() {
                        kernels::im2col(&xv.data()[n * img_len..(n + 1) * img_len], geom, &mut cols);
                        kernels::gemm_nt(go, &cols, gw, cout, ncol, ckk);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gcols.fill(F::zero());
                        kernels::gemm_tn(wv.data(), go, &mut gcols, ckk, cout, ncol);
                        kernels::col2im(&gcols, geom, &mut gx[n * img_len..(n + 1) * img_len]);
                    }
                }
                if let Some(gx) = gx {
                    self.accum(grads, *x, || Tensor::from_parts(xv.shape().to_vec(), gx));
                }
                if let Some(gw) = gw {
                    self.accum(grads, *w, || Tensor::from_parts(wv.shape().to_vec(), gw));
                }
                if let Some(b) = b {
                    self.accum(grads, *b, || {
                        let mut gb = vec![F::zero(); cout];
                        for (i, plane) in gd.chunks_exact(ncol).enumerate() {
                            gb[i % cout] += plane.iter().copied().sum::<F>();
                        }
                        Tensor::from_parts(vec![cout], gb)
                    });
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                self.accum(grads, *x, || zip_map(g, y, |gi, yi| gi * yi * (F::one() - yi)));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accum(grads, *x, || {
                    zip_map(g, xv, |gi, xi| if xi > F::zero() { gi } else { F::zero() })
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, mid, inner) = outer_mid_inner(node.value.shape(), *axis);
                self.accum(grads, *x, || {
                    let mut gx = vec![F::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * mid + j) * inner + i;
                            let dot: F = (0..mid).map(|j| gd[at(j)] * y[at(j)]).sum();
                            for j in 0..mid {
                                gx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                            }
                        }
                    }
                    Tensor::from_parts(node.value.shape().to_vec(), gx)
                });
            }
            Op::ReduceMean { x, axes } => {
                let shape = self.shape(*x).to_vec();
                let ostr = reduce_strides(&shape, axes);
                let count: usize = axes.iter().map(|&a| shape[a]).product();
                let inv = F::one() / F::lit(count as f64);
                self.accum(grads, *x, || {
                    let mut gx = vec![F::zero(); numel(&shape)];
                    let zeros = vec![0; shape.len()];
                    kernels::walk2(&shape, &ostr, &zeros, |i, o, _| gx[i] = gd[o] * inv);
                    Tensor::from_parts(shape.clone(), gx)
                });
            }
            Op::Sum(x) => {
                let s = gd[0];
                self.accum(grads, *x, || Tensor::full(self.shape(*x), s));
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xhat = node.saved[0].data();
                let rstd = node.saved[1].data();
                let gam = self.value(*gamma).data();
                let d = gam.len();
                let rows = rstd.len();
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut gg = vec![F::zero(); d];
                    let mut gbeta = vec![F::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += gd[r * d + j] * xhat[r * d + j];
                            gbeta[j] += gd[r * d + j];
                        }
                    }
                    self.accum(grads, *gamma, || Tensor::from_parts(vec![d], gg));
                    self.accum(grads, *beta, || Tensor::from_parts(vec![d], gbeta));
                }
                self.accum(grads, *x, || {
                    let mut gx = vec![F::zero(); xhat.len()];
                    let df = F::lit(d as f64);
                    for r in 0..rows {
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for j in 0..d {
                            let dxh = gd[r * d + j] * gam[j];
                            s1 += dxh;
                            s2 += dxh * xhat[r * d + j];
                        }
                        let k = rstd[r] / df;
                        for j in 0..d {
                            let dxh = gd[r * d + j] * gam[j];
                            gx[r * d + j] = k * (df * dxh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                    Tensor::from_parts(node.value.shape().to_vec(), gx)
                });
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accum(grads, *x, || Tensor::from_parts(shape, gd.to_vec()));
            }
            Op::Permute { x, axes } => {
                let shape = self.shape(*x).to_vec();
                let st = strides(&shape);
                let src: Vec<usize> = axes.iter().map(|&a| st[a]).collect();
                let zeros = vec![0; shape.len()];
                self.accum(grads, *x, || {
                    let mut gx = vec![F::zero(); gd.len()];
                    kernels::walk2(g.shape(), &src, &zeros, |i, s, _| gx[s] = gd[i]);
                    Tensor::from_parts(shape.clone(), gx)
                });
            }
            Op::TemporalDiff(x) => {
                let (outer, t, inner) = outer_mid_inner(g.shape(), 1);
                self.accum(grads, *x, || {
                    let mut gx = vec![F::zero(); gd.len()];
                    for o in 0..outer {
                        let base = o * t * inner;
                        for s in 0..t - 1 {
                            let (cur, next) = (base + s * inner, base + (s + 1) * inner);
                            for k in 0..inner {
                                gx[next + k] += gd[cur + k];
                                gx[cur + k] -= gd[cur + k];
                            }
                        }
                    }
                    Tensor::from_parts(g.shape().to_vec(), gx)
                });
            }
            Op::RepeatInterleave { x, axis, repeats } => {
                let shape = self.shape(*x).to_vec();
                let (outer, mid, inner) = outer_mid_inner(&shape, *axis);
                self.accum(grads, *x, || {
                    let mut gx = vec![F::zero(); numel(&shape)];
                    for o in 0..outer {
                        for j in 0..mid {
                            let dst = &mut gx[(o * mid + j) * inner..(o * mid + j + 1) * inner];
                            for r in 0..*repeats {
                                let src_off = ((o * mid + j) * repeats + r) * inner;
                                for (d, &v) in dst.iter_mut().zip(&gd[src_off..src_off + inner]) {
                                    *d += v;
                                }
                            }
                        }
                    }
                    Tensor::from_parts(shape.clone(), gx)
                });
            }
            Op::Concat { a, b, axis } => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (outer, ma, inner) = outer_mid_inner(&sa, *axis);
                let mb = sb[*axis];
                let row = (ma + mb) * inner;
                self.accum(grads, *a, || {
                    let mut ga = Vec::with_capacity(numel(&sa));
                    for o in 0..outer {
                        ga.extend_from_slice(&gd[o * row..o * row + ma * inner]);
                    }
                    Tensor::from_parts(sa.clone(), ga)
                });
                self.accum(grads, *b, || {
                    let mut gb = Vec::with_capacity(numel(&sb));
                    for o in 0..outer {
                        gb.extend_from_slice(&gd[o * row + ma * inner..(o + 1) * row]);
                    }
                    Tensor::from_parts(sb.clone(), gb)
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let probs = &node.saved[0];
                let (n, k) = (probs.shape()[0], probs.shape()[1]);
                let scale = gd[0] / F::lit(n as f64);
                self.accum(grads, *logits, || {
                    let mut gz: Vec<F> = probs.data().iter().map(|&p| p * scale).collect();
                    for (r, &y) in labels.iter().enumerate() {
                        gz[r * k + y] -= scale;
                    }
                    Tensor::from_parts(vec![n, k], gz)
                });
            }
        }
    }

    fn accum(&self, grads: &mut [Option<Tensor<F>>], v: Var, make: impl FnOnce() -> Tensor<F>) {
        if !self.wants(v) {
            return;
        }
        let g = make();
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn zip_map<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Output strides for each input axis, zero on the reduced axes.
fn reduce_strides(shape: &[usize], reduced: &[usize]) -> Vec<usize> {
    let kept: Vec<usize> = (0..shape.len()).filter(|d| !reduced.contains(d)).collect();
    let kept_shape: Vec<usize> = kept.iter().map(|&d| shape[d]).collect();
    let ks = strides(&kept_shape);
    let mut out = vec![0; shape.len()];
    for (i, &d) in kept.iter().enumerate() {
        out[d] = ks[i];
    }
    out
}
