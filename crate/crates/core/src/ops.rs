//! Tape-free tensor operations, evaluated on a non-recording [`Graph`].

use crate::autograd::{Graph, Padding};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Sigmoid,
    Relu,
}

fn unary<F: Real>(
    x: &Tensor<F>,
    f: impl FnOnce(&mut Graph<F>, crate::autograd::Var) -> Result<crate::autograd::Var>,
) -> Result<Tensor<F>> {
    let mut g = Graph::inference();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    Ok(g.value(out).clone())
}

pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let mut g = Graph::inference();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = g.matmul(x, y)?;
    Ok(g.value(out).clone())
}

pub fn conv2d<F: Real>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<F>> {
    let mut g = Graph::inference();
    let (xv, kv) = (g.constant(x.clone()), g.constant(kernel.clone()));
    let out = g.conv2d(xv, kv, None, stride, padding)?;
    Ok(g.value(out).clone())
}

pub fn softmax<F: Real>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    unary(x, |g, v| g.softmax(v, axis))
}

pub fn pointwise<F: Real>(x: &Tensor<F>, f: Pointwise) -> Tensor<F> {
    unary(x, |g, v| {
        Ok(match f {
            Pointwise::Sigmoid => g.sigmoid(v),
            Pointwise::Relu => g.relu(v),
        })
    })
    .expect("pointwise ops are total")
}

pub fn reduce_mean<F: Real>(x: &Tensor<F>, axes: &[usize]) -> Result<Tensor<F>> {
    unary(x, |g, v| g.reduce_mean(v, axes))
}

pub fn layer_norm<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: f64,
) -> Result<Tensor<F>> {
    let mut g = Graph::inference();
    let (xv, gv, bv) = (
        g.constant(x.clone()),
        g.constant(gamma.clone()),
        g.constant(beta.clone()),
    );
    let out = g.layer_norm(xv, gv, bv, eps)?;
    Ok(g.value(out).clone())
}
