use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Max-subtracted softmax over a contiguous slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
}

fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_fwd(x: &Tensor, axis: usize) -> Result<Tensor> {
    ensure!(axis < x.rank(), "softmax axis {axis} out of range for {:?}", x.shape());
    let (outer, n, inner) = lanes(x.shape(), axis);
    let mut y = x.clone();
    if inner == 1 {
        y.data_mut().chunks_mut(n.max(1)).for_each(softmax_in_place);
        return Ok(y);
    }
    let mut lane = vec![0.0; n];
    let data = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            for (k, v) in lane.iter_mut().enumerate() {
                *v = data[at(k)];
            }
            softmax_in_place(&mut lane);
            for (k, v) in lane.iter().enumerate() {
                data[at(k)] = *v;
            }
        }
    }
    Ok(y)
}

/// Backward from the softmax *output* `y`: `dx = y * (dy - <dy, y>)` per lane.
pub fn softmax_vjp(y: &Tensor, dy: &Tensor, axis: usize) -> Result<Tensor> {
    ensure!(axis < y.rank(), "softmax axis {axis} out of range for {:?}", y.shape());
    ensure!(y.shape() == dy.shape(), "softmax_vjp shape mismatch");
    let (outer, n, inner) = lanes(y.shape(), axis);
    let mut dx = Tensor::zeros(y.shape().to_vec());
    let (yd, gd) = (y.data(), dy.data());
    let out = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let dot: f64 = (0..n).map(|k| yd[at(k)] * gd[at(k)]).sum();
            for k in 0..n {
                out[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    Ok(dx)
}
