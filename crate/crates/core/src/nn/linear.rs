use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ROW_CHUNK;
use crate::error::{ensure, Result};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::params::ParamSet;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Affine map `y = x W^T + b` over the trailing axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// `(out_features, in_features)`
    pub weight: Tensor,
    /// `(out_features)`
    pub bias: Tensor,
}

impl LinearParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        ensure!(weight.rank() == 2, "linear weight must be rank 2, got {:?}", weight.shape());
        ensure!(
            bias.shape() == [weight.dim(0)],
            "linear bias shape {:?} does not match {} outputs",
            bias.shape(),
            weight.dim(0)
        );
        Ok(Self { weight, bias })
    }

    /// Weights and bias uniform in `±sqrt(1/in_features)`.
    pub fn init(in_features: usize, out_features: usize, rng: &mut RngState) -> Self {
        let bound = (1.0 / in_features.max(1) as f64).sqrt();
        let weight = Tensor::from_fn([out_features, in_features], |_| rng.uniform(-bound, bound));
        let bias = Tensor::from_fn([out_features], |_| rng.uniform(-bound, bound));
        Self { weight, bias }
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Tensor::zeros([out_features, in_features]),
            bias: Tensor::zeros([out_features]),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self { weight: Tensor::eye(n), bias: Tensor::zeros([n]) }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }
}

impl ParamSet for LinearParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub params: LinearParams,
}

fn output_shape(x: &Tensor, out: usize) -> Vec<usize> {
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out;
    shape
}

pub fn linear_fwd(x: &Tensor, p: &LinearParams) -> Result<Tensor> {
    let (din, dout) = (p.in_features(), p.out_features());
    ensure!(
        x.last_dim() == din,
        "linear expects trailing dim {din}, got {:?}",
        x.shape()
    );
    let rows = x.outer_len();
    let mut y = Tensor::try_zeros(output_shape(x, dout))?;
    if dout == 0 || rows == 0 {
        return Ok(y);
    }
    let w = MatRef::rm(p.weight.data(), dout, din).t();
    let bias = p.bias.data();
    let xd = x.data();
    y.data_mut()
        .par_chunks_mut(ROW_CHUNK * dout)
        .enumerate()
        .for_each(|(chunk, out)| {
            let r0 = chunk * ROW_CHUNK;
            let n = out.len() / dout;
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
            let xs = &xd[r0 * din..(r0 + n) * din];
            gemm(1.0, MatRef::rm(xs, n, din), w, 1.0, MatMut::rm(out, n, dout));
        });
    Ok(y)
}

pub fn linear_vjp(x: &Tensor, p: &LinearParams, dy: &Tensor) -> Result<LinearGrads> {
    let (din, dout) = (p.in_features(), p.out_features());
    ensure!(x.last_dim() == din, "linear expects trailing dim {din}, got {:?}", x.shape());
    ensure!(
        dy.shape() == output_shape(x, dout).as_slice(),
        "upstream gradient shape {:?} does not match linear output",
        dy.shape()
    );
    let rows = x.outer_len();
    let mut dx = Tensor::zeros(x.shape().to_vec());
    gemm(
        1.0,
        MatRef::rm(dy.data(), rows, dout),
        MatRef::rm(p.weight.data(), dout, din),
        0.0,
        MatMut::rm(dx.data_mut(), rows, din),
    );
    let mut dw = Tensor::zeros([dout, din]);
    gemm(
        1.0,
        MatRef::rm(dy.data(), rows, dout).t(),
        MatRef::rm(x.data(), rows, din),
        0.0,
        MatMut::rm(dw.data_mut(), dout, din),
    );
    let mut db = Tensor::zeros([dout]);
    for row in dy.data().chunks(dout.max(1)) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(LinearGrads { input: dx, params: LinearParams { weight: dw, bias: db } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_gives_bias_rows() {
        let mut p = LinearParams::zeros(3, 2);
        p.bias = Tensor::new([2], vec![0.5, -1.5]).unwrap();
        let x = Tensor::from_fn([4, 3], |i| i as f64);
        let y = linear_fwd(&x, &p).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.5, -1.5]);
        }
    }

    #[test]
    fn identity_layer_passes_through() {
        let x = Tensor::from_fn([2, 3, 4], |i| (i as f64).sin());
        let y = linear_fwd(&x, &LinearParams::identity(4)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn many_rows_match_naive_product() {
        let mut rng = RngState::new(11);
        let p = LinearParams::init(5, 3, &mut rng);
        let x = Tensor::from_fn([3 * ROW_CHUNK + 7, 5], |_| rng.uniform(-1.0, 1.0));
        let y = linear_fwd(&x, &p).unwrap();
        for r in 0..x.dim(0) {
            for o in 0..3 {
                let mut s = p.bias.data()[o];
                for i in 0..5 {
                    s += x.data()[r * 5 + i] * p.weight.data()[o * 5 + i];
                }
                assert!((s - y.data()[r * 3 + o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trailing_dim_mismatch() {
        let p = LinearParams::zeros(3, 2);
        assert!(linear_fwd(&Tensor::zeros([4, 2]), &p).is_err());
        assert!(linear_vjp(&Tensor::zeros([4, 3]), &p, &Tensor::zeros([4, 3])).is_err());
    }
}
