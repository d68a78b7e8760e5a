use crate::error::{ensure, Result};
use crate::tensor::Tensor;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// `Phi(x) + x * phi(x)`
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn gelu_fwd(x: &Tensor) -> Tensor {
    x.map(gelu)
}

pub fn gelu_vjp(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    ensure!(x.shape() == dy.shape(), "gelu upstream gradient shape mismatch");
    let mut dx = dy.clone();
    dx.data_mut().iter_mut().zip(x.data()).for_each(|(g, &v)| *g *= gelu_grad(v));
    Ok(dx)
}
