//! Stride-2 downsampling for the feature pyramid.
//!
//! Both variants map `(H, W, C_in)` to `(ceil(H/2), ceil(W/2), C_out)`.

use serde::{Deserialize, Serialize};

use super::linear::{linear_fwd, linear_vjp, LinearParams};
use crate::error::{ensure, Result};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::params::ParamSet;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Output length of a stride-2 window over `n` positions.
pub fn halved(n: usize) -> usize {
    n.div_ceil(2)
}

/// 3x3 kernel, stride 2, zero padding 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    /// `(out_ch, in_ch, 3, 3)`
    pub kernel: Tensor,
    /// `(out_ch)`
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<Self> {
        ensure!(
            kernel.rank() == 4 && kernel.dim(2) == 3 && kernel.dim(3) == 3,
            "conv kernel must be (out, in, 3, 3), got {:?}",
            kernel.shape()
        );
        ensure!(bias.shape() == [kernel.dim(0)], "conv bias does not match kernel");
        Ok(Self { kernel, bias })
    }

    pub fn init(in_ch: usize, out_ch: usize, rng: &mut RngState) -> Self {
        let bound = (1.0 / (9 * in_ch).max(1) as f64).sqrt();
        Self {
            kernel: Tensor::from_fn([out_ch, in_ch, 3, 3], |_| rng.uniform(-bound, bound)),
            bias: Tensor::from_fn([out_ch], |_| rng.uniform(-bound, bound)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim(0)
    }

    /// Kernel rearranged to `(out, 9*in)` with column index `(kh*3 + kw)*in + ci`.
    fn as_rows(&self) -> Vec<f64> {
        let (co, ci) = (self.out_channels(), self.in_channels());
        let k = self.kernel.data();
        let mut rows = vec![0.0; co * 9 * ci];
        for o in 0..co {
            for i in 0..ci {
                for tap in 0..9 {
                    rows[o * 9 * ci + tap * ci + i] = k[(o * ci + i) * 9 + tap];
                }
            }
        }
        rows
    }
}

impl ParamSet for ConvParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("kernel".into(), &mut self.kernel), ("bias".into(), &mut self.bias)]
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub params: ConvParams,
}

fn check_map(x: &Tensor, in_ch: usize) -> Result<(usize, usize)> {
    ensure!(x.rank() == 3, "expected an (H, W, C) map, got {:?}", x.shape());
    ensure!(x.dim(0) >= 1 && x.dim(1) >= 1, "empty spatial extent {:?}", x.shape());
    ensure!(
        x.dim(2) == in_ch,
        "channel mismatch: map has {} channels, layer expects {in_ch}",
        x.dim(2)
    );
    Ok((x.dim(0), x.dim(1)))
}

/// `(Ho*Wo, 9*C)` patch matrix; taps falling in the padding stay zero.
fn im2col(x: &Tensor) -> Vec<f64> {
    let (h, w, c) = (x.dim(0), x.dim(1), x.dim(2));
    let (ho, wo) = (halved(h), halved(w));
    let xd = x.data();
    let mut cols = vec![0.0; ho * wo * 9 * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * 9 * c;
            for kh in 0..3 {
                let iy = (2 * oy + kh) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kw in 0..3 {
                    let ix = (2 * ox + kw) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = base + (kh * 3 + kw) * c;
                    cols[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, c: usize) -> Tensor {
    let (ho, wo) = (halved(h), halved(w));
    let mut x = Tensor::zeros([h, w, c]);
    let xd = x.data_mut();
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * 9 * c;
            for kh in 0..3 {
                let iy = (2 * oy + kh) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kw in 0..3 {
                    let ix = (2 * ox + kw) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = base + (kh * 3 + kw) * c;
                    xd[dst..dst + c].iter_mut().zip(&cols[src..src + c]).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    x
}

pub fn conv3x3s2_fwd(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let (h, w) = check_map(x, p.in_channels())?;
    let (ci, co) = (p.in_channels(), p.out_channels());
    let (ho, wo) = (halved(h), halved(w));
    let cols = im2col(x);
    let rows = p.as_rows();
    let mut y = Tensor::zeros([ho, wo, co]);
    for px in y.data_mut().chunks_mut(co) {
        px.copy_from_slice(p.bias.data());
    }
    gemm(
        1.0,
        MatRef::rm(&cols, ho * wo, 9 * ci),
        MatRef::rm(&rows, co, 9 * ci).t(),
        1.0,
        MatMut::rm(y.data_mut(), ho * wo, co),
    );
    Ok(y)
}

pub fn conv3x3s2_vjp(x: &Tensor, p: &ConvParams, dy: &Tensor) -> Result<ConvGrads> {
    let (h, w) = check_map(x, p.in_channels())?;
    let (ci, co) = (p.in_channels(), p.out_channels());
    let (ho, wo) = (halved(h), halved(w));
    ensure!(dy.shape() == [ho, wo, co], "conv upstream gradient shape {:?}", dy.shape());
    let cols = im2col(x);
    let rows = p.as_rows();

    let mut dcols = vec![0.0; ho * wo * 9 * ci];
    gemm(
        1.0,
        MatRef::rm(dy.data(), ho * wo, co),
        MatRef::rm(&rows, co, 9 * ci),
        0.0,
        MatMut::rm(&mut dcols, ho * wo, 9 * ci),
    );
    let dx = col2im(&dcols, h, w, ci);

    let mut drows = vec![0.0; co * 9 * ci];
    gemm(
        1.0,
        MatRef::rm(dy.data(), ho * wo, co).t(),
        MatRef::rm(&cols, ho * wo, 9 * ci),
        0.0,
        MatMut::rm(&mut drows, co, 9 * ci),
    );
    let mut grads = p.zeroed();
    let dk = grads.kernel.data_mut();
    for o in 0..co {
        for i in 0..ci {
            for tap in 0..9 {
                dk[(o * ci + i) * 9 + tap] = drows[o * 9 * ci + tap * ci + i];
            }
        }
    }
    for px in dy.data().chunks(co) {
        grads.bias.data_mut().iter_mut().zip(px).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads { input: dx, params: grads })
}

#[derive(Debug, Clone)]
pub struct PoolGrads {
    pub input: Tensor,
    pub params: LinearParams,
}

/// Flat index into the projected map of the maximum of each 2x2 window.
fn pool_argmax(z: &Tensor) -> Vec<usize> {
    let (h, w, c) = (z.dim(0), z.dim(1), z.dim(2));
    let (ho, wo) = (halved(h), halved(w));
    let zd = z.data();
    let mut arg = vec![0; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut best = (2 * oy * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                    if iy < h && ix < w {
                        let idx = (iy * w + ix) * c + ch;
                        if zd[idx] > zd[best] {
                            best = idx;
                        }
                    }
                }
                arg[(oy * wo + ox) * c + ch] = best;
            }
        }
    }
    arg
}

/// 1x1 convolution followed by 2x2 max-pooling (windows clipped at odd edges).
pub fn conv1x1_maxpool_fwd(x: &Tensor, p: &LinearParams) -> Result<Tensor> {
    let (h, w) = check_map(x, p.in_features())?;
    let z = linear_fwd(x, p)?;
    let arg = pool_argmax(&z);
    let data = arg.iter().map(|&i| z.data()[i]).collect();
    Tensor::new([halved(h), halved(w), p.out_features()], data)
}

pub fn conv1x1_maxpool_vjp(x: &Tensor, p: &LinearParams, dy: &Tensor) -> Result<PoolGrads> {
    let (h, w) = check_map(x, p.in_features())?;
    ensure!(
        dy.shape() == [halved(h), halved(w), p.out_features()],
        "pool upstream gradient shape {:?}",
        dy.shape()
    );
    let z = linear_fwd(x, p)?;
    let mut dz = Tensor::zeros(z.shape().to_vec());
    for (&i, g) in pool_argmax(&z).iter().zip(dy.data()) {
        dz.data_mut()[i] += g;
    }
    let g = linear_vjp(x, p, &dz)?;
    Ok(PoolGrads { input: g.input, params: g.params })
}
