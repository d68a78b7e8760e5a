//! Bilinear sampling in normalized coordinates.
//!
//! A point `(u, v)` in `[0, 1]^2` maps to the pixel coordinate
//! `(u*H - 0.5, v*W - 0.5)`, so `((h + 0.5)/H, (w + 0.5)/W)` is the centre of
//! cell `(h, w)`. Pixel coordinates are clamped to `[0, H-1] x [0, W-1]`,
//! which replicates the border for points outside the map. At cell
//! boundaries the coordinate gradient is the right-sided derivative; in the
//! clamped region it is zero.

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Pixel coordinates closer than this to an integer are snapped onto it, so
/// that sampling a cell centre reproduces the cell exactly.
const SNAP: f64 = 1e-12;

/// Four-neighbour interpolation stencil for one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    /// Cell indices `y * W + x`, ordered (y0x0, y0x1, y1x0, y1x1).
    pub idx: [usize; 4],
    pub weight: [f64; 4],
    /// Derivative of each weight with respect to the normalized row coordinate.
    pub d_row: [f64; 4],
    /// Derivative of each weight with respect to the normalized column coordinate.
    pub d_col: [f64; 4],
}

/// `(i0, i1, frac, d pixel / d normalized)` along one axis.
fn axis(coord: f64, n: usize) -> (usize, usize, f64, f64) {
    let mut p = coord * n as f64 - 0.5;
    let r = p.round();
    if (p - r).abs() < SNAP {
        p = r;
    }
    let top = (n - 1) as f64;
    let (p, slope) = if p < 0.0 {
        (0.0, 0.0)
    } else if p >= top {
        (top, 0.0)
    } else {
        (p, n as f64)
    };
    let i0 = (p.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64, slope)
}

impl BilinearTap {
    pub fn new(row: f64, col: f64, height: usize, width: usize) -> Self {
        let (y0, y1, fy, gy) = axis(row, height);
        let (x0, x1, fx, gx) = axis(col, width);
        let (wy0, wy1) = (1.0 - fy, fy);
        let (wx0, wx1) = (1.0 - fx, fx);
        Self {
            idx: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
            weight: [wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1],
            d_row: [-gy * wx0, -gy * wx1, gy * wx0, gy * wx1],
            d_col: [-gx * wy0, gx * wy0, -gx * wy1, gx * wy1],
        }
    }

    /// `out[k] += scale * sample[offset + k]` for the channel window starting
    /// at `offset` of a map with `stride` channels per cell.
    #[inline]
    pub fn accumulate(&self, map: &[f64], stride: usize, offset: usize, scale: f64, out: &mut [f64]) {
        for t in 0..4 {
            let w = scale * self.weight[t];
            if w == 0.0 {
                continue;
            }
            let base = self.idx[t] * stride + offset;
            let cell = &map[base..base + out.len()];
            out.iter_mut().zip(cell).for_each(|(o, v)| *o += w * v);
        }
    }
}

fn check(map: &Tensor, pts: &Tensor) -> Result<(usize, usize, usize, usize)> {
    ensure!(map.rank() == 3, "bilinear map must be (H, W, C), got {:?}", map.shape());
    ensure!(map.dim(0) >= 1 && map.dim(1) >= 1, "bilinear map has empty extent");
    ensure!(
        pts.rank() == 2 && pts.dim(1) == 2,
        "bilinear points must be (N, 2), got {:?}",
        pts.shape()
    );
    Ok((map.dim(0), map.dim(1), map.dim(2), pts.dim(0)))
}

pub fn bilinear_sample_fwd(map: &Tensor, pts: &Tensor) -> Result<Tensor> {
    let (h, w, c, n) = check(map, pts)?;
    let mut out = Tensor::zeros([n, c]);
    for (p, row) in pts.data().chunks(2).zip(out.data_mut().chunks_mut(c.max(1))) {
        let tap = BilinearTap::new(p[0], p[1], h, w);
        let md = map.data();
        for (k, o) in row.iter_mut().enumerate() {
            *o = tap.weight[0] * md[tap.idx[0] * c + k]
                + tap.weight[1] * md[tap.idx[1] * c + k]
                + tap.weight[2] * md[tap.idx[2] * c + k]
                + tap.weight[3] * md[tap.idx[3] * c + k];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BilinearGrads {
    pub map: Tensor,
    pub pts: Tensor,
}

pub fn bilinear_sample_vjp(map: &Tensor, pts: &Tensor, dy: &Tensor) -> Result<BilinearGrads> {
    let (h, w, c, n) = check(map, pts)?;
    ensure!(dy.shape() == [n, c], "bilinear upstream gradient shape {:?}", dy.shape());
    let mut dmap = Tensor::zeros(map.shape().to_vec());
    let mut dpts = Tensor::zeros([n, 2]);
    let md = map.data();
    for (i, p) in pts.data().chunks(2).enumerate() {
        let tap = BilinearTap::new(p[0], p[1], h, w);
        let g = &dy.data()[i * c..(i + 1) * c];
        let (mut du, mut dv) = (0.0, 0.0);
        for t in 0..4 {
            let cell = &md[tap.idx[t] * c..(tap.idx[t] + 1) * c];
            let proj: f64 = cell.iter().zip(g).map(|(a, b)| a * b).sum();
            du += tap.d_row[t] * proj;
            dv += tap.d_col[t] * proj;
            let dcell = &mut dmap.data_mut()[tap.idx[t] * c..(tap.idx[t] + 1) * c];
            dcell.iter_mut().zip(g).for_each(|(a, b)| *a += tap.weight[t] * b);
        }
        dpts.data_mut()[2 * i] = du;
        dpts.data_mut()[2 * i + 1] = dv;
    }
    Ok(BilinearGrads { map: dmap, pts: dpts })
}
