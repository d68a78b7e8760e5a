use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-scalar multipliers applied in the forward pass; `None` means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub factors: Option<Vec<f64>>,
}

impl DropoutMask {
    pub fn identity() -> Self {
        Self { factors: None }
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
pub fn dropout(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Tensor, DropoutMask)> {
    ensure!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1), got {rate}");
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep = 1.0 / (1.0 - rate);
    let factors: Vec<f64> =
        (0..x.len()).map(|_| if rng.next_f64() < rate { 0.0 } else { keep }).collect();
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&factors).for_each(|(v, f)| *v *= f);
    Ok((y, DropoutMask { factors: Some(factors) }))
}

pub fn dropout_vjp(mask: &DropoutMask, dy: &Tensor) -> Result<Tensor> {
    match &mask.factors {
        None => Ok(dy.clone()),
        Some(f) => {
            ensure!(f.len() == dy.len(), "dropout mask has {} entries, gradient {}", f.len(), dy.len());
            let mut dx = dy.clone();
            dx.data_mut().iter_mut().zip(f).for_each(|(v, f)| *v *= f);
            Ok(dx)
        }
    }
}
