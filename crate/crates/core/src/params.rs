//! Uniform access to the learnable tensors of a parameter struct.
//!
//! Gradients of a parameter struct are returned as a value of the same type,
//! so accumulation, scaling and finite-difference probing work the same way
//! for every layer.

use crate::rng::RngState;
use crate::tensor::Tensor;

pub trait ParamSet: Clone {
    /// Named learnable tensors in a fixed order.
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Elementwise `self += other`; both must come from the same architecture.
    fn accumulate(&mut self, other: &Self) {
        let rhs = other.tensors();
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(rhs) {
            a.add_assign(b).expect("parameter structures differ");
        }
    }

    fn scale_all(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale_in_place(s);
        }
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds independent uniform noise in `[-amplitude, amplitude]` to every scalar.
    fn perturb(&mut self, rng: &mut RngState, amplitude: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.uniform(-amplitude, amplitude);
            }
        }
    }
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    items: Vec<(String, &'a Tensor)>,
) -> impl Iterator<Item = (String, &'a Tensor)> + 'a {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    items: Vec<(String, &'a mut Tensor)>,
) -> impl Iterator<Item = (String, &'a mut Tensor)> + 'a {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}
