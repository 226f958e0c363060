use super::sigmoid_scalar;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::tape::Op;
use crate::tensor::{Real, Tape, Tensor, Var};

pub(crate) fn bce_backward<T: Real>(logits: &[T], targets: &[T], upstream: T) -> Vec<T> {
    let scale = upstream / T::lit(logits.len() as f64);
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| (sigmoid_scalar(z) - t) * scale)
        .collect()
}

impl<T: Real> Tape<T> {
    /// Mean binary cross-entropy of sigmoid(logits) against {0, 1} targets,
    /// in the form `max(z, 0) - z t + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(shape_err!("bce logits {:?} vs targets {:?}", z.shape(), targets.shape()));
        }
        if z.numel() == 0 {
            return Err(invalid!("bce over zero elements"));
        }
        if targets.data().iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(invalid!("bce targets must be 0 or 1"));
        }
        let total: T = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / T::lit(z.numel() as f64));
        let rg = self.requires_grad(logits);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
            },
            rg,
        ))
    }
}
