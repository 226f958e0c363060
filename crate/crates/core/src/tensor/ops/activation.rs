use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sigmoid_scalar;
use crate::error::{invalid, Result};
use crate::tensor::tape::Op;
use crate::tensor::{flops, Real, Tape, Tensor, Var};

pub(crate) fn leaky_relu_backward<T: Real>(x: &[T], slope: T, grad: &[T]) -> Vec<T> {
    x.iter()
        .zip(grad)
        .map(|(&x, &g)| if x > T::zero() { g } else { g * slope })
        .collect()
}

pub(crate) fn sigmoid_backward<T: Real>(y: &[T], grad: &[T]) -> Vec<T> {
    y.iter()
        .zip(grad)
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect()
}

impl<T: Real> Tape<T> {
    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(invalid!("leaky relu slope must lie in [0, 1), got {slope}"));
        }
        let x = self.value(input);
        let out: Vec<T> = x
            .data()
            .iter()
            .map(|&v| if v >= T::zero() { v } else { v * slope })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.add_flops(flops::ACTIVATION_PER_ELEMENT * value.numel() as u64);
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::LeakyRelu { input, slope }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.leaky_relu(input, T::zero())
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
        )
        .expect("same shape");
        self.add_flops(flops::SIGMOID_PER_ELEMENT * value.numel() as u64);
        let rg = self.requires_grad(input);
        self.push(value, Op::Sigmoid { input }, rg)
    }

    /// Inverted dropout: in training, zeroes each element with probability
    /// `rate` and scales survivors by `1 / (1 - rate)`. Identity otherwise.
    /// The mask is a pure function of `seed`.
    pub fn dropout(&mut self, input: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid!("dropout rate must lie in [0, 1), got {rate}"));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::lit(1.0 / (1.0 - rate));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Dropout { input, mask }, rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_op(x: f64, f: impl Fn(&mut Tape<f64>, Var) -> Var) -> (f64, f64) {
        let mut tape = Tape::<f64>::new();
        let v = tape.param(Tensor::full(vec![1], x));
        let y = f(&mut tape, v);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        (tape.value(y).data()[0], tape.grad(v).unwrap()[0])
    }

    #[test]
    fn leaky_relu_definition() {
        assert_eq!(scalar_op(2.0, |t, v| t.leaky_relu(v, 0.01).unwrap()).0, 2.0);
        let (y, g) = scalar_op(-1.0, |t, v| t.leaky_relu(v, 0.01).unwrap());
        assert!((y + 0.01).abs() < 1e-15);
        assert!((g - 0.01).abs() < 1e-15);
        // central difference
        let h = 1e-6;
        let f = |x: f64| if x >= 0.0 { x } else { 0.01 * x };
        assert!(((f(-1.0 + h) - f(-1.0 - h)) / (2.0 * h) - g).abs() < 1e-8);
    }

    #[test]
    fn relu_definition() {
        assert_eq!(scalar_op(2.0, |t, v| t.relu(v).unwrap()), (2.0, 1.0));
        assert_eq!(scalar_op(-1.0, |t, v| t.relu(v).unwrap()), (0.0, 0.0));
    }

    #[test]
    fn bad_slope_rejected() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::ones(vec![1]));
        assert!(tape.leaky_relu(v, 1.0).is_err());
        assert!(tape.leaky_relu(v, -0.1).is_err());
    }

    #[test]
    fn sigmoid_midpoint_saturation_and_slope() {
        let (y, g) = scalar_op(0.0, |t, v| t.sigmoid(v));
        assert_eq!(y, 0.5);
        assert_eq!(g, 0.25);
        let h = 1e-5f64;
        let fd: f64 = (sigmoid_scalar(h) - sigmoid_scalar(-h)) / (2.0 * h);
        assert!((fd - 0.25).abs() < 1e-9);
        let hi = sigmoid_scalar(40.0f32);
        let lo = sigmoid_scalar(-40.0f32);
        assert!(hi.is_finite() && lo.is_finite());
        assert!((hi - 1.0).abs() <= f32::EPSILON);
        assert!(lo.abs() <= f32::EPSILON);
        assert!(sigmoid_scalar(-1000.0f32) == 0.0 && sigmoid_scalar(1000.0f32) == 1.0);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::ones(vec![100]));
        assert_eq!(tape.dropout(v, 0.0, true, 1).unwrap(), v);
        assert_eq!(tape.dropout(v, 0.7, false, 1).unwrap(), v);
        assert!(tape.dropout(v, 1.0, true, 1).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::ones(vec![100_000]));
        let y = tape.dropout(v, 0.5, true, 42).unwrap();
        let mean = tape.value(y).data().iter().map(|&x| x as f64).sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        let y2 = tape.dropout(v, 0.5, true, 42).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(y2).data());
    }
}
