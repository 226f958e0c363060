use crate::error::{invalid, shape_err, Result};
use crate::tensor::tape::Op;
use crate::tensor::{flops, Real, Tape, Tensor, Var};

pub(crate) struct BatchNormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn backward<T: Real>(
    shape: &[usize],
    gamma: &[T],
    normalized: &[T],
    inv_std: &[T],
    training: bool,
    grad: &[T],
) -> BatchNormGrads<T> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let count = T::lit((n * plane) as f64);
    let mut gx = vec![T::zero(); grad.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                sum_dy += grad[i];
                sum_dy_xhat += grad[i] * normalized[i];
            }
        }
        gg[ch] = sum_dy_xhat;
        gb[ch] = sum_dy;
        let scale = gamma[ch] * inv_std[ch];
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                gx[i] = if training {
                    scale * (grad[i] - sum_dy / count - normalized[i] * sum_dy_xhat / count)
                } else {
                    scale * grad[i]
                };
            }
        }
    }
    BatchNormGrads {
        input: gx,
        gamma: gg,
        beta: gb,
    }
}

impl<T: Real> Tape<T> {
    /// Per-channel batch normalization of an `[N, C, H, W]` tensor.
    ///
    /// Training mode normalizes with biased batch statistics and blends the
    /// unbiased batch variance into the running estimates with weight
    /// `momentum`. Eval mode normalizes with the running estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        training: bool,
        eps: T,
        momentum: T,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if eps <= T::zero() {
            return Err(invalid!("batch norm eps must be positive"));
        }
        for (name, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running mean", running_mean.len()),
            ("running var", running_var.len()),
        ] {
            if len != c {
                return Err(shape_err!("batch norm {name} has {len} entries for {c} channels"));
            }
        }
        let plane = h * w;
        let count = n * plane;
        if count == 0 {
            return Err(invalid!("batch norm over a zero-element channel"));
        }
        let x = self.value(input).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        if training {
            let cnt = T::lit(count as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    s += x[off..off + plane].iter().copied().sum::<T>();
                }
                let m = s / cnt;
                let mut sq = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    sq += x[off..off + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                mean[ch] = m;
                var[ch] = sq / cnt;
            }
            let unbias = if count > 1 {
                T::lit(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            for ch in 0..c {
                running_mean[ch] = (T::one() - momentum) * running_mean[ch] + momentum * mean[ch];
                running_var[ch] =
                    (T::one() - momentum) * running_var[ch] + momentum * var[ch] * unbias;
            }
        } else {
            mean.copy_from_slice(running_mean);
            var.copy_from_slice(running_var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    normalized[i] = xh;
                    out[i] = gm[ch] * xh + bt[ch];
                }
            }
        }
        self.add_flops(flops::BATCH_NORM_PER_ELEMENT * x.len() as u64);
        let rg = self.any_requires_grad(&[input, gamma, beta]);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                training,
            },
            rg,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bn(x: Tensor<f64>, gamma: f64, beta: f64, training: bool) -> Tensor<f64> {
        let c = x.shape()[1];
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::full(vec![c], gamma));
        let b = tape.constant(Tensor::full(vec![c], beta));
        let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
        let y = tape
            .batch_norm2d(xv, g, b, &mut rm, &mut rv, training, 1e-5, 0.1)
            .unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let y = bn(Tensor::full(vec![2, 1, 3, 3], 4.2), 1.0, 0.0, true);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = bn(Tensor::randn(vec![2, 3, 4, 4], 2.0, &mut rng), 0.0, 5.0, true);
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batch_statistics_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(vec![2, 3, 4, 4], 3.0, &mut rng);
        let y = bn(x, 1.0, 0.0, true);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| (0..16).map(move |i| (b, i)))
                .map(|(b, i)| y.data()[(b * 3 + ch) * 16 + i])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_update_and_eval_uses_them() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(vec![1, 1, 1, 4], |i| i as f64));
        let g = tape.constant(Tensor::ones(vec![1]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
        tape.batch_norm2d(x, g, b, &mut rm, &mut rv, true, 1e-5, 0.5).unwrap();
        // mean 1.5, unbiased var 5/3
        assert!((rm[0] - 0.75).abs() < 1e-12);
        assert!((rv[0] - (0.5 + 0.5 * 5.0 / 3.0)).abs() < 1e-12);
        let y = tape.batch_norm2d(x, g, b, &mut rm, &mut rv, false, 1e-5, 0.5).unwrap();
        let expect = (3.0 - rm[0]) / (rv[0] + 1e-5f64).sqrt();
        assert!((tape.value(y).data()[3] - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_channel_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![0, 2, 3, 3]));
        let g = tape.constant(Tensor::ones(vec![2]));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        assert!(tape.batch_norm2d(x, g, b, &mut rm, &mut rv, true, 1e-5, 0.1).is_err());
    }
}
