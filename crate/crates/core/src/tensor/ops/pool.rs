use crate::error::{invalid, shape_err, Result};
use crate::tensor::tape::Op;
use crate::tensor::{flops, Real, Tape, Tensor, Var};

pub(crate) fn global_avg_backward<T: Real>(shape: &[usize], grad: &[T]) -> Vec<T> {
    let plane = shape[2] * shape[3];
    let inv = T::one() / T::lit(plane as f64);
    grad.iter()
        .flat_map(|&g| std::iter::repeat(g * inv).take(plane))
        .collect()
}

impl<T: Real> Tape<T> {
    /// Windowed maximum without padding. Ties route the gradient to the
    /// first maximum in row-major window order.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if kernel == 0 || stride == 0 {
            return Err(invalid!("max pool kernel and stride must be positive"));
        }
        if kernel > h || kernel > w {
            return Err(shape_err!("pool kernel {kernel} larger than input {h}x{w}"));
        }
        let ho = (h - kernel) / stride + 1;
        let wo = (w - kernel) / stride + 1;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_idx = base + oy * stride * w + ox * stride;
                    let mut best = x[best_idx];
                    for i in 0..kernel {
                        for j in 0..kernel {
                            let idx = base + (oy * stride + i) * w + ox * stride + j;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        self.add_flops(flops::max_pool(out.len() as u64, kernel));
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// Per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        let plane = h * w;
        if plane == 0 {
            return Err(invalid!("global average pool over empty plane"));
        }
        let x = self.value(input).data();
        let inv = T::one() / T::lit(plane as f64);
        let out: Vec<T> = x
            .chunks_exact(plane)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        self.add_flops(x.len() as u64);
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }
}
