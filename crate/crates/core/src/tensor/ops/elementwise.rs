use crate::error::{shape_err, Result};
use crate::tensor::tape::Op;
use crate::tensor::{flops, gemm, Real, Tape, Tensor, Var};

type LinearGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &[T],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> LinearGrads<T> {
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let cout = w.shape()[0];
    let gx = want_x.then(|| {
        let mut g = vec![T::zero(); n * cin];
        gemm(false, false, n, cin, cout, T::one(), grad, w.data(), T::zero(), &mut g);
        g
    });
    let gw = want_w.then(|| {
        let mut g = vec![T::zero(); cout * cin];
        gemm(true, false, cout, cin, n, T::one(), grad, x.data(), T::zero(), &mut g);
        g
    });
    let gb = want_b.then(|| {
        let mut g = vec![T::zero(); cout];
        for row in grad.chunks_exact(cout) {
            g.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
        g
    });
    (gx, gw, gb)
}

pub(crate) fn channel_scale_backward<T: Real>(
    x: &Tensor<T>,
    gate: &Tensor<T>,
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let plane = x.shape()[2] * x.shape()[3];
    let mut gx = vec![T::zero(); x.numel()];
    let mut gg = vec![T::zero(); gate.numel()];
    for (nc, &s) in gate.data().iter().enumerate() {
        let range = nc * plane..(nc + 1) * plane;
        let mut acc = T::zero();
        for i in range {
            gx[i] = grad[i] * s;
            acc += grad[i] * x.data()[i];
        }
        gg[nc] = acc;
    }
    (gx, gg)
}

impl<T: Real> Tape<T> {
    /// `[N, Cin] x [Cout, Cin]^T + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        let (&[n, cin], &[cout, wcin]) = (x.shape(), w.shape()) else {
            return Err(shape_err!(
                "linear expects [N, Cin] and [Cout, Cin], got {:?} and {:?}",
                x.shape(),
                w.shape()
            ));
        };
        if cin != wcin {
            return Err(shape_err!("linear inner dimensions {cin} vs {wcin}"));
        }
        let mut out = vec![T::zero(); n * cout];
        gemm(false, true, n, cout, cin, T::one(), x.data(), w.data(), T::zero(), &mut out);
        if let Some(b) = bias {
            let b = self.value(b);
            if b.shape() != [cout] {
                return Err(shape_err!("linear bias must be [{cout}], got {:?}", b.shape()));
            }
            for row in out.chunks_exact_mut(cout) {
                row.iter_mut().zip(b.data()).for_each(|(o, &b)| *o += b);
            }
        }
        self.add_flops(flops::affine((n * cout * cin) as u64, (n * cout) as u64, bias.is_some()));
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_requires_grad(&deps);
        let value = Tensor::new(vec![n, cout], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        self.add_flops(flops::ADD_PER_ELEMENT * value.numel() as u64);
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.requires_grad(input);
        self.push(value, Op::Sum { input }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor::scalar(x.sum() / T::lit(x.numel().max(1) as f64));
        let rg = self.requires_grad(input);
        self.push(value, Op::Mean { input }, rg)
    }

    /// Scales each `[H, W]` plane of `[N, C, H, W]` by the matching `[N, C]` gate.
    pub fn channel_scale(&mut self, input: Var, gate: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if self.shape(gate) != [n, c] {
            return Err(shape_err!(
                "channel gate must be [{n}, {c}], got {:?}",
                self.shape(gate)
            ));
        }
        let plane = h * w;
        let g = self.value(gate).data();
        let out = self
            .value(input)
            .data()
            .chunks_exact(plane.max(1))
            .zip(g)
            .flat_map(|(chunk, &s)| chunk.iter().map(move |&v| v * s))
            .collect();
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.add_flops(flops::SCALE_PER_ELEMENT * value.numel() as u64);
        let rg = self.any_requires_grad(&[input, gate]);
        Ok(self.push(value, Op::ChannelScale { input, gate }, rg))
    }
}
