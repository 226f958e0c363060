use crate::error::{invalid, shape_err, Result};
use crate::tensor::tape::Op;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Spatial padding amounts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pads {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Reflection (edge excluded) of coordinate `i` in `-pad..extent + pad`.
#[inline]
fn reflect(i: isize, extent: usize) -> usize {
    let n = extent as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

pub(crate) fn concat_backward<T: Real>(shapes: &[&[usize]], grad: &[T]) -> Vec<Vec<T>> {
    let n = shapes[0][0];
    let plane = shapes[0][2] * shapes[0][3];
    let total_c: usize = shapes.iter().map(|s| s[1]).sum();
    let mut out: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    for b in 0..n {
        let mut c0 = 0;
        for (i, s) in shapes.iter().enumerate() {
            let start = (b * total_c + c0) * plane;
            out[i].extend_from_slice(&grad[start..start + s[1] * plane]);
            c0 += s[1];
        }
    }
    out
}

pub(crate) fn reflect_pad_backward<T: Real>(in_shape: &[usize], p: Pads, grad: &[T]) -> Vec<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (h + p.top + p.bottom, w + p.left + p.right);
    let planes = in_shape[0] * in_shape[1];
    let mut gx = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        for oy in 0..ho {
            let y = reflect(oy as isize - p.top as isize, h);
            for ox in 0..wo {
                let x = reflect(ox as isize - p.left as isize, w);
                gx[pl * h * w + y * w + x] += grad[pl * ho * wo + oy * wo + ox];
            }
        }
    }
    gx
}

pub(crate) fn crop_backward<T: Real>(
    in_shape: &[usize],
    out_shape: &[usize],
    top: usize,
    left: usize,
    grad: &[T],
) -> Vec<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let planes = in_shape[0] * in_shape[1];
    let mut gx = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        for y in 0..ho {
            let src = &grad[pl * ho * wo + y * wo..pl * ho * wo + (y + 1) * wo];
            let dst = pl * h * w + (y + top) * w + left;
            gx[dst..dst + wo].copy_from_slice(src);
        }
    }
    gx
}

impl<T: Real> Tape<T> {
    /// Stacks `[N, Ci, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| invalid!("concat of zero tensors"))?;
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut total_c = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(shape_err!(
                    "concat needs equal N, H, W: {:?} vs {:?}",
                    self.shape(first),
                    self.shape(v)
                ));
            }
            total_c += vc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let rg = self.any_requires_grad(inputs);
        let value = Tensor::new(vec![n, total_c, h, w], out)?;
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }, rg))
    }

    /// Reflection padding of the two spatial axes; each pad must be smaller
    /// than the padded extent.
    pub fn reflect_pad2d(&mut self, input: Var, pads: Pads) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if pads == Pads::default() {
            return Ok(input);
        }
        if pads.top.max(pads.bottom) >= h || pads.left.max(pads.right) >= w {
            return Err(shape_err!("reflection pad {pads:?} too large for {h}x{w}"));
        }
        let (ho, wo) = (h + pads.top + pads.bottom, w + pads.left + pads.right);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for pl in 0..n * c {
            for oy in 0..ho {
                let y = reflect(oy as isize - pads.top as isize, h);
                for ox in 0..wo {
                    let xx = reflect(ox as isize - pads.left as isize, w);
                    out.push(x[pl * h * w + y * w + xx]);
                }
            }
        }
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::ReflectPad { input, pads }, rg))
    }

    /// Spatial window `[top, top + height) x [left, left + width)`.
    pub fn crop2d(
        &mut self,
        input: Var,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if top + height > h || left + width > w {
            return Err(shape_err!("crop {height}x{width}+{top}+{left} exceeds {h}x{w}"));
        }
        if (top, left, height, width) == (0, 0, h, w) {
            return Ok(input);
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * height * width);
        for pl in 0..n * c {
            for y in top..top + height {
                let row = pl * h * w + y * w;
                out.extend_from_slice(&x[row + left..row + left + width]);
            }
        }
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![n, c, height, width], out)?;
        Ok(self.push(value, Op::Crop { input, top, left }, rg))
    }
}
