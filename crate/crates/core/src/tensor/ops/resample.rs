use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::tensor::tape::Op;
use crate::tensor::{flops, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centers (`align_corners = false`), edge-clamped.
    #[default]
    Bilinear,
}

impl fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        })
    }
}

impl FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            other => Err(invalid!("unknown upsample mode {other:?}")),
        }
    }
}

/// Source taps `(lo, hi, frac)` for each output coordinate along one axis.
fn bilinear_taps(extent: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..extent * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(extent - 1);
            let hi = (lo + 1).min(extent - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub(crate) fn backward<T: Real>(
    in_shape: &[usize],
    scale: usize,
    mode: UpsampleMode,
    grad: &[T],
) -> Vec<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (h * scale, w * scale);
    let planes = in_shape[0] * in_shape[1];
    let mut gx = vec![T::zero(); planes * h * w];
    match mode {
        UpsampleMode::Nearest => {
            for p in 0..planes {
                for oy in 0..ho {
                    for ox in 0..wo {
                        gx[p * h * w + (oy / scale) * w + ox / scale] +=
                            grad[p * ho * wo + oy * wo + ox];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty = bilinear_taps(h, scale);
            let tx = bilinear_taps(w, scale);
            for p in 0..planes {
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::lit(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::lit(fx);
                        let g = grad[p * ho * wo + oy * wo + ox];
                        let one = T::one();
                        dst[y0 * w + x0] += g * (one - fy) * (one - fx);
                        dst[y0 * w + x1] += g * (one - fy) * fx;
                        dst[y1 * w + x0] += g * fy * (one - fx);
                        dst[y1 * w + x1] += g * fy * fx;
                    }
                }
            }
        }
    }
    gx
}

impl<T: Real> Tape<T> {
    /// Integer-factor spatial upsampling.
    pub fn upsample2d(&mut self, input: Var, scale: usize, mode: UpsampleMode) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4()?;
        if scale == 0 {
            return Err(invalid!("upsample scale must be at least 1"));
        }
        if h == 0 || w == 0 {
            return Err(invalid!("upsample of empty plane"));
        }
        let (ho, wo) = (h * scale, w * scale);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        match mode {
            UpsampleMode::Nearest => {
                for p in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            out[p * ho * wo + oy * wo + ox] =
                                x[p * h * w + (oy / scale) * w + ox / scale];
                        }
                    }
                }
            }
            UpsampleMode::Bilinear => {
                let ty = bilinear_taps(h, scale);
                let tx = bilinear_taps(w, scale);
                for p in 0..n * c {
                    let src = &x[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        let fy = T::lit(fy);
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let fx = T::lit(fx);
                            let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
                            let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
                            out[p * ho * wo + oy * wo + ox] = top + (bot - top) * fy;
                        }
                    }
                }
                self.add_flops(flops::BILINEAR_PER_OUTPUT * out.len() as u64);
            }
        }
        let rg = self.requires_grad(input);
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::Upsample { input, scale, mode }, rg))
    }
}
