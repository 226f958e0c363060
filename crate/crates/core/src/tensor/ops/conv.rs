//! 2-D cross-correlation with stride, zero padding and dilation.
//!
//! Two interchangeable kernels: `Im2col` lowers each image to a column
//! matrix and calls GEMM; `Direct` is the plain seven-loop definition and
//! serves as the reference.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::tape::Op;
use crate::tensor::{flops, gemm, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    #[default]
    Im2col,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// `floor((extent + 2 padding - dilation (kernel - 1) - 1) / stride) + 1`,
/// or `None` when the dilated kernel does not fit.
pub fn conv_output_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = extent + 2 * padding;
    (stride > 0 && kernel > 0 && span <= padded).then(|| (padded - span) / stride + 1)
}

fn geometry(
    input: &[usize],
    weight: &[usize],
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<ConvGeometry> {
    let &[n, c, h, w] = input else {
        return Err(shape_err!("conv2d input must be [N, C, H, W], got {input:?}"));
    };
    let &[k, wc, kh, kw] = weight else {
        return Err(shape_err!("conv2d weight must be [K, C, kh, kw], got {weight:?}"));
    };
    if stride == 0 || dilation == 0 {
        return Err(invalid!("conv2d stride and dilation must be positive"));
    }
    if wc != c {
        return Err(shape_err!("conv2d weight expects {wc} channels, input has {c}"));
    }
    let ho = conv_output_extent(h, kh, stride, padding, dilation);
    let wo = conv_output_extent(w, kw, stride, padding, dilation);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        return Err(shape_err!(
            "dilated {kh}x{kw} kernel (dilation {dilation}) exceeds padded input {h}x{w} (padding {padding})"
        ));
    };
    Ok(ConvGeometry {
        n,
        c,
        h,
        w,
        k,
        kh,
        kw,
        stride,
        padding,
        dilation,
        ho,
        wo,
    })
}

/// Offset of the input sample a kernel tap reads, or `None` in the padding.
#[inline]
fn src_index(out: usize, tap: usize, g: &ConvGeometry, extent: usize) -> Option<usize> {
    let pos = (out * g.stride + tap * g.dilation) as isize - g.padding as isize;
    (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
}

fn im2col<T: Real>(image: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let chan = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * plane;
                for oy in 0..g.ho {
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    match src_index(oy, i, g, g.h) {
                        None => dst.fill(T::zero()),
                        Some(y) => {
                            let src_row = &chan[y * g.w..(y + 1) * g.w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = src_index(ox, j, g, g.w).map_or(T::zero(), |x| src_row[x]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, image: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let chan = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * plane;
                for oy in 0..g.ho {
                    let Some(y) = src_index(oy, i, g, g.h) else {
                        continue;
                    };
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for (ox, &v) in src.iter().enumerate() {
                        if let Some(x) = src_index(ox, j, g, g.w) {
                            chan[y * g.w + x] += v;
                        }
                    }
                }
            }
        }
    }
}

fn forward_im2col<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_size = g.c * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.k * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plane] };
    for n in 0..g.n {
        let image = &x[n * in_size..(n + 1) * in_size];
        let col_ref: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(image, g, &mut cols);
            &cols
        };
        let dst = &mut out[n * g.k * plane..(n + 1) * g.k * plane];
        gemm(false, false, g.k, plane, rows, T::one(), w, col_ref, T::zero(), dst);
        if let Some(b) = b {
            for (k, chunk) in dst.chunks_exact_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[k]);
            }
        }
    }
    out
}

fn forward_direct<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.k * g.out_plane()];
    for n in 0..g.n {
        for k in 0..g.k {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = b.map_or(T::zero(), |b| b[k]);
                    for c in 0..g.c {
                        for i in 0..g.kh {
                            let Some(y) = src_index(oy, i, g, g.h) else { continue };
                            for j in 0..g.kw {
                                let Some(xx) = src_index(ox, j, g, g.w) else { continue };
                                acc += x[((n * g.c + c) * g.h + y) * g.w + xx]
                                    * w[((k * g.c + c) * g.kh + i) * g.kw + j];
                            }
                        }
                    }
                    out[((n * g.k + k) * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Plain-loop convolution on tensors, independent of the tape.
pub fn conv2d_direct_reference<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), weight.shape(), stride, padding, dilation)?;
    let out = forward_direct(input.data(), weight.data(), bias.map(|b| b.data()), &g);
    Tensor::new(vec![g.n, g.k, g.ho, g.wo], out)
}

pub(crate) fn bias_grad<T: Real>(grad: &[T], g: &ConvGeometry) -> Vec<T> {
    let plane = g.out_plane();
    let mut gb = vec![T::zero(); g.k];
    for (idx, chunk) in grad.chunks_exact(plane).enumerate() {
        gb[idx % g.k] += chunk.iter().copied().sum();
    }
    gb
}

/// Returns `[d input, d weight]`, each only when requested.
pub(crate) fn backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &[T],
    g: &ConvGeometry,
    algo: ConvAlgo,
    want_input: bool,
    want_weight: bool,
) -> [Option<Vec<T>>; 2] {
    match algo {
        ConvAlgo::Im2col => backward_im2col(input.data(), weight.data(), grad, g, want_input, want_weight),
        ConvAlgo::Direct => backward_direct(input.data(), weight.data(), grad, g, want_input, want_weight),
    }
}

fn backward_im2col<T: Real>(
    x: &[T],
    w: &[T],
    grad: &[T],
    g: &ConvGeometry,
    want_input: bool,
    want_weight: bool,
) -> [Option<Vec<T>>; 2] {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_size = g.c * g.h * g.w;
    let mut gx = want_input.then(|| vec![T::zero(); x.len()]);
    let mut gw = want_weight.then(|| vec![T::zero(); w.len()]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * plane }];
    let mut dcols = vec![T::zero(); rows * plane];
    for n in 0..g.n {
        let dy = &grad[n * g.k * plane..(n + 1) * g.k * plane];
        let image = &x[n * in_size..(n + 1) * in_size];
        if let Some(gw) = gw.as_mut() {
            let col_ref: &[T] = if g.is_pointwise() {
                image
            } else {
                im2col(image, g, &mut cols);
                &cols
            };
            gemm(false, true, g.k, rows, plane, T::one(), dy, col_ref, T::one(), gw);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[n * in_size..(n + 1) * in_size];
            if g.is_pointwise() {
                gemm(true, false, rows, plane, g.k, T::one(), w, dy, T::zero(), dst);
            } else {
                gemm(true, false, rows, plane, g.k, T::one(), w, dy, T::zero(), &mut dcols);
                col2im(&dcols, g, dst);
            }
        }
    }
    [gx, gw]
}

fn backward_direct<T: Real>(
    x: &[T],
    w: &[T],
    grad: &[T],
    g: &ConvGeometry,
    want_input: bool,
    want_weight: bool,
) -> [Option<Vec<T>>; 2] {
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    for n in 0..g.n {
        for k in 0..g.k {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let dy = grad[((n * g.k + k) * g.ho + oy) * g.wo + ox];
                    for c in 0..g.c {
                        for i in 0..g.kh {
                            let Some(y) = src_index(oy, i, g, g.h) else { continue };
                            for j in 0..g.kw {
                                let Some(xx) = src_index(ox, j, g, g.w) else { continue };
                                let xi = ((n * g.c + c) * g.h + y) * g.w + xx;
                                let wi = ((k * g.c + c) * g.kh + i) * g.kw + j;
                                gx[xi] += dy * w[wi];
                                gw[wi] += dy * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    [want_input.then_some(gx), want_weight.then_some(gw)]
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `[N, C, H, W]` input with `[K, C, kh, kw]` weights.
    /// `dilation > 1` gives atrous convolution.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        let g = geometry(self.shape(input), self.shape(weight), stride, padding, dilation)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.k] {
                return Err(shape_err!("conv2d bias must be [{}], got {:?}", g.k, self.shape(b)));
            }
        }
        let algo = self.conv_algo();
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = bias.map(|b| self.value(b).data());
        let out = match algo {
            ConvAlgo::Im2col => forward_im2col(x, w, b, &g),
            ConvAlgo::Direct => forward_direct(x, w, b, &g),
        };
        let outputs = (g.n * g.k * g.out_plane()) as u64;
        self.add_flops(flops::affine(
            outputs * g.col_rows() as u64,
            outputs,
            bias.is_some(),
        ));
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_requires_grad(&deps);
        let value = Tensor::new(vec![g.n, g.k, g.ho, g.wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom: g,
                algo,
            },
            rg,
        ))
    }
}
