//! Direct-loop 2-D cross-correlation and its adjoints.
//!
//! Batched variants split work across samples with rayon; every reduction
//! runs in a fixed order so results are bitwise reproducible.

use super::Tensor;
use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

fn output_extent(size: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv2d stride must be positive"));
    }
    let span = size + 2 * pad;
    if span < k || !(span - k).is_multiple_of(stride) {
        return Err(Error::shape(format!(
            "conv2d {axis}: ({size} + 2*{pad} - {k}) / {stride} + 1 is not a positive integer"
        )));
    }
    Ok((span - k) / stride + 1)
}

impl Geometry {
    fn new(input: &[usize], kernels: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [c_in, h, w] = input else {
            return Err(Error::shape(format!("conv2d input must be C x H x W, got {input:?}")));
        };
        let [c_out, kc, kh, kw] = kernels else {
            return Err(Error::shape(format!("conv2d kernels must be rank 4, got {kernels:?}")));
        };
        if kc != c_in {
            return Err(Error::shape(format!("conv2d kernels expect {kc} channels, input has {c_in}")));
        }
        Ok(Geometry {
            c_in: *c_in,
            h: *h,
            w: *w,
            c_out: *c_out,
            kh: *kh,
            kw: *kw,
            ho: output_extent(*h, *kh, stride, pad, "height")?,
            wo: output_extent(*w, *kw, stride, pad, "width")?,
            stride,
            pad,
        })
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.c_out * self.ho * self.wo
    }

    /// Input coordinate for output coordinate `o` at kernel offset `k`.
    #[inline]
    fn src(&self, o: usize, k: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0).then_some(i as usize)
    }

    /// Output columns `[lo, hi)` whose source column at offset `kx` is in bounds.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(s) };
        // largest ox with ox*s + kx - pad <= w - 1
        let limit = self.w + self.pad;
        let hi = if limit <= kx { 0 } else { ((limit - kx - 1) / s + 1).min(self.wo) };
        (lo.min(hi), hi)
    }
}

fn forward_sample(g: &Geometry, input: &[f64], kernels: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
    for oc in 0..g.c_out {
        let out_plane = &mut out[oc * plane_out..(oc + 1) * plane_out];
        for ic in 0..g.c_in {
            let in_plane = &input[ic * plane_in..(ic + 1) * plane_in];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wgt = kernels[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    let (lo, hi) = g.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..g.ho {
                        let Some(iy) = g.src(oy, ky).filter(|&iy| iy < g.h) else { continue };
                        let in_row = &in_plane[iy * g.w..(iy + 1) * g.w];
                        let out_row = &mut out_plane[oy * g.wo..(oy + 1) * g.wo];
                        if g.stride == 1 {
                            let ix0 = lo + kx - g.pad;
                            for (o, &x) in out_row[lo..hi].iter_mut().zip(&in_row[ix0..ix0 + hi - lo]) {
                                *o += wgt * x;
                            }
                        } else {
                            for ox in lo..hi {
                                out_row[ox] += wgt * in_row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn backward_input_sample(g: &Geometry, grad_out: &[f64], kernels: &[f64], grad_in: &mut [f64]) {
    grad_in.iter_mut().for_each(|x| *x = 0.0);
    let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
    for ic in 0..g.c_in {
        let gin_plane = &mut grad_in[ic * plane_in..(ic + 1) * plane_in];
        for oc in 0..g.c_out {
            let gout_plane = &grad_out[oc * plane_out..(oc + 1) * plane_out];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wgt = kernels[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    let (lo, hi) = g.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..g.ho {
                        let Some(iy) = g.src(oy, ky).filter(|&iy| iy < g.h) else { continue };
                        let gout_row = &gout_plane[oy * g.wo..(oy + 1) * g.wo];
                        let gin_row = &mut gin_plane[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = lo + kx - g.pad;
                            for (gi, &go) in gin_row[ix0..ix0 + hi - lo].iter_mut().zip(&gout_row[lo..hi]) {
                                *gi += wgt * go;
                            }
                        } else {
                            for ox in lo..hi {
                                gin_row[ox * g.stride + kx - g.pad] += wgt * gout_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn backward_kernels_sample(g: &Geometry, grad_out: &[f64], input: &[f64], grad_k: &mut [f64]) {
    let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
    for oc in 0..g.c_out {
        let gout_plane = &grad_out[oc * plane_out..(oc + 1) * plane_out];
        for ic in 0..g.c_in {
            let in_plane = &input[ic * plane_in..(ic + 1) * plane_in];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let (lo, hi) = g.col_range(kx);
                    let mut acc = 0.0;
                    if lo < hi {
                        for oy in 0..g.ho {
                            let Some(iy) = g.src(oy, ky).filter(|&iy| iy < g.h) else { continue };
                            let in_row = &in_plane[iy * g.w..(iy + 1) * g.w];
                            let gout_row = &gout_plane[oy * g.wo..(oy + 1) * g.wo];
                            if g.stride == 1 {
                                let ix0 = lo + kx - g.pad;
                                acc += gout_row[lo..hi]
                                    .iter()
                                    .zip(&in_row[ix0..ix0 + hi - lo])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            } else {
                                for ox in lo..hi {
                                    acc += gout_row[ox] * in_row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                    grad_k[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx] += acc;
                }
            }
        }
    }
}

/// Cross-correlation of one `C_in x H x W` image with `C_out x C_in x kH x kW` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = Geometry::new(input.shape(), kernels.shape(), stride, padding)?;
    let mut out = vec![0.0; g.out_len()];
    forward_sample(&g, input.data(), kernels.data(), &mut out);
    let dtype = input.dtype().join(kernels.dtype());
    Ok(Tensor::new(vec![g.c_out, g.ho, g.wo], out)?.with_dtype(dtype))
}

fn split_batch(shape: &[usize]) -> Result<(usize, &[usize])> {
    match shape {
        [b, rest @ ..] if rest.len() == 3 => Ok((*b, rest)),
        _ => Err(Error::shape(format!("expected B x C x H x W, got {shape:?}"))),
    }
}

/// [`conv2d`] over a `B x C_in x H x W` batch.
pub fn conv2d_batched(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (batch, sample) = split_batch(input.shape())?;
    let g = Geometry::new(sample, kernels.shape(), stride, padding)?;
    let mut out = vec![0.0; batch * g.out_len()];
    if g.out_len() > 0 {
        out.par_chunks_mut(g.out_len())
            .zip(input.data().par_chunks(g.in_len().max(1)))
            .for_each(|(o, x)| forward_sample(&g, x, kernels.data(), o));
    }
    let dtype = input.dtype().join(kernels.dtype());
    Ok(Tensor::new(vec![batch, g.c_out, g.ho, g.wo], out)?.with_dtype(dtype))
}

/// Gradient of a batched convolution with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    kernels: &Tensor,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (batch, sample) = split_batch(input_shape)?;
    let g = Geometry::new(sample, kernels.shape(), stride, padding)?;
    if grad_out.shape() != [batch, g.c_out, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "conv2d upstream gradient {:?} does not match output [{batch}, {}, {}, {}]",
            grad_out.shape(),
            g.c_out,
            g.ho,
            g.wo
        )));
    }
    let mut grad_in = vec![0.0; batch * g.in_len()];
    if g.in_len() > 0 {
        grad_in
            .par_chunks_mut(g.in_len())
            .zip(grad_out.data().par_chunks(g.out_len().max(1)))
            .for_each(|(gi, go)| backward_input_sample(&g, go, kernels.data(), gi));
    }
    let dtype = grad_out.dtype().join(kernels.dtype());
    Ok(Tensor::new(input_shape.to_vec(), grad_in)?.with_dtype(dtype))
}

/// Gradient of a batched convolution with respect to its kernels, summed over the batch.
pub fn conv2d_backward_kernels(
    grad_out: &Tensor,
    input: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (batch, sample) = split_batch(input.shape())?;
    let g = Geometry::new(sample, kernel_shape, stride, padding)?;
    if grad_out.shape() != [batch, g.c_out, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "conv2d upstream gradient {:?} does not match output shape",
            grad_out.shape()
        )));
    }
    let klen: usize = kernel_shape.iter().product();
    let partials: Vec<Vec<f64>> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut gk = vec![0.0; klen];
            backward_kernels_sample(
                &g,
                &grad_out.data()[b * g.out_len()..(b + 1) * g.out_len()],
                &input.data()[b * g.in_len()..(b + 1) * g.in_len()],
                &mut gk,
            );
            gk
        })
        .collect();
    let mut total = vec![0.0; klen];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let dtype = grad_out.dtype().join(input.dtype());
    Ok(Tensor::new(kernel_shape.to_vec(), total)?.with_dtype(dtype))
}
