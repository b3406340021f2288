//! 2-D convolution (cross-correlation) and its transpose via im2col.

use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{check_shape, Result, Tape, Tensor, TensorError};

/// Output extent of a convolution, or `None` when the geometry does not tile exactly.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    let span = (input + 2 * padding).checked_sub(kernel)?;
    (span % stride == 0).then_some(span / stride + 1)
}

/// Output extent of a transposed convolution: `(input − 1)·stride − 2·padding + kernel`.
pub fn deconv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * padding).filter(|&v| v > 0)
}

/// Geometry of an image that a `k×k` window slides over, producing `ho×wo` positions.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// `cols[(ci·k + ki)·k + kj][oy·wo + ox] = x[ci][oy·s + ki − p][ox·s + kj − p]`.
fn im2col(x: &[f64], g: Geom, cols: &mut [f64]) {
    let npos = g.positions();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the image.
fn col2im(cols: &[f64], g: Geom, x: &mut [f64]) {
    let npos = g.positions();
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, s) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(x: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<(usize, usize, Geom)> {
    check_shape("conv2d", x, 4)?;
    check_shape("conv2d", kernels, 4)?;
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [f, kc, kh, kw] = [kernels.shape()[0], kernels.shape()[1], kernels.shape()[2], kernels.shape()[3]];
    if kc != c || kh != kw {
        return Err(TensorError::Dimension { op: "conv2d", lhs: x.shape().to_vec(), rhs: kernels.shape().to_vec() });
    }
    let (ho, wo) = match (conv_out_extent(h, kh, stride, padding), conv_out_extent(w, kh, stride, padding)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(TensorError::Config {
                op: "conv2d",
                msg: format!(
                    "input {h}x{w} with kernel {kh}, stride {stride}, padding {padding} gives a non-integral output"
                ),
            })
        }
    };
    Ok((n, f, Geom { c, h, w, k: kh, stride, pad: padding, ho, wo }))
}

/// Plain convolution without a tape. `kernels` is `f×c×k×k`.
pub(crate) fn conv2d_raw(x: &[f64], n: usize, kernels: &[f64], f: usize, g: Geom2) -> Vec<f64> {
    let g = g.0;
    let (rows, npos) = (g.rows(), g.positions());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![0.0; n * f * npos];
    let mut cols = vec![0.0; rows * npos];
    let km = MatRef::new(kernels, f, rows);
    for b in 0..n {
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut cols);
        gemm(1.0, km, MatRef::new(&cols, rows, npos), 0.0, &mut out[b * f * npos..(b + 1) * f * npos]);
    }
    out
}

/// Plain transposed convolution without a tape. `kernels` is `c×f×k×k` where `c`
/// is the input channel count; the geometry describes the *output* image.
pub(crate) fn deconv2d_raw(x: &[f64], n: usize, kernels: &[f64], c_in: usize, g: Geom2) -> Vec<f64> {
    let g = g.0;
    let (rows, npos) = (g.rows(), g.positions());
    let out_len = g.c * g.h * g.w;
    let mut out = vec![0.0; n * out_len];
    let mut cols = vec![0.0; rows * npos];
    let km = MatRef::new(kernels, c_in, rows);
    for b in 0..n {
        gemm(1.0, km.t(), MatRef::new(&x[b * c_in * npos..(b + 1) * c_in * npos], c_in, npos), 0.0, &mut cols);
        col2im(&cols, g, &mut out[b * out_len..(b + 1) * out_len]);
    }
    out
}

/// Opaque geometry handle for the raw kernels used by generator inversion.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom2(Geom);

impl Geom2 {
    /// Geometry of a `c×h×w` image scanned by a `k×k` window.
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let ho = conv_out_extent(h, k, stride, pad)?;
        let wo = conv_out_extent(w, k, stride, pad)?;
        Some(Geom2(Geom { c, h, w, k, stride, pad, ho, wo }))
    }
}

impl Tape {
    /// Cross-correlation of `x: N×C×H×W` with `kernels: F×C×k×k`.
    pub fn conv2d(&self, x: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (n, f, g) = conv_geom(x, kernels, stride, padding)?;
        let out = {
            let xd = x.data();
            let kd = kernels.data();
            conv2d_raw(&xd, n, &kd, f, Geom2(g))
        };
        let y = Tensor::from_op("conv2d", vec![n, f, g.ho, g.wo], out)?;
        if self.wants(&[x, kernels]) {
            let (xs, ks) = (x.clone(), kernels.clone());
            self.record(
                &[x, kernels],
                &y,
                Box::new(move |grad| {
                    let xd = xs.data();
                    let kd = ks.data();
                    let (rows, npos) = (g.rows(), g.positions());
                    let in_len = g.c * g.h * g.w;
                    let km = MatRef::new(&kd, f, rows);
                    let mut dx = vec![0.0; n * in_len];
                    let mut dk = vec![0.0; f * rows];
                    let mut cols = vec![0.0; rows * npos];
                    let mut dcols = vec![0.0; rows * npos];
                    for b in 0..n {
                        let gb = MatRef::new(&grad[b * f * npos..(b + 1) * f * npos], f, npos);
                        im2col(&xd[b * in_len..(b + 1) * in_len], g, &mut cols);
                        gemm(1.0, gb, MatRef::new(&cols, rows, npos).t(), 1.0, &mut dk);
                        gemm(1.0, km.t(), gb, 0.0, &mut dcols);
                        col2im(&dcols, g, &mut dx[b * in_len..(b + 1) * in_len]);
                    }
                    vec![Some(dx), Some(dk)]
                }),
            );
        }
        Ok(y)
    }

    /// Transposed convolution of `x: N×C×H×W` with `kernels: C×F×k×k`, the linear
    /// adjoint of [`Tape::conv2d`] with the same kernels, stride and padding.
    pub fn deconv2d(&self, x: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        check_shape("deconv2d", x, 4)?;
        check_shape("deconv2d", kernels, 4)?;
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [kc, f, kh, kw] = [kernels.shape()[0], kernels.shape()[1], kernels.shape()[2], kernels.shape()[3]];
        if kc != c || kh != kw {
            return Err(TensorError::Dimension {
                op: "deconv2d",
                lhs: x.shape().to_vec(),
                rhs: kernels.shape().to_vec(),
            });
        }
        let (ho, wo) = match (deconv_out_extent(h, kh, stride, padding), deconv_out_extent(w, kh, stride, padding)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::Config {
                    op: "deconv2d",
                    msg: format!("input {h}x{w} with kernel {kh}, stride {stride}, padding {padding} has no output"),
                })
            }
        };
        let g = Geom { c: f, h: ho, w: wo, k: kh, stride, pad: padding, ho: h, wo: w };
        let out = {
            let xd = x.data();
            let kd = kernels.data();
            deconv2d_raw(&xd, n, &kd, c, Geom2(g))
        };
        let y = Tensor::from_op("deconv2d", vec![n, f, ho, wo], out)?;
        if self.wants(&[x, kernels]) {
            let (xs, ks) = (x.clone(), kernels.clone());
            self.record(
                &[x, kernels],
                &y,
                Box::new(move |grad| {
                    let xd = xs.data();
                    let kd = ks.data();
                    let (rows, npos) = (g.rows(), g.positions());
                    let out_len = f * ho * wo;
                    let km = MatRef::new(&kd, c, rows);
                    let mut dx = vec![0.0; n * c * npos];
                    let mut dk = vec![0.0; c * rows];
                    let mut gcols = vec![0.0; rows * npos];
                    for b in 0..n {
                        im2col(&grad[b * out_len..(b + 1) * out_len], g, &mut gcols);
                        let gc = MatRef::new(&gcols, rows, npos);
                        gemm(1.0, km, gc, 0.0, &mut dx[b * c * npos..(b + 1) * c * npos]);
                        let xb = MatRef::new(&xd[b * c * npos..(b + 1) * c * npos], c, npos);
                        gemm(1.0, xb, gc.t(), 1.0, &mut dk);
                    }
                    vec![Some(dx), Some(dk)]
                }),
            );
        }
        Ok(y)
    }
}
