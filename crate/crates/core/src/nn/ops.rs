//! Forward/backward primitives over NCHW batches.
//!
//! Convolutions run as im2col + GEMM (one GEMM per sample, writing straight
//! into the output view). Backward passes return input gradients plus
//! parameter gradients; callers accumulate the latter.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4, ArrayView3, Axis, Ix2, s};

use super::Scalar;
use crate::error::{Error, Result};

pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

fn im2col<F: Scalar>(x: ArrayView3<F>, k: usize, stride: usize, pad: usize) -> Array2<F> {
    let (c_in, h, w) = x.dim();
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut col = Array2::<F>::zeros((c_in * k * k, oh * ow));
    let xs = x.as_slice().expect("im2col: contiguous input");
    let cs = col.as_slice_mut().unwrap();
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = (c * h + iy as usize) * w;
                    let crow = base + oy * ow;
                    if stride == 1 {
                        // Contiguous run of valid ox.
                        let lo = kx.max(pad) - kx; // first ox with ix >= 0
                        let hi = (w + pad - kx).min(ow); // one past last valid ox
                        if lo < hi {
                            let ix0 = lo + kx - pad;
                            cs[crow + lo..crow + hi]
                                .copy_from_slice(&xs[xrow + ix0..xrow + ix0 + (hi - lo)]);
                        }
                    } else {
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                cs[crow + ox] = xs[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_accum<F: Scalar>(
    dcol: &Array2<F>,
    (c_in, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [F],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let ds = dcol.as_slice().unwrap();
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = (c * h + iy as usize) * w;
                    let crow = base + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[xrow + ix as usize] = dx[xrow + ix as usize] + ds[crow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x`: (N, C_in, H, W), `w`: (C_out, C_in, K, K), `b`: (C_out).
pub fn conv2d_forward<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    b: &Array1<F>,
    stride: usize,
    pad: usize,
) -> Result<Array4<F>> {
    let (n, c_in, h, wd) = x.dim();
    let (c_out, wc_in, k, k2) = w.dim();
    if wc_in != c_in || k != k2 {
        return Err(Error::Shape(format!(
            "conv2d: input channels {c_in} do not match kernel {wc_in}x{k}x{k2}"
        )));
    }
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::Shape(format!(
            "conv2d: input {h}x{wd} smaller than kernel {k} with pad {pad}"
        )));
    }
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(wd, k, stride, pad);
    let w_mat = w.view().into_shape((c_out, c_in * k * k)).unwrap();
    let mut y = Array4::<F>::zeros((n, c_out, oh, ow));
    for i in 0..n {
        let col = im2col(x.index_axis(Axis(0), i), k, stride, pad);
        let mut y_mat = y
            .index_axis_mut(Axis(0), i)
            .into_shape((c_out, oh * ow))
            .unwrap();
        general_mat_mul(F::one(), &w_mat, &col, F::zero(), &mut y_mat);
    }
    // Bias broadcast over batch and spatial dims.
    for i in 0..n {
        for (c, bc) in b.iter().enumerate() {
            y.slice_mut(s![i, c, .., ..]).mapv_inplace(|v| v + *bc);
        }
    }
    Ok(y)
}

/// Returns (dx, dw, db).
pub fn conv2d_backward<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    dy: &Array4<F>,
    stride: usize,
    pad: usize,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (n, c_in, h, wd) = x.dim();
    let (c_out, _, k, _) = w.dim();
    let (_, _, oh, ow) = dy.dim();
    let w_mat = w.view().into_shape((c_out, c_in * k * k)).unwrap();
    let mut dx = Array4::<F>::zeros((n, c_in, h, wd));
    let mut dw_mat = Array2::<F>::zeros((c_out, c_in * k * k));
    let mut db = Array1::<F>::zeros(c_out);
    let mut dcol = Array2::<F>::zeros((c_in * k * k, oh * ow));
    for i in 0..n {
        let col = im2col(x.index_axis(Axis(0), i), k, stride, pad);
        let dy_mat = dy
            .index_axis(Axis(0), i)
            .into_shape((c_out, oh * ow))
            .unwrap();
        general_mat_mul(F::one(), &dy_mat, &col.t(), F::one(), &mut dw_mat);
        general_mat_mul(F::one(), &w_mat.t(), &dy_mat, F::zero(), &mut dcol);
        let dx_slice = dx.index_axis_mut(Axis(0), i).into_slice().unwrap();
        col2im_accum(&dcol, (c_in, h, wd), k, stride, pad, dx_slice);
        for c in 0..c_out {
            db[c] = db[c] + dy_mat.row(c).sum();
        }
    }
    let dw = dw_mat.into_shape((c_out, c_in, k, k)).unwrap();
    (dx, dw, db)
}

pub fn relu_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_backward<F: Scalar>(x: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn leaky_relu_forward<F: Scalar>(x: &Array4<F>, slope: F) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

pub fn leaky_relu_backward<F: Scalar>(x: &Array4<F>, dy: &Array4<F>, slope: F) -> Array4<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = *d * slope;
        }
    });
    dx
}

/// Sigmoid followed by a clamp to [eps, 1-eps]. Returns the clamped output;
/// the same array serves as the backward cache.
pub fn sigmoid_clamped_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let eps = F::prob_eps();
    let hi = F::one() - eps;
    x.mapv(|v| {
        let s = F::one() / (F::one() + (-v).exp());
        if s < eps {
            eps
        } else if s > hi {
            hi
        } else {
            s
        }
    })
}

/// `y` is the clamped sigmoid output. Gradient is zero where the clamp was active.
pub fn sigmoid_clamped_backward<F: Scalar>(y: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let eps = F::prob_eps();
    let hi = F::one() - eps;
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &s| {
        if s <= eps || s >= hi {
            *d = F::zero();
        } else {
            *d = *d * s * (F::one() - s);
        }
    });
    dx
}

/// 2x2 max pooling with stride 2. Returns output and argmax index (0..4) per cell.
pub fn maxpool2_forward<F: Scalar>(x: &Array4<F>) -> (Array4<F>, Array4<u8>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::<F>::zeros((n, c, oh, ow));
    let mut idx = Array4::<u8>::zeros((n, c, oh, ow));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x[[i, ch, 2 * oy, 2 * ox]];
                    let mut bi = 0u8;
                    for (j, (dy_, dx_)) in [(0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = x[[i, ch, 2 * oy + dy_, 2 * ox + dx_]];
                        if v > best {
                            best = v;
                            bi = j as u8 + 1;
                        }
                    }
                    y[[i, ch, oy, ox]] = best;
                    idx[[i, ch, oy, ox]] = bi;
                }
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward<F: Scalar>(
    idx: &Array4<u8>,
    dy: &Array4<F>,
    (h, w): (usize, usize),
) -> Array4<F> {
    let (n, c, oh, ow) = dy.dim();
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let j = idx[[i, ch, oy, ox]] as usize;
                    let (ddy, ddx) = [(0, 0), (0, 1), (1, 0), (1, 1)][j];
                    dx[[i, ch, 2 * oy + ddy, 2 * ox + ddx]] = dy[[i, ch, oy, ox]];
                }
            }
        }
    }
    dx
}

/// Precomputed 1-D interpolation taps: output index -> (lo, hi, weight of hi).
fn bilinear_taps<F: Scalar>(in_dim: usize, out_dim: usize) -> Vec<(usize, usize, F)> {
    let scale = in_dim as f64 / out_dim as f64;
    (0..out_dim)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_dim - 1);
            let hi = (lo + 1).min(in_dim - 1);
            (lo, hi, F::from_f64(src - lo as f64))
        })
        .collect()
}

/// Bilinear resize to (oh, ow), `align_corners = false` convention.
pub fn bilinear_resize_forward<F: Scalar>(x: &Array4<F>, oh: usize, ow: usize) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let ty = bilinear_taps::<F>(h, oh);
    let tx = bilinear_taps::<F>(w, ow);
    let one = F::one();
    let mut y = Array4::<F>::zeros((n, c, oh, ow));
    for i in 0..n {
        for ch in 0..c {
            let xp = x.slice(s![i, ch, .., ..]);
            let mut yp = y.slice_mut(s![i, ch, .., ..]);
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = xp[[y0, x0]] * (one - wx) + xp[[y0, x1]] * wx;
                    let bot = xp[[y1, x0]] * (one - wx) + xp[[y1, x1]] * wx;
                    yp[[oy, ox]] = top * (one - wy) + bot * wy;
                }
            }
        }
    }
    y
}

pub fn bilinear_resize_backward<F: Scalar>(dy: &Array4<F>, ih: usize, iw: usize) -> Array4<F> {
    let (n, c, oh, ow) = dy.dim();
    let ty = bilinear_taps::<F>(ih, oh);
    let tx = bilinear_taps::<F>(iw, ow);
    let one = F::one();
    let mut dx = Array4::<F>::zeros((n, c, ih, iw));
    for i in 0..n {
        for ch in 0..c {
            let dyp = dy.slice(s![i, ch, .., ..]);
            let mut dxp = dx.slice_mut(s![i, ch, .., ..]);
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let g = dyp[[oy, ox]];
                    dxp[[y0, x0]] = dxp[[y0, x0]] + g * (one - wy) * (one - wx);
                    dxp[[y0, x1]] = dxp[[y0, x1]] + g * (one - wy) * wx;
                    dxp[[y1, x0]] = dxp[[y1, x0]] + g * wy * (one - wx);
                    dxp[[y1, x1]] = dxp[[y1, x1]] + g * wy * wx;
                }
            }
        }
    }
    dx
}

fn pool_bounds(o: usize, bins: usize, dim: usize) -> (usize, usize) {
    let start = o * dim / bins;
    let end = ((o + 1) * dim + bins - 1) / bins;
    (start, end)
}

/// Adaptive average pooling to a (bins x bins) grid.
pub fn adaptive_avg_pool_forward<F: Scalar>(x: &Array4<F>, bins: usize) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::<F>::zeros((n, c, bins, bins));
    for i in 0..n {
        for ch in 0..c {
            for by in 0..bins {
                let (y0, y1) = pool_bounds(by, bins, h);
                for bx in 0..bins {
                    let (x0, x1) = pool_bounds(bx, bins, w);
                    let region = x.slice(s![i, ch, y0..y1, x0..x1]);
                    let count = F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    y[[i, ch, by, bx]] = region.sum() / count;
                }
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward<F: Scalar>(
    dy: &Array4<F>,
    (h, w): (usize, usize),
) -> Array4<F> {
    let (n, c, bins, _) = dy.dim();
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            for by in 0..bins {
                let (y0, y1) = pool_bounds(by, bins, h);
                for bx in 0..bins {
                    let (x0, x1) = pool_bounds(bx, bins, w);
                    let count = F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    let g = dy[[i, ch, by, bx]] / count;
                    dx.slice_mut(s![i, ch, y0..y1, x0..x1])
                        .mapv_inplace(|v| v + g);
                }
            }
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;

/// Cached batch statistics from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<F> {
    pub mean: Array1<F>,
    pub inv_std: Array1<F>,
    /// Biased batch variance, for the running-average update.
    pub var: Array1<F>,
}

/// Batch normalization over (N, H, W) per channel, training mode.
pub fn batchnorm_forward_train<F: Scalar>(
    x: &Array4<F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
) -> (Array4<F>, BnCache<F>) {
    let (n, c, h, w) = x.dim();
    let m = F::from_f64((n * h * w) as f64);
    let eps = F::from_f64(BN_EPS);
    let mut mean = Array1::<F>::zeros(c);
    let mut var = Array1::<F>::zeros(c);
    for ch in 0..c {
        let xc = x.slice(s![.., ch, .., ..]);
        let mu = xc.sum() / m;
        let v = xc.fold(F::zero(), |acc, &val| acc + (val - mu) * (val - mu)) / m;
        mean[ch] = mu;
        var[ch] = v;
    }
    let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
    let mut y = x.clone();
    for ch in 0..c {
        let (mu, istd, g, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        y.slice_mut(s![.., ch, .., ..])
            .mapv_inplace(|v| (v - mu) * istd * g + be);
    }
    (y, BnCache { mean, inv_std, var })
}

/// Batch normalization using running statistics (eval mode).
pub fn batchnorm_forward_eval<F: Scalar>(
    x: &Array4<F>,
    gamma: &Array1<F>,
    beta: &Array1<F>,
    run_mean: &Array1<F>,
    run_var: &Array1<F>,
) -> Array4<F> {
    let c = x.dim().1;
    let eps = F::from_f64(BN_EPS);
    let mut y = x.clone();
    for ch in 0..c {
        let istd = F::one() / (run_var[ch] + eps).sqrt();
        let (mu, g, be) = (run_mean[ch], gamma[ch], beta[ch]);
        y.slice_mut(s![.., ch, .., ..])
            .mapv_inplace(|v| (v - mu) * istd * g + be);
    }
    y
}

/// Returns (dx, dgamma, dbeta), training-mode statistics.
pub fn batchnorm_backward<F: Scalar>(
    x: &Array4<F>,
    gamma: &Array1<F>,
    cache: &BnCache<F>,
    dy: &Array4<F>,
) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (n, c, h, w) = x.dim();
    let m = F::from_f64((n * h * w) as f64);
    let mut dgamma = Array1::<F>::zeros(c);
    let mut dbeta = Array1::<F>::zeros(c);
    let mut dx = Array4::<F>::zeros(x.raw_dim());
    for ch in 0..c {
        let (mu, istd) = (cache.mean[ch], cache.inv_std[ch]);
        let xc = x.slice(s![.., ch, .., ..]);
        let dyc = dy.slice(s![.., ch, .., ..]);
        let mut sum_dy = F::zero();
        let mut sum_dy_xhat = F::zero();
        ndarray::Zip::from(&xc).and(&dyc).for_each(|&xv, &dv| {
            sum_dy = sum_dy + dv;
            sum_dy_xhat = sum_dy_xhat + dv * (xv - mu) * istd;
        });
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * istd / m;
        let mut dxc = dx.slice_mut(s![.., ch, .., ..]);
        ndarray::Zip::from(&mut dxc)
            .and(&xc)
            .and(&dyc)
            .for_each(|d, &xv, &dv| {
                let xhat = (xv - mu) * istd;
                *d = scale * (m * dv - sum_dy - xhat * sum_dy_xhat);
            });
    }
    (dx, dgamma, dbeta)
}
