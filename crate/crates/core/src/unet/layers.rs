//! Layer primitives with hand-written backward passes.
//!
//! Every routine parallelises over output planes with rayon. Each output
//! element is produced by exactly one task with a fixed summation order, so
//! results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

use super::{Scalar, Tensor4};

/// Batch-norm epsilon added to the variance.
pub const BN_EPS: f64 = 1e-5;
/// Floor applied to probabilities before the logarithm in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// `out[y][x] += wv * src[y + dy][x + dx]` wherever the source is in range.
#[inline]
fn shift_accumulate<T: Scalar>(out: &mut [T], src: &[T], h: usize, w: usize, dy: isize, dx: isize, wv: T) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy.max(0)).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let orow = &mut out[y * w + x0..y * w + x1];
        let sx0 = (x0 as isize + dx) as usize;
        let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        for (o, &s) in orow.iter_mut().zip(srow) {
            *o += wv * s;
        }
    }
}

/// `sum_yx a[y][x] * b[y + dy][x + dx]` over the overlapping region.
#[inline]
fn shifted_dot<T: Scalar>(a: &[T], b: &[T], h: usize, w: usize, dy: isize, dx: isize) -> T {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy.max(0)).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(0) as usize;
    let mut acc = T::zero();
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let by = (y as isize + dy) as usize;
        let bx0 = (x0 as isize + dx) as usize;
        let arow = &a[y * w + x0..y * w + x1];
        let brow = &b[by * w + bx0..by * w + bx0 + (x1 - x0)];
        let mut row = T::zero();
        for (&p, &q) in arow.iter().zip(brow) {
            row += p * q;
        }
        acc += row;
    }
    acc
}

/// Stride-1 convolution with same padding. `w` is `(out, in, k, k)` with odd `k`.
pub fn conv2d<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, bias: Option<&[T]>) -> Tensor4<T> {
    let [n, cin, h, wd] = x.dims();
    let [cout, wcin, k, k2] = w.dims();
    assert_eq!(cin, wcin, "conv input channels");
    assert!(k == k2 && k % 2 == 1, "square odd kernel");
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let mut y = Tensor4::zeros([n, cout, h, wd]);
    y.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
        let (b, o) = (idx / cout, idx % cout);
        if let Some(bias) = bias {
            out.fill(bias[o]);
        }
        for i in 0..cin {
            let src = x.plane(b, i);
            let wbase = (o * cin + i) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w.data()[wbase + ky * k + kx];
                    shift_accumulate(out, src, h, wd, ky as isize - pad, kx as isize - pad, wv);
                }
            }
        }
    });
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor4<T>>,
    pub dw: Vec<T>,
    pub db: Option<Vec<T>>,
}

fn bias_grad<T: Scalar>(dy: &Tensor4<T>) -> Vec<T> {
    let [n, c, _, _] = dy.dims();
    (0..c)
        .map(|o| {
            let mut s = T::zero();
            for b in 0..n {
                s += dy.plane(b, o).iter().copied().sum::<T>();
            }
            s
        })
        .collect()
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dy: &Tensor4<T>,
    with_bias: bool,
    need_dx: bool,
) -> ConvGrads<T> {
    let [n, cin, h, wd] = x.dims();
    let [cout, _, k, _] = w.dims();
    let pad = (k / 2) as isize;
    let plane = h * wd;

    let dx = need_dx.then(|| {
        let mut dx = Tensor4::zeros([n, cin, h, wd]);
        dx.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
            let (b, i) = (idx / cin, idx % cin);
            for o in 0..cout {
                let g = dy.plane(b, o);
                let wbase = (o * cin + i) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.data()[wbase + ky * k + kx];
                        shift_accumulate(out, g, h, wd, pad - ky as isize, pad - kx as isize, wv);
                    }
                }
            }
        });
        dx
    });

    let mut dw = vec![T::zero(); cout * cin * k * k];
    dw.par_chunks_mut(cin * k * k).enumerate().for_each(|(o, out)| {
        for b in 0..n {
            let g = dy.plane(b, o);
            for i in 0..cin {
                let src = x.plane(b, i);
                for ky in 0..k {
                    for kx in 0..k {
                        out[(i * k + ky) * k + kx] += shifted_dot(g, src, h, wd, ky as isize - pad, kx as isize - pad);
                    }
                }
            }
        }
    });

    ConvGrads {
        dx,
        dw,
        db: with_bias.then(|| bias_grad(dy)),
    }
}

/// Transposed convolution with kernel = stride = `s`; `w` is `(out, in, s, s)`.
/// Output spatial size is exactly `s` times the input.
pub fn conv_transpose2d<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, bias: &[T]) -> Tensor4<T> {
    let [n, cin, h, wd] = x.dims();
    let [cout, wcin, s, _] = w.dims();
    assert_eq!(cin, wcin, "transposed conv input channels");
    let (oh, ow) = (h * s, wd * s);
    let mut y = Tensor4::zeros([n, cout, oh, ow]);
    y.data_mut().par_chunks_mut(oh * ow).enumerate().for_each(|(idx, out)| {
        let (b, o) = (idx / cout, idx % cout);
        out.fill(bias[o]);
        for i in 0..cin {
            let src = x.plane(b, i);
            for a in 0..s {
                for c in 0..s {
                    let wv = w.data()[((o * cin + i) * s + a) * s + c];
                    for yy in 0..h {
                        let orow = &mut out[(yy * s + a) * ow..(yy * s + a + 1) * ow];
                        let srow = &src[yy * wd..(yy + 1) * wd];
                        for (xx, &v) in srow.iter().enumerate() {
                            orow[xx * s + c] += wv * v;
                        }
                    }
                }
            }
        }
    });
    y
}

pub fn conv_transpose2d_backward<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, dy: &Tensor4<T>) -> ConvGrads<T> {
    let [n, cin, h, wd] = x.dims();
    let [cout, _, s, _] = w.dims();
    let ow = wd * s;

    let mut dx = Tensor4::zeros([n, cin, h, wd]);
    dx.data_mut().par_chunks_mut(h * wd).enumerate().for_each(|(idx, out)| {
        let (b, i) = (idx / cin, idx % cin);
        for o in 0..cout {
            let g = dy.plane(b, o);
            for a in 0..s {
                for c in 0..s {
                    let wv = w.data()[((o * cin + i) * s + a) * s + c];
                    for yy in 0..h {
                        let grow = &g[(yy * s + a) * ow..(yy * s + a + 1) * ow];
                        let orow = &mut out[yy * wd..(yy + 1) * wd];
                        for (xx, v) in orow.iter_mut().enumerate() {
                            *v += wv * grow[xx * s + c];
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![T::zero(); cout * cin * s * s];
    dw.par_chunks_mut(cin * s * s).enumerate().for_each(|(o, out)| {
        for b in 0..n {
            let g = dy.plane(b, o);
            for i in 0..cin {
                let src = x.plane(b, i);
                for a in 0..s {
                    for c in 0..s {
                        let mut acc = T::zero();
                        for yy in 0..h {
                            let grow = &g[(yy * s + a) * ow..(yy * s + a + 1) * ow];
                            let srow = &src[yy * wd..(yy + 1) * wd];
                            for (xx, &v) in srow.iter().enumerate() {
                                acc += v * grow[xx * s + c];
                            }
                        }
                        out[(i * s + a) * s + c] += acc;
                    }
                }
            }
        }
    });

    ConvGrads {
        dx: Some(dx),
        dw,
        db: Some(bias_grad(dy)),
    }
}

/// Non-overlapping `s x s` average pooling. Spatial dims must divide by `s`.
pub fn avg_pool<T: Scalar>(x: &Tensor4<T>, s: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    assert!(h % s == 0 && w % s == 0, "pool size must divide spatial dims");
    let (oh, ow) = (h / s, w / s);
    let scale = T::one() / T::lit((s * s) as f64);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    y.data_mut().par_chunks_mut(oh * ow).enumerate().for_each(|(idx, out)| {
        let src = x.plane(idx / c, idx % c);
        for yy in 0..oh {
            for xx in 0..ow {
                let mut acc = T::zero();
                for a in 0..s {
                    for b in 0..s {
                        acc += src[(yy * s + a) * w + xx * s + b];
                    }
                }
                out[yy * ow + xx] = acc * scale;
            }
        }
    });
    y
}

pub fn avg_pool_backward<T: Scalar>(dy: &Tensor4<T>, s: usize) -> Tensor4<T> {
    let [n, c, oh, ow] = dy.dims();
    let (h, w) = (oh * s, ow * s);
    let scale = T::one() / T::lit((s * s) as f64);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(idx, out)| {
        let g = dy.plane(idx / c, idx % c);
        for yy in 0..h {
            for xx in 0..w {
                out[yy * w + xx] = g[(yy / s) * ow + xx / s] * scale;
            }
        }
    });
    dx
}

/// Nearest-neighbour upsampling by `s`; used to sanity-check pooling.
pub fn upsample_nearest<T: Scalar>(x: &Tensor4<T>, s: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let mut y = Tensor4::zeros([n, c, h * s, w * s]);
    y.data_mut().par_chunks_mut(h * s * w * s).enumerate().for_each(|(idx, out)| {
        let src = x.plane(idx / c, idx % c);
        for yy in 0..h * s {
            for xx in 0..w * s {
                out[yy * w * s + xx] = src[(yy / s) * w + xx / s];
            }
        }
    });
    y
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    y.data_mut().par_iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
    y
}

/// Gradient through ReLU given its output.
pub fn relu_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    dx.data_mut()
        .par_iter_mut()
        .zip(y.data().par_iter())
        .for_each(|(g, &out)| {
            if out <= T::zero() {
                *g = T::zero();
            }
        });
    dx
}

/// Saved state of a train-mode batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

fn channel_sum<T: Scalar>(t: &Tensor4<T>, c: usize, f: impl Fn(T) -> T) -> T {
    let mut s = T::zero();
    for b in 0..t.batch() {
        let mut p = T::zero();
        for &v in t.plane(b, c) {
            p += f(v);
        }
        s += p;
    }
    s
}

fn apply_affine<T: Scalar>(x: &Tensor4<T>, scale: &[T], shift: &[T]) -> Tensor4<T> {
    let c = x.channels();
    let mut y = x.clone();
    let plane = x.plane_len();
    y.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
        let ch = idx % c;
        for v in out.iter_mut() {
            *v = *v * scale[ch] + shift[ch];
        }
    });
    y
}

/// Train-mode batch normalisation with batch statistics.
pub fn batch_norm_train<T: Scalar>(x: &Tensor4<T>, gamma: &[T], beta: &[T]) -> (Tensor4<T>, BnCache<T>) {
    let [n, c, h, w] = x.dims();
    let m = T::lit((n * h * w) as f64);
    let stats: Vec<(T, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mean = channel_sum(x, ch, |v| v) / m;
            let var = channel_sum(x, ch, |v| (v - mean) * (v - mean)) / m;
            (mean, var)
        })
        .collect();
    let mean: Vec<T> = stats.iter().map(|s| s.0).collect();
    let var: Vec<T> = stats.iter().map(|s| s.1).collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(BN_EPS)).sqrt()).collect();
    let shift: Vec<T> = mean.iter().zip(&inv_std).map(|(&mu, &is)| -mu * is).collect();
    let xhat = apply_affine(x, &inv_std, &shift);
    let y = apply_affine(&xhat, gamma, beta);
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

/// Inference-mode batch normalisation with running statistics.
pub fn batch_norm_infer<T: Scalar>(x: &Tensor4<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Tensor4<T> {
    let scale: Vec<T> = (0..gamma.len())
        .map(|c| gamma[c] / (var[c] + T::lit(BN_EPS)).sqrt())
        .collect();
    let shift: Vec<T> = (0..gamma.len()).map(|c| beta[c] - mean[c] * scale[c]).collect();
    apply_affine(x, &scale, &shift)
}

pub struct BnGrads<T> {
    pub dx: Tensor4<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub fn batch_norm_backward<T: Scalar>(cache: &BnCache<T>, gamma: &[T], dy: &Tensor4<T>) -> BnGrads<T> {
    let [n, c, h, w] = dy.dims();
    let m = T::lit((n * h * w) as f64);
    let sums: Vec<(T, T)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sdy = T::zero();
            let mut sdyx = T::zero();
            for b in 0..n {
                for (&g, &xh) in dy.plane(b, ch).iter().zip(cache.xhat.plane(b, ch)) {
                    sdy += g;
                    sdyx += g * xh;
                }
            }
            (sdy, sdyx)
        })
        .collect();
    let dbeta: Vec<T> = sums.iter().map(|s| s.0).collect();
    let dgamma: Vec<T> = sums.iter().map(|s| s.1).collect();

    let mut dx = Tensor4::zeros([n, c, h, w]);
    dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(idx, out)| {
        let (b, ch) = (idx / c, idx % c);
        let k = gamma[ch] * cache.inv_std[ch] / m;
        let (sdy, sdyx) = sums[ch];
        for ((o, &g), &xh) in out.iter_mut().zip(dy.plane(b, ch)).zip(cache.xhat.plane(b, ch)) {
            *o = k * (m * g - sdy - xh * sdyx);
        }
    });
    BnGrads { dx, dgamma, dbeta }
}

/// Per-pixel softmax over the channel axis.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = logits.dims();
    let plane = h * w;
    let mut out = Tensor4::zeros([n, c, h, w]);
    out.data_mut()
        .par_chunks_mut(c * plane)
        .enumerate()
        .for_each(|(b, chunk)| {
            let src = &logits.data()[b * c * plane..(b + 1) * c * plane];
            for p in 0..plane {
                let mut mx = T::neg_infinity();
                for ch in 0..c {
                    mx = mx.max(src[ch * plane + p]);
                }
                let mut z = T::zero();
                for ch in 0..c {
                    let e = (src[ch * plane + p] - mx).exp();
                    chunk[ch * plane + p] = e;
                    z += e;
                }
                for ch in 0..c {
                    chunk[ch * plane + p] /= z;
                }
            }
        });
    out
}

fn check_targets<T: Scalar>(probs: &Tensor4<T>, targets: &[BinaryMask], border: usize) -> Result<()> {
    let [n, c, h, w] = probs.dims();
    if targets.len() != n {
        return Err(Error::invalid(format!("{} targets for a batch of {n}", targets.len())));
    }
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::invalid("border leaves no pixels for the loss"));
    }
    for t in targets {
        if t.width() != w - 2 * border || t.height() != h - 2 * border {
            return Err(Error::invalid(format!(
                "target {}x{} does not match cropped output {}x{}",
                t.width(),
                t.height(),
                w - 2 * border,
                h - 2 * border
            )));
        }
        if t.data().iter().any(|&v| v as usize >= c) {
            return Err(Error::invalid("target class out of range"));
        }
    }
    Ok(())
}

/// Mean cross-entropy `-log p[target]` over batch and pixels. `probs` and
/// `targets` must have the same spatial size (crop the network output first).
pub fn loss_xent<T: Scalar>(probs: &Tensor4<T>, targets: &[BinaryMask]) -> Result<T> {
    check_targets(probs, targets, 0)?;
    let [n, _, h, w] = probs.dims();
    let floor = T::lit(PROB_FLOOR);
    let mut total = 0.0f64;
    for (b, t) in targets.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let cls = t.data()[y * w + x] as usize;
                total -= probs.get(b, cls, y, x).max(floor).ln().as_f64();
            }
        }
    }
    Ok(T::lit(total / (n * h * w) as f64))
}

/// Gradient of the mean cross-entropy w.r.t. the logits, for probabilities
/// over the full (bordered) extent; the border receives no gradient.
pub fn xent_logit_grad<T: Scalar>(probs: &Tensor4<T>, targets: &[BinaryMask], border: usize) -> Result<Tensor4<T>> {
    check_targets(probs, targets, border)?;
    let [n, c, h, w] = probs.dims();
    let (th, tw) = (h - 2 * border, w - 2 * border);
    let inv_m = T::one() / T::lit((n * th * tw) as f64);
    let mut g = Tensor4::zeros([n, c, h, w]);
    let plane = h * w;
    g.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
        let (b, ch) = (idx / c, idx % c);
        let p = probs.plane(b, ch);
        let t = &targets[b];
        for y in 0..th {
            for x in 0..tw {
                let i = (y + border) * w + x + border;
                let onehot = if t.data()[y * tw + x] as usize == ch { T::one() } else { T::zero() };
                out[i] = (p[i] - onehot) * inv_m;
            }
        }
    });
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor4::from_vec([1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let mut w = Tensor4::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &w, None), x);
    }

    #[test]
    fn conv_box_kernel_same_padding() {
        let x = Tensor4::from_vec([1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let w = Tensor4::from_vec([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &w, Some(&[0.5]));
        assert_eq!(y.data(), &[4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5]);
    }

    #[test]
    fn transpose_shape_and_values() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 10.0, 100.0, 1000.0]).unwrap();
        let y = conv_transpose2d(&x, &w, &[0.0]);
        assert_eq!(y.dims(), [1, 1, 4, 4]);
        assert_eq!(y.get(0, 0, 0, 1), 10.0);
        assert_eq!(y.get(0, 0, 3, 3), 4000.0);
    }

    #[test]
    fn pool_then_upsample_constant() {
        let x = Tensor4::from_vec([2, 3, 4, 6], vec![2.5f32; 144]).unwrap();
        assert_eq!(upsample_nearest(&avg_pool(&x, 2), 2), x);
    }

    #[test]
    fn loss_reference_values() {
        let t = vec![BinaryMask::from_fn(3, 2, |r, c| (r + c) % 2 == 0)];
        let half = Tensor4::from_vec([1, 2, 2, 3], vec![0.5f64; 12]).unwrap();
        assert!((loss_xent(&half, &t).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let mut good = Tensor4::zeros([1, 2, 2, 3]);
        for y in 0..2 {
            for x in 0..3 {
                let cls = t[0].data()[y * 3 + x] as usize;
                good.data_mut()[cls * 6 + y * 3 + x] = 0.8;
                good.data_mut()[(1 - cls) * 6 + y * 3 + x] = 0.2;
            }
        }
        assert!((loss_xent(&good, &t).unwrap() - (-(0.8f64).ln())).abs() < 1e-12);

        let mut perfect = good.clone();
        for v in perfect.data_mut() {
            *v = if *v > 0.5 { 1.0 } else { 0.0 };
        }
        assert!(loss_xent(&perfect, &t).unwrap() <= 1e-11);
    }

    #[test]
    fn loss_rejects_mismatch() {
        let p = Tensor4::<f32>::zeros([1, 2, 4, 4]);
        assert!(loss_xent(&p, &[BinaryMask::zeros(3, 4)]).is_err());
        assert!(loss_xent(&p, &[]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let x = Tensor4::from_vec([1, 2, 1, 3], vec![0.0f64, 50.0, -3.0, 1.0, -50.0, 2.0]).unwrap();
        let p = softmax(&x);
        for i in 0..3 {
            assert!((p.data()[i] + p.data()[3 + i] - 1.0).abs() < 1e-12);
        }
    }
}
