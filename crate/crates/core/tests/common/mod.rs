#![allow(dead_code)]

use lesionpipe_core::imaging::{BinaryMask, GrayImage};
use lesionpipe_core::unet::layers::{
    avg_pool, avg_pool_backward, batch_norm_backward, batch_norm_train, conv2d, conv2d_backward, conv_transpose2d,
    conv_transpose2d_backward, loss_xent, relu, relu_backward, softmax, xent_logit_grad,
};
use lesionpipe_core::unet::{backward, forward, Mode, Tensor4, UNetConfig, UNetParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| / (|a| + |b|)` over whole vectors; 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    let n = dims.iter().product();
    Tensor4::from_vec(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central differences of `f` at `x`, entry by entry.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let up = f(&p);
            p[i] = x[i] - FD_STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with(dims: [usize; 4], data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(dims, data.to_vec()).unwrap()
}

fn random_masks(rng: &mut ChaCha8Rng, n: usize, side: usize) -> Vec<BinaryMask> {
    (0..n).map(|_| BinaryMask::from_fn(side, side, |_, _| rng.random_bool(0.4))).collect()
}

/// Relative error of analytic against numeric gradients for every layer,
/// each checked through the scalar probe `sum(y * r)` with random `r`.
pub fn layer_gradient_errors(seed: u64) -> Vec<(String, f64)> {
    let mut g = rng(seed);
    let mut out = Vec::new();

    // same-padding convolution
    let x = random_tensor(&mut g, [2, 3, 5, 5], -1.0, 1.0);
    let w = random_tensor(&mut g, [4, 3, 3, 3], -0.5, 0.5);
    let b: Vec<f64> = (0..4).map(|_| g.random_range(-0.5..0.5)).collect();
    let r = random_tensor(&mut g, [2, 4, 5, 5], -1.0, 1.0);
    let an = conv2d_backward(&x, &w, &r, true, true);
    let nx = numeric_grad(|d| dot(&conv2d(&with(x.dims(), d), &w, Some(&b)), &r), x.data());
    let nw = numeric_grad(|d| dot(&conv2d(&x, &with(w.dims(), d), Some(&b)), &r), w.data());
    let nb = numeric_grad(|d| dot(&conv2d(&x, &w, Some(d)), &r), &b);
    out.push(("conv2d/x".into(), rel_err(an.dx.unwrap().data(), &nx)));
    out.push(("conv2d/w".into(), rel_err(&an.dw, &nw)));
    out.push(("conv2d/b".into(), rel_err(&an.db.unwrap(), &nb)));

    // transposed convolution, kernel = stride = 2
    let x = random_tensor(&mut g, [2, 3, 3, 3], -1.0, 1.0);
    let w = random_tensor(&mut g, [2, 3, 2, 2], -0.5, 0.5);
    let b: Vec<f64> = (0..2).map(|_| g.random_range(-0.5..0.5)).collect();
    let r = random_tensor(&mut g, [2, 2, 6, 6], -1.0, 1.0);
    let an = conv_transpose2d_backward(&x, &w, &r);
    let nx = numeric_grad(|d| dot(&conv_transpose2d(&with(x.dims(), d), &w, &b), &r), x.data());
    let nw = numeric_grad(|d| dot(&conv_transpose2d(&x, &with(w.dims(), d), &b), &r), w.data());
    let nb = numeric_grad(|d| dot(&conv_transpose2d(&x, &w, d), &r), &b);
    out.push(("conv_transpose2d/x".into(), rel_err(an.dx.unwrap().data(), &nx)));
    out.push(("conv_transpose2d/w".into(), rel_err(&an.dw, &nw)));
    out.push(("conv_transpose2d/b".into(), rel_err(&an.db.unwrap(), &nb)));

    // average pooling
    let x = random_tensor(&mut g, [2, 2, 4, 4], -1.0, 1.0);
    let r = random_tensor(&mut g, [2, 2, 2, 2], -1.0, 1.0);
    let nx = numeric_grad(|d| dot(&avg_pool(&with(x.dims(), d), 2), &r), x.data());
    out.push(("avg_pool".into(), rel_err(avg_pool_backward(&r, 2).data(), &nx)));

    // ReLU, inputs kept away from the kink
    let x = Tensor4::from_vec(
        [1, 2, 4, 4],
        (0..32)
            .map(|_| {
                let v: f64 = g.random_range(0.1..1.0);
                if g.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
    .unwrap();
    let r = random_tensor(&mut g, [1, 2, 4, 4], -1.0, 1.0);
    let nx = numeric_grad(|d| dot(&relu(&with(x.dims(), d)), &r), x.data());
    out.push(("relu".into(), rel_err(relu_backward(&relu(&x), &r).data(), &nx)));

    // batch normalisation with batch statistics
    let x = random_tensor(&mut g, [3, 2, 3, 3], -1.0, 2.0);
    let gamma: Vec<f64> = (0..2).map(|_| g.random_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..2).map(|_| g.random_range(-0.5..0.5)).collect();
    let r = random_tensor(&mut g, [3, 2, 3, 3], -1.0, 1.0);
    let (_, cache) = batch_norm_train(&x, &gamma, &beta);
    let an = batch_norm_backward(&cache, &gamma, &r);
    let nx = numeric_grad(|d| dot(&batch_norm_train(&with(x.dims(), d), &gamma, &beta).0, &r), x.data());
    let ng = numeric_grad(|d| dot(&batch_norm_train(&x, d, &beta).0, &r), &gamma);
    let nb = numeric_grad(|d| dot(&batch_norm_train(&x, &gamma, d).0, &r), &beta);
    out.push(("batch_norm/x".into(), rel_err(an.dx.data(), &nx)));
    out.push(("batch_norm/gamma".into(), rel_err(&an.dgamma, &ng)));
    out.push(("batch_norm/beta".into(), rel_err(&an.dbeta, &nb)));

    // softmax + cross-entropy over the border-cropped region
    let logits = random_tensor(&mut g, [2, 2, 6, 6], -2.0, 2.0);
    let targets = random_masks(&mut g, 2, 4);
    let loss = |d: &[f64]| loss_xent(&softmax(&with(logits.dims(), d)).crop(1).unwrap(), &targets).unwrap();
    let nl = numeric_grad(loss, logits.data());
    let an = xent_logit_grad(&softmax(&logits), &targets, 1).unwrap();
    out.push(("softmax_xent".into(), rel_err(an.data(), &nl)));
    out
}

pub fn gradcheck_config() -> UNetConfig {
    UNetConfig {
        levels: 2,
        base_filters: 4,
        in_channels: 2,
        ..UNetConfig::default()
    }
}

/// Per-tensor relative error of the full network's parameter gradients
/// (up to `per_tensor` sampled entries each) on a 16x16 batch of two.
pub fn network_gradient_errors(seed: u64, per_tensor: usize) -> Vec<(String, f64)> {
    let mut g = rng(seed);
    let border = 2;
    let mut params = UNetParams::<f64>::init(gradcheck_config(), seed).unwrap();
    // Non-trivial affine batch-norm parameters.
    for p in params.params_mut() {
        if p.name.ends_with("gamma") {
            p.data.iter_mut().for_each(|v| *v = g.random_range(0.5..1.5));
        } else if p.name.ends_with("beta") || p.name.ends_with("bias") {
            p.data.iter_mut().for_each(|v| *v = g.random_range(-0.2..0.2));
        }
    }
    let x = random_tensor(&mut g, [2, 2, 16, 16], 0.0, 1.0);
    let targets = random_masks(&mut g, 2, 16 - 2 * border);
    let loss = |p: &UNetParams<f64>| {
        let pass = forward(p, &x, Mode::Train).unwrap();
        loss_xent(&pass.probs.crop(border).unwrap(), &targets).unwrap()
    };
    let pass = forward(&params, &x, Mode::Train).unwrap();
    let grads = backward(&params, &pass, &targets, border).unwrap();

    let mut out = Vec::new();
    for t in 0..params.params().len() {
        if !params.params()[t].trainable {
            continue;
        }
        let len = params.params()[t].data.len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| g.random_range(0..len)).collect()
        };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &i in &picks {
            let orig = params.params()[t].data[i];
            params.params_mut()[t].data[i] = orig + FD_STEP;
            let up = loss(&params);
            params.params_mut()[t].data[i] = orig - FD_STEP;
            let down = loss(&params);
            params.params_mut()[t].data[i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
            analytic.push(grads[t][i]);
        }
        out.push((params.params()[t].name.clone(), rel_err(&analytic, &numeric)));
    }
    out
}

/// Per-pixel LBP by explicit bit loop: neighbours clockwise from the
/// top-left, top-left in the most significant bit, frame pixels 0.
pub fn lbp_oracle(img: &GrayImage) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let ring: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];
    let mut out = vec![0u8; w * h];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let centre = img.get(r, c);
            let mut code = 0u8;
            for (k, (dr, dc)) in ring.iter().enumerate() {
                let v = img.get((r as isize + dr) as usize, (c as isize + dc) as usize);
                if v >= centre {
                    code |= 1 << (7 - k);
                }
            }
            out[r * w + c] = code;
        }
    }
    out
}

pub fn jaccard_oracle(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (x, y) = (a.get(r, c), b.get(r, c));
            if x && y {
                inter += 1;
            }
            if x || y {
                union += 1;
            }
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
