mod common;

use common::{gradcheck_config, random_tensor, rel_err, rng, FD_STEP};
use lesionpipe_core::imaging::BinaryMask;
use lesionpipe_core::transforms::FeatureStack;
use lesionpipe_core::unet::layers::loss_xent;
use lesionpipe_core::unet::{
    adam_step, backward, forward, predict, train, train_with_params, Mode, Tensor4, TrainConfig, TrainSample, UNetConfig,
    UNetParams,
};
use rand::Rng;

const SIDE: usize = 16;
const BORDER: usize = 2;

fn disc(side: usize, r: f64) -> BinaryMask {
    let c = (side as f64 - 1.0) / 2.0;
    BinaryMask::from_fn(side, side, |y, x| (y as f64 - c).powi(2) + (x as f64 - c).powi(2) <= r * r)
}

/// Dark disc on a bright noisy background; target is the disc interior.
fn sample(seed: u64, id: &str) -> TrainSample {
    let mut g = rng(seed);
    let full = disc(SIDE, 4.5);
    let data: Vec<f32> = (0..SIDE * SIDE)
        .map(|i| {
            let base = if full.get(i / SIDE, i % SIDE) { 0.2 } else { 0.8 };
            base + g.random_range(-0.05..0.05)
        })
        .collect();
    let target = BinaryMask::from_fn(SIDE - 2 * BORDER, SIDE - 2 * BORDER, |y, x| full.get(y + BORDER, x + BORDER));
    TrainSample {
        id: id.into(),
        input: FeatureStack::new(1, SIDE, SIDE, data).unwrap(),
        target,
    }
}

fn small_net() -> UNetConfig {
    UNetConfig {
        levels: 2,
        base_filters: 4,
        ..UNetConfig::default()
    }
}

fn cfg(lr: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        iterations_per_epoch: 5,
        batch_size: 2,
        rng_seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let samples = vec![sample(1, "a"), sample(2, "b")];
    let init = UNetParams::<f32>::init(small_net(), 11).unwrap();
    let (trained, _) = train(&samples, small_net(), &cfg(0.0, 2), BORDER).unwrap();
    for (a, b) in init.params().iter().zip(trained.params()) {
        if a.trainable {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
    }
}

#[test]
fn equal_seeds_train_identically() {
    let samples = vec![sample(1, "a"), sample(2, "b"), sample(3, "c")];
    let (p1, h1) = train(&samples, small_net(), &cfg(1e-3, 2), BORDER).unwrap();
    let (p2, h2) = train(&samples, small_net(), &cfg(1e-3, 2), BORDER).unwrap();
    assert_eq!(h1, h2);
    for (a, b) in p1.params().iter().zip(p2.params()) {
        assert_eq!(a.data, b.data, "{}", a.name);
    }
    assert_eq!(h1.records.len(), 10);
    assert!(h1.records.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
}

#[test]
fn duplicated_batch_has_same_gradient() {
    let mut g = rng(5);
    let params = UNetParams::<f64>::init(gradcheck_config(), 5).unwrap();
    let x = random_tensor(&mut g, [1, 2, SIDE, SIDE], 0.0, 1.0);
    let mut doubled = x.data().to_vec();
    doubled.extend_from_slice(x.data());
    let xx = Tensor4::from_vec([2, 2, SIDE, SIDE], doubled).unwrap();
    let t = disc(SIDE - 2 * BORDER, 3.0);
    let g1 = backward(&params, &forward(&params, &x, Mode::Train).unwrap(), std::slice::from_ref(&t), BORDER).unwrap();
    let g2 = backward(&params, &forward(&params, &xx, Mode::Train).unwrap(), &[t.clone(), t], BORDER).unwrap();
    for ((a, b), p) in g1.iter().zip(&g2).zip(params.params()) {
        assert!(rel_err(a, b) < 1e-10, "{}", p.name);
    }
}

#[test]
fn first_adam_step_is_bounded_by_learning_rate() {
    let mut g = rng(6);
    let mut params = UNetParams::<f64>::init(gradcheck_config(), 6).unwrap();
    let before = params.clone();
    let x = random_tensor(&mut g, [2, 2, SIDE, SIDE], 0.0, 1.0);
    let t = disc(SIDE - 2 * BORDER, 3.0);
    let grads = backward(&params, &forward(&params, &x, Mode::Train).unwrap(), &[t.clone(), t], BORDER).unwrap();
    let c = TrainConfig {
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    adam_step(&mut params, &grads, &c).unwrap();
    for (a, b) in before.params().iter().zip(params.params()) {
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() <= 1e-2 * (1.0 + 1e-9), "{}", a.name);
        }
    }
}

#[test]
fn single_precision_gradient_agrees_with_finite_differences() {
    let mut g = rng(8);
    let mut exact = UNetParams::<f64>::init(gradcheck_config(), 8).unwrap();
    let single: UNetParams<f32> = exact.cast();
    let x = random_tensor(&mut g, [2, 2, SIDE, SIDE], 0.0, 1.0);
    let x32 = Tensor4::from_vec(x.dims(), x.data().iter().map(|&v| v as f32).collect()).unwrap();
    let targets = vec![disc(SIDE - 2 * BORDER, 3.0), disc(SIDE - 2 * BORDER, 5.0)];
    let loss = |p: &UNetParams<f64>| {
        let pass = forward(p, &x, Mode::Train).unwrap();
        loss_xent(&pass.probs.crop(BORDER).unwrap(), &targets).unwrap()
    };
    let grads = backward(&single, &forward(&single, &x32, Mode::Train).unwrap(), &targets, BORDER).unwrap();
    for t in 0..exact.params().len() {
        if !exact.params()[t].trainable {
            continue;
        }
        let len = exact.params()[t].data.len();
        let (mut an, mut nu) = (Vec::new(), Vec::new());
        for i in (0..len).step_by(len.div_ceil(8)) {
            let orig = exact.params()[t].data[i];
            exact.params_mut()[t].data[i] = orig + FD_STEP;
            let up = loss(&exact);
            exact.params_mut()[t].data[i] = orig - FD_STEP;
            let down = loss(&exact);
            exact.params_mut()[t].data[i] = orig;
            nu.push((up - down) / (2.0 * FD_STEP));
            an.push(grads[t][i] as f64);
        }
        let err = rel_err(&an, &nu);
        assert!(err < 1e-2, "{}: {err:e}", exact.params()[t].name);
    }
}

#[test]
fn overfits_a_single_image() {
    let s = sample(9, "only");
    let mut params = UNetParams::<f32>::init(small_net(), 3).unwrap();
    let c = TrainConfig {
        learning_rate: 1e-2,
        epochs: 10,
        iterations_per_epoch: 10,
        batch_size: 1,
        rng_seed: 3,
        ..TrainConfig::default()
    };
    let history = train_with_params(&mut params, std::slice::from_ref(&s), &c, BORDER).unwrap();
    let first = history.records.first().unwrap().loss;
    let last = history.records.last().unwrap().loss;
    assert!(last < first, "loss {first} -> {last}");
    let probs = predict(&params, &s.input).unwrap();
    let plane = probs.plane(0, 1);
    let (mut inside, mut hit) = (0, 0);
    for y in 0..s.target.height() {
        for x in 0..s.target.width() {
            if s.target.get(y, x) {
                inside += 1;
                if plane[(y + BORDER) * SIDE + x + BORDER] > 0.5 {
                    hit += 1;
                }
            }
        }
    }
    assert!(hit as f64 > 0.9 * inside as f64, "{hit}/{inside} lesion pixels above 0.5");
}
