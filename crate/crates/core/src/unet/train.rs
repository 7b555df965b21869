use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::jaccard;
use crate::imaging::{BinaryMask, FloatRaster};
use crate::transforms::FeatureStack;

use super::{adam_step, backward, blend_running_stats, forward, update_running_stats, ForwardPass, Mode, Scalar, Tensor4, TrainConfig, UNetConfig, UNetParams};

/// Network input with its (border-free) ground truth.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: String,
    pub input: FeatureStack,
    pub target: BinaryMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
    /// Mean Jaccard of the thresholded train-mode output over the batch.
    pub train_jaccard: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    /// Mean batch Jaccard per epoch.
    pub fn epoch_jaccard(&self) -> Vec<f64> {
        let epochs = self.records.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let v: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.epoch == e)
                    .map(|r| r.train_jaccard)
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    }

    /// Training Jaccard of the last epoch.
    pub fn final_train_jaccard(&self) -> f64 {
        self.epoch_jaccard().last().copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,iteration,loss,train_jaccard\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.iteration, r.loss, r.train_jaccard);
        }
        s
    }
}

/// Stacks feature maps into a batch tensor.
pub fn batch_tensor<T: Scalar>(inputs: &[&FeatureStack]) -> Result<Tensor4<T>> {
    let first = inputs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(inputs.len() * c * h * w);
    for s in inputs {
        if (s.channels(), s.height(), s.width()) != (c, h, w) {
            return Err(Error::invalid("batch members differ in shape"));
        }
        data.extend(s.data().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor4::from_vec([inputs.len(), c, h, w], data)
}

/// Lesion-class (channel 1) probabilities of batch member `n`, cropped by `border`.
pub fn lesion_probability<T: Scalar>(probs: &Tensor4<T>, n: usize, border: usize) -> Result<FloatRaster> {
    let (h, w) = (probs.height(), probs.width());
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::invalid("border leaves no pixels"));
    }
    let plane = probs.plane(n, 1);
    let (oh, ow) = (h - 2 * border, w - 2 * border);
    let mut data = Vec::with_capacity(oh * ow);
    for y in border..border + oh {
        data.extend(plane[y * w + border..y * w + border + ow].iter().map(|v| v.as_f64()));
    }
    FloatRaster::new(ow, oh, data)
}

fn batch_jaccard<T: Scalar>(pass: &ForwardPass<T>, targets: &[BinaryMask], border: usize) -> Result<f64> {
    let mut total = 0.0;
    for (n, t) in targets.iter().enumerate() {
        let p = lesion_probability(&pass.probs, n, border)?;
        let pred = BinaryMask::from_fn(p.width(), p.height(), |r, c| p.get(r, c) > 0.5);
        total += jaccard(&pred, t)?;
    }
    Ok(total / targets.len() as f64)
}

/// Forward, loss, backward, Adam update and running-statistics update for
/// one batch. Returns the loss and the train-mode pass taken before the update.
pub fn train_step<T: Scalar>(
    params: &mut UNetParams<T>,
    x: &Tensor4<T>,
    targets: &[BinaryMask],
    border: usize,
    cfg: &TrainConfig,
) -> Result<(f64, ForwardPass<T>)> {
    let pass = forward(params, x, Mode::Train)?;
    let loss = super::layers::loss_xent(&pass.probs.crop(border)?, targets)?.as_f64();
    if !loss.is_finite() {
        return Err(Error::Numeric {
            layer: "loss".into(),
            detail: format!("loss is {loss}"),
        });
    }
    let grads = backward(params, &pass, targets, border)?;
    update_running_stats(params, &pass)?;
    adam_step(params, &grads, cfg)?;
    Ok((loss, pass))
}

fn check_samples(samples: &[TrainSample], config: &UNetConfig, border: usize) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::Data("training set is empty".into()))?;
    config.validate_for(first.input.height())?;
    config.validate_for(first.input.width())?;
    for s in samples {
        if s.input.channels() != config.in_channels {
            return Err(Error::Data(format!(
                "sample `{}` has {} channels, network expects {}",
                s.id,
                s.input.channels(),
                config.in_channels
            )));
        }
        if (s.input.width(), s.input.height()) != (first.input.width(), first.input.height()) {
            return Err(Error::Data(format!("sample `{}` differs in size", s.id)));
        }
        if s.target.width() + 2 * border != s.input.width() || s.target.height() + 2 * border != s.input.height() {
            return Err(Error::Data(format!(
                "sample `{}`: target {}x{} plus border {border} does not match input {}x{}",
                s.id,
                s.target.width(),
                s.target.height(),
                s.input.width(),
                s.input.height()
            )));
        }
    }
    Ok(())
}

/// Trains freshly initialised parameters. Weight initialisation and batch
/// sampling are both driven by `cfg.rng_seed`, so equal seeds give
/// bit-identical results.
pub fn train(
    samples: &[TrainSample],
    config: UNetConfig,
    cfg: &TrainConfig,
    border: usize,
) -> Result<(UNetParams<f32>, TrainHistory)> {
    let mut params = UNetParams::init(config, cfg.rng_seed)?;
    let history = train_with_params(&mut params, samples, cfg, border)?;
    Ok((params, history))
}

/// Runs `epochs x iterations_per_epoch` batches, each drawn uniformly with
/// replacement from `samples`.
pub fn train_with_params<T: Scalar>(
    params: &mut UNetParams<T>,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    border: usize,
) -> Result<TrainHistory> {
    cfg.validate()?;
    check_samples(samples, params.config(), border)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(1);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        for iteration in 0..cfg.iterations_per_epoch {
            let picks: Vec<&TrainSample> = (0..cfg.batch_size)
                .map(|_| &samples[rng.random_range(0..samples.len())])
                .collect();
            let inputs: Vec<&FeatureStack> = picks.iter().map(|s| &s.input).collect();
            let targets: Vec<BinaryMask> = picks.iter().map(|s| s.target.clone()).collect();
            let x = batch_tensor(&inputs)?;
            let (loss, pass) = train_step(params, &x, &targets, border, cfg)?;
            let train_jaccard = batch_jaccard(&pass, &targets, border)?;
            history.records.push(IterationRecord {
                epoch,
                iteration,
                loss,
                train_jaccard,
            });
        }
        log::info!(
            "epoch {}/{}: loss {:.4}, train jaccard {:.4}",
            epoch + 1,
            cfg.epochs,
            history.records.last().map_or(f64::NAN, |r| r.loss),
            history.epoch_jaccard()[epoch]
        );
    }
    recalibrate_batch_norm(params, samples, cfg)?;
    Ok(history)
}

/// Replaces the running statistics by the plain average of batch
/// statistics over `cfg.bn_recalibration_batches` batches, weights frozen.
/// During training the moving averages mix statistics of older weights;
/// this matches inference to the final network.
pub fn recalibrate_batch_norm<T: Scalar>(params: &mut UNetParams<T>, samples: &[TrainSample], cfg: &TrainConfig) -> Result<()> {
    if cfg.bn_recalibration_batches == 0 || samples.is_empty() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(2);
    for k in 0..cfg.bn_recalibration_batches {
        let inputs: Vec<&FeatureStack> = (0..cfg.batch_size)
            .map(|_| &samples[rng.random_range(0..samples.len())].input)
            .collect();
        let pass = forward(params, &batch_tensor(&inputs)?, Mode::Train)?;
        blend_running_stats(params, &pass, k as f64 / (k + 1) as f64)?;
    }
    Ok(())
}

/// Inference-mode class probabilities for one input, shape `1 x 2 x H x W`.
pub fn predict<T: Scalar>(params: &UNetParams<T>, x: &FeatureStack) -> Result<Tensor4<T>> {
    if x.channels() != params.config().in_channels {
        return Err(Error::invalid(format!(
            "input has {} channels but the network was trained on {}",
            x.channels(),
            params.config().in_channels
        )));
    }
    Ok(forward(params, &batch_tensor(&[x])?, Mode::Infer)?.probs)
}
