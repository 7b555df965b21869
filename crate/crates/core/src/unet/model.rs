use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

use super::layers::{self, BnCache};
use super::{Scalar, Tensor4, UNetConfig, BN_MOMENTUM};

/// One named tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
    /// Running statistics are stored alongside weights but are not trained.
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Copy, Debug)]
struct BlockIdx {
    conv1: usize,
    bn1: BnIdx,
    conv2: usize,
    bn2: BnIdx,
}

#[derive(Clone, Copy, Debug)]
struct UpIdx {
    weight: usize,
    bias: usize,
}

/// Positions of every layer's tensors in the flat parameter list.
#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<BlockIdx>,
    /// Indexed by level `0..levels-1`.
    decoder: Vec<(UpIdx, BlockIdx)>,
    head_weight: usize,
    head_bias: usize,
}

/// Parameter declaration: name, shape, trainable, fan-in for Kaiming init
/// (`None` for tensors with a constant initial value).
struct Spec {
    name: String,
    dims: Vec<usize>,
    trainable: bool,
    init: Init,
}

#[derive(Clone, Copy)]
enum Init {
    Kaiming { fan_in: usize },
    Const(f64),
}

struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn push(&mut self, name: String, dims: Vec<usize>, trainable: bool, init: Init) -> usize {
        self.specs.push(Spec {
            name,
            dims,
            trainable,
            init,
        });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: String, cout: usize, cin: usize, k: usize) -> usize {
        self.push(name, vec![cout, cin, k, k], true, Init::Kaiming { fan_in: cin * k * k })
    }

    fn bn(&mut self, prefix: &str, c: usize) -> BnIdx {
        BnIdx {
            gamma: self.push(format!("{prefix}.gamma"), vec![c], true, Init::Const(1.0)),
            beta: self.push(format!("{prefix}.beta"), vec![c], true, Init::Const(0.0)),
            mean: self.push(format!("{prefix}.running_mean"), vec![c], false, Init::Const(0.0)),
            var: self.push(format!("{prefix}.running_var"), vec![c], false, Init::Const(1.0)),
        }
    }

    fn block(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> BlockIdx {
        BlockIdx {
            conv1: self.conv(format!("{prefix}.conv1.weight"), cout, cin, k),
            bn1: self.bn(&format!("{prefix}.bn1"), cout),
            conv2: self.conv(format!("{prefix}.conv2.weight"), cout, cout, k),
            bn2: self.bn(&format!("{prefix}.bn2"), cout),
        }
    }
}

fn build_layout(cfg: &UNetConfig) -> (Layout, Vec<Spec>) {
    let mut b = Builder { specs: Vec::new() };
    let k = cfg.conv_size;
    let mut encoder = Vec::with_capacity(cfg.levels);
    let mut cin = cfg.in_channels;
    for l in 0..cfg.levels {
        let f = cfg.filters(l);
        encoder.push(b.block(&format!("enc{l}"), cin, f, k));
        cin = f;
    }
    let mut decoder = Vec::with_capacity(cfg.levels - 1);
    for l in 0..cfg.levels - 1 {
        let (lower, f) = (cfg.filters(l + 1), cfg.filters(l));
        let s = cfg.pool_size;
        let up = UpIdx {
            weight: b.push(format!("dec{l}.up.weight"), vec![f, lower, s, s], true, Init::Kaiming { fan_in: lower }),
            bias: b.push(format!("dec{l}.up.bias"), vec![f], true, Init::Const(0.0)),
        };
        decoder.push((up, b.block(&format!("dec{l}"), 2 * f, f, k)));
    }
    let f0 = cfg.filters(0);
    let head_weight = b.conv("head.weight".into(), cfg.out_classes, f0, 1);
    let head_bias = b.push("head.bias".into(), vec![cfg.out_classes], true, Init::Const(0.0));
    (
        Layout {
            encoder,
            decoder,
            head_weight,
            head_bias,
        },
        b.specs,
    )
}

/// Adam first/second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// All learnable weights, batch-norm statistics and optimiser state.
#[derive(Clone, Debug)]
pub struct UNetParams<T> {
    config: UNetConfig,
    layout: Layout,
    params: Vec<Param<T>>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> PartialEq for UNetParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.adam == other.adam
    }
}

/// Gradients aligned with [`UNetParams::params`]; running statistics get zeros.
pub type Grads<T> = Vec<Vec<T>>;

impl<T: Scalar> UNetParams<T> {
    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases,
    /// `gamma = 1`, `beta = 0`, running variance 1.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Param<T>> = specs
            .into_iter()
            .map(|s| {
                let len: usize = s.dims.iter().product();
                let data = match s.init {
                    Init::Const(v) => vec![T::lit(v); len],
                    Init::Kaiming { fan_in } => {
                        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                        (0..len).map(|_| T::lit(normal.sample(&mut rng))).collect()
                    }
                };
                Param {
                    name: s.name,
                    dims: s.dims,
                    data,
                    trainable: s.trainable,
                }
            })
            .collect();
        let adam = AdamState {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        };
        Ok(Self {
            config,
            layout,
            params,
            adam,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    /// Converts the element type, e.g. to run a gradient check in `f64`.
    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        UNetParams {
            config: self.config,
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    data: conv(&p.data),
                    trainable: p.trainable,
                })
                .collect(),
            adam: AdamState {
                step: self.adam.step,
                m: self.adam.m.iter().map(conv).collect(),
                v: self.adam.v.iter().map(conv).collect(),
            },
        }
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: UNetConfig, tensors: Vec<(String, Vec<usize>, Vec<T>)>, adam: Option<AdamState<T>>) -> Result<Self> {
        let mut out = Self::init(config, 0)?;
        if tensors.len() != out.params.len() {
            return Err(Error::WeightFormat(format!(
                "expected {} tensors, found {}",
                out.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, dims, data)) in out.params.iter_mut().zip(tensors) {
            if p.name != name || p.dims != dims || data.len() != p.data.len() {
                return Err(Error::WeightFormat(format!(
                    "tensor `{name}` {dims:?} does not match expected `{}` {:?}",
                    p.name, p.dims
                )));
            }
            p.data = data;
        }
        if let Some(adam) = adam {
            let ok = adam.m.len() == out.params.len()
                && adam.v.len() == out.params.len()
                && out
                    .params
                    .iter()
                    .zip(adam.m.iter().zip(&adam.v))
                    .all(|(p, (m, v))| m.len() == p.data.len() && v.len() == p.data.len());
            if !ok {
                return Err(Error::WeightFormat("optimiser state does not match parameters".into()));
            }
            out.adam = adam;
        }
        Ok(out)
    }

    fn tensor(&self, idx: usize) -> Tensor4<T> {
        let p = &self.params[idx];
        let mut dims = [1usize; 4];
        dims[4 - p.dims.len()..].copy_from_slice(&p.dims);
        Tensor4::from_vec(dims, p.data.clone()).expect("parameter shape")
    }

    fn vec(&self, idx: usize) -> &[T] {
        &self.params[idx].data
    }

    pub(super) fn split_mut(&mut self) -> (&mut [Param<T>], &mut AdamState<T>) {
        (&mut self.params, &mut self.adam)
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; activations are cached for [`backward`].
    Train,
    /// Running statistics; nothing is cached.
    Infer,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    input: Tensor4<T>,
    bn1: BnCache<T>,
    a1: Tensor4<T>,
    bn2: BnCache<T>,
    output: Tensor4<T>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    step: u64,
    encoder: Vec<BlockCache<T>>,
    /// Indexed by level.
    decoder: Vec<BlockCache<T>>,
}

/// Result of [`forward`]: per-pixel class probabilities and, in train mode,
/// the activations needed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub probs: Tensor4<T>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn is_train(&self) -> bool {
        self.cache.is_some()
    }
}

fn finite<T: Scalar>(t: Tensor4<T>, layer: impl FnOnce() -> String) -> Result<Tensor4<T>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::Numeric {
            layer: layer(),
            detail: "non-finite activation".into(),
        })
    }
}

fn block_forward<T: Scalar>(
    p: &UNetParams<T>,
    idx: &BlockIdx,
    input: Tensor4<T>,
    mode: Mode,
    name: &str,
) -> Result<(Tensor4<T>, Option<BlockCache<T>>)> {
    let bn = |x: &Tensor4<T>, b: &BnIdx| -> (Tensor4<T>, Option<BnCache<T>>) {
        match mode {
            Mode::Train => {
                let (y, c) = layers::batch_norm_train(x, p.vec(b.gamma), p.vec(b.beta));
                (y, Some(c))
            }
            Mode::Infer => (
                layers::batch_norm_infer(x, p.vec(b.gamma), p.vec(b.beta), p.vec(b.mean), p.vec(b.var)),
                None,
            ),
        }
    };
    let z1 = finite(layers::conv2d(&input, &p.tensor(idx.conv1), None), || format!("{name}.conv1"))?;
    let (b1, c1) = bn(&z1, &idx.bn1);
    let a1 = finite(layers::relu(&b1), || format!("{name}.bn1"))?;
    let z2 = finite(layers::conv2d(&a1, &p.tensor(idx.conv2), None), || format!("{name}.conv2"))?;
    let (b2, c2) = bn(&z2, &idx.bn2);
    let out = finite(layers::relu(&b2), || format!("{name}.bn2"))?;
    let cache = match (c1, c2) {
        (Some(bn1), Some(bn2)) => Some(BlockCache {
            input,
            bn1,
            a1,
            bn2,
            output: out.clone(),
        }),
        _ => None,
    };
    Ok((out, cache))
}

/// Runs the network on a batch. Spatial dims must be divisible by
/// `pool_size^(levels-1)`.
pub fn forward<T: Scalar>(params: &UNetParams<T>, x: &Tensor4<T>, mode: Mode) -> Result<ForwardPass<T>> {
    let cfg = params.config;
    if x.channels() != cfg.in_channels {
        return Err(Error::invalid(format!(
            "network expects {} input channels, got {}",
            cfg.in_channels,
            x.channels()
        )));
    }
    let factor = cfg.pool_size.pow(cfg.levels as u32 - 1);
    if !x.height().is_multiple_of(factor) || !x.width().is_multiple_of(factor) || x.height() == 0 || x.width() == 0 {
        return Err(Error::invalid(format!(
            "spatial size {}x{} is not divisible by {factor}",
            x.height(),
            x.width()
        )));
    }
    let lay = &params.layout;
    let mut enc_caches = Vec::new();
    let mut skips = Vec::with_capacity(cfg.levels);
    let mut cur = x.clone();
    for (l, idx) in lay.encoder.iter().enumerate() {
        if l > 0 {
            cur = layers::avg_pool(&cur, cfg.pool_size);
        }
        let (out, cache) = block_forward(params, idx, cur, mode, &format!("enc{l}"))?;
        enc_caches.extend(cache);
        skips.push(out.clone());
        cur = out;
    }
    let mut dec_caches: Vec<Option<BlockCache<T>>> = vec![None; cfg.levels - 1];
    for l in (0..cfg.levels - 1).rev() {
        let (up_idx, block_idx) = &lay.decoder[l];
        let up = finite(
            layers::conv_transpose2d(&cur, &params.tensor(up_idx.weight), params.vec(up_idx.bias)),
            || format!("dec{l}.up"),
        )?;
        let cat = Tensor4::concat_channels(&skips[l], &up);
        let (out, cache) = block_forward(params, block_idx, cat, mode, &format!("dec{l}"))?;
        dec_caches[l] = cache;
        cur = out;
    }
    let logits = finite(
        layers::conv2d(&cur, &params.tensor(lay.head_weight), Some(params.vec(lay.head_bias))),
        || "head".into(),
    )?;
    let probs = finite(layers::softmax(&logits), || "softmax".into())?;
    let cache = match mode {
        Mode::Train => Some(Cache {
            step: params.adam.step,
            encoder: enc_caches,
            decoder: dec_caches.into_iter().map(|c| c.expect("train mode caches")).collect(),
        }),
        Mode::Infer => None,
    };
    Ok(ForwardPass { probs, cache })
}

fn block_backward<T: Scalar>(
    p: &UNetParams<T>,
    idx: &BlockIdx,
    cache: &BlockCache<T>,
    dout: &Tensor4<T>,
    grads: &mut Grads<T>,
    need_dx: bool,
) -> Option<Tensor4<T>> {
    let d_b2 = layers::relu_backward(&cache.output, dout);
    let bn2 = layers::batch_norm_backward(&cache.bn2, p.vec(idx.bn2.gamma), &d_b2);
    accumulate(&mut grads[idx.bn2.gamma], &bn2.dgamma);
    accumulate(&mut grads[idx.bn2.beta], &bn2.dbeta);
    let c2 = layers::conv2d_backward(&cache.a1, &p.tensor(idx.conv2), &bn2.dx, false, true);
    accumulate(&mut grads[idx.conv2], &c2.dw);
    let d_b1 = layers::relu_backward(&cache.a1, &c2.dx.expect("dx requested"));
    let bn1 = layers::batch_norm_backward(&cache.bn1, p.vec(idx.bn1.gamma), &d_b1);
    accumulate(&mut grads[idx.bn1.gamma], &bn1.dgamma);
    accumulate(&mut grads[idx.bn1.beta], &bn1.dbeta);
    let c1 = layers::conv2d_backward(&cache.input, &p.tensor(idx.conv1), &bn1.dx, false, need_dx);
    accumulate(&mut grads[idx.conv1], &c1.dw);
    c1.dx
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add<T: Scalar>(mut a: Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
    accumulate(a.data_mut(), b.data());
    a
}

/// Exact gradients of the mean cross-entropy (over the output cropped by
/// `border`) w.r.t. every trainable parameter.
pub fn backward<T: Scalar>(
    params: &UNetParams<T>,
    pass: &ForwardPass<T>,
    targets: &[BinaryMask],
    border: usize,
) -> Result<Grads<T>> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or_else(|| Error::Cache("backward needs a train-mode forward pass".into()))?;
    if cache.step != params.adam.step {
        return Err(Error::Cache(format!(
            "forward pass was taken at step {} but parameters are at step {}",
            cache.step, params.adam.step
        )));
    }
    let cfg = params.config;
    let lay = &params.layout;
    let mut grads = params.zero_grads();

    let dlogits = layers::xent_logit_grad(&pass.probs, targets, border)?;
    let head_in = match cache.decoder.first() {
        Some(c) => &c.output,
        None => &cache.encoder[0].output,
    };
    let head = layers::conv2d_backward(head_in, &params.tensor(lay.head_weight), &dlogits, true, true);
    accumulate(&mut grads[lay.head_weight], &head.dw);
    accumulate(&mut grads[lay.head_bias], &head.db.expect("bias requested"));
    let mut dcur = head.dx.expect("dx requested");

    // Expanding path, top level first.
    let mut dskips: Vec<Option<Tensor4<T>>> = vec![None; cfg.levels];
    for l in 0..cfg.levels - 1 {
        let (up_idx, block_idx) = &lay.decoder[l];
        let dcat = block_backward(params, block_idx, &cache.decoder[l], &dcur, &mut grads, true).expect("dx requested");
        let (dskip, dup) = dcat.split_channels(cfg.filters(l));
        dskips[l] = Some(dskip);
        let lower = if l + 1 < cfg.levels - 1 {
            &cache.decoder[l + 1].output
        } else {
            &cache.encoder[cfg.levels - 1].output
        };
        let up = layers::conv_transpose2d_backward(lower, &params.tensor(up_idx.weight), &dup);
        accumulate(&mut grads[up_idx.weight], &up.dw);
        accumulate(&mut grads[up_idx.bias], &up.db.expect("bias grad"));
        dcur = up.dx.expect("dx");
    }

    // Contracting path, bottleneck first.
    for l in (0..cfg.levels).rev() {
        if let Some(dskip) = dskips[l].take() {
            dcur = add(dcur, &dskip);
        }
        let dinput = block_backward(params, &lay.encoder[l], &cache.encoder[l], &dcur, &mut grads, l > 0);
        if l > 0 {
            dcur = layers::avg_pool_backward(&dinput.expect("dx requested"), cfg.pool_size);
        }
    }

    for (g, p) in grads.iter().zip(&params.params) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: p.name.clone(),
                detail: "non-finite gradient".into(),
            });
        }
    }
    Ok(grads)
}

/// Folds the batch statistics of a train-mode pass into the running
/// statistics: `running = 0.9 * running + 0.1 * batch`.
pub fn update_running_stats<T: Scalar>(params: &mut UNetParams<T>, pass: &ForwardPass<T>) -> Result<()> {
    blend_running_stats(params, pass, BN_MOMENTUM)
}

/// `running = keep * running + (1 - keep) * batch` for every batch-norm layer.
pub fn blend_running_stats<T: Scalar>(params: &mut UNetParams<T>, pass: &ForwardPass<T>, keep: f64) -> Result<()> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or_else(|| Error::Cache("running statistics need a train-mode forward pass".into()))?;
    let take = T::lit(1.0 - keep);
    let keep = T::lit(keep);
    let blocks: Vec<(BlockIdx, &BlockCache<T>)> = params
        .layout
        .encoder
        .iter()
        .copied()
        .zip(&cache.encoder)
        .chain(params.layout.decoder.iter().map(|d| d.1).zip(&cache.decoder))
        .collect();
    for (idx, bc) in blocks {
        for (bn, c) in [(idx.bn1, &bc.bn1), (idx.bn2, &bc.bn2)] {
            for (r, &b) in params.params[bn.mean].data.iter_mut().zip(&c.mean) {
                *r = keep * *r + take * b;
            }
            for (r, &b) in params.params[bn.var].data.iter_mut().zip(&c.var) {
                *r = keep * *r + take * b;
            }
        }
    }
    Ok(())
}
