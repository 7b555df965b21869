use crate::error::{Error, Result};

use super::{Grads, Scalar, TrainConfig, UNetParams};

/// One bias-corrected Adam update of every trainable tensor. The step
/// counter is incremented before it is used. Nothing is modified when a
/// gradient is non-finite.
pub fn adam_step<T: Scalar>(params: &mut UNetParams<T>, grads: &Grads<T>, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.params().len() {
        return Err(Error::invalid("gradient list does not match parameters"));
    }
    for (g, p) in grads.iter().zip(params.params()) {
        if g.len() != p.data.len() {
            return Err(Error::invalid(format!("gradient for `{}` has the wrong length", p.name)));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: p.name.clone(),
                detail: "non-finite gradient passed to the optimiser".into(),
            });
        }
    }

    params.adam.step += 1;
    let t = params.adam.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::lit(1.0 - cfg.beta1.powi(t));
    let corr2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);

    let (tensors, adam) = params.split_mut();
    for (i, p) in tensors.iter_mut().enumerate().filter(|(_, p)| p.trainable) {
        let moments = adam.m[i].iter_mut().zip(adam.v[i].iter_mut());
        for ((theta, &g), (m, v)) in p.data.iter_mut().zip(&grads[i]).zip(moments) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::UNetConfig;

    fn small() -> UNetParams<f64> {
        UNetParams::init(
            UNetConfig {
                levels: 2,
                base_filters: 2,
                conv_size: 3,
                pool_size: 2,
                in_channels: 1,
                out_classes: 2,
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = small();
        let before = p.params().to_vec();
        let g = p.zero_grads();
        adam_step(&mut p, &g, &TrainConfig::default()).unwrap();
        assert_eq!(p.params(), &before[..]);
        assert_eq!(p.adam.step, 1);
    }

    #[test]
    fn first_step_unit_gradient() {
        // m_hat = 1, v_hat = 1 -> update = -lr / (1 + eps)
        let mut p = small();
        let before = p.params().to_vec();
        let g: Grads<f64> = p.params().iter().map(|q| vec![1.0; q.data.len()]).collect();
        let cfg = TrainConfig::default();
        adam_step(&mut p, &g, &cfg).unwrap();
        let expect = -1e-4 / (1.0 + 1e-8);
        for (a, b) in p.params().iter().zip(&before) {
            for (x, y) in a.data.iter().zip(&b.data) {
                let delta = x - y;
                if a.trainable {
                    assert!((delta - expect).abs() < 1e-15, "{delta}");
                } else {
                    assert_eq!(delta, 0.0);
                }
            }
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = small();
        let before = p.clone();
        let mut g = p.zero_grads();
        g[0][0] = f64::INFINITY;
        assert!(matches!(adam_step(&mut p, &g, &TrainConfig::default()), Err(Error::Numeric { .. })));
        assert_eq!(p, before);
    }
}
