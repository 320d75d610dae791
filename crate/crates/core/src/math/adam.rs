use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mlp, MlpGrads, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
        }
    }
}

/// First/second moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Per layer: (weight moments, bias moments).
    m: Vec<(Vec<T>, Vec<T>)>,
    v: Vec<(Vec<T>, Vec<T>)>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(mlp: &Mlp<T>, config: AdamConfig) -> Self {
        let zeros: Vec<(Vec<T>, Vec<T>)> = mlp
            .layers()
            .iter()
            .map(|l| (vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]))
            .collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Frozen layers are left untouched (their moments too). Fails without
/// modifying anything if a gradient is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut Mlp<T>,
    grads: &MlpGrads<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if grads.layers.len() != params.layers().len() || state.m.len() != params.layers().len() {
        return Err(Error::Dimension {
            context: "adam_step layer count",
            expected: params.layers().len(),
            got: grads.layers.len(),
        });
    }
    for (i, (g, l)) in grads.layers.iter().zip(params.layers()).enumerate() {
        if g.weight.len() != l.weight.len() || g.bias.len() != l.bias.len() {
            return Err(Error::Dimension {
                context: "adam_step layer shape",
                expected: l.weight.len() + l.bias.len(),
                got: g.weight.len() + g.bias.len(),
            });
        }
        if !(g.weight.all_finite() && g.bias.all_finite()) {
            return Err(Error::NonFinite {
                context: "adam_step gradient",
                layer: i,
            });
        }
    }

    let cfg = state.config;
    let clip_scale = match cfg.clip {
        Some(max_norm) => {
            let sq: T = grads
                .layers
                .iter()
                .zip(params.layers())
                .filter(|(_, l)| !l.frozen)
                .flat_map(|(g, _)| g.weight.data().iter().chain(g.bias.data()))
                .map(|&x| x * x)
                .sum();
            let norm = sq.sqrt();
            let max_norm = T::lit(max_norm);
            if norm > max_norm {
                max_norm / norm
            } else {
                T::one()
            }
        }
        None => T::one(),
    };

    state.step += 1;
    let (b1, b2, eps) = (T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.eps));
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);

    let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g * clip_scale;
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };

    for (i, layer) in params.layers_mut().iter_mut().enumerate() {
        if layer.frozen {
            continue;
        }
        let g = &grads.layers[i];
        let (mw, mb) = &mut state.m[i];
        let (vw, vb) = &mut state.v[i];
        update(layer.weight.data_mut(), g.weight.data(), mw, vw);
        update(layer.bias.data_mut(), g.bias.data(), mb, vb);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Activation, Layer, Tensor};

    fn scalar_net(value: f64) -> Mlp<f64> {
        Mlp::new(vec![Layer {
            weight: Tensor::from_vec(&[1, 1], vec![value]).unwrap(),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Identity,
            frozen: false,
        }])
        .unwrap()
    }

    fn grads_of(net: &Mlp<f64>, g: f64) -> MlpGrads<f64> {
        let mut grads = MlpGrads::zeros_like(net);
        grads.layers[0].weight.data_mut()[0] = g;
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(&net, AdamConfig::default());
        let g = grads_of(&net, 1.0);
        adam_step(&mut net, &g, &mut st, 0.01).unwrap();
        let delta = net.layers()[0].weight.data()[0] - 1.0;
        assert!((delta + 0.01).abs() < 1e-6, "delta = {delta}");
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_grads_leave_params_but_count_step() {
        let mut net = scalar_net(0.7);
        let before = net.clone();
        let mut st = AdamState::new(&net, AdamConfig::default());
        let g = grads_of(&net, 0.0);
        adam_step(&mut net, &g, &mut st, 0.1).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let net0 = scalar_net(-0.3);
        let st0 = AdamState::new(&net0, AdamConfig::default());
        let g = grads_of(&net0, 0.25);
        let run = || {
            let (mut n, mut s) = (net0.clone(), st0.clone());
            adam_step(&mut n, &g, &mut s, 1e-3).unwrap();
            adam_step(&mut n, &g, &mut s, 1e-3).unwrap();
            (n.flat_params(), s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut net = Mlp::<f64>::zeros(&[2, 2, 1], Activation::Elu, Activation::Identity).unwrap();
        let mut st = AdamState::new(&net, AdamConfig::default());
        let mut g = MlpGrads::zeros_like(&net);
        g.layers[1].bias.data_mut()[0] = f64::NAN;
        let before = net.clone();
        match adam_step(&mut net, &g, &mut st, 0.1) {
            Err(Error::NonFinite { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(net, before);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn frozen_layers_are_skipped() {
        let mut net = Mlp::<f64>::zeros(&[2, 2, 1], Activation::Elu, Activation::Identity).unwrap();
        net.freeze_trunk();
        let mut st = AdamState::new(&net, AdamConfig::default());
        let mut g = MlpGrads::zeros_like(&net);
        g.layers.iter_mut().for_each(|l| l.bias.fill(1.0));
        adam_step(&mut net, &g, &mut st, 0.1).unwrap();
        assert!(net.layers()[0].bias.data().iter().all(|&b| b == 0.0));
        assert!(net.layers()[1].bias.data()[0] < 0.0);
    }
}
