use super::backprop::Gradients;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::network::Network;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            t: 0,
        }
    }

    pub fn for_network(net: &Network) -> Self {
        Self::new(net.param_count())
    }
}

struct StepCoefficients {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bias1: f64,
    bias2: f64,
}

impl StepCoefficients {
    fn new(cfg: &TrainConfig, t: u64) -> Self {
        let t = t as i32;
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
            lr: cfg.learning_rate,
            bias1: 1.0 - cfg.adam_beta1.powi(t),
            bias2: 1.0 - cfg.adam_beta2.powi(t),
        }
    }

    #[inline]
    fn update(&self, theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
        for (((p, &g), m), v) in theta.iter_mut().zip(g).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / self.bias1;
            let v_hat = *v / self.bias2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn check_finite(grads: &[f64], offset: usize) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("gradient component {}", offset + i))),
        None => Ok(()),
    }
}

/// One bias-corrected Adam update of a flat parameter vector.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.first.len() != params.len() || state.second.len() != params.len() {
        return Err(Error::Dimension {
            context: "adam_step",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    check_finite(grads, 0)?;
    state.t += 1;
    StepCoefficients::new(cfg, state.t).update(params, grads, &mut state.first, &mut state.second);
    Ok(())
}

/// Adam update applied layer by layer without flattening the network.
pub fn adam_step_network(
    net: &mut Network,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.layers.len() != net.layers().len() || state.first.len() != net.param_count() {
        return Err(Error::Dimension {
            context: "adam_step_network",
            expected: net.param_count(),
            actual: state.first.len(),
        });
    }
    let mut offset = 0;
    for (layer, g) in net.layers().iter().zip(&grads.layers) {
        if layer.weights.len() != g.weights.len() || layer.biases.len() != g.biases.len() {
            return Err(Error::InvalidInput("gradient layout does not match the network".into()));
        }
        check_finite(&g.weights, offset)?;
        check_finite(&g.biases, offset + g.weights.len())?;
        offset += layer.param_count();
    }
    state.t += 1;
    let coeff = StepCoefficients::new(cfg, state.t);
    let mut offset = 0;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        let nw = layer.weights.len();
        let nb = layer.biases.len();
        let (m, v) = (&mut state.first, &mut state.second);
        coeff.update(&mut layer.weights, &g.weights, &mut m[offset..offset + nw], &mut v[offset..offset + nw]);
        offset += nw;
        coeff.update(&mut layer.biases, &g.biases, &mut m[offset..offset + nb], &mut v[offset..offset + nb]);
        offset += nb;
    }
    Ok(())
}
