//! Reverse-mode gradients of the mean squared error through both
//! architectures. Masked layers only have gradient slots at mask positions.

use super::data::Matrix;
use crate::error::{Error, Result};
use crate::network::{ForwardCache, LayerKind, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradient storage congruent to [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// Same ordering as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Accumulates into `grads` the gradient of one sample whose output
/// sensitivity is `delta` (dL/d output).
fn backward_sample(net: &Network, cache: &ForwardCache, mut delta: Vec<f64>, grads: &mut Gradients) {
    let stages = net.stages();
    let mask = net.mask();
    for idx in (0..stages.len()).rev() {
        let st = stages[idx];
        if let Some(factors) = &cache.dropout.0[idx] {
            delta.iter_mut().zip(factors).for_each(|(d, f)| *d *= f);
        }
        for (u, (d, &z)) in delta.iter_mut().zip(&cache.pre[idx]).enumerate() {
            *d *= net.stage_activation(idx, u).derivative(z);
        }

        let input = &cache.inputs[idx];
        let need_input_grad = idx > 0;
        let mut delta_in = if need_input_grad { vec![0.0; st.n_in] } else { Vec::new() };
        let seg_in = st.n_in / st.count;
        let seg_out = st.n_out / st.count;
        for s in 0..st.count {
            let layer_idx = st.first + s;
            let layer = &net.layers()[layer_idx];
            let g = &mut grads.layers[layer_idx];
            let a = &input[s * seg_in..(s + 1) * seg_in];
            let dz = &delta[s * seg_out..(s + 1) * seg_out];
            g.biases.iter_mut().zip(dz).for_each(|(gb, d)| *gb += d);
            match layer.kind {
                LayerKind::Dense { n_out, .. } => {
                    for (i, (w_row, gw_row)) in layer
                        .weights
                        .chunks_exact(n_out)
                        .zip(g.weights.chunks_exact_mut(n_out))
                        .enumerate()
                    {
                        let ai = a[i];
                        if ai != 0.0 {
                            gw_row.iter_mut().zip(dz).for_each(|(gw, d)| *gw += ai * d);
                        }
                        if need_input_grad {
                            delta_in[s * seg_in + i] = w_row.iter().zip(dz).map(|(w, d)| w * d).sum();
                        }
                    }
                }
                LayerKind::Masked { .. } => {
                    let mask = mask.expect("masked layer without mask");
                    let ptr = mask.row_ptr();
                    let cols = mask.col_idx();
                    for i in 0..seg_in {
                        let ai = a[i];
                        let mut acc = 0.0;
                        for e in ptr[i]..ptr[i + 1] {
                            let d = dz[cols[e]];
                            g.weights[e] += ai * d;
                            acc += layer.weights[e] * d;
                        }
                        if need_input_grad {
                            delta_in[s * seg_in + i] = acc;
                        }
                    }
                }
            }
        }
        delta = delta_in;
    }
}

/// Loss and exact gradient of `mse_loss` over a batch, given caches from
/// [`Network::forward_cached`] (with whatever dropout draw was used).
pub fn backward(net: &Network, caches: &[ForwardCache], targets: &Matrix) -> Result<(f64, Gradients)> {
    if caches.is_empty() {
        return Err(Error::InvalidInput("backward on an empty batch".into()));
    }
    if caches.len() != targets.rows() || targets.cols() != net.output_dim() {
        return Err(Error::Dimension {
            context: "backward targets",
            expected: caches.len() * net.output_dim(),
            actual: targets.rows() * targets.cols(),
        });
    }
    if caches.iter().any(|c| c.generation != net.generation() || c.inputs.len() != net.stages().len() + 1) {
        return Err(Error::InvalidInput("forward cache is stale: parameters changed since the forward pass".into()));
    }
    let scale = 2.0 / (caches.len() * net.output_dim()) as f64;
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for (cache, target) in caches.iter().zip(targets.iter_rows()) {
        let delta: Vec<f64> = cache
            .output()
            .iter()
            .zip(target)
            .map(|(p, t)| {
                loss += (p - t) * (p - t);
                scale * (p - t)
            })
            .collect();
        backward_sample(net, cache, delta, &mut grads);
    }
    Ok((loss * scale / 2.0, grads))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::{build_mask, pairwise_distances, Mesh};
    use crate::network::{build_cupnet, ArchConfig};

    fn tiny_cupnet() -> Network {
        let mesh = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let mask = Arc::new(build_mask(&pairwise_distances(&mesh), 0.5).unwrap());
        build_cupnet(&ArchConfig::new(1, 2, 1, 0.5), mask, 2).unwrap()
    }

    #[test]
    fn zero_loss_zero_gradient() {
        let net = tiny_cupnet();
        let cache = net.forward_cached(&[0.7], None).unwrap();
        let target = Matrix::from_rows(&[cache.output().to_vec()]).unwrap();
        let (loss, grads) = backward(&net, &[cache], &target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = tiny_cupnet();
        let cache = net.forward_cached(&[0.7], None).unwrap();
        net.layers_mut()[0].biases[0] += 1.0;
        let target = Matrix::zeros(1, 6);
        assert!(backward(&net, &[cache], &target).is_err());
    }

    #[test]
    fn gradient_layout_matches_params() {
        let net = tiny_cupnet();
        assert_eq!(Gradients::zeros_like(&net).flat().len(), net.param_count());
    }
}
