//! Network architectures and the forward pass.
//!
//! A [`Network`] is a flat list of [`LayerParams`] grouped into stages. A
//! stage either applies one layer to the whole vector or three layers to the
//! x, y and z segments independently. Dense weights are stored input-major
//! (`w[i * n_out + j]` connects input `i` to output `j`), so `o = W^T i + b`
//! reads rows contiguously. Masked weights are stored aligned with the
//! row-compressed [`PruneMask`], row = input index.

use std::fmt;
use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PruneMask;

mod checkpoint;
mod counts;

pub use counts::{param_count_cup, param_count_ref, solve_s};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub(crate) fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    CupNet,
    RegNet,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::CupNet => "cupnet",
            ArchKind::RegNet => "regnet",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cupnet" => Ok(ArchKind::CupNet),
            "regnet" => Ok(ArchKind::RegNet),
            other => Err(Error::InvalidInput(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Architecture hyperparameters shared by both network kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input size.
    pub k: usize,
    /// Points per segment; the output size is `3m`.
    pub m: usize,
    /// Number of repeated pruned (cupnet) or hidden (regnet) blocks.
    pub h: usize,
    /// Pruning threshold; informational for regnet.
    pub alpha: f64,
    /// Hidden width of the regnet.
    pub s: Option<usize>,
    pub dropout_rate: f64,
}

impl ArchConfig {
    pub fn new(k: usize, m: usize, h: usize, alpha: f64) -> Self {
        Self {
            k,
            m,
            h,
            alpha,
            s: None,
            dropout_rate: 0.2,
        }
    }

    pub fn d(&self) -> usize {
        3 * self.m
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.h == 0 {
            return Err(Error::InvalidInput(format!(
                "k, m and h must be >= 1 (got k={}, m={}, h={})",
                self.k, self.m, self.h
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerKind {
    Dense { n_in: usize, n_out: usize },
    /// `m -> m` map with weights only at mask positions.
    Masked { m: usize },
}

impl LayerKind {
    pub fn n_in(self) -> usize {
        match self {
            LayerKind::Dense { n_in, .. } => n_in,
            LayerKind::Masked { m } => m,
        }
    }

    pub fn n_out(self) -> usize {
        match self {
            LayerKind::Dense { n_out, .. } => n_out,
            LayerKind::Masked { m } => m,
        }
    }
}

/// Weights, biases and activation of one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Pre-activation `W^T input + b` written to `out`.
    pub(crate) fn affine(&self, mask: Option<&PruneMask>, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.biases);
        match self.kind {
            LayerKind::Dense { n_out, .. } => {
                for (row, &x) in self.weights.chunks_exact(n_out).zip(input) {
                    if x == 0.0 {
                        continue;
                    }
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += x * w;
                    }
                }
            }
            LayerKind::Masked { .. } => {
                let mask = mask.expect("masked layer without mask");
                let ptr = mask.row_ptr();
                let cols = mask.col_idx();
                for (i, &x) in input.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let range = ptr[i]..ptr[i + 1];
                    for (&j, w) in cols[range.clone()].iter().zip(&self.weights[range]) {
                        out[j] += x * w;
                    }
                }
            }
        }
    }
}

/// Sparse forward of one masked layer: `A([C o W]^T input + b)`.
///
/// Dropout is not applied here.
pub fn masked_forward(layer: &LayerParams, mask: &PruneMask, input: &[f64]) -> Result<Vec<f64>> {
    let LayerKind::Masked { m } = layer.kind else {
        return Err(Error::InvalidInput("masked_forward called on a dense layer".into()));
    };
    if mask.dim() != m || layer.weights.len() != mask.count() || layer.biases.len() != m {
        return Err(Error::InvalidInput(format!(
            "layer storage ({} weights, {} biases, m = {m}) not aligned with mask (m = {}, c = {})",
            layer.weights.len(),
            layer.biases.len(),
            mask.dim(),
            mask.count()
        )));
    }
    if input.len() != m {
        return Err(Error::Dimension {
            context: "masked_forward input",
            expected: m,
            actual: input.len(),
        });
    }
    let mut out = vec![0.0; m];
    layer.affine(Some(mask), input, &mut out);
    out.iter_mut().for_each(|o| *o = layer.activation.apply(*o));
    Ok(out)
}

/// A group of layers applied in parallel: one layer on the whole vector, or
/// three layers on consecutive equal segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Stage {
    pub first: usize,
    pub count: usize,
    pub n_in: usize,
    pub n_out: usize,
}

/// Per-stage dropout scale factors (0 or `1/keep`); `None` for stages
/// without dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub(crate) Vec<Option<Vec<f64>>>);

impl DropoutMasks {
    /// Draws i.i.d. inverted-dropout factors for every inner stage at the
    /// network's configured rate.
    pub fn sample<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Self {
        Self::sample_with_rate(net, net.cfg.dropout_rate, rng)
    }

    pub fn sample_with_rate<R: Rng + ?Sized>(net: &Network, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let last = net.stages.len() - 1;
        Self(
            net.stages
                .iter()
                .enumerate()
                .map(|(idx, st)| {
                    (idx < last && rate > 0.0).then(|| {
                        (0..st.n_out)
                            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
                            .collect()
                    })
                })
                .collect(),
        )
    }

    /// Masks that keep every unit unchanged.
    pub fn none(net: &Network) -> Self {
        Self(vec![None; net.stages.len()])
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) generation: u64,
    /// Input of every stage; the last entry is the network output.
    pub(crate) inputs: Vec<Vec<f64>>,
    /// Pre-activation of every stage.
    pub(crate) pre: Vec<Vec<f64>>,
    pub(crate) dropout: DropoutMasks,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache has at least one entry")
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    kind: ArchKind,
    cfg: ArchConfig,
    init_seed: u64,
    layers: Vec<LayerParams>,
    stages: Vec<Stage>,
    mask: Option<Arc<PruneMask>>,
    /// Bumped on every parameter mutation so stale caches can be detected.
    generation: u64,
}

impl Network {
    pub fn kind(&self) -> ArchKind {
        self.kind
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn mask(&self) -> Option<&PruneMask> {
        self.mask.as_deref()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Mutable access to all parameters; invalidates existing caches.
    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        self.generation += 1;
        &mut self.layers
    }

    pub(crate) fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub(crate) fn generation(&self) -> u64 {
        self.generation
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.k
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.d()
    }

    /// Number of stored trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    /// All parameters in layer order (weights then biases per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "flat parameter vector",
                expected: self.param_count(),
                actual: values.len(),
            });
        }
        let mut rest = values;
        for layer in self.layers_mut() {
            let (w, tail) = rest.split_at(layer.weights.len());
            layer.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(layer.biases.len());
            layer.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn layer_mask(&self, layer: &LayerParams) -> Option<&PruneMask> {
        match layer.kind {
            LayerKind::Masked { .. } => self.mask.as_deref(),
            LayerKind::Dense { .. } => None,
        }
    }

    /// Runs stage `idx` on `input`, writing the pre-activation to `pre`.
    pub(crate) fn stage_affine(&self, idx: usize, input: &[f64], pre: &mut [f64]) {
        let st = self.stages[idx];
        let seg_in = st.n_in / st.count;
        let seg_out = st.n_out / st.count;
        for s in 0..st.count {
            let layer = &self.layers[st.first + s];
            layer.affine(
                self.layer_mask(layer),
                &input[s * seg_in..(s + 1) * seg_in],
                &mut pre[s * seg_out..(s + 1) * seg_out],
            );
        }
    }

    pub(crate) fn stage_activation(&self, idx: usize, unit: usize) -> Activation {
        let st = self.stages[idx];
        self.layers[st.first + unit / (st.n_out / st.count)].activation
    }

    fn check_input(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.cfg.k {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.cfg.k,
                actual: p.len(),
            });
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network input component {i}")));
        }
        Ok(())
    }

    /// Full forward pass keeping every intermediate value.
    pub fn forward_cached(&self, p: &[f64], dropout: Option<&DropoutMasks>) -> Result<ForwardCache> {
        self.check_input(p)?;
        let dropout = match dropout {
            Some(d) if d.0.len() == self.stages.len() => d.clone(),
            Some(_) => return Err(Error::InvalidInput("dropout masks do not match the network".into())),
            None => DropoutMasks::none(self),
        };
        let mut inputs = Vec::with_capacity(self.stages.len() + 1);
        let mut pre_all = Vec::with_capacity(self.stages.len());
        inputs.push(p.to_vec());
        for (idx, st) in self.stages.iter().enumerate() {
            let mut pre = vec![0.0; st.n_out];
            self.stage_affine(idx, &inputs[idx], &mut pre);
            let mut out: Vec<f64> = pre
                .iter()
                .enumerate()
                .map(|(u, &z)| self.stage_activation(idx, u).apply(z))
                .collect();
            if let Some(factors) = &dropout.0[idx] {
                if factors.len() != out.len() {
                    return Err(Error::InvalidInput(format!("dropout mask for stage {idx} has wrong length")));
                }
                out.iter_mut().zip(factors).for_each(|(o, f)| *o *= f);
            }
            if let Some(u) = out.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output unit {u} of layer stage {idx}")));
            }
            pre_all.push(pre);
            inputs.push(out);
        }
        Ok(ForwardCache {
            generation: self.generation,
            inputs,
            pre: pre_all,
            dropout,
        })
    }

    /// Forward pass; in train mode fresh dropout masks are drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, p: &[f64], train_mode: bool, rng: &mut R) -> Result<Vec<f64>> {
        let masks = train_mode.then(|| DropoutMasks::sample(self, rng));
        let mut cache = self.forward_cached(p, masks.as_ref())?;
        Ok(cache.inputs.pop().expect("output present"))
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn predict(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward_cached(p, None)?;
        Ok(cache.inputs.pop().expect("output present"))
    }
}

fn he_uniform<R: Rng>(rng: &mut R, fan_in: usize) -> f64 {
    let limit = (6.0 / fan_in as f64).sqrt();
    Uniform::new_inclusive(-limit, limit).sample(rng)
}

fn dense_layer<R: Rng>(rng: &mut R, n_in: usize, n_out: usize, activation: Activation) -> LayerParams {
    let dist = Uniform::new_inclusive(-(6.0 / n_in as f64).sqrt(), (6.0 / n_in as f64).sqrt());
    LayerParams {
        kind: LayerKind::Dense { n_in, n_out },
        activation,
        weights: (0..n_in * n_out).map(|_| dist.sample(rng)).collect(),
        biases: vec![0.0; n_out],
    }
}

/// Entry `(i, j)` feeds output `j`, whose fan-in is the degree of mask row
/// `j` (the mask is symmetric).
fn masked_layer<R: Rng>(rng: &mut R, mask: &PruneMask) -> LayerParams {
    let m = mask.dim();
    let ptr = mask.row_ptr();
    let weights = mask
        .col_idx()
        .iter()
        .map(|&j| he_uniform(rng, ptr[j + 1] - ptr[j]))
        .collect();
    LayerParams {
        kind: LayerKind::Masked { m },
        activation: Activation::Relu,
        weights,
        biases: vec![0.0; m],
    }
}

/// Frame `k -> 3m` (relu), `h` pruned blocks of three masked `m -> m` maps
/// (relu), then three dense `m -> m` output maps (linear).
pub fn build_cupnet(cfg: &ArchConfig, mask: Arc<PruneMask>, init_seed: u64) -> Result<Network> {
    cfg.validate()?;
    if mask.dim() != cfg.m {
        return Err(Error::Dimension {
            context: "cupnet mask",
            expected: cfg.m,
            actual: mask.dim(),
        });
    }
    let (k, m, d) = (cfg.k, cfg.m, cfg.d());
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut layers = vec![dense_layer(&mut rng, k, d, Activation::Relu)];
    let mut stages = vec![Stage {
        first: 0,
        count: 1,
        n_in: k,
        n_out: d,
    }];
    for _ in 0..cfg.h {
        stages.push(Stage {
            first: layers.len(),
            count: 3,
            n_in: d,
            n_out: d,
        });
        for _ in 0..3 {
            layers.push(masked_layer(&mut rng, &mask));
        }
    }
    stages.push(Stage {
        first: layers.len(),
        count: 3,
        n_in: d,
        n_out: d,
    });
    for _ in 0..3 {
        layers.push(dense_layer(&mut rng, m, m, Activation::Linear));
    }
    Ok(Network {
        kind: ArchKind::CupNet,
        cfg: cfg.clone(),
        init_seed,
        layers,
        stages,
        mask: Some(mask),
        generation: 0,
    })
}

/// Dense `k -> s` (relu), `h` dense `s -> s` (relu), dense `s -> 3m` (linear).
pub fn build_regnet(cfg: &ArchConfig, init_seed: u64) -> Result<Network> {
    cfg.validate()?;
    let s = match cfg.s {
        Some(s) if s >= 1 => s,
        _ => return Err(Error::InvalidInput("regnet needs a hidden width s >= 1".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut layers = Vec::with_capacity(cfg.h + 2);
    let mut stages = Vec::with_capacity(cfg.h + 2);
    let widths: Vec<usize> = std::iter::once(cfg.k)
        .chain(std::iter::repeat_n(s, cfg.h + 1))
        .chain(std::iter::once(cfg.d()))
        .collect();
    for (idx, pair) in widths.windows(2).enumerate() {
        let activation = if idx + 2 == widths.len() {
            Activation::Linear
        } else {
            Activation::Relu
        };
        stages.push(Stage {
            first: idx,
            count: 1,
            n_in: pair[0],
            n_out: pair[1],
        });
        layers.push(dense_layer(&mut rng, pair[0], pair[1], activation));
    }
    Ok(Network {
        kind: ArchKind::RegNet,
        cfg: cfg.clone(),
        init_seed,
        layers,
        stages,
        mask: None,
        generation: 0,
    })
}

/// Regnet width matching the parameter budget of a cupnet with the given
/// mask count.
pub fn parity_width(k: usize, m: usize, h: usize, c_alpha: usize) -> Result<usize> {
    let (k, m, h, c) = (k as u64, m as u64, h as u64, c_alpha as u64);
    let n_cup = param_count_cup(k, 3 * m, m, h, c)?;
    Ok(solve_s(k, 3 * m, h, n_cup)? as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mask, pairwise_distances, Mesh};

    fn two_point_mask(alpha: f64) -> Arc<PruneMask> {
        let mesh = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        Arc::new(build_mask(&pairwise_distances(&mesh), alpha).unwrap())
    }

    #[test]
    fn masked_identity() {
        let mask = two_point_mask(0.5);
        let layer = LayerParams {
            kind: LayerKind::Masked { m: 2 },
            activation: Activation::Linear,
            weights: vec![1.0, 1.0],
            biases: vec![0.0, 0.0],
        };
        assert_eq!(masked_forward(&layer, &mask, &[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);
    }

    #[test]
    fn masked_hand_example() {
        // dense W = [[1,1],[1,1]] with only the diagonal kept
        let mask = two_point_mask(0.5);
        let layer = LayerParams {
            kind: LayerKind::Masked { m: 2 },
            activation: Activation::Relu,
            weights: vec![1.0, 1.0],
            biases: vec![0.5, -3.0],
        };
        assert_eq!(masked_forward(&layer, &mask, &[1.0, 2.0]).unwrap(), vec![1.5, 0.0]);
    }

    #[test]
    fn masked_misaligned_rejected() {
        let mask = two_point_mask(1.0);
        let layer = LayerParams {
            kind: LayerKind::Masked { m: 2 },
            activation: Activation::Relu,
            weights: vec![1.0, 1.0],
            biases: vec![0.0, 0.0],
        };
        assert!(masked_forward(&layer, &mask, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn built_counts_match_formulas() {
        let cfg = ArchConfig::new(1, 2, 1, 1.0);
        let net = build_cupnet(&cfg, two_point_mask(1.0), 0).unwrap();
        assert_eq!(net.param_count(), 48);
        let net = build_cupnet(&cfg, two_point_mask(0.5), 0).unwrap();
        assert_eq!(net.param_count(), 42);
        assert_eq!(param_count_cup(1, 6, 2, 1, 2).unwrap(), 42);

        let mut cfg = ArchConfig::new(1, 2, 1, 1.0);
        cfg.s = Some(1);
        assert_eq!(build_regnet(&cfg, 0).unwrap().param_count(), 16);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = ArchConfig::new(3, 2, 2, 1.0);
        let mut net = build_cupnet(&cfg, two_point_mask(1.0), 1).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_flat_params(&zeros).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ArchConfig::new(3, 2, 2, 1.0);
        let a = build_cupnet(&cfg, two_point_mask(1.0), 7).unwrap();
        let b = build_cupnet(&cfg, two_point_mask(1.0), 7).unwrap();
        let c = build_cupnet(&cfg, two_point_mask(1.0), 8).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
        let p = [0.1, 0.2, 0.3];
        assert_eq!(a.predict(&p).unwrap(), a.predict(&p).unwrap());
    }

    #[test]
    fn build_rejects_inconsistent_dims() {
        let cfg = ArchConfig::new(3, 5, 1, 1.0);
        assert!(build_cupnet(&cfg, two_point_mask(1.0), 0).is_err());
        assert!(build_regnet(&cfg, 0).is_err());
        let bad = ArchConfig { h: 0, ..ArchConfig::new(3, 2, 1, 1.0) };
        assert!(build_cupnet(&bad, two_point_mask(1.0), 0).is_err());
    }

    #[test]
    fn non_finite_intermediate_names_stage() {
        let cfg = ArchConfig::new(1, 2, 1, 1.0);
        let mut net = build_cupnet(&cfg, two_point_mask(1.0), 0).unwrap();
        net.layers_mut()[0].weights.iter_mut().for_each(|w| *w = f64::MAX);
        let err = net.predict(&[f64::MAX]).unwrap_err();
        assert!(err.to_string().contains("stage 0"), "{err}");
    }

    #[test]
    fn eval_forward_ignores_rng() {
        let cfg = ArchConfig::new(2, 2, 1, 1.0);
        let net = build_cupnet(&cfg, two_point_mask(1.0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = net.forward(&[0.3, 0.4], false, &mut rng).unwrap();
        assert_eq!(a, net.predict(&[0.3, 0.4]).unwrap());
    }
}
