//! On-disk checkpoints: `meta.json`, one little-endian f64 blob per layer
//! (weights then biases; masked weights in mask row-compressed order) and,
//! for cupnets, the mask as `mask.csv`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{build_cupnet, build_regnet, Activation, ArchConfig, ArchKind, LayerKind, Network};
use crate::error::{Error, Result};
use crate::geometry::PruneMask;

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    file: String,
    kind: LayerKind,
    activation: Activation,
    weights: usize,
    biases: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: ArchKind,
    config: ArchConfig,
    init_seed: u64,
    param_count: usize,
    mask_count: Option<usize>,
    layers: Vec<LayerMeta>,
}

impl Network {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let file = format!("layer_{idx:03}.bin");
            let mut bytes = Vec::with_capacity(8 * layer.param_count());
            for v in layer.weights.iter().chain(&layer.biases) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(&file);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            layers.push(LayerMeta {
                file,
                kind: layer.kind,
                activation: layer.activation,
                weights: layer.weights.len(),
                biases: layer.biases.len(),
            });
        }
        if let Some(mask) = self.mask() {
            mask.write_csv(&dir.join("mask.csv"))?;
        }
        let meta = CheckpointMeta {
            kind: self.kind,
            config: self.cfg.clone(),
            init_seed: self.init_seed,
            param_count: self.param_count(),
            mask_count: self.mask().map(PruneMask::count),
            layers,
        };
        let path = dir.join("meta.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let mut net = match meta.kind {
            ArchKind::CupNet => {
                let mask = PruneMask::read_csv(&dir.join("mask.csv"), meta.config.m, meta.config.alpha)?;
                build_cupnet(&meta.config, Arc::new(mask), meta.init_seed)?
            }
            ArchKind::RegNet => build_regnet(&meta.config, meta.init_seed)?,
        };
        if net.layers.len() != meta.layers.len() || net.param_count() != meta.param_count {
            return Err(Error::format(&meta_path, "layer layout does not match the architecture"));
        }
        for (layer, lm) in net.layers_mut().iter_mut().zip(&meta.layers) {
            if layer.kind != lm.kind
                || layer.activation != lm.activation
                || layer.weights.len() != lm.weights
                || layer.biases.len() != lm.biases
            {
                return Err(Error::format(&meta_path, format!("layer {} does not match the architecture", lm.file)));
            }
            let path = dir.join(&lm.file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != 8 * (lm.weights + lm.biases) {
                return Err(Error::format(&path, format!("expected {} bytes", 8 * (lm.weights + lm.biases))));
            }
            let mut values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
            layer.weights.iter_mut().for_each(|w| *w = values.next().unwrap());
            layer.biases.iter_mut().for_each(|b| *b = values.next().unwrap());
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mask, pairwise_distances, Mesh};

    #[test]
    fn round_trip_is_bit_exact() {
        let mesh = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 1.0, 0.5]]).unwrap();
        let mask = Arc::new(build_mask(&pairwise_distances(&mesh), 1.2).unwrap());
        let dir = tempfile::tempdir().unwrap();

        let cfg = ArchConfig::new(3, 4, 2, 1.2);
        let mut cup = build_cupnet(&cfg, mask, 11).unwrap();
        let perturbed: Vec<f64> = cup.flat_params().iter().map(|v| v * 1.1 + 1e-3).collect();
        cup.set_flat_params(&perturbed).unwrap();
        cup.save(&dir.path().join("cup")).unwrap();
        let loaded = Network::load(&dir.path().join("cup")).unwrap();
        let bits = |n: &Network| n.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&loaded), bits(&cup));
        assert_eq!(loaded.mask(), cup.mask());

        let reg = build_regnet(&ArchConfig { s: Some(5), ..cfg }, 4).unwrap();
        reg.save(&dir.path().join("reg")).unwrap();
        assert_eq!(bits(&Network::load(&dir.path().join("reg")).unwrap()), bits(&reg));
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let reg = build_regnet(&ArchConfig { s: Some(2), ..ArchConfig::new(1, 1, 1, 0.0) }, 0).unwrap();
        reg.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("layer_001.bin"), [0u8; 12]).unwrap();
        assert!(Network::load(dir.path()).is_err());
    }
}
