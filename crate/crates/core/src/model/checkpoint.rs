use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParameters, OutputActivation, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// Row-major `(rows, cols)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// JSON model container: architecture, dimensions, vocabulary hash, flat
/// parameter arrays and the training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
    pub vocab_hash: String,
    pub train_config: TrainConfig,
    layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn new(params: &ModelParameters, vocab_hash: impl Into<String>, train_config: TrainConfig) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.weights.nrows(),
                cols: l.weights.ncols(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            architecture: params.architecture,
            input_dim: params.input_dim,
            output_dim: params.output_dim,
            output_activation: params.output_activation,
            vocab_hash: vocab_hash.into(),
            train_config,
            layers,
        }
    }

    pub fn params(&self) -> Result<ModelParameters> {
        let mut params = ModelParameters::zeros(
            self.architecture,
            self.input_dim,
            self.output_dim,
            self.output_activation,
        )?;
        if params.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: params.layers.len(),
                found: self.layers.len(),
            });
        }
        for (layer, rec) in params.layers.iter_mut().zip(&self.layers) {
            let (rows, cols) = layer.weights.dim();
            if (rec.rows, rec.cols) != (rows, cols) || rec.weights.len() != rows * cols {
                return Err(Error::DimensionMismatch {
                    expected: rows * cols,
                    found: rec.weights.len(),
                });
            }
            if rec.bias.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: rec.bias.len(),
                });
            }
            layer.weights.iter_mut().zip(&rec.weights).for_each(|(w, &v)| *w = v);
            layer.bias.iter_mut().zip(&rec.bias).for_each(|(b, &v)| *b = v);
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self).map_err(|e| Error::format(path, e))?;
        writer
            .write_all(b"\n")
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                    ckpt.format_version
                ),
            ));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_preserves_parameters_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParameters::init(
            Architecture::Hidden { units: 3 },
            4,
            5,
            OutputActivation::BoundedUnit,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ckpt = Checkpoint::new(&params, "abc", TrainConfig::default());
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params().unwrap(), params);
    }

    #[test]
    fn rejects_unknown_version() {
        let params = ModelParameters::zeros(Architecture::Linear, 2, 2, OutputActivation::LinearClamped).unwrap();
        let mut ckpt = Checkpoint::new(&params, "h", TrainConfig::default());
        ckpt.format_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ckpt.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
