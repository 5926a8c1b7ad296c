//! Versioned parameter file shared by every stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coherence::CoherenceParams;
use crate::error::{Error, Result};
use crate::heuristics::H2Model;
use crate::local::{local_input_dim, AttentionParams, LocalModel};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub version: u32,
    pub dim: usize,
    pub attention: Option<AttentionParams>,
    pub local: Option<LocalModel>,
    pub coherence: Option<CoherenceParams>,
    pub h2: Option<H2Model>,
    pub pruner: Option<CoherenceParams>,
}

fn missing(what: &str, stage: &str) -> Error {
    Error::Missing(format!("{what} (run `train --stage {stage}` first)"))
}

impl ModelParams {
    pub fn new(dim: usize) -> Self {
        ModelParams {
            version: PARAMS_FORMAT_VERSION,
            dim,
            attention: None,
            local: None,
            coherence: None,
            h2: None,
            pruner: None,
        }
    }

    pub fn attention(&self) -> Result<&AttentionParams> {
        self.attention
            .as_ref()
            .ok_or_else(|| missing("attention matrices", "attention"))
    }

    pub fn local(&self) -> Result<&LocalModel> {
        self.local
            .as_ref()
            .ok_or_else(|| missing("local scoring network", "local-mlp"))
    }

    pub fn coherence(&self) -> Result<&CoherenceParams> {
        self.coherence
            .as_ref()
            .ok_or_else(|| missing("coherence weights", "coherence"))
    }

    pub fn h2(&self) -> Result<&H2Model> {
        self.h2
            .as_ref()
            .ok_or_else(|| missing("h2 classifier", "h2"))
    }

    pub fn pruner(&self) -> Result<&CoherenceParams> {
        self.pruner
            .as_ref()
            .ok_or_else(|| missing("pruning weights", "pruner"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PARAMS_FORMAT_VERSION {
            return Err(Error::data(format!(
                "parameter file version {} is not supported (expected {PARAMS_FORMAT_VERSION})",
                self.version
            )));
        }
        if let Some(a) = &self.attention {
            a.validate()?;
            if a.dim() != self.dim {
                return Err(Error::Shape(format!(
                    "attention dim {} vs {}",
                    a.dim(),
                    self.dim
                )));
            }
        }
        if let Some(l) = &self.local {
            l.mlp.validate()?;
            if l.mlp.input_dim() != local_input_dim(self.dim) {
                return Err(Error::Shape(
                    "local network input does not match the embedding dim".into(),
                ));
            }
        }
        for c in [&self.coherence, &self.pruner].into_iter().flatten() {
            c.validate(self.dim)?;
        }
        if let Some(h) = &self.h2 {
            h.validate()?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)
            .map_err(|e| Error::data(format!("serializing parameters: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::Missing(format!("parameter file {}", path.display())))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let params: ModelParams = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::new(3);
        p.attention = Some(AttentionParams::init(3, &mut rng));
        p.coherence = Some(CoherenceParams {
            c: Matrix::xavier(3, 3, &mut rng),
            w: [0.1, -1.0 / 3.0, 1e-300],
        });
        p.h2 = Some(H2Model::AlwaysCorrect);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), p);
    }

    #[test]
    fn missing_stage_names_artifact() {
        let p = ModelParams::new(4);
        let err = p.pruner().unwrap_err().to_string();
        assert!(err.contains("pruning weights"), "{err}");
        let err = ModelParams::load("/nonexistent/params.json")
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing parameter file"), "{err}");
    }
}
