use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, CrossEncoderModel, PairEncoder, ToyEncoder, ToyEncoderConfig};
use crate::error::{Error, Result};

/// Magic first line of a checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "SYNTHRANK-CKPT-1";

/// Everything needed to resume or reuse a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub encoder_id: String,
    pub encoder_config: serde_json::Value,
    pub d_model: usize,
    pub init_seed: u64,
    pub encoder_params: Vec<f64>,
    pub head: Vec<f64>,
    pub optimizer: AdamState,
    pub config_fingerprint: String,
}

impl Checkpoint {
    pub fn capture(model: &CrossEncoderModel, optimizer: &AdamState, config_fingerprint: &str) -> Self {
        Self {
            encoder_id: model.encoder().id().to_string(),
            encoder_config: model.encoder().config_json(),
            d_model: model.d_model(),
            init_seed: model.init_seed(),
            encoder_params: model.encoder().params().to_vec(),
            head: model.head().to_vec(),
            optimizer: optimizer.clone(),
            config_fingerprint: config_fingerprint.to_string(),
        }
    }

    /// Rebuild a model whose encoder is constructible from the checkpoint
    /// alone (the toy encoder).
    pub fn restore(&self) -> Result<(CrossEncoderModel, AdamState)> {
        if self.encoder_id != ToyEncoder::ID {
            return Err(Error::Config(format!(
                "encoder `{}` needs an external backend; use restore_with",
                self.encoder_id
            )));
        }
        let config: ToyEncoderConfig = serde_json::from_value(self.encoder_config.clone())?;
        let encoder = ToyEncoder::from_params(config, self.encoder_params.clone())?;
        self.restore_with(Box::new(encoder))
    }

    /// Attach the stored head and encoder parameters to `encoder`.
    pub fn restore_with(&self, mut encoder: Box<dyn PairEncoder>) -> Result<(CrossEncoderModel, AdamState)> {
        if encoder.id() != self.encoder_id || encoder.output_dim() != self.d_model {
            return Err(Error::Config(format!(
                "checkpoint is for `{}` (d_model {}), got `{}` (d_model {})",
                self.encoder_id,
                self.d_model,
                encoder.id(),
                encoder.output_dim()
            )));
        }
        if encoder.params().len() != self.encoder_params.len() {
            return Err(Error::Config("encoder parameter count mismatch".into()));
        }
        encoder.params_mut().copy_from_slice(&self.encoder_params);
        let model = CrossEncoderModel::with_head(encoder, self.head.clone(), self.init_seed)?;
        if self.optimizer.m.len() != model.param_count() {
            return Err(Error::Config("optimizer state does not match model".into()));
        }
        Ok((model, self.optimizer.clone()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!("{CHECKPOINT_MAGIC}\n");
        out.push_str(&serde_json::to_string(self)?);
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (magic, body) = raw.split_once('\n').unwrap_or((raw.as_str(), ""));
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format { path: path.into(), reason: format!("bad magic header {magic:?}") });
        }
        serde_json::from_str(body).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })
    }
}
