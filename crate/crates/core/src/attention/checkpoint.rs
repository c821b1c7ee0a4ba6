use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{ForwardPass, ModelConfig, ParamGroup, SentenceClassifier};
use crate::error::{Error, Result};
use crate::numeric::Tensor2;

pub const CHECKPOINT_FORMAT: &str = "repulsive-attention-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Flat checkpoint: every parameter block concatenated in
/// [`ParamGroup::ALL`] order, with a manifest of names, shapes and offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub mask: Vec<bool>,
    pub manifest: Vec<ShapeEntry>,
    pub values: Vec<f64>,
}

fn block(model: &SentenceClassifier, g: ParamGroup) -> &Tensor2 {
    match g {
        ParamGroup::Embedding => &model.embedding,
        ParamGroup::EncoderWeight => &model.encoder_weight,
        ParamGroup::EncoderBias => &model.encoder_bias,
        ParamGroup::AttnW => &model.attention.w,
        ParamGroup::Heads => &model.attention.v,
        ParamGroup::OutputWeight => &model.output_weight,
        ParamGroup::OutputBias => &model.output_bias,
    }
}

impl Checkpoint {
    pub fn from_model(model: &SentenceClassifier) -> Self {
        let mut manifest = Vec::new();
        let mut values = Vec::with_capacity(model.num_parameters());
        for g in ParamGroup::ALL {
            let t = block(model, g);
            manifest.push(ShapeEntry {
                name: g.name().to_string(),
                rows: t.rows(),
                cols: t.cols(),
                offset: values.len(),
            });
            values.extend_from_slice(t.data());
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            model: model.config,
            mask: model.mask().to_vec(),
            manifest,
            values,
        }
    }

    pub fn to_model(&self) -> Result<SentenceClassifier> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format `{}`", self.format)));
        }
        // Build a model of the right shape, then overwrite every block.
        let mut model = SentenceClassifier::new(self.model, 0)?;
        for (g, entry) in ParamGroup::ALL.iter().zip(&self.manifest) {
            let expected = block(&model, *g).shape();
            if entry.name != g.name() || (entry.rows, entry.cols) != expected {
                return Err(Error::Config(format!(
                    "checkpoint block `{}` ({}x{}) does not match `{}` {:?}",
                    entry.name,
                    entry.rows,
                    entry.cols,
                    g.name(),
                    expected
                )));
            }
            let len = entry.rows * entry.cols;
            let src = self.values.get(entry.offset..entry.offset + len).ok_or_else(|| {
                Error::Config(format!("checkpoint block `{}` overruns the value array", entry.name))
            })?;
            if src.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("checkpoint block `{}` is not finite", entry.name)));
            }
            model.group_mut(*g).copy_from_slice(src);
        }
        if self.manifest.len() != ParamGroup::ALL.len() || self.mask.len() != model.heads() {
            return Err(Error::Config("checkpoint manifest or mask has the wrong length".into()));
        }
        for (h, &m) in self.mask.iter().enumerate() {
            model.set_mask(h, m)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        crate::harness::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Attention weights of one example as CSV: `head,position,token,weight`.
pub fn attention_csv(pass: &ForwardPass) -> String {
    let mut out = String::from("head,position,token,weight\n");
    for h in 0..pass.attn.rows() {
        for (pos, &tok) in pass.tokens.iter().enumerate() {
            let _ = writeln!(out, "{h},{pos},{tok},{}", pass.attn.get(h, pos));
        }
    }
    out
}
