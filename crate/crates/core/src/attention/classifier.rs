use serde::{Deserialize, Serialize};

use super::additive::AdditiveAttnParams;
use crate::error::{Error, Result};
use crate::numeric::{matmul, softmax_in_place, softmax_rows, ParticleSet, RngState, Stream, Tensor2};

/// Shape and initialization of a [`SentenceClassifier`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    /// Word representation width `d`.
    pub embed_dim: usize,
    /// Hidden width `d_a` of the alignment network.
    pub attn_dim: usize,
    /// Number of heads `M`.
    pub heads: usize,
    pub classes: usize,
    /// Shared `tanh(H₀ W_e + b_e)` layer between embedding and attention.
    pub encoder: bool,
    pub embed_scale: f64,
    /// Standard deviation of each head vector `v_i` at initialization.
    pub head_scale: f64,
    /// Extra per-head jitter so no two particles start coincident.
    pub head_jitter: f64,
    pub zero_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab: 200,
            embed_dim: 16,
            attn_dim: 16,
            heads: 8,
            classes: 8,
            encoder: true,
            embed_scale: 0.5,
            head_scale: 0.01,
            head_jitter: 1e-3,
            zero_output: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab", self.vocab),
            ("embed_dim", self.embed_dim),
            ("attn_dim", self.attn_dim),
            ("heads", self.heads),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be >= 1")));
        }
        if self.classes < 2 {
            return Err(Error::Config("model needs at least 2 classes".into()));
        }
        if !(self.embed_scale >= 0.0 && self.head_scale >= 0.0 && self.head_jitter >= 0.0) {
            return Err(Error::Config("initialization scales must be >= 0".into()));
        }
        Ok(())
    }
}

/// Named parameter blocks, in the fixed order used for flattening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Embedding,
    EncoderWeight,
    EncoderBias,
    AttnW,
    /// The head vectors `V`, one particle per column.
    Heads,
    OutputWeight,
    OutputBias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Embedding,
        ParamGroup::EncoderWeight,
        ParamGroup::EncoderBias,
        ParamGroup::AttnW,
        ParamGroup::Heads,
        ParamGroup::OutputWeight,
        ParamGroup::OutputBias,
    ];

    /// Everything except the heads (Ω).
    pub const SHARED: [ParamGroup; 6] = [
        ParamGroup::Embedding,
        ParamGroup::EncoderWeight,
        ParamGroup::EncoderBias,
        ParamGroup::AttnW,
        ParamGroup::OutputWeight,
        ParamGroup::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::EncoderWeight => "encoder_weight",
            ParamGroup::EncoderBias => "encoder_bias",
            ParamGroup::AttnW => "attn_w",
            ParamGroup::Heads => "attn_v",
            ParamGroup::OutputWeight => "output_weight",
            ParamGroup::OutputBias => "output_bias",
        }
    }
}

/// Embedding, optional shared encoder, additive multi-head attention,
/// concat-flatten aggregation and a softmax classifier.
///
/// The particles are the columns of `attention.v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceClassifier {
    pub config: ModelConfig,
    pub embedding: Tensor2,
    pub encoder_weight: Tensor2,
    pub encoder_bias: Tensor2,
    pub attention: AdditiveAttnParams,
    pub output_weight: Tensor2,
    pub output_bias: Tensor2,
    mask: Vec<bool>,
}

/// Intermediates of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub tokens: Vec<usize>,
    /// Embedded tokens, `n × d`.
    pub embedded: Tensor2,
    /// Encoder output fed to attention, `n × d`.
    pub hidden: Tensor2,
    /// `tanh(W Hᵀ)`, `d_a × n`.
    pub alignment: Tensor2,
    /// Attention weights, `M × n`.
    pub attn: Tensor2,
    /// Head outputs with masked rows zeroed, `M × d`.
    pub heads: Tensor2,
    pub probs: Vec<f64>,
}

fn xavier(rng: &mut RngState, rows: usize, cols: usize) -> Tensor2 {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor2::from_vec(rows, cols, data).expect("finite init")
}

impl SentenceClassifier {
    /// Initializes from `seed`. The head vectors draw from the `Init` stream
    /// like every other weight; their jitter comes from the `Jitter` stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            vocab,
            embed_dim: d,
            attn_dim: d_a,
            heads: m,
            classes,
            ..
        } = config;
        let mut rng = RngState::new(seed, Stream::Init);
        let embedding = Tensor2::from_vec(
            vocab,
            d,
            (0..vocab * d).map(|_| config.embed_scale * rng.normal()).collect(),
        )?;
        let (encoder_weight, encoder_bias) = if config.encoder {
            (xavier(&mut rng, d, d), Tensor2::zeros(1, d))
        } else {
            (Tensor2::zeros(0, 0), Tensor2::zeros(0, 0))
        };
        let w = xavier(&mut rng, d_a, d);
        let mut v = Tensor2::from_vec(
            d_a,
            m,
            (0..d_a * m).map(|_| config.head_scale * rng.normal()).collect(),
        )?;
        let output_weight = if config.zero_output {
            Tensor2::zeros(m * d, classes)
        } else {
            xavier(&mut rng, m * d, classes)
        };
        let mut jitter = RngState::new(seed, Stream::Jitter);
        for x in v.data_mut() {
            *x += config.head_jitter * jitter.normal();
        }
        Ok(Self {
            config,
            embedding,
            encoder_weight,
            encoder_bias,
            attention: AdditiveAttnParams { w, v },
            output_weight,
            output_bias: Tensor2::zeros(1, classes),
            mask: vec![false; m],
        })
    }

    pub fn heads(&self) -> usize {
        self.config.heads
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, head: usize) -> bool {
        self.mask[head]
    }

    /// Zeroes head `head`'s output at inference. Parameters are untouched.
    pub fn mask_head(&self, head: usize) -> Result<SentenceClassifier> {
        let mut out = self.clone();
        out.set_mask(head, true)?;
        Ok(out)
    }

    pub fn unmask_head(&self, head: usize) -> Result<SentenceClassifier> {
        let mut out = self.clone();
        out.set_mask(head, false)?;
        Ok(out)
    }

    pub fn set_mask(&mut self, head: usize, masked: bool) -> Result<()> {
        let m = self.heads();
        let slot = self.mask.get_mut(head).ok_or_else(|| {
            Error::invalid("mask_head", format!("head {head} out of range for {m} heads"))
        })?;
        *slot = masked;
        Ok(())
    }

    pub fn clear_mask(&mut self) {
        self.mask.iter_mut().for_each(|m| *m = false);
    }

    /// Current head vectors as an `M × d_a` particle set.
    pub fn head_particles(&self) -> ParticleSet {
        ParticleSet::new(self.attention.v.transpose()).expect("model parameters are finite")
    }

    pub fn set_head_particles(&mut self, particles: &ParticleSet) -> Result<()> {
        let expected = (self.heads(), self.config.attn_dim);
        if (particles.m(), particles.dim()) != expected {
            return Err(Error::shapes(
                "set_head_particles",
                (particles.m(), particles.dim()),
                expected,
            ));
        }
        self.attention.v = particles.values().transpose();
        Ok(())
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Embedding => self.embedding.data(),
            ParamGroup::EncoderWeight => self.encoder_weight.data(),
            ParamGroup::EncoderBias => self.encoder_bias.data(),
            ParamGroup::AttnW => self.attention.w.data(),
            ParamGroup::Heads => self.attention.v.data(),
            ParamGroup::OutputWeight => self.output_weight.data(),
            ParamGroup::OutputBias => self.output_bias.data(),
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Embedding => self.embedding.data_mut(),
            ParamGroup::EncoderWeight => self.encoder_weight.data_mut(),
            ParamGroup::EncoderBias => self.encoder_bias.data_mut(),
            ParamGroup::AttnW => self.attention.w.data_mut(),
            ParamGroup::Heads => self.attention.v.data_mut(),
            ParamGroup::OutputWeight => self.output_weight.data_mut(),
            ParamGroup::OutputBias => self.output_bias.data_mut(),
        }
    }

    /// Ω flattened in [`ParamGroup::SHARED`] order.
    pub fn shared_flat(&self) -> Vec<f64> {
        ParamGroup::SHARED
            .iter()
            .flat_map(|&g| self.group(g).iter().copied())
            .collect()
    }

    pub fn set_shared_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = ParamGroup::SHARED.iter().map(|&g| self.group(g).len()).sum();
        if flat.len() != total {
            return Err(Error::shapes("set_shared_flat", (1, flat.len()), (1, total)));
        }
        let mut offset = 0;
        for g in ParamGroup::SHARED {
            let dst = self.group_mut(g);
            let len = dst.len();
            dst.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| self.group(g).len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .all(|&g| self.group(g).iter().all(|v| v.is_finite()))
    }

    fn embed(&self, tokens: &[usize]) -> Result<Tensor2> {
        let d = self.config.embed_dim;
        let vocab = self.config.vocab;
        if tokens.is_empty() {
            return Err(Error::invalid("classifier_forward", "empty token sequence"));
        }
        let mut out = Tensor2::zeros(tokens.len(), d);
        for (pos, &tok) in tokens.iter().enumerate() {
            if tok >= vocab {
                return Err(Error::OutOfVocab {
                    position: pos,
                    token: tok,
                    vocab,
                });
            }
            out.row_mut(pos).copy_from_slice(self.embedding.row(tok));
        }
        Ok(out)
    }

    /// Full forward pass keeping every intermediate.
    pub fn forward_pass(&self, tokens: &[usize]) -> Result<ForwardPass> {
        let embedded = self.embed(tokens)?;
        let hidden = if self.config.encoder {
            let mut pre = matmul(&embedded, &self.encoder_weight)?;
            for r in 0..pre.rows() {
                for (x, b) in pre.row_mut(r).iter_mut().zip(self.encoder_bias.data()) {
                    *x = (*x + b).tanh();
                }
            }
            pre
        } else {
            embedded.clone()
        };
        let alignment = matmul(&self.attention.w, &hidden.transpose())?.map(f64::tanh);
        let attn = softmax_rows(&matmul(&self.attention.v.transpose(), &alignment)?);
        let mut heads = matmul(&attn, &hidden)?;
        for (i, &masked) in self.mask.iter().enumerate() {
            if masked {
                heads.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let mut logits = self.output_bias.data().to_vec();
        for (k, &zk) in heads.data().iter().enumerate() {
            if zk == 0.0 {
                continue;
            }
            for (l, w) in logits.iter_mut().zip(self.output_weight.row(k)) {
                *l += zk * w;
            }
        }
        softmax_in_place(&mut logits);
        Ok(ForwardPass {
            tokens: tokens.to_vec(),
            embedded,
            hidden,
            alignment,
            attn,
            heads,
            probs: logits,
        })
    }

    /// Class probabilities for one token sequence.
    pub fn forward(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward_pass(tokens)?.probs)
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<usize> {
        Ok(argmax(&self.forward(tokens)?))
    }
}

/// Index of the largest entry; the first wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
