use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backward::{backward, BatchLoss};
use super::regularizers::{cosine_param_regularizer, RegularizerKind, RegularizerSpec};
use crate::attention::{ModelConfig, SentenceClassifier};
use crate::data::{Example, Splits};
use crate::error::{Error, Result};
use crate::metrics;
use crate::numeric::{ParticleSet, RngState, Stream, Tensor2};
use crate::sampler::{
    apply_update, grad_potential, sgld_update, spos_phi, svgd_phi, AdamConfig, AdamState,
    ParticleOptimizer, Rule, SamplerConfig, UpdateMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Update rule for the head vectors Θ.
    pub sampler: SamplerConfig,
    /// Adam for the shared parameters Ω.
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub regularizer: RegularizerSpec,
    /// Global-norm clip on the Ω gradient and on ∇U; `0` disables.
    pub clip_norm: f64,
    /// Fill the `seconds` history column with real timings. Off by default
    /// so that repeated runs write identical files.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            optimizer: AdamConfig::with_lr(5e-3),
            epochs: 30,
            batch_size: 32,
            seed: 0,
            regularizer: RegularizerSpec::none(),
            clip_norm: 5.0,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.optimizer.validate()?;
        self.regularizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        if self.regularizer.kind == RegularizerKind::CosineParam && self.sampler.rule != Rule::Plain {
            return Err(Error::Config(
                "cosine-param supplies its own head update; use it with rule = plain".into(),
            ));
        }
        Ok(())
    }

    /// Both a repulsive rule and a baseline regularizer are active.
    pub fn is_combined(&self) -> bool {
        self.sampler.rule != Rule::Plain && self.regularizer.kind != RegularizerKind::None
    }
}

/// Scales `v` in place so its 2-norm is at most `max_norm`. Returns the
/// norm before clipping. `max_norm = 0` leaves `v` untouched.
pub fn clip_global_norm(v: &mut [f64], max_norm: f64) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && n > max_norm {
        let s = max_norm / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
    n
}

/// Optimizer and noise state carried across steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub shared: AdamState,
    pub particles: ParticleOptimizer,
    pub noise: RngState,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(model: &SentenceClassifier, config: &TrainConfig) -> Self {
        Self {
            shared: AdamState::new(config.optimizer, model.shared_flat().len()),
            particles: ParticleOptimizer::for_config(
                &config.sampler,
                model.heads(),
                model.config.attn_dim,
            ),
            noise: RngState::new(config.seed, Stream::Noise),
            iteration: 0,
        }
    }
}

/// One iteration: gradients, Adam on Ω, particle update on the unmasked
/// heads. Masked heads keep their exact values.
pub fn train_step(
    model: &mut SentenceClassifier,
    batch: &[Example],
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<BatchLoss> {
    let (loss, grads) = backward(model, batch, &config.regularizer)?;

    let mut shared_grad = grads.shared_flat();
    clip_global_norm(&mut shared_grad, config.clip_norm);
    let mut shared = model.shared_flat();
    state.shared.step(&mut shared, &shared_grad)?;
    model.set_shared_flat(&shared)?;

    let active: Vec<usize> = (0..model.heads()).filter(|&i| !model.is_masked(i)).collect();
    if !active.is_empty() {
        update_heads(model, &grads.heads, &active, config, state)?;
    }
    state.iteration += 1;
    Ok(loss)
}

fn update_heads(
    model: &mut SentenceClassifier,
    grad_heads: &Tensor2,
    active: &[usize],
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<()> {
    let sampler = &config.sampler;
    let all = model.head_particles();
    let dim = all.dim();
    let pick = |t: &Tensor2| -> Result<Tensor2> {
        Tensor2::from_rows(&active.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>())
    };
    let particles = ParticleSet::new(pick(all.values())?)?;

    let mut grad_nll = pick(grad_heads)?;
    if sampler.likelihood_scale != 1.0 {
        grad_nll = grad_nll.scale(sampler.likelihood_scale);
    }
    let mut grad_u = grad_potential(&grad_nll, &particles, &sampler.prior)?;
    clip_global_norm(grad_u.data_mut(), config.clip_norm);

    let eps = sampler.stepsize_at(state.iteration);
    let moved: Tensor2 = if sampler.rule == Rule::Sgld && sampler.update == UpdateMode::Plain {
        sgld_update(&particles, &grad_u, eps, &mut state.noise)?.into_values()
    } else {
        let phi = match (config.regularizer.kind, sampler.rule) {
            (RegularizerKind::CosineParam, _) if particles.m() >= 2 => {
                let lambda = config.regularizer.weight();
                cosine_param_regularizer(&particles, &grad_u, lambda, config.regularizer.variant)?.1
            }
            (_, Rule::Plain) | (RegularizerKind::CosineParam, _) => grad_u.scale(-1.0),
            (_, Rule::Svgd) => svgd_phi(&particles, &grad_u, sampler)?,
            (_, Rule::Spos) => spos_phi(&particles, &grad_u, sampler, eps, &mut state.noise)?,
            (_, Rule::Sgld) => {
                // adaptive-noise SGLD: θ − ε∇U + √(2ε)ξ written as θ + εφ
                let scale = (2.0 / eps).sqrt();
                let mut phi = grad_u.scale(-1.0);
                for p in phi.data_mut() {
                    *p += scale * state.noise.normal();
                }
                phi
            }
        };
        if active.len() == all.m() {
            apply_update(&particles, &phi, sampler, &mut state.particles, state.iteration)?.into_values()
        } else {
            // Run the optimizer over the full set with zero direction on
            // masked rows, then keep only the active rows.
            let mut full_phi = Tensor2::zeros(all.m(), dim);
            for (k, &i) in active.iter().enumerate() {
                full_phi.row_mut(i).copy_from_slice(phi.row(k));
            }
            let updated = apply_update(&all, &full_phi, sampler, &mut state.particles, state.iteration)?;
            pick(updated.values())?
        }
    };

    let mut values = all.into_values();
    for (k, &i) in active.iter().enumerate() {
        values.row_mut(i).copy_from_slice(moved.row(k));
    }
    model.set_head_particles(&ParticleSet::new(values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-set NLL after the epoch.
    pub loss: f64,
    pub val_acc: f64,
    /// Head diversity on the validation set (0 when M = 1).
    pub dist: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_acc,dist,seconds\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.loss, r.val_acc, r.dist, r.seconds);
        }
        out
    }

    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("history always holds epoch 0")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation-accuracy parameters.
    pub model: SentenceClassifier,
    /// Parameters after the last epoch.
    pub last: SentenceClassifier,
    pub history: TrainHistory,
}

fn evaluate(
    model: &SentenceClassifier,
    splits: &Splits,
    epoch: usize,
    seconds: f64,
) -> Result<EpochRecord> {
    let mut nll = 0.0;
    for ex in &splits.train.examples {
        nll -= model.forward(&ex.tokens)?[ex.label].max(1e-12).ln();
    }
    let loss = nll / splits.train.len() as f64;
    let val_acc = metrics::accuracy(model, &splits.validation.examples)?;
    let dist = if model.heads() >= 2 {
        metrics::model_head_distance(model, &splits.validation.examples)?
    } else {
        0.0
    };
    Ok(EpochRecord {
        epoch,
        loss,
        val_acc,
        dist,
        seconds,
    })
}

/// Trains a fresh model initialized from `config.seed`.
pub fn train(config: &TrainConfig, model_config: ModelConfig, splits: &Splits) -> Result<TrainOutcome> {
    let model = SentenceClassifier::new(model_config, config.seed)?;
    train_from(model, config, splits)
}

/// Trains `model` for `config.epochs` epochs with a per-seed shuffle and
/// returns the best-validation checkpoint alongside the final parameters.
pub fn train_from(
    mut model: SentenceClassifier,
    config: &TrainConfig,
    splits: &Splits,
) -> Result<TrainOutcome> {
    config.validate()?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(Error::invalid("train", "training and validation splits must be nonempty"));
    }
    splits.train.validate()?;
    splits.validation.validate()?;
    if splits.vocab() > model.config.vocab || splits.classes() != model.classes() {
        return Err(Error::Config(format!(
            "dataset has vocab {} / {} classes, model has {} / {}",
            splits.vocab(),
            splits.classes(),
            model.config.vocab,
            model.classes()
        )));
    }

    let start = Instant::now();
    let clock = |start: &Instant| {
        if config.record_wall_clock {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let mut state = TrainState::new(&model, config);
    let mut shuffle = RngState::new(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    let first = evaluate(&model, splits, 0, clock(&start))?;
    let mut best = (first.val_acc, 0usize, model.clone());
    let mut epochs = vec![first];

    for epoch in 1..=config.epochs {
        shuffle.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| splits.train.examples[i].clone()).collect();
            train_step(&mut model, &batch, config, &mut state)?;
        }
        let record = evaluate(&model, splits, epoch, clock(&start))?;
        if !record.loss.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: format!("training loss at epoch {epoch}"),
            });
        }
        if record.val_acc > best.0 {
            best = (record.val_acc, epoch, model.clone());
        }
        epochs.push(record);
    }

    Ok(TrainOutcome {
        model: best.2,
        last: model,
        history: TrainHistory {
            epochs,
            best_epoch: best.1,
        },
    })
}
