//! Particle update rules: SVGD, SPOS and the SGLD baseline, plus the glue
//! that hands a particle update direction to an optimizer.
//!
//! `φ` is always an *ascent* direction on the log posterior: the plain
//! integrator is `θ ← θ + ε φ(θ)`. Descent-style optimizers receive `−φ`.
//! That sign flip lives in [`apply_update`] and nowhere else.

mod adam;

pub use adam::{AdamConfig, AdamState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{kernel_table, KernelSpec};
pub use crate::numeric::ParticleSet;
use crate::numeric::{RngState, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Plain,
    Svgd,
    Spos,
    Sgld,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Plain, Rule::Svgd, Rule::Spos, Rule::Sgld];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Plain => "plain",
            Rule::Svgd => "svgd",
            Rule::Spos => "spos",
            Rule::Sgld => "sgld",
        }
    }

    /// Whether the rule's stationary behaviour assumes the plain `θ += εφ`
    /// integrator.
    pub fn needs_plain_integrator(self) -> bool {
        matches!(self, Rule::Spos | Rule::Sgld)
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown rule `{s}`")))
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Standard deviation of the isotropic Gaussian prior.
    pub sigma: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            kind: PriorKind::Uniform,
            sigma: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kind: PriorKind::Gaussian,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PriorKind::Gaussian && !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "gaussian prior needs sigma > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// How `φ` becomes a parameter change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// `θ ← θ + ε_ℓ φ`.
    Plain,
    /// Adam on the pseudo-gradient `−φ`, with `lr = ε`.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub rule: Rule,
    /// Initial stepsize ε.
    pub stepsize: f64,
    /// Multiplicative per-iteration decay of ε; 1.0 keeps it constant.
    pub stepsize_decay: f64,
    /// Weight on the kernel-gradient (repulsive) term.
    pub alpha: f64,
    /// SPOS inverse temperature β. `inf` switches the Langevin terms off.
    pub beta: f64,
    pub kernel: KernelSpec,
    pub prior: PriorSpec,
    pub update: UpdateMode,
    /// Permit SPOS/SGLD under an adaptive optimizer. The result no longer
    /// targets the intended stationary distribution.
    pub allow_adaptive_noise: bool,
    /// Multiplier on the minibatch-mean NLL gradient inside ∇U
    /// (set to N/|B| for the exact posterior scaling).
    pub likelihood_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            rule: Rule::Svgd,
            stepsize: 0.05,
            stepsize_decay: 1.0,
            alpha: 1.0,
            beta: 1000.0,
            kernel: KernelSpec::rbf_median(),
            prior: PriorSpec::default(),
            update: UpdateMode::Plain,
            allow_adaptive_noise: false,
            likelihood_scale: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn with_rule(rule: Rule) -> Self {
        Self {
            rule,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(Error::Config(format!("stepsize must be > 0, got {}", self.stepsize)));
        }
        if !(self.stepsize_decay > 0.0 && self.stepsize_decay <= 1.0) {
            return Err(Error::Config(format!(
                "stepsize_decay must lie in (0, 1], got {}",
                self.stepsize_decay
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.rule == Rule::Spos && !(self.beta > 0.0) {
            return Err(Error::Config(format!("spos needs beta > 0, got {}", self.beta)));
        }
        if !(self.likelihood_scale > 0.0 && self.likelihood_scale.is_finite()) {
            return Err(Error::Config(format!(
                "likelihood_scale must be > 0, got {}",
                self.likelihood_scale
            )));
        }
        if self.rule.needs_plain_integrator()
            && self.update != UpdateMode::Plain
            && !self.allow_adaptive_noise
        {
            return Err(Error::Config(format!(
                "{} injects noise calibrated to the plain integrator; set allow_adaptive_noise to use it with {:?}",
                self.rule, self.update
            )));
        }
        self.kernel.validate()?;
        self.prior.validate()
    }

    /// ε_ℓ for a zero-based iteration counter.
    pub fn stepsize_at(&self, iteration: u64) -> f64 {
        if self.stepsize_decay == 1.0 {
            self.stepsize
        } else {
            self.stepsize * self.stepsize_decay.powf(iteration as f64)
        }
    }

    fn beta_inv(&self) -> f64 {
        1.0 / self.beta
    }
}

fn check_shape(op: &'static str, particles: &ParticleSet, t: &Tensor2) -> Result<()> {
    let expected = (particles.m(), particles.dim());
    if t.shape() != expected {
        return Err(Error::shapes(op, t.shape(), expected));
    }
    Ok(())
}

/// `∇U(θ_i) = ∇NLL(θ_i) + ∇(−log p₀)(θ_i)` for every particle.
pub fn grad_potential(
    grad_nll: &Tensor2,
    particles: &ParticleSet,
    prior: &PriorSpec,
) -> Result<Tensor2> {
    check_shape("grad_potential", particles, grad_nll)?;
    match prior.kind {
        PriorKind::Uniform => Ok(grad_nll.clone()),
        PriorKind::Gaussian => {
            let inv_var = 1.0 / (prior.sigma * prior.sigma);
            let mut out = grad_nll.clone();
            for (o, t) in out.data_mut().iter_mut().zip(particles.values().data()) {
                *o += t * inv_var;
            }
            Ok(out)
        }
    }
}

/// SVGD direction:
/// `φ(θ_i) = (1/M) Σ_j [−κ(θ_j, θ_i) ∇U(θ_j) + α ∇_{θ_j} κ(θ_j, θ_i)]`.
///
/// With one particle the kernel path is skipped and `φ = −∇U`.
pub fn svgd_phi(particles: &ParticleSet, grad_u: &Tensor2, config: &SamplerConfig) -> Result<Tensor2> {
    check_shape("svgd_phi", particles, grad_u)?;
    let (m, dim) = (particles.m(), particles.dim());
    if m == 1 {
        return Ok(grad_u.scale(-1.0));
    }
    let table = kernel_table(particles, &config.kernel)?;
    let inv_m = 1.0 / m as f64;
    let alpha = config.alpha;
    let mut phi = Tensor2::zeros(m, dim);
    for i in 0..m {
        let out = phi.row_mut(i);
        for j in 0..m {
            let k = table.value(j, i);
            let gk = table.grad(j, i);
            for ((o, &g), &r) in out.iter_mut().zip(grad_u.row(j)).zip(gk) {
                *o += -k * g + alpha * r;
            }
        }
        for o in out.iter_mut() {
            *o *= inv_m;
        }
    }
    Ok(phi)
}

/// SPOS direction: the SVGD direction plus `−β⁻¹∇U(θ_i) + √(2β⁻¹/ε) ξ_i`.
///
/// Always consumes `M × dim` normal draws from `rng`, even when `β⁻¹ = 0`.
pub fn spos_phi(
    particles: &ParticleSet,
    grad_u: &Tensor2,
    config: &SamplerConfig,
    stepsize: f64,
    rng: &mut RngState,
) -> Result<Tensor2> {
    if !(stepsize > 0.0) {
        return Err(Error::invalid("spos_phi", format!("stepsize must be > 0, got {stepsize}")));
    }
    if !(config.beta > 0.0) {
        return Err(Error::invalid("spos_phi", format!("beta must be > 0, got {}", config.beta)));
    }
    let mut phi = svgd_phi(particles, grad_u, config)?;
    let beta_inv = config.beta_inv();
    let noise_scale = (2.0 * beta_inv / stepsize).sqrt();
    for (o, &g) in phi.data_mut().iter_mut().zip(grad_u.data()) {
        let xi = rng.normal();
        *o += -beta_inv * g + noise_scale * xi;
    }
    Ok(phi)
}

/// One SGLD move `θ − ε∇U + √(2ε) ξ` for a single particle.
pub fn sgld_step(
    particle: &[f64],
    grad_u: &[f64],
    stepsize: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    let noise: Vec<f64> = (0..particle.len()).map(|_| rng.normal()).collect();
    sgld_step_with_noise(particle, grad_u, stepsize, &noise)
}

/// SGLD move with caller-supplied noise; zero noise gives gradient descent.
pub fn sgld_step_with_noise(
    particle: &[f64],
    grad_u: &[f64],
    stepsize: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if !(stepsize > 0.0) {
        return Err(Error::invalid("sgld_step", format!("stepsize must be > 0, got {stepsize}")));
    }
    if particle.len() != grad_u.len() || particle.len() != noise.len() {
        return Err(Error::shapes("sgld_step", (1, particle.len()), (1, grad_u.len())));
    }
    let scale = (2.0 * stepsize).sqrt();
    Ok(particle
        .iter()
        .zip(grad_u)
        .zip(noise)
        .map(|((t, g), xi)| t - stepsize * g + scale * xi)
        .collect())
}

/// SGLD over every particle independently, rows in order.
pub fn sgld_update(
    particles: &ParticleSet,
    grad_u: &Tensor2,
    stepsize: f64,
    rng: &mut RngState,
) -> Result<ParticleSet> {
    check_shape("sgld_update", particles, grad_u)?;
    let rows = (0..particles.m())
        .map(|i| sgld_step(particles.particle(i), grad_u.row(i), stepsize, rng))
        .collect::<Result<Vec<_>>>()?;
    ParticleSet::from_rows(&rows)
}

/// Optimizer owning the particle update.
#[derive(Debug, Clone, PartialEq)]
pub enum ParticleOptimizer {
    Plain,
    Adam(AdamState),
}

impl ParticleOptimizer {
    pub fn for_config(config: &SamplerConfig, m: usize, dim: usize) -> Self {
        match config.update {
            UpdateMode::Plain => ParticleOptimizer::Plain,
            UpdateMode::Adam => ParticleOptimizer::Adam(AdamState::new(
                AdamConfig::with_lr(config.stepsize),
                m * dim,
            )),
        }
    }
}

/// Applies `φ` to the particles.
///
/// Plain: `θ_i += ε_ℓ φ(θ_i)`. Adam: the pseudo-gradient `−φ` is handed to
/// Adam, whose learning rate already carries ε.
pub fn apply_update(
    particles: &ParticleSet,
    phi: &Tensor2,
    config: &SamplerConfig,
    optimizer: &mut ParticleOptimizer,
    iteration: u64,
) -> Result<ParticleSet> {
    check_shape("apply_update", particles, phi)?;
    let mut values = particles.values().clone();
    match optimizer {
        ParticleOptimizer::Plain => {
            let eps = config.stepsize_at(iteration);
            for (t, p) in values.data_mut().iter_mut().zip(phi.data()) {
                *t += eps * p;
            }
        }
        ParticleOptimizer::Adam(state) => {
            if config.rule.needs_plain_integrator() && !config.allow_adaptive_noise {
                return Err(Error::Config(format!(
                    "{} with an adaptive optimizer requires allow_adaptive_noise",
                    config.rule
                )));
            }
            let pseudo_grad: Vec<f64> = phi.data().iter().map(|p| -p).collect();
            state.step(values.data_mut(), &pseudo_grad)?;
        }
    }
    ParticleSet::new(values)
}
