//! One-dimensional analytic targets for checking the samplers.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParticleSet, RngState, Stream, Tensor2};
use crate::sampler::{
    apply_update, sgld_update, spos_phi, svgd_phi, ParticleOptimizer, Rule, SamplerConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyTarget {
    /// Standard normal.
    #[serde(rename = "gaussian-1d")]
    Gaussian1d,
    /// `½N(−3, 1) + ½N(3, 1)`.
    #[serde(rename = "mixture-1d")]
    Mixture1d,
}

impl ToyTarget {
    pub fn name(self) -> &'static str {
        match self {
            ToyTarget::Gaussian1d => "gaussian-1d",
            ToyTarget::Mixture1d => "mixture-1d",
        }
    }

    /// `dU/dx` with `U = −ln p`.
    pub fn grad_u(self, x: f64) -> f64 {
        match self {
            ToyTarget::Gaussian1d => x,
            ToyTarget::Mixture1d => x - 3.0 * (3.0 * x).tanh(),
        }
    }
}

impl FromStr for ToyTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-1d" => Ok(ToyTarget::Gaussian1d),
            "mixture-1d" => Ok(ToyTarget::Mixture1d),
            other => Err(Error::Config(format!(
                "unknown toy target `{other}` (expected gaussian-1d or mixture-1d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub target: ToyTarget,
    pub sampler: SamplerConfig,
    pub particles: usize,
    pub iterations: usize,
    /// Initial particles are `init_mean + init_std · N(0, 1)`.
    pub init_mean: f64,
    pub init_std: f64,
    /// Record moments every this many iterations.
    pub trace_every: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            target: ToyTarget::Gaussian1d,
            sampler: SamplerConfig {
                stepsize: 0.05,
                ..SamplerConfig::default()
            },
            particles: 50,
            iterations: 2000,
            init_mean: 0.0,
            init_std: 1.0,
            trace_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub target: ToyTarget,
    pub rule: Rule,
    pub particles: Vec<f64>,
    pub mean: f64,
    /// Population variance of the particles.
    pub variance: f64,
    /// Particles below / above zero.
    pub left: usize,
    pub right: usize,
    pub trace: Vec<TraceRow>,
}

impl ToyReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,mean,variance\n");
        for r in &self.trace {
            let _ = writeln!(out, "{},{},{}", r.iteration, r.mean, r.variance);
        }
        out
    }

    pub fn particles_csv(&self) -> String {
        let mut out = String::from("particle,value\n");
        for (i, x) in self.particles.iter().enumerate() {
            let _ = writeln!(out, "{i},{x}");
        }
        out
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Runs `config.sampler.rule` on the target's exact ∇U.
pub fn sample_toy(config: &ToyConfig) -> Result<ToyReport> {
    config.sampler.validate()?;
    if config.particles == 0 || config.iterations == 0 || config.trace_every == 0 {
        return Err(Error::Config("toy run needs particles, iterations and trace_every >= 1".into()));
    }
    let sampler = &config.sampler;
    let mut init_rng = RngState::new(config.seed, Stream::Init);
    let mut noise = RngState::new(config.seed, Stream::Toy);
    let init: Vec<f64> = (0..config.particles)
        .map(|_| config.init_mean + config.init_std * init_rng.normal())
        .collect();
    let mut particles = ParticleSet::from_scalars(&init)?;
    let mut opt = ParticleOptimizer::for_config(sampler, config.particles, 1);
    let mut trace = Vec::new();

    for it in 0..config.iterations {
        if it % config.trace_every == 0 {
            let (mean, variance) = moments(particles.values().data());
            trace.push(TraceRow {
                iteration: it,
                mean,
                variance,
            });
        }
        let grad_u = particles.values().map(|x| config.target.grad_u(x));
        let eps = sampler.stepsize_at(it as u64);
        particles = match sampler.rule {
            Rule::Sgld => sgld_update(&particles, &grad_u, eps, &mut noise)?,
            rule => {
                let phi: Tensor2 = match rule {
                    Rule::Svgd => svgd_phi(&particles, &grad_u, sampler)?,
                    Rule::Spos => spos_phi(&particles, &grad_u, sampler, eps, &mut noise)?,
                    _ => grad_u.scale(-1.0),
                };
                apply_update(&particles, &phi, sampler, &mut opt, it as u64)?
            }
        };
    }

    let xs = particles.into_values().into_data();
    let (mean, variance) = moments(&xs);
    trace.push(TraceRow {
        iteration: config.iterations,
        mean,
        variance,
    });
    Ok(ToyReport {
        target: config.target,
        rule: sampler.rule,
        left: xs.iter().filter(|&&x| x < 0.0).count(),
        right: xs.iter().filter(|&&x| x > 0.0).count(),
        particles: xs,
        mean,
        variance,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_gradient_matches_density() {
        let log_p = |x: f64| {
            let a = (-(x + 3.0) * (x + 3.0) / 2.0).exp();
            let b = (-(x - 3.0) * (x - 3.0) / 2.0).exp();
            (0.5 * a + 0.5 * b).ln()
        };
        for x in [-4.0, -1.0, 0.3, 2.5, 5.0] {
            let h = 1e-5;
            let fd = -(log_p(x + h) - log_p(x - h)) / (2.0 * h);
            assert!((ToyTarget::Mixture1d.grad_u(x) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn unknown_target_rejected() {
        assert!("banana".parse::<ToyTarget>().is_err());
        assert_eq!("mixture-1d".parse::<ToyTarget>().unwrap(), ToyTarget::Mixture1d);
    }

    #[test]
    fn plain_descent_from_a_common_start_collapses() {
        let config = ToyConfig {
            target: ToyTarget::Mixture1d,
            sampler: SamplerConfig {
                stepsize: 0.05,
                ..SamplerConfig::with_rule(Rule::Plain)
            },
            init_mean: 0.1,
            init_std: 0.0,
            iterations: 500,
            ..ToyConfig::default()
        };
        let r = sample_toy(&config).unwrap();
        assert_eq!((r.left, r.right), (0, 50));
        assert!((r.mean - 3.0).abs() < 0.05);
        assert!(r.variance < 1e-20);
    }

    #[test]
    fn trace_has_a_row_per_checkpoint() {
        let config = ToyConfig {
            iterations: 250,
            trace_every: 100,
            ..ToyConfig::default()
        };
        let r = sample_toy(&config).unwrap();
        let iters: Vec<usize> = r.trace.iter().map(|t| t.iteration).collect();
        assert_eq!(iters, vec![0, 100, 200, 250]);
        assert_eq!(r.particles_csv().lines().count(), 51);
    }
}
