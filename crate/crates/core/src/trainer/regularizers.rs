//! Diversity regularizer baselines.
//!
//! * Frobenius penalty `‖A Aᵀ − I‖²_F` on the attention matrix.
//! * Disagreement penalty: mean pairwise cosine similarity of head outputs.
//! * Cosine similarity on head *parameters*, in three stages of adaptation
//!   towards the particle update with a cosine kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cosine_eval, cosine_grad_first};
use crate::numeric::{matmul, ParticleSet, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    None,
    Frobenius,
    Disagreement,
    CosineParam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CosineVariant {
    /// `∇_{θ_i}` of the mean cosine similarity.
    Plain,
    /// Derivative taken with respect to the other particle, `∇_{θ_j}`.
    SwapIj,
    /// `SwapIj` with the drift smoothed by the cosine kernel.
    SwapIjSmooth,
}

impl CosineVariant {
    pub const ALL: [CosineVariant; 3] = [
        CosineVariant::Plain,
        CosineVariant::SwapIj,
        CosineVariant::SwapIjSmooth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CosineVariant::Plain => "plain",
            CosineVariant::SwapIj => "swap-ij",
            CosineVariant::SwapIjSmooth => "swap-ij-smooth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    /// Penalty weight λ; when absent the per-kind default applies.
    pub weight: Option<f64>,
    pub variant: CosineVariant,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            weight: None,
            variant: CosineVariant::SwapIjSmooth,
        }
    }
}

impl RegularizerSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(kind: RegularizerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn cosine(variant: CosineVariant) -> Self {
        Self {
            kind: RegularizerKind::CosineParam,
            weight: None,
            variant,
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight.unwrap_or(match self.kind {
            RegularizerKind::None => 0.0,
            RegularizerKind::Frobenius | RegularizerKind::Disagreement => 1.0,
            RegularizerKind::CosineParam => 0.1,
        })
    }

    pub fn label(&self) -> String {
        match self.kind {
            RegularizerKind::None => "none".into(),
            RegularizerKind::Frobenius => "frobenius".into(),
            RegularizerKind::Disagreement => "disagreement".into(),
            RegularizerKind::CosineParam => format!("cosine-param:{}", self.variant.name()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weight();
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::Config(format!("regularizer weight must be >= 0, got {w}")));
        }
        Ok(())
    }
}

/// `‖A Aᵀ − I‖²_F` and its gradient `4 (A Aᵀ − I) A`.
pub fn frobenius_regularizer(a: &Tensor2) -> Result<(f64, Tensor2)> {
    let mut g = matmul(a, &a.transpose())?;
    for i in 0..g.rows() {
        g.set(i, i, g.get(i, i) - 1.0);
    }
    let penalty = g.frobenius_sq();
    let grad = matmul(&g, a)?.scale(4.0);
    Ok((penalty, grad))
}

/// Mean pairwise cosine similarity of the rows of `z` and its gradient with
/// respect to each row. Rows listed in `skip` take no part.
pub fn disagreement_regularizer(z: &Tensor2, skip: &[bool]) -> Result<(f64, Tensor2)> {
    let active: Vec<usize> = (0..z.rows()).filter(|&i| !skip.get(i).copied().unwrap_or(false)).collect();
    let mut grad = Tensor2::zeros(z.rows(), z.cols());
    if active.len() < 2 {
        return Err(Error::invalid(
            "disagreement_regularizer",
            format!("needs at least 2 active heads, got {}", active.len()),
        ));
    }
    for &i in &active {
        if z.row(i).iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroNorm {
                op: "disagreement_regularizer",
                index: i,
            });
        }
    }
    let pairs = (active.len() * (active.len() - 1) / 2) as f64;
    let mut penalty = 0.0;
    for (n, &i) in active.iter().enumerate() {
        for &j in &active[n + 1..] {
            penalty += cosine_eval(z.row(i), z.row(j))?;
            let gi = cosine_grad_first(z.row(i), z.row(j))?;
            let gj = cosine_grad_first(z.row(j), z.row(i))?;
            for (o, g) in grad.row_mut(i).iter_mut().zip(&gi) {
                *o += g / pairs;
            }
            for (o, g) in grad.row_mut(j).iter_mut().zip(&gj) {
                *o += g / pairs;
            }
        }
    }
    Ok((penalty / pairs, grad))
}

/// Update direction produced by the cosine-similarity regularizer on head
/// parameters, plus the mean pairwise cosine similarity.
///
/// With `g_j = ∇U(θ_j)` and `c(x, y)` the cosine similarity:
///
/// * `Plain`:        `φ_i = −g_i + λ/M Σ_j ∇_{θ_i} c(θ_i, θ_j)`
/// * `SwapIj`:       `φ_i = −g_i + λ/M Σ_j ∇_{θ_j} c(θ_j, θ_i)`
/// * `SwapIjSmooth`: `φ_i = 1/M Σ_j [−c(θ_j, θ_i) g_j + λ ∇_{θ_j} c(θ_j, θ_i)]`
///
/// The last one is the particle update with a cosine kernel and `α = λ`.
pub fn cosine_param_regularizer(
    particles: &ParticleSet,
    grad_u: &Tensor2,
    lambda: f64,
    variant: CosineVariant,
) -> Result<(f64, Tensor2)> {
    let (m, dim) = (particles.m(), particles.dim());
    if grad_u.shape() != (m, dim) {
        return Err(Error::shapes("cosine_param_regularizer", grad_u.shape(), (m, dim)));
    }
    if m < 2 {
        return Err(Error::invalid("cosine_param_regularizer", "needs at least 2 particles"));
    }
    let check = |i: usize| -> Result<()> {
        if particles.particle(i).iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroNorm {
                op: "cosine_param_regularizer",
                index: i,
            });
        }
        Ok(())
    };
    (0..m).try_for_each(check)?;

    let mut penalty = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            penalty += cosine_eval(particles.particle(i), particles.particle(j))?;
        }
    }
    penalty /= (m * (m - 1) / 2) as f64;

    let inv_m = 1.0 / m as f64;
    let mut phi = Tensor2::zeros(m, dim);
    for i in 0..m {
        let xi = particles.particle(i);
        let out = phi.row_mut(i);
        match variant {
            CosineVariant::Plain | CosineVariant::SwapIj => {
                let mut rep = vec![0.0; dim];
                for j in 0..m {
                    let xj = particles.particle(j);
                    let g = match variant {
                        CosineVariant::Plain => cosine_grad_first(xi, xj)?,
                        _ => cosine_grad_first(xj, xi)?,
                    };
                    for (r, gk) in rep.iter_mut().zip(&g) {
                        *r += gk;
                    }
                }
                for ((o, &g), r) in out.iter_mut().zip(grad_u.row(i)).zip(&rep) {
                    *o = -g + lambda * inv_m * r;
                }
            }
            CosineVariant::SwapIjSmooth => {
                for j in 0..m {
                    let xj = particles.particle(j);
                    let k = cosine_eval(xj, xi)?;
                    let gk = cosine_grad_first(xj, xi)?;
                    for ((o, &g), &r) in out.iter_mut().zip(grad_u.row(j)).zip(&gk) {
                        *o += -k * g + lambda * r;
                    }
                }
                for o in out.iter_mut() {
                    *o *= inv_m;
                }
            }
        }
    }
    Ok((penalty, phi))
}
