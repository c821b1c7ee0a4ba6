//! Kernels over flattened particle vectors.
//!
//! The RBF kernel is `κ(x, y) = exp(−‖x − y‖² / h)`. With the median
//! heuristic the bandwidth is recomputed from the current particles on every
//! evaluation as `h = med² / ln M`, where `med` is the median of the
//! off-diagonal pairwise distances. The cosine kernel treats cosine
//! similarity as a (non-PD) kernel; it exists so the cosine-similarity
//! regularizer can be expressed as a particle update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, norm, pairwise_distances, sq_dist, ParticleSet, Tensor2};

pub const DEFAULT_H_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    RbfMedian,
    RbfFixed,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Fixed bandwidth, used only by `rbf-fixed`.
    pub bandwidth: f64,
    pub h_min: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::rbf_median()
    }
}

impl KernelSpec {
    pub fn rbf_median() -> Self {
        Self {
            kind: KernelKind::RbfMedian,
            bandwidth: 1.0,
            h_min: DEFAULT_H_MIN,
        }
    }

    pub fn rbf_fixed(h: f64) -> Self {
        Self {
            kind: KernelKind::RbfFixed,
            bandwidth: h,
            h_min: DEFAULT_H_MIN,
        }
    }

    pub fn cosine() -> Self {
        Self {
            kind: KernelKind::Cosine,
            bandwidth: 1.0,
            h_min: DEFAULT_H_MIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_min > 0.0) {
            return Err(Error::Config(format!("kernel h_min must be > 0, got {}", self.h_min)));
        }
        if self.kind == KernelKind::RbfFixed && !(self.bandwidth > 0.0) {
            return Err(Error::Config(format!(
                "rbf-fixed kernel needs bandwidth > 0, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// Median heuristic: `max(med² / ln M, h_min)` over the strictly upper
/// triangle of `dists`.
pub fn median_bandwidth(dists: &Tensor2, m: usize, h_min: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::invalid(
            "median_bandwidth",
            format!("bandwidth is undefined for {m} particle(s)"),
        ));
    }
    if dists.shape() != (m, m) {
        return Err(Error::shapes("median_bandwidth", dists.shape(), (m, m)));
    }
    let mut upper = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            upper.push(dists.get(i, j));
        }
    }
    upper.sort_by(f64::total_cmp);
    let n = upper.len();
    let med = if n % 2 == 1 {
        upper[n / 2]
    } else {
        0.5 * (upper[n / 2 - 1] + upper[n / 2])
    };
    Ok((med * med / (m as f64).ln()).max(h_min))
}

fn check_dims(op: &'static str, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shapes(op, (1, x.len()), (1, y.len())));
    }
    Ok(())
}

pub fn rbf_eval(x: &[f64], y: &[f64], h: f64) -> Result<f64> {
    check_dims("rbf_eval", x, y)?;
    Ok((-sq_dist(x, y) / h).exp())
}

/// `∇ₓ κ(x, y) = −(2/h)(x − y) κ(x, y)`.
pub fn rbf_grad_first(x: &[f64], y: &[f64], h: f64) -> Result<Vec<f64>> {
    let k = rbf_eval(x, y, h)?;
    let c = -2.0 * k / h;
    Ok(x.iter().zip(y).map(|(a, b)| c * (a - b)).collect())
}

fn nonzero_norm(op: &'static str, v: &[f64], index: usize) -> Result<f64> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm { op, index });
    }
    Ok(n)
}

pub fn cosine_eval(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims("cosine_eval", x, y)?;
    let nx = nonzero_norm("cosine_eval", x, 0)?;
    let ny = nonzero_norm("cosine_eval", y, 1)?;
    Ok(dot(x, y) / (nx * ny))
}

/// `∇ₓ cos(x, y) = y/(‖x‖‖y‖) − (xᵀy) x/(‖x‖³‖y‖)`.
pub fn cosine_grad_first(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dims("cosine_grad_first", x, y)?;
    let nx = nonzero_norm("cosine_grad_first", x, 0)?;
    let ny = nonzero_norm("cosine_grad_first", y, 1)?;
    Ok(cosine_grad_parts(x, y, nx, ny))
}

fn cosine_grad_parts(x: &[f64], y: &[f64], nx: f64, ny: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let a = 1.0 / (nx * ny);
    let b = xy / (nx * nx * nx * ny);
    x.iter().zip(y).map(|(xi, yi)| a * yi - b * xi).collect()
}

/// All-pairs kernel values and first-argument gradients.
///
/// `value(j, i) = κ(θ_j, θ_i)` and `grad(j, i) = ∇_{θ_j} κ(θ_j, θ_i)`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    m: usize,
    dim: usize,
    values: Tensor2,
    grads: Vec<f64>,
    bandwidth: Option<f64>,
}

impl KernelTable {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &Tensor2 {
        &self.values
    }

    #[inline]
    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.values.get(j, i)
    }

    #[inline]
    pub fn grad(&self, j: usize, i: usize) -> &[f64] {
        let start = (j * self.m + i) * self.dim;
        &self.grads[start..start + self.dim]
    }

    /// Bandwidth used for RBF kernels; `None` for cosine.
    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }
}

pub fn kernel_table(particles: &ParticleSet, spec: &KernelSpec) -> Result<KernelTable> {
    let m = particles.m();
    if m < 2 {
        return Err(Error::invalid(
            "kernel_table",
            format!("need at least 2 particles, got {m}"),
        ));
    }
    spec.validate()?;
    let dim = particles.dim();
    let mut values = Tensor2::zeros(m, m);
    let mut grads = vec![0.0; m * m * dim];

    let bandwidth = match spec.kind {
        KernelKind::RbfMedian => Some(median_bandwidth(
            &pairwise_distances(particles),
            m,
            spec.h_min,
        )?),
        KernelKind::RbfFixed => Some(spec.bandwidth.max(spec.h_min)),
        KernelKind::Cosine => None,
    };

    match bandwidth {
        Some(h) => {
            for j in 0..m {
                let xj = particles.particle(j);
                for i in 0..m {
                    let xi = particles.particle(i);
                    let k = (-sq_dist(xj, xi) / h).exp();
                    values.set(j, i, k);
                    let c = -2.0 * k / h;
                    let g = &mut grads[(j * m + i) * dim..(j * m + i + 1) * dim];
                    for ((g, a), b) in g.iter_mut().zip(xj).zip(xi) {
                        *g = c * (a - b);
                    }
                }
            }
        }
        None => {
            let norms = (0..m)
                .map(|i| nonzero_norm("kernel_table", particles.particle(i), i))
                .collect::<Result<Vec<_>>>()?;
            for j in 0..m {
                let xj = particles.particle(j);
                for i in 0..m {
                    let xi = particles.particle(i);
                    values.set(j, i, dot(xj, xi) / (norms[j] * norms[i]));
                    let g = cosine_grad_parts(xj, xi, norms[j], norms[i]);
                    grads[(j * m + i) * dim..(j * m + i + 1) * dim].copy_from_slice(&g);
                }
            }
        }
    }

    Ok(KernelTable {
        m,
        dim,
        values,
        grads,
        bandwidth,
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)] // hand-computed expectations
mod tests {
    use super::*;
    use crate::numeric::{RngState, Stream};

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[i] += step;
                lo[i] -= step;
                (f(&hi) - f(&lo)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn median_of_three_scalars() {
        let p = ParticleSet::from_scalars(&[0.0, 1.0, 3.0]).unwrap();
        let h = median_bandwidth(&pairwise_distances(&p), 3, DEFAULT_H_MIN).unwrap();
        assert!((h - 4.0 / 3f64.ln()).abs() < 1e-12);
        assert!((h - 3.6410).abs() < 1e-4);
    }

    #[test]
    fn median_even_count_averages_middle_pair() {
        // 4 particles: 6 distances {1,2,3,1,2,1} -> sorted 1,1,1,2,2,3 -> med 1.5
        let p = ParticleSet::from_scalars(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let h = median_bandwidth(&pairwise_distances(&p), 4, DEFAULT_H_MIN).unwrap();
        assert!((h - 2.25 / 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn median_two_particles_and_floor() {
        let p = ParticleSet::from_scalars(&[0.0, 1.0]).unwrap();
        let h = median_bandwidth(&pairwise_distances(&p), 2, DEFAULT_H_MIN).unwrap();
        assert!((h - 1.4427).abs() < 1e-4);

        let same = ParticleSet::from_scalars(&[2.0, 2.0, 2.0]).unwrap();
        let h = median_bandwidth(&pairwise_distances(&same), 3, 1e-8).unwrap();
        assert_eq!(h, 1e-8);

        let one = ParticleSet::from_scalars(&[2.0]).unwrap();
        assert!(median_bandwidth(&pairwise_distances(&one), 1, 1e-8).is_err());
    }

    #[test]
    fn rbf_values() {
        assert_eq!(rbf_eval(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 1.0);
        assert!((rbf_eval(&[0.0], &[1.0], 1.0).unwrap() - 0.36788).abs() < 1e-5);
        assert!(rbf_eval(&[0.0], &[1.0, 2.0], 1.0).is_err());
        assert_eq!(rbf_grad_first(&[0.5, 0.5], &[0.5, 0.5], 2.0).unwrap(), vec![0.0, 0.0]);
        let g = rbf_grad_first(&[0.0], &[1.0], 1.0).unwrap();
        assert!((g[0] - 0.73576).abs() < 1e-5);
    }

    #[test]
    fn cosine_values() {
        assert!((cosine_eval(&[2.0, 1.0], &[2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_eval(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let g = cosine_grad_first(&[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(g, vec![0.0, 1.0]); // y / (‖x‖‖y‖)
        assert!((cosine_eval(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.70711).abs() < 1e-5);
        assert!(matches!(
            cosine_eval(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::ZeroNorm { index: 0, .. })
        ));
    }

    #[test]
    fn cosine_table_reports_zero_particle_index() {
        let p = ParticleSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            kernel_table(&p, &KernelSpec::cosine()),
            Err(Error::ZeroNorm { index: 1, .. })
        ));
    }

    #[test]
    fn table_two_scalar_particles() {
        let p = ParticleSet::from_scalars(&[0.0, 1.0]).unwrap();
        let t = kernel_table(&p, &KernelSpec::rbf_median()).unwrap();
        assert!((t.bandwidth().unwrap() - 1.0 / 2f64.ln()).abs() < 1e-15);
        assert!((t.value(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(t.value(0, 0), 1.0);
    }

    #[test]
    fn table_is_symmetric_with_unit_diagonal() {
        let mut rng = RngState::new(5, Stream::Init);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let p = ParticleSet::from_rows(&rows).unwrap();
        for spec in [KernelSpec::rbf_median(), KernelSpec::rbf_fixed(0.7), KernelSpec::cosine()] {
            let t = kernel_table(&p, &spec).unwrap();
            for i in 0..6 {
                assert!((t.value(i, i) - 1.0).abs() < 1e-12);
                for j in 0..6 {
                    assert!((t.value(i, j) - t.value(j, i)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn table_matches_pointwise_functions() {
        let mut rng = RngState::new(9, Stream::Init);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let p = ParticleSet::from_rows(&rows).unwrap();
        let t = kernel_table(&p, &KernelSpec::rbf_median()).unwrap();
        let h = t.bandwidth().unwrap();
        let tc = kernel_table(&p, &KernelSpec::cosine()).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                let g = rbf_grad_first(&rows[j], &rows[i], h).unwrap();
                for (a, b) in g.iter().zip(t.grad(j, i)) {
                    assert!((a - b).abs() < 1e-15);
                }
                let g = cosine_grad_first(&rows[j], &rows[i]).unwrap();
                for (a, b) in g.iter().zip(tc.grad(j, i)) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngState::new(21, Stream::Init);
        for trial in 0..100 {
            let dim = 1 + trial % 16;
            let x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let h = 0.5 + 2.0 * rng.uniform() * dim as f64;

            let analytic = rbf_grad_first(&x, &y, h).unwrap();
            let numeric = central_diff(|v| rbf_eval(v, &y, h).unwrap(), &x, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() < 1e-6, "rbf trial {trial}: {a} vs {n}");
            }

            let analytic = cosine_grad_first(&x, &y).unwrap();
            let numeric = central_diff(|v| cosine_eval(v, &y).unwrap(), &x, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() < 1e-6, "cosine trial {trial}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn rbf_gradient_antisymmetric() {
        let x = [0.3, -1.2, 2.0];
        let y = [1.0, 0.4, -0.5];
        let a = rbf_grad_first(&x, &y, 1.7).unwrap();
        let b = rbf_grad_first(&y, &x, 1.7).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(*u, -*v);
        }
        assert_eq!(rbf_eval(&x, &y, 1.7).unwrap(), rbf_eval(&y, &x, 1.7).unwrap());
    }

    #[test]
    fn rbf_matrix_positive_semidefinite() {
        let mut rng = RngState::new(33, Stream::Init);
        for trial in 0..50 {
            let m = 2 + trial % 7;
            let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
            let p = ParticleSet::from_rows(&rows).unwrap();
            let t = kernel_table(&p, &KernelSpec::rbf_median()).unwrap();
            let k = nalgebra::DMatrix::from_row_slice(m, m, t.values().data());
            let min = k.symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "trial {trial}: min eigenvalue {min}");
        }
    }

    #[test]
    fn median_bandwidth_scale_covariant() {
        let mut rng = RngState::new(4, Stream::Init);
        let rows: Vec<Vec<f64>> = (0..7).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
        let base = ParticleSet::from_rows(&rows).unwrap();
        let h = median_bandwidth(&pairwise_distances(&base), 7, DEFAULT_H_MIN).unwrap();
        for c in [0.1, 2.5, 13.0] {
            let scaled = ParticleSet::new(base.values().scale(c)).unwrap();
            let hc = median_bandwidth(&pairwise_distances(&scaled), 7, DEFAULT_H_MIN).unwrap();
            assert!((hc - c * c * h).abs() < 1e-9 * (1.0 + hc), "c={c}");
        }
    }

    #[test]
    fn rbf_fixed_requires_positive_bandwidth() {
        assert!(KernelSpec::rbf_fixed(0.0).validate().is_err());
        assert!(KernelSpec::rbf_fixed(0.5).validate().is_ok());
    }
}
