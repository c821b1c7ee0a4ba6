use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{matmul, softmax_rows, ParticleSet, Tensor2};

/// Projections `W_Q`, `W_K`, `W_V` (each `d_model × d_k`) of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotProductHeadParams {
    pub w_q: Tensor2,
    pub w_k: Tensor2,
    pub w_v: Tensor2,
}

impl DotProductHeadParams {
    fn check(&self) -> Result<(usize, usize)> {
        let shape = self.w_q.shape();
        for w in [&self.w_k, &self.w_v] {
            if w.shape() != shape {
                return Err(Error::shapes("DotProductHeadParams", shape, w.shape()));
            }
        }
        Ok(shape)
    }
}

/// Which projection matrices form a head's particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionScope {
    pub query: bool,
    pub key: bool,
    pub value: bool,
}

impl Default for ProjectionScope {
    fn default() -> Self {
        Self {
            query: true,
            key: true,
            value: true,
        }
    }
}

impl ProjectionScope {
    pub fn value_only() -> Self {
        Self {
            query: false,
            key: false,
            value: true,
        }
    }

    fn any(&self) -> bool {
        self.query || self.key || self.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotProductMha {
    pub heads: Vec<DotProductHeadParams>,
    /// `(M·d_k) × d_model`.
    pub w_o: Tensor2,
}

/// Scaled dot-product attention for one head.
///
/// Returns `(A_i, Z_i)` with `A_i = softmax(Q W_Q (K W_K)ᵀ / √d_k)` and
/// `Z_i = A_i V W_V`.
pub fn dot_product_head(
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
    params: &DotProductHeadParams,
) -> Result<(Tensor2, Tensor2)> {
    let (d_model, d_k) = params.check()?;
    for x in [q, k, v] {
        if x.cols() != d_model {
            return Err(Error::shapes("dot_product_head", x.shape(), (d_model, d_k)));
        }
    }
    if k.rows() != v.rows() {
        return Err(Error::shapes("dot_product_head", k.shape(), v.shape()));
    }
    let qi = matmul(q, &params.w_q)?;
    let ki = matmul(k, &params.w_k)?;
    let vi = matmul(v, &params.w_v)?;
    let logits = matmul(&qi, &ki.transpose())?.scale(1.0 / (d_k as f64).sqrt());
    let a = softmax_rows(&logits);
    let z = matmul(&a, &vi)?;
    Ok((a, z))
}

/// Concatenates head outputs along the width and projects with `W_O`.
pub fn multihead_concat(heads: &[Tensor2], w_o: &Tensor2) -> Result<Tensor2> {
    let first = heads
        .first()
        .ok_or_else(|| Error::invalid("multihead_concat", "no heads"))?;
    let (n, d_k) = first.shape();
    if let Some(bad) = heads.iter().find(|z| z.shape() != (n, d_k)) {
        return Err(Error::shapes("multihead_concat", first.shape(), bad.shape()));
    }
    let width = heads.len() * d_k;
    if w_o.rows() != width {
        return Err(Error::shapes("multihead_concat", (n, width), w_o.shape()));
    }
    let mut concat = Tensor2::zeros(n, width);
    for r in 0..n {
        let row = concat.row_mut(r);
        for (h, z) in heads.iter().enumerate() {
            row[h * d_k..(h + 1) * d_k].copy_from_slice(z.row(r));
        }
    }
    matmul(&concat, w_o)
}

impl DotProductMha {
    pub fn m(&self) -> usize {
        self.heads.len()
    }

    pub fn forward(&self, q: &Tensor2, k: &Tensor2, v: &Tensor2) -> Result<(Vec<Tensor2>, Tensor2)> {
        let mut maps = Vec::with_capacity(self.m());
        let mut outs = Vec::with_capacity(self.m());
        for head in &self.heads {
            let (a, z) = dot_product_head(q, k, v, head)?;
            maps.push(a);
            outs.push(z);
        }
        let out = multihead_concat(&outs, &self.w_o)?;
        Ok((maps, out))
    }

    /// One particle per head: `vec(W_Q) ‖ vec(W_K) ‖ vec(W_V)` restricted to
    /// `scope`, row-major, in that order.
    pub fn head_particles(&self, scope: ProjectionScope) -> Result<ParticleSet> {
        if !scope.any() {
            return Err(Error::Config("projection scope selects no matrices".into()));
        }
        let rows: Vec<Vec<f64>> = self
            .heads
            .iter()
            .map(|h| {
                let mut flat = Vec::new();
                for (on, w) in [(scope.query, &h.w_q), (scope.key, &h.w_k), (scope.value, &h.w_v)] {
                    if on {
                        flat.extend_from_slice(w.data());
                    }
                }
                flat
            })
            .collect();
        ParticleSet::from_rows(&rows)
    }

    pub fn set_head_particles(&mut self, scope: ProjectionScope, particles: &ParticleSet) -> Result<()> {
        let current = self.head_particles(scope)?;
        if (current.m(), current.dim()) != (particles.m(), particles.dim()) {
            return Err(Error::shapes(
                "set_head_particles",
                (particles.m(), particles.dim()),
                (current.m(), current.dim()),
            ));
        }
        for (h, head) in self.heads.iter_mut().enumerate() {
            let src = particles.particle(h);
            let mut offset = 0;
            for (on, w) in [
                (scope.query, &mut head.w_q),
                (scope.key, &mut head.w_k),
                (scope.value, &mut head.w_v),
            ] {
                if on {
                    let len = w.data().len();
                    w.data_mut().copy_from_slice(&src[offset..offset + len]);
                    offset += len;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{RngState, Stream};

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor2 {
        Tensor2::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    fn random(rng: &mut RngState, rows: usize, cols: usize) -> Tensor2 {
        Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_logits_give_uniform_attention() {
        let mut rng = RngState::new(1, Stream::Init);
        let params = DotProductHeadParams {
            w_q: Tensor2::zeros(3, 2),
            w_k: random(&mut rng, 3, 2),
            w_v: random(&mut rng, 3, 2),
        };
        let (q, kv) = (random(&mut rng, 2, 3), random(&mut rng, 4, 3));
        let (a, z) = dot_product_head(&q, &kv, &kv, &params).unwrap();
        assert!(a.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let vw = matmul(&kv, &params.w_v).unwrap();
        for c in 0..2 {
            let mean = vw.column(c).iter().sum::<f64>() / 4.0;
            assert!((z.get(0, c) - mean).abs() < 1e-12);
            assert!((z.get(1, c) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_logits() {
        // d_model = d_k = 1, identity projections: QW_Q = [2], KW_K = [[0],[2]]
        let params = DotProductHeadParams {
            w_q: t(1, 1, &[1.0]),
            w_k: t(1, 1, &[1.0]),
            w_v: t(1, 1, &[1.0]),
        };
        let (a, _) = dot_product_head(&t(1, 1, &[2.0]), &t(2, 1, &[0.0, 2.0]), &t(2, 1, &[1.0, 1.0]), &params).unwrap();
        assert!((a.get(0, 0) - 0.01799).abs() < 1e-5);
        assert!((a.get(0, 1) - 0.98201).abs() < 1e-5);
    }

    #[test]
    fn scaling_projections_rescales_logits() {
        // Scaling both projections by c^(1/2) multiplies logits by c; with
        // c = √d_k the 1/√d_k factor is undone.
        let mut rng = RngState::new(2, Stream::Init);
        let d_k = 4;
        let params = DotProductHeadParams {
            w_q: random(&mut rng, 3, d_k),
            w_k: random(&mut rng, 3, d_k),
            w_v: random(&mut rng, 3, d_k),
        };
        let q = random(&mut rng, 2, 3);
        let k = random(&mut rng, 5, 3);
        let c = (d_k as f64).sqrt();
        let scaled = DotProductHeadParams {
            w_q: params.w_q.scale(c.sqrt()),
            w_k: params.w_k.scale(c.sqrt()),
            w_v: params.w_v.clone(),
        };
        let (a, _) = dot_product_head(&q, &k, &k, &scaled).unwrap();
        let raw = matmul(&matmul(&q, &params.w_q).unwrap(), &matmul(&k, &params.w_k).unwrap().transpose()).unwrap();
        let expected = softmax_rows(&raw);
        for (x, y) in a.data().iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn head_rejects_bad_shapes() {
        let params = DotProductHeadParams {
            w_q: Tensor2::zeros(3, 2),
            w_k: Tensor2::zeros(3, 2),
            w_v: Tensor2::zeros(3, 2),
        };
        assert!(dot_product_head(&Tensor2::zeros(1, 2), &Tensor2::zeros(2, 3), &Tensor2::zeros(2, 3), &params).is_err());
        assert!(dot_product_head(&Tensor2::zeros(1, 3), &Tensor2::zeros(2, 3), &Tensor2::zeros(3, 3), &params).is_err());
    }

    #[test]
    fn concat_identity_and_sum() {
        let z = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(multihead_concat(std::slice::from_ref(&z), &Tensor2::identity(2)).unwrap(), z);

        let out = multihead_concat(&[t(1, 1, &[2.5]), t(1, 1, &[-1.0])], &t(2, 1, &[1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[1.5]);
        assert!(multihead_concat(&[z], &Tensor2::identity(3)).is_err());
    }

    #[test]
    fn zeroing_a_head_equals_deleting_its_rows() {
        let mut rng = RngState::new(3, Stream::Init);
        let z1 = random(&mut rng, 3, 2);
        let w_o = random(&mut rng, 4, 5);
        let zeroed = multihead_concat(&[z1.clone(), Tensor2::zeros(3, 2)], &w_o).unwrap();
        let top = Tensor2::from_vec(2, 5, w_o.data()[..10].to_vec()).unwrap();
        let deleted = multihead_concat(&[z1], &top).unwrap();
        for (a, b) in zeroed.data().iter().zip(deleted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn particle_round_trip_respects_scope() {
        let mut rng = RngState::new(4, Stream::Init);
        let head = |rng: &mut RngState| DotProductHeadParams {
            w_q: random(rng, 3, 2),
            w_k: random(rng, 3, 2),
            w_v: random(rng, 3, 2),
        };
        let mut mha = DotProductMha {
            heads: vec![head(&mut rng), head(&mut rng)],
            w_o: random(&mut rng, 4, 3),
        };
        let full = mha.head_particles(ProjectionScope::default()).unwrap();
        assert_eq!((full.m(), full.dim()), (2, 18));
        assert_eq!(&full.particle(1)[12..], mha.heads[1].w_v.data());

        let v_only = mha.head_particles(ProjectionScope::value_only()).unwrap();
        assert_eq!(v_only.dim(), 6);
        let doubled = ParticleSet::new(v_only.values().scale(2.0)).unwrap();
        let before_q = mha.heads[0].w_q.clone();
        mha.set_head_particles(ProjectionScope::value_only(), &doubled).unwrap();
        assert_eq!(mha.heads[0].w_q, before_q);
        assert_eq!(mha.heads[0].w_v.data(), doubled.particle(0));

        let none = ProjectionScope {
            query: false,
            key: false,
            value: false,
        };
        assert!(mha.head_particles(none).is_err());
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = RngState::new(5, Stream::Init);
        for _ in 0..20 {
            let params = DotProductHeadParams {
                w_q: random(&mut rng, 4, 3).scale(3.0),
                w_k: random(&mut rng, 4, 3),
                w_v: random(&mut rng, 4, 3),
            };
            let x = random(&mut rng, 6, 4);
            let (a, _) = dot_product_head(&x, &x, &x, &params).unwrap();
            for r in 0..a.rows() {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }
}
