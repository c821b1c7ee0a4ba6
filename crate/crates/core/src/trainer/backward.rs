//! Exact reverse-mode gradients for [`SentenceClassifier`], derived by hand
//! for the fixed chain embedding → tanh encoder → additive attention →
//! masked concat → affine → softmax cross-entropy.

use crate::attention::{ForwardPass, ParamGroup, SentenceClassifier};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::numeric::Tensor2;

use super::oracle::finite_diff_oracle;
use super::regularizers::{disagreement_regularizer, frobenius_regularizer, RegularizerKind, RegularizerSpec};

/// Gradients for every parameter block. `heads` is `M × d_a`, row `i`
/// aligned with particle `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Tensor2,
    pub encoder_weight: Tensor2,
    pub encoder_bias: Tensor2,
    pub attn_w: Tensor2,
    pub heads: Tensor2,
    pub output_weight: Tensor2,
    pub output_bias: Tensor2,
}

impl Gradients {
    pub fn zeros_like(model: &SentenceClassifier) -> Self {
        let z = |t: &Tensor2| Tensor2::zeros(t.rows(), t.cols());
        Self {
            embedding: z(&model.embedding),
            encoder_weight: z(&model.encoder_weight),
            encoder_bias: z(&model.encoder_bias),
            attn_w: z(&model.attention.w),
            heads: Tensor2::zeros(model.heads(), model.config.attn_dim),
            output_weight: z(&model.output_weight),
            output_bias: z(&model.output_bias),
        }
    }

    /// Gradient block in the same layout as [`SentenceClassifier::group`];
    /// for `Heads` that is `d_a × M`, so it is transposed here.
    pub fn group(&self, group: ParamGroup) -> Vec<f64> {
        match group {
            ParamGroup::Embedding => self.embedding.data().to_vec(),
            ParamGroup::EncoderWeight => self.encoder_weight.data().to_vec(),
            ParamGroup::EncoderBias => self.encoder_bias.data().to_vec(),
            ParamGroup::AttnW => self.attn_w.data().to_vec(),
            ParamGroup::Heads => self.heads.transpose().into_data(),
            ParamGroup::OutputWeight => self.output_weight.data().to_vec(),
            ParamGroup::OutputBias => self.output_bias.data().to_vec(),
        }
    }

    /// Ω gradients in the order of [`SentenceClassifier::shared_flat`].
    pub fn shared_flat(&self) -> Vec<f64> {
        ParamGroup::SHARED.iter().flat_map(|&g| self.group(g)).collect()
    }

    /// Name of the first block holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        ParamGroup::ALL
            .into_iter()
            .find(|&g| self.group(g).iter().any(|v| !v.is_finite()))
            .map(ParamGroup::name)
    }
}

/// Loss terms of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// Mean negative log-likelihood.
    pub nll: f64,
    /// Mean regularizer penalty, before weighting.
    pub penalty: f64,
    /// `nll + λ · penalty`, the differentiated objective.
    pub total: f64,
}

/// Mean of `−ln max(p[label], 1e-12)` over the batch.
pub fn nll_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::shapes("nll_loss", (probs.len(), 0), (labels.len(), 0)));
    }
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        if y >= p.len() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: p.len(),
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::invalid("nll_loss", format!("probabilities sum to {sum}")));
        }
        total -= p[y].max(1e-12).ln();
    }
    Ok(total / probs.len() as f64)
}

/// Loss and exact gradients of the mean batch objective. Only the
/// in-graph regularizers (Frobenius, disagreement) enter here.
pub fn backward(
    model: &SentenceClassifier,
    batch: &[Example],
    regularizer: &RegularizerSpec,
) -> Result<(BatchLoss, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("backward", "empty batch"));
    }
    let mut grads = Gradients::zeros_like(model);
    let scale = 1.0 / batch.len() as f64;
    let mut nll = 0.0;
    let mut penalty = 0.0;
    for ex in batch {
        if ex.label >= model.classes() {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                classes: model.classes(),
            });
        }
        let pass = model.forward_pass(&ex.tokens)?;
        nll -= pass.probs[ex.label].max(1e-12).ln();
        penalty += accumulate_example(model, &pass, ex.label, regularizer, scale, &mut grads)?;
    }
    nll *= scale;
    penalty *= scale;
    let total = nll + regularizer.weight() * penalty;
    if let Some(param) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            param: param.to_string(),
        });
    }
    Ok((BatchLoss { nll, penalty, total }, grads))
}

/// Objective value without gradients; the finite-difference oracle's target.
pub fn batch_objective(
    model: &SentenceClassifier,
    batch: &[Example],
    regularizer: &RegularizerSpec,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let pass = model.forward_pass(&ex.tokens)?;
        total -= pass.probs[ex.label].max(1e-12).ln();
        total += regularizer.weight() * example_penalty(model, &pass, regularizer)?;
    }
    Ok(total * scale)
}

fn active_rows(model: &SentenceClassifier) -> Vec<usize> {
    (0..model.heads()).filter(|&i| !model.is_masked(i)).collect()
}

fn gather_rows(t: &Tensor2, rows: &[usize]) -> Tensor2 {
    let mut out = Tensor2::zeros(rows.len(), t.cols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(t.row(r));
    }
    out
}

fn example_penalty(model: &SentenceClassifier, pass: &ForwardPass, reg: &RegularizerSpec) -> Result<f64> {
    match reg.kind {
        RegularizerKind::Frobenius => {
            let active = active_rows(model);
            Ok(frobenius_regularizer(&gather_rows(&pass.attn, &active))?.0)
        }
        RegularizerKind::Disagreement if active_rows(model).len() >= 2 => {
            Ok(disagreement_regularizer(&pass.heads, model.mask())?.0)
        }
        _ => Ok(0.0),
    }
}

/// Adds `scale ×` this example's gradient into `grads` and returns the
/// unweighted penalty.
fn accumulate_example(
    model: &SentenceClassifier,
    pass: &ForwardPass,
    label: usize,
    reg: &RegularizerSpec,
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let cfg = &model.config;
    let (d, d_a, m, classes) = (cfg.embed_dim, cfg.attn_dim, cfg.heads, cfg.classes);
    let n = pass.tokens.len();
    let lambda = reg.weight();
    let mut penalty = 0.0;

    // softmax cross-entropy
    let dlogits: Vec<f64> = (0..classes)
        .map(|c| scale * (pass.probs[c] - if c == label { 1.0 } else { 0.0 }))
        .collect();
    for (g, dl) in grads.output_bias.data_mut().iter_mut().zip(&dlogits) {
        *g += dl;
    }

    // affine readout over the flattened head outputs
    let mut dz = Tensor2::zeros(m, d);
    {
        let zflat = pass.heads.data();
        let dz_flat = dz.data_mut();
        for k in 0..m * d {
            let w_row = model.output_weight.row(k);
            let g_row = grads.output_weight.row_mut(k);
            let mut acc = 0.0;
            for c in 0..classes {
                g_row[c] += zflat[k] * dlogits[c];
                acc += w_row[c] * dlogits[c];
            }
            dz_flat[k] = acc;
        }
    }
    for i in 0..m {
        if model.is_masked(i) {
            dz.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
        }
    }

    if reg.kind == RegularizerKind::Disagreement && active_rows(model).len() >= 2 {
        let (p, g) = disagreement_regularizer(&pass.heads, model.mask())?;
        penalty = p;
        for (o, gv) in dz.data_mut().iter_mut().zip(g.data()) {
            *o += lambda * scale * gv;
        }
    }

    // Z = A H
    let h = &pass.hidden;
    let a = &pass.attn;
    let mut da = Tensor2::zeros(m, n);
    let mut dh = Tensor2::zeros(n, d);
    for i in 0..m {
        let dz_i = dz.row(i);
        if dz_i.iter().all(|&x| x == 0.0) {
            continue;
        }
        for t in 0..n {
            let h_t = h.row(t);
            let mut acc = 0.0;
            for e in 0..d {
                acc += dz_i[e] * h_t[e];
            }
            da.set(i, t, acc);
            let a_it = a.get(i, t);
            for (dh_e, &dz_e) in dh.row_mut(t).iter_mut().zip(dz_i) {
                *dh_e += a_it * dz_e;
            }
        }
    }

    if reg.kind == RegularizerKind::Frobenius {
        let active = active_rows(model);
        let (p, g) = frobenius_regularizer(&gather_rows(a, &active))?;
        penalty = p;
        for (k, &i) in active.iter().enumerate() {
            for (o, gv) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                *o += lambda * scale * gv;
            }
        }
    }

    // row softmax: dL = A ⊙ (dA − ⟨A, dA⟩)
    let mut dl = Tensor2::zeros(m, n);
    for i in 0..m {
        let a_i = a.row(i);
        let da_i = da.row(i);
        let inner: f64 = a_i.iter().zip(da_i).map(|(x, y)| x * y).sum();
        for (o, (&ai, &dai)) in dl.row_mut(i).iter_mut().zip(a_i.iter().zip(da_i)) {
            *o = ai * (dai - inner);
        }
    }

    // L = Vᵀ S, S = tanh(W Hᵀ)
    let s = &pass.alignment;
    let v = &model.attention.v;
    let mut dpre = Tensor2::zeros(d_a, n);
    for r in 0..d_a {
        let s_r = s.row(r);
        for i in 0..m {
            let dl_i = dl.row(i);
            let mut acc = 0.0;
            for t in 0..n {
                acc += s_r[t] * dl_i[t];
            }
            let g = grads.heads.get(i, r) + acc;
            grads.heads.set(i, r, g);
        }
        let v_r = v.row(r);
        let dpre_r = dpre.row_mut(r);
        for t in 0..n {
            let mut ds = 0.0;
            for i in 0..m {
                ds += v_r[i] * dl.get(i, t);
            }
            dpre_r[t] = ds * (1.0 - s_r[t] * s_r[t]);
        }
    }
    for r in 0..d_a {
        let dpre_r = dpre.row(r);
        let w_r = model.attention.w.row(r).to_vec();
        let gw_r = grads.attn_w.row_mut(r);
        for t in 0..n {
            let dp = dpre_r[t];
            if dp == 0.0 {
                continue;
            }
            let h_t = h.row(t);
            for e in 0..d {
                gw_r[e] += dp * h_t[e];
            }
            for (dh_e, w_e) in dh.row_mut(t).iter_mut().zip(&w_r) {
                *dh_e += dp * w_e;
            }
        }
    }

    // encoder H = tanh(H₀ W_e + b_e)
    let dh0 = if cfg.encoder {
        let h0 = &pass.embedded;
        let we = &model.encoder_weight;
        let mut dh0 = Tensor2::zeros(n, d);
        for t in 0..n {
            let dpre2: Vec<f64> = dh
                .row(t)
                .iter()
                .zip(h.row(t))
                .map(|(g, y)| g * (1.0 - y * y))
                .collect();
            for (b, g) in grads.encoder_bias.data_mut().iter_mut().zip(&dpre2) {
                *b += g;
            }
            let h0_t = h0.row(t);
            for f in 0..d {
                let gw_f = grads.encoder_weight.row_mut(f);
                for e in 0..d {
                    gw_f[e] += h0_t[f] * dpre2[e];
                }
                let we_f = we.row(f);
                dh0.set(t, f, we_f.iter().zip(&dpre2).map(|(w, g)| w * g).sum());
            }
        }
        dh0
    } else {
        dh
    };

    for (t, &tok) in pass.tokens.iter().enumerate() {
        for (g, x) in grads.embedding.row_mut(tok).iter_mut().zip(dh0.row(t)) {
            *g += x;
        }
    }
    Ok(penalty)
}

/// Per-group relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, 1e-10)` between
/// [`backward`] and central differences of [`batch_objective`].
pub fn gradient_check(
    model: &SentenceClassifier,
    batch: &[Example],
    regularizer: &RegularizerSpec,
    step: f64,
) -> Result<Vec<(ParamGroup, f64)>> {
    let (_, grads) = backward(model, batch, regularizer)?;
    let mut report = Vec::new();
    for group in ParamGroup::ALL {
        let x = model.group(group).to_vec();
        let mut probe = model.clone();
        let objective = |v: &[f64]| {
            probe.group_mut(group).copy_from_slice(v);
            batch_objective(&probe, batch, regularizer).unwrap_or(f64::NAN)
        };
        let fd = finite_diff_oracle(objective, &x, step);
        let exact = grads.group(group);
        let diff = exact.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = crate::numeric::norm(&exact).max(crate::numeric::norm(&fd)).max(1e-10);
        report.push((group, diff / scale));
    }
    Ok(report)
}

