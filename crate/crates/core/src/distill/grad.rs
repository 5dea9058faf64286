//! Analytic gradients of the stage losses with respect to the trainable
//! tensors of each stage. Frozen tensors get no gradient entry at all.

use std::collections::BTreeMap;

use crate::model::{softmax, ForwardTrace, ModelParams, TensorId, NORM_FLOOR};

use super::loss::{corr_parts, PROB_FLOOR};
use super::{DistillError, KlDirection, LossWeights, Stage, TeacherTarget};

/// Gradient tensors keyed by parameter, trainable tensors only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    tensors: BTreeMap<TensorId, Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &ModelParams, stage: Stage) -> Self {
        let tensors = stage
            .trainable()
            .iter()
            .map(|id| (*id, vec![0.0; id.len(&params.config)]))
            .collect();
        Gradients { tensors }
    }

    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors.get(&id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = TensorId> + '_ {
        self.tensors.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TensorId, &[f64])> {
        self.tensors.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .values()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().flatten().all(|g| g.is_finite())
    }

    fn slot(&mut self, id: TensorId) -> Option<&mut Vec<f64>> {
        self.tensors.get_mut(&id)
    }
}

/// d KL / d z where the student distribution is softmax(z).
fn kl_grad_wrt_scores(teacher: &[f64], student: &[f64], direction: KlDirection) -> Vec<f64> {
    match direction {
        KlDirection::Forward => student.iter().zip(teacher).map(|(s, t)| s - t).collect(),
        KlDirection::Reverse => {
            let log_ratio: Vec<f64> = student
                .iter()
                .zip(teacher)
                .map(|(s, t)| {
                    if *s > 0.0 {
                        (s / t.max(PROB_FLOOR)).ln()
                    } else {
                        0.0
                    }
                })
                .collect();
            let kl: f64 = student.iter().zip(&log_ratio).map(|(s, l)| s * l).sum();
            student
                .iter()
                .zip(&log_ratio)
                .map(|(s, l)| s * (l - kl))
                .collect()
        }
    }
}

fn outer_add(dst: &mut [f64], x: &[f64], dy: &[f64]) {
    let cols = dy.len();
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let row = &mut dst[i * cols..(i + 1) * cols];
        for (d, g) in row.iter_mut().zip(dy) {
            *d += xi * g;
        }
    }
}

/// `W · dy` for a row-major `rows x dy.len()` matrix.
fn back_through(w: &[f64], dy: &[f64]) -> Vec<f64> {
    let cols = dy.len();
    w.chunks(cols)
        .map(|row| row.iter().zip(dy).map(|(a, b)| a * b).sum())
        .collect()
}

/// Accumulate `scale ·` d(stage loss)/d(params) for one sample into `out`.
pub fn accumulate_sample_grad(
    out: &mut Gradients,
    stage: Stage,
    params: &ModelParams,
    trace: &ForwardTrace,
    features: &[f64],
    teacher: Option<&TeacherTarget>,
    label: Option<usize>,
    weights: &LossWeights,
    direction: KlDirection,
    scale: f64,
) -> Result<(), DistillError> {
    let c = &params.config;
    let (t, d_v, d_h) = (c.tokens, c.d_v, c.d_h);

    // Response path: gradient with respect to the logits.
    let mut d_logits = vec![0.0; c.classes];
    let mut d_h_tokens = vec![0.0; t * d_h];
    if stage.uses_teacher() {
        let tt = teacher
            .ok_or_else(|| DistillError::contract(format!("{stage} needs a teacher target")))?;
        let g = kl_grad_wrt_scores(&tt.p_resp, &trace.p_resp, direction);
        for (d, gi) in d_logits.iter_mut().zip(g) {
            *d += weights.alpha * gi / c.temperature;
        }

        // Visual distribution: p_vis = softmax(norms).
        let g_norm = kl_grad_wrt_scores(&tt.p_vis, &trace.p_vis, direction);
        for i in 0..t {
            let n = trace.norms[i];
            if n <= 0.0 {
                continue;
            }
            let f = weights.beta * g_norm[i] / n;
            for k in 0..d_h {
                d_h_tokens[i * d_h + k] += f * trace.h[i * d_h + k];
            }
        }

        // Autocorrelation: L = 1 - <A_s, A_t> / (|A_s| |A_t|).
        let (dot, ss, t2) = corr_parts(&trace.a, &tt.a);
        let (ns, denom) = (ss.sqrt(), (ss * t2).sqrt());
        if denom > PROB_FLOOR && weights.gamma != 0.0 {
            let g_a: Vec<f64> = trace
                .a
                .iter()
                .zip(&tt.a)
                .map(|(s, tv)| -weights.gamma * (tv / denom - dot * s / (ns * ns * denom)))
                .collect();
            let floors: Vec<f64> = trace.norms.iter().map(|n| n.max(NORM_FLOOR)).collect();
            let unit = |i: usize, k: usize| trace.h[i * d_h + k] / floors[i];
            for i in 0..t {
                // dL/dU_i = sum_j (G_ij + G_ji) U_j
                let mut g_u = vec![0.0; d_h];
                for j in 0..t {
                    let w = g_a[i * t + j] + g_a[j * t + i];
                    if w == 0.0 {
                        continue;
                    }
                    for (k, gu) in g_u.iter_mut().enumerate() {
                        *gu += w * unit(j, k);
                    }
                }
                let n = trace.norms[i];
                if n > NORM_FLOOR {
                    let proj: f64 = (0..d_h).map(|k| unit(i, k) * g_u[k]).sum();
                    for k in 0..d_h {
                        d_h_tokens[i * d_h + k] += (g_u[k] - unit(i, k) * proj) / n;
                    }
                } else {
                    for k in 0..d_h {
                        d_h_tokens[i * d_h + k] += g_u[k] / NORM_FLOOR;
                    }
                }
            }
        }
    }
    if stage.uses_labels() {
        let y = label.ok_or_else(|| DistillError::contract(format!("{stage} needs labels")))?;
        let p = softmax(&trace.logits);
        for (k, (d, pk)) in d_logits.iter_mut().zip(p).enumerate() {
            *d += weights.delta * (pk - if k == y { 1.0 } else { 0.0 });
        }
    }
    for d in d_logits.iter_mut() {
        *d *= scale;
    }
    for d in d_h_tokens.iter_mut() {
        *d *= scale;
    }

    // Head.
    let activated: Vec<f64> = trace.hidden_pre.iter().map(|v| v.max(0.0)).collect();
    if let Some(g) = out.slot(TensorId::H2W) {
        outer_add(g, &activated, &d_logits);
    }
    if let Some(g) = out.slot(TensorId::H2B) {
        for (a, b) in g.iter_mut().zip(&d_logits) {
            *a += b;
        }
    }
    let d_act = back_through(params.tensor(TensorId::H2W), &d_logits);
    let d_pre: Vec<f64> = d_act
        .iter()
        .zip(&trace.hidden_pre)
        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
        .collect();
    let joined: Vec<f64> = trace.pooled.iter().chain(&trace.text).cloned().collect();
    if let Some(g) = out.slot(TensorId::H1W) {
        outer_add(g, &joined, &d_pre);
    }
    if let Some(g) = out.slot(TensorId::H1B) {
        for (a, b) in g.iter_mut().zip(&d_pre) {
            *a += b;
        }
    }
    let d_joined = back_through(params.tensor(TensorId::H1W), &d_pre);
    let (d_pooled, d_text) = d_joined.split_at(d_h);

    // Text embedding.
    if out.get(TensorId::TxtW).is_some() || out.get(TensorId::TxtB).is_some() {
        let d_text_pre: Vec<f64> = d_text
            .iter()
            .zip(&trace.text)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        if let Some(g) = out.slot(TensorId::TxtW) {
            outer_add(g, features, &d_text_pre);
        }
        if let Some(g) = out.slot(TensorId::TxtB) {
            for (a, b) in g.iter_mut().zip(&d_text_pre) {
                *a += b;
            }
        }
    }

    // Mean pooling feeds every token equally.
    for i in 0..t {
        for k in 0..d_h {
            d_h_tokens[i * d_h + k] += d_pooled[k] / t as f64;
        }
    }

    // Projector.
    if let Some(g) = out.slot(TensorId::ProjW) {
        for i in 0..t {
            outer_add(
                g,
                &trace.z[i * d_v..(i + 1) * d_v],
                &d_h_tokens[i * d_h..(i + 1) * d_h],
            );
        }
    }
    if let Some(g) = out.slot(TensorId::ProjB) {
        for i in 0..t {
            for k in 0..d_h {
                g[k] += d_h_tokens[i * d_h + k];
            }
        }
    }
    Ok(())
}
