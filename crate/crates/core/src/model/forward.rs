use crate::fusion::{Patches, PATCH_LEN, SENSOR_FEATURES};

use super::{ModelError, ModelParams, TensorId};

pub const NORM_FLOOR: f64 = 1e-12;

/// Intermediate and output tensors of one forward pass. Matrices are
/// row-major with one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Encoder output, tokens x d_v.
    pub z: Vec<f64>,
    /// Projected tokens, tokens x d_h.
    pub h: Vec<f64>,
    /// L2 norm of each projected token.
    pub norms: Vec<f64>,
    /// Token saliency distribution: softmax of the token norms.
    pub p_vis: Vec<f64>,
    /// Cosine Gram matrix of projected tokens, tokens x tokens.
    pub a: Vec<f64>,
    pub pooled: Vec<f64>,
    /// Text embedding tanh(s · W_txt + b_txt).
    pub text: Vec<f64>,
    /// Head pre-activation; `relu` of this is the hidden layer.
    pub hidden_pre: Vec<f64>,
    pub logits: Vec<f64>,
    /// softmax(logits / temperature).
    pub p_resp: Vec<f64>,
}

impl ForwardTrace {
    pub fn tokens(&self) -> usize {
        self.norms.len()
    }
}

/// `out[j] = bias[j] + sum_i x[i] * w[i][j]` for a row-major `x.len() x cols` matrix.
pub(crate) fn affine(x: &[f64], w: &[f64], bias: &[f64], cols: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), x.len() * cols);
    let mut out = bias.to_vec();
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    values.iter().map(|v| v - lse).collect()
}

/// Frozen encoder: Z = tanh(P · W_enc + b_enc).
pub fn encode(params: &ModelParams, patches: &Patches) -> Result<Vec<f64>, ModelError> {
    let c = &params.config;
    if patches.len() != c.tokens {
        return Err(ModelError::Shape(format!(
            "expected {} patches, got {}",
            c.tokens,
            patches.len()
        )));
    }
    let w = params.tensor(TensorId::EncW);
    let b = params.tensor(TensorId::EncB);
    let mut z = Vec::with_capacity(c.tokens * c.d_v);
    for patch in patches {
        debug_assert_eq!(patch.len(), PATCH_LEN);
        z.extend(affine(patch, w, b, c.d_v).into_iter().map(f64::tanh));
    }
    Ok(z)
}

pub fn forward(
    params: &ModelParams,
    patches: &Patches,
    features: &[f64; SENSOR_FEATURES],
) -> Result<ForwardTrace, ModelError> {
    let z = encode(params, patches)?;
    forward_encoded(params, &z, features)
}

/// Forward pass from a precomputed encoder output. The encoder is frozen in
/// every training stage, so trainers cache `z` per observation.
pub fn forward_encoded(
    params: &ModelParams,
    z: &[f64],
    features: &[f64; SENSOR_FEATURES],
) -> Result<ForwardTrace, ModelError> {
    let c = &params.config;
    let (t, d_v, d_h) = (c.tokens, c.d_v, c.d_h);
    if z.len() != t * d_v {
        return Err(ModelError::Shape(format!(
            "encoder output has {} values, expected {}",
            z.len(),
            t * d_v
        )));
    }
    check_finite("Z", z)?;

    let wp = params.tensor(TensorId::ProjW);
    let bp = params.tensor(TensorId::ProjB);
    let mut h = Vec::with_capacity(t * d_h);
    for row in z.chunks(d_v) {
        h.extend(affine(row, wp, bp, d_h));
    }
    check_finite("H", &h)?;

    let norms: Vec<f64> = h
        .chunks(d_h)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let p_vis = softmax(&norms);
    check_finite("p_vis", &p_vis)?;

    let unit: Vec<f64> = h
        .chunks(d_h)
        .zip(&norms)
        .flat_map(|(r, n)| {
            let d = n.max(NORM_FLOOR);
            r.iter().map(move |v| v / d)
        })
        .collect();
    let mut a = vec![0.0; t * t];
    for i in 0..t {
        for j in i..t {
            let dot: f64 = unit[i * d_h..(i + 1) * d_h]
                .iter()
                .zip(&unit[j * d_h..(j + 1) * d_h])
                .map(|(x, y)| x * y)
                .sum();
            a[i * t + j] = dot;
            a[j * t + i] = dot;
        }
    }
    check_finite("A", &a)?;

    let mut pooled = vec![0.0; d_h];
    for row in h.chunks(d_h) {
        for (p, v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    for p in pooled.iter_mut() {
        *p /= t as f64;
    }

    let text: Vec<f64> = affine(
        features,
        params.tensor(TensorId::TxtW),
        params.tensor(TensorId::TxtB),
        d_h,
    )
    .into_iter()
    .map(f64::tanh)
    .collect();

    let joined: Vec<f64> = pooled.iter().chain(&text).cloned().collect();
    let hidden_pre = affine(
        &joined,
        params.tensor(TensorId::H1W),
        params.tensor(TensorId::H1B),
        c.hidden,
    );
    let activated: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
    let logits = affine(
        &activated,
        params.tensor(TensorId::H2W),
        params.tensor(TensorId::H2B),
        c.classes,
    );
    check_finite("logits", &logits)?;
    let scaled: Vec<f64> = logits.iter().map(|l| l / c.temperature).collect();
    let p_resp = softmax(&scaled);
    check_finite("p_resp", &p_resp)?;

    Ok(ForwardTrace {
        z: z.to_vec(),
        h,
        norms,
        p_vis,
        a,
        pooled,
        text,
        hidden_pre,
        logits,
        p_resp,
    })
}

fn check_finite(name: &'static str, values: &[f64]) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NumericFault { tensor: name })
    }
}
