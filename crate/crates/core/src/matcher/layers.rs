//! Attention layers with hand-written reverse passes.
//!
//! Feature sets are matrices with one descriptor per row. A projection `W`
//! acts on a row `x` as `W x`, i.e. on a set as `X Wᵀ`.

use nalgebra::{DMatrix, DVector};

use super::weights::AttentionWeights;
use super::AggregationMode;
use crate::{Error, Result};

/// `elu(x) + 1`
#[inline]
pub(crate) fn feature_map(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

#[inline]
fn feature_map_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Saved activations of one linear-attention call.
#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    x: DMatrix<f64>,
    keys: DMatrix<f64>,
    values: DMatrix<f64>,
    q_pre: DMatrix<f64>,
    k_pre: DMatrix<f64>,
    phi_q: DMatrix<f64>,
    phi_k: DMatrix<f64>,
    v: DMatrix<f64>,
    kv: DMatrix<f64>,
    k_sum: DVector<f64>,
    den: DVector<f64>,
    message: DMatrix<f64>,
}

/// Linear attention of the rows of `x` over key rows `keys` and value rows
/// `values`, with the output projection and residual: `x + Wo · attn`.
///
/// With `φ = elu + 1`, query `q = Wq x_i`, keys `k_m = Wk keys_m` and values
/// `v_m = Wv values_m`, the message is
/// `(Σ_m φ(q)·φ(k_m) v_m) / (φ(q)·Σ_m φ(k_m) + eps)`, evaluated as
/// `φ(q)ᵀ (Σ_m φ(k_m) v_mᵀ)` so the cost is linear in the number of keys.
pub(crate) fn attention_forward(
    w: &AttentionWeights,
    x: &DMatrix<f64>,
    keys: &DMatrix<f64>,
    values: &DMatrix<f64>,
    eps: f64,
) -> (DMatrix<f64>, AttentionCache) {
    let q_pre = x * w.wq.transpose();
    let k_pre = keys * w.wk.transpose();
    let v = values * w.wv.transpose();
    let phi_q = q_pre.map(feature_map);
    let phi_k = k_pre.map(feature_map);

    let kv = phi_k.tr_mul(&v);
    let k_sum = DVector::from_iterator(phi_k.ncols(), phi_k.column_iter().map(|c| c.sum()));
    let den = (&phi_q * &k_sum).add_scalar(eps);
    let mut message = &phi_q * &kv;
    for (mut row, d) in message.row_iter_mut().zip(den.iter()) {
        row /= *d;
    }
    let out = x + &message * w.wo.transpose();
    let cache = AttentionCache {
        x: x.clone(),
        keys: keys.clone(),
        values: values.clone(),
        q_pre,
        k_pre,
        phi_q,
        phi_k,
        v,
        kv,
        k_sum,
        den,
        message,
    };
    (out, cache)
}

pub(crate) fn attention_message(c: &AttentionCache) -> &DMatrix<f64> {
    &c.message
}

/// Reverse pass: accumulates weight gradients into `grad` and returns the
/// gradients with respect to `x`, `keys` and `values`.
pub(crate) fn attention_backward(
    w: &AttentionWeights,
    c: &AttentionCache,
    d_out: &DMatrix<f64>,
    grad: &mut AttentionWeights,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    grad.wo += d_out.tr_mul(&c.message);
    let d_msg = d_out * &w.wo;

    let n = d_msg.nrows();
    let mut d_num = d_msg.clone();
    let mut d_den = DVector::zeros(n);
    for i in 0..n {
        let den = c.den[i];
        d_den[i] = -d_msg.row(i).dot(&c.message.row(i)) / den;
        let mut row = d_num.row_mut(i);
        row /= den;
    }

    let mut d_phi_q = &d_num * c.kv.transpose();
    for i in 0..n {
        let mut row = d_phi_q.row_mut(i);
        row += c.k_sum.transpose() * d_den[i];
    }
    let d_kv = c.phi_q.tr_mul(&d_num);
    let d_ksum = c.phi_q.tr_mul(&d_den);

    let mut d_phi_k = &c.v * d_kv.transpose();
    for mut row in d_phi_k.row_iter_mut() {
        row += d_ksum.transpose();
    }
    let d_v = &c.phi_k * &d_kv;

    let d_q = d_phi_q.zip_map(&c.q_pre, |g, z| g * feature_map_grad(z));
    let d_k = d_phi_k.zip_map(&c.k_pre, |g, z| g * feature_map_grad(z));

    grad.wq += d_q.tr_mul(&c.x);
    grad.wk += d_k.tr_mul(&c.keys);
    grad.wv += d_v.tr_mul(&c.values);

    let dx = d_out + &d_q * &w.wq;
    (dx, &d_k * &w.wk, &d_v * &w.wv)
}

/// Saved activations of the batched aggregation layer.
#[derive(Debug, Clone)]
pub(crate) struct AggregationCache {
    points: DMatrix<f64>,
    projected_tracks: DMatrix<f64>,
    projected_points: DMatrix<f64>,
    /// `J x K`
    pub(crate) alpha: DMatrix<f64>,
}

/// Aggregation attention over all tracks at once.
///
/// `tracks` holds `K` rows per point (row `j*K + k`). For point `j`,
/// `alpha_j = softmax_k <W t_jk, W f_j>` and the output is
/// `f_j + sum_k alpha_jk t_jk`. In [`AggregationMode::Mean`] the weights
/// are uniform and `W` is unused.
pub(crate) fn aggregation_forward(
    w: &DMatrix<f64>,
    tracks: &DMatrix<f64>,
    points: &DMatrix<f64>,
    k: usize,
    mode: AggregationMode,
) -> Result<(DMatrix<f64>, AggregationCache)> {
    let j_count = points.nrows();
    let d = points.ncols();
    let (projected_tracks, projected_points, alpha) = match mode {
        AggregationMode::Mean => (
            DMatrix::zeros(0, d),
            DMatrix::zeros(0, d),
            DMatrix::from_element(j_count, k, 1.0 / k as f64),
        ),
        AggregationMode::Attention => {
            let pt = tracks * w.transpose();
            let pp = points * w.transpose();
            let mut alpha = DMatrix::zeros(j_count, k);
            for j in 0..j_count {
                let logits: Vec<f64> = (0..k).map(|kk| pt.row(j * k + kk).dot(&pp.row(j))).collect();
                if logits.iter().any(|l| !l.is_finite()) {
                    return Err(Error::NonFinite {
                        layer: format!("aggregation similarity of point {j}"),
                    });
                }
                for (kk, a) in softmax(&logits).into_iter().enumerate() {
                    alpha[(j, kk)] = a;
                }
            }
            (pt, pp, alpha)
        }
    };

    let mut out = points.clone();
    for j in 0..j_count {
        let mut row = out.row_mut(j);
        for kk in 0..k {
            row += tracks.row(j * k + kk) * alpha[(j, kk)];
        }
    }
    let cache = AggregationCache {
        points: points.clone(),
        projected_tracks,
        projected_points,
        alpha,
    };
    Ok((out, cache))
}

/// Returns the gradient with respect to the point descriptors and
/// accumulates into `grad_w` (attention mode only).
pub(crate) fn aggregation_backward(
    w: &DMatrix<f64>,
    tracks: &DMatrix<f64>,
    c: &AggregationCache,
    d_out: &DMatrix<f64>,
    grad_w: &mut DMatrix<f64>,
    mode: AggregationMode,
) -> DMatrix<f64> {
    if mode == AggregationMode::Mean {
        return d_out.clone();
    }
    let (j_count, k) = c.alpha.shape();
    let d = d_out.ncols();
    let mut d_pt = DMatrix::zeros(j_count * k, d);
    let mut d_pp = DMatrix::zeros(j_count, d);
    for j in 0..j_count {
        let d_alpha: Vec<f64> = (0..k).map(|kk| d_out.row(j).dot(&tracks.row(j * k + kk))).collect();
        let weighted: f64 = (0..k).map(|kk| c.alpha[(j, kk)] * d_alpha[kk]).sum();
        for kk in 0..k {
            let da = c.alpha[(j, kk)] * (d_alpha[kk] - weighted);
            d_pt.row_mut(j * k + kk).copy_from(&(c.projected_points.row(j) * da));
            let mut row = d_pp.row_mut(j);
            row += c.projected_tracks.row(j * k + kk) * da;
        }
    }
    *grad_w += d_pt.tr_mul(tracks) + d_pp.tr_mul(&c.points);
    d_out + d_pp * w
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
