//! Central finite-difference check of the analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::network::{sample_or_pad_track, MatcherInput};
use super::train::{loss_and_gradient, TrainingSample};
use super::weights::MatcherWeights;
use super::MatcherConfig;
use crate::rng::{stream, stream_key, StreamKind};
use crate::scene::random_unit;
use crate::{Descriptor, Result};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged by absolute error.
pub const GRADCHECK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub num_parameters: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Manifest name of the tensor holding the worst entry.
    pub worst_tensor: String,
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

/// Random instance with `d = 8`, `N = 2`, `J = 6`, `Q = 6` and tracks of
/// varied length padded or sampled to `K = 4`.
pub fn gradcheck_instance(seed: u64) -> Result<(Vec<TrainingSample>, MatcherWeights)> {
    let (d, j, q, k) = (8, 6, 6, 4);
    let cfg = MatcherConfig {
        num_groups: 2,
        descriptor_dim: d,
        track_sample: k,
        ..MatcherConfig::default()
    };
    let weights = MatcherWeights::random(&cfg, seed)?;
    let mut rng = stream(seed, StreamKind::Suite, 0);
    let points: Vec<Descriptor> = (0..j).map(|_| random_unit(&mut rng, d)).collect();
    let mut tracks = Vec::with_capacity(j);
    for (i, p) in points.iter().enumerate() {
        let len = rng.random_range(1..=6);
        let raw: Vec<Descriptor> = (0..len)
            .map(|_| {
                let n = random_unit(&mut rng, d);
                p.iter().zip(n).map(|(a, b)| a + 0.5 * b).collect()
            })
            .collect();
        tracks.push(sample_or_pad_track(&raw, k, stream_key(seed, StreamKind::TrackSample, i as u64))?);
    }
    let mut order: Vec<usize> = (0..j).collect();
    order.shuffle(&mut rng);
    let positives: Vec<(usize, usize)> = order.iter().take(4).enumerate().map(|(qi, &pj)| (qi, pj)).collect();
    let query: Vec<Descriptor> = (0..q)
        .map(|qi| match positives.get(qi) {
            Some(&(_, pj)) => {
                let n = random_unit(&mut rng, d);
                points[pj].iter().zip(n).map(|(a, b)| a + 0.4 * b).collect()
            }
            None => random_unit(&mut rng, d),
        })
        .collect();
    let input = MatcherInput::new(&query, &points, &tracks, k)?;
    Ok((vec![TrainingSample { input, positives }], weights))
}

/// Compares every analytic gradient entry with a central difference of
/// step `h`.
pub fn finite_difference_check(
    batch: &[TrainingSample],
    weights: &MatcherWeights,
    gamma: f64,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, grad) = loss_and_gradient(batch, weights, gamma)?;
    let analytic = grad.to_flat();
    let base = weights.to_flat();
    let loss_at = |flat: &[f64]| -> Result<f64> {
        let mut w = weights.clone();
        w.set_flat(flat)?;
        Ok(loss_and_gradient(batch, &w, gamma)?.0)
    };

    let mut report = GradCheckReport {
        seed: 0,
        num_parameters: base.len(),
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
    };
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let plus = loss_at(&probe)?;
        probe[i] = base[i] - h;
        let minus = loss_at(&probe)?;
        probe[i] = base[i];
        let numeric = (plus - minus) / (2.0 * h);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(GRADCHECK_FLOOR);
        report.max_absolute_error = report.max_absolute_error.max(abs);
        if i == 0 || rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }

    let mut offset = 0;
    for (name, rows, cols) in weights.manifest() {
        if report.worst_index < offset + rows * cols {
            report.worst_tensor = name;
            break;
        }
        offset += rows * cols;
    }
    Ok(report)
}

/// Full check on the seeded standard instance.
pub fn gradcheck_seed(seed: u64) -> Result<GradCheckReport> {
    let (batch, weights) = gradcheck_instance(seed)?;
    let mut report = finite_difference_check(&batch, &weights, 2.0, GRADCHECK_STEP)?;
    report.seed = seed;
    Ok(report)
}
