use rand::seq::index::sample;
use rayon::prelude::*;

use super::network::{backward, forward_cached, MatcherInput};
use super::scoring::{focal_loss_grad, focal_loss_masked, positive_mask};
use super::weights::{MatcherWeights, WeightGradients};
use super::{MatcherConfig, TrainConfig};
use crate::rng::{stream, StreamKind};
use crate::{Error, Result};

/// One query view against one map, with its ground-truth correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: MatcherInput,
    /// `(query row, point row)` pairs, at most one per row and per column.
    pub positives: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: MatcherWeights,
    /// Batch loss before each update.
    pub loss_curve: Vec<f64>,
}

fn sample_loss_and_gradient(s: &TrainingSample, weights: &MatcherWeights, gamma: f64) -> Result<(f64, WeightGradients)> {
    let cache = forward_cached(&s.input, weights)?;
    let mask = positive_mask(cache.confidence.shape(), &s.positives)?;
    let loss = focal_loss_masked(&cache.confidence, &mask, gamma);
    let d_conf = focal_loss_grad(&cache.confidence, &mask, gamma);
    Ok((loss, backward(&cache, &s.input, weights, &d_conf)))
}

/// Mean focal loss over the batch and its gradient with respect to every
/// weight. Per-sample terms are evaluated in parallel and summed in index
/// order.
pub fn loss_and_gradient(batch: &[TrainingSample], weights: &MatcherWeights, gamma: f64) -> Result<(f64, WeightGradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty training batch".into()));
    }
    let parts: Vec<(f64, WeightGradients)> = batch
        .par_iter()
        .map(|s| sample_loss_and_gradient(s, weights, gamma))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = MatcherWeights::zeros(&weights.config);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (acc, t) in grad.tensors_mut().into_iter().zip(g.tensors()) {
            *acc += t;
        }
    }
    for t in grad.tensors_mut() {
        *t *= scale;
    }
    loss *= scale;
    if let Some(name) = grad.first_non_finite() {
        return Err(Error::NonFinite { layer: format!("gradient of {name}") });
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: "focal loss".into() });
    }
    Ok((loss, grad))
}

pub fn loss_gradient(batch: &[TrainingSample], weights: &MatcherWeights, train_cfg: &TrainConfig) -> Result<WeightGradients> {
    loss_and_gradient(batch, weights, train_cfg.focal_gamma).map(|(_, g)| g)
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const DIVERGENCE_FACTOR: f64 = 1e3;

fn batch_indices(n: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    if n <= batch {
        return (0..n).collect();
    }
    let mut rng = stream(seed, StreamKind::Training, step as u64);
    let mut idx = sample(&mut rng, n, batch).into_vec();
    idx.sort_unstable();
    idx
}

/// Adam from weights drawn with `train_cfg.seed`.
pub fn train(samples: &[TrainingSample], cfg: &MatcherConfig, train_cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let weights = MatcherWeights::random(cfg, train_cfg.seed)?;
    train_from(weights, samples, train_cfg)
}

/// Adam starting from the given weights.
pub fn train_from(mut weights: MatcherWeights, samples: &[TrainingSample], train_cfg: &TrainConfig) -> Result<TrainOutput> {
    train_cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("training needs at least one sample".into()));
    }
    let mut m = MatcherWeights::zeros(&weights.config);
    let mut v = MatcherWeights::zeros(&weights.config);
    let mut loss_curve = Vec::with_capacity(train_cfg.steps);
    let lr = train_cfg.learning_rate;

    for step in 0..train_cfg.steps {
        let idx = batch_indices(samples.len(), train_cfg.batch_views, train_cfg.seed, step);
        let batch: Vec<TrainingSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let (loss, grad) = loss_and_gradient(&batch, &weights, train_cfg.focal_gamma)?;
        if let Some(&initial) = loss_curve.first() {
            if loss > DIVERGENCE_FACTOR * initial {
                return Err(Error::Divergence { step, loss, initial });
            }
        }
        loss_curve.push(loss);
        if lr == 0.0 {
            continue;
        }

        let t = (step + 1) as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((w, g), m), v) in weights
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(m.tensors_mut())
            .zip(v.tensors_mut())
        {
            for i in 0..w.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        if let Some(name) = weights.first_non_finite() {
            return Err(Error::NonFinite { layer: format!("weight {name} after step {step}") });
        }
    }
    Ok(TrainOutput { weights, loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::AggregationMode;
    use crate::rng::{stream, StreamKind};
    use crate::scene::random_unit;
    use crate::Descriptor;

    fn descs(n: usize, d: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = stream(seed, StreamKind::Suite, 11);
        (0..n).map(|_| random_unit(&mut rng, d)).collect()
    }

    fn sample_for(seed: u64, d: usize, k: usize) -> TrainingSample {
        let j = 6;
        let points = descs(j, d, seed);
        let tracks: Vec<Vec<Descriptor>> = (0..j).map(|i| descs(k, d, seed * 31 + i as u64 + 1)).collect();
        // queries are noisy copies of the first five points, shuffled
        let mut rng = stream(seed, StreamKind::Suite, 12);
        let order = [3usize, 0, 4, 1, 2];
        let mut query: Vec<Descriptor> = order
            .iter()
            .map(|&p| {
                let noise = random_unit(&mut rng, d);
                points[p].iter().zip(noise).map(|(a, b)| a + 0.3 * b).collect()
            })
            .collect();
        query.push(random_unit(&mut rng, d));
        let positives = order.iter().enumerate().map(|(q, &p)| (q, p)).collect();
        TrainingSample {
            input: MatcherInput::new(&query, &points, &tracks, k).unwrap(),
            positives,
        }
    }

    fn small_cfg() -> MatcherConfig {
        MatcherConfig { num_groups: 2, descriptor_dim: 8, track_sample: 3, ..MatcherConfig::default() }
    }

    #[test]
    fn negative_gradient_descends() {
        let cfg = small_cfg();
        let w = MatcherWeights::random(&cfg, 3).unwrap();
        let batch = vec![sample_for(1, 8, 3), sample_for(2, 8, 3)];
        let (loss, g) = loss_and_gradient(&batch, &w, 2.0).unwrap();
        let flat = g.to_flat();
        let norm = flat.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut moved = w.clone();
        let wf: Vec<f64> = w.to_flat().iter().zip(&flat).map(|(a, b)| a - 1e-4 * b / norm).collect();
        moved.set_flat(&wf).unwrap();
        let (after, _) = loss_and_gradient(&batch, &moved, 2.0).unwrap();
        assert!(after < loss);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let cfg = small_cfg();
        let tc = TrainConfig { learning_rate: 0.0, steps: 3, ..TrainConfig::default() };
        let out = train(&[sample_for(1, 8, 3)], &cfg, &tc).unwrap();
        assert_eq!(out.weights, MatcherWeights::random(&cfg, 0).unwrap());
        assert_eq!(out.loss_curve.len(), 3);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = small_cfg();
        let samples: Vec<_> = (0..5).map(|s| sample_for(s, 8, 3)).collect();
        let tc = TrainConfig { learning_rate: 1e-2, steps: 30, batch_views: 2, seed: 4, ..TrainConfig::default() };
        let a = train(&samples, &cfg, &tc).unwrap();
        let b = train(&samples, &cfg, &tc).unwrap();
        assert_eq!(a.weights.to_flat(), b.weights.to_flat());
        assert_eq!(a.loss_curve, b.loss_curve);
        let (first, _) = loss_and_gradient(&samples, &MatcherWeights::random(&cfg, 4).unwrap(), 2.0).unwrap();
        let (last, _) = loss_and_gradient(&samples, &a.weights, 2.0).unwrap();
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn mean_mode_trains() {
        let cfg = MatcherConfig { aggregation: AggregationMode::Mean, ..small_cfg() };
        let tc = TrainConfig { learning_rate: 1e-2, steps: 5, ..TrainConfig::default() };
        let out = train(&[sample_for(7, 8, 3)], &cfg, &tc).unwrap();
        // aggregation weights receive no gradient in mean mode
        let init = MatcherWeights::random(&cfg, 0).unwrap();
        for (a, b) in out.weights.groups.iter().zip(&init.groups) {
            assert_eq!(a.aggregation, b.aggregation);
        }
    }

    #[test]
    fn bad_positives_are_rejected() {
        let cfg = small_cfg();
        let w = MatcherWeights::random(&cfg, 3).unwrap();
        let mut s = sample_for(1, 8, 3);
        s.positives.push((5, 3));
        assert!(loss_and_gradient(&[s], &w, 2.0).is_err());
    }
}
