use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::report_row;
use super::pipeline::{evaluate_variant, prepare_scene, training_samples, PipelineConfig, PreparedScene};
use super::{BenchmarkReport, PoseErrorRecord, Variant};
use crate::matcher::{train, AggregationMode, MatcherConfig, MatcherWeights, TrainConfig};
use crate::rng::{stream_key, StreamKind};
use crate::scene::SceneConfig;
use crate::{Error, Result};

/// Evaluation suite and the training setup of the network variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Scene template; the seed is replaced per scene.
    pub pipeline: PipelineConfig,
    pub num_scenes: usize,
    /// Training scenes, drawn from seeds disjoint from the evaluation ones.
    pub num_train_scenes: usize,
    pub seed: u64,
    pub matcher: MatcherConfig,
    pub train: TrainConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig {
                scene: SceneConfig {
                    num_query_views: 10,
                    sigma_desc: 0.15,
                    sigma_px: 1.0,
                    clutter_rate: 0.2,
                    ..SceneConfig::default()
                },
                ..PipelineConfig::default()
            },
            num_scenes: 5,
            num_train_scenes: 8,
            seed: 0,
            matcher: MatcherConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl SuiteConfig {
    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.num_scenes as u64).map(|i| stream_key(self.seed, StreamKind::Suite, i)).collect()
    }

    pub fn train_seeds(&self) -> Vec<u64> {
        (0..self.num_train_scenes as u64)
            .map(|i| stream_key(self.seed, StreamKind::Suite, (1 << 32) + i))
            .collect()
    }

    fn prepare(&self, seeds: &[u64]) -> Result<Vec<PreparedScene>> {
        seeds
            .par_iter()
            .map(|&seed| prepare_scene(&SceneConfig { seed, ..self.pipeline.scene.clone() }, &self.pipeline.map))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub weights: MatcherWeights,
    pub loss_curve: Vec<f64>,
}

/// Trains matcher weights with the given aggregation on the suite's
/// training scenes.
pub fn train_variant(suite: &SuiteConfig, aggregation: AggregationMode) -> Result<TrainedVariant> {
    let cfg = MatcherConfig { aggregation, ..suite.matcher.clone() };
    cfg.validate()?;
    let scenes = suite.prepare(&suite.train_seeds())?;
    let mut samples = Vec::new();
    for s in &scenes {
        samples.extend(training_samples(s, cfg.track_sample, suite.pipeline.track_seed)?);
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig("training scenes produced no supervised views".into()));
    }
    let out = train(&samples, &cfg, &suite.train)?;
    Ok(TrainedVariant { weights: out.weights, loss_curve: out.loss_curve })
}

/// Weights of the two network variants.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationWeights {
    pub gat: MatcherWeights,
    pub mean_gnn: MatcherWeights,
}

impl AblationWeights {
    pub fn for_variant(&self, v: Variant) -> Option<&MatcherWeights> {
        match v {
            Variant::Gat => Some(&self.gat),
            Variant::MeanGnn => Some(&self.mean_gnn),
            _ => None,
        }
    }
}

/// Trains both network variants; returns the weights and the two loss
/// curves (attention first).
pub fn train_ablation_weights(suite: &SuiteConfig) -> Result<(AblationWeights, [Vec<f64>; 2])> {
    let gat = train_variant(suite, AggregationMode::Attention)?;
    let mean = train_variant(suite, AggregationMode::Mean)?;
    Ok((
        AblationWeights { gat: gat.weights, mean_gnn: mean.weights },
        [gat.loss_curve, mean.loss_curve],
    ))
}

/// Evaluates every variant on the same scenes and query views. Scenes run
/// in parallel and are assembled in seed order.
pub fn run_ablation(
    suite: &SuiteConfig,
    weights: &AblationWeights,
    variants: &[Variant],
) -> Result<(BenchmarkReport, Vec<Vec<PoseErrorRecord>>)> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("no variants to evaluate".into()));
    }
    let scenes = suite.prepare(&suite.eval_seeds())?;
    let mut report = BenchmarkReport::default();
    let mut all = Vec::with_capacity(variants.len());
    for &v in variants {
        let parts: Vec<(Vec<PoseErrorRecord>, Vec<f64>)> = scenes
            .par_iter()
            .map(|s| evaluate_variant(s, v, weights.for_variant(v), &suite.pipeline))
            .collect::<Result<_>>()?;
        let mut records = Vec::new();
        let mut timings = Vec::new();
        for (r, t) in parts {
            records.extend(r);
            timings.extend(t);
        }
        report.rows.push(report_row(v.name(), &records, &timings)?);
        all.push(records);
    }
    report.check_invariants()?;
    Ok((report, all))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_suite() -> SuiteConfig {
        let mut s = SuiteConfig::default();
        s.pipeline.scene = SceneConfig { num_points: 80, num_query_views: 4, ..SceneConfig::default() };
        s.num_scenes = 2;
        s.num_train_scenes = 1;
        s.matcher = MatcherConfig { num_groups: 1, descriptor_dim: 32, ..MatcherConfig::default() };
        s.train = TrainConfig { steps: 2, ..TrainConfig::default() };
        s
    }

    #[test]
    fn seeds_are_disjoint() {
        let s = SuiteConfig { num_scenes: 50, num_train_scenes: 50, ..SuiteConfig::default() };
        let eval = s.eval_seeds();
        assert!(s.train_seeds().iter().all(|t| !eval.contains(t)));
    }

    #[test]
    fn zero_noise_suite_is_easy_for_every_variant() {
        let suite = tiny_suite();
        let (weights, curves) = train_ablation_weights(&suite).unwrap();
        assert_eq!(curves[0].len(), 2);
        let (report, records) = run_ablation(&suite, &weights, &Variant::ALL).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(records[0].len(), 8);
        for name in ["mean-nn", "kmeans-nn"] {
            assert_eq!(report.row(name).unwrap().r1, 1.0, "{name}");
        }
    }

    #[test]
    fn single_variant_gives_single_row() {
        let suite = tiny_suite();
        let w = MatcherWeights::random(&suite.matcher, 0).unwrap();
        let weights = AblationWeights { gat: w.clone(), mean_gnn: w };
        let (report, _) = run_ablation(&suite, &weights, &[Variant::MeanNn]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].variant, "mean-nn");
    }
}
