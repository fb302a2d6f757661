//! Graph-attention 2D-3D matcher.
//!
//! Per-point feature tracks are pooled into 3D descriptors by aggregation
//! attention, then query and 3D descriptors exchange information through
//! self- and cross-attention (linear attention with an `elu + 1` kernel).
//! Matching confidence is the dual softmax of the inner-product score matrix;
//! training minimises a focal loss using analytic gradients.

mod baselines;
mod gradcheck;
mod layers;
mod network;
mod scoring;
mod train;
mod weights;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Descriptor, Error, Result};

pub use baselines::{
    aggregate_kmeans, aggregate_mean, kmeans_with_history, match_nearest_neighbor, KMeansRun,
};
pub use gradcheck::{
    finite_difference_check, gradcheck_instance, gradcheck_seed, GradCheckReport, GRADCHECK_FLOOR,
    GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use network::{
    aggregation_attention, aggregation_traces, attention_group_forward, linear_attention,
    matcher_forward, sample_or_pad_track, LinearAttentionOutput, MatcherInput,
};
pub use scoring::{dual_softmax, focal_loss, select_matches};
pub use train::{loss_and_gradient, loss_gradient, train, train_from, TrainOutput, TrainingSample};
pub use weights::{AttentionWeights, GroupWeights, MatcherWeights, WeightGradients};

/// How each attention group pools a track into its 3D descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Softmax attention conditioned on the current 3D descriptor.
    Attention,
    /// Uniform weights (the averaging ablation).
    Mean,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Attention => "attention",
            AggregationMode::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attention" => Some(AggregationMode::Attention),
            "mean" => Some(AggregationMode::Mean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub num_groups: usize,
    pub descriptor_dim: usize,
    /// Track entries fed to aggregation (sampled or cyclically padded).
    pub track_sample: usize,
    pub confidence_threshold: f64,
    pub kernel_epsilon: f64,
    /// Multiplier on the cosine score before the dual softmax.
    pub score_scale: f64,
    pub aggregation: AggregationMode,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            num_groups: 4,
            descriptor_dim: 32,
            track_sample: 8,
            confidence_threshold: 0.2,
            kernel_epsilon: 1e-6,
            score_scale: 10.0,
            aggregation: AggregationMode::Attention,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_groups < 1 {
            return fail("num_groups must be at least 1");
        }
        if self.track_sample < 1 {
            return fail("track_sample must be at least 1");
        }
        if self.descriptor_dim < 1 {
            return fail("descriptor_dim must be at least 1");
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return fail("confidence_threshold must lie in (0, 1)");
        }
        if !(self.kernel_epsilon >= 0.0 && self.kernel_epsilon.is_finite()) {
            return fail("kernel_epsilon must be finite and non-negative");
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite()) {
            return fail("score_scale must be positive");
        }
        Ok(())
    }
}

/// Softmax weights of one track in one aggregation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationTrace {
    pub alpha: Vec<f64>,
}

/// `Q x J` inner-product scores between transformed query and 3D descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub DMatrix<f64>);

/// `Q x J` dual-softmax match confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix(pub DMatrix<f64>);

impl ConfidenceMatrix {
    pub fn num_queries(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub query: usize,
    pub point: usize,
    pub confidence: f64,
}

/// One-to-one 2D-3D matches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// True when no query and no point appears twice.
    pub fn is_one_to_one(&self) -> bool {
        let mut q: Vec<usize> = self.matches.iter().map(|m| m.query).collect();
        let mut p: Vec<usize> = self.matches.iter().map(|m| m.point).collect();
        q.sort_unstable();
        p.sort_unstable();
        q.windows(2).all(|w| w[0] != w[1]) && p.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub focal_gamma: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_views: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            focal_gamma: 2.0,
            learning_rate: 1e-3,
            steps: 300,
            batch_views: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::InvalidConfig("focal_gamma must be non-negative".into()));
        }
        // zero is accepted: it freezes the weights
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be non-negative".into()));
        }
        if self.batch_views == 0 {
            return Err(Error::InvalidConfig("batch_views must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn descriptors_to_matrix(rows: &[Descriptor], d: usize) -> Result<DMatrix<f64>> {
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                what: "descriptor",
                expected: d,
                actual: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_descriptors(m: &DMatrix<f64>) -> Vec<Descriptor> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn row_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.norm()))
}
