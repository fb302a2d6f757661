//! End-to-end evaluation: pipeline orchestration, pose metrics, the
//! ablation harness and file formats.

mod ablation;
mod io;
mod metrics;
mod pipeline;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use ablation::{
    run_ablation, train_ablation_weights, train_variant, AblationWeights, SuiteConfig, TrainedVariant,
};
pub use io::{
    read_json, records_from_csv, records_to_csv, report_from_csv, report_to_csv, write_json, MapFile,
    SceneFile, FORMAT_VERSION,
};
pub use metrics::{median, recall_at, report_row};
pub use pipeline::{
    evaluate_variant, localize_view, map_point_labels, match_query, prepare_from_scene, prepare_scene, query_positives,
    run_pipeline, training_samples, PipelineConfig, PreparedScene, QueryView, VariantModel,
};

/// Thresholds of the three recall columns as `(cm, degrees)`.
pub const RECALL_THRESHOLDS: [(f64, f64); 3] = [(1.0, 1.0), (3.0, 3.0), (5.0, 5.0)];

/// Matching front-ends compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Attention aggregation and attention matching.
    Gat,
    /// Mean aggregation, attention matching.
    MeanGnn,
    /// Mean aggregation, nearest-neighbour matching.
    MeanNn,
    /// k-means aggregation, nearest-neighbour matching.
    KMeansNn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gat, Variant::MeanGnn, Variant::MeanNn, Variant::KMeansNn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gat => "gat",
            Variant::MeanGnn => "mean-gnn",
            Variant::MeanNn => "mean-nn",
            Variant::KMeansNn => "kmeans-nn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }

    pub fn uses_network(self) -> bool {
        matches!(self, Variant::Gat | Variant::MeanGnn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Success,
    /// The object map could not be built.
    MapFailed,
    /// Fewer matches than the solver's sample size.
    TooFewMatches,
    /// RANSAC found too few inliers or a degenerate configuration.
    SolverFailed,
}

impl SolverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverStatus::Success => "success",
            SolverStatus::MapFailed => "map_failed",
            SolverStatus::TooFewMatches => "too_few_matches",
            SolverStatus::SolverFailed => "solver_failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SolverStatus::Success,
            SolverStatus::MapFailed,
            SolverStatus::TooFewMatches,
            SolverStatus::SolverFailed,
        ]
        .into_iter()
        .find(|x| x.as_str() == s)
    }
}

/// Outcome of localizing one query view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorRecord {
    pub scene_seed: u64,
    pub view_id: u64,
    /// `None` when no pose was produced.
    pub rot_err_deg: Option<f64>,
    pub trans_err_units: Option<f64>,
    pub num_matches: usize,
    /// Matches whose ground-truth labels agree.
    pub num_correct: usize,
    pub num_inliers: usize,
    pub status: SolverStatus,
    /// Wall-clock time of matching and pose solving.
    pub ms: f64,
}

/// One report line per variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    /// Recall at 1cm-1deg, 3cm-3deg and 5cm-5deg.
    pub r1: f64,
    pub r3: f64,
    pub r5: f64,
    /// Mean match count per frame.
    pub matches: f64,
    /// Median per-frame milliseconds, warm-up frames excluded.
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
}

impl BenchmarkReport {
    pub fn row(&self, variant: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn check_invariants(&self) -> Result<()> {
        for r in &self.rows {
            let ok = [r.r1, r.r3, r.r5].iter().all(|x| (0.0..=1.0).contains(x)) && r.r1 <= r.r3 && r.r3 <= r.r5;
            if !ok {
                return Err(Error::Format(format!("recalls of `{}` are not monotone in [0, 1]", r.variant)));
            }
        }
        Ok(())
    }
}
