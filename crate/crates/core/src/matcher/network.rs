use nalgebra::DMatrix;
use rand::seq::index::sample;

use super::layers::{
    aggregation_backward, aggregation_forward, attention_backward, attention_forward, attention_message,
    AggregationCache, AttentionCache,
};
use super::scoring::{dual_softmax_backward, softmax_factors};
use super::weights::{AttentionWeights, GroupWeights, MatcherWeights, WeightGradients};
use super::{
    descriptors_to_matrix, matrix_to_descriptors, row_norms, AggregationMode, AggregationTrace,
    ConfidenceMatrix, MatcherConfig, ScoreMatrix,
};
use crate::rng::{stream, stream_key, StreamKind};
use crate::sfm::ObjectMap;
use crate::{Descriptor, Error, Result};

/// Exactly `k` entries from a track: a seeded sample without replacement
/// when the track is long enough, otherwise the track repeated cyclically.
pub fn sample_or_pad_track(descriptors: &[Descriptor], k: usize, seed: u64) -> Result<Vec<Descriptor>> {
    if descriptors.is_empty() {
        return Err(Error::InvalidConfig("cannot sample an empty track".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("track sample size must be positive".into()));
    }
    if descriptors.len() >= k {
        let mut rng = stream(seed, StreamKind::TrackSample, 0);
        Ok(sample(&mut rng, descriptors.len(), k)
            .into_iter()
            .map(|i| descriptors[i].clone())
            .collect())
    } else {
        Ok((0..k).map(|i| descriptors[i % descriptors.len()].clone()).collect())
    }
}

/// Matrices fed to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherInput {
    /// `Q x d` query descriptors.
    pub query: DMatrix<f64>,
    /// `J x d` initial 3D descriptors.
    pub points: DMatrix<f64>,
    /// `(J*K) x d` track descriptors, `K` consecutive rows per point.
    pub tracks: DMatrix<f64>,
    pub track_sample: usize,
}

impl MatcherInput {
    /// `tracks[j]` must already hold exactly `track_sample` descriptors.
    pub fn new(query: &[Descriptor], points: &[Descriptor], tracks: &[Vec<Descriptor>], track_sample: usize) -> Result<Self> {
        let d = points
            .first()
            .or(query.first())
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidConfig("matcher input is empty".into()))?;
        if tracks.len() != points.len() {
            return Err(Error::DimensionMismatch {
                what: "tracks per point",
                expected: points.len(),
                actual: tracks.len(),
            });
        }
        let mut flat = Vec::with_capacity(points.len() * track_sample);
        for t in tracks {
            if t.len() != track_sample {
                return Err(Error::DimensionMismatch {
                    what: "track sample length",
                    expected: track_sample,
                    actual: t.len(),
                });
            }
            flat.extend(t.iter().cloned());
        }
        Ok(Self {
            query: descriptors_to_matrix(query, d)?,
            points: descriptors_to_matrix(points, d)?,
            tracks: descriptors_to_matrix(&flat, d)?,
            track_sample,
        })
    }

    /// Samples or pads every map track to `track_sample` entries. Track `j`
    /// uses the stream keyed by `(seed, j)`.
    pub fn from_map(query: &[Descriptor], map: &ObjectMap, track_sample: usize, seed: u64) -> Result<Self> {
        let tracks = map
            .tracks
            .iter()
            .enumerate()
            .map(|(j, t)| sample_or_pad_track(&t.descriptors, track_sample, stream_key(seed, StreamKind::TrackSample, j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(query, &map.desc3d, &tracks, track_sample)
    }

    pub fn num_queries(&self) -> usize {
        self.query.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.points.ncols()
    }

    fn check(&self, cfg: &MatcherConfig) -> Result<()> {
        let d = cfg.descriptor_dim;
        for (what, m) in [("query", &self.query), ("points", &self.points), ("tracks", &self.tracks)] {
            if m.ncols() != d {
                return Err(Error::DimensionMismatch { what, expected: d, actual: m.ncols() });
            }
        }
        if self.query.nrows() == 0 || self.points.nrows() == 0 {
            return Err(Error::InvalidConfig("matcher needs at least one query and one point".into()));
        }
        if self.tracks.nrows() != self.points.nrows() * self.track_sample {
            return Err(Error::DimensionMismatch {
                what: "track rows",
                expected: self.points.nrows() * self.track_sample,
                actual: self.tracks.nrows(),
            });
        }
        Ok(())
    }
}

/// Pools one track into a 3D descriptor with aggregation attention.
pub fn aggregation_attention(
    track: &[Descriptor],
    f3d: &Descriptor,
    w: &DMatrix<f64>,
) -> Result<(Descriptor, AggregationTrace)> {
    let d = f3d.len();
    if w.shape() != (d, d) {
        return Err(Error::DimensionMismatch { what: "aggregation weight", expected: d, actual: w.nrows() });
    }
    let tracks = descriptors_to_matrix(track, d)?;
    let points = descriptors_to_matrix(std::slice::from_ref(f3d), d)?;
    let (out, cache) = aggregation_forward(w, &tracks, &points, track.len(), AggregationMode::Attention)?;
    let alpha = cache.alpha.row(0).iter().copied().collect();
    Ok((out.row(0).iter().copied().collect(), AggregationTrace { alpha }))
}

/// Output of [`linear_attention`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAttentionOutput {
    /// Attention result before the output projection.
    pub message: Vec<Descriptor>,
    /// `query + Wo · message`
    pub output: Vec<Descriptor>,
}

pub fn linear_attention(
    queries: &[Descriptor],
    keys: &[Descriptor],
    values: &[Descriptor],
    w: &AttentionWeights,
    kernel_epsilon: f64,
) -> Result<LinearAttentionOutput> {
    if keys.len() != values.len() {
        return Err(Error::DimensionMismatch { what: "values per key", expected: keys.len(), actual: values.len() });
    }
    let d = w.wq.nrows();
    let (out, cache) = attention_forward(
        w,
        &descriptors_to_matrix(queries, d)?,
        &descriptors_to_matrix(keys, d)?,
        &descriptors_to_matrix(values, d)?,
        kernel_epsilon,
    );
    Ok(LinearAttentionOutput {
        message: matrix_to_descriptors(attention_message(&cache)),
        output: matrix_to_descriptors(&out),
    })
}

pub(crate) struct GroupCache {
    aggregation: AggregationCache,
    self_query: AttentionCache,
    self_points: AttentionCache,
    cross_query: AttentionCache,
    cross_points: AttentionCache,
}

fn group_forward(
    g: &GroupWeights,
    cfg: &MatcherConfig,
    query: &DMatrix<f64>,
    points: &DMatrix<f64>,
    tracks: &DMatrix<f64>,
    k: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, GroupCache)> {
    let eps = cfg.kernel_epsilon;
    let (aggregated, aggregation) = aggregation_forward(&g.aggregation, tracks, points, k, cfg.aggregation)?;
    let (q1, self_query) = attention_forward(&g.self_attention, query, query, query, eps);
    let (p1, self_points) = attention_forward(&g.self_attention, &aggregated, &aggregated, &aggregated, eps);
    let (q2, cross_query) = attention_forward(&g.cross_attention, &q1, &p1, &p1, eps);
    let (p2, cross_points) = attention_forward(&g.cross_attention, &p1, &q1, &q1, eps);
    Ok((
        q2,
        p2,
        GroupCache {
            aggregation,
            self_query,
            self_points,
            cross_query,
            cross_points,
        },
    ))
}

fn group_backward(
    g: &GroupWeights,
    cfg: &MatcherConfig,
    cache: &GroupCache,
    tracks: &DMatrix<f64>,
    d_query: &DMatrix<f64>,
    d_points: &DMatrix<f64>,
    grad: &mut GroupWeights,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (dq1_a, dp1_k, dp1_v) = attention_backward(&g.cross_attention, &cache.cross_query, d_query, &mut grad.cross_attention);
    let (dp1_b, dq1_k, dq1_v) = attention_backward(&g.cross_attention, &cache.cross_points, d_points, &mut grad.cross_attention);
    let d_q1 = dq1_a + dq1_k + dq1_v;
    let d_p1 = dp1_b + dp1_k + dp1_v;

    let (dq_x, dq_k, dq_v) = attention_backward(&g.self_attention, &cache.self_query, &d_q1, &mut grad.self_attention);
    let (dagg_x, dagg_k, dagg_v) = attention_backward(&g.self_attention, &cache.self_points, &d_p1, &mut grad.self_attention);
    let d_query_in = dq_x + dq_k + dq_v;
    let d_agg = dagg_x + dagg_k + dagg_v;

    let d_points_in = aggregation_backward(
        &g.aggregation,
        tracks,
        &cache.aggregation,
        &d_agg,
        &mut grad.aggregation,
        cfg.aggregation,
    );
    (d_query_in, d_points_in)
}

/// One attention group: aggregation, self attention on each set, then cross
/// attention in both directions. Returns the transformed query and 3D sets.
pub fn attention_group_forward(
    query: &DMatrix<f64>,
    tracks: &DMatrix<f64>,
    points: &DMatrix<f64>,
    group: &GroupWeights,
    cfg: &MatcherConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = cfg.track_sample;
    if tracks.nrows() != points.nrows() * k {
        return Err(Error::DimensionMismatch { what: "track rows", expected: points.nrows() * k, actual: tracks.nrows() });
    }
    let (q, p, _) = group_forward(group, cfg, query, points, tracks, k)?;
    Ok((q, p))
}

/// Everything the reverse pass needs.
pub(crate) struct ForwardCache {
    groups: Vec<GroupCache>,
    query_out: DMatrix<f64>,
    points_out: DMatrix<f64>,
    query_unit: DMatrix<f64>,
    points_unit: DMatrix<f64>,
    pub(crate) row_softmax: DMatrix<f64>,
    pub(crate) col_softmax: DMatrix<f64>,
    pub(crate) scores: DMatrix<f64>,
    pub(crate) confidence: DMatrix<f64>,
}

fn unit_rows(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let norms = row_norms(m);
    if norms.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(Error::NonFinite { layer: format!("{what} descriptor normalization") });
    }
    let mut out = m.clone();
    for (mut row, n) in out.row_iter_mut().zip(norms.iter()) {
        row /= *n;
    }
    Ok(out)
}

pub(crate) fn forward_cached(input: &MatcherInput, weights: &MatcherWeights) -> Result<ForwardCache> {
    let cfg = &weights.config;
    input.check(cfg)?;
    if weights.groups.len() != cfg.num_groups {
        return Err(Error::DimensionMismatch { what: "attention groups", expected: cfg.num_groups, actual: weights.groups.len() });
    }
    let mut query = input.query.clone();
    let mut points = input.points.clone();
    let mut groups = Vec::with_capacity(weights.groups.len());
    for (i, g) in weights.groups.iter().enumerate() {
        let (q, p, cache) = group_forward(g, cfg, &query, &points, &input.tracks, input.track_sample)?;
        if q.iter().chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { layer: format!("attention group {i}") });
        }
        query = q;
        points = p;
        groups.push(cache);
    }
    let query_unit = unit_rows(&query, "query")?;
    let points_unit = unit_rows(&points, "point")?;
    let scores = (&query_unit * points_unit.transpose()) * cfg.score_scale;
    let (row_softmax, col_softmax) = softmax_factors(&scores);
    let confidence = row_softmax.component_mul(&col_softmax);
    Ok(ForwardCache {
        groups,
        query_out: query,
        points_out: points,
        query_unit,
        points_unit,
        row_softmax,
        col_softmax,
        scores,
        confidence,
    })
}

fn normalize_backward(x: &DMatrix<f64>, unit: &DMatrix<f64>, d_unit: &DMatrix<f64>) -> DMatrix<f64> {
    let norms = row_norms(x);
    let mut out = d_unit.clone();
    for i in 0..x.nrows() {
        let proj = unit.row(i).dot(&d_unit.row(i));
        let mut row = out.row_mut(i);
        row -= unit.row(i) * proj;
        row /= norms[i];
    }
    out
}

/// Reverse pass from `dL/dC` to every weight.
pub(crate) fn backward(
    cache: &ForwardCache,
    input: &MatcherInput,
    weights: &MatcherWeights,
    d_confidence: &DMatrix<f64>,
) -> WeightGradients {
    let cfg = &weights.config;
    let mut grad = MatcherWeights::zeros(cfg);
    let d_scores = dual_softmax_backward(&cache.row_softmax, &cache.col_softmax, d_confidence) * cfg.score_scale;
    let d_qunit = &d_scores * &cache.points_unit;
    let d_punit = d_scores.tr_mul(&cache.query_unit);
    let mut d_query = normalize_backward(&cache.query_out, &cache.query_unit, &d_qunit);
    let mut d_points = normalize_backward(&cache.points_out, &cache.points_unit, &d_punit);
    for (i, g) in weights.groups.iter().enumerate().rev() {
        let (dq, dp) = group_backward(g, cfg, &cache.groups[i], &input.tracks, &d_query, &d_points, &mut grad.groups[i]);
        d_query = dq;
        d_points = dp;
    }
    grad
}

/// Runs the stacked attention groups and scores every query against every
/// point: `S = scale · <unit(q'), unit(p')>`, `C = dual_softmax(S)`.
pub fn matcher_forward(input: &MatcherInput, weights: &MatcherWeights) -> Result<(ScoreMatrix, ConfidenceMatrix)> {
    let c = forward_cached(input, weights)?;
    Ok((ScoreMatrix(c.scores), ConfidenceMatrix(c.confidence)))
}

/// Aggregation weights of every track, per attention group.
pub fn aggregation_traces(input: &MatcherInput, weights: &MatcherWeights) -> Result<Vec<Vec<AggregationTrace>>> {
    let c = forward_cached(input, weights)?;
    Ok(c.groups
        .iter()
        .map(|g| {
            g.aggregation
                .alpha
                .row_iter()
                .map(|r| AggregationTrace { alpha: r.iter().copied().collect() })
                .collect()
        })
        .collect())
}
