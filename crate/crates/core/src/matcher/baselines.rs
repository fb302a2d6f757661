//! Non-learned aggregation and matching used by the ablation variants.

use rand::Rng;

use super::{Match, MatchSet};
use crate::rng::{stream, StreamKind};
use crate::sfm::map::mean_descriptor;
use crate::sfm::matching::{mutual_nn_by, squared_distance};
use crate::{Descriptor, Error, Result};

/// Normalised mean of a track (same rule as the initial 3D descriptor).
pub fn aggregate_mean(track: &[Descriptor]) -> Result<Descriptor> {
    mean_descriptor(track)
}

/// A finished k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    /// Raw cluster means.
    pub centers: Vec<Descriptor>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub wcss: Vec<f64>,
}

const KMEANS_MAX_ITERS: usize = 50;

fn nearest(x: &[f64], centers: &[Descriptor]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, squared_distance(x, c)))
        .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
}

fn plus_plus_seeds(points: &[Descriptor], k: usize, seed: u64) -> Vec<Descriptor> {
    let mut rng = stream(seed, StreamKind::KMeans, points.len() as u64);
    let mut chosen = vec![rng.random_range(0..points.len())];
    while chosen.len() < k {
        let centers: Vec<Descriptor> = chosen.iter().map(|&i| points[i].clone()).collect();
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // every point already coincides with a center
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd's algorithm with k-means++ seeding. `k` is clamped to the number
/// of points.
pub fn kmeans_with_history(points: &[Descriptor], k: usize, seed: u64) -> Result<KMeansRun> {
    let d = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidConfig("cannot cluster an empty track".into()))?;
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { what: "track descriptor", expected: d, actual: 0 });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let k = k.min(points.len());
    let mut centers = plus_plus_seeds(points, k, seed);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut wcss = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        let mut total = 0.0;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let (c, dist) = nearest(p, &centers);
            total += dist;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        wcss.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for ((c, s), n) in centers.iter_mut().zip(sums).zip(counts) {
            // an empty cluster keeps its previous center
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }
    Ok(KMeansRun { centers, assignments, wcss })
}

/// Unit-normalised k-means centers of a track.
pub fn aggregate_kmeans(track: &[Descriptor], k: usize, seed: u64) -> Result<Vec<Descriptor>> {
    kmeans_with_history(track, k, seed)?
        .centers
        .iter()
        .map(|c| mean_descriptor(std::slice::from_ref(c)))
        .collect()
}

/// Mutual nearest neighbours between query descriptors and map points with a
/// ratio test on both sides. Each map point may carry several descriptors;
/// its distance is the minimum over them. Confidence is `1 - d1/d2`.
pub fn match_nearest_neighbor(query: &[Descriptor], map: &[Vec<Descriptor>], ratio: f64) -> MatchSet {
    let dist = |q: usize, j: usize| {
        map[j]
            .iter()
            .map(|c| squared_distance(&query[q], c))
            .fold(f64::INFINITY, f64::min)
    };
    let pairs = mutual_nn_by(query.len(), map.len(), ratio, dist);
    let matches = pairs
        .into_iter()
        .map(|(q, j)| {
            let d1 = dist(q, j).sqrt();
            let d2 = (0..map.len())
                .filter(|&o| o != j)
                .map(|o| dist(q, o))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            let confidence = if d2.is_finite() && d2 > 0.0 { 1.0 - d1 / d2 } else { 1.0 };
            Match { query: q, point: j, confidence }
        })
        .collect();
    MatchSet { matches }
}
