use serde::{Deserialize, Serialize};

use crate::scene::ViewObservation;
use crate::Descriptor;

/// Matches between two views, as keypoint index pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatches {
    pub view_a: u64,
    pub view_b: u64,
    pub matches: Vec<(usize, usize)>,
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest and second-nearest squared distances along one axis.
#[derive(Clone, Copy)]
struct Best {
    index: usize,
    d1: f64,
    d2: f64,
}

impl Best {
    fn new() -> Self {
        Best {
            index: usize::MAX,
            d1: f64::INFINITY,
            d2: f64::INFINITY,
        }
    }

    fn push(&mut self, index: usize, d: f64) {
        if d < self.d1 {
            self.d2 = self.d1;
            self.d1 = d;
            self.index = index;
        } else if d < self.d2 {
            self.d2 = d;
        }
    }

    fn passes_ratio(&self, ratio: f64) -> bool {
        // squared distances: compare against ratio^2
        self.d2.is_infinite() || self.d1 < ratio * ratio * self.d2
    }
}

/// Mutual nearest neighbours with a Lowe ratio test applied on both sides.
///
/// `dist(a, b)` is an arbitrary squared distance; pairs whose distance is not
/// finite are ignored.
pub(crate) fn mutual_nn_by<F>(na: usize, nb: usize, ratio: f64, dist: F) -> Vec<(usize, usize)>
where
    F: Fn(usize, usize) -> f64,
{
    let mut row = vec![Best::new(); na];
    let mut col = vec![Best::new(); nb];
    for i in 0..na {
        for j in 0..nb {
            let d = dist(i, j);
            if !d.is_finite() {
                continue;
            }
            row[i].push(j, d);
            col[j].push(i, d);
        }
    }
    (0..na)
        .filter_map(|i| {
            let r = row[i];
            if r.index == usize::MAX {
                return None;
            }
            let c = col[r.index];
            (c.index == i && r.passes_ratio(ratio) && c.passes_ratio(ratio)).then_some((i, r.index))
        })
        .collect()
}

pub(crate) fn mutual_nn(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<(usize, usize)> {
    mutual_nn_by(a.len(), b.len(), ratio, |i, j| squared_distance(&a[i], &b[j]))
}

/// Mutual nearest-neighbour descriptor matching with a ratio test
/// (best / second-best Euclidean distance `< ratio`).
pub fn match_views_nn(a: &ViewObservation, b: &ViewObservation, ratio: f64) -> Vec<(usize, usize)> {
    mutual_nn(&a.descriptors, &b.descriptors, ratio)
}
