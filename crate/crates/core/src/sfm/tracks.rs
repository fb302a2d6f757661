use std::collections::{BTreeMap, BTreeSet};

use super::{FeatureTrack, KeypointRef, PairMatches, UnionFind};
use crate::scene::ViewObservation;

/// Connected components of the keypoint match graph.
///
/// Components that contain two keypoints of the same view are dropped
/// entirely, as are singletons. The result does not depend on the order of
/// `pairs`: tracks are sorted by their first observation and numbered from 0.
/// Descriptors are filled from `views` (matched by `view_id`); references to
/// unknown views or out-of-range keypoints are skipped.
pub fn build_tracks(views: &[ViewObservation], pairs: &[PairMatches]) -> Vec<FeatureTrack> {
    let by_id: BTreeMap<u64, &ViewObservation> = views.iter().map(|v| (v.view_id, v)).collect();
    let valid = |r: &KeypointRef| by_id.get(&r.0).is_some_and(|v| r.1 < v.len());

    let mut nodes: BTreeSet<KeypointRef> = BTreeSet::new();
    for p in pairs {
        for &(a, b) in &p.matches {
            let (ra, rb) = ((p.view_a, a), (p.view_b, b));
            if valid(&ra) && valid(&rb) {
                nodes.insert(ra);
                nodes.insert(rb);
            }
        }
    }
    let index: BTreeMap<KeypointRef, usize> = nodes.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let nodes: Vec<KeypointRef> = nodes.into_iter().collect();

    let mut uf = UnionFind::new(nodes.len());
    for p in pairs {
        for &(a, b) in &p.matches {
            if let (Some(&ia), Some(&ib)) = (index.get(&(p.view_a, a)), index.get(&(p.view_b, b))) {
                uf.union(ia, ib);
            }
        }
    }

    // nodes are visited in sorted order, so each component's members stay sorted
    let mut components: BTreeMap<usize, Vec<KeypointRef>> = BTreeMap::new();
    for (i, r) in nodes.iter().enumerate() {
        components.entry(uf.find(i)).or_default().push(*r);
    }

    let mut tracks: Vec<Vec<KeypointRef>> = components
        .into_values()
        .filter(|members| members.len() >= 2 && members.windows(2).all(|w| w[0].0 != w[1].0))
        .collect();
    tracks.sort();

    tracks
        .into_iter()
        .enumerate()
        .map(|(i, observations)| FeatureTrack {
            track_id: i as u64,
            descriptors: observations
                .iter()
                .map(|(v, k)| by_id[v].descriptors[*k].clone())
                .collect(),
            observations,
        })
        .collect()
}
