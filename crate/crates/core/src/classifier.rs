//! Minimum-distance matching per orientation bin, combined across bins by
//! majority vote.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hog2d::HogLayers;
use crate::pca2d::{project, ProjectionBasis};

/// One enrolled image: its label and the projected features of every bin.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryEntry {
    pub label: String,
    pub source_id: String,
    pub features: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinMatch {
    pub label: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub label: String,
    /// Votes per class; classes without votes are listed with 0.
    pub votes: BTreeMap<String, usize>,
    /// Nearest entry per bin.
    pub per_bin: Vec<BinMatch>,
    /// Per class, sum over bins of the distance to that class's closest entry.
    pub total_distance: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedLabel {
    pub label: String,
    /// `votes + 1 / (1 + total_distance)`, for display.
    pub score: f64,
    pub votes: usize,
    pub total_distance: f64,
}

/// Sum of the L2 norms of the column differences.
pub fn bin_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!("feature dims differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (rows, cols) = a.dim();
    let mut total = 0.0;
    for k in 0..cols {
        let mut sq = 0.0;
        for r in 0..rows {
            let d = a[[r, k]] - b[[r, k]];
            sq += d * d;
        }
        total += sq.sqrt();
    }
    Ok(total)
}

/// Nearest gallery entry at one bin; the earliest entry wins ties.
pub fn bin_vote(query: &Array2<f64>, gallery: &[GalleryEntry], bin: usize) -> Result<BinMatch> {
    let mut best: Option<(usize, f64)> = None;
    for (i, entry) in gallery.iter().enumerate() {
        let feat = entry.features.get(bin).ok_or_else(|| {
            Error::state(format!("gallery entry {i} has no features for bin {bin}"))
        })?;
        let d = bin_distance(query, feat)
            .map_err(|e| Error::state(format!("bin {bin}, gallery entry {i}: {e}")))?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (i, distance) = best.ok_or_else(|| Error::state("gallery is empty"))?;
    Ok(BinMatch { label: gallery[i].label.clone(), distance })
}

/// Projects every layer of `query` with its bin's basis.
pub fn project_layers(query: &HogLayers, bases: &[ProjectionBasis]) -> Result<Vec<Array2<f64>>> {
    if query.bins() != bases.len() {
        return Err(Error::state(format!(
            "query has {} bins but {} bases were trained",
            query.bins(),
            bases.len()
        )));
    }
    query
        .layers()
        .iter()
        .zip(bases)
        .enumerate()
        .map(|(b, (layer, basis))| {
            project(&layer.view(), basis).map_err(|e| Error::state(format!("bin {b}: {e}")))
        })
        .collect()
}

/// Per-bin outcome for one query: the nearest entry and, per class, the best
/// distance at this bin.
struct BinScan {
    nearest: BinMatch,
    class_best: BTreeMap<String, f64>,
}

fn scan_bin(query: &Array2<f64>, gallery: &[GalleryEntry], bin: usize) -> Result<BinScan> {
    let mut class_best: BTreeMap<String, f64> = BTreeMap::new();
    let mut nearest: Option<(usize, f64)> = None;
    for (i, entry) in gallery.iter().enumerate() {
        let feat = entry.features.get(bin).ok_or_else(|| {
            Error::state(format!("gallery entry {i} has no features for bin {bin}"))
        })?;
        let d = bin_distance(query, feat)
            .map_err(|e| Error::state(format!("bin {bin}, gallery entry {i}: {e}")))?;
        if nearest.is_none_or(|(_, bd)| d < bd) {
            nearest = Some((i, d));
        }
        class_best
            .entry(entry.label.clone())
            .and_modify(|v| *v = v.min(d))
            .or_insert(d);
    }
    let (i, distance) = nearest.ok_or_else(|| Error::state("gallery is empty"))?;
    Ok(BinScan { nearest: BinMatch { label: gallery[i].label.clone(), distance }, class_best })
}

/// Votes and distances from already-projected query features.
pub fn classify_projected(features: &[Array2<f64>], gallery: &[GalleryEntry]) -> Result<MatchResult> {
    if gallery.is_empty() {
        return Err(Error::state("gallery is empty"));
    }
    let scans: Vec<BinScan> = features
        .par_iter()
        .enumerate()
        .map(|(b, q)| scan_bin(q, gallery, b))
        .collect::<Result<_>>()?;

    let mut votes: BTreeMap<String, usize> = BTreeMap::new();
    let mut total_distance: BTreeMap<String, f64> = BTreeMap::new();
    for entry in gallery {
        votes.entry(entry.label.clone()).or_insert(0);
        total_distance.entry(entry.label.clone()).or_insert(0.0);
    }
    // Reduce in bin order so the sums are bit-identical regardless of scheduling.
    for scan in &scans {
        *votes.get_mut(&scan.nearest.label).expect("label from gallery") += 1;
        for (label, d) in &scan.class_best {
            *total_distance.get_mut(label).expect("label from gallery") += d;
        }
    }
    let label = ordered_classes(&votes, &total_distance)
        .into_iter()
        .next()
        .expect("gallery nonempty");
    Ok(MatchResult {
        label,
        votes,
        per_bin: scans.into_iter().map(|s| s.nearest).collect(),
        total_distance,
    })
}

/// Classes ordered by votes (desc), then total distance (asc), then label.
fn ordered_classes(
    votes: &BTreeMap<String, usize>,
    totals: &BTreeMap<String, f64>,
) -> Vec<String> {
    let mut labels: Vec<&String> = votes.keys().collect();
    labels.sort_by(|a, b| {
        votes[*b]
            .cmp(&votes[*a])
            .then_with(|| totals[*a].total_cmp(&totals[*b]))
            .then_with(|| a.cmp(b))
    });
    labels.into_iter().cloned().collect()
}

pub fn classify(
    query: &HogLayers,
    bases: &[ProjectionBasis],
    gallery: &[GalleryEntry],
) -> Result<MatchResult> {
    if gallery.is_empty() {
        return Err(Error::state("gallery is empty"));
    }
    let features = project_layers(query, bases)?;
    classify_projected(&features, gallery)
}

impl MatchResult {
    /// All classes in ranking order, truncated to `k`.
    pub fn ranked(&self, k: usize) -> Vec<RankedLabel> {
        ordered_classes(&self.votes, &self.total_distance)
            .into_iter()
            .take(k)
            .map(|label| {
                let votes = self.votes[&label];
                let total_distance = self.total_distance[&label];
                RankedLabel {
                    score: votes as f64 + 1.0 / (1.0 + total_distance),
                    label,
                    votes,
                    total_distance,
                }
            })
            .collect()
    }
}

pub fn rank(
    query: &HogLayers,
    bases: &[ProjectionBasis],
    gallery: &[GalleryEntry],
    k: usize,
) -> Result<Vec<RankedLabel>> {
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    Ok(classify(query, bases, gallery)?.ranked(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn entry(label: &str, features: Vec<Array2<f64>>) -> GalleryEntry {
        GalleryEntry { label: label.into(), source_id: format!("{label}.src"), features }
    }

    fn identity_bases(bins: usize, w: usize) -> Vec<ProjectionBasis> {
        (0..bins)
            .map(|_| ProjectionBasis { vectors: Array2::eye(w), eigenvalues: vec![1.0; w] })
            .collect()
    }

    #[test]
    fn distance_cases() {
        let a = array![[1.0, 2.0], [5.0, -1.0]];
        assert_eq!(bin_distance(&a, &a).unwrap(), 0.0);
        let b = array![[4.0, 2.0], [9.0, -1.0]];
        assert_eq!(bin_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(bin_distance(&a, &b).unwrap(), bin_distance(&b, &a).unwrap());
        assert!(bin_distance(&a, &Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn bin_vote_cases() {
        let q = array![[0.0], [0.0]];
        let solo = [entry("x", vec![array![[9.0], [9.0]]])];
        assert_eq!(bin_vote(&q, &solo, 0).unwrap().label, "x");

        let gallery = [
            entry("a", vec![array![[1.0], [0.0]]]),
            entry("b", vec![array![[2.0], [0.0]]]),
            entry("c", vec![array![[0.0], [0.0]]]),
        ];
        let m = bin_vote(&q, &gallery, 0).unwrap();
        assert_eq!((m.label.as_str(), m.distance), ("c", 0.0));
        let m = bin_vote(&q, &gallery[..2], 0).unwrap();
        assert_eq!((m.label.as_str(), m.distance), ("a", 1.0));

        let tie = [entry("p", vec![array![[1.0], [0.0]]]), entry("q", vec![array![[-1.0], [0.0]]])];
        assert_eq!(bin_vote(&q, &tie, 0).unwrap().label, "p");
        assert!(matches!(bin_vote(&q, &[], 0), Err(Error::State(_))));
    }

    #[test]
    fn single_label_gallery_gets_every_vote() {
        let bases = identity_bases(3, 1);
        let gallery = [
            entry("only", vec![array![[1.0]], array![[2.0]], array![[3.0]]]),
            entry("only", vec![array![[4.0]], array![[5.0]], array![[6.0]]]),
        ];
        let q = HogLayers::from_layers(vec![array![[0.0]]; 3]).unwrap();
        let m = classify(&q, &bases, &gallery).unwrap();
        assert_eq!(m.label, "only");
        assert_eq!(m.votes["only"], 3);
        assert_eq!(m.total_distance["only"], 6.0);
    }

    #[test]
    fn majority_wins_split_vote() {
        let bases = identity_bases(3, 1);
        // bins 0 and 1 favour c1, bin 2 favours c2
        let gallery = [
            entry("c1", vec![array![[0.0]], array![[0.0]], array![[10.0]]]),
            entry("c2", vec![array![[5.0]], array![[5.0]], array![[0.0]]]),
        ];
        let q = HogLayers::from_layers(vec![array![[0.0]]; 3]).unwrap();
        let m = classify(&q, &bases, &gallery).unwrap();
        assert_eq!(m.label, "c1");
        assert_eq!(m.votes["c1"], 2);
        assert_eq!(m.votes["c2"], 1);
        assert_eq!(m.votes.values().sum::<usize>(), 3);
        assert_eq!(m.per_bin[2].label, "c2");
        assert_eq!(m.total_distance["c1"], 10.0);
        assert_eq!(m.total_distance["c2"], 10.0);
    }

    #[test]
    fn vote_ties_fall_back_to_distance_then_label() {
        let bases = identity_bases(2, 1);
        let gallery = [
            entry("b", vec![array![[0.0]], array![[3.0]]]),
            entry("a", vec![array![[1.0]], array![[0.0]]]),
        ];
        let q = HogLayers::from_layers(vec![array![[0.0]]; 2]).unwrap();
        let m = classify(&q, &bases, &gallery).unwrap();
        // one vote each; a totals 1, b totals 3
        assert_eq!(m.label, "a");

        let even = [
            entry("b", vec![array![[0.0]], array![[1.0]]]),
            entry("a", vec![array![[1.0]], array![[0.0]]]),
        ];
        assert_eq!(classify(&q, &bases, &even).unwrap().label, "a");
    }

    #[test]
    fn rank_orders_and_truncates() {
        let bases = identity_bases(2, 1);
        let gallery = [
            entry("far", vec![array![[2.0]], array![[3.0]]]),
            entry("near", vec![array![[0.0]], array![[5.0]]]),
            entry("zero", vec![array![[1.0]], array![[0.0]]]),
        ];
        let q = HogLayers::from_layers(vec![array![[0.0]]; 2]).unwrap();
        let all = rank(&q, &bases, &gallery, 10).unwrap();
        let labels: Vec<_> = all.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["zero", "near", "far"]);
        assert_eq!(all[0].score, 1.0 + 1.0 / 2.0);
        assert_eq!(all[2].score, 1.0 / 6.0);
        let top = rank(&q, &bases, &gallery, 1).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].label, classify(&q, &bases, &gallery).unwrap().label);
        assert!(rank(&q, &bases, &gallery, 0).is_err());
    }

    #[test]
    fn rank_prefers_zero_distance_on_equal_votes() {
        let bases = identity_bases(2, 1);
        let q = HogLayers::from_layers(vec![array![[0.0]], array![[0.0]]]).unwrap();
        let pair = [
            entry("five", vec![array![[5.0]], array![[5.0]]]),
            entry("zero", vec![array![[0.0]], array![[0.0]]]),
        ];
        let ranked = rank(&q, &bases, &pair, 2).unwrap();
        assert_eq!(ranked[0].label, "zero");
        assert_eq!(ranked[0].total_distance, 0.0);
    }

    #[test]
    fn shape_mismatch_names_bin() {
        let bases = identity_bases(2, 1);
        let gallery = [entry("a", vec![array![[0.0]], array![[0.0], [1.0]]])];
        let q = HogLayers::from_layers(vec![array![[0.0]]; 2]).unwrap();
        match classify(&q, &bases, &gallery) {
            Err(Error::State(msg)) => assert!(msg.contains("bin 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let q3 = HogLayers::from_layers(vec![array![[0.0]]; 3]).unwrap();
        assert!(matches!(classify(&q3, &bases, &gallery), Err(Error::State(_))));
        assert!(matches!(classify(&q, &bases, &[]), Err(Error::State(_))));
    }
}
