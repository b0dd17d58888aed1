//! Distance-based leaker detection: per-trajectory similarity scoring against
//! every analyzer's fingerprinted copy, and majority-vote aggregation across a
//! leaked dataset. Analyzer indices refer to positions in the caller's copy
//! list; the standard distribution assigns `analyzer_id = index`.

use std::borrow::Borrow;
use std::collections::HashMap;

use crate::fingerprint::CopyRecord;
use crate::geo::{cell_distance, Dataset, Fingerprinted, Leaked, Trajectory};
use crate::{Error, Result};

/// Outcome of scoring one leaked trajectory against all analyzer copies.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// Per-analyzer similarity score in [0, 1].
    pub scores: Vec<f64>,
    /// Analyzer index with the highest score (lowest index on ties).
    pub accused: usize,
    /// True when another analyzer shares the top score.
    pub tie_flag: bool,
}

/// Majority vote over the per-trajectory accusations of a leaked dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub per_trajectory: Vec<DetectionReport>,
    /// Analyzer index with the most votes (lowest index on ties).
    pub final_accused: usize,
    /// Votes per analyzer index.
    pub vote_counts: Vec<usize>,
    /// True when another analyzer shares the top vote count.
    pub final_tie: bool,
}

/// Score each analyzer against a leaked trajectory: at every position, all
/// analyzers whose copy attains the minimum distance to the leaked point gain
/// `1/len`, so an exact copy scores 1. The accused analyzer maximizes the
/// total; ties go to the lowest index and set `tie_flag`.
///
/// # Panics
/// Panics on an empty copy list or an empty leaked trajectory.
pub fn detect_trajectory<T: Borrow<Trajectory<Fingerprinted>>>(
    leaked: &Trajectory<Leaked>,
    copies: &[T],
) -> Result<DetectionReport> {
    assert!(!copies.is_empty(), "detection needs at least one analyzer copy");
    assert!(!leaked.is_empty(), "cannot score an empty trajectory");
    for c in copies {
        let c = c.borrow();
        if c.len() != leaked.len() {
            return Err(Error::LengthMismatch { left: leaked.len(), right: c.len() });
        }
    }
    let len = leaked.len();
    let mut hits = vec![0usize; copies.len()];
    let mut dists = vec![0.0f64; copies.len()];
    for (j, &point) in leaked.cells.iter().enumerate() {
        for (a, c) in copies.iter().enumerate() {
            dists[a] = cell_distance(c.borrow().cells[j], point);
        }
        let d_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        for (a, &d) in dists.iter().enumerate() {
            if d <= d_min {
                hits[a] += 1;
            }
        }
    }
    let scores: Vec<f64> = hits.iter().map(|h| *h as f64 / len as f64).collect();
    let (accused, tie_flag) = argmax_with_tie(&hits);
    Ok(DetectionReport { scores, accused, tie_flag })
}

/// Detect per leaked trajectory against the matching trajectory of every
/// record, then majority-vote the accusations. Leaked ids must resolve in
/// every record's copies.
///
/// # Panics
/// Panics on an empty record list.
pub fn detect_dataset(
    leaked: &Dataset<Leaked>,
    records: &[CopyRecord],
) -> Result<AggregateReport> {
    assert!(!records.is_empty(), "detection needs at least one analyzer record");
    if leaked.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let indices: Vec<HashMap<&str, usize>> = records
        .iter()
        .map(|r| {
            r.copies
                .trajectories
                .iter()
                .enumerate()
                .map(|(i, t)| (t.id.as_str(), i))
                .collect()
        })
        .collect();
    let mut per_trajectory = Vec::with_capacity(leaked.len());
    for l in &leaked.trajectories {
        let mut group: Vec<&Trajectory<Fingerprinted>> = Vec::with_capacity(records.len());
        for (r, index) in records.iter().zip(&indices) {
            let Some(&i) = index.get(l.id.as_str()) else {
                return Err(Error::UnknownTrajectory(l.id.clone()));
            };
            group.push(&r.copies.trajectories[i]);
        }
        per_trajectory.push(detect_trajectory(l, &group)?);
    }
    let (final_accused, vote_counts, final_tie) =
        majority_vote(per_trajectory.iter().map(|r| r.accused), records.len());
    Ok(AggregateReport { per_trajectory, final_accused, vote_counts, final_tie })
}

/// Tally votes over analyzer indices in `0..n` and pick the mode (lowest
/// index on ties, tie reported). Shared by distance-based aggregation and the
/// code-based schemes' per-trajectory accusation pipelines.
pub fn majority_vote(
    votes: impl IntoIterator<Item = usize>,
    n: usize,
) -> (usize, Vec<usize>, bool) {
    let mut counts = vec![0usize; n];
    for v in votes {
        counts[v] += 1;
    }
    let (winner, tie) = argmax_with_tie(&counts);
    (winner, counts, tie)
}

fn argmax_with_tie(counts: &[usize]) -> (usize, bool) {
    let mut best = 0usize;
    let mut tie = false;
    for (i, &v) in counts.iter().enumerate().skip(1) {
        if v > counts[best] {
            best = i;
            tie = false;
        } else if v == counts[best] {
            tie = true;
        }
    }
    (best, tie)
}
