//! Utility-focused post-processing: restore pairwise correlations in a noisy
//! trajectory using only the public transition model.
//!
//! Each position is kept if it is τ-probable from the previous output;
//! otherwise it is replaced by the nearest τ-probable cell, unless no member
//! of the set gets closer to the noisy point than the previous output already
//! is — the "pit" configuration — in which case the noisy point is kept to
//! jump out.

use crate::corr::MarkovModel;
use crate::geo::{cell_distance, Cell, Dataset, Noisy, PostProcessed, Trajectory};
use crate::Result;

/// Nearest member of `members` to `target`; ties prefer the higher transition
/// probability from `anchor`, then ascending `(ix, iy)`.
pub(crate) fn closest_member(
    members: &[Cell],
    target: Cell,
    anchor: Cell,
    m: &MarkovModel,
) -> Cell {
    debug_assert!(!members.is_empty());
    let mut best = members[0];
    let mut best_dist = cell_distance(best, target);
    let mut best_prob = m.transition(anchor, best);
    for &g in &members[1..] {
        let dist = cell_distance(g, target);
        let prob = m.transition(anchor, g);
        if dist < best_dist - 1e-12
            || ((dist - best_dist).abs() <= 1e-12
                && (prob > best_prob + 1e-15
                    || ((prob - best_prob).abs() <= 1e-15 && g < best)))
        {
            best = g;
            best_dist = dist;
            best_prob = prob;
        }
    }
    best
}

/// Post-process one noisy trajectory (Alg. 2).
///
/// The first position passes through. For each later position, if the noisy
/// cell is in the τ-probable set of the previous output it is kept; otherwise
/// the nearest set member is taken, except when the previous output is
/// already at least as close to the noisy cell as that member (the pit case),
/// where the noisy cell is kept. Reads only the noisy trajectory and the
/// public model.
pub fn post_process(
    noisy: &Trajectory<Noisy>,
    m: &MarkovModel,
    tau: f64,
) -> Trajectory<PostProcessed> {
    assert!(!noisy.is_empty(), "post_process needs a nonempty trajectory");
    let mut out: Vec<Cell> = Vec::with_capacity(noisy.len());
    out.push(noisy.cells[0]);
    for j in 1..noisy.len() {
        let prev = out[j - 1];
        let hat = noisy.cells[j];
        let set = m.tau_probable_set(prev, tau);
        let next = if set.is_empty() || set.contains(hat) {
            hat
        } else {
            let closest = closest_member(&set.members, hat, prev, m);
            if cell_distance(hat, prev) <= cell_distance(hat, closest) {
                hat // pit escape: no member gets closer than we already are
            } else {
                closest
            }
        };
        out.push(next);
    }
    Trajectory::from_parts(noisy.id.clone(), out)
}

/// Post-process every trajectory of a dataset.
///
/// ```compile_fail
/// use trajmark::corr::MarkovModel;
/// use trajmark::geo::{Raw, Trajectory};
/// use trajmark::postprocess::post_process;
///
/// // Raw trajectories cannot be post-processed: the scheme may only ever
/// // see differentially private releases.
/// fn leak(t: &Trajectory<Raw>, m: &MarkovModel) {
///     post_process(t, m, 0.005);
/// }
/// ```
pub fn post_process_dataset(
    d: &Dataset<Noisy>,
    m: &MarkovModel,
    tau: f64,
) -> Result<Dataset<PostProcessed>> {
    let out = d.trajectories.iter().map(|t| post_process(t, m, tau)).collect();
    Dataset::new(d.grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::child_rng;
    use crate::geo::Grid;
    use rand::RngExt;
    use std::collections::HashMap;

    fn noisy(cells: Vec<Cell>) -> Trajectory<Noisy> {
        Trajectory::from_parts("t", cells)
    }

    /// Dense drift model on a unit grid: Moore neighbors share 0.9, self 0.1.
    fn drift_model(n: u16) -> MarkovModel {
        let g = Grid::unit(n);
        let mut rows = HashMap::new();
        for iy in 0..n {
            for ix in 0..n {
                let c = Cell::new(ix, iy);
                let hood = crate::geo::neighbors(c, &g, false);
                let w = 0.9 / hood.len() as f64;
                let mut row: Vec<(Cell, f64)> = hood.into_iter().map(|h| (h, w)).collect();
                row.push((c, 0.1));
                rows.insert(c, row);
            }
        }
        MarkovModel::from_rows(g, rows, vec![1; usize::from(n) * usize::from(n)]).unwrap()
    }

    #[test]
    fn correlated_input_is_unchanged() {
        let m = drift_model(6);
        let cells = vec![
            Cell::new(2, 2),
            Cell::new(3, 2),
            Cell::new(3, 3),
            Cell::new(2, 3),
            Cell::new(2, 2),
        ];
        let out = post_process(&noisy(cells.clone()), &m, 0.005);
        assert_eq!(out.cells, cells);
    }

    #[test]
    fn singleton_set_escapes_the_pit() {
        // Row of `a` is a pure self-loop, so prob_τ(a) = {a}; a distant noisy
        // point must pass through rather than pinning the output at `a`.
        let g = Grid::unit(6);
        let a = Cell::new(1, 1);
        let far = Cell::new(4, 4);
        let mut rows = HashMap::new();
        rows.insert(a, vec![(a, 1.0)]);
        let m = MarkovModel::from_rows(g, rows, vec![1; 36]).unwrap();
        let out = post_process(&noisy(vec![a, far]), &m, 0.5);
        assert_eq!(out.cells, vec![a, far]);
    }

    #[test]
    fn member_between_is_substituted() {
        // prob_τ(anchor) reaches one cell east; a noisy point three cells
        // east snaps to that member since it is strictly closer to the noisy
        // point than the anchor is.
        let g = Grid::unit(6);
        let anchor = Cell::new(0, 2);
        let east = Cell::new(1, 2);
        let mut rows = HashMap::new();
        rows.insert(anchor, vec![(east, 0.6), (anchor, 0.4)]);
        let m = MarkovModel::from_rows(g, rows, vec![1; 36]).unwrap();
        let out = post_process(&noisy(vec![anchor, Cell::new(3, 2)]), &m, 0.1);
        assert_eq!(out.cells, vec![anchor, east]);
    }

    #[test]
    fn substitution_matches_exhaustive_distance_check() {
        // For every possible noisy cell on a 5×5 grid, the output equals a
        // hand-evaluated Alg. 2 step against the same τ-probable set.
        let g = Grid::unit(5);
        let anchor = Cell::new(2, 2);
        let members =
            [Cell::new(2, 2), Cell::new(3, 2), Cell::new(2, 3), Cell::new(1, 2)];
        let mut rows = HashMap::new();
        rows.insert(anchor, vec![
            (members[0], 0.4),
            (members[1], 0.3),
            (members[2], 0.2),
            (members[3], 0.1),
        ]);
        let m = MarkovModel::from_rows(g, rows, vec![1; 25]).unwrap();
        let tau = 0.05;
        for idx in 0..g.cell_count() {
            let hat = g.cell_at(idx);
            let got = post_process(&noisy(vec![anchor, hat]), &m, tau).cells[1];
            let want = if members.contains(&hat) {
                hat
            } else {
                let mut best: Option<(f64, f64, Cell)> = None;
                for &cand in &members {
                    let key = (cell_distance(cand, hat), -m.transition(anchor, cand), cand);
                    let better = match &best {
                        None => true,
                        Some((d, np, c)) => {
                            (key.0, key.1, key.2) < (*d, *np, *c)
                        }
                    };
                    if better {
                        best = Some(key);
                    }
                }
                let closest = best.unwrap().2;
                if cell_distance(hat, anchor) <= cell_distance(hat, closest) {
                    hat
                } else {
                    closest
                }
            };
            assert_eq!(got, want, "noisy cell {hat}");
        }
    }

    #[test]
    fn outputs_are_members_or_passthrough() {
        let m = drift_model(8);
        let tau = 0.005;
        let mut rng = child_rng(42, &[]);
        for _ in 0..50 {
            let cells: Vec<Cell> = (0..20)
                .map(|_| Cell::new(rng.random_range(0..8u16), rng.random_range(0..8u16)))
                .collect();
            let input = noisy(cells.clone());
            let out = post_process(&input, &m, tau);
            for j in 1..out.len() {
                let set = m.tau_probable_set(out.cells[j - 1], tau);
                assert!(
                    set.contains(out.cells[j]) || out.cells[j] == cells[j],
                    "position {j} is neither a member nor the noisy input"
                );
            }
        }
    }

    #[test]
    fn idempotent_when_no_escape_fired() {
        let m = drift_model(8);
        let tau = 0.005;
        let mut rng = child_rng(43, &[]);
        let mut checked = 0;
        for _ in 0..80 {
            let cells: Vec<Cell> = (0..15)
                .map(|_| Cell::new(rng.random_range(0..8u16), rng.random_range(0..8u16)))
                .collect();
            let first = post_process(&noisy(cells), &m, tau);
            let escape_free = (1..first.len())
                .all(|j| m.tau_probable_set(first.cells[j - 1], tau).contains(first.cells[j]));
            if !escape_free {
                continue;
            }
            let second = post_process(&noisy(first.cells.clone()), &m, tau);
            assert_eq!(second.cells, first.cells);
            checked += 1;
        }
        assert!(checked > 0, "no escape-free sample found");
    }

    #[test]
    fn correlation_fraction_improves() {
        let m = drift_model(10);
        let tau = 0.005;
        let mut rng = child_rng(44, &[]);
        let fraction = |cells: &[Cell]| {
            let pairs = cells.len() - 1;
            let good = (1..cells.len())
                .filter(|&j| m.transition(cells[j - 1], cells[j]) >= tau)
                .count();
            good as f64 / pairs as f64
        };
        let (mut before, mut after) = (0.0, 0.0);
        for _ in 0..40 {
            // Correlated walk with every third point scrambled.
            let mut cells = vec![Cell::new(5, 5)];
            for _ in 0..29 {
                cells.push(m.sample_step(*cells.last().unwrap(), &mut rng));
            }
            for (j, c) in cells.iter_mut().enumerate() {
                if j % 3 == 2 {
                    *c = Cell::new(rng.random_range(0..10u16), rng.random_range(0..10u16));
                }
            }
            before += fraction(&cells);
            after += fraction(&post_process(&noisy(cells), &m, tau).cells);
        }
        assert!(after > before, "after {after} vs before {before}");
    }

    #[test]
    fn dataset_variant_maps_all_trajectories() {
        let m = drift_model(6);
        let d = Dataset::new(
            Grid::unit(6),
            vec![
                Trajectory::from_parts("a", vec![Cell::new(1, 1), Cell::new(5, 5)]),
                Trajectory::from_parts("b", vec![Cell::new(2, 2), Cell::new(2, 3)]),
            ],
        )
        .unwrap();
        let out = post_process_dataset(&d, &m, 0.005).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.trajectories[1].cells, d.trajectories[1].cells);
    }
}
