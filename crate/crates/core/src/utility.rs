//! Utility metrics comparing a transformed dataset against the original:
//! range-query and pattern-query AvRE, popularity ranking correlation,
//! trip-length and step-length histogram divergences, and mean DTW distance.
//! All metrics are read-only and role-agnostic.

use std::collections::{BTreeMap, HashMap};

use rand::RngExt;

use crate::geo::{cell_distance, Cell, Dataset, Grid, Role, Trajectory};
use crate::{Error, Result, SimRng};

/// A circular range query in cell units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionQuery {
    pub center: Cell,
    pub radius: f64,
}

/// One row of the utility evaluation: all six metrics for a dataset pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityReport {
    pub qa_points_avre: f64,
    pub qa_patterns_avre: f64,
    pub popularity_kt: f64,
    pub trip_error_jsd: f64,
    pub diameter_error_jsd: f64,
    pub dtw_mean: f64,
}

impl UtilityReport {
    /// Metric names in the order used by [`UtilityReport::to_array`].
    pub const METRICS: [&'static str; 6] = [
        "qa_points_avre",
        "qa_patterns_avre",
        "popularity_kt",
        "trip_error_jsd",
        "diameter_error_jsd",
        "dtw_mean",
    ];

    pub fn to_array(self) -> [f64; 6] {
        [
            self.qa_points_avre,
            self.qa_patterns_avre,
            self.popularity_kt,
            self.trip_error_jsd,
            self.diameter_error_jsd,
            self.dtw_mean,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        UtilityReport {
            qa_points_avre: a[0],
            qa_patterns_avre: a[1],
            popularity_kt: a[2],
            trip_error_jsd: a[3],
            diameter_error_jsd: a[4],
            dtw_mean: a[5],
        }
    }
}

/// Seeded workload of circular queries: uniform centers, radius uniform in
/// [1, N/10] cells (clamped to at least 1).
pub fn region_queries(grid: &Grid, count: usize, rng: &mut SimRng) -> Vec<RegionQuery> {
    let n = grid.n();
    let hi = f64::from(n) / 10.0;
    (0..count)
        .map(|_| {
            let center = Cell::new(rng.random_range(0..n), rng.random_range(0..n));
            let radius = if hi > 1.0 { rng.random_range(1.0..hi) } else { 1.0 };
            RegionQuery { center, radius }
        })
        .collect()
}

/// The `count` most frequent ordered 2-grams of `d`, ties broken by cell
/// order for determinism. May return fewer when the dataset is short.
pub fn top_patterns<R: Role>(d: &Dataset<R>, count: usize) -> Vec<(Cell, Cell)> {
    let mut freq: BTreeMap<(Cell, Cell), usize> = BTreeMap::new();
    for t in &d.trajectories {
        for w in t.cells.windows(2) {
            *freq.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    let mut pairs: Vec<((Cell, Cell), usize)> = freq.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(count);
    pairs.into_iter().map(|(p, _)| p).collect()
}

/// Average relative error of trajectory-count range queries: per query,
/// `|Q_t(d) − Q_t(d')| / max(Q_t(d), b)` with sanity bound `b = 0.01·|d|`,
/// where `Q_t` counts trajectories with at least one cell center inside the
/// circle.
pub fn qa_points<A: Role, B: Role>(
    d: &Dataset<A>,
    d_prime: &Dataset<B>,
    queries: &[RegionQuery],
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let b = 0.01 * d.len() as f64;
    let total: f64 = queries
        .iter()
        .map(|q| {
            let original = count_hits(d, q) as f64;
            let transformed = count_hits(d_prime, q) as f64;
            (original - transformed).abs() / original.max(b)
        })
        .sum();
    Ok(total / queries.len() as f64)
}

fn count_hits<R: Role>(d: &Dataset<R>, q: &RegionQuery) -> usize {
    d.trajectories
        .iter()
        .filter(|t| t.cells.iter().any(|&c| cell_distance(c, q.center) <= q.radius))
        .count()
}

/// Average relative error of ordered 2-gram count queries, with the same
/// AvRE formula and sanity bound as [`qa_points`]. `Q_p` totals occurrences
/// across all trajectories.
pub fn qa_patterns<A: Role, B: Role>(
    d: &Dataset<A>,
    d_prime: &Dataset<B>,
    patterns: &[(Cell, Cell)],
) -> Result<f64> {
    if patterns.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let b = 0.01 * d.len() as f64;
    let total: f64 = patterns
        .iter()
        .map(|p| {
            let original = count_pattern(d, *p) as f64;
            let transformed = count_pattern(d_prime, *p) as f64;
            (original - transformed).abs() / original.max(b)
        })
        .sum();
    Ok(total / patterns.len() as f64)
}

fn count_pattern<R: Role>(d: &Dataset<R>, p: (Cell, Cell)) -> usize {
    d.trajectories
        .iter()
        .map(|t| t.cells.windows(2).filter(|w| (w[0], w[1]) == p).count())
        .sum()
}

/// Kendall tau-a between cell popularity (point counts) in `d` and
/// `d_prime`, over the cells with nonzero count in `d`: concordant minus
/// discordant pairs over all pairs, ties contributing zero to the numerator.
/// Fewer than two ranked cells give 1.0 (vacuous agreement).
pub fn popularity_kendall<A: Role, B: Role>(d: &Dataset<A>, d_prime: &Dataset<B>) -> f64 {
    let original = point_counts(d);
    let transformed = point_counts(d_prime);
    let cells: Vec<Cell> = original.keys().copied().collect();
    if cells.len() < 2 {
        return 1.0;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let dx = original[&cells[i]] as i64 - original[&cells[j]] as i64;
            let dy = transformed.get(&cells[i]).copied().unwrap_or(0) as i64
                - transformed.get(&cells[j]).copied().unwrap_or(0) as i64;
            match (dx * dy).signum() {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let pairs = (cells.len() * (cells.len() - 1) / 2) as f64;
    (concordant - discordant) as f64 / pairs
}

fn point_counts<R: Role>(d: &Dataset<R>) -> BTreeMap<Cell, usize> {
    let mut counts = BTreeMap::new();
    for t in &d.trajectories {
        for &c in &t.cells {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    counts
}

/// Jensen-Shannon divergence between the trip-length histograms of the two
/// datasets. Trip length is the summed consecutive cell distance per
/// trajectory; 11 bins span `[0, L/10), …, [9L/10, L), [L, ∞)` with `L` the
/// maximum trip length in `d`, so the metric is not symmetric in its
/// arguments even though the JSD core is.
pub fn trip_error<A: Role, B: Role>(d: &Dataset<A>, d_prime: &Dataset<B>) -> Result<f64> {
    let original: Vec<f64> = d.trajectories.iter().map(|t| trip_length(t)).collect();
    let transformed: Vec<f64> = d_prime.trajectories.iter().map(|t| trip_length(t)).collect();
    if original.is_empty() || transformed.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let l_max = original.iter().copied().fold(0.0, f64::max);
    Ok(jsd_base2(&bin_11(&original, l_max), &bin_11(&transformed, l_max)))
}

fn trip_length<R: Role>(t: &Trajectory<R>) -> f64 {
    t.cells.windows(2).map(|w| cell_distance(w[0], w[1])).sum()
}

/// As [`trip_error`], but the histogrammed quantity is every consecutive-pair
/// distance, pooled across the dataset, with `L` the maximum such distance in
/// `d`. Datasets of single-point trajectories have no pairs and are an error.
pub fn diameter_error<A: Role, B: Role>(d: &Dataset<A>, d_prime: &Dataset<B>) -> Result<f64> {
    let original = step_distances(d);
    let transformed = step_distances(d_prime);
    if original.is_empty() || transformed.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let l_max = original.iter().copied().fold(0.0, f64::max);
    Ok(jsd_base2(&bin_11(&original, l_max), &bin_11(&transformed, l_max)))
}

fn step_distances<R: Role>(d: &Dataset<R>) -> Vec<f64> {
    d.trajectories
        .iter()
        .flat_map(|t| t.cells.windows(2).map(|w| cell_distance(w[0], w[1])))
        .collect()
}

/// Histogram nonnegative samples into 11 bins of width `L/10` plus the
/// catch-all `[L, ∞)`, normalized to a distribution.
fn bin_11(samples: &[f64], l_max: f64) -> [f64; 11] {
    let mut hist = [0.0f64; 11];
    for &v in samples {
        let idx = if l_max > 0.0 && v < l_max {
            ((v / l_max * 10.0).floor() as usize).min(9)
        } else {
            10
        };
        hist[idx] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    for h in &mut hist {
        *h /= total;
    }
    hist
}

/// Jensen-Shannon divergence with log base 2, bounded in [0, 1] and
/// symmetric in its arguments.
pub(crate) fn jsd_base2(p: &[f64; 11], q: &[f64; 11]) -> f64 {
    let kl_to_mid = |a: &[f64; 11]| -> f64 {
        a.iter()
            .zip(p.iter().zip(q.iter()))
            .filter(|(ai, _)| **ai > 0.0)
            .map(|(ai, (pi, qi))| ai * (ai / (0.5 * (pi + qi))).log2())
            .sum()
    };
    0.5 * (kl_to_mid(p) + kl_to_mid(q))
}

/// Mean dynamic-time-warping distance over matching trajectory ids, with
/// Euclidean cell distance as the local cost and full alignment.
pub fn dtw_mean<A: Role, B: Role>(d: &Dataset<A>, d_prime: &Dataset<B>) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let index: HashMap<&str, &Trajectory<B>> =
        d_prime.trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut total = 0.0;
    for t in &d.trajectories {
        let Some(other) = index.get(t.id.as_str()) else {
            return Err(Error::UnknownTrajectory(t.id.clone()));
        };
        total += dtw(&t.cells, &other.cells);
    }
    Ok(total / d.len() as f64)
}

fn dtw(a: &[Cell], b: &[Cell]) -> f64 {
    let mut prev = vec![f64::INFINITY; b.len() + 1];
    let mut cur = vec![f64::INFINITY; b.len() + 1];
    prev[0] = 0.0;
    for &ai in a {
        cur[0] = f64::INFINITY;
        for (j, &bj) in b.iter().enumerate() {
            let step = prev[j + 1].min(cur[j]).min(prev[j]);
            cur[j + 1] = cell_distance(ai, bj) + step;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// All six metrics for one dataset pair.
pub fn evaluate<A: Role, B: Role>(
    d: &Dataset<A>,
    d_prime: &Dataset<B>,
    queries: &[RegionQuery],
    patterns: &[(Cell, Cell)],
) -> Result<UtilityReport> {
    Ok(UtilityReport {
        qa_points_avre: qa_points(d, d_prime, queries)?,
        qa_patterns_avre: qa_patterns(d, d_prime, patterns)?,
        popularity_kt: popularity_kendall(d, d_prime),
        trip_error_jsd: trip_error(d, d_prime)?,
        diameter_error_jsd: diameter_error(d, d_prime)?,
        dtw_mean: dtw_mean(d, d_prime)?,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::child_rng;
    use crate::geo::Raw;

    fn dataset(grid: Grid, trajs: Vec<Vec<Cell>>) -> Dataset<Raw> {
        let trajectories = trajs
            .into_iter()
            .enumerate()
            .map(|(i, cells)| Trajectory::new_raw(format!("t{i}"), cells))
            .collect();
        Dataset::new(grid, trajectories).unwrap()
    }

    fn random_dataset(grid: Grid, count: usize, len: usize, seed: u64) -> Dataset<Raw> {
        let mut rng = child_rng(seed, &[41]);
        let n = grid.n();
        let trajs = (0..count)
            .map(|_| {
                (0..len)
                    .map(|_| Cell::new(rng.random_range(0..n), rng.random_range(0..n)))
                    .collect()
            })
            .collect();
        dataset(grid, trajs)
    }

    #[test]
    fn qa_points_identity_is_zero() {
        let g = Grid::unit(12);
        let d = random_dataset(g, 20, 8, 1);
        let mut rng = child_rng(2, &[]);
        let queries = region_queries(&g, 50, &mut rng);
        assert_eq!(qa_points(&d, &d, &queries).unwrap(), 0.0);
    }

    #[test]
    fn qa_points_matches_the_direct_formula() {
        let g = Grid::unit(30);
        let inside = Cell::new(5, 5);
        let outside = Cell::new(20, 20);
        let build = |hits: usize| {
            let mut trajs = vec![vec![inside]; hits];
            trajs.extend(vec![vec![outside]; 100 - hits]);
            dataset(g, trajs)
        };
        let d = build(10);
        let d_prime = build(8);
        let q = [RegionQuery { center: inside, radius: 1.0 }];
        // |10 − 8| / max(10, 0.01·100) = 0.2
        assert!((qa_points(&d, &d_prime, &q).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn qa_points_sanity_bound_floors_the_denominator() {
        let g = Grid::unit(30);
        let far = Cell::new(25, 25);
        let near = Cell::new(5, 5);
        let d = dataset(g, vec![vec![far]; 100]);
        let mut trajs = vec![vec![near]];
        trajs.extend(vec![vec![far]; 99]);
        let d_prime = dataset(g, trajs);
        let q = [RegionQuery { center: near, radius: 1.0 }];
        // |0 − 1| / max(0, 1) = 1
        assert!((qa_points(&d, &d_prime, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qa_rejects_empty_workloads() {
        let g = Grid::unit(8);
        let d = random_dataset(g, 4, 4, 3);
        assert!(matches!(qa_points(&d, &d, &[]), Err(Error::EmptyQuerySet)));
        assert!(matches!(qa_patterns(&d, &d, &[]), Err(Error::EmptyQuerySet)));
    }

    #[test]
    fn qa_patterns_identity_is_zero() {
        let g = Grid::unit(12);
        let d = random_dataset(g, 20, 8, 4);
        let patterns = top_patterns(&d, 50);
        assert!(!patterns.is_empty());
        assert_eq!(qa_patterns(&d, &d, &patterns).unwrap(), 0.0);
    }

    #[test]
    fn qa_patterns_matches_the_direct_count() {
        let g = Grid::unit(30);
        let a = Cell::new(3, 3);
        let b = Cell::new(4, 3);
        let filler = Cell::new(20, 20);
        let with_pattern = |k: usize| {
            let mut trajs = vec![vec![a, b]; k];
            trajs.extend(vec![vec![filler, filler]; 100 - k]);
            dataset(g, trajs)
        };
        let d = with_pattern(4);
        let d_prime = with_pattern(2);
        // |4 − 2| / max(4, 1) = 0.5
        let avre = qa_patterns(&d, &d_prime, &[(a, b)]).unwrap();
        assert!((avre - 0.5).abs() < 1e-12);
        // A pattern absent from both datasets contributes 0 / max(0, 1) = 0.
        let absent = (Cell::new(9, 9), Cell::new(9, 8));
        assert_eq!(qa_patterns(&d, &d_prime, &[absent]).unwrap(), 0.0);
    }

    #[test]
    fn top_patterns_orders_by_frequency() {
        let g = Grid::unit(8);
        let a = Cell::new(1, 1);
        let b = Cell::new(2, 1);
        let c = Cell::new(3, 1);
        let d = dataset(g, vec![vec![a, b, a, b, a, c]]);
        let patterns = top_patterns(&d, 2);
        assert_eq!(patterns[0], (a, b));
        assert_eq!(patterns.len(), 2);
    }

    #[test]
    fn kendall_is_one_for_identical_distinct_counts() {
        let g = Grid::unit(8);
        let a = Cell::new(1, 1);
        let b = Cell::new(2, 2);
        let c = Cell::new(3, 3);
        let d = dataset(g, vec![vec![a, a, a, b, b, c]]);
        assert_eq!(popularity_kendall(&d, &d), 1.0);
    }

    #[test]
    fn kendall_is_minus_one_for_a_reversed_ranking() {
        let g = Grid::unit(8);
        let a = Cell::new(1, 1);
        let b = Cell::new(2, 2);
        let c = Cell::new(3, 3);
        let d = dataset(g, vec![vec![a, a, a, b, b, c]]);
        let d_prime = dataset(g, vec![vec![a, b, b, c, c, c]]);
        assert_eq!(popularity_kendall(&d, &d_prime), -1.0);
    }

    #[test]
    fn kendall_matches_a_rank_based_oracle() {
        let g = Grid::unit(6);
        for seed in 0..50u64 {
            let d = random_dataset(g, 5, 10, 100 + seed);
            let d_prime = random_dataset(g, 5, 10, 200 + seed);
            let got = popularity_kendall(&d, &d_prime);
            // Oracle: enumerate pairs over the d-support with sign products.
            let counts = point_counts(&d);
            let other = point_counts(&d_prime);
            let universe: Vec<Cell> = counts.keys().copied().collect();
            let mut num = 0i64;
            let mut pairs = 0i64;
            for (i, &u) in universe.iter().enumerate() {
                for &v in &universe[i + 1..] {
                    pairs += 1;
                    let s1 = (counts[&u] as i64 - counts[&v] as i64).signum();
                    let s2 = (other.get(&u).copied().unwrap_or(0) as i64
                        - other.get(&v).copied().unwrap_or(0) as i64)
                        .signum();
                    num += s1 * s2;
                }
            }
            let want = num as f64 / pairs as f64;
            assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
        }
    }

    #[test]
    fn trip_error_identity_is_zero() {
        let g = Grid::unit(12);
        let d = random_dataset(g, 10, 6, 5);
        assert_eq!(trip_error(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn trip_error_disjoint_bins_hit_one() {
        let g = Grid::unit(12);
        let d = dataset(g, vec![vec![Cell::new(0, 0), Cell::new(5, 0)]]);
        let d_prime = dataset(g, vec![vec![Cell::new(0, 0), Cell::new(1, 0)]]);
        assert!((trip_error(&d, &d_prime).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trip_error_matches_a_hand_computation() {
        let g = Grid::unit(12);
        // Trip lengths 0, 4, 10 → bins 0, 4, 10 with L = 10.
        let d = dataset(
            g,
            vec![
                vec![Cell::new(0, 0)],
                vec![Cell::new(0, 0), Cell::new(4, 0)],
                vec![Cell::new(0, 0), Cell::new(10, 0)],
            ],
        );
        // Trip lengths 1, 4, 10 → bins 1, 4, 10.
        let d_prime = dataset(
            g,
            vec![
                vec![Cell::new(0, 0), Cell::new(1, 0)],
                vec![Cell::new(0, 0), Cell::new(4, 0)],
                vec![Cell::new(0, 0), Cell::new(10, 0)],
            ],
        );
        // Mass differs only between bins 0 and 1: JSD = 1/3.
        let got = trip_error(&d, &d_prime).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn trip_error_rejects_empty_datasets() {
        let g = Grid::unit(8);
        let d = random_dataset(g, 3, 4, 6);
        let empty = Dataset::<Raw>::new(g, vec![]).unwrap();
        assert!(matches!(trip_error(&d, &empty), Err(Error::EmptyDataset)));
        assert!(matches!(trip_error(&empty, &d), Err(Error::EmptyDataset)));
    }

    #[test]
    fn diameter_error_identity_is_zero() {
        let g = Grid::unit(12);
        let d = random_dataset(g, 10, 6, 7);
        assert_eq!(diameter_error(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn diameter_error_matches_a_hand_computation() {
        let g = Grid::unit(12);
        // Steps {1, 2} with L = 2 → bins 5 and 10, mass (1/2, 1/2).
        let d = dataset(g, vec![vec![Cell::new(0, 0), Cell::new(1, 0), Cell::new(3, 0)]]);
        // Steps {2, 4} → both at or past L → bin 10 only.
        let d_prime = dataset(g, vec![vec![Cell::new(0, 0), Cell::new(2, 0), Cell::new(6, 0)]]);
        let want = 0.5
            * (0.5 * (0.5f64 / 0.25).log2()
                + 0.5 * (0.5f64 / 0.75).log2()
                + 1.0 * (1.0f64 / 0.75).log2());
        let got = diameter_error(&d, &d_prime).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn diameter_error_needs_consecutive_pairs() {
        let g = Grid::unit(8);
        let singles = dataset(g, vec![vec![Cell::new(1, 1)], vec![Cell::new(2, 2)]]);
        assert!(matches!(diameter_error(&singles, &singles), Err(Error::EmptyDataset)));
    }

    #[test]
    fn jsd_is_symmetric_and_bounded() {
        let mut rng = child_rng(8, &[]);
        for _ in 0..200 {
            let mut draw = || {
                let mut h = [0.0f64; 11];
                for v in &mut h {
                    *v = rng.random::<f64>();
                }
                let total: f64 = h.iter().sum();
                for v in &mut h {
                    *v /= total;
                }
                h
            };
            let p = draw();
            let q = draw();
            let f = jsd_base2(&p, &q);
            let r = jsd_base2(&q, &p);
            assert!((f - r).abs() < 1e-12);
            assert!((-1e-12..=1.0 + 1e-12).contains(&f), "jsd {f}");
        }
        let p = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let q = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((jsd_base2(&p, &q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dtw_identity_is_zero_and_repeats_are_free() {
        let a = Cell::new(1, 1);
        let b = Cell::new(2, 2);
        assert_eq!(dtw(&[a, b], &[a, b]), 0.0);
        assert_eq!(dtw(&[a, b], &[a, a, b]), 0.0);
    }

    #[test]
    fn dtw_matches_the_full_matrix_oracle() {
        // Textbook O(m²) dynamic program with an explicit matrix.
        fn oracle(a: &[Cell], b: &[Cell]) -> f64 {
            let mut m = vec![vec![f64::INFINITY; b.len() + 1]; a.len() + 1];
            m[0][0] = 0.0;
            for i in 1..=a.len() {
                for j in 1..=b.len() {
                    let c = cell_distance(a[i - 1], b[j - 1]);
                    m[i][j] = c + m[i - 1][j].min(m[i][j - 1]).min(m[i - 1][j - 1]);
                }
            }
            m[a.len()][b.len()]
        }
        let mut rng = child_rng(9, &[]);
        for case in 0..300 {
            let len_a = rng.random_range(1..7);
            let len_b = rng.random_range(1..7);
            let mut draw = |len: usize| -> Vec<Cell> {
                (0..len)
                    .map(|_| Cell::new(rng.random_range(0..9), rng.random_range(0..9)))
                    .collect()
            };
            let a = draw(len_a);
            let b = draw(len_b);
            let got = dtw(&a, &b);
            let want = oracle(&a, &b);
            assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
            let sym = dtw(&b, &a);
            assert!((got - sym).abs() < 1e-9, "case {case}: asymmetric {got} vs {sym}");
        }
    }

    #[test]
    fn dtw_mean_averages_over_matching_ids() {
        let g = Grid::unit(8);
        let d = dataset(g, vec![vec![Cell::new(1, 1)], vec![Cell::new(2, 2)]]);
        // Shift only the second trajectory by one cell.
        let d_prime = dataset(g, vec![vec![Cell::new(1, 1)], vec![Cell::new(3, 2)]]);
        let got = dtw_mean(&d, &d_prime).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
        let sym = dtw_mean(&d_prime, &d).unwrap();
        assert!((got - sym).abs() < 1e-12);
    }

    #[test]
    fn dtw_mean_rejects_unknown_ids() {
        let g = Grid::unit(8);
        let d = dataset(g, vec![vec![Cell::new(1, 1)]]);
        let other = Dataset::new(
            g,
            vec![Trajectory::new_raw("different", vec![Cell::new(1, 1)])],
        )
        .unwrap();
        assert!(matches!(
            dtw_mean(&d, &other),
            Err(Error::UnknownTrajectory(id)) if id == "t0"
        ));
    }

    #[test]
    fn evaluate_reports_perfect_utility_on_identity() {
        let g = Grid::unit(12);
        let d = random_dataset(g, 15, 8, 10);
        let mut rng = child_rng(11, &[]);
        let queries = region_queries(&g, 40, &mut rng);
        let patterns = top_patterns(&d, 40);
        let report = evaluate(&d, &d, &queries, &patterns).unwrap();
        assert_eq!(report.qa_points_avre, 0.0);
        assert_eq!(report.qa_patterns_avre, 0.0);
        assert_eq!(report.trip_error_jsd, 0.0);
        assert_eq!(report.diameter_error_jsd, 0.0);
        assert_eq!(report.dtw_mean, 0.0);
        // Tau-a counts tied pairs in the denominator, so identity scores
        // exactly the non-tied pair fraction, not 1.
        let counts: Vec<usize> = point_counts(&d).values().copied().collect();
        let mut pairs = 0f64;
        let mut untied = 0f64;
        for i in 0..counts.len() {
            for j in i + 1..counts.len() {
                pairs += 1.0;
                if counts[i] != counts[j] {
                    untied += 1.0;
                }
            }
        }
        assert!((report.popularity_kt - untied / pairs).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn qa_metrics_are_nonnegative(seed in 0u64..300) {
            let g = Grid::unit(8);
            let d = random_dataset(g, 6, 5, seed);
            let d_prime = random_dataset(g, 6, 5, seed + 1000);
            let mut rng = child_rng(seed, &[43]);
            let queries = region_queries(&g, 10, &mut rng);
            prop_assert!(qa_points(&d, &d_prime, &queries).unwrap() >= 0.0);
            let patterns = top_patterns(&d, 10);
            prop_assert!(qa_patterns(&d, &d_prime, &patterns).unwrap() >= 0.0);
            let kt = popularity_kendall(&d, &d_prime);
            prop_assert!((-1.0..=1.0).contains(&kt));
            let te = trip_error(&d, &d_prime).unwrap();
            prop_assert!((0.0..=1.0).contains(&te));
            let de = diameter_error(&d, &d_prime).unwrap();
            prop_assert!((0.0..=1.0).contains(&de));
            prop_assert!(dtw_mean(&d, &d_prime).unwrap() >= 0.0);
        }
    }
}
