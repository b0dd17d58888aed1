//! The public 2-gram Markov correlation model and its τ-set queries.
//!
//! The model is immutable after construction: a sparse row-stochastic
//! transition matrix over grid cells plus per-cell visit counts used as
//! emission weights.

use crate::geo::{cell_distance, neighbors, Cell, Dataset, Grid, Role};
use rand::RngExt;

use crate::sample::weighted_choice;
use crate::{Error, Result, SimRng};
use std::collections::HashMap;

const ROW_SUM_TOL: f64 = 1e-9;

/// Sparse 2-gram mobility model: `Pr[x_j = g | x_{j-1} = g']` plus visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    grid: Grid,
    /// Row per cell (dense index), entries sorted by destination cell,
    /// zero-probability entries omitted, each row summing to 1.
    rows: Vec<Vec<(Cell, f64)>>,
    visits: Vec<u64>,
}

/// Cells reachable from `anchor` with transition probability ≥ `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSet {
    pub anchor: Cell,
    pub tau: f64,
    /// Members sorted ascending by `(ix, iy)`.
    pub members: Vec<Cell>,
}

impl TauSet {
    pub fn contains(&self, c: Cell) -> bool {
        self.members.binary_search(&c).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl MarkovModel {
    /// Build the model from a corpus: empirical pair frequencies per source
    /// cell, visit counts per cell. Cells with no outgoing observations get a
    /// uniform row over their Moore neighborhood (self excluded) so every row
    /// is a valid distribution.
    pub fn build<R: Role>(d: &Dataset<R>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let grid = d.grid;
        let mut pair_counts: HashMap<(Cell, Cell), u64> = HashMap::new();
        let mut visits = vec![0u64; grid.cell_count()];
        for t in &d.trajectories {
            for &c in &t.cells {
                visits[grid.index(c)] += 1;
            }
            for w in t.cells.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        let mut outgoing: Vec<Vec<(Cell, u64)>> = vec![Vec::new(); grid.cell_count()];
        for ((from, to), count) in pair_counts {
            outgoing[grid.index(from)].push((to, count));
        }
        let mut rows = Vec::with_capacity(grid.cell_count());
        for (idx, mut dests) in outgoing.into_iter().enumerate() {
            let total: u64 = dests.iter().map(|(_, c)| *c).sum();
            let row = if total == 0 {
                fallback_row(grid.cell_at(idx), &grid)
            } else {
                dests.sort_by_key(|(c, _)| *c);
                dests
                    .into_iter()
                    .map(|(c, count)| (c, count as f64 / total as f64))
                    .collect()
            };
            rows.push(row);
        }
        Ok(MarkovModel { grid, rows, visits })
    }

    /// Assemble a model from explicit rows (missing rows get the Moore
    /// fallback). Rows must be nonnegative and sum to 1 within tolerance;
    /// they are renormalized exactly.
    pub fn from_rows(
        grid: Grid,
        explicit: HashMap<Cell, Vec<(Cell, f64)>>,
        visits: Vec<u64>,
    ) -> Result<Self> {
        if visits.len() != grid.cell_count() {
            return Err(Error::Config(format!(
                "visits length {} does not match cell count {}",
                visits.len(),
                grid.cell_count()
            )));
        }
        let mut rows = vec![Vec::new(); grid.cell_count()];
        for (from, mut row) in explicit {
            if !grid.contains(from) {
                return Err(Error::Data(format!("row source {from} off grid")));
            }
            row.retain(|(_, p)| *p > 0.0);
            let sum: f64 = row.iter().map(|(_, p)| *p).sum();
            if row.iter().any(|(c, p)| !grid.contains(*c) || *p < 0.0 || !p.is_finite()) {
                return Err(Error::Data(format!("row {from} has invalid entries")));
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Data(format!("row {from} sums to {sum}, expected 1")));
            }
            row.sort_by_key(|(c, _)| *c);
            for entry in &mut row {
                entry.1 /= sum;
            }
            rows[grid.index(from)] = row;
        }
        for idx in 0..rows.len() {
            if rows[idx].is_empty() {
                rows[idx] = fallback_row(grid.cell_at(idx), &grid);
            }
        }
        Ok(MarkovModel { grid, rows, visits })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Transition row of `from`: destinations sorted ascending, probabilities
    /// summing to 1, zero entries omitted.
    pub fn row(&self, from: Cell) -> &[(Cell, f64)] {
        &self.rows[self.grid.index(from)]
    }

    pub fn transition(&self, from: Cell, to: Cell) -> f64 {
        let row = self.row(from);
        match row.binary_search_by_key(&to, |(c, _)| *c) {
            Ok(i) => row[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn visits(&self, c: Cell) -> u64 {
        self.visits[self.grid.index(c)]
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }

    /// Cells with `Pr[g | anchor] ≥ tau`.
    pub fn tau_probable_set(&self, anchor: Cell, tau: f64) -> TauSet {
        let members: Vec<Cell> = self
            .row(anchor)
            .iter()
            .filter(|(_, p)| *p >= tau)
            .map(|(c, _)| *c)
            .collect();
        TauSet { anchor, tau, members }
    }

    /// Members of the τ-probable set of `prev_released` at least as close to
    /// `target` as `prev_released` itself.
    pub fn tau_closer_set(&self, prev_released: Cell, target: Cell, tau: f64) -> TauSet {
        let bound = cell_distance(prev_released, target);
        let mut set = self.tau_probable_set(prev_released, tau);
        set.members.retain(|g| cell_distance(*g, target) <= bound);
        set
    }

    /// Emission distribution over the Moore neighborhood of `g` (self
    /// included), proportional to visit counts; uniform if all counts are zero.
    pub fn emission_distribution(&self, g: Cell) -> Vec<(Cell, f64)> {
        let hood = neighbors(g, &self.grid, true);
        let counts: Vec<u64> = hood.iter().map(|c| self.visits(*c)).collect();
        let total: u64 = counts.iter().sum();
        if total == 0 {
            let w = 1.0 / hood.len() as f64;
            hood.into_iter().map(|c| (c, w)).collect()
        } else {
            hood.into_iter()
                .zip(counts)
                .map(|(c, k)| (c, k as f64 / total as f64))
                .collect()
        }
    }

    /// Sample a starting cell proportional to visit counts (uniform if the
    /// model has none).
    pub fn sample_start(&self, rng: &mut SimRng) -> Cell {
        if self.total_visits() == 0 {
            let idx = rng.random_range(0..self.grid.cell_count());
            return self.grid.cell_at(idx);
        }
        let items: Vec<(Cell, f64)> = self
            .visits
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0)
            .map(|(i, v)| (self.grid.cell_at(i), *v as f64))
            .collect();
        weighted_choice(rng, &items)
    }

    /// Sample the next cell from the transition row of `from`.
    pub fn sample_step(&self, from: Cell, rng: &mut SimRng) -> Cell {
        weighted_choice(rng, self.row(from))
    }

    pub(crate) fn iter_rows(&self) -> impl Iterator<Item = (Cell, &[(Cell, f64)])> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| (self.grid.cell_at(i), row.as_slice()))
    }
}


fn fallback_row(from: Cell, grid: &Grid) -> Vec<(Cell, f64)> {
    let hood = neighbors(from, grid, false);
    let w = 1.0 / hood.len() as f64;
    hood.into_iter().map(|c| (c, w)).collect()
}
