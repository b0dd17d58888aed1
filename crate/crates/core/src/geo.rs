//! Coordinates, uniform grid discretization, neighborhoods, distances, and
//! trajectory preprocessing.
//!
//! Coordinates are planar (projected); all downstream math happens on the
//! cell alphabet of an `n × n` grid, in cell units.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::marker::PhantomData;

/// A point in the projected plane, with an optional timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
    pub t: Option<f64>,
}

impl GeoPoint {
    pub fn new(x: f64, y: f64) -> Self {
        GeoPoint { x, y, t: None }
    }

    pub fn at(x: f64, y: f64, t: f64) -> Self {
        GeoPoint { x, y, t: Some(t) }
    }
}

/// Axis-aligned bounding box, closed on all edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Uniform `n × n` grid over a bounding box; the location alphabet has `n²` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: u16,
    bbox: BBox,
}

/// One grid cell, addressed by column (`ix`) and row (`iy`) indices.
///
/// Derived ordering is lexicographic by `(ix, iy)`, the tie-break order used
/// throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub ix: u16,
    pub iy: u16,
}

impl Cell {
    pub fn new(ix: u16, iy: u16) -> Self {
        Cell { ix, iy }
    }

    /// Cell position in cell units; distances in this space match [`cell_distance`].
    pub fn units(&self) -> (f64, f64) {
        (f64::from(self.ix), f64::from(self.iy))
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.ix, self.iy)
    }
}

impl Grid {
    pub fn new(n: u16, bbox: BBox) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("grid side must be >= 2, got {n}")));
        }
        if !(bbox.x_min < bbox.x_max && bbox.y_min < bbox.y_max) {
            return Err(Error::Config("bounding box must have positive extent".into()));
        }
        Ok(Grid { n, bbox })
    }

    /// Grid over `[0, n] × [0, n]`, one unit per cell. The default for synthetic data.
    pub fn unit(n: u16) -> Self {
        Grid::new(
            n,
            BBox { x_min: 0.0, y_min: 0.0, x_max: f64::from(n), y_max: f64::from(n) },
        )
        .expect("unit grid parameters are valid")
    }

    pub fn n(&self) -> u16 {
        self.n
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn cell_count(&self) -> usize {
        usize::from(self.n) * usize::from(self.n)
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.ix < self.n && c.iy < self.n
    }

    /// Dense index of a cell, row-major.
    pub fn index(&self, c: Cell) -> usize {
        usize::from(c.iy) * usize::from(self.n) + usize::from(c.ix)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let n = usize::from(self.n);
        Cell::new((index % n) as u16, (index / n) as u16)
    }

    /// Geographic center of a cell (inverse of [`discretize`] up to rounding).
    pub fn center_geo(&self, c: Cell) -> GeoPoint {
        let wx = (self.bbox.x_max - self.bbox.x_min) / f64::from(self.n);
        let wy = (self.bbox.y_max - self.bbox.y_min) / f64::from(self.n);
        GeoPoint::new(
            self.bbox.x_min + (f64::from(c.ix) + 0.5) * wx,
            self.bbox.y_min + (f64::from(c.iy) + 0.5) * wy,
        )
    }

    /// Nearest cell to a position in cell units (round and clamp).
    pub fn snap_units(&self, x: f64, y: f64) -> Cell {
        let max = f64::from(self.n - 1);
        let ix = x.round().clamp(0.0, max) as u16;
        let iy = y.round().clamp(0.0, max) as u16;
        Cell::new(ix, iy)
    }
}

/// Map a geographic point to its grid cell.
///
/// Points exactly on the max edge clamp into the last cell; anything outside
/// the bounding box is an error.
pub fn discretize(p: GeoPoint, g: &Grid) -> Result<Cell> {
    if !g.bbox.contains(p) {
        return Err(Error::OutOfBounds { x: p.x, y: p.y });
    }
    let n = f64::from(g.n);
    let fx = (p.x - g.bbox.x_min) / (g.bbox.x_max - g.bbox.x_min);
    let fy = (p.y - g.bbox.y_min) / (g.bbox.y_max - g.bbox.y_min);
    let ix = ((fx * n).floor() as u16).min(g.n - 1);
    let iy = ((fy * n).floor() as u16).min(g.n - 1);
    Ok(Cell::new(ix, iy))
}

/// Euclidean distance between cells, in cell units.
pub fn cell_distance(a: Cell, b: Cell) -> f64 {
    let dx = f64::from(a.ix) - f64::from(b.ix);
    let dy = f64::from(a.iy) - f64::from(b.iy);
    (dx * dx + dy * dy).sqrt()
}

/// Moore 8-neighborhood of a cell, clipped at grid borders, in ascending
/// `(ix, iy)` order. Contains the cell itself iff `include_self`.
pub fn neighbors(c: Cell, g: &Grid, include_self: bool) -> Vec<Cell> {
    let mut out = Vec::with_capacity(9);
    for dx in -1i32..=1 {
        for dy in -1i32..=1 {
            if dx == 0 && dy == 0 && !include_self {
                continue;
            }
            let nx = i32::from(c.ix) + dx;
            let ny = i32::from(c.iy) + dy;
            if nx >= 0 && ny >= 0 && nx < i32::from(g.n) && ny < i32::from(g.n) {
                out.push(Cell::new(nx as u16, ny as u16));
            }
        }
    }
    out.sort();
    out
}

/// Resample a timestamped track to exactly uniform intervals by linear
/// interpolation, starting at the first timestamp.
pub fn resample_uniform(points: &[GeoPoint], interval: f64) -> Result<Vec<GeoPoint>> {
    if points.len() < 2 || interval <= 0.0 {
        return Err(Error::DegenerateInput);
    }
    let times: Vec<f64> = points
        .iter()
        .map(|p| p.t.ok_or(Error::DegenerateInput))
        .collect::<Result<_>>()?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DegenerateInput);
    }
    let t0 = times[0];
    let t_end = *times.last().expect("nonempty");
    let mut out = Vec::new();
    let mut seg = 0usize;
    let mut t = t0;
    while t <= t_end + 1e-9 {
        while seg + 2 < times.len() && times[seg + 1] < t {
            seg += 1;
        }
        let (ta, tb) = (times[seg], times[seg + 1]);
        let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let (a, b) = (points[seg], points[seg + 1]);
        out.push(GeoPoint::at(a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y), t));
        t += interval;
    }
    Ok(out)
}

/// Split a track into maximal in-area runs, dropping runs shorter than
/// `min_len`. Out-of-area points never appear in the output.
pub fn clip_to_area(traj: &[GeoPoint], bbox: BBox, min_len: usize) -> Vec<Vec<GeoPoint>> {
    let mut fragments = Vec::new();
    let mut current = Vec::new();
    for &p in traj {
        if bbox.contains(p) {
            current.push(p);
        } else if !current.is_empty() {
            fragments.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        fragments.push(current);
    }
    fragments.retain(|f| f.len() >= min_len);
    fragments
}

/// Provenance of trajectory data, tracked at the type level.
///
/// The pipeline only mints roles in the order
/// `Raw → Noisy → PostProcessed → Fingerprinted → Leaked`; functions past the
/// private-release boundary cannot be handed raw data.
pub trait Role: sealed::Sealed {
    const NAME: &'static str;
}

/// Original, unprotected data. Never crosses the private-release boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Raw {}
/// Output of the differentially private release mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noisy {}
/// Noisy data with pairwise correlations repaired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostProcessed {}
/// A data analyzer's fingerprinted copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fingerprinted {}
/// Data observed in the wild: an attacked or directly leaked copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leaked {}

mod sealed {
    pub trait Sealed {}
    impl Sealed for super::Raw {}
    impl Sealed for super::Noisy {}
    impl Sealed for super::PostProcessed {}
    impl Sealed for super::Fingerprinted {}
    impl Sealed for super::Leaked {}
}

impl Role for Raw {
    const NAME: &'static str = "raw";
}
impl Role for Noisy {
    const NAME: &'static str = "noisy";
}
impl Role for PostProcessed {
    const NAME: &'static str = "postprocessed";
}
impl Role for Fingerprinted {
    const NAME: &'static str = "fingerprinted";
}
impl Role for Leaked {
    const NAME: &'static str = "leaked";
}

/// An ordered cell sequence with an id and a compile-time role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory<R: Role> {
    pub id: String,
    pub cells: Vec<Cell>,
    _role: PhantomData<R>,
}

impl<R: Role> Trajectory<R> {
    /// Internal constructor; pipeline stages mint their own output roles.
    pub(crate) fn from_parts(id: impl Into<String>, cells: Vec<Cell>) -> Self {
        Trajectory { id: id.into(), cells, _role: PhantomData }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

impl Trajectory<Raw> {
    /// Raw data enters the system only here (or via file ingestion).
    pub fn new_raw(id: impl Into<String>, cells: Vec<Cell>) -> Self {
        Trajectory::from_parts(id, cells)
    }
}

impl Trajectory<Fingerprinted> {
    /// A fingerprinted copy handed to the outside world verbatim is a leak.
    pub fn into_leaked(self) -> Trajectory<Leaked> {
        Trajectory::from_parts(self.id, self.cells)
    }
}

impl Trajectory<Leaked> {
    /// Leaked data arrives from outside the pipeline.
    pub fn new_leaked(id: impl Into<String>, cells: Vec<Cell>) -> Self {
        Trajectory::from_parts(id, cells)
    }
}

/// A grid plus the trajectories living on it, all sharing one role.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<R: Role> {
    pub grid: Grid,
    pub trajectories: Vec<Trajectory<R>>,
}

impl<R: Role> Dataset<R> {
    pub fn new(grid: Grid, trajectories: Vec<Trajectory<R>>) -> Result<Self> {
        for t in &trajectories {
            if t.is_empty() {
                return Err(Error::Data(format!("trajectory {} is empty", t.id)));
            }
            if let Some(c) = t.cells.iter().find(|c| !grid.contains(**c)) {
                return Err(Error::Data(format!("trajectory {}: cell {c} off grid", t.id)));
            }
        }
        Ok(Dataset { grid, trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Discretize geographic tracks into a raw cell dataset, clipping to the grid
/// area and splitting at gaps.
pub fn preprocess_tracks(
    tracks: &[(String, Vec<GeoPoint>)],
    grid: &Grid,
    min_fragment_len: usize,
) -> Result<Dataset<Raw>> {
    let mut trajectories = Vec::new();
    for (id, points) in tracks {
        let fragments = clip_to_area(points, grid.bbox(), min_fragment_len);
        for (k, frag) in fragments.iter().enumerate() {
            let cells: Vec<Cell> =
                frag.iter().map(|&p| discretize(p, grid)).collect::<Result<_>>()?;
            let frag_id = if fragments.len() == 1 { id.clone() } else { format!("{id}#{k}") };
            trajectories.push(Trajectory::new_raw(frag_id, cells));
        }
    }
    Dataset::new(*grid, trajectories)
}
