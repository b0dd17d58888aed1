//! Per-point ε-differentially-private release of trajectories.
//!
//! Each timestamp goes through: belief prior update → δ-location set →
//! convex hull of candidate cell centers → sensitivity hull (pairwise vertex
//! differences) → isotropic transform (Monte Carlo covariance whitening) →
//! k-norm noise sample around the true location's image → snap to the grid →
//! Bayesian posterior update. ε is a per-timestamp (event-level) budget; no
//! composition accounting across a trajectory is performed.
//!
//! All geometry here lives in cell units: cell `(ix, iy)` sits at the point
//! `(ix, iy)` and grid snapping is coordinate rounding.

use crate::corr::MarkovModel;
use crate::geo::{neighbors, Cell, Dataset, Grid, Noisy, Raw, Trajectory};
use crate::{child_rng, Error, Result, SimRng};
use rand::RngExt;
use rand_distr::{Distribution, Gamma};

const AREA_TOL: f64 = 1e-9;
/// Half-cell padding square: corners at ±`PAD` around each degenerate point.
const PAD: f64 = 0.25;

/// Parameters of the private release mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PimParams {
    /// Per-timestamp privacy budget, > 0.
    pub epsilon: f64,
    /// δ-location-set mass cutoff, in (0, 1).
    pub delta: f64,
    /// Monte Carlo draws for the isotropic covariance estimate.
    pub isotropic_samples: usize,
}

impl PimParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        Self::with_samples(epsilon, delta, 4096)
    }

    pub fn with_samples(epsilon: f64, delta: f64, isotropic_samples: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0,1), got {delta}")));
        }
        if isotropic_samples < 16 {
            return Err(Error::Config("isotropic_samples must be >= 16".into()));
        }
        Ok(PimParams { epsilon, delta, isotropic_samples })
    }
}

/// A point in cell-unit space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

fn cell_point(c: Cell) -> Point2 {
    let (x, y) = c.units();
    Point2::new(x, y)
}

/// A 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m00: f64,
    pub m01: f64,
    pub m10: f64,
    pub m11: f64,
}

impl Mat2 {
    pub fn identity() -> Self {
        Mat2 { m00: 1.0, m01: 0.0, m10: 0.0, m11: 1.0 }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.m00 * p.x + self.m01 * p.y, self.m10 * p.x + self.m11 * p.y)
    }

    pub fn det(&self) -> f64 {
        self.m00 * self.m11 - self.m01 * self.m10
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d.abs() < 1e-30 {
            return None;
        }
        Some(Mat2 { m00: self.m11 / d, m01: -self.m01 / d, m10: -self.m10 / d, m11: self.m00 / d })
    }

    /// Inverse square root of a symmetric positive-definite matrix.
    fn inv_sqrt_spd(a: f64, b: f64, c: f64) -> Option<Mat2> {
        // Eigendecomposition of [[a, b], [b, c]].
        let half_trace = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let (l1, l2) = (half_trace + disc, half_trace - disc);
        if l1 <= 0.0 || l2 <= 0.0 {
            return None;
        }
        let (s1, s2) = (1.0 / l1.sqrt(), 1.0 / l2.sqrt());
        // Eigenvector for l1.
        let (vx, vy) = if b.abs() > 1e-18 {
            (l1 - c, b)
        } else if a >= c {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let norm = (vx * vx + vy * vy).sqrt();
        let (ux, uy) = (vx / norm, vy / norm);
        // R diag(s) R^T with R = [[ux, -uy], [uy, ux]].
        Some(Mat2 {
            m00: s1 * ux * ux + s2 * uy * uy,
            m01: (s1 - s2) * ux * uy,
            m10: (s1 - s2) * ux * uy,
            m11: s1 * uy * uy + s2 * ux * ux,
        })
    }
}

/// A convex polygon with counter-clockwise vertices and positive area.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    vertices: Vec<Point2>,
}

impl ConvexHull {
    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    /// Signed area by the shoelace formula (positive: counter-clockwise).
    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            acc += v[i].x * v[j].y - v[j].x * v[i].y;
        }
        0.5 * acc
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Point-in-polygon test (boundary counts as inside).
    pub fn contains(&self, p: Point2) -> bool {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            let j = (i + 1) % n;
            let cross = (v[j].x - v[i].x) * (p.y - v[i].y) - (v[j].y - v[i].y) * (p.x - v[i].x);
            if cross < -1e-12 {
                return false;
            }
        }
        true
    }

    fn map(&self, t: &Mat2) -> ConvexHull {
        // A linear image with positive determinant preserves convexity and
        // vertex orientation.
        debug_assert!(t.det() > 0.0);
        ConvexHull { vertices: self.vertices.iter().map(|v| t.apply(*v)).collect() }
    }
}

/// Convex hull of a point set by the monotone chain algorithm.
///
/// Degenerate inputs (single point, collinear set) are padded with a
/// half-cell-side square around each point so the hull always has positive
/// area.
pub fn convex_hull(points: &[Point2]) -> ConvexHull {
    assert!(!points.is_empty(), "convex_hull needs at least one point");
    let hull = chain_hull(points);
    if hull_area(&hull) > AREA_TOL {
        return ConvexHull { vertices: hull };
    }
    let mut padded = Vec::with_capacity(points.len() * 4);
    for p in points {
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            padded.push(Point2::new(p.x + sx * PAD, p.y + sy * PAD));
        }
    }
    ConvexHull { vertices: chain_hull(&padded) }
}

fn hull_area(vertices: &[Point2]) -> f64 {
    ConvexHull { vertices: vertices.to_vec() }.area()
}

fn chain_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).expect("finite coordinates"));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point2, a: Point2, b: Point2| -> f64 {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut lower: Vec<Point2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Convex hull of all pairwise vertex differences of `k_prime`.
/// The result is origin-symmetric.
pub fn sensitivity_hull(k_prime: &ConvexHull) -> ConvexHull {
    let v = k_prime.vertices();
    let mut diffs = Vec::with_capacity(v.len() * v.len());
    for (i, a) in v.iter().enumerate() {
        for (j, b) in v.iter().enumerate() {
            if i != j {
                diffs.push(a.sub(*b));
            }
        }
    }
    convex_hull(&diffs)
}

/// Minkowski gauge ‖v‖_K of a convex body with the origin strictly interior.
#[derive(Debug, Clone)]
pub struct PolyGauge {
    /// Per edge: outward normal and positive offset (n·x = c on the edge).
    planes: Vec<(Point2, f64)>,
}

impl PolyGauge {
    pub fn new(hull: &ConvexHull) -> Result<Self> {
        let v = hull.vertices();
        if v.len() < 3 {
            return Err(Error::DegenerateHull);
        }
        let mut planes = Vec::with_capacity(v.len());
        for i in 0..v.len() {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            let d = b.sub(a);
            let normal = Point2::new(d.y, -d.x); // outward for CCW order
            let offset = normal.x * a.x + normal.y * a.y;
            if offset <= 1e-12 {
                return Err(Error::DegenerateHull); // origin not strictly interior
            }
            planes.push((normal, offset));
        }
        Ok(PolyGauge { planes })
    }

    /// ‖v‖_K = min { t ≥ 0 : v ∈ tK }.
    pub fn norm(&self, v: Point2) -> f64 {
        let mut best: f64 = 0.0;
        for (n, c) in &self.planes {
            best = best.max((n.x * v.x + n.y * v.y) / c);
        }
        best
    }
}

/// Estimate the whitening transform of a hull by Monte Carlo.
///
/// Draws `sample_count` points from the bounding box, keeps those inside,
/// estimates the covariance of the uniform distribution on the hull, and
/// returns `T = Σ^(−1/2)` along with the transformed hull `K_I` (unit sample
/// covariance by construction).
pub fn isotropic_transform(
    k: &ConvexHull,
    sample_count: usize,
    rng: &mut SimRng,
) -> Result<(Mat2, ConvexHull)> {
    if k.area() < AREA_TOL {
        return Err(Error::DegenerateHull);
    }
    let (lo, hi) = k.bbox();
    let mut accepted: Vec<Point2> = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let p = Point2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        if k.contains(p) {
            accepted.push(p);
        }
    }
    if accepted.len() < 8 {
        return Err(Error::DegenerateHull);
    }
    let inv = 1.0 / accepted.len() as f64;
    let mut mean = Point2::new(0.0, 0.0);
    for p in &accepted {
        mean = mean.add(*p);
    }
    mean = mean.scale(inv);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &accepted {
        let d = p.sub(mean);
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let t = Mat2::inv_sqrt_spd(sxx * inv, sxy * inv, syy * inv).ok_or(Error::DegenerateHull)?;
    Ok((t, k.map(&t)))
}

/// Draw one point from the k-norm density exp(−ε‖z − center‖_{K_I}) (up to
/// normalization): radius from Gamma(3, 1/ε), direction uniform in the body.
pub fn knorm_sample(k_i: &ConvexHull, center: Point2, epsilon: f64, rng: &mut SimRng) -> Point2 {
    let u = uniform_in_hull(k_i, rng);
    let gamma = Gamma::new(3.0, 1.0 / epsilon).expect("valid gamma parameters");
    let r = gamma.sample(rng);
    center.add(u.scale(r))
}

fn uniform_in_hull(hull: &ConvexHull, rng: &mut SimRng) -> Point2 {
    let (lo, hi) = hull.bbox();
    // Acceptance for a convex body inside its bounding box is at least 1/2,
    // so this terminates quickly; the cap guards degenerate inputs.
    for _ in 0..65_536 {
        let p = Point2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        if hull.contains(p) {
            return p;
        }
    }
    Point2::new(0.0, 0.0)
}

/// Belief state over the grid during a release: prior and posterior vectors.
#[derive(Debug, Clone)]
pub struct BeliefState {
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
}

impl BeliefState {
    /// Point mass on one cell.
    pub fn point_mass(grid: &Grid, c: Cell) -> Self {
        let mut posterior = vec![0.0; grid.cell_count()];
        posterior[grid.index(c)] = 1.0;
        BeliefState { prior: posterior.clone(), posterior }
    }
}

/// Prior update: posterior row-vector times the transition matrix, normalized.
pub fn prior_update(posterior: &[f64], m: &MarkovModel) -> Vec<f64> {
    let grid = m.grid();
    let mut prior = vec![0.0; posterior.len()];
    for (idx, &mass) in posterior.iter().enumerate() {
        if mass <= 0.0 {
            continue;
        }
        for (to, p) in m.row(grid.cell_at(idx)) {
            prior[grid.index(*to)] += mass * p;
        }
    }
    let total: f64 = prior.iter().sum();
    if total > 0.0 {
        for v in &mut prior {
            *v /= total;
        }
    }
    prior
}

/// Minimal set of cells whose prior mass reaches 1 − δ: greedy in descending
/// prior order, ties broken by ascending `(ix, iy)`.
pub fn delta_location_set(prior: &[f64], grid: &Grid, delta: f64) -> Vec<Cell> {
    let mut entries: Vec<(Cell, f64)> = prior
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| (grid.cell_at(i), *p))
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite mass").then(a.0.cmp(&b.0)));
    let target = 1.0 - delta;
    let mut out = Vec::new();
    let mut acc = 0.0;
    for (c, p) in entries {
        out.push(c);
        acc += p;
        if acc >= target {
            break;
        }
    }
    out
}

/// Bayesian posterior given released point `z` (cell units): likelihood
/// exp(−ε‖T(z − s_i)‖_{K_I}) per candidate cell, times the prior, normalized
/// in log space.
pub fn posterior_update(
    prior: &[f64],
    grid: &Grid,
    z: Point2,
    k_i: &ConvexHull,
    t: &Mat2,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let gauge = PolyGauge::new(k_i)?;
    let mut log_w = vec![f64::NEG_INFINITY; prior.len()];
    let mut max_lw = f64::NEG_INFINITY;
    for (idx, &p) in prior.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let d = t.apply(z.sub(cell_point(grid.cell_at(idx))));
        let lw = p.ln() - epsilon * gauge.norm(d);
        log_w[idx] = lw;
        max_lw = max_lw.max(lw);
    }
    if !max_lw.is_finite() {
        return Err(Error::AllZeroLikelihood);
    }
    let mut posterior = vec![0.0; prior.len()];
    let mut total = 0.0;
    for (idx, lw) in log_w.iter().enumerate() {
        if lw.is_finite() {
            let w = (lw - max_lw).exp();
            posterior[idx] = w;
            total += w;
        }
    }
    for v in &mut posterior {
        *v /= total;
    }
    Ok(posterior)
}

/// Release one trajectory under the per-point mechanism.
///
/// The initial posterior is a point mass on the first true cell, whose release
/// is calibrated on its Moore neighborhood; later timestamps build the
/// δ-location set from the tracked prior. Reads nothing but its argument and
/// the public model.
pub fn pim_release(
    traj: &Trajectory<Raw>,
    m: &MarkovModel,
    params: &PimParams,
    rng: &mut SimRng,
) -> Result<Trajectory<Noisy>> {
    if traj.is_empty() {
        return Err(Error::Data(format!("trajectory {} is empty", traj.id)));
    }
    let grid = m.grid();
    let mut belief = BeliefState::point_mass(grid, traj.cells[0]);
    let mut out = Vec::with_capacity(traj.len());
    for (j, &true_cell) in traj.cells.iter().enumerate() {
        let candidates = if j == 0 {
            neighbors(traj.cells[0], grid, true)
        } else {
            belief.prior = prior_update(&belief.posterior, m);
            delta_location_set(&belief.prior, grid, params.delta)
        };
        let centers: Vec<Point2> = candidates.iter().map(|c| cell_point(*c)).collect();
        let k_prime = convex_hull(&centers);
        let k = sensitivity_hull(&k_prime);
        let (t, k_i) = isotropic_transform(&k, params.isotropic_samples, rng)?;
        let center = t.apply(cell_point(true_cell));
        let z_prime = knorm_sample(&k_i, center, params.epsilon, rng);
        let t_inv = t.inverse().ok_or(Error::DegenerateHull)?;
        let z = t_inv.apply(z_prime);
        let released = grid.snap_units(z.x, z.y);
        out.push(released);
        belief.posterior =
            posterior_update(&belief.prior, grid, cell_point(released), &k_i, &t, params.epsilon)?;
        prune_support(&mut belief.posterior);
    }
    Ok(Trajectory::from_parts(traj.id.clone(), out))
}

/// Drop negligible posterior mass so the tracked support stays compact.
fn prune_support(v: &mut [f64]) {
    let mut total = 0.0;
    for x in v.iter_mut() {
        if *x < 1e-12 {
            *x = 0.0;
        } else {
            total += *x;
        }
    }
    if total > 0.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
}

/// Release a whole dataset with independent per-trajectory child seeds.
pub fn protect(
    d: &Dataset<Raw>,
    m: &MarkovModel,
    params: &PimParams,
    master_seed: u64,
) -> Result<Dataset<Noisy>> {
    let mut out = Vec::with_capacity(d.len());
    for (i, traj) in d.trajectories.iter().enumerate() {
        let mut rng = child_rng(master_seed, &[0xD9, i as u64]);
        out.push(pim_release(traj, m, params, &mut rng)?);
    }
    Dataset::new(d.grid, out)
}

/// Mean per-point displacement between a raw dataset and its release, in cell
/// units. Diagnostic used by experiments and tests.
pub fn mean_displacement(original: &Dataset<Raw>, released: &Dataset<Noisy>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in original.trajectories.iter().zip(&released.trajectories) {
        for (&ca, &cb) in a.cells.iter().zip(&b.cells) {
            total += crate::geo::cell_distance(ca, cb);
            count += 1;
        }
    }
    total / count.max(1) as f64
}
