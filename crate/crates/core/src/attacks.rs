//! Attacks a malicious analyzer can mount on received copies before leaking
//! them: independent random flipping, correlation-aware flipping, majority and
//! probabilistic collusion, and re-fingerprinting. Every attack consumes
//! `Fingerprinted` trajectories, emits `Leaked` ones, and is pure given its
//! RNG; raw data never reaches this module.

use std::collections::BTreeMap;

use rand::RngExt;


use crate::corr::MarkovModel;
use crate::fingerprint::{dsfs_core, FingerprintConfig};
use crate::geo::{neighbors, Cell, Dataset, Fingerprinted, Grid, Leaked, Trajectory};
use crate::sample::{weighted_choice, weighted_index};
use crate::{child_rng, Error, Result, SimRng};

/// Seed-path tag for per-trajectory attack randomness.
const TAG_ATTACK: u64 = 0xA7;

/// Keeps the collusion-weight exponents finite when `p_e` sits exactly on 0
/// or 1; the limiting behavior (majority choice as p_e → 0, minority choice
/// as p_e → 1) is preserved.
const P_E_CLAMP: f64 = 1e-12;

/// Transition threshold the re-fingerprinting attacker runs the scheme with.
pub const ATTACKER_TAU: f64 = 0.005;

/// Balancing parameter the re-fingerprinting attacker runs the scheme with.
pub const ATTACKER_THETA: f64 = 0.5;

/// Knobs for the whole attack repertoire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Per-position flip probability of the random-flipping attack.
    pub p_r: f64,
    /// Flip probability once the correlation attack flags a position.
    pub p_c: f64,
    /// Transition threshold below which attackers suspect a fingerprint.
    pub tau_attack: f64,
    /// Fingerprint ratio colluders assume the owner used.
    pub p_e: f64,
    /// Number of colluding analyzers.
    pub c: usize,
    /// Fingerprint ratio of the re-fingerprinting attack.
    pub p_a: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { p_r: 0.8, p_c: 0.8, tau_attack: 0.005, p_e: 0.4, c: 3, p_a: 0.4 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let probs =
            [("p_r", self.p_r), ("p_c", self.p_c), ("p_e", self.p_e), ("p_a", self.p_a)];
        for (name, v) in probs {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !self.tau_attack.is_finite() || self.tau_attack < 0.0 {
            return Err(Error::Config(format!(
                "tau_attack must be a nonnegative real, got {}",
                self.tau_attack
            )));
        }
        if self.c < 2 {
            return Err(Error::Config(format!(
                "collusion needs at least 2 analyzers, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// Replace each position independently with probability `p_r` by a uniformly
/// random Moore neighbor of the current cell (self excluded).
///
/// Attacks accept received copies only; raw trajectories do not type-check:
///
/// ```compile_fail
/// use trajmark::geo::{Cell, Grid, Trajectory};
///
/// let g = Grid::unit(4);
/// let raw = Trajectory::new_raw("t", vec![Cell::new(0, 0)]);
/// let mut rng = trajmark::child_rng(1, &[2]);
/// trajmark::attacks::random_flip(&raw, &g, 0.5, &mut rng);
/// ```
pub fn random_flip(
    copy: &Trajectory<Fingerprinted>,
    grid: &Grid,
    p_r: f64,
    rng: &mut SimRng,
) -> Trajectory<Leaked> {
    let cells = copy
        .cells
        .iter()
        .map(|&c| {
            if rng.random::<f64>() < p_r {
                let hood = neighbors(c, grid, false);
                hood[rng.random_range(0..hood.len())]
            } else {
                c
            }
        })
        .collect();
    Trajectory::from_parts(copy.id.clone(), cells)
}

/// Scan the copy left to right over the evolving output: whenever the
/// transition from the previously released point to the current value falls
/// below `tau_attack`, the attacker suspects a fingerprint and, with
/// probability `p_c`, resamples the position from the τ-probable set of the
/// previous released point, proportional to transition probability. An empty
/// τ-probable set keeps the value.
pub fn correlation_flip(
    copy: &Trajectory<Fingerprinted>,
    m: &MarkovModel,
    tau_attack: f64,
    p_c: f64,
    rng: &mut SimRng,
) -> Trajectory<Leaked> {
    let mut out: Vec<Cell> = Vec::with_capacity(copy.len());
    for (j, &cur) in copy.cells.iter().enumerate() {
        if j == 0 {
            out.push(cur);
            continue;
        }
        let prev = out[j - 1];
        let mut released = cur;
        if m.transition(prev, cur) < tau_attack && rng.random::<f64>() < p_c {
            let probable = m.tau_probable_set(prev, tau_attack);
            if !probable.is_empty() {
                let pool: Vec<(Cell, f64)> =
                    probable.members.iter().map(|&g| (g, m.transition(prev, g))).collect();
                released = weighted_choice(rng, &pool);
            }
        }
        out.push(released);
    }
    Trajectory::from_parts(copy.id.clone(), out)
}

/// Per position, colluders report the most frequent value among their copies;
/// ties break uniformly at random among the tied cells.
///
/// # Panics
/// Panics on fewer than two copies.
pub fn majority_collusion(
    copies: &[Trajectory<Fingerprinted>],
    rng: &mut SimRng,
) -> Result<Trajectory<Leaked>> {
    let len = check_collusion_inputs(copies)?;
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        let counts = position_counts(copies, j);
        let best = counts.values().copied().max().unwrap_or(0);
        let tied: Vec<Cell> =
            counts.iter().filter(|(_, &n)| n == best).map(|(&c, _)| c).collect();
        out.push(if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] });
    }
    Ok(Trajectory::from_parts(copies[0].id.clone(), out))
}

/// Collusion that samples each position from the values the colluders
/// observed. A value seen `count` times out of `n` copies gets weight
/// `(1 − p_e)^count · (p_e / (|G| − 1))^(n − count) · P(value | previous)`
/// over the alphabet `G` of surviving values, computed in log-space. Values
/// whose transition probability from the previously released point falls
/// below `tau_attack` are dropped first (all dropped → the full alphabet is
/// restored), the first position skips both the filter and the transition
/// factor, and a post-filter singleton is emitted outright.
///
/// # Panics
/// Panics on fewer than two copies.
pub fn probabilistic_collusion(
    copies: &[Trajectory<Fingerprinted>],
    m: &MarkovModel,
    p_e: f64,
    tau_attack: f64,
    rng: &mut SimRng,
) -> Result<Trajectory<Leaked>> {
    let len = check_collusion_inputs(copies)?;
    let n = copies.len();
    let mut out: Vec<Cell> = Vec::with_capacity(len);
    for j in 0..len {
        let mut members: Vec<(Cell, usize)> = position_counts(copies, j).into_iter().collect();
        if let Some(&prev) = out.last() {
            let survivors: Vec<(Cell, usize)> = members
                .iter()
                .copied()
                .filter(|(g, _)| m.transition(prev, *g) >= tau_attack)
                .collect();
            if !survivors.is_empty() {
                members = survivors;
            }
        }
        if members.len() == 1 {
            out.push(members[0].0);
            continue;
        }
        let weights = collusion_weights(&members, n, p_e, out.last().map(|&prev| (m, prev)));
        out.push(members[weighted_index(rng, &weights)].0);
    }
    Ok(Trajectory::from_parts(copies[0].id.clone(), out))
}

/// Normalized probabilistic-collusion weights over the distinct observed
/// values `(cell, count)` at one position. `transition_from` is `None` at the
/// first position; if the transition factor zeroes every member (possible
/// after a filter restore), it is dropped and the count-only weights are
/// used instead.
pub(crate) fn collusion_weights(
    members: &[(Cell, usize)],
    n_colluders: usize,
    p_e: f64,
    transition_from: Option<(&MarkovModel, Cell)>,
) -> Vec<f64> {
    debug_assert!(members.len() >= 2, "singletons are emitted before weighting");
    let p_e = p_e.clamp(P_E_CLAMP, 1.0 - P_E_CLAMP);
    let keep = (1.0 - p_e).ln();
    let spread = (p_e / (members.len() as f64 - 1.0)).ln();
    let count_term =
        |count: usize| count as f64 * keep + (n_colluders - count) as f64 * spread;
    let mut log_w: Vec<f64> = members
        .iter()
        .map(|&(g, count)| {
            let trans = match transition_from {
                Some((m, prev)) => m.transition(prev, g).ln(),
                None => 0.0,
            };
            count_term(count) + trans
        })
        .collect();
    let mut max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        log_w = members.iter().map(|&(_, count)| count_term(count)).collect();
        max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let mut w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Re-fingerprint a received copy with the direction-sensitive scheme at
/// ratio `p_a`, hoping to overwrite the owner's marks with fresh ones.
///
/// # Panics
/// Panics unless `(p_a, tau, theta)` are valid fingerprinting parameters.
pub fn refingerprint(
    copy: &Trajectory<Fingerprinted>,
    m: &MarkovModel,
    p_a: f64,
    tau: f64,
    theta: f64,
    rng: &mut SimRng,
) -> Trajectory<Leaked> {
    let cfg =
        FingerprintConfig::new(p_a, tau, theta).expect("attacker parameters must be valid");
    let (cells, _) = dsfs_core(&copy.cells, m, &cfg, rng);
    Trajectory::from_parts(copy.id.clone(), cells)
}

/// The attack repertoire, for dataset-level drivers and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    RandomFlip,
    CorrelationFlip,
    MajorityCollusion,
    ProbabilisticCollusion,
    Refingerprint,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::RandomFlip,
        AttackKind::CorrelationFlip,
        AttackKind::MajorityCollusion,
        AttackKind::ProbabilisticCollusion,
        AttackKind::Refingerprint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::RandomFlip => "random_flip",
            AttackKind::CorrelationFlip => "correlation_flip",
            AttackKind::MajorityCollusion => "majority_collusion",
            AttackKind::ProbabilisticCollusion => "probabilistic_collusion",
            AttackKind::Refingerprint => "refingerprint",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown attack {name:?}")))
    }

    /// Collusion attacks consume several copies; the rest exactly one.
    pub fn is_collusion(&self) -> bool {
        matches!(self, AttackKind::MajorityCollusion | AttackKind::ProbabilisticCollusion)
    }

    /// True when the attack consults the public Markov model.
    pub fn needs_model(&self) -> bool {
        !matches!(self, AttackKind::RandomFlip | AttackKind::MajorityCollusion)
    }
}

/// Attack whole datasets: the i-th trajectories of all `copies` are attacked
/// together (collusion kinds) or the single given copy is attacked alone,
/// with one child RNG per trajectory. `model` may be `None` only for kinds
/// that never consult it.
pub fn apply_attack(
    copies: &[&Dataset<Fingerprinted>],
    model: Option<&MarkovModel>,
    kind: AttackKind,
    cfg: &AttackConfig,
    master_seed: u64,
) -> Result<Dataset<Leaked>> {
    cfg.validate()?;
    if kind.is_collusion() {
        if copies.len() < 2 {
            return Err(Error::Config(format!(
                "{} needs at least 2 copies, got {}",
                kind.name(),
                copies.len()
            )));
        }
    } else if copies.len() != 1 {
        return Err(Error::Config(format!(
            "{} attacks a single copy, got {}",
            kind.name(),
            copies.len()
        )));
    }
    if kind.needs_model() && model.is_none() {
        return Err(Error::Config(format!("{} attack needs the public model", kind.name())));
    }
    let first = copies[0];
    if let Some(m) = model {
        if *m.grid() != first.grid {
            return Err(Error::Data("model grid differs from the copies' grid".into()));
        }
    }
    for d in &copies[1..] {
        if d.len() != first.len() {
            return Err(Error::Data(format!(
                "copies hold {} and {} trajectories",
                first.len(),
                d.len()
            )));
        }
        if d.grid != first.grid {
            return Err(Error::Data("colluding copies live on different grids".into()));
        }
    }
    let mut out = Vec::with_capacity(first.len());
    for t in 0..first.len() {
        let mut rng = child_rng(master_seed, &[TAG_ATTACK, t as u64]);
        let group: Vec<Trajectory<Fingerprinted>> =
            copies.iter().map(|d| d.trajectories[t].clone()).collect();
        for g in &group[1..] {
            if g.id != group[0].id {
                return Err(Error::Data(format!(
                    "copies disagree on trajectory ids at index {t}: {} vs {}",
                    group[0].id, g.id
                )));
            }
        }
        let leaked = match kind {
            AttackKind::RandomFlip => random_flip(&group[0], &first.grid, cfg.p_r, &mut rng),
            AttackKind::CorrelationFlip => correlation_flip(
                &group[0],
                model.expect("checked above"),
                cfg.tau_attack,
                cfg.p_c,
                &mut rng,
            ),
            AttackKind::MajorityCollusion => majority_collusion(&group, &mut rng)?,
            AttackKind::ProbabilisticCollusion => probabilistic_collusion(
                &group,
                model.expect("checked above"),
                cfg.p_e,
                cfg.tau_attack,
                &mut rng,
            )?,
            AttackKind::Refingerprint => refingerprint(
                &group[0],
                model.expect("checked above"),
                cfg.p_a,
                ATTACKER_TAU,
                ATTACKER_THETA,
                &mut rng,
            ),
        };
        out.push(leaked);
    }
    Dataset::new(first.grid, out)
}

fn check_collusion_inputs(copies: &[Trajectory<Fingerprinted>]) -> Result<usize> {
    assert!(copies.len() >= 2, "collusion needs at least two copies");
    let len = copies[0].len();
    for c in copies {
        if c.len() != len {
            return Err(Error::LengthMismatch { left: len, right: c.len() });
        }
    }
    Ok(len)
}

fn position_counts(copies: &[Trajectory<Fingerprinted>], j: usize) -> BTreeMap<Cell, usize> {
    let mut counts = BTreeMap::new();
    for c in copies {
        *counts.entry(c.cells[j]).or_insert(0) += 1;
    }
    counts
}
