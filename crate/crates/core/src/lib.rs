//! Simulator for fingerprinting gridded location trajectories, attacking the
//! fingerprints, detecting leakers, and measuring the utility cost.
//!
//! The pipeline stages map onto the module tree:
//!
//! 1. [`geo`] — coordinates, uniform grid discretization, trajectories.
//! 2. [`corr`] — the public 2-gram Markov mobility model and τ-sets.
//! 3. [`dp`] — per-point ε-differentially-private release (belief tracking,
//!    δ-location set, sensitivity hull, isotropic k-norm noise).
//! 4. [`postprocess`] — correlation repair of noisy trajectories.
//! 5. [`fingerprint`] — direction-sensitive fingerprinting, a
//!    probabilistic baseline, and Boneh-Shaw / Tardos code embedding.
//! 6. [`attacks`] — flipping, collusion, and re-fingerprinting attacks.
//! 7. [`detect`] — similarity detection and majority-vote aggregation.
//! 8. [`utility`] — count-query, ranking, histogram, and DTW metrics.
//! 9. [`harness`] — synthetic worlds, seeded experiments, timing.
//!
//! Trajectory provenance is tracked in the type system (see [`geo::Role`]):
//! once data passes the private-release boundary, no downstream operation can
//! receive raw input again.

pub mod attacks;
pub mod corr;
pub mod detect;
pub mod dp;
pub mod fingerprint;
pub mod geo;
pub mod harness;
pub mod io;
pub mod postprocess;
mod sample;
pub mod utility;

use rand::SeedableRng;

/// Crate-wide error type. `exit_code` groups variants into the CLI's
/// config (2) / data (3) classes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the grid bounding box")]
    OutOfBounds { x: f64, y: f64 },
    #[error("need at least two strictly increasing timestamps")]
    DegenerateInput,
    #[error("empty corpus: cannot build a correlation model")]
    EmptyCorpus,
    #[error("hull area below tolerance; cannot compute isotropic position")]
    DegenerateHull,
    #[error("all posterior likelihoods vanished (malformed hull)")]
    AllZeroLikelihood,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("unknown trajectory id: {0}")]
    UnknownTrajectory(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty query set")]
    EmptyQuerySet,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code class: 2 for configuration errors, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Deterministic RNG used everywhere randomness is needed.
pub type SimRng = rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a path of indices.
///
/// Seeds are hierarchical (master → trial → analyzer → …) so that adding
/// sweep points or analyzers never perturbs streams already drawn elsewhere.
pub fn child_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = master;
    let mut acc = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(GOLDEN_GAMMA) ^ acc;
        acc = splitmix64(&mut state);
    }
    acc
}

/// Child RNG at a seed path; see [`child_seed`].
pub fn child_rng(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(child_seed(master, path))
}
