//! Fingerprinting schemes: direction-sensitive sampling over τ-sets, a
//! probabilistic filtering baseline, and Boneh-Shaw / Tardos binary codes
//! embedded through a secret mark map.
//!
//! Every scheme is deterministic given its seed. The direction-sensitive
//! scheme reads only the input trajectory and the public model, never the
//! pre-release data; the type system enforces which pipeline stages it may
//! receive (raw or post-processed, not noisy or leaked).

use rand::RngExt;

use crate::corr::MarkovModel;
use crate::geo::{neighbors, Cell, Dataset, Fingerprinted, Noisy, PostProcessed, Raw, Role,
                 Trajectory};
use crate::postprocess::closest_member;
use crate::sample::weighted_choice;
use crate::{child_rng, child_seed, Error, Result, SimRng};

/// Seed-path tags keeping fingerprinting streams disjoint from other stages.
const TAG_COPY: u64 = 0xF5;
const TAG_MARK: u64 = 0x3A;
const TAG_CODE: u64 = 0x7C;

/// Roles that may enter the direction-sensitive and baseline fingerprinting
/// schemes: raw data, or post-processed private releases. Noisy and leaked
/// trajectories are rejected at compile time.
pub trait FingerprintInput: Role {}
impl FingerprintInput for Raw {}
impl FingerprintInput for PostProcessed {}

/// Knobs of the probabilistic fingerprinting schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerprintConfig {
    /// Fingerprinting ratio: target fraction of changed positions, in (0,1).
    pub p: f64,
    /// Transition-probability threshold for the τ-sets.
    pub tau: f64,
    /// Balancing factor steering the realized ratio back toward `p`, in [0,1].
    pub theta: f64,
}

impl FingerprintConfig {
    pub fn new(p: f64, tau: f64, theta: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("p must be in (0,1), got {p}")));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config(format!("theta must be in [0,1], got {theta}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be >= 0, got {tau}")));
        }
        Ok(FingerprintConfig { p, tau, theta })
    }
}

impl Default for FingerprintConfig {
    /// Experiment defaults: p = 0.4, τ = 0.005, θ = 0.5.
    fn default() -> Self {
        FingerprintConfig { p: 0.4, tau: 0.005, theta: 0.5 }
    }
}

/// Per-run diagnostics of the direction-sensitive scheme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DsfsReport {
    /// Positions where the output differs from the temporary original.
    pub fp_count: usize,
    /// How often each of the four sampling cases fired (positions ≥ 2).
    pub case_counts: [usize; 4],
    pub positions: usize,
}

/// Direction-sensitive fingerprinting of one trajectory.
///
/// Position 1 keeps the original with probability 1 − p and otherwise samples
/// a neighbor proportional to emission counts. Every later position works on
/// the τ-closer and τ-probable sets of the previously released cell:
///
/// 1. original in the τ-closer set with company: keep w.p. 1 − p_current,
///    else sample the rest of the set proportional to transitions;
/// 2. original τ-probable but the closer set is trivial: sample over the
///    τ-probable set the same way;
/// 3. original not τ-probable and the set has at most one member: emit the
///    original unchanged;
/// 4. original not τ-probable, set nontrivial: substitute the set member
///    nearest the original (unless that member is the previous release, in
///    which case the original passes through) and sample as in case 1.
///
/// Every ⌈1/p⌉ positions the realized fingerprint count is compared against
/// p·j and p_current is set to p(1−θ), p(1+θ), or p.
///
/// ```compile_fail
/// use trajmark::corr::MarkovModel;
/// use trajmark::fingerprint::{dsfs_fingerprint, FingerprintConfig};
/// use trajmark::geo::{Noisy, Trajectory};
/// use trajmark::child_rng;
///
/// // Noisy trajectories must be post-processed before fingerprinting.
/// fn f(t: &Trajectory<Noisy>, m: &MarkovModel) {
///     let mut rng = child_rng(0, &[]);
///     dsfs_fingerprint(t, m, &FingerprintConfig::default(), &mut rng);
/// }
/// ```
pub fn dsfs_fingerprint<R: FingerprintInput>(
    x_star: &Trajectory<R>,
    m: &MarkovModel,
    cfg: &FingerprintConfig,
    rng: &mut SimRng,
) -> Trajectory<Fingerprinted> {
    dsfs_fingerprint_report(x_star, m, cfg, rng).0
}

/// As [`dsfs_fingerprint`], also returning sampling diagnostics.
pub fn dsfs_fingerprint_report<R: FingerprintInput>(
    x_star: &Trajectory<R>,
    m: &MarkovModel,
    cfg: &FingerprintConfig,
    rng: &mut SimRng,
) -> (Trajectory<Fingerprinted>, DsfsReport) {
    let (cells, report) = dsfs_core(&x_star.cells, m, cfg, rng);
    (Trajectory::from_parts(x_star.id.clone(), cells), report)
}

/// Role-free core of the direction-sensitive scheme. The typed wrappers
/// restrict which pipeline stages may call it; the re-fingerprinting attack
/// reuses it on received copies.
pub(crate) fn dsfs_core(
    input: &[Cell],
    m: &MarkovModel,
    cfg: &FingerprintConfig,
    rng: &mut SimRng,
) -> (Vec<Cell>, DsfsReport) {
    assert!(!input.is_empty(), "fingerprinting needs a nonempty trajectory");
    let mut report = DsfsReport { positions: input.len(), ..DsfsReport::default() };
    let mut p_current = cfg.p;
    let check_every = (1.0 / cfg.p).ceil() as usize;
    let mut out: Vec<Cell> = Vec::with_capacity(input.len());

    let first = sample_first_position(input[0], m, p_current, rng);
    if first != input[0] {
        report.fp_count += 1;
    }
    out.push(first);

    for j in 2..=input.len() {
        let original = input[j - 1];
        let prev = out[j - 2];
        let s_p = m.tau_probable_set(prev, cfg.tau);
        let s_c = m.tau_closer_set(prev, original, cfg.tau);
        // Membership in the probable set implies membership in the closer set
        // (the original is at distance zero from itself), so the four cases
        // below are exhaustive and mutually exclusive.
        debug_assert_eq!(s_p.contains(original), s_c.contains(original));
        let (case, temp, released) = if s_c.contains(original) && s_c.len() > 1 {
            (0, original, keep_or_sample(original, &s_c.members, prev, m, p_current, rng))
        } else if s_p.contains(original) {
            (1, original, keep_or_sample(original, &s_p.members, prev, m, p_current, rng))
        } else if s_p.len() <= 1 {
            (2, original, original)
        } else {
            let x_closest = closest_member(&s_p.members, original, prev, m);
            if x_closest == prev {
                (3, original, original)
            } else {
                (3, x_closest, keep_or_sample(x_closest, &s_p.members, prev, m, p_current, rng))
            }
        };
        report.case_counts[case] += 1;
        if released != temp {
            report.fp_count += 1;
        }
        out.push(released);

        if j % check_every == 0 {
            let expected = cfg.p * j as f64;
            let count = report.fp_count as f64;
            p_current = if count > expected {
                cfg.p * (1.0 - cfg.theta)
            } else if count < expected {
                // θ near 1 can push the rate above 1; keep it a probability.
                (cfg.p * (1.0 + cfg.theta)).min(1.0)
            } else {
                cfg.p
            };
        }
    }
    (out, report)
}

/// Keep `temp` with probability 1 − p_current, else sample the other members
/// proportional to their transition probability from `prev`.
fn keep_or_sample(
    temp: Cell,
    members: &[Cell],
    prev: Cell,
    m: &MarkovModel,
    p_current: f64,
    rng: &mut SimRng,
) -> Cell {
    if rng.random::<f64>() < 1.0 - p_current {
        return temp;
    }
    let pool: Vec<(Cell, f64)> = members
        .iter()
        .filter(|c| **c != temp)
        .map(|c| (*c, m.transition(prev, *c)))
        .collect();
    if pool.is_empty() || pool.iter().all(|(_, w)| *w <= 0.0) {
        return temp;
    }
    weighted_choice(rng, &pool)
}

/// Position-1 rule shared by both probabilistic schemes: keep the original
/// with probability 1 − p, else sample a neighbor proportional to emission.
fn sample_first_position(original: Cell, m: &MarkovModel, p: f64, rng: &mut SimRng) -> Cell {
    if rng.random::<f64>() < 1.0 - p {
        return original;
    }
    let pool: Vec<(Cell, f64)> = m
        .emission_distribution(original)
        .into_iter()
        .filter(|(c, _)| *c != original)
        .collect();
    if pool.is_empty() {
        return original;
    }
    if pool.iter().all(|(_, w)| *w <= 0.0) {
        let uniform: Vec<(Cell, f64)> = pool.iter().map(|(c, _)| (*c, 1.0)).collect();
        return weighted_choice(rng, &uniform);
    }
    weighted_choice(rng, &pool)
}

/// Probabilistic filtering baseline: at each position restrict the row of the
/// previous release to transitions with probability ≥ σ; keep the original
/// with probability 1 − p if it survived, otherwise sample the survivors
/// proportionally — regardless of direction, which is what forces deviations.
pub fn pfs_fingerprint<R: FingerprintInput>(
    x_star: &Trajectory<R>,
    m: &MarkovModel,
    p: f64,
    sigma: f64,
    rng: &mut SimRng,
) -> Trajectory<Fingerprinted> {
    assert!(!x_star.is_empty(), "fingerprinting needs a nonempty trajectory");
    let mut out: Vec<Cell> = Vec::with_capacity(x_star.len());
    out.push(sample_first_position(x_star.cells[0], m, p, rng));
    for j in 2..=x_star.len() {
        let original = x_star.cells[j - 1];
        let prev = out[j - 2];
        let survivors: Vec<(Cell, f64)> =
            m.row(prev).iter().filter(|(_, w)| *w >= sigma).copied().collect();
        let released = if survivors.is_empty() {
            original
        } else if survivors.iter().any(|(c, _)| *c == original) {
            if rng.random::<f64>() < 1.0 - p {
                original
            } else {
                let rest: Vec<(Cell, f64)> =
                    survivors.iter().filter(|(c, _)| *c != original).copied().collect();
                if rest.is_empty() {
                    original
                } else {
                    weighted_choice(rng, &rest)
                }
            }
        } else {
            weighted_choice(rng, &survivors)
        };
        out.push(released);
    }
    Trajectory::from_parts(x_star.id.clone(), out)
}

// ------------------------------------------------------------ binary codes ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeKind {
    BonehShaw,
    Tardos,
}

/// Construction parameters, populated as applicable to the kind.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CodeParams {
    /// Tolerated collusion size c (Tardos).
    pub c: Option<usize>,
    /// Error probability ω (Tardos).
    pub omega: Option<f64>,
    /// k = ⌈log₂(1/ω)⌉ (Tardos).
    pub k: Option<usize>,
    /// Block length d (Boneh-Shaw).
    pub d: Option<usize>,
}

/// A binary fingerprinting codebook: one codeword per user (1-indexed in all
/// accusations), plus the per-position bias vector for Tardos codes.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCodebook {
    pub kind: CodeKind,
    codewords: Vec<Vec<u8>>,
    bias: Option<Vec<f64>>,
    pub params: CodeParams,
}

impl BinaryCodebook {
    pub fn n_users(&self) -> usize {
        self.codewords.len()
    }

    pub fn code_len(&self) -> usize {
        self.codewords.first().map_or(0, Vec::len)
    }

    /// Codeword of `user` (1-indexed).
    pub fn word(&self, user: usize) -> &[u8] {
        &self.codewords[user - 1]
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    /// Reassemble a codebook from serialized parts.
    pub fn from_parts(
        kind: CodeKind,
        codewords: Vec<Vec<u8>>,
        bias: Option<Vec<f64>>,
        params: CodeParams,
    ) -> Result<Self> {
        let m = codewords.first().map_or(0, Vec::len);
        if codewords.is_empty() || codewords.iter().any(|w| w.len() != m) {
            return Err(Error::Data("codebook rows must be nonempty and equal-length".into()));
        }
        if let Some(b) = &bias {
            if b.len() != m {
                return Err(Error::LengthMismatch { left: b.len(), right: m });
            }
        }
        Ok(BinaryCodebook { kind, codewords, bias, params })
    }

    /// First `m` columns of the codebook (trajectory-length codes).
    pub fn truncated(&self, m: usize) -> BinaryCodebook {
        assert!(m <= self.code_len(), "cannot extend a codebook by truncation");
        BinaryCodebook {
            kind: self.kind,
            codewords: self.codewords.iter().map(|w| w[..m].to_vec()).collect(),
            bias: self.bias.as_ref().map(|b| b[..m].to_vec()),
            params: self.params,
        }
    }
}

/// Γ(n, d) codebook: user i's word is (i−1)·d zeros followed by (n−i)·d
/// ones, for a code length of (n−1)·d.
pub fn bs_generate(n_users: usize, d: usize) -> BinaryCodebook {
    assert!(n_users >= 2, "need at least two users");
    assert!(d >= 1, "block length must be positive");
    let len = (n_users - 1) * d;
    let codewords = (1..=n_users)
        .map(|i| {
            let zeros = (i - 1) * d;
            let mut w = vec![0u8; len];
            for bit in &mut w[zeros..] {
                *bit = 1;
            }
            w
        })
        .collect();
    BinaryCodebook {
        kind: CodeKind::BonehShaw,
        codewords,
        bias: None,
        params: CodeParams { d: Some(d), ..CodeParams::default() },
    }
}

/// Tardos codebook: m = 100c²k positions with k = ⌈log₂(1/ω)⌉; position
/// biases p_i = sin²(r_i) for r_i uniform in [t′, π/2 − t′] where
/// sin²(t′) = t = 1/(300c); bits are independent Bernoulli(p_i).
pub fn tardos_generate(
    n_users: usize,
    c: usize,
    omega: f64,
    rng: &mut SimRng,
) -> BinaryCodebook {
    assert!(n_users >= 2, "need at least two users");
    assert!(c >= 2, "collusion size must be at least 2");
    assert!(omega > 0.0 && omega < 1.0, "omega must be in (0,1)");
    let k = (1.0 / omega).log2().ceil() as usize;
    let m = 100 * c * c * k;
    let t = 1.0 / (300.0 * c as f64);
    let t_prime = t.sqrt().asin();
    let lo = t_prime;
    let hi = std::f64::consts::FRAC_PI_2 - t_prime;
    let bias: Vec<f64> = (0..m).map(|_| rng.random_range(lo..hi).sin().powi(2)).collect();
    let codewords = (0..n_users)
        .map(|_| bias.iter().map(|p| u8::from(rng.random::<f64>() < *p)).collect())
        .collect();
    BinaryCodebook {
        kind: CodeKind::Tardos,
        codewords,
        bias: Some(bias),
        params: CodeParams { c: Some(c), omega: Some(omega), k: Some(k), ..CodeParams::default() },
    }
}

/// Secret per-position marked cells, drawn once per dataset: each position
/// gets one neighbor of its original cell, shared by all analyzers so equal
/// bits always produce equal values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkMap {
    rows: Vec<Vec<Cell>>,
}

impl MarkMap {
    pub fn row(&self, traj_index: usize) -> &[Cell] {
        &self.rows[traj_index]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Build the dataset-wide mark map with a secret seed.
pub fn build_mark_map<R: Role>(d: &Dataset<R>, secret_seed: u64) -> MarkMap {
    let mut rng = child_rng(secret_seed, &[TAG_MARK]);
    let rows = d
        .trajectories
        .iter()
        .map(|traj| {
            traj.cells
                .iter()
                .map(|&c| {
                    let hood = neighbors(c, &d.grid, false);
                    hood[rng.random_range(0..hood.len())]
                })
                .collect()
        })
        .collect();
    MarkMap { rows }
}

/// Embed codeword bits into one trajectory: bit 1 selects the marked cell,
/// bit 0 keeps the original. With `truncate` set the codeword is cut or
/// zero-padded to the trajectory length; otherwise lengths must match.
pub fn code_embed<R: Role>(
    x_star: &Trajectory<R>,
    codeword_bits: &[u8],
    mark_row: &[Cell],
    truncate: bool,
) -> Result<Trajectory<Fingerprinted>> {
    assert_eq!(mark_row.len(), x_star.len(), "mark map must cover the trajectory");
    if !truncate && codeword_bits.len() != x_star.len() {
        return Err(Error::LengthMismatch {
            left: codeword_bits.len(),
            right: x_star.len(),
        });
    }
    let cells = x_star
        .cells
        .iter()
        .enumerate()
        .map(|(j, &orig)| match codeword_bits.get(j) {
            Some(1) => mark_row[j],
            _ => orig,
        })
        .collect();
    Ok(Trajectory::from_parts(x_star.id.clone(), cells))
}

/// Read embedded bits back from a (possibly attacked) trajectory: a position
/// equal to its marked cell reads 1, anything else reads 0.
pub fn read_bits(cells: &[Cell], mark_row: &[Cell]) -> Vec<u8> {
    assert_eq!(cells.len(), mark_row.len());
    cells.iter().zip(mark_row).map(|(c, m)| u8::from(c == m)).collect()
}

/// Accuse a user from leaked Boneh-Shaw bits: the owner of the first block
/// with strictly more ones than zeros, or user n if no block has one.
pub fn bs_detect(leaked_bits: &[u8], codebook: &BinaryCodebook) -> usize {
    assert_eq!(codebook.kind, CodeKind::BonehShaw);
    assert_eq!(leaked_bits.len(), codebook.code_len(), "bit length must match the code");
    let d = codebook.params.d.expect("Boneh-Shaw params carry d");
    for (block, bits) in leaked_bits.chunks(d).enumerate() {
        let ones = bits.iter().filter(|b| **b == 1).count();
        if 2 * ones > bits.len() {
            return block + 1;
        }
    }
    codebook.n_users()
}

/// Tardos scoring outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TardosOutcome {
    /// Correlation score per user, 1-indexed by position in the vector + 1.
    pub scores: Vec<f64>,
    /// User with the maximal score; ties resolve to the lowest id.
    pub accused_user: usize,
    pub tie: bool,
    /// The classical accusation threshold 20ck, reported for reference only.
    pub threshold: f64,
}

/// Score every user against leaked bits: score_j = Σ_i y_i · U_ji with
/// U_ji = √((1−p_i)/p_i) for a one-bit and −√(p_i/(1−p_i)) for a zero-bit.
pub fn tardos_score(leaked_bits: &[u8], codebook: &BinaryCodebook) -> TardosOutcome {
    assert_eq!(codebook.kind, CodeKind::Tardos);
    assert_eq!(leaked_bits.len(), codebook.code_len(), "bit length must match the code");
    let bias = codebook.bias().expect("Tardos codebooks carry bias");
    let mut scores = vec![0.0f64; codebook.n_users()];
    for (i, (&y, &p)) in leaked_bits.iter().zip(bias).enumerate() {
        if y == 0 {
            continue;
        }
        let plus = ((1.0 - p) / p).sqrt();
        let minus = -(p / (1.0 - p)).sqrt();
        for (j, score) in scores.iter_mut().enumerate() {
            *score += if codebook.codewords[j][i] == 1 { plus } else { minus };
        }
    }
    let mut accused = 0usize;
    let mut tie = false;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[accused] {
            accused = j;
            tie = false;
        } else if s == scores[accused] {
            tie = true;
        }
    }
    let threshold = match (codebook.params.c, codebook.params.k) {
        (Some(c), Some(k)) => 20.0 * c as f64 * k as f64,
        _ => f64::NAN,
    };
    TardosOutcome { scores, accused_user: accused + 1, tie, threshold }
}

// -------------------------------------------------------------- distribute ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Direction-sensitive fingerprinting.
    Dsfs,
    BonehShaw,
    Tardos,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Dsfs => "dsfs",
            Scheme::BonehShaw => "boneh-shaw",
            Scheme::Tardos => "tardos",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "dsfs" => Ok(Scheme::Dsfs),
            "boneh-shaw" => Ok(Scheme::BonehShaw),
            "tardos" => Ok(Scheme::Tardos),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?} (expected dsfs, boneh-shaw, or tardos)"
            ))),
        }
    }
}

/// Everything `distribute` needs across schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributeConfig {
    pub fingerprint: FingerprintConfig,
    /// Tolerated collusion size c (Tardos generation).
    pub collusion_size: usize,
    /// Error probability ω (Tardos generation).
    pub error_bound: f64,
}

impl Default for DistributeConfig {
    fn default() -> Self {
        DistributeConfig {
            fingerprint: FingerprintConfig::default(),
            collusion_size: 3,
            error_bound: 0.01,
        }
    }
}

/// One analyzer's fingerprinted dataset.
#[derive(Debug, Clone)]
pub struct CopyRecord {
    /// Analyzer index in [0, n).
    pub analyzer_id: usize,
    /// The per-analyzer child seed the copy was generated from.
    pub seed: u64,
    pub copies: Dataset<Fingerprinted>,
}

/// Detection-side secrets recomputed from the master seed: the mark map and
/// codebook for code-based schemes (empty for the direction-sensitive one).
#[derive(Debug, Clone)]
pub struct EmbeddingSecrets {
    pub mark_map: Option<MarkMap>,
    pub codebook: Option<BinaryCodebook>,
}

/// Generate one fingerprinted copy of the dataset per analyzer.
///
/// Direction-sensitive copies draw per-(analyzer, trajectory) child seeds;
/// code-based copies embed per-analyzer codewords through a shared mark map.
/// The whole fan-out is deterministic given `master_seed`.
pub fn distribute<R: FingerprintInput>(
    d: &Dataset<R>,
    n_analyzers: usize,
    scheme: Scheme,
    cfg: &DistributeConfig,
    master_seed: u64,
) -> Result<Vec<CopyRecord>> {
    if scheme == Scheme::Dsfs {
        distribute_dsfs(d, n_analyzers, cfg, master_seed)
    } else {
        distribute_codes(d, n_analyzers, scheme, cfg, master_seed)
    }
}

/// Code-based distribution over noisy datasets (no post-processing step).
/// The direction-sensitive scheme cannot run here: it requires raw or
/// post-processed input by type.
pub fn distribute_noisy(
    d: &Dataset<Noisy>,
    n_analyzers: usize,
    scheme: Scheme,
    cfg: &DistributeConfig,
    master_seed: u64,
) -> Result<Vec<CopyRecord>> {
    if scheme == Scheme::Dsfs {
        return Err(Error::Config(
            "direction-sensitive fingerprinting requires raw or post-processed input".into(),
        ));
    }
    distribute_codes(d, n_analyzers, scheme, cfg, master_seed)
}

/// Recompute the secret detection-side state for a distribution.
pub fn embedding_secrets<R: Role>(
    d: &Dataset<R>,
    n_analyzers: usize,
    scheme: Scheme,
    cfg: &DistributeConfig,
    master_seed: u64,
) -> Result<EmbeddingSecrets> {
    match scheme {
        Scheme::Dsfs => Ok(EmbeddingSecrets { mark_map: None, codebook: None }),
        _ => {
            let codebook = build_codebook(d, n_analyzers, scheme, cfg, master_seed)?;
            Ok(EmbeddingSecrets {
                mark_map: Some(build_mark_map(d, child_seed(master_seed, &[TAG_MARK]))),
                codebook: Some(codebook),
            })
        }
    }
}

fn distribute_dsfs<R: FingerprintInput>(
    d: &Dataset<R>,
    n_analyzers: usize,
    cfg: &DistributeConfig,
    master_seed: u64,
) -> Result<Vec<CopyRecord>> {
    check_analyzers(n_analyzers)?;
    let m = MarkovModel::build(d)?;
    let mut out = Vec::with_capacity(n_analyzers);
    for a in 0..n_analyzers {
        let copies = dsfs_copy(d, &m, &cfg.fingerprint, master_seed, a)?;
        out.push(CopyRecord {
            analyzer_id: a,
            seed: child_seed(master_seed, &[TAG_COPY, a as u64]),
            copies,
        });
    }
    Ok(out)
}

/// One analyzer's direction-sensitive copy against an explicit public model.
pub fn dsfs_copy<R: FingerprintInput>(
    d: &Dataset<R>,
    m: &MarkovModel,
    cfg: &FingerprintConfig,
    master_seed: u64,
    analyzer_id: usize,
) -> Result<Dataset<Fingerprinted>> {
    let trajectories = d
        .trajectories
        .iter()
        .enumerate()
        .map(|(t, traj)| {
            let mut rng = child_rng(master_seed, &[TAG_COPY, analyzer_id as u64, t as u64]);
            dsfs_fingerprint(traj, m, cfg, &mut rng)
        })
        .collect();
    Dataset::new(d.grid, trajectories)
}

fn distribute_codes<R: Role>(
    d: &Dataset<R>,
    n_analyzers: usize,
    scheme: Scheme,
    cfg: &DistributeConfig,
    master_seed: u64,
) -> Result<Vec<CopyRecord>> {
    check_analyzers(n_analyzers)?;
    let codebook = build_codebook(d, n_analyzers, scheme, cfg, master_seed)?;
    let marks = build_mark_map(d, child_seed(master_seed, &[TAG_MARK]));
    let mut out = Vec::with_capacity(n_analyzers);
    for a in 0..n_analyzers {
        let word = codebook.word(a + 1);
        let trajectories = d
            .trajectories
            .iter()
            .enumerate()
            .map(|(t, traj)| code_embed(traj, word, marks.row(t), true))
            .collect::<Result<Vec<_>>>()?;
        out.push(CopyRecord {
            analyzer_id: a,
            seed: child_seed(master_seed, &[TAG_COPY, a as u64]),
            copies: Dataset::new(d.grid, trajectories)?,
        });
    }
    Ok(out)
}

/// Experiment-scale codebook for a dataset: Boneh-Shaw uses n_analyzers + 1
/// users and block length d = max(1, ⌊min_len / n_analyzers⌋) so that the
/// code fits the shortest trajectory; Tardos codes are generated at full
/// length and truncated to the shortest trajectory.
fn build_codebook<R: Role>(
    d: &Dataset<R>,
    n_analyzers: usize,
    scheme: Scheme,
    cfg: &DistributeConfig,
    master_seed: u64,
) -> Result<BinaryCodebook> {
    let min_len = d
        .trajectories
        .iter()
        .map(Trajectory::len)
        .min()
        .ok_or(Error::EmptyDataset)?;
    match scheme {
        Scheme::Dsfs => Err(Error::Config("no codebook for the direction-sensitive scheme".into())),
        Scheme::BonehShaw => {
            let block = (min_len / n_analyzers).max(1);
            Ok(bs_generate(n_analyzers + 1, block))
        }
        Scheme::Tardos => {
            let mut rng = child_rng(master_seed, &[TAG_CODE]);
            let full =
                tardos_generate(n_analyzers, cfg.collusion_size, cfg.error_bound, &mut rng);
            Ok(full.truncated(full.code_len().min(min_len)))
        }
    }
}

fn check_analyzers(n_analyzers: usize) -> Result<()> {
    if n_analyzers < 2 {
        return Err(Error::Config(format!(
            "need at least two analyzers, got {n_analyzers}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Grid;
    use std::collections::HashMap;

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

    fn correlated_walk(m: &MarkovModel, len: usize, seed: u64) -> Trajectory<Raw> {
        let mut rng = child_rng(seed, &[99]);
        let mut cells = vec![Cell::new(m.grid().n() / 2, m.grid().n() / 2)];
        for _ in 1..len {
            cells.push(m.sample_step(*cells.last().unwrap(), &mut rng));
        }
        Trajectory::new_raw("w", cells)
    }

    #[test]
    fn dsfs_keeps_everything_at_vanishing_p() {
        let m = drift_model(12);
        let traj = correlated_walk(&m, 1000, 1);
        let cfg = FingerprintConfig::new(1e-9, 0.005, 0.5).unwrap();
        let mut rng = child_rng(2, &[]);
        let out = dsfs_fingerprint(&traj, &m, &cfg, &mut rng);
        let same = out.cells.iter().zip(&traj.cells).filter(|(a, b)| a == b).count();
        assert!(same as f64 / 1000.0 >= 0.999, "kept {same}/1000");
    }

    #[test]
    fn dsfs_fp_fraction_tracks_p() {
        let m = drift_model(12);
        let cfg = FingerprintConfig::default();
        let mut fp_total = 0usize;
        let mut positions = 0usize;
        for copy in 0..500u64 {
            let traj = correlated_walk(&m, 60, 7);
            let mut rng = child_rng(100 + copy, &[]);
            let (_, report) = dsfs_fingerprint_report(&traj, &m, &cfg, &mut rng);
            fp_total += report.fp_count;
            positions += report.positions;
        }
        let frac = fp_total as f64 / positions as f64;
        let lo = cfg.p * (1.0 - cfg.theta) * 0.85;
        let hi = cfg.p * (1.0 + cfg.theta) * 1.15;
        assert!(frac > lo && frac < hi, "fp fraction {frac} outside [{lo}, {hi}]");
    }

    #[test]
    fn dsfs_balancing_regulates_long_runs() {
        let m = drift_model(12);
        let cfg = FingerprintConfig::default();
        let traj = correlated_walk(&m, 10_000, 8);
        let mut rng = child_rng(9, &[]);
        let (_, report) = dsfs_fingerprint_report(&traj, &m, &cfg, &mut rng);
        let frac = report.fp_count as f64 / report.positions as f64;
        let lo = cfg.p * (1.0 - cfg.theta) * 0.85;
        let hi = cfg.p * (1.0 + cfg.theta) * 1.15;
        assert!(frac > lo && frac < hi, "fp fraction {frac} outside [{lo}, {hi}]");
    }

    #[test]
    fn dsfs_copies_differ_across_seeds() {
        let m = drift_model(12);
        let traj = correlated_walk(&m, 100, 10);
        let cfg = FingerprintConfig::default();
        let a = dsfs_fingerprint(&traj, &m, &cfg, &mut child_rng(11, &[0]));
        let b = dsfs_fingerprint(&traj, &m, &cfg, &mut child_rng(11, &[1]));
        assert_ne!(a.cells, b.cells);
        let c = dsfs_fingerprint(&traj, &m, &cfg, &mut child_rng(11, &[0]));
        assert_eq!(a.cells, c.cells, "same seed must reproduce the copy");
    }

    #[test]
    fn dsfs_cases_are_exercised_and_total() {
        let m = drift_model(12);
        let cfg = FingerprintConfig::default();
        let traj = correlated_walk(&m, 2000, 12);
        let mut rng = child_rng(13, &[]);
        let (out, report) = dsfs_fingerprint_report(&traj, &m, &cfg, &mut rng);
        assert_eq!(report.case_counts.iter().sum::<usize>(), traj.len() - 1);
        assert!(report.case_counts[0] > 0, "correlated walk should hit case 1");
        for c in &out.cells {
            assert!(m.grid().contains(*c));
        }
    }

    #[test]
    fn pfs_equals_dsfs_candidate_shape_on_surviving_original() {
        // With σ = 0 every support cell survives, so sampling covers the row.
        let m = drift_model(8);
        let traj = correlated_walk(&m, 200, 14);
        let mut rng = child_rng(15, &[]);
        let out = pfs_fingerprint(&traj, &m, 0.4, 0.0, &mut rng);
        for j in 1..out.len() {
            let row = m.row(out.cells[j - 1]);
            let in_row = row.iter().any(|(c, _)| *c == out.cells[j]);
            assert!(
                in_row || out.cells[j] == traj.cells[j],
                "position {j} must come from the row or pass through"
            );
        }
    }

    #[test]
    fn pfs_forces_deviation_when_filtered() {
        // Original transition has probability 0.002 < σ; the sampler must
        // pick a survivor, regardless of how far it is from the original.
        let g = Grid::unit(8);
        let a = Cell::new(4, 4);
        let east = Cell::new(5, 4);
        let west = Cell::new(3, 4);
        let mut rows = HashMap::new();
        rows.insert(a, vec![(west, 0.998), (east, 0.002)]);
        let m = MarkovModel::from_rows(g, rows, vec![1; 64]).unwrap();
        let traj = Trajectory::new_raw("t", vec![a, east]);
        let mut deviated = 0;
        for s in 0..200u64 {
            // p = 0 keeps position 1 at `a`, isolating the filter behavior.
            let out = pfs_fingerprint(&traj, &m, 1e-12, 0.005, &mut child_rng(s, &[4]));
            if out.cells[1] == west {
                deviated += 1;
            }
        }
        assert_eq!(deviated, 200, "filtered original must always deviate");
    }

    #[test]
    fn bs_generate_matches_construction() {
        let code = bs_generate(4, 3);
        let rows: Vec<String> = (1..=4)
            .map(|u| code.word(u).iter().map(|b| b.to_string()).collect())
            .collect();
        assert_eq!(rows, vec!["111111111", "000111111", "000000111", "000000000"]);
        assert_eq!(code.code_len(), 9);

        let tiny = bs_generate(2, 1);
        assert_eq!(tiny.word(1), &[1]);
        assert_eq!(tiny.word(2), &[0]);

        for (i, w) in (1..=4).map(|u| (u, code.word(u))) {
            let ones = w.iter().filter(|b| **b == 1).count();
            assert_eq!(ones, (4 - i) * 3, "row {i} one-count");
        }
    }

    #[test]
    fn bs_detect_follows_first_majority_block() {
        let code = bs_generate(4, 3);
        assert_eq!(bs_detect(&[0, 0, 1, 0, 1, 1, 1, 1, 1], &code), 2);
        assert_eq!(bs_detect(&[1; 9], &code), 1);
        assert_eq!(bs_detect(&[0; 9], &code), 4);
    }

    #[test]
    fn tardos_dimensions_and_bias_range() {
        let mut rng = child_rng(20, &[]);
        let code = tardos_generate(5, 3, 0.01, &mut rng);
        assert_eq!(code.params.k, Some(7));
        assert_eq!(code.code_len(), 100 * 9 * 7);
        let t = 1.0 / 900.0;
        for p in code.bias().unwrap() {
            assert!(*p >= t - 1e-12 && *p <= 1.0 - t + 1e-12, "bias {p} out of range");
        }
    }

    #[test]
    fn tardos_columns_concentrate_on_bias() {
        // Narrow codebook, many users: column means approach p_i.
        let mut rng = child_rng(21, &[]);
        let n = 10_000;
        let code = {
            let full = tardos_generate(n, 2, 0.5, &mut rng);
            full.truncated(40)
        };
        let bias = code.bias().unwrap();
        // 4 sigma per column keeps the 40-column family-wise failure rate
        // below 0.3%.
        for i in 0..code.code_len() {
            let ones = (1..=n).filter(|u| code.word(*u)[i] == 1).count();
            let mean = ones as f64 / n as f64;
            let sigma = (bias[i] * (1.0 - bias[i]) / n as f64).sqrt();
            assert!(
                (mean - bias[i]).abs() <= 4.0 * sigma + 1e-9,
                "column {i}: mean {mean} vs bias {}",
                bias[i]
            );
        }
    }

    #[test]
    fn tardos_scores_hand_case() {
        let code = BinaryCodebook::from_parts(
            CodeKind::Tardos,
            vec![vec![1, 1], vec![0, 0]],
            Some(vec![0.5, 0.5]),
            CodeParams { c: Some(2), k: Some(1), omega: Some(0.5), ..CodeParams::default() },
        )
        .unwrap();
        let outcome = tardos_score(&[1, 1], &code);
        assert!((outcome.scores[0] - 2.0).abs() < 1e-12, "2·√((1−0.5)/0.5) = 2");
        assert!((outcome.scores[1] + 2.0).abs() < 1e-12);
        assert_eq!(outcome.accused_user, 1);
        assert!(!outcome.tie);
        assert_eq!(outcome.threshold, 40.0);

        let zeros = tardos_score(&[0, 0], &code);
        assert!(zeros.scores.iter().all(|s| *s == 0.0));
        assert!(zeros.tie, "all-zero scores tie every user");
    }

    #[test]
    fn tardos_owner_has_top_expected_score() {
        let mut rng = child_rng(22, &[]);
        let mut wins = 0;
        for trial in 0..200u64 {
            let code = {
                let mut gen_rng = child_rng(500 + trial, &[]);
                tardos_generate(20, 3, 0.01, &mut gen_rng)
            };
            let owner = 1 + (rng.random::<u64>() % 20) as usize;
            let outcome = tardos_score(code.word(owner), &code);
            if outcome.accused_user == owner {
                wins += 1;
            }
        }
        assert!(wins >= 195, "owner accused in {wins}/200 trials");
    }

    fn small_dataset() -> Dataset<Raw> {
        let g = Grid::unit(8);
        let m = drift_model(8);
        let mut trajectories = Vec::new();
        for i in 0..4u64 {
            let mut rng = child_rng(30 + i, &[]);
            let mut cells = vec![Cell::new(4, 4)];
            for _ in 1..20 {
                cells.push(m.sample_step(*cells.last().unwrap(), &mut rng));
            }
            trajectories.push(Trajectory::new_raw(format!("t{i}"), cells));
        }
        Dataset::new(g, trajectories).unwrap()
    }

    #[test]
    fn mark_map_marks_neighbors_not_originals() {
        let d = small_dataset();
        let marks = build_mark_map(&d, 77);
        assert_eq!(marks.len(), d.len());
        for (t, traj) in d.trajectories.iter().enumerate() {
            for (j, &orig) in traj.cells.iter().enumerate() {
                let mark = marks.row(t)[j];
                assert_ne!(mark, orig);
                assert!(neighbors(orig, &d.grid, false).contains(&mark));
            }
        }
        let again = build_mark_map(&d, 77);
        assert_eq!(marks, again, "same secret seed, same marks");
    }

    #[test]
    fn code_embed_identity_cases() {
        let d = small_dataset();
        let marks = build_mark_map(&d, 78);
        let traj = &d.trajectories[0];
        let zeros = vec![0u8; traj.len()];
        let ones = vec![1u8; traj.len()];
        let out0 = code_embed(traj, &zeros, marks.row(0), false).unwrap();
        assert_eq!(out0.cells, traj.cells);
        let out1 = code_embed(traj, &ones, marks.row(0), false).unwrap();
        assert_eq!(out1.cells, marks.row(0));
        // Equal bits at a position give equal values across users.
        let mixed = code_embed(traj, &ones, marks.row(0), false).unwrap();
        assert_eq!(out1.cells, mixed.cells);
    }

    #[test]
    fn code_embed_length_policy() {
        let d = small_dataset();
        let marks = build_mark_map(&d, 79);
        let traj = &d.trajectories[0];
        let short = vec![1u8; traj.len() - 5];
        assert!(matches!(
            code_embed(traj, &short, marks.row(0), false),
            Err(Error::LengthMismatch { .. })
        ));
        let padded = code_embed(traj, &short, marks.row(0), true).unwrap();
        assert_eq!(&padded.cells[traj.len() - 5..], &traj.cells[traj.len() - 5..]);
    }

    #[test]
    fn readback_is_identity_on_codewords() {
        let d = small_dataset();
        let marks = build_mark_map(&d, 80);
        let traj = &d.trajectories[1];
        let mut rng = child_rng(81, &[]);
        let bits: Vec<u8> = (0..traj.len()).map(|_| u8::from(rng.random::<bool>())).collect();
        let embedded = code_embed(traj, &bits, marks.row(1), false).unwrap();
        assert_eq!(read_bits(&embedded.cells, marks.row(1)), bits);
    }

    #[test]
    fn distribute_is_deterministic_and_distinct() {
        let d = small_dataset();
        let cfg = DistributeConfig::default();
        for scheme in [Scheme::Dsfs, Scheme::BonehShaw, Scheme::Tardos] {
            let a = distribute(&d, 5, scheme, &cfg, 900).unwrap();
            let b = distribute(&d, 5, scheme, &cfg, 900).unwrap();
            assert_eq!(a.len(), 5);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.analyzer_id, y.analyzer_id);
                assert_eq!(x.seed, y.seed);
                for (tx, ty) in x.copies.trajectories.iter().zip(&y.copies.trajectories) {
                    assert_eq!(tx.cells, ty.cells, "{} copies must reproduce", scheme.name());
                }
            }
            let seeds: Vec<u64> = a.iter().map(|r| r.seed).collect();
            let mut dedup = seeds.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(dedup.len(), seeds.len(), "analyzer seeds must be distinct");
        }
    }

    #[test]
    fn dsfs_copies_pairwise_differ() {
        let d = small_dataset();
        let cfg = DistributeConfig::default();
        let records = distribute(&d, 6, Scheme::Dsfs, &cfg, 901).unwrap();
        for i in 0..records.len() {
            for j in (i + 1)..records.len() {
                let differ = records[i]
                    .copies
                    .trajectories
                    .iter()
                    .zip(&records[j].copies.trajectories)
                    .any(|(a, b)| a.cells != b.cells);
                assert!(differ, "copies {i} and {j} are identical");
            }
        }
    }

    #[test]
    fn distribute_noisy_rejects_dsfs() {
        let d = small_dataset();
        let noisy: Dataset<Noisy> = Dataset::new(
            d.grid,
            d.trajectories
                .iter()
                .map(|t| Trajectory::from_parts(t.id.clone(), t.cells.clone()))
                .collect(),
        )
        .unwrap();
        let cfg = DistributeConfig::default();
        assert!(matches!(
            distribute_noisy(&noisy, 4, Scheme::Dsfs, &cfg, 902),
            Err(Error::Config(_))
        ));
        let records = distribute_noisy(&noisy, 4, Scheme::Tardos, &cfg, 902).unwrap();
        assert_eq!(records.len(), 4);
    }

    #[test]
    fn embedding_secrets_match_distribution() {
        let d = small_dataset();
        let cfg = DistributeConfig::default();
        let records = distribute(&d, 4, Scheme::BonehShaw, &cfg, 903).unwrap();
        let secrets = embedding_secrets(&d, 4, Scheme::BonehShaw, &cfg, 903).unwrap();
        let marks = secrets.mark_map.unwrap();
        let code = secrets.codebook.unwrap();
        // Reading bits back from analyzer a's untouched copy recovers the
        // codeword prefix on every trajectory.
        for record in &records {
            let word = code.word(record.analyzer_id + 1);
            for (t, traj) in record.copies.trajectories.iter().enumerate() {
                let bits = read_bits(&traj.cells, marks.row(t));
                let expect: Vec<u8> = (0..traj.len())
                    .map(|j| word.get(j).copied().unwrap_or(0))
                    .collect();
                assert_eq!(bits, expect);
            }
        }
    }
}
