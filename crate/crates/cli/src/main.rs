//! Command-line driver for the trajmark pipeline.
//!
//! Every subcommand reads an optional flat `key=value` config file plus
//! repeated `--set key=value` overrides (overrides win), writes CSV outputs
//! into `--out <dir>`, and drops a `manifest.json` recording the effective
//! config hash and the seed that produced the data.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on data errors.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use trajmark::corr::MarkovModel;
use trajmark::dp::{protect, PimParams};
use trajmark::fingerprint::{
    distribute, distribute_noisy, CopyRecord, DistributeConfig, FingerprintConfig, Scheme,
};
use trajmark::geo::{
    discretize, Dataset, Fingerprinted, Grid, Leaked, Noisy, Raw, Trajectory,
};
use trajmark::harness::{
    run_robustness, run_utility, timing_benchmark, world_generator, world_model,
    ExperimentConfig, SweepVar, WorldKind,
};
use trajmark::io::{self, Config, Manifest};
use trajmark::postprocess::post_process_dataset;
use trajmark::utility::UtilityReport;
use trajmark::{attacks, child_rng, detect, Error, Result};

#[derive(Parser)]
#[command(name = "trajmark", version, about = "Fingerprint, attack, and trace location trajectory datasets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Flat key=value config file (`#` comments allowed).
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable and wins over the file.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory, created if missing.
    #[arg(short, long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Discretize continuous GPS points onto the configured grid.
    ///
    /// Config: n, x_min, y_min, x_max, y_max.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Points CSV with header traj_id,seq,x,y[,t].
        #[arg(long, value_name = "FILE")]
        points: PathBuf,
    },
    /// Fit the public 2-gram model from a cell dataset.
    ///
    /// Config: n (+ bbox keys for non-unit grids).
    BuildModel {
        #[command(flatten)]
        common: Common,
        /// Cells CSV with header traj_id,seq,ix,iy.
        #[arg(long, value_name = "FILE")]
        cells: PathBuf,
    },
    /// Generate synthetic random-walk trajectories.
    ///
    /// Config: n, count, length, seed, and either a world name or
    /// transitions/visits model files.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Release a differentially private copy of a raw cell dataset.
    ///
    /// Config: epsilon (required), delta, pim_samples, seed, model keys.
    Protect {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        cells: PathBuf,
    },
    /// Repair sub-tau transitions in a noisy dataset.
    ///
    /// Config: tau, model keys.
    Postprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        cells: PathBuf,
    },
    /// Distribute fingerprinted copies, one per analyzer.
    ///
    /// Config: scheme, analyzers, seed, p, tau, theta, c, omega, role.
    Fingerprint {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        cells: PathBuf,
    },
    /// Attack fingerprinted copies into a leaked dataset.
    ///
    /// Config: attack (required), p_r, p_c, tau_attack, p_e, c, p_a, seed,
    /// model keys for model-based attacks.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Fingerprinted copy; repeat for collusion attacks.
        #[arg(long = "copy", value_name = "FILE", required = true)]
        copies: Vec<PathBuf>,
    },
    /// Score analyzers against a leaked dataset and accuse one.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        leaked: PathBuf,
        /// Candidate copies in analyzer order; repeat per analyzer.
        #[arg(long = "copy", value_name = "FILE", required = true)]
        copies: Vec<PathBuf>,
    },
    /// Run the utility experiment: one row per scheme and epsilon.
    ///
    /// Config: experiment keys (world, n, count, length, analyzers, trials,
    /// seed, epsilons, utility_schemes, p, tau, theta, delta, pim_samples).
    Utility {
        #[command(flatten)]
        common: Common,
    },
    /// Run a robustness sweep: one row per sweep value.
    ///
    /// Config: experiment keys plus scheme, attack, sweep, sweep_values, and
    /// attack parameters (p_r, p_c, p_e, p_a, c).
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Time fingerprinted-dataset generation across trajectory lengths.
    ///
    /// Config: count, lengths.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Preprocess { common, points } => cmd_preprocess(&common, &points),
        Cmd::BuildModel { common, cells } => cmd_build_model(&common, &cells),
        Cmd::Synth { common } => cmd_synth(&common),
        Cmd::Protect { common, cells } => cmd_protect(&common, &cells),
        Cmd::Postprocess { common, cells } => cmd_postprocess(&common, &cells),
        Cmd::Fingerprint { common, cells } => cmd_fingerprint(&common, &cells),
        Cmd::Attack { common, copies } => cmd_attack(&common, &copies),
        Cmd::Detect { common, leaked, copies } => cmd_detect(&common, &leaked, &copies),
        Cmd::Utility { common } => cmd_utility(&common),
        Cmd::Experiment { common } => cmd_experiment(&common),
        Cmd::Bench { common } => cmd_bench(&common),
    }
}

// ---------------------------------------------------------------- helpers ---

/// File config plus `--set` overrides, overrides winning.
fn effective_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => Config::empty(),
    };
    for kv in &common.set {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set {kv:?}: expected key=value"))
        })?;
        cfg.set(key.trim(), value.trim());
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

/// Grid from config: full bbox keys when any is present, unit grid otherwise.
fn grid_of(cfg: &Config) -> Result<Grid> {
    let has_bbox = ["x_min", "y_min", "x_max", "y_max"].iter().any(|k| cfg.get(k).is_some());
    if has_bbox {
        cfg.grid()
    } else {
        Ok(Grid::unit(cfg.require("n")?))
    }
}

/// Public model from `transitions`/`visits` files or a named world.
fn model_of(cfg: &Config, grid: Grid) -> Result<MarkovModel> {
    match (cfg.get("transitions"), cfg.get("visits")) {
        (Some(t), Some(v)) => io::read_model_csv(t, v, grid),
        (None, None) => {
            if grid != Grid::unit(grid.n()) {
                return Err(Error::Config(
                    "world models live on the unit grid; pass transitions/visits files instead"
                        .into(),
                ));
            }
            world_model(world_of(cfg)?, grid.n())
        }
        _ => Err(Error::Config("transitions and visits must be given together".into())),
    }
}

fn world_of(cfg: &Config) -> Result<WorldKind> {
    WorldKind::parse(cfg.get("world").unwrap_or("drift"))
}

fn base_manifest(kind: &str, cfg: &Config) -> Manifest {
    let mut m = Manifest::new(kind);
    m.config_hash = Some(cfg.hash());
    m
}

fn parse_list<T: std::str::FromStr>(raw: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("key {key}: {s:?}: {e}"))))
        .collect()
}

/// Map flat config keys onto an [`ExperimentConfig`], starting from defaults.
fn experiment_config(cfg: &Config) -> Result<ExperimentConfig> {
    let mut e = ExperimentConfig::default();
    e.world = world_of(cfg)?;
    e.grid_n = cfg.parse_or("n", e.grid_n)?;
    e.trajectory_count = cfg.parse_or("count", e.trajectory_count)?;
    e.trajectory_length = cfg.parse_or("length", e.trajectory_length)?;
    e.analyzer_count = cfg.parse_or("analyzers", e.analyzer_count)?;
    if let Some(name) = cfg.get("scheme") {
        e.scheme = Scheme::parse(name)?;
    }
    e.attack = match cfg.get("attack") {
        None | Some("none") => None,
        Some(name) => Some(attacks::AttackKind::parse(name)?),
    };
    if let Some(name) = cfg.get("sweep") {
        e.sweep_var = SweepVar::parse(name)?;
    }
    if let Some(raw) = cfg.get("sweep_values") {
        e.sweep_values = parse_list(raw, "sweep_values")?;
    }
    e.trials = cfg.parse_or("trials", e.trials)?;
    e.master_seed = cfg.parse_or("seed", e.master_seed)?;
    if let Some(raw) = cfg.get("epsilons") {
        e.epsilons = parse_list(raw, "epsilons")?;
    }
    if let Some(raw) = cfg.get("utility_schemes") {
        e.utility_schemes = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Scheme::parse)
            .collect::<Result<Vec<_>>>()?;
    }
    e.fingerprint = FingerprintConfig::new(
        cfg.parse_or("p", e.fingerprint.p)?,
        cfg.parse_or("tau", e.fingerprint.tau)?,
        cfg.parse_or("theta", e.fingerprint.theta)?,
    )?;
    e.attack_cfg.p_r = cfg.parse_or("p_r", e.attack_cfg.p_r)?;
    e.attack_cfg.p_c = cfg.parse_or("p_c", e.attack_cfg.p_c)?;
    e.attack_cfg.tau_attack = cfg.parse_or("tau_attack", e.attack_cfg.tau_attack)?;
    e.attack_cfg.p_e = cfg.parse_or("p_e", e.attack_cfg.p_e)?;
    e.attack_cfg.c = cfg.parse_or("c", e.attack_cfg.c)?;
    e.attack_cfg.p_a = cfg.parse_or("p_a", e.attack_cfg.p_a)?;
    e.dp_epsilon = cfg.parse("epsilon")?;
    e.delta = cfg.parse_or("delta", e.delta)?;
    e.omega = cfg.parse_or("omega", e.omega)?;
    e.pim_samples = cfg.parse_or("pim_samples", e.pim_samples)?;
    e.validate()?;
    Ok(e)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("output csv: {e}"))
}

// ------------------------------------------------------------- commands ---

fn cmd_preprocess(common: &Common, points: &Path) -> Result<()> {
    let cfg = effective_config(common)?;
    let grid = cfg.grid()?;
    let tracks = io::read_points_csv(points)?;
    let mut trajectories = Vec::with_capacity(tracks.len());
    for (id, pts) in &tracks {
        let cells = pts.iter().map(|p| discretize(*p, &grid)).collect::<Result<Vec<_>>>()?;
        trajectories.push(Trajectory::new_raw(id.clone(), cells));
    }
    let d = Dataset::new(grid, trajectories)?;
    let out = out_dir(common)?;
    io::write_cells_csv(out.join("cells.csv"), &d)?;
    let mut man = base_manifest("preprocess", &cfg);
    man.role = Some("raw".into());
    man.write(out.join("manifest.json"))?;
    println!("discretized {} trajectories onto the {}x{} grid", d.len(), grid.n(), grid.n());
    Ok(())
}

fn cmd_build_model(common: &Common, cells: &Path) -> Result<()> {
    let cfg = effective_config(common)?;
    let grid = grid_of(&cfg)?;
    let d: Dataset<Raw> = io::read_cells_csv(cells, grid)?;
    let m = MarkovModel::build(&d)?;
    let out = out_dir(common)?;
    io::write_model_csv(out.join("transitions.csv"), out.join("visits.csv"), &m)?;
    let mut man = base_manifest("build-model", &cfg);
    man.extra.insert("total_visits".into(), m.total_visits().to_string());
    man.write(out.join("manifest.json"))?;
    println!("fitted model over {} trajectories ({} visits)", d.len(), m.total_visits());
    Ok(())
}

fn cmd_synth(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let n: u16 = cfg.require("n")?;
    let count: usize = cfg.parse_or("count", 100)?;
    let length: usize = cfg.parse_or("length", 100)?;
    let seed: u64 = cfg.parse_or("seed", 7)?;
    if length == 0 {
        return Err(Error::Config("length must be >= 1".into()));
    }
    let m = match (cfg.get("transitions"), cfg.get("visits")) {
        (Some(t), Some(v)) => io::read_model_csv(t, v, Grid::unit(n))?,
        (None, None) => world_generator(world_of(&cfg)?, n)?,
        _ => return Err(Error::Config("transitions and visits must be given together".into())),
    };
    let mut rng = child_rng(seed, &[]);
    let d = trajmark::harness::synth_generate(&m, count, length, &mut rng);
    let out = out_dir(common)?;
    io::write_cells_csv(out.join("cells.csv"), &d)?;
    let mut man = base_manifest("synth", &cfg);
    man.role = Some("raw".into());
    man.seed = Some(seed);
    man.write(out.join("manifest.json"))?;
    println!("generated {count} walks of length {length} (seed {seed})");
    Ok(())
}

fn cmd_protect(common: &Common, cells: &Path) -> Result<()> {
    let cfg = effective_config(common)?;
    let grid = grid_of(&cfg)?;
    let d: Dataset<Raw> = io::read_cells_csv(cells, grid)?;
    let m = model_of(&cfg, grid)?;
    let params = PimParams::with_samples(
        cfg.require("epsilon")?,
        cfg.parse_or("delta", 0.01)?,
        cfg.parse_or("pim_samples", 4096)?,
    )?;
    let seed: u64 = cfg.parse_or("seed", 7)?;
    let noisy = protect(&d, &m, &params, seed)?;
    let out = out_dir(common)?;
    io::write_cells_csv(out.join("cells.csv"), &noisy)?;
    let mut man = base_manifest("protect", &cfg);
    man.role = Some("noisy".into());
    man.seed = Some(seed);
    man.extra.insert("epsilon".into(), params.epsilon.to_string());
    man.write(out.join("manifest.json"))?;
    println!("released {} trajectories at epsilon {}", noisy.len(), params.epsilon);
    Ok(())
}

fn cmd_postprocess(common: &Common, cells: &Path) -> Result<()> {
    let cfg = effective_config(common)?;
    let grid = grid_of(&cfg)?;
    let d: Dataset<Noisy> = io::read_cells_csv(cells, grid)?;
    let m = model_of(&cfg, grid)?;
    let tau: f64 = cfg.parse_or("tau", 0.005)?;
    let repaired = post_process_dataset(&d, &m, tau)?;
    let out = out_dir(common)?;
    io::write_cells_csv(out.join("cells.csv"), &repaired)?;
    let mut man = base_manifest("postprocess", &cfg);
    man.role = Some("postprocessed".into());
    man.extra.insert("tau".into(), tau.to_string());
    man.write(out.join("manifest.json"))?;
    println!("repaired {} trajectories at tau {tau}", repaired.len());
    Ok(())
}

fn cmd_fingerprint(common: &Common, cells: &Path) -> Result<()> {
    let cfg = effective_config(common)?;
    let grid = grid_of(&cfg)?;
    let scheme = match cfg.get("scheme") {
        Some(name) => Scheme::parse(name)?,
        None => Scheme::Dsfs,
    };
    let analyzers: usize = cfg.parse_or("analyzers", 10)?;
    let seed: u64 = cfg.parse_or("seed", 7)?;
    let dcfg = DistributeConfig {
        fingerprint: FingerprintConfig::new(
            cfg.parse_or("p", 0.4)?,
            cfg.parse_or("tau", 0.005)?,
            cfg.parse_or("theta", 0.5)?,
        )?,
        collusion_size: cfg.parse_or("c", 3)?,
        error_bound: cfg.parse_or("omega", 0.01)?,
    };
    let records = match cfg.get("role").unwrap_or("raw") {
        "raw" => {
            let d: Dataset<Raw> = io::read_cells_csv(cells, grid)?;
            distribute(&d, analyzers, scheme, &dcfg, seed)?
        }
        "postprocessed" => {
            let d: Dataset<trajmark::geo::PostProcessed> = io::read_cells_csv(cells, grid)?;
            distribute(&d, analyzers, scheme, &dcfg, seed)?
        }
        "noisy" => {
            let d: Dataset<Noisy> = io::read_cells_csv(cells, grid)?;
            distribute_noisy(&d, analyzers, scheme, &dcfg, seed)?
        }
        other => {
            return Err(Error::Config(format!(
                "role must be raw, postprocessed, or noisy, got {other:?}"
            )))
        }
    };
    let out = out_dir(common)?;
    for record in &records {
        io::write_cells_csv(out.join(format!("copy_{:03}.csv", record.analyzer_id)), &record.copies)?;
    }
    let mut man = base_manifest("fingerprint", &cfg);
    man.role = Some("fingerprinted".into());
    man.scheme = Some(scheme.name().into());
    man.seed = Some(seed);
    man.extra.insert("analyzers".into(), analyzers.to_string());
    man.write(out.join("manifest.json"))?;
    println!("distributed {} {} copies (seed {seed})", records.len(), scheme.name());
    Ok(())
}

fn cmd_attack(common: &Common, copies: &[PathBuf]) -> Result<()> {
    let cfg = effective_config(common)?;
    let grid = grid_of(&cfg)?;
    let kind = attacks::AttackKind::parse(
        cfg.get("attack").ok_or_else(|| Error::Config("missing required key attack".into()))?,
    )?;
    let mut acfg = attacks::AttackConfig::default();
    acfg.p_r = cfg.parse_or("p_r", acfg.p_r)?;
    acfg.p_c = cfg.parse_or("p_c", acfg.p_c)?;
    acfg.tau_attack = cfg.parse_or("tau_attack", acfg.tau_attack)?;
    acfg.p_e = cfg.parse_or("p_e", acfg.p_e)?;
    acfg.c = cfg.parse_or("c", acfg.c)?;
    acfg.p_a = cfg.parse_or("p_a", acfg.p_a)?;
    let seed: u64 = cfg.parse_or("seed", 7)?;
    let datasets = copies
        .iter()
        .map(|p| io::read_cells_csv::<Fingerprinted>(p, grid))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Dataset<Fingerprinted>> = datasets.iter().collect();
    let model;
    let model_ref = if kind.needs_model() {
        model = model_of(&cfg, grid)?;
        Some(&model)
    } else {
        None
    };
    let leaked = attacks::apply_attack(&refs, model_ref, kind, &acfg, seed)?;
    let out = out_dir(common)?;
    io::write_cells_csv(out.join("leaked.csv"), &leaked)?;
    let mut man = base_manifest("attack", &cfg);
    man.role = Some("leaked".into());
    man.seed = Some(seed);
    man.extra.insert("attack".into(), kind.name().into());
    man.write(out.join("manifest.json"))?;
    println!("attacked {} copies with {} (seed {seed})", copies.len(), kind.name());
    Ok(())
}

fn cmd_detect(common: &Common, leaked: &Path, copies: &[PathBuf]) -> Result<()> {
    let cfg = effective_config(common)?;
    let grid = grid_of(&cfg)?;
    let leaked: Dataset<Leaked> = io::read_cells_csv(leaked, grid)?;
    let records = copies
        .iter()
        .enumerate()
        .map(|(a, p)| {
            Ok(CopyRecord {
                analyzer_id: a,
                seed: 0,
                copies: io::read_cells_csv::<Fingerprinted>(p, grid)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = detect::detect_dataset(&leaked, &records)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (traj, rep) in leaked.trajectories.iter().zip(&report.per_trajectory) {
        for (a, score) in rep.scores.iter().enumerate() {
            rows.push((traj.id.clone(), a, *score));
        }
        summaries.push((traj.id.clone(), rep.accused, rep.scores[rep.accused]));
    }
    let out = out_dir(common)?;
    io::write_report_csv(out.join("report.csv"), &rows, &summaries)?;
    let mut man = base_manifest("detect", &cfg);
    man.extra.insert("final_accused".into(), report.final_accused.to_string());
    man.extra.insert("final_tie".into(), report.final_tie.to_string());
    man.write(out.join("manifest.json"))?;
    println!(
        "accused analyzer {} with {}/{} trajectory votes{}",
        report.final_accused,
        report.vote_counts[report.final_accused],
        report.per_trajectory.len(),
        if report.final_tie { " (tie)" } else { "" },
    );
    Ok(())
}

fn cmd_utility(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let ecfg = experiment_config(&cfg)?;
    let rows = run_utility(&ecfg)?;
    let out = out_dir(common)?;
    let path = out.join("utility.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec!["scheme".to_string(), "epsilon".to_string(), "trials".to_string()];
    for metric in UtilityReport::METRICS {
        header.push(format!("{metric}_mean"));
        header.push(format!("{metric}_std"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in &rows {
        let mut rec = vec![row.scheme.name().to_string(), row.epsilon.to_string(), row.trials.to_string()];
        for (mean, std) in row.mean.to_array().iter().zip(row.std.to_array()) {
            rec.push(mean.to_string());
            rec.push(std.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    let mut man = base_manifest("utility", &cfg);
    man.seed = Some(ecfg.master_seed);
    man.write(out.join("manifest.json"))?;
    println!("wrote {} utility rows to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_experiment(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let ecfg = experiment_config(&cfg)?;
    let results = run_robustness(&ecfg)?;
    let out = out_dir(common)?;
    let path = out.join("robustness.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["sweep", "sweep_value", "scheme", "attack", "trials", "detection_accuracy"])
        .map_err(csv_err)?;
    for r in &results {
        w.write_record([
            ecfg.sweep_var.name(),
            &r.sweep_value.to_string(),
            r.scheme.name(),
            r.attack.map_or("none", |a| a.name()),
            &r.trials.to_string(),
            &r.detection_accuracy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let mut man = base_manifest("experiment", &cfg);
    man.scheme = Some(ecfg.scheme.name().into());
    man.seed = Some(ecfg.master_seed);
    man.write(out.join("manifest.json"))?;
    for r in &results {
        println!(
            "{}={} accuracy {:.3} over {} trials",
            ecfg.sweep_var.name(),
            r.sweep_value,
            r.detection_accuracy,
            r.trials,
        );
    }
    Ok(())
}

fn cmd_bench(common: &Common) -> Result<()> {
    let cfg = effective_config(common)?;
    let count: usize = cfg.parse_or("count", 100)?;
    let lengths: Vec<usize> = match cfg.get("lengths") {
        Some(raw) => parse_list(raw, "lengths")?,
        None => vec![100, 200, 300, 400, 500],
    };
    let rows = timing_benchmark(count, &lengths)?;
    let out = out_dir(common)?;
    let path = out.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["length", "seconds"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([r.length.to_string(), r.seconds.to_string()]).map_err(csv_err)?;
        println!("length {:>6}: {:.4} s", r.length, r.seconds);
    }
    w.flush()?;
    let man = base_manifest("bench", &cfg);
    man.write(out.join("manifest.json"))?;
    Ok(())
}
