//! Command-line front end: profile import, link scoring, affinity shifts,
//! placement ranking, cluster simulation, and report summaries.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use interleave_core::affinity::AffinityGraph;
use interleave_core::geometry;
use interleave_core::optimizer::{self, ExcessAggregation, LinkJobSet, SolveConfig};
use interleave_core::profiles::{parse_profile, BandwidthSample, IterationProfile};
use interleave_core::ranker::{self, JobRequest};
use interleave_core::report;
use interleave_core::simulator::{self, SchedulerKind, SimConfig, SimReport, Topology, Trace};

/// Input or schema problem; exits with code 2 instead of 1.
#[derive(Debug)]
struct Validation(String);

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Validation {}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(anyhow!(Validation(msg.into())))
}

#[derive(Parser)]
#[command(name = "interleave", version, about = "Network-aware job placement toolkit")]
struct Cli {
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import a bandwidth sample series into a canonical iteration profile.
    Profiles {
        #[command(subcommand)]
        action: ProfilesAction,
    },
    /// Inspect geometry structures.
    Geometry {
        #[command(subcommand)]
        action: GeometryAction,
    },
    /// Solve rotations for jobs competing on one link.
    Score(ScoreArgs),
    /// Affinity-graph operations.
    Affinity {
        #[command(subcommand)]
        action: AffinityAction,
    },
    /// Rank candidate placements for a batch of jobs.
    Rank(RankArgs),
    /// Run the cluster simulation on a trace.
    Simulate(SimulateArgs),
    /// Summarize one report or compare a baseline/interleaved pair.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum ProfilesAction {
    /// Parse CSV (t_ms,bw_gbps) or a JSON sample array into a profile.
    Import {
        file: PathBuf,
        /// Iteration period hint in ms; skips autodetection.
        #[arg(long = "iter-time")]
        iter_time: Option<u32>,
        /// Up-phase demand threshold in Gbps.
        #[arg(long)]
        threshold: Option<f64>,
        /// Profile name recorded in the output.
        #[arg(long, default_value = "imported")]
        kind: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GeometryAction {
    /// Emit a profile's demand tiled onto a perimeter, as CSV bins.
    Show {
        profile: PathBuf,
        #[arg(long)]
        perimeter: u32,
    },
}

#[derive(Args)]
struct ScoreArgs {
    /// Link attributes, currently `capacity=GBPS`.
    #[arg(long)]
    link: String,
    /// Comma-separated profile JSON files, one job each.
    #[arg(long, value_delimiter = ',', required = true)]
    profiles: Vec<PathBuf>,
    #[arg(long)]
    precision: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AffinityAction {
    /// Consolidate per-link shifts into one time-shift per job.
    Shifts {
        #[arg(long)]
        graph: PathBuf,
        /// Print the graph in DOT format instead of solving.
        #[arg(long)]
        dot: bool,
    },
}

#[derive(Args)]
struct RankArgs {
    /// Topology JSON file.
    #[arg(long)]
    cluster: PathBuf,
    /// JSON array of job requests (id, kind, workers).
    #[arg(long)]
    jobs: PathBuf,
    /// Directory of profile JSON files, keyed by their job kind.
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long = "n-max", default_value_t = 10)]
    n_max: usize,
    #[arg(long)]
    precision: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    topology: PathBuf,
    /// Directory of profile JSON files, keyed by their job kind.
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long, value_parser = parse_scheduler)]
    scheduler: SchedulerKind,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "horizon-ms", default_value_t = 60_000)]
    horizon_ms: u64,
    /// Per-iteration timing noise std dev, fraction of iteration time.
    #[arg(long = "drift-sigma", default_value_t = 0.0)]
    drift_sigma: f64,
    #[arg(long = "n-max", default_value_t = 10)]
    n_max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files: one to summarize, or baseline then interleaved to compare.
    #[arg(required = true, num_args = 1..=2)]
    reports: Vec<PathBuf>,
    /// Emit CSV instead of JSON (single-report mode).
    #[arg(long)]
    csv: bool,
}

fn parse_scheduler(s: &str) -> Result<SchedulerKind, String> {
    match s {
        "baseline" => Ok(SchedulerKind::Baseline),
        "cassini" => Ok(SchedulerKind::Cassini),
        other => Err(format!("unknown scheduler {other:?} (baseline|cassini)")),
    }
}

/// Knobs shared across subcommands, read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    precision_deg: Option<u32>,
    time_quantum_ms: Option<u32>,
    lcm_cap_ms: Option<u64>,
    up_threshold_gbps: Option<f64>,
    aggregate: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Clone)]
struct Effective {
    precision_deg: u32,
    lcm_cap_ms: u64,
    up_threshold_gbps: f64,
    aggregate: ExcessAggregation,
    seed: u64,
}

impl Effective {
    fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            precision_deg: self.precision_deg,
            lcm_cap_ms: self.lcm_cap_ms,
            seed: self.seed,
            aggregate: self.aggregate,
            ..SolveConfig::default()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Effective> {
    let file: FileConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            match serde_json::from_str(&text) {
                Ok(c) => c,
                Err(e) => return invalid(format!("config {}: {e}", p.display())),
            }
        }
        None => FileConfig::default(),
    };
    let precision = file.precision_deg.unwrap_or(optimizer::DEFAULT_PRECISION_DEG);
    if precision == 0 || 360 % precision != 0 {
        return invalid(format!("precision_deg {precision} does not divide 360"));
    }
    let quantum = file.time_quantum_ms.unwrap_or(1);
    if quantum != 1 {
        return invalid("time_quantum_ms: only 1 ms is supported");
    }
    let aggregate = match file.aggregate.as_deref() {
        None | Some("mean") => ExcessAggregation::Mean,
        Some("min") | Some("tail") => ExcessAggregation::Tail,
        Some(other) => return invalid(format!("aggregate {other:?} (mean|min)")),
    };
    Ok(Effective {
        precision_deg: precision,
        lcm_cap_ms: file.lcm_cap_ms.unwrap_or(geometry::DEFAULT_LCM_CAP_MS),
        up_threshold_gbps: file.up_threshold_gbps.unwrap_or(1.0),
        aggregate,
        seed: file.seed.unwrap_or(0),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Validation>())
                || e.is::<serde_json::Error>()
                || e.chain().any(|c| c.is::<std::io::Error>())
            {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Profiles { action } => match action {
            ProfilesAction::Import {
                file,
                iter_time,
                threshold,
                kind,
                out,
            } => cmd_profiles_import(&cfg, &file, iter_time, threshold, &kind, out.as_deref()),
        },
        Command::Geometry { action } => match action {
            GeometryAction::Show { profile, perimeter } => cmd_geometry_show(&profile, perimeter),
        },
        Command::Score(args) => cmd_score(&cfg, &args),
        Command::Affinity { action } => match action {
            AffinityAction::Shifts { graph, dot } => cmd_affinity_shifts(&graph, dot),
        },
        Command::Rank(args) => cmd_rank(&cfg, &args),
        Command::Simulate(args) => cmd_simulate(&cfg, &args),
        Command::Report(args) => cmd_report(&args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(v) => Ok(v),
        Err(e) => invalid(format!("{what} {}: {e}", path.display())),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_profiles_import(
    cfg: &Effective,
    file: &Path,
    iter_time: Option<u32>,
    threshold: Option<f64>,
    kind: &str,
    out: Option<&Path>,
) -> Result<()> {
    let text =
        std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let samples = if file.extension().is_some_and(|e| e == "json") {
        match serde_json::from_str::<Vec<BandwidthSample>>(&text) {
            Ok(s) => s,
            Err(e) => return invalid(format!("sample array {}: {e}", file.display())),
        }
    } else {
        parse_csv_samples(&text)?
    };
    let threshold = threshold.unwrap_or(cfg.up_threshold_gbps);
    let profile = match parse_profile(kind, &samples, iter_time, threshold) {
        Ok(p) => p,
        Err(e) => return invalid(e.to_string()),
    };
    emit(out, &format!("{}\n", serde_json::to_string_pretty(&profile)?))
}

fn parse_csv_samples(text: &str) -> Result<Vec<BandwidthSample>> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("t_ms")) {
            continue;
        }
        let (t, bw) = line
            .split_once(',')
            .ok_or_else(|| anyhow!(Validation(format!("line {}: expected t_ms,bw_gbps", lineno + 1))))?;
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!(Validation(format!("line {}: {e}", lineno + 1))))
        };
        samples.push(BandwidthSample {
            t_ms: parse(t)?,
            bw_gbps: parse(bw)?,
        });
    }
    Ok(samples)
}

fn cmd_geometry_show(profile: &Path, perimeter: u32) -> Result<()> {
    let p: IterationProfile = read_json(profile, "profile")?;
    let circle = match geometry::tile(&p, perimeter) {
        Ok(c) => c,
        Err(e) => return invalid(e.to_string()),
    };
    let mut csv = String::from("ms,demand_gbps\n");
    for (i, d) in circle.demand.iter().enumerate() {
        csv.push_str(&format!("{i},{d}\n"));
    }
    print!("{csv}");
    Ok(())
}

fn cmd_score(cfg: &Effective, args: &ScoreArgs) -> Result<()> {
    let capacity = match args.link.split_once('=') {
        Some(("capacity", v)) => v
            .parse::<f64>()
            .map_err(|e| anyhow!(Validation(format!("--link capacity: {e}"))))?,
        _ => return invalid("--link expects capacity=GBPS"),
    };
    if capacity <= 0.0 {
        return invalid("--link capacity must be positive");
    }
    let mut jobs = Vec::new();
    for path in &args.profiles {
        let p: IterationProfile = read_json(path, "profile")?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.job_kind.clone());
        jobs.push((id, p));
    }
    let link = LinkJobSet {
        link_id: "cli".to_string(),
        capacity_gbps: capacity,
        jobs,
    };
    let mut solve = cfg.solve_config();
    if let Some(p) = args.precision {
        solve.precision_deg = p;
    }
    let solution = match optimizer::solve_rotations(&link, &solve) {
        Ok(s) => s,
        Err(e) => return invalid(e.to_string()),
    };
    emit(
        args.out.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&solution)?),
    )
}

fn cmd_affinity_shifts(graph: &Path, dot: bool) -> Result<()> {
    let g: AffinityGraph = read_json(graph, "affinity graph")?;
    if dot {
        print!("{}", g.to_dot());
        return Ok(());
    }
    let assignment = match g.bfs_time_shifts() {
        Ok(a) => a,
        Err(e) => return invalid(e.to_string()),
    };
    let violations = g.verify_assignment(&assignment.shifts);
    if !violations.is_empty() {
        bail!("internal: consolidated shifts failed verification: {violations:?}");
    }
    println!("{}", serde_json::to_string_pretty(&assignment)?);
    Ok(())
}

fn load_profile_dir(dir: &Path) -> Result<BTreeMap<String, IterationProfile>> {
    let mut profiles = BTreeMap::new();
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let p: IterationProfile = read_json(&path, "profile")?;
        profiles.insert(p.job_kind.clone(), p);
    }
    if profiles.is_empty() {
        return invalid(format!("no profile JSON files in {}", dir.display()));
    }
    Ok(profiles)
}

fn cmd_rank(cfg: &Effective, args: &RankArgs) -> Result<()> {
    let topo: Topology = read_json(&args.cluster, "topology")?;
    if let Err(e) = topo.validate() {
        return invalid(e.to_string());
    }
    let jobs: Vec<JobRequest> = read_json(&args.jobs, "job requests")?;
    if jobs.is_empty() {
        return invalid("job request list is empty");
    }
    let profiles = load_profile_dir(&args.profiles)?;
    let kinds: BTreeMap<String, String> =
        jobs.iter().map(|j| (j.id.clone(), j.kind.clone())).collect();
    let seed = args.seed.unwrap_or(cfg.seed);
    let candidates = match ranker::generate_candidates(
        &jobs,
        &topo,
        &ranker::all_free(&topo),
        args.n_max,
        seed,
    ) {
        Ok(c) => c,
        Err(e) => return invalid(e.to_string()),
    };
    let mut solve = cfg.solve_config();
    solve.seed = seed;
    if let Some(p) = args.precision {
        solve.precision_deg = p;
    }
    let result = match ranker::rank(&candidates, &profiles, &kinds, &topo, &solve) {
        Ok(r) => r,
        Err(e) => return invalid(e.to_string()),
    };
    emit(
        args.out.as_deref(),
        &format!("{}\n", serde_json::to_string_pretty(&result)?),
    )
}

fn cmd_simulate(cfg: &Effective, args: &SimulateArgs) -> Result<()> {
    let trace: Trace = read_json(&args.trace, "trace")?;
    let topo: Topology = read_json(&args.topology, "topology")?;
    if let Err(e) = topo.validate() {
        return invalid(e.to_string());
    }
    let profiles = load_profile_dir(&args.profiles)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let mut solve = cfg.solve_config();
    solve.seed = seed;
    let sim = SimConfig {
        scheduler: args.scheduler,
        seed,
        horizon_ms: args.horizon_ms,
        drift_sigma_frac: args.drift_sigma,
        n_max: args.n_max,
        solve,
        ..SimConfig::default()
    };
    let report = match simulator::run(&trace, &topo, &profiles, &sim) {
        Ok(r) => r,
        Err(simulator::SimError::Trace(e)) => return invalid(e.to_string()),
        Err(simulator::SimError::Topology(e)) => return invalid(e.to_string()),
        Err(simulator::SimError::ProfileMissing(k)) => {
            return invalid(format!("no profile for job kind {k}"))
        }
        Err(e) => return Err(e.into()),
    };
    // compact single-line JSON keeps reports byte-comparable
    emit(
        args.out.as_deref(),
        &format!("{}\n", serde_json::to_string(&report)?),
    )
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let first: SimReport = read_json(&args.reports[0], "report")?;
    if args.reports.len() == 1 {
        let summary = report::summarize(&first);
        if args.csv {
            print!("{}", report::to_csv(&summary));
        } else {
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        return Ok(());
    }
    let second: SimReport = read_json(&args.reports[1], "report")?;
    let comparison = report::compare(&first, &second);
    println!("{}", serde_json::to_string_pretty(&comparison)?);
    Ok(())
}
