use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cyclosky::cyclospec::{corr_matrix, cyclic_corr_matrix};
use cyclosky::formats::SnapshotFile;
use cyclosky::imaging::{cyclic_skymap, locate_peaks, skymap, SkymapGrid};
use cyclosky::scenario::{self, OutputDir, RunOptions, ScenarioConfig};
use cyclosky::sched::Mode;
use cyclosky::tracker::TrackLog;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Cyclostationary RFI detection, imaging, tracking and scheduling.
#[derive(Parser)]
#[command(name = "cyclosky", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a scenario file.
    Run(RunArgs),
    /// Check a scenario file and exit.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Image a saved snapshot.
    Skymap(SkymapArgs),
    /// Plan observations from a saved track log.
    Schedule(ScheduleArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the scenario).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (overrides the scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the scenario and exit without writing anything.
    #[arg(long)]
    validate_only: bool,
    /// Scheduler mode (overrides the scenario).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Also write each frame's antenna data.
    #[arg(long)]
    save_snapshot: bool,
}

#[derive(Args)]
struct SkymapArgs {
    /// Snapshot JSON written by `run --save-snapshot`.
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long, default_value = "skymap_out")]
    out: PathBuf,
    /// Also image the cyclic matrix at this cyclic frequency (Hz).
    #[arg(long)]
    alpha: Option<f64>,
    /// Use the conjugate cyclic matrix.
    #[arg(long, requires = "alpha")]
    conjugate: bool,
    /// Pixels per axis over [-1, 1].
    #[arg(long, default_value_t = 128)]
    grid: usize,
    #[arg(long, default_value_t = 4)]
    max_peaks: usize,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Scenario file providing the schedule section.
    #[arg(long)]
    config: PathBuf,
    /// Track log (tracks/frame_NNNN.json).
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long, default_value = "schedule_out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Slot-0 time; defaults to the scenario value, then the log time.
    #[arg(long)]
    t0: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Exact,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Greedy => Mode::Greedy,
            ModeArg::Exact => Mode::Exact,
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config_err(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(path: &Path, seed: Option<u64>, mode: Option<ModeArg>) -> Result<(ScenarioConfig, Vec<u8>), Failure> {
    let (mut config, bytes) = ScenarioConfig::load(path).map_err(config_err)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(mode) = mode {
        match config.schedule.as_mut() {
            Some(s) => s.params.mode = mode.into(),
            None => return Err(Failure::Config("schedule: --mode needs a schedule section".into())),
        }
    }
    config.validate().map_err(config_err)?;
    Ok((config, bytes))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let path = args
        .config
        .ok_or_else(|| Failure::Config("--config <path> is required".into()))?;
    let (config, bytes) = load_config(&path, args.seed, args.mode)?;
    if args.validate_only {
        println!("{}: ok", path.display());
        return Ok(());
    }
    let out = args.out.unwrap_or_else(|| config.output_dir.clone());
    let summary = scenario::run(
        &config,
        &bytes,
        &out,
        RunOptions {
            save_snapshots: args.save_snapshot,
        },
    )
    .map_err(runtime_err)?;
    println!(
        "wrote {} files to {} ({} detections, {} active tracks)",
        summary.files.len(),
        out.display(),
        summary.detections,
        summary.tracks.len()
    );
    Ok(())
}

fn cmd_skymap(args: SkymapArgs) -> Result<(), Failure> {
    let text =
        fs::read_to_string(&args.snapshot).map_err(|e| config_err(format!("{}: {e}", args.snapshot.display())))?;
    let file: SnapshotFile =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", args.snapshot.display())))?;
    let (geometry, snap) = file.into_parts().map_err(config_err)?;
    let grid = SkymapGrid {
        n_l: args.grid,
        n_m: args.grid,
        ..Default::default()
    };
    grid.validate().map_err(|e| config_err(format!("--grid: {e}")))?;
    if args.max_peaks == 0 {
        return Err(Failure::Config("--max-peaks: must be at least 1".into()));
    }

    let mut dir = OutputDir::new(&args.out);
    let classical = skymap(&corr_matrix(&snap), &geometry, &grid).map_err(runtime_err)?;
    dir.write_skymap("classical", &classical).map_err(runtime_err)?;
    let mut peaks = serde_json::Map::new();
    peaks.insert(
        "classical".into(),
        serde_json::to_value(locate_peaks(&classical, args.max_peaks).map_err(runtime_err)?).map_err(runtime_err)?,
    );
    if let Some(alpha) = args.alpha {
        let ra = cyclic_corr_matrix(&snap, alpha, args.conjugate).map_err(config_err)?;
        let map = cyclic_skymap(&ra, &geometry, &grid).map_err(runtime_err)?;
        let name = if args.conjugate { "conjugate" } else { "cyclic" };
        dir.write_skymap(&format!("{name}_alpha_{alpha}"), &map)
            .map_err(runtime_err)?;
        peaks.insert(
            name.into(),
            serde_json::to_value(locate_peaks(&map, args.max_peaks).map_err(runtime_err)?).map_err(runtime_err)?,
        );
    }
    dir.write_json("peaks.json", &peaks).map_err(runtime_err)?;
    println!("wrote {} files to {}", dir.files().len(), args.out.display());
    Ok(())
}

fn cmd_schedule(args: ScheduleArgs) -> Result<(), Failure> {
    let (config, _) = load_config(&args.config, None, args.mode)?;
    let sc = config
        .schedule
        .as_ref()
        .ok_or_else(|| Failure::Config("schedule: section is required".into()))?;
    let text = fs::read_to_string(&args.tracks).map_err(|e| config_err(format!("{}: {e}", args.tracks.display())))?;
    let log: TrackLog =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", args.tracks.display())))?;
    let t0 = args.t0.or(sc.t0_s).unwrap_or(log.time);
    let (sched, mask) = scenario::plan(sc, &log.tracks(), t0).map_err(runtime_err)?;
    let mut dir = OutputDir::new(&args.out);
    dir.write_json("schedule.json", &sched).map_err(runtime_err)?;
    dir.write("flagmask.csv", mask.to_csv().as_bytes())
        .map_err(runtime_err)?;
    println!(
        "scheduled {} of {} programs, total risk {}",
        sc.programs.len() - sched.unscheduled.len(),
        sc.programs.len(),
        sched.total_risk
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Run(args)) => cmd_run(args),
        Some(Command::Validate { config }) => cmd_run(RunArgs {
            config: Some(config),
            validate_only: true,
            ..Default::default()
        }),
        Some(Command::Skymap(args)) => cmd_skymap(args),
        Some(Command::Schedule(args)) => cmd_schedule(args),
        None => cmd_run(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
