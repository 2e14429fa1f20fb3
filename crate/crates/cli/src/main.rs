use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

use commands::{Context, Failure, Output};

#[derive(Parser)]
#[command(name = "rma", version, about = "Random multiple access analysis, simulation and design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo trials (simulate, sweep).
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "rma-out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DynamicsFlags {
    /// Mean packet arrivals per frame.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    /// `rma`, `dab-rbs:M` or `dab-fraction:F`.
    #[arg(long)]
    scheme: Option<String>,
    /// `fixed:N` or `uniform:LO:HI`.
    #[arg(long)]
    rbs: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Density evolution for a scenario and access matrix.
    Analyze(Common),
    /// Monte-Carlo frame simulation.
    Simulate(Common),
    /// Search for the access matrix meeting the group targets.
    Design(Common),
    /// Multi-frame queueing with access barring.
    Dynamics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: DynamicsFlags,
    },
    /// Static load capacity or dynamic stable arrival rate.
    Capacity(Common),
    /// Exact error by exhaustive enumeration (tiny instances only).
    Oracle(Common),
    /// Single-group grid over g or load.
    Sweep(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, flags) = match cli.command {
        Command::Analyze(c) => ("analyze", c, None),
        Command::Simulate(c) => ("simulate", c, None),
        Command::Design(c) => ("design", c, None),
        Command::Dynamics { common, flags } => ("dynamics", common, Some(flags)),
        Command::Capacity(c) => ("capacity", c, None),
        Command::Oracle(c) => ("oracle", c, None),
        Command::Sweep(c) => ("sweep", c, None),
    };
    let started = Instant::now();

    let result = load_config(common.config.as_deref()).and_then(|config| {
        let ctx = Context { config, seed: common.seed, trials: common.trials };
        with_jobs(common.jobs, || match name {
            "analyze" => commands::analyze(&ctx),
            "simulate" => commands::simulate(&ctx),
            "design" => commands::design(&ctx),
            "dynamics" => commands::dynamics(&ctx, &to_overrides(flags.as_ref().unwrap())),
            "capacity" => commands::capacity(&ctx),
            "oracle" => commands::oracle(&ctx),
            "sweep" => commands::sweep(&ctx),
            _ => unreachable!(),
        })
    });

    let (output, code) = match result {
        Ok(out) => (Some(out), 0),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            (None, 2)
        }
        Err(Failure::Infeasible(out)) => {
            eprintln!("error: the design targets are infeasible");
            (Some(out), 3)
        }
        Err(Failure::Runtime(msg, out)) => {
            eprintln!("error: {msg}");
            (out, 1)
        }
    };
    if let Some(out) = output {
        if let Err(e) = write_outputs(name, &common, &out, started) {
            eprintln!("error: writing {}: {e}", common.out.display());
            return ExitCode::from(1);
        }
        print!("{}", out.stdout);
    }
    ExitCode::from(code)
}

fn to_overrides(f: &DynamicsFlags) -> commands::DynamicsOverrides {
    commands::DynamicsOverrides { lambda: f.lambda, frames: f.frames, scheme: f.scheme.clone(), rbs: f.rbs.clone() }
}

fn load_config(path: Option<&Path>) -> Result<rma_core::config::RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(rma_core::config::RunConfig::parse("").expect("empty config parses"));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    rma_core::config::RunConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T, Failure> + Send) -> Result<T, Failure> {
    match jobs {
        None => f(),
        Some(0) => Err(Failure::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Runtime(format!("thread pool: {e}"), None))?;
            pool.install(f)
        }
    }
}

fn write_outputs(name: &str, common: &Common, out: &Output, started: Instant) -> std::io::Result<()> {
    std::fs::create_dir_all(&common.out)?;
    for (file, contents) in &out.files {
        std::fs::write(common.out.join(file), contents)?;
    }
    let m = manifest::RunManifest {
        subcommand: name.to_string(),
        config: common.config.as_ref().map(|p| p.display().to_string()),
        seed: common.seed,
        trials: common.trials,
        jobs: common.jobs,
        out: common.out.display().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: out.files.iter().map(|(f, _)| f.clone()).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    std::fs::write(common.out.join(manifest::FILE_NAME), m.to_json())
}
