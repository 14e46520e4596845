use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pcflow::acquisition::{acquire_series, load_series, save_series, Mode};
use pcflow::harness::export::{write_sweep, write_validation};
use pcflow::harness::gate::{sweep_checks, validation_checks, Check};
use pcflow::harness::render::render_dir;
use pcflow::harness::{analyze_series, run_pixel_sweep, run_validation, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pcflow", version, about = "Phase-contrast flow phantom simulator and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero all acquisition noise.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cine,
    Epi,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cine => Mode::Cine,
            ModeArg::Epi => Mode::Epi,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Acquire one image series and write it to a directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "epi")]
        mode: ModeArg,
    },
    /// Measure tube-1 in a saved series: flow curve, and cycle for EPI.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Series directory written by `simulate`.
        #[arg(long)]
        series: PathBuf,
    },
    /// Repeated CINE/EPI validation at the default parameters.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Exit with status 2 when an acceptance check fails.
        #[arg(long)]
        gate: bool,
    },
    /// Pixel-size sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gate: bool,
    },
    /// Draw SVG figures from the CSVs in a directory.
    Render {
        #[arg(long)]
        input: PathBuf,
    },
}

type BoxError = Box<dyn std::error::Error>;

fn load_config(common: &Common) -> Result<ExperimentConfig, BoxError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.experiment.base_seed = seed;
    }
    if common.noiseless {
        config.experiment.noiseless = true;
    }
    if let Some(out) = &common.out {
        config.experiment.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn save_config(config: &ExperimentConfig, dir: &Path) -> Result<(), BoxError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), config.to_toml_string())?;
    Ok(())
}

fn report_checks(checks: &[Check]) -> bool {
    for c in checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn run(cli: Cli) -> Result<bool, BoxError> {
    match cli.command {
        Command::Simulate { common, mode } => {
            let config = load_config(&common)?;
            let scene = config.scene()?;
            let params = config.params(mode.into(), config.experiment.base_seed);
            let series = acquire_series(&scene, &params)?;
            let dir = &config.experiment.output_dir;
            save_series(&series, dir)?;
            println!("wrote {} frames to {}", series.len(), dir.display());
        }
        Command::Analyze { common, series } => {
            let config = load_config(&common)?;
            let scene = config.scene()?;
            let series = load_series(&series)?;
            let analysis = analyze_series(
                &series,
                scene.tube1().center,
                scene.static_tube().center,
                scene.waveform().period(),
            )?;
            let dir = &config.experiment.output_dir;
            fs::create_dir_all(dir)?;
            analysis
                .curve
                .write_csv(BufWriter::new(File::create(dir.join("flow_curve.csv"))?))?;
            if let Some(cycle) = &analysis.cycle {
                cycle.write_csv(BufWriter::new(File::create(dir.join("cycle.csv"))?))?;
            }
            println!(
                "{}: area {:.2} mm², mean flow {:.1} mm³/s",
                analysis.mode,
                analysis.area,
                analysis.mean_flow()
            );
        }
        Command::Validate { common, gate } => {
            let config = load_config(&common)?;
            let dir = config.experiment.output_dir.clone();
            let report = run_validation(&config)?;
            save_config(&config, &dir)?;
            write_validation(&report, &dir)?;
            render_dir(&dir)?;
            let ok = report_checks(&validation_checks(&report));
            println!("outputs in {}", dir.display());
            return Ok(ok || !gate);
        }
        Command::Sweep { common, gate } => {
            let config = load_config(&common)?;
            let dir = config.experiment.output_dir.clone();
            let records = run_pixel_sweep(&config)?;
            save_config(&config, &dir)?;
            write_sweep(&records, &dir)?;
            render_dir(&dir)?;
            let failed = records.iter().filter(|r| !r.succeeded()).count();
            println!("{} cells, {failed} failed", records.len());
            let ok = report_checks(&sweep_checks(&records));
            println!("outputs in {}", dir.display());
            return Ok(ok || !gate);
        }
        Command::Render { input } => {
            for path in render_dir(&input)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
