//! `biobot`: command-line front end for the simulator, the detection
//! pipeline and the mission demo.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! failure, 3 a checked target was missed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "biobot",
    version,
    about = "Cyborg-insect navigation and thermal human detection simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the simulation commands; flags override the config.
#[derive(Args, Clone, Default)]
pub struct SimArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write outputs here instead of only printing a summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print or write the preset arenas.
    Terrain {
        /// no_obstacle, low_obstacle, tall_wall, mock_disaster or all.
        #[arg(default_value = "all")]
        kind: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one navigation trial.
    Trial {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        terrain: Option<String>,
        #[arg(long)]
        algorithm: Option<String>,
        /// Use IMU speed estimates instead of motion capture.
        #[arg(long)]
        imu: bool,
        /// Also write trajectory.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Run Monte Carlo batches and compare algorithms across terrains.
    Batch {
        #[command(flatten)]
        sim: SimArgs,
        /// A terrain name or `all` (default: the config's terrain, else all).
        #[arg(long)]
        terrain: Option<String>,
        /// simple, predictive or all (default: the config's, else all).
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// Check the terrain-comparison bands; exit 3 on a miss.
        #[arg(long)]
        check: bool,
    },
    /// Fit behavior parameters to target statistics.
    Calibrate {
        /// Targets and search settings (TOML); defaults if omitted.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the fitted parameters.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic thermal dataset to disk.
    SynthData {
        /// Dataset recipe (TOML); overrides --split.
        #[arg(long)]
        recipe: Option<PathBuf>,
        /// train or validation.
        #[arg(long, default_value = "train")]
        split: String,
        /// Fraction of the full dataset size.
        #[arg(long, default_value_t = 0.05)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector.
    Train(commands::TrainArgs),
    /// Evaluate a detector on a validation set.
    Eval(commands::EvalArgs),
    /// Classify thermal image files.
    Detect {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Run the waypoint mission with 1 Hz detection.
    Mission {
        #[command(flatten)]
        sim: SimArgs,
        /// Scenario file (default: the reference scenario).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Detector model (default: the shipped model).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
        /// Check completion, human recall and false alarms; exit 3 on a miss.
        #[arg(long)]
        check: bool,
    },
    /// Draw an SVG from a CSV written by trial, batch or mission.
    Plot {
        /// trajectory, batch or timeline.
        kind: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Power budget and battery endurance.
    Power {
        /// Component list (TOML, `[[components]]` tables).
        #[arg(long)]
        components: Option<PathBuf>,
        #[arg(long, default_value_t = 120.0)]
        capacity_mah: f64,
        #[arg(long, default_value_t = 3.7)]
        voltage: f64,
    },
    /// Re-run the command recorded in a CSV header and compare outputs.
    Replay {
        input: PathBuf,
        /// Write the regenerated file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Terrain { kind, out } => commands::terrain(&kind, out.as_deref()),
        Command::Trial {
            sim,
            terrain,
            algorithm,
            imu,
            svg,
        } => commands::trial(&sim, terrain.as_deref(), algorithm.as_deref(), imu, svg),
        Command::Batch {
            sim,
            terrain,
            algorithm,
            trials,
            check,
        } => commands::batch(
            &sim,
            terrain.as_deref(),
            algorithm.as_deref(),
            trials,
            check,
        ),
        Command::Calibrate {
            targets,
            iterations,
            trials,
            seed,
            out,
        } => commands::calibrate(targets.as_deref(), iterations, trials, seed, out.as_deref()),
        Command::SynthData {
            recipe,
            split,
            scale,
            seed,
            out,
        } => commands::synth_data(recipe.as_deref(), &split, scale, seed, &out),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Detect { model, images } => commands::detect(model.as_deref(), &images),
        Command::Mission {
            sim,
            scenario,
            model,
            svg,
            check,
        } => commands::mission(&sim, scenario.as_deref(), model.as_deref(), svg, check),
        Command::Plot { kind, input, out } => commands::plot(&kind, &input, &out),
        Command::Power {
            components,
            capacity_mah,
            voltage,
        } => commands::power(components.as_deref(), capacity_mah, voltage),
        Command::Replay { input, out } => commands::replay(&input, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
