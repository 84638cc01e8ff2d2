use clap::{Parser, Subcommand};
use std::path::PathBuf;
use vch_cli::commands::{cmd_plotdata, cmd_run, cmd_verify, PlotdataOptions, RunOptions};

#[derive(Parser)]
#[command(
    name = "vch",
    version,
    about = "Cooperative localization of mobile agents via virtual convex hulls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_on_off(value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected `on` or `off`, got `{other}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trace/summary/slices/manifest files.
    Run {
        /// Named experiment preset (see `vch presets`).
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Flat key/value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed override (trial t of a batch uses seed + t).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of Monte Carlo trials.
        #[arg(long)]
        trials: Option<u32>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Step-count override.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Range-noise fraction override.
        #[arg(long)]
        noise_range: Option<f64>,
        /// Motion-noise fraction override.
        #[arg(long)]
        noise_motion: Option<f64>,
        /// Noise modifications on/off.
        #[arg(long, value_parser = parse_on_off)]
        modifications: Option<bool>,
        /// Verify the run's certificates immediately after it finishes.
        #[arg(long)]
        verify: bool,
    },
    /// Check the certificates of finished runs (error recursion, slice
    /// decomposition, trace consistency).
    Verify {
        /// Run output directories.
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Emit tidy long-format CSV (k,series,value) for plotting.
    Plotdata {
        /// One or more trace.csv files.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Optional slices.json to include slice-length series.
        #[arg(long)]
        slices: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in experiment presets.
    Presets,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            preset,
            config,
            seed,
            trials,
            out,
            max_steps,
            noise_range,
            noise_motion,
            modifications,
            verify,
        } => cmd_run(&RunOptions {
            preset,
            config_path: config,
            seed,
            trials,
            out_dir: out,
            max_steps,
            noise_range,
            noise_motion,
            modifications,
            verify,
        }),
        Command::Verify { run_dirs } => cmd_verify(&run_dirs),
        Command::Plotdata {
            traces,
            slices,
            out,
        } => cmd_plotdata(&PlotdataOptions {
            traces,
            slices,
            out,
        }),
        Command::Presets => {
            for name in vch_core::sim::PRESET_NAMES {
                let cfg = vch_core::sim::preset(name).expect("built-in preset");
                println!(
                    "{name}: N={} M={} steps={} noise=({}, {}) trials={}",
                    cfg.n_agents,
                    cfg.n_anchors,
                    cfg.max_steps,
                    cfg.noise.range_noise_frac,
                    cfg.noise.motion_noise_frac,
                    cfg.trials
                );
            }
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
