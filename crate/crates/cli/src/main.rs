use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use limforge::pyramid_advisor::RfSource;
use limforge::tiler::TileConfig;

mod commands;
mod error;
mod report;

use error::CliError;
use report::OutDir;

/// Object-scale statistics, receptive-field analysis, pyramid-level advice
/// and tiling for oriented-box aerial datasets.
#[derive(Parser)]
#[command(name = "limforge", version)]
struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "limforge-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TileMode {
    /// 256 px overlap, empty patches dropped.
    Train,
    /// No overlap, every patch kept.
    Val,
}

#[derive(Clone, Copy, ValueEnum)]
enum ErfMode {
    Random,
    Deterministic,
}

#[derive(Clone, Copy, ValueEnum)]
enum RfSourceArg {
    Trf,
    Erf,
}

#[derive(Subcommand)]
enum Command {
    /// Major/minor axis statistics per dataset plus a joint histogram.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Occupancy audit and pyramid-level recommendation.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        /// Architecture JSON (default: bundled reference backbone).
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 1024)]
        image_size: u32,
        #[arg(long, value_enum, default_value = "trf")]
        rf_source: RfSourceArg,
        /// ERF measurements: `limforge erf` reports or a level→diameter map.
        #[arg(long)]
        erf: Vec<PathBuf>,
    },
    /// Effective receptive field of one pyramid level.
    Erf {
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        level: String,
        #[arg(long, default_value_t = 64)]
        draws: usize,
        #[arg(long, default_value_t = 0.95)]
        mass: f64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, value_enum, default_value = "random")]
        mode: ErfMode,
        /// Channel cap of the measurement network.
        #[arg(long, default_value_t = 4)]
        channels: u32,
    },
    /// Cut scenes into fixed-size patches with re-projected boxes.
    Tile {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        mode: TileMode,
        #[arg(long)]
        window: Option<u32>,
        #[arg(long)]
        overlap: Option<u32>,
        #[arg(long)]
        keep_empty: bool,
        #[arg(long)]
        min_box_area_ratio: Option<f64>,
        #[arg(long)]
        pad_value: Option<u8>,
    },
    /// Finite-difference checks of the normalization kernels and the
    /// batch-independence experiment.
    Gncheck {
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
    /// Pooled-signal sweep for thin bars on a stride grid.
    Dilution {
        #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0, 8.0, 16.0, 17.34, 32.0])]
        widths: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![4, 8, 16, 32, 64])]
        strides: Vec<u32>,
        #[arg(long, default_value_t = 128.0)]
        length: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0])]
        angles: Vec<f64>,
        #[arg(long, default_value_t = 512)]
        canvas: u32,
        /// Centre the bar on the canvas instead of aligning it to the grid.
        #[arg(long)]
        centered: bool,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::internal(e.to_string()))?;
    }
    let out = OutDir::create(&cli.out)?;
    let seed = cli.seed;
    match cli.command {
        Command::Stats { manifest } => commands::stats(&manifest, &out, seed),
        Command::Audit { manifest, arch, image_size, rf_source, erf } => {
            let rf_source = match rf_source {
                RfSourceArg::Trf => RfSource::Trf,
                RfSourceArg::Erf => RfSource::Erf,
            };
            let args = commands::AuditArgs {
                manifest: &manifest,
                arch: arch.as_deref(),
                image_size,
                rf_source,
                erf_files: &erf,
            };
            commands::audit(&args, &out, seed)
        }
        Command::Erf { arch, level, draws, mass, image_size, mode, channels } => {
            let args = commands::ErfArgs {
                arch: arch.as_deref(),
                level: &level,
                draws,
                mass,
                input_size: image_size,
                deterministic: matches!(mode, ErfMode::Deterministic),
                channel_cap: channels,
            };
            commands::erf(&args, &out, seed)
        }
        Command::Tile { manifest, mode, window, overlap, keep_empty, min_box_area_ratio, pad_value } => {
            let mut cfg = match mode {
                TileMode::Train => TileConfig::train(),
                TileMode::Val => TileConfig::val(),
            };
            if let Some(w) = window {
                cfg.window = w;
            }
            if let Some(o) = overlap {
                cfg.overlap = o;
            }
            cfg.keep_empty |= keep_empty;
            if let Some(r) = min_box_area_ratio {
                cfg.min_box_area_ratio = r;
            }
            if let Some(p) = pad_value {
                cfg.pad_value = p;
            }
            commands::tile(&manifest, &cfg, &out, seed)
        }
        Command::Gncheck { inject_bug } => commands::gncheck(&out, seed, inject_bug),
        Command::Dilution { widths, strides, length, angles, canvas, centered } => {
            let args = commands::DilutionArgs {
                widths: &widths,
                strides: &strides,
                length,
                angles: &angles,
                canvas,
                centered,
            };
            commands::dilution(&args, &out, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(table) => {
            print!("{table}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("limforge: {e}");
            e.exit_code()
        }
    }
}
