use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};

use pano_orient::compose::{compose, Format, FormatSpec};
use pano_orient::geometry::{slice_all, CameraModel, EquirectPanorama, SlicePlan};
use pano_orient::harness::{
    baseline_rows, build_dataset, evaluate_model, matrix_entries, run_matrix, train, write_results,
    Dataset, ExperimentConfig, MatrixPlan,
};
use pano_orient::imaging::{read_ppm, write_ppm};
use pano_orient::neural::{load_params, save_params};
use pano_orient::Result;

/// Same-moment oracle set size in locations (8 samples each).
const SAME_MOMENT_LOCATIONS: usize = 25;

#[derive(Parser)]
#[command(
    name = "pano-orient",
    version,
    about = "Orientation from panorama-sliced context views"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset: manifest plus panoramas and road masks.
    GenData {
        #[arg(long)]
        locations: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut an equirectangular panorama into evenly spaced pinhole slices.
    Slice {
        #[arg(long)]
        pano: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 90.0)]
        hfov: f64,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose a target and the contexts in a directory (sorted by name).
    Compose {
        #[arg(long)]
        format: Format,
        #[arg(long)]
        cell: usize,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration; writes MODEL and MODEL.config.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model under the given treatment flags.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        style: OnOff,
        #[arg(long, value_enum)]
        seg: OnOff,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment grid and write one row per evaluation.
    Matrix {
        #[command(flatten)]
        io: DataOut,
        #[arg(long, default_value = "full")]
        plan: MatrixPlan,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Override the per-experiment epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Record wall-clock seconds (otherwise written as 0).
        #[arg(long)]
        timing: bool,
    },
    /// NCC oracle over the same test sets.
    Baseline {
        #[command(flatten)]
        io: DataOut,
        #[arg(long, default_value = "d1")]
        format: Format,
    },
}

#[derive(Args)]
struct DataOut {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn get(self) -> bool {
        matches!(self, OnOff::On)
    }
}

fn sidecar(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    info!("loading dataset from {}", dir.display());
    Dataset::load(dir)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            locations,
            seed,
            out,
        } => {
            let ds = build_dataset(locations, seed, &out)?;
            info!(
                "wrote {} locations to {}",
                ds.manifest.locations.len(),
                out.display()
            );
        }
        Command::Slice {
            pano,
            n,
            hfov,
            size,
            out,
        } => {
            let pano = EquirectPanorama::new(read_ppm(&pano)?, 0.0)?;
            let cam = CameraModel::new(hfov, size, size)?;
            fs::create_dir_all(&out)?;
            for (k, img) in slice_all(&pano, &SlicePlan::new(n)?, &cam)
                .iter()
                .enumerate()
            {
                write_ppm(out.join(format!("slice_{k:02}.ppm")), img)?;
            }
        }
        Command::Compose {
            format,
            cell,
            target,
            contexts,
            out,
        } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&contexts)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            paths.retain(|p| p.extension().is_some_and(|x| x == "ppm"));
            paths.sort();
            let ctx = paths.iter().map(read_ppm).collect::<Result<Vec<_>>>()?;
            let ci = compose(FormatSpec::new(format, cell)?, &read_ppm(&target)?, &ctx)?;
            ci.write(&out)?;
        }
        Command::Train { config, data, out } => {
            let cfg = ExperimentConfig::read(&config)?;
            let ds = load_dataset(&data)?;
            let (params, log) = train(&cfg, &ds)?;
            if let Some(l) = log.epoch_loss.last() {
                info!("final epoch loss {l:.4}");
            }
            save_params(&out, &cfg.model, &params)?;
            fs::write(sidecar(&out), cfg.to_json()?)?;
        }
        Command::Eval {
            model,
            data,
            style,
            seg,
            out,
        } => {
            let mut cfg = ExperimentConfig::read(&sidecar(&model))?;
            cfg.use_style = style.get();
            cfg.use_seg = seg.get();
            let params = load_params(&model, &cfg.model)?;
            let ds = load_dataset(&data)?;
            write_results(&[evaluate_model(&cfg, &params, &ds)?], &out)?;
        }
        Command::Matrix {
            io,
            plan,
            seeds,
            epochs,
            timing,
        } => {
            let ds = load_dataset(&io.data)?;
            let entries = matrix_entries(plan, &seeds, epochs)?;
            write_results(&run_matrix(&entries, &ds, timing)?, &io.out)?;
        }
        Command::Baseline { io, format } => {
            let ds = load_dataset(&io.data)?;
            let rows = baseline_rows(&ds, FormatSpec::toy(format), SAME_MOMENT_LOCATIONS)?;
            write_results(&rows, &io.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            LevelFilter::Info
        } else {
            LevelFilter::Warn
        })
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
