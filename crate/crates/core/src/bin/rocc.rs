use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use radarocc::commands::*;
use radarocc::config::RunConfig;
use radarocc::occupancy::DEFAULT_RANGES;
use radarocc::reduction::{DescriptorMode, SparsifyMode};
use radarocc::sim::SceneFile;
use radarocc::{Error, Result};

/// Radar occupancy experiments. `ROCC_SEED` overrides the configured seed.
#[derive(Parser)]
#[command(name = "rocc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a scene file into radar tensors, LiDAR sweeps and labels.
    Simulate {
        scene: PathBuf,
        #[arg(long, default_value = "desk")]
        radar: String,
        #[arg(long)]
        n_frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Doppler descriptors plus sparsification of one tensor.
    Reduce {
        input: PathBuf,
        #[arg(long, default_value_t = 250)]
        nr: usize,
        #[arg(long, value_enum, default_value = "sidelobe")]
        mode: Mode,
        #[arg(long)]
        avg_pool: bool,
        #[arg(long)]
        keep: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occupancy ground truth for every frame of a simulation directory.
    Gt {
        sim_dir: PathBuf,
        #[arg(long, default_value = "desk")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Train {
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many steps (the checkpoint can be resumed).
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Metric table of a checkpoint, or of prediction grids with `--pred`.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RANGES.to_vec())]
        ranges: Vec<f64>,
        /// Also write the CSV form here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Bird's-eye-view PPM of a grid or sparse tensor.
    Viz { input: PathBuf, #[arg(long)] out: PathBuf },
    Ablate { config: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    Sidelobe,
    Percentile,
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var("ROCC_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("ROCC_SEED `{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn run_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed_override()? {
        log::info!("seed {s} from ROCC_SEED");
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { scene, radar, n_frames, out } => {
            let mut s = SceneFile::load(&scene)?;
            if let Some(seed) = seed_override()? {
                s.seed = seed;
            }
            let paths = cmd_simulate(&s, &radar_from_arg(&radar)?, n_frames, &out)?;
            println!("wrote {} frames to {}", paths.len(), out.display());
        }
        Cmd::Reduce { input, nr, mode, avg_pool, keep, out } => {
            let mode = match mode {
                Mode::Sidelobe => SparsifyMode::Sidelobe,
                Mode::Percentile => SparsifyMode::Percentile,
            };
            let desc = if avg_pool { DescriptorMode::AvgPool } else { DescriptorMode::Doppler };
            let s = cmd_reduce(&input, &reduce_config(nr, mode, desc, keep), &out)?;
            println!("{} entries, counts per range {:?}", s.num_entries(), s.counts());
        }
        Cmd::Gt { sim_dir, grid, out } => {
            let out = out.unwrap_or_else(|| sim_dir.clone());
            let n = cmd_gt(&sim_dir, &grid_from_arg(&grid)?, &out)?.len();
            println!("wrote {n} grids to {}", out.display());
        }
        Cmd::Train { config, resume, stop_at } => {
            let cfg = run_config(&config)?;
            let out = cmd_train(&cfg, resume.as_deref(), stop_at)?;
            println!("{} steps; checkpoint {}", out.log.len(), out.last.display());
        }
        Cmd::Eval { config, checkpoint, data, pred, ranges, csv } => {
            let table = match (pred, checkpoint) {
                (Some(pred), _) => {
                    let data = data.ok_or_else(|| Error::Config("--pred needs --data".into()))?;
                    let hfov = match &config {
                        Some(c) => run_config(c)?.hfov_deg,
                        None => RunConfig::default().hfov_deg,
                    };
                    cmd_eval_grids(&pred, &data, hfov, &ranges)?
                }
                (None, Some(ck)) => {
                    let cfg = match &config {
                        Some(c) => run_config(c)?,
                        None => RunConfig::default(),
                    };
                    cmd_eval(&cfg, &ck, data.as_deref(), &ranges)?
                }
                (None, None) => return Err(Error::Config("eval needs --checkpoint or --pred".into())),
            };
            print!("{}", table.to_text());
            if let Some(p) = csv {
                std::fs::write(p, table.to_csv())?;
            }
        }
        Cmd::Viz { input, out } => cmd_viz(&input, &out)?,
        Cmd::Ablate { config } => {
            let cfg = run_config(&config)?;
            let rows = cmd_ablate(&cfg)?;
            print!("{}", ablation_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
