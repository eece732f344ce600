//! The experiment commands behind the `rocc` binary. Each one is a plain
//! function so it can be driven from tests and examples as well.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, ABLATION_NAMES};
use crate::dataset::{frame_name, load_dir, simulate_tensors, synthetic_dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::geometry::{hfov_mask, GridSpec};
use crate::network::Profile;
use crate::occupancy::{build_gt, LabeledSweepSequence, MetricAccumulator, MetricTable, OccupancyGrid, GRID_MAGIC};
use crate::radar::RadarConfig;
use crate::reduction::{reduce, DescriptorMode, ReduceConfig, SparseRT, SparsifyMode, SPARSE_MAGIC};
use crate::sim::{load_points, save_points, SceneFile};
use crate::radar::RadarTensor4D;
use crate::tensor::Graph;
use crate::train::{evaluate, load_model_params, run_training, TrainOutputs};
use crate::viz::{grid_bev, sparse_bev};

pub const SEQUENCE_FILE: &str = "sequence.json";

/// Radar constants from a profile name or a JSON file.
pub fn radar_from_arg(arg: &str) -> Result<RadarConfig> {
    let cfg = match arg {
        "desk" => RadarConfig::desk(),
        "paper" | "paper-shape" => RadarConfig::paper(),
        path => serde_json::from_str(&std::fs::read_to_string(path)?)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Grid from a profile name or a JSON file.
pub fn grid_from_arg(arg: &str) -> Result<GridSpec> {
    let g = match arg {
        "desk" => GridSpec::desk(),
        "paper" | "paper-shape" => GridSpec::default(),
        path => serde_json::from_str(&std::fs::read_to_string(path)?)?,
    };
    g.validate()?;
    Ok(g)
}

/// Writes `frame_NNNN.4drt` and `frame_NNNN.lpts` per frame plus the
/// labelled `sequence.json`. Returns the tensor paths.
pub fn cmd_simulate(
    scene: &SceneFile,
    radar: &RadarConfig,
    n_frames: Option<usize>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut scene = scene.clone();
    if let Some(n) = n_frames {
        scene.n_frames = n;
    }
    std::fs::create_dir_all(out_dir)?;
    let (tensors, seq) = simulate_tensors(&scene, radar)?;
    let mut paths = Vec::with_capacity(tensors.len());
    for (i, (t, f)) in tensors.iter().zip(&seq.frames).enumerate() {
        let p = out_dir.join(format!("{}.4drt", frame_name(i)));
        t.save(&p)?;
        save_points(&out_dir.join(format!("{}.lpts", frame_name(i))), &f.points)?;
        paths.push(p);
    }
    std::fs::write(out_dir.join(SEQUENCE_FILE), serde_json::to_string_pretty(&seq)?)?;
    log::info!("simulated {} frames into {}", paths.len(), out_dir.display());
    Ok(paths)
}

pub fn cmd_reduce(input: &Path, cfg: &ReduceConfig, out: &Path) -> Result<SparseRT> {
    let s = reduce(&RadarTensor4D::load(input)?, cfg)?;
    s.save(out)?;
    log::info!("{}: {} entries over {} ranges", out.display(), s.num_entries(), s.range_bins());
    Ok(s)
}

/// Reads a simulation directory back: the sweep sequence with points.
pub fn load_sequence(sim_dir: &Path) -> Result<LabeledSweepSequence> {
    let mut seq: LabeledSweepSequence =
        serde_json::from_str(&std::fs::read_to_string(sim_dir.join(SEQUENCE_FILE))?)?;
    for (i, f) in seq.frames.iter_mut().enumerate() {
        f.points = load_points(&sim_dir.join(format!("{}.lpts", frame_name(i))))?;
    }
    Ok(seq)
}

/// Builds `frame_NNNN.grid` for every frame of a simulation directory.
pub fn cmd_gt(sim_dir: &Path, grid: &GridSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let seq = load_sequence(sim_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for (i, f) in seq.frames.iter().enumerate() {
        let g = build_gt(&seq, f.frame_id, grid)?;
        let p = out_dir.join(format!("{}.grid", frame_name(i)));
        g.save(&p)?;
        out.push(p);
    }
    Ok(out)
}

/// Training and validation sets for a run configuration.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if cfg.profile == Profile::PaperShape {
        return Err(Error::Config("the paper-shape profile is for shape checks only and cannot be trained".into()));
    }
    let (radar, grid, rc) = (cfg.radar(), cfg.net().grid, cfg.reduce());
    let train = match &cfg.train_dir {
        Some(d) => load_dir(d, &rc, &grid)?,
        None => synthetic_dataset(&cfg.synthetic, Split::Train, &radar, &grid, &rc)?,
    };
    let val = match (&cfg.val_dir, &cfg.train_dir) {
        (Some(d), _) => load_dir(d, &rc, &grid)?,
        (None, None) => synthetic_dataset(&cfg.synthetic, Split::Val, &radar, &grid, &rc)?,
        (None, Some(_)) => Vec::new(),
    };
    Ok((train, val))
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, stop_at: Option<usize>) -> Result<TrainOutputs> {
    let (train, val) = load_datasets(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    let (_, out) = run_training(cfg, &train, &val, resume, stop_at)?;
    Ok(out)
}

/// Metrics of a checkpoint on a dataset directory, or on the configured
/// validation set when `data` is `None`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>, ranges: &[f64]) -> Result<MetricTable> {
    let net = crate::network::Network::new(cfg.net())?;
    let mut params = net.init_params(cfg.seed)?;
    params.load_values_from(&load_model_params(checkpoint)?)?;
    let samples = match data {
        Some(d) => load_dir(d, &cfg.reduce(), &net.cfg.grid)?,
        None => load_datasets(cfg)?.1,
    };
    if samples.is_empty() {
        return Err(Error::invalid("no evaluation frames"));
    }
    evaluate(&net, &params, &samples, cfg.hfov_deg, ranges)
}

/// Compares `*.grid` predictions with same-named ground-truth grids.
pub fn cmd_eval_grids(pred_dir: &Path, gt_dir: &Path, hfov_deg: f64, ranges: &[f64]) -> Result<MetricTable> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(gt_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "grid"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!("no .grid files in {}", gt_dir.display())));
    }
    let mut acc = MetricAccumulator::new(ranges);
    for gp in names {
        let gt = OccupancyGrid::load(&gp)?;
        let pred = OccupancyGrid::load(&pred_dir.join(gp.file_name().expect("file")))?;
        acc.add(&pred, &gt, &hfov_mask(&gt.spec, hfov_deg)?)?;
    }
    Ok(acc.table())
}

/// Renders a grid or sparse tensor file, chosen by its magic bytes.
pub fn cmd_viz(input: &Path, out: &Path) -> Result<()> {
    let mut magic = [0u8; 8];
    {
        use std::io::Read;
        std::fs::File::open(input)?.read_exact(&mut magic).map_err(|_| Error::Format {
            path: input.to_path_buf(),
            reason: "file too short".into(),
        })?;
    }
    let img = if &magic == GRID_MAGIC {
        grid_bev(&OccupancyGrid::load(input)?)
    } else if &magic == SPARSE_MAGIC {
        let s = SparseRT::load(input)?;
        let az = s.ranges.iter().flatten().map(|e| e.az as usize + 1).max().unwrap_or(1);
        sparse_bev(&s, az)
    } else {
        return Err(Error::Format {
            path: input.to_path_buf(),
            reason: "neither an occupancy grid nor a sparse tensor".into(),
        });
    };
    img.save(out)?;
    Ok(())
}

pub fn ablation_label(name: Option<&str>) -> String {
    name.map_or_else(|| "Ours".to_string(), |n| format!("w/o {n}"))
}

/// FNV-1a over the bit patterns of eval-mode logits on one input.
pub fn logit_digest(cfg: &RunConfig, params: &crate::tensor::ParamStore, input: &SparseRT) -> Result<u64> {
    let net = crate::network::Network::new(cfg.net())?;
    let mut g = Graph::eval();
    let z = net.forward(&mut g, params, input)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in g.value(z).data() {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub config: RunConfig,
    pub metrics: MetricTable,
    pub digest: u64,
}

/// Trains and evaluates the full model and each requested ablation, in the
/// order DBD, SSS, SFE, RWA. Writes `ablation.csv` into `cfg.out_dir`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let mut variants = vec![(None, cfg.clone())];
    for name in ABLATION_NAMES.iter().filter(|n| cfg.ablate.iter().any(|a| a == *n)) {
        variants.push((Some(*name), cfg.ablated(name)?));
    }
    let mut rows = Vec::new();
    for (name, mut c) in variants {
        let label = ablation_label(name);
        c.out_dir = cfg.out_dir.join(label.replace("w/o ", "wo_").to_lowercase());
        let (train, val) = load_datasets(&c)?;
        let (tr, _) = run_training(&c, &train, &val, None, None)?;
        let eval_set = if val.is_empty() { &train } else { &val };
        let metrics = evaluate(&tr.net, &tr.params, eval_set, c.hfov_deg, &c.ranges)?;
        let digest = logit_digest(&c, &tr.params, &eval_set[0].input)?;
        log::info!("{label}: IoU {:?}", metrics.rows[0].iou);
        rows.push(AblationRow {
            label,
            config: c,
            metrics,
            digest,
        });
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v}"))
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("label,rwa,dbd,sss,sfe");
    if let Some(r) = rows.first() {
        for m in &r.metrics.rows {
            let _ = write!(out, ",iou@{0},miou@{0},bg_iou@{0},fg_iou@{0}", m.range);
        }
    }
    out.push_str(",logit_digest\n");
    for r in rows {
        let t = &r.config.toggles;
        let sss = match t.sss {
            SparsifyMode::Sidelobe => "sidelobe",
            SparsifyMode::Percentile => "percentile",
        };
        let sfe = match t.sfe {
            crate::network::Encoding::Spherical => "spherical",
            crate::network::Encoding::Cartesian => "cartesian",
        };
        let _ = write!(out, "{},{},{},{sss},{sfe}", r.label, t.rwa, t.dbd);
        for m in &r.metrics.rows {
            let _ = write!(out, ",{},{},{},{}", opt(m.iou), opt(m.miou), opt(m.bg_iou), opt(m.fg_iou));
        }
        let _ = writeln!(out, ",{:016x}", r.digest);
    }
    out
}

/// Reduction settings from command-line style values.
pub fn reduce_config(n_r: usize, mode: SparsifyMode, descriptor: DescriptorMode, keep: Option<f64>) -> ReduceConfig {
    ReduceConfig {
        n_r,
        mode,
        descriptor,
        keep_fraction: keep,
    }
}
