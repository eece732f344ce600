//! (sparse tensor, occupancy grid) pairs for training and evaluation, read
//! from a directory or generated from random desk scenes.

use std::path::{Path, PathBuf};

use crate::config::SyntheticData;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::occupancy::{build_gt, LabeledSweepSequence, OccupancyGrid};
use crate::radar::{build_4drt, synth_adc, RadarConfig, RadarTensor4D};
use crate::reduction::{reduce, ReduceConfig, SparseRT};
use crate::sim::{random_scene, simulate, SceneFile};

#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub input: SparseRT,
    pub gt: OccupancyGrid,
}

/// SplitMix64 finaliser over a pair; used to derive per-frame and per-step
/// seeds from a run seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b9_b2e7);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Radar tensors for every frame of a scene plus the labelled sweeps.
pub fn simulate_tensors(
    scene: &SceneFile,
    radar: &RadarConfig,
) -> Result<(Vec<RadarTensor4D>, LabeledSweepSequence)> {
    let (specs, seq) = simulate(scene, radar)?;
    let tensors = specs
        .iter()
        .map(|s| {
            let adc = synth_adc(s, radar, mix_seed(scene.seed, s.frame_id as u64))?;
            Ok(build_4drt(&adc, radar))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tensors, seq))
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Frames from `random_scene`, `frames_per_scene` consecutive frames per
/// scene. Validation scenes use a disjoint seed range.
pub fn synthetic_dataset(
    data: &SyntheticData,
    split: Split,
    radar: &RadarConfig,
    grid: &GridSpec,
    reduce_cfg: &ReduceConfig,
) -> Result<Vec<Sample>> {
    let (n, base) = match split {
        Split::Train => (data.train_frames, data.seed),
        Split::Val => (data.val_frames, data.seed.wrapping_add(1 << 32)),
    };
    let fps = data.frames_per_scene;
    let mut out = Vec::with_capacity(n);
    for s in 0..n.div_ceil(fps) {
        let scene = random_scene(base.wrapping_add(s as u64), fps);
        let (tensors, seq) = simulate_tensors(&scene, radar)?;
        for (f, t) in tensors.iter().enumerate().take(n - out.len()) {
            out.push(Sample {
                name: format!("scene{s:03}_{}", frame_name(f)),
                input: reduce(t, reduce_cfg)?,
                gt: build_gt(&seq, f, grid)?,
            });
        }
    }
    Ok(out)
}

/// Every `*.4drt` in `dir` with a sibling `.grid`, sorted by name.
pub fn load_dir(dir: &Path, reduce_cfg: &ReduceConfig, grid: &GridSpec) -> Result<Vec<Sample>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "4drt"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let gp = p.with_extension("grid");
        if !gp.exists() {
            return Err(Error::invalid(format!("{} has no ground-truth grid {}", p.display(), gp.display())));
        }
        let gt = OccupancyGrid::load(&gp)?;
        if gt.spec != *grid {
            return Err(Error::invalid(format!("{} does not use the configured grid", gp.display())));
        }
        out.push(Sample {
            name: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            input: reduce(&RadarTensor4D::load(&p)?, reduce_cfg)?,
            gt,
        });
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("no .4drt frames in {}", dir.display())));
    }
    Ok(out)
}
