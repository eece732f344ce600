//! Occupancy labels from simulated LiDAR sweeps, and how well a frame's
//! labels predict the next frame's.
//!
//!     cargo run --release --example ground_truth -- [seed]

use radarocc::geometry::{hfov_mask, GridSpec};
use radarocc::occupancy::{build_gt, eval_metrics, DEFAULT_RANGES};
use radarocc::radar::RadarConfig;
use radarocc::sim::{random_scene, simulate};

fn main() -> radarocc::Result<()> {
    let seed = std::env::args().nth(1).map_or(4, |s| s.parse().expect("seed"));
    let scene = random_scene(seed, 4);
    let (_, seq) = simulate(&scene, &RadarConfig::desk())?;
    let grid = GridSpec::desk();
    let mask = hfov_mask(&grid, 107.0)?;
    let ranges = [DEFAULT_RANGES[0]];

    let gts = (0..seq.frames.len())
        .map(|t| build_gt(&seq, t, &grid))
        .collect::<radarocc::Result<Vec<_>>>()?;
    for (t, (g, f)) in gts.iter().zip(&seq.frames).enumerate() {
        let [free, bg, fg] = g.counts();
        println!(
            "frame {t}: {} lidar points, {} boxes -> free {free}, background {bg}, foreground {fg}",
            f.points.len(),
            f.boxes.len()
        );
    }
    // labels of frame t used as a prediction for frame t + 1
    for t in 0..gts.len() - 1 {
        let m = eval_metrics(&gts[t], &gts[t + 1], &mask, &ranges)?.rows[0];
        println!("frame {t} vs {}: IoU {:?}, FG IoU {:?}", t + 1, m.iou, m.fg_iou);
    }
    Ok(())
}
