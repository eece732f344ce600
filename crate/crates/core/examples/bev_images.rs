//! Bird's-eye-view PPMs of a ground-truth grid and of the sparse radar
//! tensor for the same frame.
//!
//!     cargo run --release --example bev_images -- [out_dir]

use std::path::PathBuf;

use radarocc::dataset::simulate_tensors;
use radarocc::geometry::GridSpec;
use radarocc::occupancy::build_gt;
use radarocc::radar::RadarConfig;
use radarocc::reduction::{reduce, ReduceConfig};
use radarocc::sim::random_scene;
use radarocc::viz::{grid_bev, sparse_bev};

fn main() -> radarocc::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("rocc_bev"), PathBuf::from);
    std::fs::create_dir_all(&out)?;
    let cfg = RadarConfig::desk();
    let (tensors, seq) = simulate_tensors(&random_scene(8, 1), &cfg)?;
    let gt = build_gt(&seq, 0, &GridSpec::desk())?;
    let sparse = reduce(&tensors[0], &ReduceConfig::sidelobe(32))?;

    let g = grid_bev(&gt);
    let s = sparse_bev(&sparse, cfg.az_bins);
    g.save(&out.join("gt.ppm"))?;
    s.save(&out.join("radar.ppm"))?;
    println!("{}x{} occupancy and {}x{} range-azimuth images in {}", g.width, g.height, s.width, s.height, out.display());
    Ok(())
}
