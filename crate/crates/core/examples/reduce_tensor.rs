//! Doppler descriptors and the two sparsification modes on a simulated
//! frame, with per-range coverage.
//!
//!     cargo run --release --example reduce_tensor -- [seed]

use radarocc::dataset::simulate_tensors;
use radarocc::radar::RadarConfig;
use radarocc::reduction::*;
use radarocc::sim::random_scene;

fn main() -> radarocc::Result<()> {
    let seed = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed"));
    let cfg = RadarConfig::desk();
    let (tensors, _) = simulate_tensors(&random_scene(seed, 1), &cfg)?;
    let rt = &tensors[0];
    let vol = encode_descriptors(rt)?;
    println!(
        "4DRT {:?}: {} values -> descriptors {:?}: {} values (x{})",
        rt.shape(),
        rt.power.len(),
        vol.shape(),
        vol.len(),
        rt.power.len() / vol.len()
    );

    let n_r = 32;
    let side = sidelobe_sparsify(&vol, n_r)?;
    let keep = side.num_entries() as f64 / (vol.len() / CHANNELS) as f64;
    let pct = percentile_sparsify(&vol, keep)?;
    for (name, s) in [("sidelobe", &side), ("percentile", &pct)] {
        let (counts, h) = range_coverage(s);
        let busy = counts.iter().filter(|&&c| c > 0).count();
        println!(
            "{name:>10}: {} cells, {busy}/{} ranges covered, entropy {h:.3}, {} bytes",
            s.num_entries(),
            counts.len(),
            s.to_bytes().len()
        );
    }
    let strongest = side.ranges.iter().flatten().map(SparseEntry::mean_power).fold(0.0, f64::max);
    println!("strongest retained mean power {strongest:.3e}");
    Ok(())
}
