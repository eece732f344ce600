//! Spherical feature volumes, the voxel-to-cell mapping and the hFoV mask.
//!
//!     cargo run --example spherical_geometry

use radarocc::geometry::*;
use radarocc::radar::RadarConfig;

fn main() -> radarocc::Result<()> {
    let raw = RadarConfig::paper().axes().spherical();
    for stride in [1, 2, 4] {
        let s = raw.strided(stride);
        println!(
            "stride {stride}: extents {:?}, range step {:.2} m, azimuth step {:.2} deg",
            s.extents(),
            s.range.spacing,
            s.azimuth.spacing.to_degrees()
        );
    }

    let grid = GridSpec::default();
    let f_r = raw.strided(4);
    let (mut inside, mut total) = (0, 0);
    for i in 0..grid.num_voxels() {
        total += 1;
        inside += f_r.phi_map(grid.center_of(i)).is_some() as usize;
    }
    println!("grid {:?}: {inside}/{total} voxel centres map into the stride-4 volume", grid.shape());

    for p in [[10.0, 0.0, 0.0], [20.0, 15.0, 1.0], [5.0, -20.0, 0.0]] {
        match f_r.phi_map(p) {
            Some(f) => println!("  {p:?} -> cell ({:.2}, {:.2}, {:.2})", f[0], f[1], f[2]),
            None => println!("  {p:?} -> outside"),
        }
    }

    let mask = hfov_mask(&grid, 107.0)?;
    let frac = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
    println!("107 deg hFoV keeps {:.1}% of voxels", 100.0 * frac);

    let p = [12.3, -4.5, 1.2];
    let back = sph_to_cart(cart_to_sph(p)?);
    println!("round trip {p:?} -> {back:?}");
    Ok(())
}
