//! One scatterer through ADC synthesis, the FFT chain and CFAR.
//!
//!     cargo run --release --example radar_chain -- [range] [azimuth_deg] [velocity]

use radarocc::geometry::{sph_to_cart, Spherical};
use radarocc::radar::*;

fn main() -> radarocc::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("number")).collect();
    let (range, az, v) = (
        args.first().copied().unwrap_or(18.0),
        args.get(1).copied().unwrap_or(20.0),
        args.get(2).copied().unwrap_or(1.5),
    );
    let cfg = RadarConfig::desk();
    let target = Scatterer {
        position: sph_to_cart(Spherical { range, azimuth: az.to_radians(), elevation: 0.05 }),
        amplitude: 1.0,
        radial_velocity: v,
    };
    let scene = SceneSpec { scatterers: vec![target], ..Default::default() };
    let adc = synth_adc(&scene, &cfg, 1)?;
    let rt = build_4drt(&adc, &cfg);
    println!("ADC cube {:?} -> 4DRT {:?}", adc.dims, rt.shape());

    let d = rt.power.data();
    let best = (0..d.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b });
    let [_, an, en, dn] = rt.shape();
    let (r, a, e, k) = (best / (an * en * dn), best / (en * dn) % an, best / dn % en, best % dn);
    let axes = &rt.axes;
    println!(
        "peak at bin ({r}, {a}, {e}, {k}): range {:.2} m, azimuth {:.1} deg, velocity {:+.2} m/s",
        axes.range.center(r as f64),
        axes.azimuth.center(a as f64).to_degrees(),
        axes.velocity_of_bin(k)
    );
    println!("truth: range {range:.2} m, azimuth {az:.1} deg, velocity {v:+.2} m/s");

    let pc = extract_point_cloud(&rt, &CfarParams::default())?;
    println!("CFAR: {} point(s) at pfa {:e}", pc.points.len(), CfarParams::default().pfa);
    for p in &pc.points {
        println!("  xyz ({:6.2}, {:6.2}, {:6.2})  doppler {:+.2}  power {:.3e}", p.xyz[0], p.xyz[1], p.xyz[2], p.doppler, p.power);
    }
    Ok(())
}
