use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AdcCube, RadarConfig, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::cart_to_sph;

/// Beat-signal cube for a scene: one complex exponential per scatterer plus
/// circular complex Gaussian noise of `cfg.noise_power`.
///
/// Per scatterer, the phase advances by `2 pi r / (range_res * n_fast)` per
/// fast-time sample, `2 pi v / (doppler_res * n_chirps)` per chirp, and
/// `pi sin(az) cos(el)` / `pi sin(el)` per azimuth / elevation element.
pub fn synth_adc(scene: &SceneSpec, cfg: &RadarConfig, seed: u64) -> Result<AdcCube> {
    cfg.validate()?;
    let dims = [cfg.n_fast, cfg.n_chirps, cfg.n_az_ant, cfg.n_el_ant];
    let mut cube = AdcCube::zeros(dims);
    let (v_lo, v_hi) = cfg.velocity_limits();
    for (index, s) in scene.scatterers.iter().enumerate() {
        if !(s.amplitude >= 0.0 && s.amplitude.is_finite()) {
            return Err(Error::invalid(format!("scatterer {index} has invalid amplitude")));
        }
        let Ok(sph) = cart_to_sph(s.position) else {
            return Err(Error::ScattererOutOfBounds { index, what: "range" });
        };
        if sph.range >= cfg.max_range() {
            return Err(Error::ScattererOutOfBounds { index, what: "range" });
        }
        if !(s.radial_velocity >= v_lo && s.radial_velocity < v_hi) {
            return Err(Error::ScattererOutOfBounds { index, what: "velocity" });
        }
        if s.amplitude == 0.0 {
            continue;
        }
        let w_fast = 2.0 * PI * sph.range / (cfg.range_res * cfg.n_fast as f64);
        let w_slow = 2.0 * PI * s.radial_velocity / (cfg.doppler_res * cfg.n_chirps as f64);
        let w_az = PI * sph.azimuth.sin() * sph.elevation.cos();
        let w_el = PI * sph.elevation.sin();
        let phase0 = (4.0 * PI * sph.range / cfg.wavelength) % (2.0 * PI);
        // the phase is separable, so the cube is an outer product of phasors
        let phasors = |w: f64, n: usize| -> Vec<Complex64> {
            (0..n).map(|i| Complex64::from_polar(1.0, w * i as f64)).collect()
        };
        let pf = phasors(w_fast, dims[0]);
        let pc = phasors(w_slow, dims[1]);
        let pa = phasors(w_az, dims[2]);
        let pe = phasors(w_el, dims[3]);
        let angle: Vec<Complex64> = pa.iter().flat_map(|a| pe.iter().map(move |e| a * e)).collect();
        let head = Complex64::from_polar(s.amplitude, phase0);
        let mut chunks = cube.data.chunks_exact_mut(angle.len());
        for f in &pf {
            let hf = head * f;
            for c in &pc {
                let hc = hf * c;
                let chunk = chunks.next().expect("cube sized by dims");
                for (z, a) in chunk.iter_mut().zip(&angle) {
                    *z += hc * a;
                }
            }
        }
    }
    if cfg.noise_power > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (cfg.noise_power / 2.0).sqrt()).expect("finite sigma");
        for z in &mut cube.data {
            *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(cube)
}
