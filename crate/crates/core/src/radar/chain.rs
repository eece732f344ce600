use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AdcCube, RadarConfig, RadarTensor4D};
use crate::tensor::NdArray;

/// Windowed unitary FFT along one axis of a cube, in place.
fn fft_axis(cube: &mut AdcCube, axis: usize, window: &[f64]) {
    let dims = cube.dims;
    let n = dims[axis];
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let scale = 1.0 / (n as f64).sqrt();
    let strides = [
        dims[1] * dims[2] * dims[3],
        dims[2] * dims[3],
        dims[3],
        1,
    ];
    let stride = strides[axis];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let others: Vec<usize> = (0..4).filter(|&a| a != axis).collect();
    for i in 0..dims[others[0]] {
        for j in 0..dims[others[1]] {
            for k in 0..dims[others[2]] {
                let base = i * strides[others[0]] + j * strides[others[1]] + k * strides[others[2]];
                for (t, b) in buf.iter_mut().enumerate() {
                    *b = cube.data[base + t * stride] * window[t];
                }
                fft.process(&mut buf);
                for (t, b) in buf.iter().enumerate() {
                    cube.data[base + t * stride] = b * scale;
                }
            }
        }
    }
}

/// Range FFT over fast time (windowed, unitary). Output keeps the cube layout
/// with the first axis now indexing range bins.
pub fn range_fft(adc: &AdcCube, cfg: &RadarConfig) -> AdcCube {
    let mut cube = adc.clone();
    fft_axis(&mut cube, 0, &cfg.window.coefficients(cfg.n_fast));
    cube
}

/// FFT chain from ADC samples to a power tensor `[R, A, E, D]`.
///
/// Range FFT, Doppler FFT with the zero-velocity bin moved to `D/2`, then a
/// beamforming DFT over the virtual array evaluated at uniformly spaced
/// azimuth/elevation bin centres (the zero-padded angle FFT sampled on an
/// angle-uniform grid). Power is the squared magnitude.
pub fn build_4drt(adc: &AdcCube, cfg: &RadarConfig) -> RadarTensor4D {
    let mut cube = range_fft(adc, cfg);
    fft_axis(&mut cube, 1, &cfg.window.coefficients(cfg.n_chirps));

    let axes = cfg.axes();
    let [n_r, n_d, n_az, n_el] = cube.dims;
    let (a_bins, e_bins) = (cfg.az_bins, cfg.el_bins);
    let w_az = cfg.window.coefficients(n_az);
    let w_el = cfg.window.coefficients(n_el);
    let norm = 1.0 / ((n_az * n_el) as f64).sqrt();

    // steering twiddles with the element windows folded in
    let mut t_el = vec![Complex64::new(0.0, 0.0); e_bins * n_el];
    for e in 0..e_bins {
        let v = 0.5 * axes.elevation.center(e as f64).sin();
        for m in 0..n_el {
            t_el[e * n_el + m] = Complex64::from_polar(w_el[m], -2.0 * PI * v * m as f64);
        }
    }
    let mut t_az = vec![Complex64::new(0.0, 0.0); a_bins * e_bins * n_az];
    for a in 0..a_bins {
        let sa = axes.azimuth.center(a as f64).sin();
        for e in 0..e_bins {
            let u = 0.5 * sa * axes.elevation.center(e as f64).cos();
            for n in 0..n_az {
                t_az[(a * e_bins + e) * n_az + n] =
                    Complex64::from_polar(w_az[n] * norm, -2.0 * PI * u * n as f64);
            }
        }
    }

    let mut power = NdArray::zeros(&cfg.tensor_shape());
    let pd = power.data_mut();
    let mut y = vec![Complex64::new(0.0, 0.0); n_az * e_bins];
    for r in 0..n_r {
        for d in 0..n_d {
            let d_out = (d + n_d / 2) % n_d;
            let x = &cube.data[cube.index(r, d, 0, 0)..][..n_az * n_el];
            for n in 0..n_az {
                for e in 0..e_bins {
                    let tw = &t_el[e * n_el..(e + 1) * n_el];
                    y[n * e_bins + e] = x[n * n_el..(n + 1) * n_el]
                        .iter()
                        .zip(tw)
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            for a in 0..a_bins {
                for e in 0..e_bins {
                    let tw = &t_az[(a * e_bins + e) * n_az..][..n_az];
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n in 0..n_az {
                        acc += y[n * e_bins + e] * tw[n];
                    }
                    pd[((r * a_bins + a) * e_bins + e) * n_d + d_out] = acc.norm_sqr();
                }
            }
        }
    }
    RadarTensor4D { power, axes }
}
