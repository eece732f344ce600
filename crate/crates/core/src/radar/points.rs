use serde::{Deserialize, Serialize};

use super::{ca_cfar, RadarTensor4D};
use crate::error::Result;
use crate::geometry::{sph_to_cart, Spherical};
use crate::tensor::NdArray;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfarParams {
    pub guard: usize,
    pub train: usize,
    pub pfa: f64,
    /// Keep only detections that are local maxima of their 3x3
    /// range-Doppler neighbourhood.
    pub peak_grouping: bool,
}

impl Default for CfarParams {
    fn default() -> Self {
        Self {
            guard: 1,
            train: 2,
            pfa: 1e-4,
            peak_grouping: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub xyz: [f64; 3],
    pub doppler: f64,
    pub power: f64,
    /// Source cell `(r, a, e, d)`.
    pub cell: [usize; 4],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RadarPointCloud {
    pub points: Vec<RadarPoint>,
}

/// Power summed over both angle axes: `[R, D]`.
pub fn range_doppler_map(rt: &RadarTensor4D) -> NdArray {
    let [r_n, a_n, e_n, d_n] = rt.shape();
    let mut m = NdArray::zeros(&[r_n, d_n]);
    let p = rt.power.data();
    for r in 0..r_n {
        for ae in 0..a_n * e_n {
            let base = (r * a_n * e_n + ae) * d_n;
            for d in 0..d_n {
                m.data_mut()[r * d_n + d] += p[base + d];
            }
        }
    }
    m
}

/// CA-CFAR on the range-Doppler map; each detection takes the angle of the
/// strongest (azimuth, elevation) cell in its range-Doppler column.
pub fn extract_point_cloud(rt: &RadarTensor4D, params: &CfarParams) -> Result<RadarPointCloud> {
    let [_, a_n, e_n, d_n] = rt.shape();
    let rd = range_doppler_map(rt);
    let mask = ca_cfar(&rd, params.guard, params.train, params.pfa)?;
    let rows = rd.shape()[0];
    let mut points = Vec::new();
    for (i, &hit) in mask.iter().enumerate() {
        if !hit {
            continue;
        }
        let (r, d) = (i / d_n, i % d_n);
        if params.peak_grouping {
            let v = rd.data()[i];
            let mut is_peak = true;
            for dr in -1i64..=1 {
                for dd in -1i64..=1 {
                    let (rr, dc) = (r as i64 + dr, d as i64 + dd);
                    if (dr, dd) == (0, 0) || rr < 0 || dc < 0 || rr >= rows as i64 || dc >= d_n as i64 {
                        continue;
                    }
                    let w = rd.data()[rr as usize * d_n + dc as usize];
                    // ties go to the earlier cell in row-major order
                    if w > v || (w == v && (rr as usize * d_n + (dc as usize)) < i) {
                        is_peak = false;
                    }
                }
            }
            if !is_peak {
                continue;
            }
        }
        let (mut best, mut best_ae) = (f64::NEG_INFINITY, 0);
        for ae in 0..a_n * e_n {
            let p = rt.power.data()[(r * a_n * e_n + ae) * d_n + d];
            if p > best {
                best = p;
                best_ae = ae;
            }
        }
        let (a, e) = (best_ae / e_n, best_ae % e_n);
        let xyz = sph_to_cart(Spherical {
            range: rt.axes.range.center(r as f64),
            azimuth: rt.axes.azimuth.center(a as f64),
            elevation: rt.axes.elevation.center(e as f64),
        });
        points.push(RadarPoint {
            xyz,
            doppler: rt.axes.velocity_of_bin(d),
            power: best,
            cell: [r, a, e, d],
        });
    }
    Ok(RadarPointCloud { points })
}
