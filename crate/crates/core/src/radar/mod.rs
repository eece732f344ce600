//! FMCW radar: ADC synthesis, the FFT chain, and CA-CFAR point extraction.

mod cfar;
mod chain;
mod points;
mod synth;

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use cfar::{ca_cfar, cfar_alpha};
pub use chain::{build_4drt, range_fft};
pub use points::{extract_point_cloud, range_doppler_map, CfarParams, RadarPoint, RadarPointCloud};
pub use synth::synth_adc;

use crate::error::{Error, Result};
use crate::geometry::{AxisSpec, Pose, SphericalSpec};
use crate::io::{read_f32, read_f64, read_u64, read_with_magic, truncated, write_f32, write_f64, write_u64};
use crate::tensor::NdArray;

pub const TENSOR_MAGIC: &[u8; 8] = b"ROCC4DRT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    None,
    #[default]
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::None => vec![1.0; n],
            Window::Hann if n < 2 => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
                })
                .collect(),
        }
    }
}

/// Sensor and processing constants.
///
/// `n_fast` complex samples per chirp give `n_fast` range bins; `n_chirps`
/// chirps give as many Doppler bins. The virtual array is
/// `n_az_ant x n_el_ant` elements at half-wavelength spacing, beamformed onto
/// `az_bins x el_bins` cells spaced uniformly in angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    pub n_fast: usize,
    pub n_chirps: usize,
    pub n_az_ant: usize,
    pub n_el_ant: usize,
    pub az_bins: usize,
    pub el_bins: usize,
    pub range_res: f64,
    pub doppler_res: f64,
    pub wavelength: f64,
    pub noise_power: f64,
    pub window: Window,
    pub az_half_span_deg: f64,
    pub el_half_span_deg: f64,
}

impl RadarConfig {
    /// 64 x 32 x 16 x 16 tensors, 0.8 m range bins, 0.5 m/s Doppler bins.
    pub fn desk() -> Self {
        Self {
            n_fast: 64,
            n_chirps: 16,
            n_az_ant: 8,
            n_el_ant: 4,
            az_bins: 32,
            el_bins: 16,
            range_res: 0.8,
            doppler_res: 0.5,
            wavelength: 3.9e-3,
            noise_power: 1e-2,
            window: Window::Hann,
            az_half_span_deg: 53.5,
            el_half_span_deg: 18.5,
        }
    }

    /// Extents 256 x 107 x 37 x 64 with one-degree angular bins.
    pub fn paper() -> Self {
        Self {
            n_fast: 256,
            n_chirps: 64,
            n_az_ant: 16,
            n_el_ant: 8,
            az_bins: 107,
            el_bins: 37,
            range_res: 0.46,
            doppler_res: 0.06,
            wavelength: 3.9e-3,
            noise_power: 1e-2,
            window: Window::Hann,
            az_half_span_deg: 53.5,
            el_half_span_deg: 18.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.n_fast,
            self.n_chirps,
            self.n_az_ant,
            self.n_el_ant,
            self.az_bins,
            self.el_bins,
        ];
        if extents.iter().any(|&e| e < 2) {
            return Err(Error::invalid(format!("radar extents must be >= 2: {extents:?}")));
        }
        let positive = [
            self.range_res,
            self.doppler_res,
            self.wavelength,
            self.az_half_span_deg,
            self.el_half_span_deg,
        ];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("radar resolutions and spans must be positive"));
        }
        if !(self.noise_power >= 0.0) {
            return Err(Error::invalid("noise power must be non-negative"));
        }
        Ok(())
    }

    /// `[R, A, E, D]`.
    pub fn tensor_shape(&self) -> [usize; 4] {
        [self.n_fast, self.az_bins, self.el_bins, self.n_chirps]
    }

    pub fn max_range(&self) -> f64 {
        self.n_fast as f64 * self.range_res
    }

    /// Half-open unambiguous velocity interval `[-D/2, D/2) * doppler_res`.
    pub fn velocity_limits(&self) -> (f64, f64) {
        let half = (self.n_chirps / 2) as f64 * self.doppler_res;
        (-half, half)
    }

    pub fn axes(&self) -> BinAxes {
        BinAxes {
            range: AxisSpec {
                origin: 0.0,
                spacing: self.range_res,
                len: self.n_fast,
            },
            azimuth: AxisSpec::symmetric(self.az_half_span_deg.to_radians(), self.az_bins)
                .expect("validated"),
            elevation: AxisSpec::symmetric(self.el_half_span_deg.to_radians(), self.el_bins)
                .expect("validated"),
            doppler_res: self.doppler_res,
            doppler_bins: self.n_chirps,
        }
    }
}

/// Bin geometry of a radar tensor. Range bin 0 is at 0 m; Doppler bin
/// `D/2` is zero velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinAxes {
    pub range: AxisSpec,
    pub azimuth: AxisSpec,
    pub elevation: AxisSpec,
    pub doppler_res: f64,
    pub doppler_bins: usize,
}

impl BinAxes {
    pub fn spherical(&self) -> SphericalSpec {
        SphericalSpec {
            range: self.range,
            azimuth: self.azimuth,
            elevation: self.elevation,
            stride: 1,
        }
    }

    pub fn velocity_of_bin(&self, d: usize) -> f64 {
        (d as f64 - (self.doppler_bins / 2) as f64) * self.doppler_res
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Sensor frame, metres.
    pub position: [f64; 3],
    pub amplitude: f64,
    /// Positive when receding, m/s.
    pub radial_velocity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub frame_id: usize,
    pub ego_pose: Pose,
    pub scatterers: Vec<Scatterer>,
}

/// Complex samples indexed (fast time, slow time, azimuth channel, elevation channel).
#[derive(Clone, Debug, PartialEq)]
pub struct AdcCube {
    pub dims: [usize; 4],
    pub data: Vec<Complex64>,
}

impl AdcCube {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    pub fn index(&self, f: usize, c: usize, a: usize, e: usize) -> usize {
        ((f * self.dims[1] + c) * self.dims[2] + a) * self.dims[3] + e
    }
}

/// Power over (range, azimuth, elevation, Doppler) bins.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarTensor4D {
    pub power: NdArray,
    pub axes: BinAxes,
}

impl RadarTensor4D {
    pub fn shape(&self) -> [usize; 4] {
        let s = self.power.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn zeros(cfg: &RadarConfig) -> Self {
        Self {
            power: NdArray::zeros(&cfg.tensor_shape()),
            axes: cfg.axes(),
        }
    }

    /// Writes the `ROCC4DRT` layout: extents, six bin constants
    /// (range spacing, azimuth origin/spacing, elevation origin/spacing,
    /// Doppler spacing) and an `f32` payload in (R, A, E, D) order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        for e in self.shape() {
            write_u64(w, e as u64)?;
        }
        let a = &self.axes;
        for v in [
            a.range.spacing,
            a.azimuth.origin,
            a.azimuth.spacing,
            a.elevation.origin,
            a.elevation.spacing,
            a.doppler_res,
        ] {
            write_f64(w, v)?;
        }
        for &v in self.power.data() {
            write_f32(w, v as f32)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_with_magic(path, TENSOR_MAGIC)?;
        let mut cur = bytes.as_slice();
        let err = truncated(path);
        let mut ext = [0usize; 4];
        for e in &mut ext {
            *e = read_u64(&mut cur).map_err(&err)? as usize;
        }
        let mut meta = [0.0; 6];
        for m in &mut meta {
            *m = read_f64(&mut cur).map_err(&err)?;
        }
        let n: usize = ext.iter().product();
        if cur.len() != n * 4 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("payload holds {} bytes, expected {}", cur.len(), n * 4),
            });
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from(read_f32(&mut cur).map_err(&err)?));
        }
        let axes = BinAxes {
            range: AxisSpec::new(0.0, meta[0], ext[0])?,
            azimuth: AxisSpec::new(meta[1], meta[2], ext[1])?,
            elevation: AxisSpec::new(meta[3], meta[4], ext[2])?,
            doppler_res: meta[5],
            doppler_bins: ext[3],
        };
        Ok(Self {
            power: NdArray::from_vec(&ext, data)?,
            axes,
        })
    }
}
