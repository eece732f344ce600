//! Spherical and Cartesian frames, regions of interest and evaluation masks.
//!
//! Conventions: `x` forward, `y` left, `z` up. Azimuth is `atan2(y, x)` and
//! elevation is `asin(z / |p|)`, so a point at range `r` is
//! `r * (cos(el) cos(az), cos(el) sin(az), sin(el))`.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::NdArray;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spherical {
    pub range: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

pub fn cart_to_sph(p: [f64; 3]) -> Result<Spherical> {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 {
        return Err(Error::invalid("origin has no spherical direction"));
    }
    Ok(Spherical {
        range: r,
        azimuth: p[1].atan2(p[0]),
        elevation: (p[2] / r).clamp(-1.0, 1.0).asin(),
    })
}

pub fn sph_to_cart(s: Spherical) -> [f64; 3] {
    let (se, ce) = s.elevation.sin_cos();
    let (sa, ca) = s.azimuth.sin_cos();
    [s.range * ce * ca, s.range * ce * sa, s.range * se]
}

/// Uniformly spaced bin axis: bin `i` is centred at `origin + i * spacing`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub origin: f64,
    pub spacing: f64,
    pub len: usize,
}

impl AxisSpec {
    pub fn new(origin: f64, spacing: f64, len: usize) -> Result<Self> {
        if spacing <= 0.0 || !spacing.is_finite() || len == 0 {
            return Err(Error::invalid(format!(
                "axis needs positive spacing and extent, got {spacing} x {len}"
            )));
        }
        Ok(Self {
            origin,
            spacing,
            len,
        })
    }

    /// Axis of `len` bins covering `[-half_span, half_span]`.
    pub fn symmetric(half_span: f64, len: usize) -> Result<Self> {
        let spacing = 2.0 * half_span / len as f64;
        Self::new(-half_span + spacing / 2.0, spacing, len)
    }

    pub fn center(&self, i: f64) -> f64 {
        self.origin + i * self.spacing
    }

    pub fn fractional(&self, v: f64) -> f64 {
        (v - self.origin) / self.spacing
    }

    pub fn contains_index(&self, f: f64) -> bool {
        f >= -0.5 && f <= self.len as f64 - 0.5
    }

    /// Axis after a centred, padded convolution of the given stride: output
    /// bin `o` sits on input bin `stride * o`; extent rounds up.
    pub fn strided(&self, stride: usize) -> Self {
        Self {
            origin: self.origin,
            spacing: self.spacing * stride as f64,
            len: self.len.div_ceil(stride),
        }
    }
}

/// Bin layout of a volume indexed by (range, azimuth, elevation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalSpec {
    pub range: AxisSpec,
    pub azimuth: AxisSpec,
    pub elevation: AxisSpec,
    /// Stride relative to the raw radar tensor.
    pub stride: usize,
}

impl SphericalSpec {
    pub fn extents(&self) -> [usize; 3] {
        [self.range.len, self.azimuth.len, self.elevation.len]
    }

    pub fn strided(&self, stride: usize) -> Self {
        Self {
            range: self.range.strided(stride),
            azimuth: self.azimuth.strided(stride),
            elevation: self.elevation.strided(stride),
            stride: self.stride * stride,
        }
    }

    /// Cartesian centre of cell `(r, a, e)`.
    pub fn cell_center(&self, idx: [f64; 3]) -> [f64; 3] {
        sph_to_cart(Spherical {
            range: self.range.center(idx[0]),
            azimuth: self.azimuth.center(idx[1]),
            elevation: self.elevation.center(idx[2]),
        })
    }

    /// Continuous (range, azimuth, elevation) bin coordinates of a point,
    /// without bounds checks. `None` only for the origin.
    pub fn fractional_index(&self, p: [f64; 3]) -> Option<[f64; 3]> {
        let s = cart_to_sph(p).ok()?;
        Some([
            self.range.fractional(s.range),
            self.azimuth.fractional(s.azimuth),
            self.elevation.fractional(s.elevation),
        ])
    }

    /// Maps a Cartesian point to a fractional cell index, or `None` when it
    /// lies outside `[-0.5, n - 0.5]` on any axis.
    pub fn phi_map(&self, p: [f64; 3]) -> Option<[f64; 3]> {
        let f = self.fractional_index(p)?;
        let axes = [self.range, self.azimuth, self.elevation];
        axes.iter()
            .zip(f)
            .all(|(ax, v)| ax.contains_index(v))
            .then_some(f)
    }
}

/// Axis-aligned Cartesian region of interest cut into cubic voxels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub voxel: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 51.2,
            y_min: -25.6,
            y_max: 25.6,
            z_min: -2.6,
            z_max: 3.0,
            voxel: 0.4,
        }
    }
}

fn cells(lo: f64, hi: f64, voxel: f64) -> Result<usize> {
    let n = (hi - lo) / voxel;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "extent [{lo}, {hi}] is not a whole number of {voxel} m voxels"
        )));
    }
    Ok(r as usize)
}

impl GridSpec {
    /// 32 x 32 x 8 voxels over a 12.8 m square ahead of the sensor.
    pub fn desk() -> Self {
        Self {
            x_min: 0.0,
            x_max: 12.8,
            y_min: -6.4,
            y_max: 6.4,
            z_min: -1.2,
            z_max: 2.0,
            voxel: 0.4,
        }
    }

    /// `l × w × h` unit voxels anchored at the origin; handy for small fixtures.
    pub fn unit(l: usize, w: usize, h: usize) -> Self {
        Self {
            x_min: 0.0,
            x_max: l as f64,
            y_min: 0.0,
            y_max: w as f64,
            z_min: 0.0,
            z_max: h as f64,
            voxel: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max, self.voxel,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        let g = Self {
            x_min: a[0],
            x_max: a[1],
            y_min: a[2],
            y_max: a[3],
            z_min: a[4],
            z_max: a[5],
            voxel: a[6],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.voxel <= 0.0 || !self.voxel.is_finite() {
            return Err(Error::invalid("voxel size must be positive"));
        }
        self.dims().map(|_| ())
    }

    /// `(L, W, H)`: voxel counts along x, y, z.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        Ok((
            cells(self.x_min, self.x_max, self.voxel)?,
            cells(self.y_min, self.y_max, self.voxel)?,
            cells(self.z_min, self.z_max, self.voxel)?,
        ))
    }

    /// `[H, W, L]`, the storage shape of grids over this region.
    pub fn shape(&self) -> [usize; 3] {
        let (l, w, h) = self.dims().expect("validated grid");
        [h, w, l]
    }

    pub fn num_voxels(&self) -> usize {
        self.shape().iter().product()
    }

    /// Canonical flat index: z-major, then y, then x.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [_, w, l] = self.shape();
        (iz * w + iy) * l + ix
    }

    pub fn unflatten(&self, i: usize) -> (usize, usize, usize) {
        let [_, w, l] = self.shape();
        (i % l, (i / l) % w, i / (l * w))
    }

    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        let v = self.voxel;
        [
            self.x_min + (ix as f64 + 0.5) * v,
            self.y_min + (iy as f64 + 0.5) * v,
            self.z_min + (iz as f64 + 0.5) * v,
        ]
    }

    pub fn center_of(&self, i: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.unflatten(i);
        self.center(ix, iy, iz)
    }

    /// Voxel containing `p`, if inside the region.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<(usize, usize, usize)> {
        let (l, w, h) = self.dims().ok()?;
        let f = |v: f64, lo: f64, n: usize| {
            let i = ((v - lo) / self.voxel).floor();
            (i >= 0.0 && i < n as f64).then_some(i as usize)
        };
        Some((
            f(p[0], self.x_min, l)?,
            f(p[1], self.y_min, w)?,
            f(p[2], self.z_min, h)?,
        ))
    }

    /// Axes of the grid in storage order (z, y, x), for index-space sampling.
    pub fn axes_zyx(&self) -> [AxisSpec; 3] {
        let [h, w, l] = self.shape();
        let v = self.voxel;
        [
            AxisSpec { origin: self.z_min + v / 2.0, spacing: v, len: h },
            AxisSpec { origin: self.y_min + v / 2.0, spacing: v, len: w },
            AxisSpec { origin: self.x_min + v / 2.0, spacing: v, len: l },
        ]
    }
}

/// Rigid transform given as translation plus roll/pitch/yaw (radians).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Pose {
    pub fn from_xyz_yaw(translation: [f64; 3], yaw: f64) -> Self {
        Self {
            translation,
            rpy: [0.0, 0.0, yaw],
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.translation;
        let [r, p, yw] = self.rpy;
        Isometry3::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_euler_angles(r, p, yw),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.translation.iter().chain(&self.rpy).all(|v| v.is_finite())
    }

    /// Maps a point from this pose's local frame to the parent frame.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.isometry() * Point3::new(p[0], p[1], p[2]);
        [q.x, q.y, q.z]
    }
}

pub fn apply_iso(iso: &Isometry3<f64>, p: [f64; 3]) -> [f64; 3] {
    let q = iso * Point3::new(p[0], p[1], p[2]);
    [q.x, q.y, q.z]
}

/// Centres of every voxel as `[H*W*L, 3]` rows in canonical order.
pub fn voxel_centers(g: &GridSpec) -> NdArray {
    let n = g.num_voxels();
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        data.extend(g.center_of(i));
    }
    NdArray::from_vec(&[n, 3], data).expect("non-empty grid")
}

/// True where the voxel centre lies within `hfov_deg / 2` of the +x axis.
pub fn hfov_mask(g: &GridSpec, hfov_deg: f64) -> Result<Vec<bool>> {
    if !(hfov_deg > 0.0 && hfov_deg <= 360.0) {
        return Err(Error::invalid(format!("hfov {hfov_deg} outside (0, 360]")));
    }
    let half = hfov_deg.to_radians() / 2.0;
    Ok((0..g.num_voxels())
        .map(|i| {
            let c = g.center_of(i);
            c[1].atan2(c[0]).abs() <= half + 1e-12
        })
        .collect())
}
