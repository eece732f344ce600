//! Bird's-eye-view images as binary PPM (P6).

use std::path::Path;

use crate::occupancy::{OccupancyGrid, BACKGROUND, FOREGROUND};
use crate::reduction::SparseRT;

pub const FREE_RGB: [u8; 3] = [0, 0, 0];
pub const BACKGROUND_RGB: [u8; 3] = [128, 128, 128];
pub const FOREGROUND_RGB: [u8; 3] = [255, 140, 0];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![FREE_RGB; width * height],
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        self.rgb[row * self.width + col]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.rgb.iter().flatten());
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_ppm())
    }
}

/// Pixel of voxel column `(ix, iy)`: forward (+x) is up, left (+y) is left.
pub fn bev_pixel(grid: &OccupancyGrid, ix: usize, iy: usize) -> (usize, usize) {
    let [_, w, l] = grid.spec.shape();
    (w - 1 - iy, l - 1 - ix)
}

/// Max projection along z with foreground over background over free.
/// The image is `W` pixels wide and `L` tall.
pub fn grid_bev(grid: &OccupancyGrid) -> Image {
    let [h, w, l] = grid.spec.shape();
    let mut img = Image::new(w, l);
    for ix in 0..l {
        for iy in 0..w {
            let top = (0..h).map(|iz| grid.get(ix, iy, iz)).max().unwrap_or(0);
            let (c, r) = bev_pixel(grid, ix, iy);
            img.rgb[r * w + c] = match top {
                FOREGROUND => FOREGROUND_RGB,
                BACKGROUND => BACKGROUND_RGB,
                _ => FREE_RGB,
            };
        }
    }
    img
}

const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Viridis-like colour for `t` in `[0, 1]`.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    std::array::from_fn(|k| (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8)
}

/// Range-azimuth view of a sparse tensor: strongest retained mean power per
/// (range, azimuth) cell on a log ramp; cells with no entry stay black.
/// `A` pixels wide, `R` tall, far range at the top.
pub fn sparse_bev(s: &SparseRT, az_bins: usize) -> Image {
    let r_bins = s.range_bins();
    let mut best = vec![None::<f64>; r_bins * az_bins];
    for (r, entries) in s.ranges.iter().enumerate() {
        for e in entries {
            let a = e.az as usize;
            if a < az_bins {
                let cell = &mut best[r * az_bins + a];
                let v = e.mean_power().max(0.0).ln_1p();
                *cell = Some(cell.map_or(v, |c: f64| c.max(v)));
            }
        }
    }
    let hi = best.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let mut img = Image::new(az_bins, r_bins);
    for r in 0..r_bins {
        for a in 0..az_bins {
            if let Some(v) = best[r * az_bins + a] {
                let t = if hi > 0.0 { v / hi } else { 0.0 };
                img.rgb[(r_bins - 1 - r) * az_bins + (az_bins - 1 - a)] = ramp(t);
            }
        }
    }
    img
}
