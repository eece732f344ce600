//! Occupancy grids, ground-truth generation, training losses and metrics.

mod gt;
mod loss;
mod metrics;

pub use gt::{build_gt, ObjectBox, SweepFrame, LabeledSweepSequence};
pub use loss::{
    attach_loss, loss_ce, loss_lovasz, loss_scal, total_loss, LossNormalizer, LossReport,
    LossValue, ScalVariant,
};
pub use metrics::{eval_metrics, MetricAccumulator, MetricTable, RangeMetrics, DEFAULT_RANGES};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::io::{read_f64, read_u64, read_with_magic, truncated, write_f64, write_u64};

pub const GRID_MAGIC: &[u8; 8] = b"ROCCGRID";

pub const FREE: u8 = 0;
pub const BACKGROUND: u8 = 1;
pub const FOREGROUND: u8 = 2;
pub const NUM_CLASSES: usize = 3;

/// Voxel labels in canonical (z, y, x) flattening.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    labels: Vec<u8>,
}

impl OccupancyGrid {
    pub fn free(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            labels: vec![FREE; spec.num_voxels()],
            spec,
        })
    }

    pub fn from_labels(spec: GridSpec, labels: Vec<u8>) -> Result<Self> {
        spec.validate()?;
        if labels.len() != spec.num_voxels() {
            return Err(Error::invalid(format!(
                "{} labels for a grid of {} voxels",
                labels.len(),
                spec.num_voxels()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::invalid(format!("label {bad} outside {{0, 1, 2}}")));
        }
        Ok(Self { spec, labels })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> u8 {
        self.labels[self.spec.index(ix, iy, iz)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, label: u8) {
        assert!((label as usize) < NUM_CLASSES, "label {label}");
        let i = self.spec.index(ix, iy, iz);
        self.labels[i] = label;
    }

    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// `ROCCGRID`, `u64 H, W, L`, the grid spec as 7 `f64`, then one `u8`
    /// label per voxel.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        for d in self.spec.shape() {
            write_u64(w, d as u64)?;
        }
        for v in self.spec.as_array() {
            write_f64(w, v)?;
        }
        w.write_all(&self.labels)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_with_magic(path, GRID_MAGIC)?;
        let mut cur = bytes.as_slice();
        let err = truncated(path);
        let mut shape = [0usize; 3];
        for d in &mut shape {
            *d = read_u64(&mut cur).map_err(&err)? as usize;
        }
        let mut a = [0.0; 7];
        for v in &mut a {
            *v = read_f64(&mut cur).map_err(&err)?;
        }
        let spec = GridSpec::from_array(a)?;
        if spec.shape() != shape || cur.len() != spec.num_voxels() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("header {shape:?} inconsistent with spec or payload"),
            });
        }
        Self::from_labels(spec, cur.to_vec())
    }
}

/// Per-class loss weights (free, background, foreground).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self([1.0; NUM_CLASSES])
    }

    /// Inverse class frequencies.
    pub fn from_frequencies(freq: [f64; NUM_CLASSES]) -> Result<Self> {
        let mut w = [0.0; NUM_CLASSES];
        for (c, &f) in freq.iter().enumerate() {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::invalid(format!(
                    "class {c} has frequency {f}; its weight is undefined"
                )));
            }
            w[c] = 1.0 / f;
        }
        Ok(Self(w))
    }

    pub fn get(&self, class: u8) -> f64 {
        self.0[class as usize]
    }
}

pub fn class_weights_from_frequency(grids: &[OccupancyGrid]) -> Result<ClassWeights> {
    let mut counts = [0usize; NUM_CLASSES];
    for g in grids {
        for (c, n) in g.counts().into_iter().enumerate() {
            counts[c] += n;
        }
    }
    let total: usize = counts.iter().sum();
    if counts[1] + counts[2] == 0 {
        return Err(Error::invalid("no occupied voxel in the provided grids"));
    }
    ClassWeights::from_frequencies(counts.map(|c| c as f64 / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_frequencies() {
        let w = ClassWeights::from_frequencies([0.923, 0.074, 0.003]).unwrap();
        assert_eq!(w.0, [1.0 / 0.923, 1.0 / 0.074, 1.0 / 0.003]);
        assert!(ClassWeights::from_frequencies([0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn counting() {
        let spec = GridSpec::unit(2, 2, 1);
        let a = OccupancyGrid::from_labels(spec, vec![0, 1, 2, 0]).unwrap();
        let b = OccupancyGrid::from_labels(spec, vec![0, 0, 0, 1]).unwrap();
        let w = class_weights_from_frequency(&[a, b]).unwrap();
        assert_eq!(w.0, [8.0 / 5.0, 4.0, 8.0]);
        let z = OccupancyGrid::free(spec).unwrap();
        assert!(class_weights_from_frequency(&[z]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let spec = GridSpec::unit(3, 2, 2);
        let g = OccupancyGrid::from_labels(spec, (0..12).map(|i| (i % 3) as u8).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.grid");
        g.save(&p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 8 + 24 + 56 + 12);
        assert_eq!(OccupancyGrid::load(&p).unwrap(), g);
        assert!(OccupancyGrid::from_labels(spec, vec![3; 12]).is_err());
    }
}
