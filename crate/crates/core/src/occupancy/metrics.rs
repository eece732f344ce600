use std::fmt::Write as _;

use super::{OccupancyGrid, BACKGROUND, FOREGROUND, FREE};
use crate::error::{Error, Result};

pub const DEFAULT_RANGES: [f64; 3] = [12.8, 25.6, 51.2];

/// Metrics over one evaluation volume; `None` marks an empty union.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeMetrics {
    pub range: f64,
    pub iou: Option<f64>,
    pub miou: Option<f64>,
    pub bg_iou: Option<f64>,
    pub fg_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<RangeMetrics>,
}

fn ratio(inter: usize, union: usize) -> Option<f64> {
    (union > 0).then(|| inter as f64 / union as f64)
}

/// Intersection/union counts per range; sums over frames give
/// dataset-level metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricAccumulator {
    ranges: Vec<f64>,
    // per range: [occ inter, occ union, bg inter, bg union, fg inter, fg union]
    counts: Vec<[usize; 6]>,
}

impl MetricAccumulator {
    pub fn new(ranges: &[f64]) -> Self {
        Self {
            ranges: ranges.to_vec(),
            counts: vec![[0; 6]; ranges.len()],
        }
    }

    pub fn add(&mut self, pred: &OccupancyGrid, gt: &OccupancyGrid, mask: &[bool]) -> Result<()> {
        if pred.spec != gt.spec || mask.len() != gt.len() {
            return Err(Error::invalid("prediction, ground truth and mask must share one grid"));
        }
        let spec = &gt.spec;
        for (&r, c) in self.ranges.iter().zip(&mut self.counts) {
            for i in 0..gt.len() {
                if !mask[i] || spec.center_of(i)[0] > r {
                    continue;
                }
                let (p, g) = (pred.labels()[i], gt.labels()[i]);
                let (po, go) = (p != FREE, g != FREE);
                c[0] += (po && go) as usize;
                c[1] += (po || go) as usize;
                for (k, cl) in [BACKGROUND, FOREGROUND].into_iter().enumerate() {
                    c[2 + 2 * k] += (p == cl && g == cl) as usize;
                    c[3 + 2 * k] += (p == cl || g == cl) as usize;
                }
            }
        }
        Ok(())
    }

    pub fn table(&self) -> MetricTable {
        let rows = self
            .ranges
            .iter()
            .zip(&self.counts)
            .map(|(&range, c)| {
                let bg_iou = ratio(c[2], c[3]);
                let fg_iou = ratio(c[4], c[5]);
                let defined: Vec<f64> = [bg_iou, fg_iou].into_iter().flatten().collect();
                RangeMetrics {
                    range,
                    iou: ratio(c[0], c[1]),
                    miou: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                    bg_iou,
                    fg_iou,
                }
            })
            .collect();
        MetricTable { rows }
    }
}

/// IoU (occupied vs free), per-class BG/FG IoU and their mean, for each
/// forward range over voxels where `mask` holds.
pub fn eval_metrics(
    pred: &OccupancyGrid,
    gt: &OccupancyGrid,
    mask: &[bool],
    ranges: &[f64],
) -> Result<MetricTable> {
    let mut acc = MetricAccumulator::new(ranges);
    acc.add(pred, gt, mask)?;
    Ok(acc.table())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v))
}

impl MetricTable {
    fn columns(&self) -> [(&'static str, Vec<Option<f64>>); 4] {
        let col = |f: fn(&RangeMetrics) -> Option<f64>| self.rows.iter().map(f).collect();
        [
            ("IoU", col(|r| r.iou)),
            ("mIoU", col(|r| r.miou)),
            ("BG IoU", col(|r| r.bg_iou)),
            ("FG IoU", col(|r| r.fg_iou)),
        ]
    }

    /// Percentages grouped by metric, one column per range.
    pub fn to_text(&self) -> String {
        let mut head = String::new();
        let mut sub = String::new();
        let mut vals = String::new();
        let w = 8 * self.rows.len();
        for (name, values) in self.columns() {
            let _ = write!(head, "| {name:^w$} ");
            sub.push_str("| ");
            vals.push_str("| ");
            for (r, v) in self.rows.iter().zip(values) {
                let _ = write!(sub, "{:>7} ", format!("{}m", r.range));
                let _ = write!(vals, "{:>7} ", pct(v));
            }
        }
        format!("{head}|\n{sub}|\n{vals}|\n")
    }

    /// `metric,range,value` rows; undefined values read `undefined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,range,value\n");
        for (name, values) in self.columns() {
            for (r, v) in self.rows.iter().zip(values) {
                let key = name.to_lowercase().replace(' ', "_");
                let v = v.map_or_else(|| "undefined".to_string(), |v| format!("{v}"));
                let _ = writeln!(out, "{key},{},{v}", r.range);
            }
        }
        out
    }
}
