use std::io::Write;
use std::path::Path;

use super::descriptor::{CHANNELS, MEAN};
use crate::error::{Error, Result};
use crate::io::{read_f32, read_u32, read_u64, read_with_magic, truncated, write_f32, write_u32, write_u64};
use crate::tensor::NdArray;

pub const SPARSE_MAGIC: &[u8; 8] = b"ROCCSPRT";

/// `N_r` header value marking a file with per-range counts.
const VARIABLE_COUNTS: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseEntry {
    pub az: u32,
    pub el: u32,
    pub desc: [f64; CHANNELS],
}

impl SparseEntry {
    pub fn mean_power(&self) -> f64 {
        self.desc[MEAN]
    }
}

/// Retained cells per range bin, strongest mean power first.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRT {
    /// Requested per-range budget (0 for percentile output).
    pub n_r: usize,
    pub ranges: Vec<Vec<SparseEntry>>,
}

impl SparseRT {
    pub fn range_bins(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_entries(&self) -> usize {
        self.ranges.iter().map(Vec::len).sum()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.ranges.iter().map(Vec::len).collect()
    }

    pub fn empty(range_bins: usize) -> Self {
        Self {
            n_r: 0,
            ranges: vec![Vec::new(); range_bins],
        }
    }

    fn uniform_count(&self) -> Option<usize> {
        let first = self.ranges.first().map_or(0, Vec::len);
        self.ranges.iter().all(|r| r.len() == first).then_some(first)
    }

    /// `ROCCSPRT`, `u64 R`, `u64 N_r`, then per range `N_r` records of
    /// `(u32 az, u32 el, 8 x f32)`. When ranges hold different counts the
    /// `N_r` field is `u64::MAX` and `R` `u64` counts precede the records.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SPARSE_MAGIC)?;
        write_u64(w, self.range_bins() as u64)?;
        match self.uniform_count() {
            Some(n) => write_u64(w, n as u64)?,
            None => {
                write_u64(w, VARIABLE_COUNTS)?;
                for r in &self.ranges {
                    write_u64(w, r.len() as u64)?;
                }
            }
        }
        for r in &self.ranges {
            for e in r {
                write_u32(w, e.az)?;
                write_u32(w, e.el)?;
                for &v in &e.desc {
                    write_f32(w, v as f32)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_with_magic(path, SPARSE_MAGIC)?;
        let mut cur = bytes.as_slice();
        let err = truncated(path);
        let r_n = read_u64(&mut cur).map_err(&err)? as usize;
        let header = read_u64(&mut cur).map_err(&err)?;
        let counts: Vec<usize> = if header == VARIABLE_COUNTS {
            (0..r_n)
                .map(|_| read_u64(&mut cur).map(|c| c as usize))
                .collect::<std::io::Result<_>>()
                .map_err(&err)?
        } else {
            vec![header as usize; r_n]
        };
        let mut ranges = Vec::with_capacity(r_n);
        for &n in &counts {
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let az = read_u32(&mut cur).map_err(&err)?;
                let el = read_u32(&mut cur).map_err(&err)?;
                let mut desc = [0.0; CHANNELS];
                for d in &mut desc {
                    *d = f64::from(read_f32(&mut cur).map_err(&err)?);
                }
                entries.push(SparseEntry { az, el, desc });
            }
            ranges.push(entries);
        }
        if !cur.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("{} trailing bytes", cur.len()),
            });
        }
        let n_r = if header == VARIABLE_COUNTS { 0 } else { header as usize };
        Ok(Self { n_r, ranges })
    }
}

fn check_volume(vol: &NdArray) -> Result<[usize; 3]> {
    let s = vol.shape();
    if s.len() != 4 || s[3] != CHANNELS {
        return Err(Error::invalid(format!("expected [R, A, E, 8] descriptors, got {s:?}")));
    }
    Ok([s[0], s[1], s[2]])
}

fn entry(vol: &NdArray, r: usize, a: usize, e: usize, dims: [usize; 3]) -> SparseEntry {
    let cell = (r * dims[1] + a) * dims[2] + e;
    let mut desc = [0.0; CHANNELS];
    desc.copy_from_slice(vol.row(cell));
    SparseEntry {
        az: a as u32,
        el: e as u32,
        desc,
    }
}

/// Descending mean power, then ascending (az, el).
fn rank_cmp(x: &SparseEntry, y: &SparseEntry) -> std::cmp::Ordering {
    y.mean_power()
        .total_cmp(&x.mean_power())
        .then((x.az, x.el).cmp(&(y.az, y.el)))
}

/// Keeps the `n_r` cells of highest mean power within every range bin.
pub fn sidelobe_sparsify(vol: &NdArray, n_r: usize) -> Result<SparseRT> {
    if n_r == 0 {
        return Err(Error::invalid("n_r must be at least 1"));
    }
    let dims = check_volume(vol)?;
    let per_range = dims[1] * dims[2];
    let keep = n_r.min(per_range);
    let mut ranges = Vec::with_capacity(dims[0]);
    for r in 0..dims[0] {
        let mut cells: Vec<SparseEntry> = (0..dims[1])
            .flat_map(|a| (0..dims[2]).map(move |e| (a, e)))
            .map(|(a, e)| entry(vol, r, a, e, dims))
            .collect();
        if keep < cells.len() {
            cells.select_nth_unstable_by(keep - 1, rank_cmp);
            cells.truncate(keep);
        }
        cells.sort_by(rank_cmp);
        ranges.push(cells);
    }
    Ok(SparseRT { n_r, ranges })
}

/// Keeps the `ceil(keep_fraction * R * A * E)` strongest cells of the whole
/// volume, i.e. everything above the `1 - keep_fraction` quantile of mean
/// power. Ties rank by (az, el, range).
pub fn percentile_sparsify(vol: &NdArray, keep_fraction: f64) -> Result<SparseRT> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    let dims = check_volume(vol)?;
    let total = dims.iter().product::<usize>();
    let keep = ((keep_fraction * total as f64).ceil() as usize).min(total);
    let mut all: Vec<(usize, SparseEntry)> = Vec::with_capacity(total);
    for r in 0..dims[0] {
        for a in 0..dims[1] {
            for e in 0..dims[2] {
                all.push((r, entry(vol, r, a, e, dims)));
            }
        }
    }
    let cmp = |x: &(usize, SparseEntry), y: &(usize, SparseEntry)| {
        rank_cmp(&x.1, &y.1).then(x.0.cmp(&y.0))
    };
    if keep < all.len() {
        all.select_nth_unstable_by(keep - 1, cmp);
        all.truncate(keep);
    }
    let mut ranges = vec![Vec::new(); dims[0]];
    for (r, e) in all {
        ranges[r].push(e);
    }
    for r in &mut ranges {
        r.sort_by(rank_cmp);
    }
    Ok(SparseRT { n_r: 0, ranges })
}

/// Per-range retention counts and their entropy normalised to `[0, 1]`
/// by `ln R`. Empty input has entropy 0; equal non-zero counts give 1.
pub fn range_coverage(s: &SparseRT) -> (Vec<usize>, f64) {
    let counts = s.counts();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return (counts, 0.0);
    }
    if counts.iter().all(|&c| c == counts[0]) || counts.len() == 1 {
        return (counts, 1.0);
    }
    let t = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .sum();
    // abs: a single occupied range sums to -0.0
    (counts.clone(), (h / (counts.len() as f64).ln()).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol_from_means(r: usize, a: usize, e: usize, mean: impl Fn(usize, usize, usize) -> f64) -> NdArray {
        let mut v = NdArray::zeros(&[r, a, e, CHANNELS]);
        for i in 0..r {
            for j in 0..a {
                for k in 0..e {
                    v.set(&[i, j, k, MEAN], mean(i, j, k));
                }
            }
        }
        v
    }

    #[test]
    fn budget_above_cell_count_keeps_everything() {
        let v = vol_from_means(3, 2, 2, |i, j, k| (i + j + k) as f64);
        let s = sidelobe_sparsify(&v, 10).unwrap();
        assert_eq!(s.counts(), vec![4, 4, 4]);
        assert_eq!(range_coverage(&s).1, 1.0);
    }

    #[test]
    fn sorted_and_tie_broken() {
        let v = vol_from_means(1, 2, 2, |_, j, _| if j == 1 { 2.0 } else { 1.0 });
        let s = sidelobe_sparsify(&v, 3).unwrap();
        let order: Vec<(u32, u32)> = s.ranges[0].iter().map(|e| (e.az, e.el)).collect();
        assert_eq!(order, vec![(1, 0), (1, 1), (0, 0)]);
    }

    #[test]
    fn percentile_keep_all() {
        let v = vol_from_means(2, 3, 2, |i, j, k| (i * 7 + j * 3 + k) as f64);
        let s = percentile_sparsify(&v, 1.0).unwrap();
        assert_eq!(s.num_entries(), 12);
        assert!(percentile_sparsify(&v, 0.0).is_err());
    }

    #[test]
    fn empty_coverage() {
        assert_eq!(range_coverage(&SparseRT::empty(4)).1, 0.0);
    }

    #[test]
    fn variable_counts_round_trip() {
        let v = vol_from_means(3, 2, 2, |i, _, _| if i == 1 { 10.0 } else { 1.0 });
        let s = percentile_sparsify(&v, 0.5).unwrap();
        assert_eq!(s.counts(), vec![1, 4, 1]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.sprt");
        s.save(&p).unwrap();
        assert_eq!(SparseRT::load(&p).unwrap(), s);
    }
}
