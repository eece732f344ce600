use crate::error::{Error, Result};
use crate::tensor::NdArray;

/// Threshold multiplier for cell averaging over `n_train` cells.
pub fn cfar_alpha(n_train: usize, pfa: f64) -> f64 {
    let n = n_train as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

/// Two-dimensional cell-averaging CFAR.
///
/// The training band is the square ring between half-widths `guard` and
/// `guard + train` around the cell under test. Cells whose ring leaves the
/// map are never detections. Returns a row-major mask over `map`.
pub fn ca_cfar(map: &NdArray, guard: usize, train: usize, pfa: f64) -> Result<Vec<bool>> {
    if map.rank() != 2 {
        return Err(Error::invalid(format!("CFAR expects a 2D map, got {:?}", map.shape())));
    }
    if train == 0 {
        return Err(Error::invalid("CFAR window has no training cells"));
    }
    if !(pfa > 0.0 && pfa < 1.0) {
        return Err(Error::invalid(format!("pfa {pfa} outside (0, 1)")));
    }
    let (rows, cols) = (map.shape()[0], map.shape()[1]);
    let outer = guard + train;
    let n_train = (2 * outer + 1).pow(2) - (2 * guard + 1).pow(2);
    let alpha = cfar_alpha(n_train, pfa);

    // summed-area table with a zero border
    let mut sat = vec![0.0; (rows + 1) * (cols + 1)];
    for r in 0..rows {
        let mut run = 0.0;
        for c in 0..cols {
            run += map.data()[r * cols + c];
            sat[(r + 1) * (cols + 1) + c + 1] = sat[r * (cols + 1) + c + 1] + run;
        }
    }
    let box_sum = |r0: usize, c0: usize, r1: usize, c1: usize| {
        let w = cols + 1;
        sat[(r1 + 1) * w + c1 + 1] - sat[r0 * w + c1 + 1] - sat[(r1 + 1) * w + c0] + sat[r0 * w + c0]
    };

    let mut mask = vec![false; rows * cols];
    if rows < 2 * outer + 1 || cols < 2 * outer + 1 {
        return Ok(mask);
    }
    for r in outer..rows - outer {
        for c in outer..cols - outer {
            let all = box_sum(r - outer, c - outer, r + outer, c + outer);
            let inner = box_sum(r - guard, c - guard, r + guard, c + guard);
            let noise = (all - inner) / n_train as f64;
            mask[r * cols + c] = map.data()[r * cols + c] > alpha * noise;
        }
    }
    Ok(mask)
}
