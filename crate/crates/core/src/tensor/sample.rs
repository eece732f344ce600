//! Trilinear sampling of `[X, Y, Z, C]` volumes at fractional indices.
//!
//! Fractional indices are clamped to the node box `[0, n-1]` per axis. A
//! clamped coordinate carries no gradient.

use super::array::NdArray;
use super::graph::{Backward, Graph, Var};
use crate::error::{Error, Result};

/// Corner contributions of one sample point.
pub(crate) struct Corners {
    /// Flat cell index (row into the `[X*Y*Z, C]` view).
    pub cell: [usize; 8],
    pub weight: [f64; 8],
    /// d weight / d (x, y, z) for each corner.
    pub dweight: [[f64; 3]; 8],
}

fn axis_weights(pos: f64, n: usize) -> (usize, f64, bool) {
    if n == 1 {
        return (0, 0.0, false);
    }
    let hi = (n - 1) as f64;
    let inside = pos > 0.0 && pos < hi;
    let p = pos.clamp(0.0, hi);
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, p - i0 as f64, inside)
}

pub(crate) fn corners(dims: [usize; 3], loc: [f64; 3]) -> Corners {
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    let mut live = [false; 3];
    for a in 0..3 {
        let (i0, f, inside) = axis_weights(loc[a], dims[a]);
        base[a] = i0;
        frac[a] = f;
        live[a] = inside;
    }
    let mut c = Corners {
        cell: [0; 8],
        weight: [0.0; 8],
        dweight: [[0.0; 3]; 8],
    };
    for corner in 0..8 {
        let bit = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let mut idx = [0usize; 3];
        let mut w1 = [0.0; 3];
        let mut dw1 = [0.0; 3];
        for a in 0..3 {
            idx[a] = (base[a] + bit[a]).min(dims[a] - 1);
            if bit[a] == 1 {
                w1[a] = frac[a];
                dw1[a] = 1.0;
            } else {
                w1[a] = 1.0 - frac[a];
                dw1[a] = -1.0;
            }
            if dims[a] == 1 {
                // single node: the "upper" corner duplicates index 0 with weight 0
                w1[a] = if bit[a] == 0 { 1.0 } else { 0.0 };
                dw1[a] = 0.0;
            }
            if !live[a] {
                dw1[a] = 0.0;
            }
        }
        c.cell[corner] = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
        c.weight[corner] = w1[0] * w1[1] * w1[2];
        c.dweight[corner] = [
            dw1[0] * w1[1] * w1[2],
            w1[0] * dw1[1] * w1[2],
            w1[0] * w1[1] * dw1[2],
        ];
    }
    c
}

fn volume_dims(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.len() != 4 {
        return Err(Error::invalid(format!(
            "expected a [X, Y, Z, C] volume, got {shape:?}"
        )));
    }
    Ok([shape[0], shape[1], shape[2]])
}

/// Plain-array trilinear interpolation of one point.
pub fn sample_point(vol: &NdArray, loc: [f64; 3], out: &mut [f64]) {
    let shape = vol.shape();
    let dims = [shape[0], shape[1], shape[2]];
    let ch = shape[3];
    let c = corners(dims, loc);
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..8 {
        let w = c.weight[k];
        if w == 0.0 {
            continue;
        }
        let row = &vol.data()[c.cell[k] * ch..(c.cell[k] + 1) * ch];
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
}

struct TrilinearOp;

impl Backward for TrilinearOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let (vol, pts) = (inputs[0], inputs[1]);
        let dims = volume_dims(vol.shape()).unwrap();
        let ch = vol.shape()[3];
        let mut dvol = NdArray::zeros(vol.shape());
        let mut dpts = vec![0.0; pts.len()];
        for n in 0..pts.outer_len() {
            let p = pts.row(n);
            let c = corners(dims, [p[0], p[1], p[2]]);
            let g = &grad.data()[n * ch..(n + 1) * ch];
            for k in 0..8 {
                let row = &vol.data()[c.cell[k] * ch..(c.cell[k] + 1) * ch];
                let gv: f64 = g.iter().zip(row).map(|(a, b)| a * b).sum();
                for a in 0..3 {
                    dpts[n * 3 + a] += c.dweight[k][a] * gv;
                }
                let w = c.weight[k];
                if w != 0.0 {
                    let drow = &mut dvol.data_mut()[c.cell[k] * ch..(c.cell[k] + 1) * ch];
                    for (d, gg) in drow.iter_mut().zip(g) {
                        *d += w * gg;
                    }
                }
            }
        }
        vec![Some(dvol), Some(NdArray::rows(pts.outer_len(), 3, dpts))]
    }
}

/// Samples `vol: [X, Y, Z, C]` at `pts: [N, 3]` fractional indices.
pub fn trilinear_sample(g: &mut Graph, vol: Var, pts: Var) -> Result<Var> {
    let vs = g.shape(vol).to_vec();
    volume_dims(&vs)?;
    if g.value(pts).last_dim() != 3 || g.shape(pts).len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "trilinear_sample",
            lhs: vs,
            rhs: g.shape(pts).to_vec(),
        });
    }
    let ch = vs[3];
    let n = g.value(pts).outer_len();
    let mut out = vec![0.0; n * ch];
    for i in 0..n {
        let p = g.value(pts).row(i);
        sample_point(g.value(vol), [p[0], p[1], p[2]], &mut out[i * ch..(i + 1) * ch]);
    }
    Ok(g.push(NdArray::rows(n, ch, out), &[vol, pts], TrilinearOp))
}

struct DeformSampleOp {
    refs: Vec<[f64; 3]>,
    heads: usize,
    points: usize,
}

impl DeformSampleOp {
    fn loc(&self, offsets: &NdArray, n: usize, m: usize, k: usize) -> [f64; 3] {
        let o = &offsets.row(n)[(m * self.points + k) * 3..][..3];
        let r = self.refs[n];
        [r[0] + o[0], r[1] + o[1], r[2] + o[2]]
    }
}

impl Backward for DeformSampleOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let (value, offsets, weights) = (inputs[0], inputs[1], inputs[2]);
        let dims = volume_dims(value.shape()).unwrap();
        let ch = value.shape()[3];
        let d = ch / self.heads;
        let n_q = self.refs.len();
        let mut dvalue = NdArray::zeros(value.shape());
        let mut doff = vec![0.0; offsets.len()];
        let mut dw = vec![0.0; weights.len()];
        let mut sample = vec![0.0; d];
        for n in 0..n_q {
            for m in 0..self.heads {
                let g = &grad.data()[n * ch + m * d..n * ch + (m + 1) * d];
                for k in 0..self.points {
                    let slot = m * self.points + k;
                    let a = weights.row(n)[slot];
                    let c = corners(dims, self.loc(offsets, n, m, k));
                    sample.iter_mut().for_each(|s| *s = 0.0);
                    let mut dloc = [0.0; 3];
                    for corner in 0..8 {
                        let base = c.cell[corner] * ch + m * d;
                        let row = &value.data()[base..base + d];
                        let gv: f64 = g.iter().zip(row).map(|(x, y)| x * y).sum();
                        for ax in 0..3 {
                            dloc[ax] += c.dweight[corner][ax] * gv;
                        }
                        let w = c.weight[corner];
                        if w != 0.0 {
                            for (s, v) in sample.iter_mut().zip(row) {
                                *s += w * v;
                            }
                            let wa = w * a;
                            let drow = &mut dvalue.data_mut()[base..base + d];
                            for (dv, gg) in drow.iter_mut().zip(g) {
                                *dv += wa * gg;
                            }
                        }
                    }
                    dw[n * self.heads * self.points + slot] =
                        g.iter().zip(&sample).map(|(x, y)| x * y).sum();
                    for ax in 0..3 {
                        doff[n * offsets.last_dim() + slot * 3 + ax] = a * dloc[ax];
                    }
                }
            }
        }
        vec![
            Some(dvalue),
            Some(NdArray::rows(n_q, offsets.last_dim(), doff)),
            Some(NdArray::rows(n_q, weights.last_dim(), dw)),
        ]
    }
}

/// Core of multi-head deformable attention.
///
/// For query `n` and head `m`, channels `m*d..(m+1)*d` of the output are
/// `sum_k weights[n, m*K + k] * value_m(refs[n] + offsets[n, m*K + k])`,
/// with `value: [X, Y, Z, C]`, `offsets: [N, M*K*3]`, `weights: [N, M*K]`.
pub fn deform_sample(
    g: &mut Graph,
    value: Var,
    refs: Vec<[f64; 3]>,
    offsets: Var,
    weights: Var,
    heads: usize,
    points: usize,
) -> Result<Var> {
    let vs = g.shape(value).to_vec();
    let dims = volume_dims(&vs)?;
    let ch = vs[3];
    if heads == 0 || !ch.is_multiple_of(heads) {
        return Err(Error::invalid(format!(
            "{ch} channels not divisible by {heads} heads"
        )));
    }
    let n_q = refs.len();
    let (os, ws) = (g.shape(offsets).to_vec(), g.shape(weights).to_vec());
    if g.value(offsets).outer_len() != n_q || g.value(offsets).last_dim() != heads * points * 3 {
        return Err(Error::ShapeMismatch {
            op: "deform_sample offsets",
            lhs: vec![n_q, heads * points * 3],
            rhs: os,
        });
    }
    if g.value(weights).outer_len() != n_q || g.value(weights).last_dim() != heads * points {
        return Err(Error::ShapeMismatch {
            op: "deform_sample weights",
            lhs: vec![n_q, heads * points],
            rhs: ws,
        });
    }
    let op = DeformSampleOp {
        refs,
        heads,
        points,
    };
    let d = ch / heads;
    let (vv, ov, wv) = (g.value(value), g.value(offsets), g.value(weights));
    let mut out = vec![0.0; n_q * ch];
    for n in 0..n_q {
        for m in 0..heads {
            let o = &mut out[n * ch + m * d..n * ch + (m + 1) * d];
            for k in 0..points {
                let a = wv.row(n)[m * points + k];
                let c = corners(dims, op.loc(ov, n, m, k));
                for corner in 0..8 {
                    let w = c.weight[corner] * a;
                    if c.weight[corner] == 0.0 {
                        continue;
                    }
                    let base = c.cell[corner] * ch + m * d;
                    for (oc, v) in o.iter_mut().zip(&vv.data()[base..base + d]) {
                        *oc += w * v;
                    }
                }
            }
        }
    }
    Ok(g.push(NdArray::rows(n_q, ch, out), &[value, offsets, weights], op))
}
