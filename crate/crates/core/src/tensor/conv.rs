//! Gather-scatter convolution over an explicit rulebook.
//!
//! A rulebook lists `(input row, output row, kernel tap)` triples. Dense,
//! submanifold and strided sparse 3D convolutions are all expressed this way.

use std::collections::HashMap;

use super::array::NdArray;
use super::graph::{Backward, Graph, Var};
use crate::error::{Error, Result};

pub type Coord = [usize; 3];

/// Number of taps of a 3x3x3 kernel.
pub const TAPS: usize = 27;

/// Tap index of an offset in `{-1, 0, 1}^3`.
pub fn tap_of(d: [i64; 3]) -> usize {
    ((d[0] + 1) * 9 + (d[1] + 1) * 3 + (d[2] + 1)) as usize
}

fn offsets() -> impl Iterator<Item = [i64; 3]> {
    (0..TAPS as i64).map(|t| [t / 9 - 1, (t / 3) % 3 - 1, t % 3 - 1])
}

fn shifted(c: Coord, d: [i64; 3], extents: [usize; 3]) -> Option<Coord> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let v = c[a] as i64 + d[a];
        if v < 0 || v >= extents[a] as i64 {
            return None;
        }
        out[a] = v as usize;
    }
    Some(out)
}

#[derive(Clone, Debug, Default)]
pub struct Rulebook {
    /// Entries grouped by tap: `by_tap[t]` holds `(input, output)` pairs.
    pub by_tap: Vec<Vec<(u32, u32)>>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Rulebook {
    fn empty(n_in: usize, n_out: usize) -> Self {
        Self {
            by_tap: vec![Vec::new(); TAPS],
            n_in,
            n_out,
        }
    }

    pub fn len(&self) -> usize {
        self.by_tap.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Submanifold rule: output sites are the input sites; only active
    /// neighbours contribute. `out[o] = sum_d W[d] in[o + d]`.
    pub fn submanifold(coords: &[Coord], extents: [usize; 3]) -> Self {
        let index: HashMap<Coord, usize> =
            coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut rb = Self::empty(coords.len(), coords.len());
        for (o, &c) in coords.iter().enumerate() {
            for d in offsets() {
                if let Some(&i) = shifted(c, d, extents).and_then(|n| index.get(&n)) {
                    rb.by_tap[tap_of(d)].push((i as u32, o as u32));
                }
            }
        }
        rb
    }

    /// Regular sparse rule with stride 1 or 2 and padding 1: an output site
    /// is active iff its receptive field holds an active input.
    /// Returns the rulebook and the sorted output coordinates.
    pub fn sparse(coords: &[Coord], extents: [usize; 3], stride: usize) -> (Self, Vec<Coord>, [usize; 3]) {
        let out_ext = out_extents(extents, stride);
        let mut hits: Vec<(Coord, usize, usize)> = Vec::new();
        for (i, &c) in coords.iter().enumerate() {
            for d in offsets() {
                // out[o] gathers in[stride*o + d]
                let mut o = [0usize; 3];
                let mut ok = true;
                for a in 0..3 {
                    let v = c[a] as i64 - d[a];
                    if v < 0 || v % stride as i64 != 0 || (v / stride as i64) >= out_ext[a] as i64 {
                        ok = false;
                        break;
                    }
                    o[a] = (v / stride as i64) as usize;
                }
                if ok {
                    hits.push((o, i, tap_of(d)));
                }
            }
        }
        let mut out_coords: Vec<Coord> = hits.iter().map(|h| h.0).collect();
        out_coords.sort_unstable();
        out_coords.dedup();
        let index: HashMap<Coord, usize> =
            out_coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut rb = Self::empty(coords.len(), out_coords.len());
        for (o, i, t) in hits {
            rb.by_tap[t].push((i as u32, index[&o] as u32));
        }
        for t in &mut rb.by_tap {
            t.sort_unstable_by_key(|&(i, o)| (o, i));
        }
        (rb, out_coords, out_ext)
    }
}

/// Output extents of a kernel-3, padding-1 convolution.
pub fn out_extents(extents: [usize; 3], stride: usize) -> [usize; 3] {
    extents.map(|e| e.div_ceil(stride))
}

/// Every cell of a grid in row-major order.
pub fn dense_coords(extents: [usize; 3]) -> Vec<Coord> {
    let mut v = Vec::with_capacity(extents.iter().product());
    for i in 0..extents[0] {
        for j in 0..extents[1] {
            for k in 0..extents[2] {
                v.push([i, j, k]);
            }
        }
    }
    v
}

struct SparseConvOp {
    rules: Rulebook,
    has_bias: bool,
}

impl Backward for SparseConvOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (cin, cout) = (w.shape()[1], w.shape()[2]);
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        for (t, pairs) in self.rules.by_tap.iter().enumerate() {
            let wt = &w.data()[t * cin * cout..(t + 1) * cin * cout];
            let dwt = &mut dw[t * cin * cout..(t + 1) * cin * cout];
            for &(i, o) in pairs {
                let (i, o) = (i as usize, o as usize);
                let g = &grad.data()[o * cout..(o + 1) * cout];
                let xi = &x.data()[i * cin..(i + 1) * cin];
                let dxi = &mut dx[i * cin..(i + 1) * cin];
                for a in 0..cin {
                    let wrow = &wt[a * cout..(a + 1) * cout];
                    let mut acc = 0.0;
                    for b in 0..cout {
                        acc += wrow[b] * g[b];
                    }
                    dxi[a] += acc;
                    let xa = xi[a];
                    if xa != 0.0 {
                        let dwrow = &mut dwt[a * cout..(a + 1) * cout];
                        for b in 0..cout {
                            dwrow[b] += xa * g[b];
                        }
                    }
                }
            }
        }
        let mut out = vec![
            Some(NdArray::rows(x.outer_len(), cin, dx)),
            Some(NdArray::from_vec(w.shape(), dw).unwrap()),
        ];
        if self.has_bias {
            let mut db = vec![0.0; cout];
            for o in 0..self.rules.n_out {
                for (d, g) in db.iter_mut().zip(&grad.data()[o * cout..(o + 1) * cout]) {
                    *d += g;
                }
            }
            out.push(Some(NdArray::vector(&db)));
        }
        out
    }
}

/// `out[o] = b + sum over rules (i, o, t) of x[i] @ w[t]`, with
/// `x: [N_in, C_in]`, `w: [27, C_in, C_out]`.
pub fn sparse_conv(g: &mut Graph, x: Var, w: Var, b: Option<Var>, rules: Rulebook) -> Result<Var> {
    let ws = g.shape(w).to_vec();
    let xs = g.shape(x).to_vec();
    if ws.len() != 3 || ws[0] != TAPS || xs.len() != 2 || xs[1] != ws[1] || xs[0] != rules.n_in {
        return Err(Error::ShapeMismatch {
            op: "sparse_conv",
            lhs: xs,
            rhs: ws,
        });
    }
    let (cin, cout) = (ws[1], ws[2]);
    let mut out = vec![0.0; rules.n_out * cout];
    if let Some(b) = b {
        let bv = g.value(b).data();
        for o in 0..rules.n_out {
            out[o * cout..(o + 1) * cout].copy_from_slice(bv);
        }
    }
    let (xv, wv) = (g.value(x).data(), g.value(w).data());
    for (t, pairs) in rules.by_tap.iter().enumerate() {
        let wt = &wv[t * cin * cout..(t + 1) * cin * cout];
        for &(i, o) in pairs {
            let (i, o) = (i as usize, o as usize);
            let xi = &xv[i * cin..(i + 1) * cin];
            let orow = &mut out[o * cout..(o + 1) * cout];
            for (a, &xa) in xi.iter().enumerate() {
                if xa == 0.0 {
                    continue;
                }
                for (ob, wb) in orow.iter_mut().zip(&wt[a * cout..(a + 1) * cout]) {
                    *ob += xa * wb;
                }
            }
        }
    }
    let value = NdArray::rows(rules.n_out, cout, out);
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(g.push(
        value,
        &inputs,
        SparseConvOp {
            rules,
            has_bias: b.is_some(),
        },
    ))
}
