//! Elementary operators: each pairs an eager forward with a [`Backward`].

use rand::Rng;

use super::array::NdArray;
use super::graph::{Backward, Graph, Var};
use crate::error::{Error, Result};

fn out_shape_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    match s.last_mut() {
        Some(l) => *l = last,
        None => s.push(last),
    }
    s
}

fn array_with_shape(shape: Vec<usize>, data: Vec<f64>) -> NdArray {
    if shape.contains(&0) {
        let w = *shape.last().unwrap();
        return NdArray::rows(0, w, data);
    }
    NdArray::from_vec(&shape, data).expect("internal shape")
}

struct LinearOp {
    has_bias: bool,
}

impl Backward for LinearOp {
    fn backward(&self, inputs: &[&NdArray], _out: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
        let rows = x.outer_len();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        let wd = w.data();
        for r in 0..rows {
            let g = &grad.data()[r * n_out..(r + 1) * n_out];
            let xr = &x.data()[r * n_in..(r + 1) * n_in];
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for i in 0..n_in {
                let wrow = &wd[i * n_out..(i + 1) * n_out];
                let mut acc = 0.0;
                for j in 0..n_out {
                    acc += g[j] * wrow[j];
                }
                dxr[i] = acc;
                let xi = xr[i];
                if xi != 0.0 {
                    let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
                    for j in 0..n_out {
                        dwrow[j] += xi * g[j];
                    }
                }
            }
        }
        let mut out = vec![
            Some(array_with_shape(x.shape().to_vec(), dx)),
            Some(NdArray::from_vec(w.shape(), dw).unwrap()),
        ];
        if self.has_bias {
            let mut db = vec![0.0; n_out];
            for r in 0..rows {
                for (d, g) in db.iter_mut().zip(&grad.data()[r * n_out..(r + 1) * n_out]) {
                    *d += g;
                }
            }
            out.push(Some(NdArray::vector(&db)));
        }
        out
    }
}

/// Affine map over the last axis: `x @ w + b`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let (xs, ws) = (g.shape(x).to_vec(), g.shape(w).to_vec());
    if ws.len() != 2 || xs.last() != Some(&ws[0]) {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: xs,
            rhs: ws,
        });
    }
    let (n_in, n_out) = (ws[0], ws[1]);
    if let Some(b) = b {
        if g.shape(b) != [n_out] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                lhs: ws,
                rhs: g.shape(b).to_vec(),
            });
        }
    }
    let xv = g.value(x);
    let wv = g.value(w).data();
    let rows = xv.outer_len();
    let mut out = vec![0.0; rows * n_out];
    for r in 0..rows {
        let o = &mut out[r * n_out..(r + 1) * n_out];
        if let Some(b) = b {
            o.copy_from_slice(g.value(b).data());
        }
        for (i, &xi) in xv.data()[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (oj, wj) in o.iter_mut().zip(&wv[i * n_out..(i + 1) * n_out]) {
                *oj += xi * wj;
            }
        }
    }
    let value = array_with_shape(out_shape_last(&xs, n_out), out);
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(g.push(value, &inputs, LinearOp { has_bias: b.is_some() }))
}

struct AddOp;

impl Backward for AddOp {
    fn backward(&self, _i: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

pub fn add(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "add",
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    let mut v = g.value(a).clone();
    v.add_assign(g.value(b));
    Ok(g.push(v, &[a, b], AddOp))
}

struct ScaleOp(f64);

impl Backward for ScaleOp {
    fn backward(&self, _i: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        vec![Some(grad.map(|v| v * self.0))]
    }
}

pub fn scale(g: &mut Graph, a: Var, s: f64) -> Var {
    let v = g.value(a).map(|x| x * s);
    g.push(v, &[a], ScaleOp(s))
}

struct ReluOp;

impl Backward for ReluOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let mut d = grad.clone();
        for (dv, &x) in d.data_mut().iter_mut().zip(inputs[0].data()) {
            if x <= 0.0 {
                *dv = 0.0;
            }
        }
        vec![Some(d)]
    }
}

pub fn relu(g: &mut Graph, a: Var) -> Var {
    let v = g.value(a).map(|x| x.max(0.0));
    g.push(v, &[a], ReluOp)
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Max-subtracted softmax along one axis of a plain array.
pub fn softmax_array(x: &NdArray, axis: usize) -> NdArray {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let mut y = x.clone();
    let d = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let m = (0..n).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..n {
                let e = (d[at(k)] - m).exp();
                d[at(k)] = e;
                s += e;
            }
            for k in 0..n {
                d[at(k)] /= s;
            }
        }
    }
    y
}

struct SoftmaxOp {
    axis: usize,
}

impl Backward for SoftmaxOp {
    fn backward(&self, _i: &[&NdArray], y: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let (outer, n, inner) = axis_split(y.shape(), self.axis);
        let mut dx = NdArray::zeros(y.shape());
        let (yd, gd) = (y.data(), grad.data());
        let dd = dx.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let dot: f64 = (0..n).map(|k| yd[at(k)] * gd[at(k)]).sum();
                for k in 0..n {
                    dd[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                }
            }
        }
        vec![Some(dx)]
    }
}

pub fn softmax(g: &mut Graph, x: Var, axis: usize) -> Result<Var> {
    if axis >= g.shape(x).len() {
        return Err(Error::invalid(format!(
            "softmax axis {axis} out of range for shape {:?}",
            g.shape(x)
        )));
    }
    let y = softmax_array(g.value(x), axis);
    Ok(g.push(y, &[x], SoftmaxOp { axis }))
}

struct ReshapeOp;

impl Backward for ReshapeOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let shape = inputs[0].shape().to_vec();
        vec![Some(array_with_shape(shape, grad.data().to_vec()))]
    }
}

pub fn reshape(g: &mut Graph, x: Var, shape: &[usize]) -> Result<Var> {
    let n: usize = shape.iter().product();
    if n != g.value(x).len() {
        return Err(Error::ShapeMismatch {
            op: "reshape",
            lhs: g.shape(x).to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let v = array_with_shape(shape.to_vec(), g.value(x).data().to_vec());
    Ok(g.push(v, &[x], ReshapeOp))
}

struct ConcatLastOp {
    widths: Vec<usize>,
}

impl Backward for ConcatLastOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let total: usize = self.widths.iter().sum();
        let rows = grad.len() / total.max(1);
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (inp, &w) in inputs.iter().zip(&self.widths) {
            let mut d = Vec::with_capacity(rows * w);
            for r in 0..rows {
                d.extend_from_slice(&grad.data()[r * total + offset..r * total + offset + w]);
            }
            offset += w;
            out.push(Some(array_with_shape(inp.shape().to_vec(), d)));
        }
        out
    }
}

/// Concatenates along the last axis; leading axes must agree.
pub fn concat_last(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    let first = g.shape(parts[0]).to_vec();
    let lead = &first[..first.len() - 1];
    for &p in parts {
        let s = g.shape(p);
        if &s[..s.len() - 1] != lead {
            return Err(Error::ShapeMismatch {
                op: "concat_last",
                lhs: first.clone(),
                rhs: s.to_vec(),
            });
        }
    }
    let widths: Vec<usize> = parts.iter().map(|&p| g.value(p).last_dim()).collect();
    let total = widths.iter().sum();
    let rows = g.value(parts[0]).outer_len();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (&p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&g.value(p).data()[r * w..(r + 1) * w]);
        }
    }
    let v = array_with_shape(out_shape_last(&first, total), data);
    Ok(g.push(v, parts, ConcatLastOp { widths }))
}

struct GatherRowsOp {
    index: Vec<Option<usize>>,
}

impl Backward for GatherRowsOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let src = inputs[0];
        let w = src.last_dim();
        let mut d = vec![0.0; src.len()];
        for (r, idx) in self.index.iter().enumerate() {
            if let Some(s) = *idx {
                for c in 0..w {
                    d[s * w + c] += grad.data()[r * w + c];
                }
            }
        }
        vec![Some(array_with_shape(src.shape().to_vec(), d))]
    }
}

/// `out[r] = src[index[r]]` over rows of a `[N, C]` view; `None` yields a zero row.
pub fn gather_rows(g: &mut Graph, src: Var, index: Vec<Option<usize>>) -> Result<Var> {
    let sv = g.value(src);
    let w = sv.last_dim();
    let n = sv.outer_len();
    let mut data = Vec::with_capacity(index.len() * w);
    for idx in &index {
        match *idx {
            Some(s) if s < n => data.extend_from_slice(sv.row(s)),
            Some(s) => {
                return Err(Error::invalid(format!("gather index {s} out of {n} rows")));
            }
            None => data.extend(std::iter::repeat_n(0.0, w)),
        }
    }
    let v = NdArray::rows(index.len(), w, data);
    Ok(g.push(v, &[src], GatherRowsOp { index }))
}

/// Stacks the rows of `a` above the rows of `b`.
pub fn concat_rows(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (wa, wb) = (g.value(a).last_dim(), g.value(b).last_dim());
    if wa != wb {
        return Err(Error::ShapeMismatch {
            op: "concat_rows",
            lhs: g.shape(a).to_vec(),
            rhs: g.shape(b).to_vec(),
        });
    }
    let (na, nb) = (g.value(a).outer_len(), g.value(b).outer_len());
    let mut data = g.value(a).data().to_vec();
    data.extend_from_slice(g.value(b).data());
    let v = NdArray::rows(na + nb, wa, data);
    Ok(g.push(v, &[a, b], ConcatRowsOp { na }))
}

struct ConcatRowsOp {
    na: usize,
}

impl Backward for ConcatRowsOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let w = grad.last_dim();
        let (ga, gb) = grad.data().split_at(self.na * w);
        vec![
            Some(array_with_shape(inputs[0].shape().to_vec(), ga.to_vec())),
            Some(array_with_shape(inputs[1].shape().to_vec(), gb.to_vec())),
        ]
    }
}

struct MaskOp {
    mask: Vec<f64>,
}

impl Backward for MaskOp {
    fn backward(&self, _i: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let mut d = grad.clone();
        for (v, m) in d.data_mut().iter_mut().zip(&self.mask) {
            *v *= m;
        }
        vec![Some(d)]
    }
}

/// Inverted dropout; identity outside training mode.
pub fn dropout(g: &mut Graph, x: Var, p: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
    }
    if !g.is_training() || p == 0.0 {
        return Ok(x);
    }
    let n = g.value(x).len();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..n)
        .map(|_| if g.rng().random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mut v = g.value(x).clone();
    for (a, m) in v.data_mut().iter_mut().zip(&mask) {
        *a *= m;
    }
    Ok(g.push(v, &[x], MaskOp { mask }))
}

struct SumOp {
    scale: f64,
}

impl Backward for SumOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let gv = grad.data()[0] * self.scale;
        let shape = inputs[0].shape().to_vec();
        let n = inputs[0].len();
        vec![Some(array_with_shape(shape, vec![gv; n]))]
    }
}

pub fn sum_all(g: &mut Graph, x: Var) -> Var {
    let v = NdArray::scalar(g.value(x).sum());
    g.push(v, &[x], SumOp { scale: 1.0 })
}

pub fn mean_all(g: &mut Graph, x: Var) -> Var {
    let n = g.value(x).len().max(1) as f64;
    let v = NdArray::scalar(g.value(x).sum() / n);
    g.push(v, &[x], SumOp { scale: 1.0 / n })
}

/// Weighted sum of scalar nodes with constant coefficients.
pub fn weighted_sum(g: &mut Graph, terms: &[(Var, f64)]) -> Result<Var> {
    let mut total = 0.0;
    for &(v, w) in terms {
        if g.value(v).len() != 1 {
            return Err(Error::invalid("weighted_sum expects scalar terms"));
        }
        total += w * g.value(v).data()[0];
    }
    let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
    let coeffs = terms.iter().map(|t| t.1).collect();
    Ok(g.push(NdArray::scalar(total), &vars, WeightedSumOp { coeffs }))
}

struct WeightedSumOp {
    coeffs: Vec<f64>,
}

impl Backward for WeightedSumOp {
    fn backward(&self, _i: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        self.coeffs
            .iter()
            .map(|c| Some(NdArray::scalar(c * grad.data()[0])))
            .collect()
    }
}
