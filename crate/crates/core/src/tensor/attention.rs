//! Grouped scaled dot-product attention and the multi-head wrapper.

use std::ops::Range;

use super::array::NdArray;
use super::graph::{Backward, Graph, Var};
use super::ops::{dropout, linear};
use super::param::ParamStore;
use crate::error::{Error, Result};

struct AttentionOp {
    heads: usize,
    groups: Vec<Range<usize>>,
    // Row-stochastic weights per (group, head), row-major [len, len].
    probs: Vec<Vec<f64>>,
}

fn head_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Backward for AttentionOp {
    fn backward(&self, inputs: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let e = q.last_dim();
        let d = e / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        let mut slot = 0;
        for grp in &self.groups {
            let n = grp.len();
            for h in 0..self.heads {
                let p = &self.probs[slot];
                slot += 1;
                let cols = h * d..(h + 1) * d;
                let vrow = |t: usize| &v.data()[(grp.start + t) * e..][cols.clone()];
                let grow = |t: usize| &grad.data()[(grp.start + t) * e..][cols.clone()];
                // dS = P * (dP - rowsum(dP * P)), dP = dO V^T
                let mut ds = vec![0.0; n * n];
                for i in 0..n {
                    let mut dp = vec![0.0; n];
                    for j in 0..n {
                        dp[j] = head_dot(grow(i), vrow(j));
                    }
                    let s: f64 = (0..n).map(|j| dp[j] * p[i * n + j]).sum();
                    for j in 0..n {
                        ds[i * n + j] = p[i * n + j] * (dp[j] - s);
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let pij = p[i * n + j];
                        let sij = ds[i * n + j] * scale;
                        let (gi, vi) = ((grp.start + i) * e + h * d, (grp.start + j) * e + h * d);
                        for c in 0..d {
                            dv[vi + c] += pij * grad.data()[gi + c];
                            dq[gi + c] += sij * k.data()[vi + c];
                            dk[vi + c] += sij * q.data()[gi + c];
                        }
                    }
                }
            }
        }
        vec![
            Some(NdArray::rows(q.outer_len(), e, dq)),
            Some(NdArray::rows(k.outer_len(), e, dk)),
            Some(NdArray::rows(v.outer_len(), e, dv)),
        ]
    }
}

/// Softmax(Q K^T / sqrt(d)) V per head, restricted to token groups.
///
/// `q`, `k`, `v` are `[T, e]`; tokens attend only within their group.
/// Groups must be disjoint, contiguous and cover `0..T`.
pub fn attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    groups: &[Range<usize>],
) -> Result<Var> {
    let shape = g.shape(q).to_vec();
    if shape.len() != 2 || g.shape(k) != shape.as_slice() || g.shape(v) != shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: shape,
            rhs: g.shape(k).to_vec(),
        });
    }
    let (t, e) = (shape[0], shape[1]);
    if heads == 0 || e % heads != 0 {
        return Err(Error::invalid(format!(
            "embedding width {e} is not divisible by {heads} heads"
        )));
    }
    let mut expect = 0;
    for grp in groups {
        if grp.start != expect {
            return Err(Error::invalid("attention groups must tile the token range"));
        }
        expect = grp.end;
    }
    if expect != t {
        return Err(Error::invalid("attention groups must tile the token range"));
    }
    let d = e / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let (qv, kv, vv) = (g.value(q), g.value(k), g.value(v));
    let mut out = vec![0.0; t * e];
    let mut probs = Vec::with_capacity(groups.len() * heads);
    for grp in groups {
        let n = grp.len();
        for h in 0..heads {
            let cols = h * d..(h + 1) * d;
            let mut p = vec![0.0; n * n];
            for i in 0..n {
                let qi = &qv.row(grp.start + i)[cols.clone()];
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    let s = head_dot(qi, &kv.row(grp.start + j)[cols.clone()]) * scale;
                    p[i * n + j] = s;
                    m = m.max(s);
                }
                let mut z = 0.0;
                for j in 0..n {
                    p[i * n + j] = (p[i * n + j] - m).exp();
                    z += p[i * n + j];
                }
                for j in 0..n {
                    p[i * n + j] /= z;
                }
                let o = &mut out[(grp.start + i) * e..][cols.clone()];
                for j in 0..n {
                    let pij = p[i * n + j];
                    for (oc, vc) in o.iter_mut().zip(&vv.row(grp.start + j)[cols.clone()]) {
                        *oc += pij * vc;
                    }
                }
            }
            probs.push(p);
        }
    }
    let value = NdArray::rows(t, e, out);
    Ok(g.push(
        value,
        &[q, k, v],
        AttentionOp {
            heads,
            groups: groups.to_vec(),
            probs,
        },
    ))
}

/// Parameter names of one multi-head attention block under `prefix`.
pub struct MhaNames {
    prefix: String,
}

impl MhaNames {
    pub fn new(prefix: &str) -> Self {
        Self {
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, e: usize) -> Result<()> {
        for p in ["q", "k", "v", "o"] {
            store.init_uniform(&self.name(&format!("w{p}")), &[e, e], e)?;
            store.init_zeros(&self.name(&format!("b{p}")), &[e])?;
        }
        Ok(())
    }

    pub fn all(&self) -> Vec<String> {
        ["q", "k", "v", "o"]
            .iter()
            .flat_map(|p| [self.name(&format!("w{p}")), self.name(&format!("b{p}"))])
            .collect()
    }
}

/// Multi-head attention with q/k/v/output projections and output dropout.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    names: &MhaNames,
    xq: Var,
    xk: Var,
    xv: Var,
    heads: usize,
    dropout_p: f64,
    groups: &[Range<usize>],
) -> Result<Var> {
    let proj = |g: &mut Graph, x: Var, p: &str| -> Result<Var> {
        let w = g.param(store, &names.name(&format!("w{p}")))?;
        let b = g.param(store, &names.name(&format!("b{p}")))?;
        linear(g, x, w, Some(b))
    };
    let q = proj(g, xq, "q")?;
    let k = proj(g, xk, "k")?;
    let v = proj(g, xv, "v")?;
    let a = attention(g, q, k, v, heads, groups)?;
    let o = proj(g, a, "o")?;
    dropout(g, o, dropout_p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_heads() {
        let mut g = Graph::eval();
        let x = g.constant(NdArray::zeros(&[2, 5]));
        assert!(attention(&mut g, x, x, x, 2, &[0..2]).is_err());
    }

    #[test]
    fn equal_keys_average_values() {
        let mut g = Graph::eval();
        let q = g.constant(NdArray::from_vec(&[2, 2], vec![0.3, -1.0, 2.0, 0.5]).unwrap());
        let k = g.constant(NdArray::from_vec(&[2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap());
        let v = g.constant(NdArray::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        let o = attention(&mut g, q, k, v, 1, &[0..2]).unwrap();
        for r in 0..2 {
            assert!((g.value(o).row(r)[0] - 2.0).abs() < 1e-12);
            assert!((g.value(o).row(r)[1] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn groups_do_not_mix() {
        let mut g = Graph::eval();
        let x = g.constant(NdArray::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 5.0]).unwrap());
        let o = attention(&mut g, x, x, x, 2, &[0..1, 1..2]).unwrap();
        assert_eq!(g.value(o), g.value(x));
    }
}
