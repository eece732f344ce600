use super::{ClassWeights, OccupancyGrid, FREE, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::ops::softmax_array;
use crate::tensor::{Backward, Graph, NdArray, Var};

const CLAMP: f64 = 1e-12;

/// Loss value with its gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad: NdArray,
}

fn check(logits: &NdArray, gt: &OccupancyGrid) -> Result<()> {
    if logits.last_dim() != NUM_CLASSES || logits.outer_len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: logits.shape().to_vec(),
            rhs: [gt.spec.shape().to_vec(), vec![NUM_CLASSES]].concat(),
        });
    }
    Ok(())
}

fn probabilities(logits: &NdArray) -> NdArray {
    softmax_array(logits, logits.rank() - 1)
}

/// Chain rule through the row softmax: `dz = p * (dp - <dp, p>)`.
fn through_softmax(p: &NdArray, dp: &[f64]) -> NdArray {
    let mut out = p.clone();
    for (row, d) in out.data_mut().chunks_exact_mut(NUM_CLASSES).zip(dp.chunks_exact(NUM_CLASSES)) {
        let dot: f64 = row.iter().zip(d).map(|(a, b)| a * b).sum();
        for (r, &di) in row.iter_mut().zip(d) {
            *r *= di - dot;
        }
    }
    out
}

/// Class-weighted cross entropy averaged over voxels.
pub fn loss_ce(logits: &NdArray, gt: &OccupancyGrid, w: &ClassWeights) -> Result<LossValue> {
    check(logits, gt)?;
    let n = gt.len() as f64;
    let p = probabilities(logits);
    let mut grad = NdArray::zeros(logits.shape());
    let mut total = 0.0;
    let floor = CLAMP.ln();
    for (i, &y) in gt.labels().iter().enumerate() {
        let z = logits.row(i);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let logp = z[y as usize] - lse;
        let wy = w.get(y);
        if logp < floor {
            total -= wy * floor;
            continue;
        }
        total -= wy * logp;
        let g = grad.row_mut(i);
        for (c, gc) in g.iter_mut().enumerate() {
            let onehot = if c == y as usize { 1.0 } else { 0.0 };
            *gc = wy * (p.row(i)[c] - onehot) / n;
        }
    }
    Ok(LossValue { value: total / n, grad })
}

/// Lovász-softmax averaged over the classes present in the ground truth.
pub fn loss_lovasz(logits: &NdArray, gt: &OccupancyGrid) -> Result<LossValue> {
    check(logits, gt)?;
    let p = probabilities(logits);
    let labels = gt.labels();
    let n = labels.len();
    let mut dp = vec![0.0; n * NUM_CLASSES];
    let mut total = 0.0;
    let mut present = 0usize;
    for c in 0..NUM_CLASSES {
        let gts = labels.iter().filter(|&&l| l as usize == c).count();
        if gts == 0 {
            continue;
        }
        present += 1;
        let errors: Vec<f64> = (0..n)
            .map(|i| {
                let pc = p.row(i)[c];
                if labels[i] as usize == c { 1.0 - pc } else { pc }
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
        let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
        let mut prev = 0.0;
        let gts = gts as f64;
        for &i in &order {
            let fg = labels[i] as usize == c;
            if fg {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            let step = jaccard - prev;
            prev = jaccard;
            total += errors[i] * step;
            dp[i * NUM_CLASSES + c] += if fg { -step } else { step };
        }
    }
    let k = present.max(1) as f64;
    dp.iter_mut().for_each(|v| *v /= k);
    Ok(LossValue {
        value: total / k,
        grad: through_softmax(&p, &dp),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalVariant {
    Geo,
    Sem,
}

/// `-(ln P + ln R + ln S)` for soft scores `q` against membership `t`.
/// Precision and recall need support, specificity a non-empty complement.
/// Returns the value, its derivative in `q` and the number of terms used.
fn affinity_terms(q: &[f64], t: &[bool]) -> (f64, Vec<f64>, usize) {
    let n_t = t.iter().filter(|&&b| b).count();
    let n_f = t.len() - n_t;
    let a: f64 = q.iter().zip(t).filter(|(_, &b)| b).map(|(v, _)| v).sum();
    let b: f64 = q.iter().sum();
    let mut value = 0.0;
    let mut dq = vec![0.0; q.len()];
    let mut terms = 0;
    let term = |ratio: f64, value: &mut f64| {
        *value -= ratio.max(CLAMP).ln();
        ratio >= CLAMP
    };
    if n_t > 0 {
        terms += 2;
        if term(if b > 0.0 { a / b } else { 0.0 }, &mut value) {
            for (d, &ti) in dq.iter_mut().zip(t) {
                *d -= if ti { 1.0 / a } else { 0.0 } - 1.0 / b;
            }
        }
        if term(a / n_t as f64, &mut value) {
            for (d, &ti) in dq.iter_mut().zip(t) {
                if ti {
                    *d -= 1.0 / a;
                }
            }
        }
    }
    if n_f > 0 {
        terms += 1;
        let s: f64 = q.iter().zip(t).filter(|(_, &b)| !b).map(|(v, _)| 1.0 - v).sum();
        if term(s / n_f as f64, &mut value) {
            for (d, &ti) in dq.iter_mut().zip(t) {
                if !ti {
                    *d += 1.0 / s;
                }
            }
        }
    }
    (value, dq, terms)
}

/// Scene-class affinity loss: `Geo` on occupied-vs-free, `Sem` per class
/// averaged over classes with at least one applicable term.
pub fn loss_scal(logits: &NdArray, gt: &OccupancyGrid, variant: ScalVariant) -> Result<LossValue> {
    check(logits, gt)?;
    let p = probabilities(logits);
    let labels = gt.labels();
    let n = labels.len();
    let mut dp = vec![0.0; n * NUM_CLASSES];
    let value = match variant {
        ScalVariant::Geo => {
            let q: Vec<f64> = (0..n).map(|i| 1.0 - p.row(i)[FREE as usize]).collect();
            let t: Vec<bool> = labels.iter().map(|&l| l != FREE).collect();
            let (v, dq, _) = affinity_terms(&q, &t);
            for (i, d) in dq.into_iter().enumerate() {
                dp[i * NUM_CLASSES + FREE as usize] = -d;
            }
            v
        }
        ScalVariant::Sem => {
            let mut total = 0.0;
            let mut classes = 0;
            let mut grads = Vec::new();
            for c in 0..NUM_CLASSES {
                let q: Vec<f64> = (0..n).map(|i| p.row(i)[c]).collect();
                let t: Vec<bool> = labels.iter().map(|&l| l as usize == c).collect();
                let (v, dq, terms) = affinity_terms(&q, &t);
                if terms > 0 {
                    classes += 1;
                    total += v;
                    grads.push((c, dq));
                }
            }
            let k = classes.max(1) as f64;
            for (c, dq) in grads {
                for (i, d) in dq.into_iter().enumerate() {
                    dp[i * NUM_CLASSES + c] = d / k;
                }
            }
            total / k
        }
    };
    Ok(LossValue {
        value,
        grad: through_softmax(&p, &dp),
    })
}

struct FixedGradOp {
    grad: NdArray,
}

impl Backward for FixedGradOp {
    fn backward(&self, _i: &[&NdArray], _o: &NdArray, grad: &NdArray) -> Vec<Option<NdArray>> {
        let s = grad.data()[0];
        vec![Some(self.grad.map(|v| v * s))]
    }
}

/// Puts a precomputed loss on the tape as a scalar node over `logits`.
pub fn attach_loss(g: &mut Graph, logits: Var, loss: LossValue) -> Result<Var> {
    if g.shape(logits) != loss.grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "attach_loss",
            lhs: g.shape(logits).to_vec(),
            rhs: loss.grad.shape().to_vec(),
        });
    }
    Ok(g.push(NdArray::scalar(loss.value), &[logits], FixedGradOp { grad: loss.grad }))
}

/// Divides each loss term by an exponential moving average of its own
/// magnitude, initialised at the first observation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossNormalizer {
    pub enabled: bool,
    pub decay: f64,
    pub ema: Option<[f64; 4]>,
}

impl LossNormalizer {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            decay: 0.99,
            ema: None,
        }
    }

    /// Updates the averages with `raw` and returns the divisors to apply.
    pub fn update(&mut self, raw: [f64; 4]) -> [f64; 4] {
        if !self.enabled {
            return [1.0; 4];
        }
        let ema = match self.ema {
            None => raw,
            Some(prev) => std::array::from_fn(|k| self.decay * prev[k] + (1.0 - self.decay) * raw[k]),
        };
        self.ema = Some(ema);
        ema.map(|m| if m > CLAMP { m } else { 1.0 })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub ce: f64,
    pub lovasz: f64,
    pub scal_geo: f64,
    pub scal_sem: f64,
    /// Sum of the normalised terms.
    pub total: f64,
}

impl LossReport {
    pub fn raw(&self) -> [f64; 4] {
        [self.ce, self.lovasz, self.scal_geo, self.scal_sem]
    }
}

/// `L_CE + L_LS + L_scal^geo + L_scal^sem`, each divided by its running
/// magnitude when the normaliser is enabled.
pub fn total_loss(
    g: &mut Graph,
    logits: Var,
    gt: &OccupancyGrid,
    w: &ClassWeights,
    norm: &mut LossNormalizer,
) -> Result<(Var, LossReport)> {
    let z = g.value(logits);
    let terms = [
        loss_ce(z, gt, w)?,
        loss_lovasz(z, gt)?,
        loss_scal(z, gt, ScalVariant::Geo)?,
        loss_scal(z, gt, ScalVariant::Sem)?,
    ];
    let raw = [terms[0].value, terms[1].value, terms[2].value, terms[3].value];
    let div = norm.update(raw);
    let mut grad = NdArray::zeros(z.shape());
    let mut total = 0.0;
    for (t, d) in terms.iter().zip(div) {
        total += t.value / d;
        for (a, b) in grad.data_mut().iter_mut().zip(t.grad.data()) {
            *a += b / d;
        }
    }
    let report = LossReport {
        ce: raw[0],
        lovasz: raw[1],
        scal_geo: raw[2],
        scal_sem: raw[3],
        total,
    };
    let v = attach_loss(g, logits, LossValue { value: total, grad })?;
    Ok((v, report))
}
