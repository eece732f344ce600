#![allow(dead_code)]

pub mod criteria;

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;
use radarocc::network::{NetConfig, Network};
use radarocc::occupancy::{
    attach_loss, loss_ce, loss_lovasz, loss_scal, ClassWeights, OccupancyGrid, ScalVariant,
};
use radarocc::radar::RadarConfig;
use radarocc::reduction::{SparseEntry, SparseRT, CHANNELS};
use radarocc::geometry::GridSpec;
use radarocc::tensor::attention::attention;
use radarocc::tensor::conv::{sparse_conv, Rulebook};
use radarocc::tensor::gradcheck::{check_graph, grad_check, grad_check_with, CheckOptions};
use radarocc::tensor::ops::*;
use radarocc::tensor::sample::{deform_sample, trilinear_sample};
use radarocc::tensor::{Graph, Mode, NdArray, ParamStore};
use radarocc::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut ChaCha8Rng, shape: &[usize]) -> NdArray {
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Fractional coordinates kept away from integer nodes, so a finite
/// difference never straddles a kink of the trilinear interpolant.
pub fn off_node(r: &mut ChaCha8Rng, hi: f64) -> f64 {
    loop {
        let v: f64 = r.random_range(0.0..hi);
        let f = v - v.floor();
        if f > 0.05 && f < 0.95 {
            return v;
        }
    }
}

/// Worst relative error of each operator's gradient check for one seed.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    const H: f64 = 1e-6;
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut rec = |name: &'static str, e: f64| out.push((name, e));
    // weights breaking the symmetry of a plain sum
    let probe = randn(&mut r, &[64]);
    let wsum = move |g: &mut Graph, y| -> Result<radarocc::tensor::Var> {
        let n = g.value(y).len();
        let w = NdArray::from_vec(&[n, 1], probe.data().iter().cycle().take(n).copied().collect())?;
        let c = g.constant(w);
        let flat = reshape(g, y, &[1, n])?;
        let p = linear(g, flat, c, None)?;
        Ok(sum_all(g, p))
    };

    let x = randn(&mut r, &[4, 3]);
    let w = randn(&mut r, &[3, 5]);
    let b = randn(&mut r, &[5]);
    rec("linear", check_graph(|g, v| { let y = linear(g, v[0], v[1], Some(v[2]))?; wsum(g, y) }, &[x.clone(), w, b], H)?.max_rel_error);
    let y2 = randn(&mut r, &[4, 3]);
    rec("add", check_graph(|g, v| { let y = add(g, v[0], v[1])?; wsum(g, y) }, &[x.clone(), y2], H)?.max_rel_error);
    rec("scale", check_graph(|g, v| { let y = scale(g, v[0], -1.7); wsum(g, y) }, std::slice::from_ref(&x), H)?.max_rel_error);
    // keep pre-activations away from the kink
    let xr = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    rec("relu", check_graph(|g, v| { let y = relu(g, v[0]); wsum(g, y) }, &[xr], H)?.max_rel_error);
    let s3 = randn(&mut r, &[2, 3, 4]);
    for axis in 0..3 {
        rec("softmax", check_graph(|g, v| { let y = softmax(g, v[0], axis)?; wsum(g, y) }, std::slice::from_ref(&s3), H)?.max_rel_error);
    }
    rec("reshape", check_graph(|g, v| { let y = reshape(g, v[0], &[6, 4])?; wsum(g, y) }, std::slice::from_ref(&s3), H)?.max_rel_error);
    let c2 = randn(&mut r, &[4, 2]);
    rec("concat_last", check_graph(|g, v| { let y = concat_last(g, &[v[0], v[1]])?; wsum(g, y) }, &[x.clone(), c2], H)?.max_rel_error);
    rec("gather_rows", check_graph(|g, v| { let y = gather_rows(g, v[0], vec![Some(2), None, Some(0), Some(2)])?; wsum(g, y) }, std::slice::from_ref(&x), H)?.max_rel_error);
    let x2 = randn(&mut r, &[2, 3]);
    rec("concat_rows", check_graph(|g, v| { let y = concat_rows(g, v[0], v[1])?; wsum(g, y) }, &[x.clone(), x2], H)?.max_rel_error);
    rec("mean_all", check_graph(|g, v| Ok(mean_all(g, v[0])), std::slice::from_ref(&x), H)?.max_rel_error);
    let s = randn(&mut r, &[1]);
    let t = randn(&mut r, &[1]);
    rec("weighted_sum", check_graph(|g, v| {
        let a = sum_all(g, v[0]);
        let b = sum_all(g, v[1]);
        weighted_sum(g, &[(a, 0.3), (b, -2.0)])
    }, &[s, t], H)?.max_rel_error);
    // dropout: the same tape seed gives the same mask on every evaluation
    let dx = randn(&mut r, &[6, 4]);
    let drop = |x: &[NdArray]| -> Result<(f64, Vec<NdArray>)> {
        let mut g = Graph::new(Mode::Train, seed);
        let v = g.input(x[0].clone());
        let y = dropout(&mut g, v, 0.3)?;
        let l = wsum(&mut g, y)?;
        let val = g.value(l).data()[0];
        let gr = g.backward(l);
        Ok((val, vec![gr.get(v).unwrap().clone()]))
    };
    rec("dropout", grad_check(drop, &[dx], H)?.max_rel_error);

    let q = randn(&mut r, &[5, 4]);
    let k = randn(&mut r, &[5, 4]);
    let vv = randn(&mut r, &[5, 4]);
    rec("attention", check_graph(|g, v| { let y = attention(g, v[0], v[1], v[2], 2, &[0..2, 2..5])?; wsum(g, y) }, &[q, k, vv], H)?.max_rel_error);

    let vol = randn(&mut r, &[3, 4, 2, 4]);
    let pts = NdArray::from_vec(&[3, 3], (0..9).map(|i| off_node(&mut r, [2.0, 3.0, 1.0][i % 3])).collect())?;
    rec("trilinear_sample", check_graph(|g, v| { let y = trilinear_sample(g, v[0], v[1])?; wsum(g, y) }, &[vol.clone(), pts], H)?.max_rel_error);
    let refs: Vec<[f64; 3]> = (0..3).map(|_| [off_node(&mut r, 1.0) + 0.5, off_node(&mut r, 2.0) + 0.5, 0.5]).collect();
    let off = randn(&mut r, &[3, 2 * 2 * 3]).map(|v| 0.4 * v);
    let wts = randn(&mut r, &[3, 4]);
    let refs2 = refs.clone();
    rec("deform_sample", check_graph(|g, v| { let y = deform_sample(g, v[0], refs2.clone(), v[1], v[2], 2, 2)?; wsum(g, y) }, &[vol, off, wts], H)?.max_rel_error);

    let ext = [4, 4, 3];
    let coords: Vec<[usize; 3]> = vec![[0, 0, 0], [1, 0, 0], [1, 1, 1], [3, 2, 2], [2, 3, 1], [0, 3, 2]];
    let cx = randn(&mut r, &[coords.len(), 2]);
    let cw = randn(&mut r, &[27, 2, 3]);
    let cb = randn(&mut r, &[3]);
    let sub = Rulebook::submanifold(&coords, ext);
    rec("submanifold_conv", check_graph(|g, v| { let y = sparse_conv(g, v[0], v[1], Some(v[2]), sub.clone())?; wsum(g, y) }, &[cx.clone(), cw.clone(), cb.clone()], H)?.max_rel_error);
    let (strided, _, _) = Rulebook::sparse(&coords, ext, 2);
    rec("strided_conv", check_graph(|g, v| { let y = sparse_conv(g, v[0], v[1], Some(v[2]), strided.clone())?; wsum(g, y) }, &[cx, cw, cb], H)?.max_rel_error);

    // losses enter the tape as fixed-gradient nodes
    let spec = GridSpec::unit(3, 2, 2);
    let labels: Vec<u8> = (0..12).map(|_| r.random_range(0..3u8)).collect();
    let gt = OccupancyGrid::from_labels(spec, labels)?;
    let logits = randn(&mut r, &[12, 3]).map(|v| 2.0 * v);
    let wts = ClassWeights([0.7, 2.0, 5.0]);
    let loss_fns: [(&'static str, Box<dyn Fn(&NdArray) -> Result<radarocc::occupancy::LossValue>>); 4] = [
        ("loss_ce", Box::new(|z| loss_ce(z, &gt, &wts))),
        ("loss_lovasz", Box::new(|z| loss_lovasz(z, &gt))),
        ("loss_scal_geo", Box::new(|z| loss_scal(z, &gt, ScalVariant::Geo))),
        ("loss_scal_sem", Box::new(|z| loss_scal(z, &gt, ScalVariant::Sem))),
    ];
    for (name, f) in &loss_fns {
        let e = check_graph(|g, v| { let lv = f(g.value(v[0]))?; attach_loss(g, v[0], lv) }, std::slice::from_ref(&logits), H)?;
        rec(name, e.max_rel_error);
    }
    Ok(out)
}

/// Random sparse tensor over the given raw extents.
pub fn random_sparse(r: &mut ChaCha8Rng, extents: [usize; 3], doppler: usize, per_range: usize) -> SparseRT {
    let [rn, an, en] = extents;
    let ranges = (0..rn)
        .map(|_| {
            let mut cells: Vec<(u32, u32)> = Vec::new();
            while cells.len() < per_range {
                let c = (r.random_range(0..an as u32), r.random_range(0..en as u32));
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
            cells
                .into_iter()
                .map(|(az, el)| {
                    let mut desc = [0.0; CHANNELS];
                    for (i, d) in desc.iter_mut().enumerate() {
                        *d = if (3..6).contains(&i) {
                            r.random_range(0..doppler) as f64
                        } else {
                            r.random_range(0.0..3.0)
                        };
                    }
                    SparseEntry { az, el, desc }
                })
                .collect()
        })
        .collect();
    SparseRT { n_r: per_range, ranges }
}

pub fn desk_network() -> Network {
    Network::new(NetConfig::desk(&RadarConfig::desk())).unwrap()
}

/// Floor of the full-model relative error; finite-difference rounding on
/// the mean logit is about 1e-10 at `h = 1e-6`.
pub const FULL_MODEL_FLOOR: f64 = 1e-6;

/// Full-model check: eval-mode forward, loss = mean logit, `per_tensor`
/// probed coordinates in every parameter tensor (always first and last).
pub fn full_model_check(net: &Network, seed: u64, per_tensor: usize) -> Result<(f64, String)> {
    let mut r = rng(seed);
    let mut base = net.init_params(seed)?;
    // zero-initialised biases put some ReLUs exactly on their kink; check
    // at a generic point instead
    for p in base.iter_mut().filter(|p| p.name.ends_with(".b")) {
        for v in p.value.data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    let input = random_sparse(&mut r, net.cfg.extents, net.cfg.doppler_bins, 2);
    let names: Vec<String> = base.names().map(String::from).collect();
    let values: Vec<NdArray> = names.iter().map(|n| base.value(n).unwrap().clone()).collect();
    let coords: Vec<Vec<usize>> = values
        .iter()
        .map(|v| {
            let n = v.len();
            let mut c = vec![0, n - 1];
            while c.len() < per_tensor.min(n) {
                let i = r.random_range(0..n);
                if !c.contains(&i) {
                    c.push(i);
                }
            }
            c.dedup();
            c
        })
        .collect();
    // only the first call needs gradients; probes need the loss alone
    let first = std::cell::Cell::new(true);
    let f = |vals: &[NdArray]| -> Result<(f64, Vec<NdArray>)> {
        let mut store: ParamStore = base.clone();
        for (n, v) in names.iter().zip(vals) {
            store.set_value(n, v.clone())?;
        }
        let mut g = Graph::eval();
        let z = net.forward(&mut g, &store, &input)?;
        let l = mean_all(&mut g, z);
        let val = g.value(l).data()[0];
        if !first.replace(false) {
            return Ok((val, Vec::new()));
        }
        let grads = g.backward(l);
        store.zero_grad();
        grads.accumulate(&g, &mut store);
        Ok((val, names.iter().map(|n| store.get(n).unwrap().grad.clone()).collect()))
    };
    let opts = CheckOptions {
        h: 1e-6,
        floor: FULL_MODEL_FLOOR,
        piecewise: true,
    };
    let rep = grad_check_with(f, &values, &coords, opts)?;
    let (a, c) = rep.worst;
    first.set(true);
    let (_, g) = f(&values)?;
    let detail = format!("{}[{c}] analytic {:e}", names[a], g[a].data()[c]);
    Ok((rep.max_rel_error, detail))
}
