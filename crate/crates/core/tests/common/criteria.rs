//! One check per acceptance criterion. Each returns a verdict with a short
//! measurement so the acceptance harness can print it; the focused
//! integration tests assert on the same functions.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use radarocc::commands::{load_datasets, logit_digest};
use radarocc::config::{RunConfig, ABLATION_NAMES};
use radarocc::geometry::{cart_to_sph, hfov_mask, sph_to_cart, GridSpec, Pose};
use radarocc::network::{deform_attn, init_deform_params, Network};
use radarocc::occupancy::*;
use radarocc::radar::{build_4drt, ca_cfar, synth_adc, RadarConfig, RadarTensor4D, Scatterer, SceneSpec};
use radarocc::reduction::*;
use radarocc::sim::random_scene;
use radarocc::dataset::simulate_tensors;
use radarocc::tensor::sample::deform_sample;
use radarocc::tensor::{Graph, NdArray, ParamStore};
use radarocc::train::{evaluate, run_training, Trainer};
use radarocc::Result;

use super::*;

// Tolerances, pinned.
pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
pub const GRAD_SEEDS: u64 = 5;
pub const GRAD_BUDGET_S: f64 = 300.0;
pub const COLLAPSE_TOL: f64 = 1e-12;
pub const SPARSE_BYTES_MAX: usize = 6_000_000;
pub const ORACLE_TENSORS: u64 = 100;
pub const TARGETS: u64 = 50;
pub const CFAR_PFA: f64 = 1e-3;
pub const CFAR_MIN_CELLS: usize = 100_000;
pub const SIGNAL_BUDGET_S: f64 = 120.0;
pub const ROUND_TRIP_TOL: f64 = 1e-9;
pub const ROUND_TRIP_POINTS: usize = 10_000;
pub const WEDGE_REL_TOL: f64 = 0.01;
pub const LOSS_TOL: f64 = 1e-12;
pub const PERFECT_TOL: f64 = 1e-9;
pub const LOVASZ_TOL: f64 = 1e-10;
pub const LOVASZ_CASES: u64 = 20;
pub const SMOKE_STEPS: usize = 300;
pub const SMOKE_BLOCK: usize = 50;
pub const SMOKE_IOU_GAIN: f64 = 0.15;
pub const SMOKE_BUDGET_S: f64 = 1800.0;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

// ---------------------------------------------------------------- 1

pub fn gradients() -> Result<Verdict> {
    let t = Instant::now();
    let mut worst_op = (0.0f64, String::new());
    for seed in 0..GRAD_SEEDS {
        for (name, e) in op_suite(seed)? {
            if e > worst_op.0 || worst_op.1.is_empty() {
                worst_op = (e, format!("{name} (seed {seed})"));
            }
        }
    }
    let net = desk_network();
    let mut worst_model = (0.0f64, String::new());
    for seed in 0..GRAD_SEEDS {
        let (e, at) = full_model_check(&net, 11 + seed, 3)?;
        if e > worst_model.0 || worst_model.1.is_empty() {
            worst_model = (e, at);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(Verdict::new(
        worst_op.0 < OP_TOL && worst_model.0 < MODEL_TOL && secs < GRAD_BUDGET_S,
        format!(
            "ops max rel err {:.1e} at {}; full model {:.1e} at {}; {GRAD_SEEDS} seeds in {secs:.0} s",
            worst_op.0, worst_op.1, worst_model.0, worst_model.1
        ),
    ))
}

// ---------------------------------------------------------------- 2

/// Clamped trilinear interpolation written out corner by corner.
pub fn trilinear_oracle(x: &NdArray, p: [f64; 3]) -> Vec<f64> {
    let s = x.shape();
    let mut out = vec![0.0; s[3]];
    let lo: Vec<usize> = (0..3).map(|a| (p[a].floor().max(0.0) as usize).min(s[a] - 2)).collect();
    for corner in 0..8 {
        let d = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
        let w: f64 = (0..3)
            .map(|a| {
                let f = p[a].clamp(0.0, (s[a] - 1) as f64) - lo[a] as f64;
                if d[a] == 1 { f } else { 1.0 - f }
            })
            .product();
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * x.get(&[lo[0] + d[0], lo[1] + d[1], lo[2] + d[2], c]);
        }
    }
    out
}

/// One head, one point, zero offsets, unit weight.
pub fn sample_single(x: &NdArray, p: [f64; 3]) -> Result<Vec<f64>> {
    let mut g = Graph::eval();
    let v = g.constant(x.clone());
    let off = g.constant(NdArray::zeros(&[1, 3]));
    let w = g.constant(NdArray::from_vec(&[1, 1], vec![1.0])?);
    let y = deform_sample(&mut g, v, vec![p], off, w, 1, 1)?;
    Ok(g.value(y).data().to_vec())
}

/// Block `blk` with zero offsets, uniform attention and the given
/// value/output projections.
pub fn collapsed_block(c: usize, points: usize, wv: NdArray, wo: NdArray) -> Result<ParamStore> {
    let mut s = ParamStore::new(0);
    init_deform_params(&mut s, "blk", c, 1, points)?;
    for name in ["blk.off.w", "blk.off.b", "blk.att.w", "blk.att.b", "blk.val.b", "blk.out.b"] {
        let shape = s.value(name)?.shape().to_vec();
        s.set_value(name, NdArray::zeros(&shape))?;
    }
    s.set_value("blk.val.w", wv)?;
    s.set_value("blk.out.w", wo)?;
    Ok(s)
}

pub fn block_output(store: &ParamStore, x: &NdArray, refs: Vec<[f64; 3]>, points: usize, seed: u64) -> Result<NdArray> {
    let c = x.shape()[3];
    let mut r = rng(seed);
    let mut g = Graph::eval();
    let xv = g.constant(x.clone());
    let z = g.constant(randn(&mut r, &[refs.len(), c]));
    let y = deform_attn(&mut g, store, "blk", z, refs, xv, 1, points)?;
    Ok(g.value(y).clone())
}

pub fn collapse_identities() -> Result<Verdict> {
    let mut r = rng(2);
    let c = 5;
    let x = randn(&mut r, &[4, 5, 3, c]);
    let mut node_exact = true;
    let mut nodes = Vec::new();
    for i in 0..4 {
        for j in 0..5 {
            for k in 0..3 {
                nodes.push([i as f64, j as f64, k as f64]);
            }
        }
    }
    for p in &nodes {
        let want: Vec<f64> = (0..c).map(|ch| x.get(&[p[0] as usize, p[1] as usize, p[2] as usize, ch])).collect();
        node_exact &= sample_single(&x, *p)? == want;
    }
    let mut off_err = 0.0f64;
    for _ in 0..200 {
        let p = [r.random_range(0.0..3.0), r.random_range(0.0..4.0), r.random_range(0.0..2.0)];
        for (a, b) in sample_single(&x, p)?.iter().zip(trilinear_oracle(&x, p)) {
            off_err = off_err.max((a - b).abs());
        }
    }
    // the full block with identity projections
    let store = collapsed_block(c, 1, NdArray::identity(c), NdArray::identity(c))?;
    let y = block_output(&store, &x, nodes.clone(), 1, 3)?;
    let mut block_exact = true;
    for (n, p) in nodes.iter().enumerate() {
        let want: Vec<f64> = (0..c).map(|ch| x.get(&[p[0] as usize, p[1] as usize, p[2] as usize, ch])).collect();
        block_exact &= y.row(n) == want.as_slice();
    }
    let pass = node_exact && block_exact && off_err <= COLLAPSE_TOL;
    Ok(Verdict::new(
        pass,
        format!(
            "{} nodes bitwise (sampler {node_exact}, block {block_exact}); off-node max err {off_err:.1e}",
            nodes.len()
        ),
    ))
}

// ---------------------------------------------------------------- 3

pub fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 4]) -> RadarTensor4D {
    let n = shape.iter().product();
    let power = NdArray::from_vec(&shape, (0..n).map(|_| r.random_range(0.0..10.0)).collect()).unwrap();
    let mut cfg = RadarConfig::desk();
    cfg.n_fast = shape[0];
    cfg.az_bins = shape[1];
    cfg.el_bins = shape[2];
    cfg.n_chirps = shape[3];
    RadarTensor4D { power, axes: cfg.axes() }
}

pub fn reduction_factor() -> Result<Verdict> {
    let mut r = rng(3);
    let rt = random_tensor(&mut r, [8, 6, 4, 64]);
    let enc = encode_descriptors(&rt)?;
    let exact = rt.power.len() == 8 * enc.len();
    // paper-shape descriptor volume, 256 x 107 x 37
    let shape = [256, 107, 37, CHANNELS];
    let n = shape.iter().product();
    let vol = NdArray::from_vec(&shape, (0..n).map(|_| r.random_range(0.0..1.0)).collect())?;
    let s = sidelobe_sparsify(&vol, 250)?;
    let bytes = s.to_bytes().len();
    Ok(Verdict::new(
        exact && bytes <= SPARSE_BYTES_MAX && s.counts().iter().all(|&k| k == 250),
        format!(
            "{} -> {} values (x{}); paper-shape N_r=250 file {:.2} MB",
            rt.power.len(),
            enc.len(),
            rt.power.len() / enc.len(),
            bytes as f64 / 1e6
        ),
    ))
}

// ---------------------------------------------------------------- 4

/// Per range: sort every (mean, az, el) cell, strongest first.
pub fn brute_force_top(vol: &NdArray, n_r: usize) -> Vec<Vec<(u32, u32)>> {
    let s = vol.shape();
    (0..s[0])
        .map(|r| {
            let mut cells: Vec<(f64, u32, u32)> = Vec::new();
            for a in 0..s[1] {
                for e in 0..s[2] {
                    cells.push((vol.get(&[r, a, e, MEAN]), a as u32, e as u32));
                }
            }
            cells.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then((x.1, x.2).cmp(&(y.1, y.2))));
            cells.into_iter().take(n_r).map(|(_, a, e)| (a, e)).collect()
        })
        .collect()
}

pub fn random_volume(r: &mut ChaCha8Rng, shape: [usize; 3]) -> NdArray {
    let n = shape.iter().product::<usize>() * CHANNELS;
    // coarse values so ties occur
    let data = (0..n).map(|_| r.random_range(0..20) as f64 * 0.5).collect();
    NdArray::from_vec(&[shape[0], shape[1], shape[2], CHANNELS], data).unwrap()
}

pub fn sidelobe_matches_oracle(vol: &NdArray, n_r: usize) -> Result<bool> {
    let s = sidelobe_sparsify(vol, n_r)?;
    let oracle = brute_force_top(vol, n_r);
    Ok(s.ranges.len() == oracle.len()
        && s.ranges.iter().zip(&oracle).enumerate().all(|(r, (got, want))| {
            got.len() == want.len()
                && got.iter().zip(want).all(|(e, &(a, el))| {
                    (e.az, e.el) == (a, el) && e.desc.as_slice() == vol.row((r * vol.shape()[1] + a as usize) * vol.shape()[2] + el as usize)
                })
        }))
}

/// Four ranges of 10 x 10 cells; range 2 holds the 100 largest means.
pub fn adversarial_volume() -> NdArray {
    let mut v = NdArray::zeros(&[4, 10, 10, CHANNELS]);
    for r in 0..4 {
        for a in 0..10 {
            for e in 0..10 {
                let k = (a * 10 + e) as f64;
                let mean = if r == 2 { 1000.0 + k } else { k + 0.1 * r as f64 };
                v.set(&[r, a, e, MEAN], mean);
            }
        }
    }
    v
}

pub fn sparsification() -> Result<Verdict> {
    let mut r = rng(4);
    let mut matched = 0;
    for _ in 0..ORACLE_TENSORS {
        let shape = [r.random_range(1..6), r.random_range(1..8), r.random_range(1..5)];
        let vol = random_volume(&mut r, shape);
        let n_r = r.random_range(1..shape[1] * shape[2] + 3);
        matched += sidelobe_matches_oracle(&vol, n_r)? as u64;
    }
    let adv = adversarial_volume();
    let pct = percentile_sparsify(&adv, 0.01)?;
    let (pc, pe) = range_coverage(&pct);
    let top_share = *pc.iter().max().unwrap() as f64 / pct.num_entries() as f64;
    let side = sidelobe_sparsify(&adv, 4)?;
    let (sc, se) = range_coverage(&side);
    let pass = matched == ORACLE_TENSORS && top_share > 0.5 && sc.iter().all(|&k| k == 4) && se == 1.0;
    Ok(Verdict::new(
        pass,
        format!(
            "oracle {matched}/{ORACLE_TENSORS}; percentile counts {pc:?} (top share {top_share:.2}, entropy {pe:.3}); sidelobe counts {sc:?} (entropy {se})"
        ),
    ))
}

// ---------------------------------------------------------------- 5

/// Argmax cell of the tensor and the analytic bin of the target.
pub fn locate_target(cfg: &RadarConfig, s: Scatterer, seed: u64) -> Result<([usize; 4], [f64; 4])> {
    let scene = SceneSpec { scatterers: vec![s], ..Default::default() };
    let rt = build_4drt(&synth_adc(&scene, cfg, seed)?, cfg);
    let d = rt.power.data();
    let best = (0..d.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b });
    let [_, an, en, dn] = rt.shape();
    let got = [best / (an * en * dn), best / (en * dn) % an, best / dn % en, best % dn];
    let sph = cart_to_sph(s.position)?;
    let axes = cfg.axes();
    let truth = [
        sph.range / cfg.range_res,
        axes.azimuth.fractional(sph.azimuth),
        axes.elevation.fractional(sph.elevation),
        s.radial_velocity / cfg.doppler_res + (cfg.n_chirps / 2) as f64,
    ];
    Ok((got, truth))
}

pub fn random_target(r: &mut ChaCha8Rng, cfg: &RadarConfig) -> Scatterer {
    let range = r.random_range(2.0..cfg.max_range() - 2.0);
    let az = r.random_range(-45.0f64..45.0).to_radians();
    let el = r.random_range(-12.0f64..12.0).to_radians();
    let (lo, hi) = cfg.velocity_limits();
    Scatterer {
        position: sph_to_cart(radarocc::geometry::Spherical { range, azimuth: az, elevation: el }),
        amplitude: r.random_range(0.5..2.0),
        radial_velocity: r.random_range(lo + 1.0..hi - 1.0),
    }
}

/// Fraction of interior cells of an i.i.d. unit-exponential map flagged by
/// CA-CFAR, and the number of cells tested.
pub fn cfar_false_alarm_rate(side: usize, pfa: f64, seed: u64) -> Result<(f64, usize)> {
    let mut r = rng(seed);
    let data: Vec<f64> = (0..side * side).map(|_| Exp1.sample(&mut r)).collect();
    let map = NdArray::from_vec(&[side, side], data)?;
    let (guard, train) = (1, 2);
    let mask = ca_cfar(&map, guard, train, pfa)?;
    let m = guard + train;
    let inner = side - 2 * m;
    let hits = mask.iter().filter(|&&b| b).count();
    Ok((hits as f64 / (inner * inner) as f64, inner * inner))
}

pub fn signal_chain() -> Result<Verdict> {
    let t = Instant::now();
    let cfg = RadarConfig::desk();
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for k in 0..TARGETS {
        let s = random_target(&mut r, &cfg);
        let (got, truth) = locate_target(&cfg, s, k)?;
        for a in 0..4 {
            worst = worst.max((got[a] as f64 - truth[a]).abs());
        }
    }
    let (rate, cells) = cfar_false_alarm_rate(400, CFAR_PFA, 55)?;
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 1.0
        && cells >= CFAR_MIN_CELLS
        && (CFAR_PFA / 3.0..=3.0 * CFAR_PFA).contains(&rate)
        && secs < SIGNAL_BUDGET_S;
    Ok(Verdict::new(
        pass,
        format!(
            "{TARGETS} targets, max bin error {worst:.2}; CFAR FA rate {rate:.2e} over {cells} cells at pfa {CFAR_PFA:e}; {secs:.1} s"
        ),
    ))
}

// ---------------------------------------------------------------- 6

/// Area share of the `|azimuth| <= hfov/2` wedge in the grid's footprint,
/// for a footprint `[0, X] x [-Y, Y]` starting at the sensor.
pub fn wedge_fraction(g: &GridSpec, hfov_deg: f64) -> f64 {
    let (x, y) = (g.x_max, g.y_max);
    let t = (hfov_deg.to_radians() / 2.0).tan();
    let x0 = (y / t).min(x);
    let area = t * x0 * x0 + (x - x0) * 2.0 * y;
    area / (x * 2.0 * y)
}

pub fn geometry() -> Result<Verdict> {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..ROUND_TRIP_POINTS {
        let p: [f64; 3] = std::array::from_fn(|_| r.random_range(-60.0..60.0));
        if p.iter().map(|v| v * v).sum::<f64>() < 1e-6 {
            continue;
        }
        let q = sph_to_cart(cart_to_sph(p)?);
        worst = worst.max((0..3).map(|i| (p[i] - q[i]).abs()).fold(0.0, f64::max));
    }
    let g = GridSpec::default();
    let mask = hfov_mask(&g, 107.0)?;
    let frac = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
    let want = wedge_fraction(&g, 107.0);
    let rel = (frac - want).abs() / want;
    Ok(Verdict::new(
        worst < ROUND_TRIP_TOL && rel < WEDGE_REL_TOL && g.shape()[1..] == [128, 128],
        format!("round trip max err {worst:.1e} m; hFoV mask {frac:.4} vs wedge {want:.4} (rel {rel:.1e})"),
    ))
}

// ---------------------------------------------------------------- 7

/// Two frames: the ego advances 1 m along x, object 5 moves 3 m along x,
/// object 9 appears in frame 1 only. Unit voxels over 8 x 4 x 2.
pub fn two_frame_scene() -> LabeledSweepSequence {
    let ob = |id, c: [f64; 3]| ObjectBox {
        track_id: id,
        pose: Pose::from_xyz_yaw(c, 0.0),
        size: [1.0, 1.0, 1.0],
    };
    LabeledSweepSequence {
        frames: vec![
            SweepFrame {
                frame_id: 0,
                ego_pose: Some(Pose::from_xyz_yaw([0.0; 3], 0.0)),
                boxes: vec![ob(5, [2.5, 1.5, 0.5])],
                points: vec![
                    [2.7, 1.6, 0.5],  // object 5, local (0.2, 0.1, 0.0)
                    [2.2, 1.2, 0.8],  // object 5, local (-0.3, -0.3, 0.3)
                    [6.5, 2.5, 1.5],  // static, world (6.5, 2.5, 1.5)
                    [-0.5, 1.0, 0.5], // behind the sensor: ignored
                ],
            },
            SweepFrame {
                frame_id: 1,
                ego_pose: Some(Pose::from_xyz_yaw([1.0, 0.0, 0.0], 0.0)),
                boxes: vec![ob(5, [4.5, 1.5, 0.5]), ob(9, [6.0, 0.5, 0.5])],
                points: vec![
                    [4.9, 1.9, 0.9], // object 5, local (0.4, 0.4, 0.4)
                    [5.5, 2.5, 1.5], // the static point again
                    [6.2, 0.5, 0.5], // object 9
                    [6.8, 0.5, 0.5], // static, same voxel as the object 9 point
                ],
            },
        ],
    }
}

/// Hand-posed labels of [`two_frame_scene`] in frame 1.
pub fn two_frame_oracle() -> BTreeMap<(usize, usize, usize), u8> {
    BTreeMap::from([
        // object 5 re-posed at its frame-1 box: (4.7,1.6,0.5), (4.2,1.2,0.8), (4.9,1.9,0.9)
        ((4, 1, 0), FOREGROUND),
        // one foreground and one background vote
        ((6, 0, 0), FOREGROUND),
        // static point in frame-1 coordinates, seen twice
        ((5, 2, 1), BACKGROUND),
    ])
}

pub fn gt_pipeline() -> Result<Verdict> {
    let g = GridSpec::unit(8, 4, 2);
    let grid = build_gt(&two_frame_scene(), 1, &g)?;
    let oracle = two_frame_oracle();
    let mut mismatches = 0;
    for ix in 0..8 {
        for iy in 0..4 {
            for iz in 0..2 {
                let want = oracle.get(&(ix, iy, iz)).copied().unwrap_or(FREE);
                mismatches += (grid.get(ix, iy, iz) != want) as usize;
            }
        }
    }
    let tie = grid.get(6, 0, 0) == FOREGROUND;
    Ok(Verdict::new(
        mismatches == 0 && tie,
        format!("{mismatches} voxel mismatches vs hand-posed oracle; tie voxel foreground: {tie}; counts {:?}", grid.counts()),
    ))
}

// ---------------------------------------------------------------- 8

pub fn labels_grid(spec: GridSpec, f: impl FnMut(usize) -> u8) -> OccupancyGrid {
    OccupancyGrid::from_labels(spec, (0..spec.num_voxels()).map(f).collect()).unwrap()
}

/// 4 x 4 x 2 pair: occupied IoU 10/12, BG 4/8, FG 2/8, mIoU 3/8.
pub fn hand_grids() -> (OccupancyGrid, OccupancyGrid) {
    let spec = GridSpec::unit(4, 4, 2);
    let gt = labels_grid(spec, |i| match i {
        0..=3 => FOREGROUND,
        4..=9 => BACKGROUND,
        _ => FREE,
    });
    let pred = labels_grid(spec, |i| match i {
        0..=1 | 8..=11 => FOREGROUND,
        2..=7 => BACKGROUND,
        _ => FREE,
    });
    (pred, gt)
}

/// Larger footprint than 51.2 m, its sub-grid up to 51.2 m, and random labels.
pub fn crop_consistency(seed: u64) -> Result<bool> {
    let mut r = rng(seed);
    let big = GridSpec { x_max: 64.0, ..GridSpec::default() };
    let small = GridSpec::default();
    let draw = |r: &mut ChaCha8Rng| -> u8 {
        let u: f64 = r.random_range(0.0..1.0);
        if u < 0.8 { FREE } else if u < 0.95 { BACKGROUND } else { FOREGROUND }
    };
    let n = big.num_voxels();
    let p_big: Vec<u8> = (0..n).map(|_| draw(&mut r)).collect();
    let g_big: Vec<u8> = (0..n).map(|_| draw(&mut r)).collect();
    let crop = |labels: &[u8]| -> Vec<u8> {
        (0..small.num_voxels())
            .map(|i| {
                let (ix, iy, iz) = small.unflatten(i);
                labels[big.index(ix, iy, iz)]
            })
            .collect()
    };
    let pb = OccupancyGrid::from_labels(big, p_big.clone())?;
    let gb = OccupancyGrid::from_labels(big, g_big.clone())?;
    let ps = OccupancyGrid::from_labels(small, crop(&p_big))?;
    let gs = OccupancyGrid::from_labels(small, crop(&g_big))?;
    let full = eval_metrics(&pb, &gb, &hfov_mask(&big, 107.0)?, &[51.2])?;
    let cropped = eval_metrics(&ps, &gs, &hfov_mask(&small, 107.0)?, &[51.2])?;
    Ok(full == cropped)
}

pub fn metrics() -> Result<Verdict> {
    let (pred, gt) = hand_grids();
    let t = eval_metrics(&pred, &gt, &[true; 32], &[100.0])?;
    let m = t.rows[0];
    let exact = m.iou == Some(10.0 / 12.0)
        && m.bg_iou == Some(4.0 / 8.0)
        && m.fg_iou == Some(2.0 / 8.0)
        && m.miou == Some(3.0 / 8.0);
    let crop = (0..3).map(|s| crop_consistency(80 + s)).collect::<Result<Vec<_>>>()?;
    Ok(Verdict::new(
        exact && crop.iter().all(|&b| b),
        format!(
            "IoU {:?} mIoU {:?} BG {:?} FG {:?} (want 5/6, 3/8, 1/2, 1/4); crop-consistency at 51.2 m: {crop:?}",
            m.iou, m.miou, m.bg_iou, m.fg_iou
        ),
    ))
}

// ---------------------------------------------------------------- 9

/// Lovász extension of the Jaccard loss by its definition: sort errors
/// descending and weight each by the increment of the set-function
/// `1 - |F \ M| / |F ∪ M|` as mispredicted elements join `M`.
pub fn lovasz_reference(probs: &[[f64; 3]], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..3u8 {
        let fg: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if !fg.contains(&true) {
            continue;
        }
        present += 1;
        let err: Vec<f64> = probs
            .iter()
            .zip(&fg)
            .map(|(p, &f)| if f { 1.0 - p[c as usize] } else { p[c as usize] })
            .collect();
        let mut idx: Vec<usize> = (0..err.len()).collect();
        idx.sort_by(|&a, &b| err[b].partial_cmp(&err[a]).unwrap());
        let jaccard_loss = |m: &[usize]| -> f64 {
            let f_size = fg.iter().filter(|&&b| b).count();
            let missed = m.iter().filter(|&&i| fg[i]).count();
            let extra = m.iter().filter(|&&i| !fg[i]).count();
            1.0 - (f_size - missed) as f64 / (f_size + extra) as f64
        };
        let mut prev = 0.0;
        for k in 1..=idx.len() {
            let cur = jaccard_loss(&idx[..k]);
            total += err[idx[k - 1]] * (cur - prev);
            prev = cur;
        }
    }
    total / present.max(1) as f64
}

pub fn softmax_rows(z: &NdArray) -> Vec<[f64; 3]> {
    (0..z.outer_len())
        .map(|i| {
            let row = z.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            [e[0] / s, e[1] / s, e[2] / s]
        })
        .collect()
}

pub fn random_labels(r: &mut ChaCha8Rng, spec: GridSpec) -> OccupancyGrid {
    labels_grid(spec, |_| r.random_range(0..3u8))
}

/// Logits putting `margin` on the true class.
pub fn perfect_logits(gt: &OccupancyGrid, margin: f64) -> NdArray {
    let mut z = NdArray::zeros(&[gt.len(), NUM_CLASSES]);
    for (i, &l) in gt.labels().iter().enumerate() {
        z.row_mut(i)[l as usize] = margin;
    }
    z
}

pub fn losses() -> Result<Verdict> {
    let spec = GridSpec::unit(3, 2, 2);
    let mut r = rng(9);
    let gt = random_labels(&mut r, spec);
    let ce_uniform = loss_ce(&NdArray::zeros(&[gt.len(), 3]), &gt, &ClassWeights::uniform())?.value;
    let ce_err = (ce_uniform - 3f64.ln()).abs();

    let z = perfect_logits(&gt, 60.0);
    let perfect = [
        loss_ce(&z, &gt, &ClassWeights::uniform())?.value,
        loss_lovasz(&z, &gt)?.value,
        loss_scal(&z, &gt, ScalVariant::Geo)?.value,
        loss_scal(&z, &gt, ScalVariant::Sem)?.value,
    ];
    let perfect_max = perfect.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut lovasz_err = 0.0f64;
    for case in 0..LOVASZ_CASES {
        let mut r = rng(900 + case);
        let spec = GridSpec::unit(r.random_range(1..5), r.random_range(1..4), r.random_range(1..3));
        let gt = random_labels(&mut r, spec);
        let z = randn(&mut r, &[gt.len(), 3]).map(|v| 3.0 * v);
        let got = loss_lovasz(&z, &gt)?.value;
        lovasz_err = lovasz_err.max((got - lovasz_reference(&softmax_rows(&z), gt.labels())).abs());
    }
    Ok(Verdict::new(
        ce_err <= LOSS_TOL && perfect_max <= PERFECT_TOL && lovasz_err <= LOVASZ_TOL,
        format!(
            "CE(uniform) - ln 3 = {ce_err:.1e}; max loss at perfect prediction {perfect_max:.1e}; Lovász vs reference max diff {lovasz_err:.1e} over {LOVASZ_CASES} cases"
        ),
    ))
}

// ---------------------------------------------------------------- 10

pub fn block_means(raw: &[f64], block: usize) -> Vec<f64> {
    raw.chunks(block).map(|b| b.iter().sum::<f64>() / b.len() as f64).collect()
}

pub fn smoke_training(out_dir: &Path) -> Result<Verdict> {
    let t = Instant::now();
    let cfg = RunConfig {
        max_steps: Some(SMOKE_STEPS),
        out_dir: out_dir.to_path_buf(),
        ..RunConfig::default()
    };
    let (train, val) = load_datasets(&cfg)?;
    let init = Trainer::new(&cfg, &train)?;
    let before = evaluate(&init.net, &init.params, &val, cfg.hfov_deg, &cfg.ranges)?.rows[0].iou.unwrap_or(0.0);
    let (tr, out) = run_training(&cfg, &train, &val, None, None)?;
    let after = evaluate(&tr.net, &tr.params, &val, cfg.hfov_deg, &cfg.ranges)?.rows[0].iou.unwrap_or(0.0);
    let raw: Vec<f64> = out.log.iter().map(|l| l.report.raw().iter().sum()).collect();
    let blocks = block_means(&raw, SMOKE_BLOCK);
    let decreasing = blocks.windows(2).all(|w| w[1] < w[0]);
    let secs = t.elapsed().as_secs_f64();
    let pass = train.len() == 64
        && val.len() == 16
        && out.log.len() == SMOKE_STEPS
        && decreasing
        && after - before >= SMOKE_IOU_GAIN
        && secs < SMOKE_BUDGET_S;
    let shown: Vec<String> = blocks.iter().map(|b| format!("{b:.2}")).collect();
    Ok(Verdict::new(
        pass,
        format!(
            "{SMOKE_STEPS} steps; {SMOKE_BLOCK}-step loss means [{}]; held-out IoU {before:.3} -> {after:.3} (+{:.3}); {secs:.0} s",
            shown.join(", "),
            after - before
        ),
    ))
}

// ---------------------------------------------------------------- 11

/// Digest of each configuration's eval-mode logits on the same simulated
/// frame, with freshly initialised parameters.
pub fn ablation_digests(seed: u64) -> Result<Vec<(String, u64)>> {
    let base = RunConfig::default();
    let scene = random_scene(seed, 1);
    let (tensors, _) = simulate_tensors(&scene, &base.radar())?;
    let mut out = Vec::new();
    let mut variants = vec![("Ours".to_string(), base.clone())];
    for name in ABLATION_NAMES {
        variants.push((format!("w/o {name}"), base.ablated(name)?));
    }
    for (label, c) in variants {
        let input = reduce(&tensors[0], &c.reduce())?;
        let params = Network::new(c.net())?.init_params(c.seed)?;
        out.push((label, logit_digest(&c, &params, &input)?));
    }
    Ok(out)
}

pub fn ablation_plumbing() -> Result<Verdict> {
    let d = ablation_digests(31)?;
    let ours = d[0].1;
    let changed: Vec<String> = d[1..].iter().filter(|(_, h)| *h != ours).map(|(l, _)| l.clone()).collect();
    Ok(Verdict::new(
        changed.len() == ABLATION_NAMES.len(),
        format!("logits differ from Ours for {changed:?}"),
    ))
}

// ---------------------------------------------------------------- 12

pub fn rocc() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rocc"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run_ok(cmd: &mut Command) -> Result<()> {
    let out = cmd.output()?;
    if !out.status.success() {
        return Err(radarocc::Error::InvalidArgument(format!(
            "{cmd:?} exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(())
}

/// Every file under `dir` with its bytes, by relative path.
pub fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

pub const TINY_CONFIG: &str = r#"
max_steps = 3
n_r = 16
ablate = ["DBD", "SSS", "SFE", "RWA"]

[synthetic]
train_frames = 2
val_frames = 1
frames_per_scene = 2
"#;

/// Runs every subcommand once into `root`.
pub fn run_all_commands(root: &Path) -> Result<()> {
    let sim = root.join("sim");
    std::fs::create_dir_all(root)?;
    let scene = root.join("scene.json");
    std::fs::write(&scene, serde_json::to_string_pretty(&random_scene(3, 2)).unwrap())?;
    let cfg = root.join("run.toml");
    std::fs::write(&cfg, format!("out_dir = {:?}\n{TINY_CONFIG}", root.join("run").display().to_string()))?;
    let abl = root.join("ablate.toml");
    std::fs::write(&abl, format!("out_dir = {:?}\n{TINY_CONFIG}", root.join("ablate").display().to_string()))?;
    let p = |s: &str| root.join(s);

    run_ok(rocc().args(["simulate"]).arg(&scene).arg("--out").arg(&sim))?;
    run_ok(rocc().arg("reduce").arg(sim.join("frame_0000.4drt")).args(["--nr", "16", "--out"]).arg(p("f0.sprt")))?;
    run_ok(rocc().arg("reduce").arg(sim.join("frame_0001.4drt")).args(["--mode", "percentile", "--keep", "0.02", "--out"]).arg(p("f1.sprt")))?;
    run_ok(rocc().arg("gt").arg(&sim))?;
    run_ok(rocc().arg("train").arg(&cfg))?;
    run_ok(rocc().args(["eval", "--config"]).arg(&cfg).arg("--checkpoint").arg(p("run/last.ckpt")).arg("--data").arg(&sim).arg("--csv").arg(p("eval.csv")))?;
    run_ok(rocc().args(["eval", "--pred"]).arg(&sim).arg("--data").arg(&sim).arg("--csv").arg(p("self.csv")))?;
    run_ok(rocc().arg("viz").arg(sim.join("frame_0000.grid")).arg("--out").arg(p("grid.ppm")))?;
    run_ok(rocc().arg("viz").arg(p("f0.sprt")).arg("--out").arg(p("sparse.ppm")))?;
    run_ok(rocc().arg("ablate").arg(&abl))?;
    Ok(())
}

pub fn determinism(root: &Path) -> Result<Verdict> {
    let t = Instant::now();
    run_all_commands(root)?;
    let first = snapshot(root)?;
    std::fs::remove_dir_all(root)?;
    run_all_commands(root)?;
    let second = snapshot(root)?;
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .chain(second.keys().filter(|k| !first.contains_key(*k)))
        .collect();
    Ok(Verdict::new(
        differing.is_empty(),
        format!(
            "{} files from simulate/reduce/gt/train/eval/viz/ablate, {} differ between runs ({:.0} s)",
            first.len(),
            differing.len(),
            t.elapsed().as_secs_f64()
        ),
    ))
}
