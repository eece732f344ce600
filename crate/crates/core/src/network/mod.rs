//! The occupancy network: range-wise token attention, sparse spherical
//! encoder, deformable self-attention, deformable cross-attention from
//! Cartesian voxel queries and a multi-scale occupancy decoder.

mod config;

pub use config::{Encoding, NetConfig, Profile, StageShapes, ENCODER_STRIDE};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::reduction::{SparseRT, CHANNELS, IDX1, MEAN};
use crate::tensor::attention::{multi_head_attention, MhaNames};
use crate::tensor::conv::{dense_coords, sparse_conv, Coord, Rulebook, TAPS};
use crate::tensor::ops::{add, concat_last, concat_rows, dropout, gather_rows, linear, relu, reshape, softmax};
use crate::tensor::sample::deform_sample;
use crate::tensor::{Graph, NdArray, ParamStore, Var};

/// Active sites with one feature row each.
pub struct SparseFeatureMap {
    pub coords: Vec<Coord>,
    pub extents: [usize; 3],
    /// `[N, C]` rows aligned with `coords`.
    pub feats: Var,
}

/// Log-compresses power channels and centres Doppler indices.
pub fn normalize_descriptor(desc: &[f64; CHANNELS], doppler_bins: usize) -> [f64; CHANNELS] {
    let mut out = [0.0; CHANNELS];
    for (c, (o, &v)) in out.iter_mut().zip(desc).enumerate() {
        *o = if (IDX1..IDX1 + 3).contains(&c) {
            v / doppler_bins as f64 - 0.5
        } else {
            v.max(0.0).ln_1p()
        };
    }
    out
}

fn deform_names(prefix: &str) -> [String; 8] {
    ["off.w", "off.b", "att.w", "att.b", "val.w", "val.b", "out.w", "out.b"].map(|p| format!("{prefix}.{p}"))
}

/// Initial sampling offsets: each (head, point) pair looks along its own
/// direction, one bin further per wrap-around of the direction list.
fn offset_pattern(heads: usize, points: usize) -> NdArray {
    const DIRS: [[f64; 3]; 8] = [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [1.0, 1.0, 0.0],
        [-1.0, -1.0, 0.0],
    ];
    let mut v = Vec::with_capacity(heads * points * 3);
    for s in 0..heads * points {
        let scale = 1.0 + (s / DIRS.len()) as f64;
        v.extend(DIRS[s % DIRS.len()].map(|d| d * scale));
    }
    NdArray::vector(&v)
}

struct DecoderLevel {
    extents: [usize; 3],
    down: Option<Rulebook>,
    conv: Rulebook,
    /// Full-resolution site to this level's site.
    upsample: Vec<Option<usize>>,
}

/// Network with its fixed geometry (query reference points, decoder
/// rulebooks) precomputed; parameters live in a separate [`ParamStore`].
pub struct Network {
    pub cfg: NetConfig,
    feature_extents: [usize; 3],
    query_refs: Vec<Option<[f64; 3]>>,
    levels: Vec<DecoderLevel>,
}

impl Network {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let [h, w, l] = cfg.grid.shape();
        let feature_extents = cfg.stage_shapes().features;
        let feature_extents = [feature_extents[0], feature_extents[1], feature_extents[2]];
        let n_q = h * w * l;
        let query_refs = match cfg.encoding {
            Encoding::Spherical => {
                let fs = cfg.feature_spec();
                (0..n_q).map(|q| fs.phi_map(cfg.grid.center_of(q))).collect()
            }
            Encoding::Cartesian => {
                let s = ENCODER_STRIDE as f64;
                (0..n_q)
                    .map(|q| {
                        let (ix, iy, iz) = cfg.grid.unflatten(q);
                        Some([iz as f64 / s, iy as f64 / s, ix as f64 / s])
                    })
                    .collect()
            }
        };
        let full = [h, w, l];
        let mut levels = Vec::with_capacity(cfg.scales);
        let mut ext = full;
        for s in 0..cfg.scales {
            let down = (s > 0).then(|| {
                let (rb, _, e) = Rulebook::sparse(&dense_coords(ext), ext, 2);
                ext = e;
                rb
            });
            let upsample = dense_coords(full)
                .into_iter()
                .map(|c| Some(((c[0] >> s) * ext[1] + (c[1] >> s)) * ext[2] + (c[2] >> s)))
                .collect();
            levels.push(DecoderLevel {
                extents: ext,
                down,
                conv: Rulebook::submanifold(&dense_coords(ext), ext),
                upsample,
            });
        }
        Ok(Self {
            cfg,
            feature_extents,
            query_refs,
            levels,
        })
    }

    /// Fractional reference index of every voxel query; `None` when the
    /// voxel centre falls outside the encoded volume.
    pub fn query_refs(&self) -> &[Option<[f64; 3]>] {
        &self.query_refs
    }

    pub fn feature_extents(&self) -> [usize; 3] {
        self.feature_extents
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let c = &self.cfg;
        let mut s = ParamStore::new(seed);
        s.init_uniform("rwa.embed.w", &[CHANNELS, c.embed], CHANNELS)?;
        s.init_zeros("rwa.embed.b", &[c.embed])?;
        s.init_uniform("rwa.pos_az", &[c.extents[1], c.embed], c.embed)?;
        s.init_uniform("rwa.pos_el", &[c.extents[2], c.embed], c.embed)?;
        for l in 0..c.rwa_layers {
            MhaNames::new(&format!("rwa.l{l}")).init(&mut s, c.embed)?;
        }
        for i in 0..5 {
            let cin = if i == 0 { c.embed } else { c.c_f };
            s.init_uniform(&format!("enc.c{i}.w"), &[TAPS, cin, c.c_f], TAPS * cin)?;
            s.init_zeros(&format!("enc.c{i}.b"), &[c.c_f])?;
        }
        let prefixes: Vec<String> = (0..c.self_layers)
            .map(|l| format!("dsa.l{l}"))
            .chain(["dca".to_string()])
            .collect();
        for p in &prefixes {
            init_deform_params(&mut s, p, c.c_f, c.heads, c.points)?;
        }
        s.init_uniform("dca.queries", &[self.query_refs.len(), c.c_f], c.c_f)?;
        for (i, lvl) in self.levels.iter().enumerate() {
            if lvl.down.is_some() {
                s.init_uniform(&format!("dec.s{i}.down.w"), &[TAPS, c.c_f, c.c_f], TAPS * c.c_f)?;
                s.init_zeros(&format!("dec.s{i}.down.b"), &[c.c_f])?;
            }
            s.init_uniform(&format!("dec.s{i}.conv.w"), &[TAPS, c.c_f, c.c_f], TAPS * c.c_f)?;
            s.init_zeros(&format!("dec.s{i}.conv.b"), &[c.c_f])?;
        }
        let widths = [c.scales * c.c_f, c.hidden[0], c.hidden[1], 3];
        for i in 0..3 {
            s.init_uniform(&format!("head.l{i}.w"), &[widths[i], widths[i + 1]], widths[i])?;
            s.init_zeros(&format!("head.l{i}.b"), &[widths[i + 1]])?;
        }
        Ok(s)
    }

    fn lin(g: &mut Graph, store: &ParamStore, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = g.param(store, w)?;
        let b = g.param(store, b)?;
        linear(g, x, w, Some(b))
    }

    fn conv(g: &mut Graph, store: &ParamStore, x: Var, prefix: &str, rules: Rulebook) -> Result<Var> {
        let w = g.param(store, &format!("{prefix}.w"))?;
        let b = g.param(store, &format!("{prefix}.b"))?;
        sparse_conv(g, x, w, Some(b), rules)
    }

    /// Embeds descriptors with positional lookups and, when enabled, mixes
    /// tokens of the same range bin with multi-head self-attention.
    pub fn range_wise_self_attention(&self, g: &mut Graph, store: &ParamStore, t: &SparseRT) -> Result<SparseFeatureMap> {
        let c = &self.cfg;
        if t.range_bins() != c.extents[0] {
            return Err(Error::invalid(format!(
                "sparse tensor has {} range bins, network expects {}",
                t.range_bins(),
                c.extents[0]
            )));
        }
        let mut coords = Vec::with_capacity(t.num_entries());
        let mut rows = Vec::with_capacity(t.num_entries() * CHANNELS);
        let mut groups: Vec<Range<usize>> = Vec::with_capacity(t.range_bins());
        for (r, entries) in t.ranges.iter().enumerate() {
            let start = coords.len();
            for e in entries {
                let (a, el) = (e.az as usize, e.el as usize);
                if a >= c.extents[1] || el >= c.extents[2] {
                    return Err(Error::invalid(format!(
                        "index (az {a}, el {el}) outside the {}x{} lookup tables",
                        c.extents[1], c.extents[2]
                    )));
                }
                coords.push([r, a, el]);
                rows.extend(normalize_descriptor(&e.desc, c.doppler_bins));
            }
            groups.push(start..coords.len());
        }
        let n = coords.len();
        if n == 0 {
            let feats = g.constant(NdArray::rows(0, c.embed, Vec::new()));
            return Ok(SparseFeatureMap { coords, extents: c.extents, feats });
        }
        let x = g.constant(NdArray::rows(n, CHANNELS, rows));
        let mut h = Self::lin(g, store, x, "rwa.embed.w", "rwa.embed.b")?;
        let pa = g.param(store, "rwa.pos_az")?;
        let pe = g.param(store, "rwa.pos_el")?;
        let pa = gather_rows(g, pa, coords.iter().map(|c| Some(c[1])).collect())?;
        let pe = gather_rows(g, pe, coords.iter().map(|c| Some(c[2])).collect())?;
        h = add(g, h, pa)?;
        h = add(g, h, pe)?;
        if c.rwa {
            for l in 0..c.rwa_layers {
                let names = MhaNames::new(&format!("rwa.l{l}"));
                let a = multi_head_attention(g, store, &names, h, h, h, c.rwa_heads, c.dropout, &groups)?;
                h = add(g, h, a)?;
            }
        }
        Ok(SparseFeatureMap { coords, extents: c.extents, feats: h })
    }

    /// Nearest-voxel scatter of tokens into Cartesian `(z, y, x)` sites;
    /// on collisions the token with the larger mean power wins.
    pub fn scatter_to_cartesian(&self, g: &mut Graph, x: SparseFeatureMap, t: &SparseRT) -> Result<SparseFeatureMap> {
        let c = &self.cfg;
        let mean: Vec<f64> = t.ranges.iter().flatten().map(|e| e.desc[MEAN]).collect();
        let mut best: std::collections::BTreeMap<Coord, usize> = Default::default();
        for (i, rc) in x.coords.iter().enumerate() {
            let p = c.spec.cell_center([rc[0] as f64, rc[1] as f64, rc[2] as f64]);
            let Some((ix, iy, iz)) = c.grid.voxel_of(p) else { continue };
            let slot = best.entry([iz, iy, ix]).or_insert(i);
            if mean[i] > mean[*slot] {
                *slot = i;
            }
        }
        let coords: Vec<Coord> = best.keys().copied().collect();
        let extents = c.grid.shape();
        let feats = if coords.is_empty() {
            g.constant(NdArray::rows(0, c.embed, Vec::new()))
        } else {
            gather_rows(g, x.feats, best.values().map(|&i| Some(i)).collect())?
        };
        Ok(SparseFeatureMap { coords, extents, feats })
    }

    /// Submanifold, sparse, strided, strided, submanifold; densified with
    /// zeros at inactive sites. Output `[X/4, Y/4, Z/4, C_f]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: SparseFeatureMap) -> Result<Var> {
        let c_f = self.cfg.c_f;
        let [fx, fy, fz] = self.feature_extents;
        if x.coords.is_empty() {
            return Ok(g.constant(NdArray::zeros(&[fx, fy, fz, c_f])));
        }
        let mut coords = x.coords;
        let mut ext = x.extents;
        let mut h = x.feats;
        for (i, stride) in [None, Some(1), Some(2), Some(2), None].into_iter().enumerate() {
            let rules = match stride {
                None => Rulebook::submanifold(&coords, ext),
                Some(s) => {
                    let (rb, out, e) = Rulebook::sparse(&coords, ext, s);
                    coords = out;
                    ext = e;
                    rb
                }
            };
            h = Self::conv(g, store, h, &format!("enc.c{i}"), rules)?;
            if i < 4 {
                h = relu(g, h);
            }
        }
        debug_assert_eq!(ext, self.feature_extents);
        let mut slot = vec![None; fx * fy * fz];
        for (i, c) in coords.iter().enumerate() {
            slot[(c[0] * fy + c[1]) * fz + c[2]] = Some(i);
        }
        let dense = gather_rows(g, h, slot)?;
        reshape(g, dense, &[fx, fy, fz, c_f])
    }

    /// Multi-head deformable attention of query rows `z` at reference
    /// indices `refs` into the volume `x`: sampling offsets and per-head
    /// softmax weights come from `z`, values from a projection of `x`.
    pub fn deform_attn(&self, g: &mut Graph, store: &ParamStore, prefix: &str, z: Var, refs: Vec<[f64; 3]>, x: Var) -> Result<Var> {
        let (m, k) = (self.cfg.heads, self.cfg.points);
        deform_attn(g, store, prefix, z, refs, x, m, k)
    }

    /// Layers of `F + dropout(DeformAttn(F, own index, F))`.
    pub fn deform_self_attn(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Result<Var> {
        let shape = g.shape(f).to_vec();
        let [fx, fy, fz, ch] = [shape[0], shape[1], shape[2], shape[3]];
        let refs: Vec<[f64; 3]> = dense_coords([fx, fy, fz])
            .into_iter()
            .map(|c| c.map(|v| v as f64))
            .collect();
        let mut f = f;
        for l in 0..self.cfg.self_layers {
            let rows = reshape(g, f, &[fx * fy * fz, ch])?;
            let a = self.deform_attn(g, store, &format!("dsa.l{l}"), rows, refs.clone(), f)?;
            let a = dropout(g, a, self.cfg.dropout)?;
            let rows = add(g, rows, a)?;
            f = reshape(g, rows, &shape)?;
        }
        Ok(f)
    }

    /// Voxel queries attend into `f_r` around their mapped reference
    /// points; queries outside the encoded volume pass through unchanged.
    /// Output `[H, W, L, C_f]`.
    pub fn aggregate_to_cartesian(&self, g: &mut Graph, store: &ParamStore, f_r: Var) -> Result<Var> {
        let [h, w, l] = self.cfg.grid.shape();
        let queries = g.param(store, "dca.queries")?;
        let inside: Vec<usize> = (0..self.query_refs.len()).filter(|&q| self.query_refs[q].is_some()).collect();
        let out = if inside.is_empty() {
            queries
        } else {
            let z = gather_rows(g, queries, inside.iter().map(|&q| Some(q)).collect())?;
            let refs = inside.iter().map(|&q| self.query_refs[q].unwrap()).collect();
            let attended = self.deform_attn(g, store, "dca", z, refs, f_r)?;
            let n_in = inside.len();
            let both = concat_rows(g, attended, queries)?;
            let mut pos = 0;
            let index = self
                .query_refs
                .iter()
                .enumerate()
                .map(|(q, r)| {
                    Some(if r.is_some() {
                        pos += 1;
                        pos - 1
                    } else {
                        n_in + q
                    })
                })
                .collect();
            gather_rows(g, both, index)?
        };
        reshape(g, out, &[h, w, l, self.cfg.c_f])
    }

    /// Multi-scale 3D conv decoder with residual blocks, nearest upsampling
    /// of every scale to full resolution, concatenation and an MLP head.
    pub fn decode_occupancy(&self, g: &mut Graph, store: &ParamStore, gv: Var) -> Result<Var> {
        let [h, w, l] = self.cfg.grid.shape();
        let n = h * w * l;
        let c_f = self.cfg.c_f;
        if g.shape(gv) != [h, w, l, c_f] {
            return Err(Error::ShapeMismatch {
                op: "decode_occupancy",
                lhs: vec![h, w, l, c_f],
                rhs: g.shape(gv).to_vec(),
            });
        }
        let mut x = reshape(g, gv, &[n, c_f])?;
        let mut outs = Vec::with_capacity(self.levels.len());
        for (s, lvl) in self.levels.iter().enumerate() {
            if let Some(down) = &lvl.down {
                x = Self::conv(g, store, x, &format!("dec.s{s}.down"), down.clone())?;
                x = relu(g, x);
            }
            let y = Self::conv(g, store, x, &format!("dec.s{s}.conv"), lvl.conv.clone())?;
            let y = relu(g, y);
            x = add(g, x, y)?;
            debug_assert_eq!(g.shape(x)[0], lvl.extents.iter().product::<usize>());
            outs.push(if s == 0 { x } else { gather_rows(g, x, lvl.upsample.clone())? });
        }
        let mut z = concat_last(g, &outs)?;
        for i in 0..3 {
            z = Self::lin(g, store, z, &format!("head.l{i}.w"), &format!("head.l{i}.b"))?;
            if i < 2 {
                z = relu(g, z);
            }
        }
        reshape(g, z, &[h, w, l, 3])
    }

    /// Full pipeline from a sparse tensor to occupancy logits `[H, W, L, 3]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, t: &SparseRT) -> Result<Var> {
        let tokens = self.range_wise_self_attention(g, store, t)?;
        let tokens = match self.cfg.encoding {
            Encoding::Spherical => tokens,
            Encoding::Cartesian => self.scatter_to_cartesian(g, tokens, t)?,
        };
        let f = self.encode(g, store, tokens)?;
        let f = self.deform_self_attn(g, store, f)?;
        let gv = self.aggregate_to_cartesian(g, store, f)?;
        self.decode_occupancy(g, store, gv)
    }
}

/// Free-standing deformable attention with explicit head/point counts.
#[allow(clippy::too_many_arguments)]
pub fn deform_attn(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    z: Var,
    refs: Vec<[f64; 3]>,
    x: Var,
    heads: usize,
    points: usize,
) -> Result<Var> {
    let [ow, ob, aw, ab, vw, vb, pw, pb] = deform_names(prefix);
    let n = refs.len();
    let off = Network::lin(g, store, z, &ow, &ob)?;
    let att = Network::lin(g, store, z, &aw, &ab)?;
    let att = reshape(g, att, &[n * heads, points])?;
    let att = softmax(g, att, 1)?;
    let att = reshape(g, att, &[n, heads * points])?;
    let v = Network::lin(g, store, x, &vw, &vb)?;
    let s = deform_sample(g, v, refs, off, att, heads, points)?;
    Network::lin(g, store, s, &pw, &pb)
}

/// Parameters for a free-standing [`deform_attn`] block under `prefix`.
pub fn init_deform_params(store: &mut ParamStore, prefix: &str, c: usize, heads: usize, points: usize) -> Result<()> {
    let [ow, ob, aw, ab, vw, vb, pw, pb] = deform_names(prefix);
    let mk = heads * points;
    store.init_zeros(&ow, &[c, mk * 3])?;
    store.insert(&ob, offset_pattern(heads, points))?;
    store.init_uniform(&aw, &[c, mk], c)?;
    store.init_zeros(&ab, &[mk])?;
    store.init_uniform(&vw, &[c, c], c)?;
    store.init_zeros(&vb, &[c])?;
    store.init_uniform(&pw, &[c, c], c)?;
    store.init_zeros(&pb, &[c])?;
    Ok(())
}
