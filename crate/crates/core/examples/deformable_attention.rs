//! Deformable attention over a small feature volume: the collapse to plain
//! trilinear sampling, then what learned offsets do.
//!
//!     cargo run --example deformable_attention

use radarocc::network::{deform_attn, init_deform_params};
use radarocc::tensor::{Graph, NdArray, ParamStore};

fn volume(c: usize) -> NdArray {
    let (x, y, z) = (4, 4, 3);
    let data = (0..x * y * z * c).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
    NdArray::from_vec(&[x, y, z, c], data).unwrap()
}

fn attend(store: &ParamStore, x: &NdArray, refs: Vec<[f64; 3]>, points: usize) -> radarocc::Result<NdArray> {
    let c = x.shape()[3];
    let mut g = Graph::eval();
    let xv = g.constant(x.clone());
    let q = g.constant(NdArray::full(&[refs.len(), c], 0.3));
    let y = deform_attn(&mut g, store, "blk", q, refs, xv, 1, points)?;
    Ok(g.value(y).clone())
}

fn main() -> radarocc::Result<()> {
    let c = 4;
    let x = volume(c);
    let mut store = ParamStore::new(0);
    init_deform_params(&mut store, "blk", c, 1, 1)?;
    for n in ["blk.off.w", "blk.off.b", "blk.att.w", "blk.att.b", "blk.val.b", "blk.out.b"] {
        let s = store.value(n)?.shape().to_vec();
        store.set_value(n, NdArray::zeros(&s))?;
    }
    store.set_value("blk.val.w", NdArray::identity(c))?;
    store.set_value("blk.out.w", NdArray::identity(c))?;

    let p = [1.0, 2.0, 1.0];
    let y = attend(&store, &x, vec![p], 1)?;
    let direct: Vec<f64> = (0..c).map(|k| x.get(&[1, 2, 1, k])).collect();
    println!("M=K=1, zero offsets, identity weights at {p:?}");
    println!("  attention {:?}\n  X(p)      {direct:?}", y.row(0));

    // shift the single sampling point one cell along y
    store.set_value("blk.off.b", NdArray::vector(&[0.0, 1.0, 0.0]))?;
    let y = attend(&store, &x, vec![p], 1)?;
    let shifted: Vec<f64> = (0..c).map(|k| x.get(&[1, 3, 1, k])).collect();
    println!("offset (0, 1, 0)\n  attention {:?}\n  X(p + dy) {shifted:?}", y.row(0));

    // a fractional offset interpolates between the two
    store.set_value("blk.off.b", NdArray::vector(&[0.0, 0.25, 0.0]))?;
    println!("offset (0, 0.25, 0): {:?}", attend(&store, &x, vec![p], 1)?.row(0));
    Ok(())
}
