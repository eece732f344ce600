//! Finite-difference check of the sparse convolution and the deformable
//! sampler on random inputs.
//!
//!     cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radarocc::tensor::conv::{sparse_conv, Rulebook};
use radarocc::tensor::gradcheck::check_graph;
use radarocc::tensor::ops::{linear, reshape, sum_all};
use radarocc::tensor::sample::deform_sample;
use radarocc::tensor::{Graph, NdArray, Var};

fn randn(r: &mut ChaCha8Rng, shape: &[usize]) -> NdArray {
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random linear functional of `y`, so every output element matters differently.
fn probe(g: &mut Graph, y: Var) -> radarocc::Result<Var> {
    let n = g.value(y).len();
    let w = g.constant(NdArray::from_vec(&[n, 1], (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect())?);
    let flat = reshape(g, y, &[1, n])?;
    let p = linear(g, flat, w, None)?;
    Ok(sum_all(g, p))
}

fn main() -> radarocc::Result<()> {
    let mut r = ChaCha8Rng::seed_from_u64(1);

    let coords: Vec<[usize; 3]> = vec![[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 2, 1], [0, 2, 1]];
    let rb = Rulebook::submanifold(&coords, [3, 3, 2]);
    let inputs = [randn(&mut r, &[5, 2]), randn(&mut r, &[27, 2, 3]), randn(&mut r, &[3])];
    let rep = check_graph(
        |g, v| {
            let y = sparse_conv(g, v[0], v[1], Some(v[2]), rb.clone())?;
            probe(g, y)
        },
        &inputs,
        1e-6,
    )?;
    println!("submanifold conv: max rel err {:.2e}", rep.max_rel_error);

    // two heads, two points each; references kept off the integer nodes
    let refs = vec![[0.6, 1.3, 0.7], [1.4, 0.45, 1.2]];
    let off = NdArray::from_vec(&[2, 12], (0..24).map(|_| r.random_range(-0.2..0.2)).collect())?;
    let inputs = [randn(&mut r, &[3, 3, 3, 4]), off, randn(&mut r, &[2, 4])];
    let rep = check_graph(
        |g, v| {
            let y = deform_sample(g, v[0], refs.clone(), v[1], v[2], 2, 2)?;
            probe(g, y)
        },
        &inputs,
        1e-6,
    )?;
    println!("deformable sampling: max rel err {:.2e}", rep.max_rel_error);
    Ok(())
}
