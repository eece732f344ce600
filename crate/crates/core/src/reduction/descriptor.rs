use crate::error::{Error, Result};
use crate::radar::RadarTensor4D;
use crate::tensor::NdArray;

/// Channel layout of a descriptor row.
pub const TOP1: usize = 0;
pub const IDX1: usize = 3;
pub const MEAN: usize = 6;
pub const STD: usize = 7;
pub const CHANNELS: usize = 8;

/// Summary of one Doppler spectrum: the three strongest bins with their
/// indices, the mean power and the population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DopplerDescriptor {
    pub top: [f64; 3],
    pub idx: [usize; 3],
    pub mean: f64,
    pub std: f64,
}

impl DopplerDescriptor {
    pub fn channels(&self) -> [f64; CHANNELS] {
        [
            self.top[0],
            self.top[1],
            self.top[2],
            self.idx[0] as f64,
            self.idx[1] as f64,
            self.idx[2] as f64,
            self.mean,
            self.std,
        ]
    }
}

/// Top-3 ties resolve to the lower Doppler index.
pub fn doppler_descriptor(bins: &[f64]) -> Result<DopplerDescriptor> {
    if bins.len() < 3 {
        return Err(Error::invalid(format!(
            "descriptor needs at least 3 Doppler bins, got {}",
            bins.len()
        )));
    }
    let mut top = [f64::NEG_INFINITY; 3];
    let mut idx = [usize::MAX; 3];
    for (i, &v) in bins.iter().enumerate() {
        // strict comparisons keep earlier indices ahead on ties
        if v > top[0] {
            top = [v, top[0], top[1]];
            idx = [i, idx[0], idx[1]];
        } else if v > top[1] {
            top = [top[0], v, top[1]];
            idx = [idx[0], i, idx[1]];
        } else if v > top[2] {
            top[2] = v;
            idx[2] = i;
        }
    }
    let n = bins.len() as f64;
    let mean = bins.iter().sum::<f64>() / n;
    let var = bins.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(DopplerDescriptor {
        top,
        idx,
        mean,
        std: var.sqrt(),
    })
}

/// Descriptor at every spatial cell: `[R, A, E, D]` to `[R, A, E, 8]`.
pub fn encode_descriptors(rt: &RadarTensor4D) -> Result<NdArray> {
    let [r, a, e, d] = rt.shape();
    let mut out = Vec::with_capacity(r * a * e * CHANNELS);
    for cell in rt.power.data().chunks_exact(d) {
        out.extend(doppler_descriptor(cell)?.channels());
    }
    NdArray::from_vec(&[r, a, e, CHANNELS], out)
}

/// Average pooling over Doppler laid out in descriptor form: only the mean
/// channel is populated. Used to ablate the descriptor.
pub fn encode_average_pool(rt: &RadarTensor4D) -> Result<NdArray> {
    let [r, a, e, d] = rt.shape();
    let mut out = vec![0.0; r * a * e * CHANNELS];
    for (i, cell) in rt.power.data().chunks_exact(d).enumerate() {
        out[i * CHANNELS + MEAN] = cell.iter().sum::<f64>() / d as f64;
    }
    NdArray::from_vec(&[r, a, e, CHANNELS], out)
}
