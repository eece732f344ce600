//! Doppler bins descriptors and spatial sparsification of radar tensors.

mod descriptor;
mod sparse;

pub use descriptor::{
    doppler_descriptor, encode_average_pool, encode_descriptors, DopplerDescriptor, CHANNELS,
    IDX1, MEAN, STD, TOP1,
};
pub use sparse::{
    percentile_sparsify, range_coverage, sidelobe_sparsify, SparseEntry, SparseRT, SPARSE_MAGIC,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::radar::RadarTensor4D;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsifyMode {
    #[default]
    Sidelobe,
    Percentile,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorMode {
    #[default]
    Doppler,
    AvgPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReduceConfig {
    pub n_r: usize,
    pub mode: SparsifyMode,
    pub descriptor: DescriptorMode,
    /// Used in percentile mode; defaults to the same element budget as
    /// `n_r` per range.
    pub keep_fraction: Option<f64>,
}

impl ReduceConfig {
    pub fn sidelobe(n_r: usize) -> Self {
        Self {
            n_r,
            mode: SparsifyMode::Sidelobe,
            descriptor: DescriptorMode::Doppler,
            keep_fraction: None,
        }
    }
}

/// Full reduction of one radar tensor.
pub fn reduce(rt: &RadarTensor4D, cfg: &ReduceConfig) -> Result<SparseRT> {
    let vol = match cfg.descriptor {
        DescriptorMode::Doppler => encode_descriptors(rt)?,
        DescriptorMode::AvgPool => encode_average_pool(rt)?,
    };
    match cfg.mode {
        SparsifyMode::Sidelobe => sidelobe_sparsify(&vol, cfg.n_r),
        SparsifyMode::Percentile => {
            let [_, a, e, _] = rt.shape();
            let frac = cfg
                .keep_fraction
                .unwrap_or_else(|| (cfg.n_r as f64 / (a * e) as f64).min(1.0));
            percentile_sparsify(&vol, frac)
        }
    }
}
