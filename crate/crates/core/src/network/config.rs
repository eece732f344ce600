use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, SphericalSpec};
use crate::radar::RadarConfig;

/// Where the sparse tokens are encoded before aggregation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Spherical feature encoding followed by Cartesian aggregation.
    #[default]
    Spherical,
    /// Tokens scattered into the Cartesian grid before the conv stack.
    Cartesian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    PaperShape,
}

/// Widths and toggles of the occupancy network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Raw tensor extents `[R, A, E]` and Doppler bin count.
    pub extents: [usize; 3],
    pub doppler_bins: usize,
    pub spec: SphericalSpec,
    pub grid: GridSpec,
    /// Token embedding width and heads of the range-wise attention.
    pub embed: usize,
    pub rwa_heads: usize,
    pub rwa_layers: usize,
    pub c_f: usize,
    /// Deformable attention heads `M` and sampling points `K`.
    pub heads: usize,
    pub points: usize,
    pub self_layers: usize,
    pub scales: usize,
    pub hidden: [usize; 2],
    pub dropout: f64,
    pub rwa: bool,
    pub encoding: Encoding,
}

/// Overall spatial reduction of the encoder.
pub const ENCODER_STRIDE: usize = 4;

impl NetConfig {
    pub fn desk(radar: &RadarConfig) -> Self {
        Self::with_widths(radar, GridSpec::desk(), [16, 2, 16, 2, 4, 2])
    }

    /// Appendix widths over the full RoI; used for shape checks only.
    pub fn paper_shape(radar: &RadarConfig) -> Self {
        Self::with_widths(radar, GridSpec::default(), [32, 4, 192, 8, 8, 4])
    }

    pub fn for_profile(profile: Profile, radar: &RadarConfig) -> Self {
        match profile {
            Profile::Desk => Self::desk(radar),
            Profile::PaperShape => Self::paper_shape(radar),
        }
    }

    /// `[embed, rwa_heads, c_f, heads, points, scales]`.
    fn with_widths(radar: &RadarConfig, grid: GridSpec, w: [usize; 6]) -> Self {
        let [r, a, e, d] = radar.tensor_shape();
        Self {
            extents: [r, a, e],
            doppler_bins: d,
            spec: radar.axes().spherical(),
            grid,
            embed: w[0],
            rwa_heads: w[1],
            rwa_layers: 2,
            c_f: w[2],
            heads: w[3],
            points: w[4],
            self_layers: 2,
            scales: w[5],
            hidden: [64, 64],
            dropout: 0.1,
            rwa: true,
            encoding: Encoding::Spherical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !self.embed.is_multiple_of(self.rwa_heads) {
            return Err(Error::Config(format!(
                "embedding width {} not divisible by {} heads",
                self.embed, self.rwa_heads
            )));
        }
        if !self.c_f.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "feature width {} not divisible by {} heads",
                self.c_f, self.heads
            )));
        }
        if self.points == 0 || self.scales == 0 || self.doppler_bins < 3 {
            return Err(Error::Config("points, scales must be >= 1 and Doppler bins >= 3".into()));
        }
        if self.spec.extents() != self.extents {
            return Err(Error::Config("spherical spec disagrees with tensor extents".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Spec of the encoded spherical volume.
    pub fn feature_spec(&self) -> SphericalSpec {
        self.spec.strided(ENCODER_STRIDE)
    }

    /// Tensor shapes at each stage boundary, without running anything.
    pub fn stage_shapes(&self) -> StageShapes {
        let [h, w, l] = self.grid.shape();
        let f = match self.encoding {
            Encoding::Spherical => self.feature_spec().extents(),
            Encoding::Cartesian => [h, w, l].map(|n| n.div_ceil(ENCODER_STRIDE)),
        };
        StageShapes {
            token_row: self.embed + 3,
            features: [f[0], f[1], f[2], self.c_f],
            aggregated: [h, w, l, self.c_f],
            decoder_concat: self.scales * self.c_f,
            logits: [h, w, l, 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShapes {
    /// Token features plus the carried (range, az, el) indices.
    pub token_row: usize,
    pub features: [usize; 4],
    pub aggregated: [usize; 4],
    pub decoder_concat: usize,
    pub logits: [usize; 4],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_shapes() {
        let s = NetConfig::paper_shape(&RadarConfig::paper()).stage_shapes();
        assert_eq!(s.token_row, 35);
        assert_eq!(s.features, [64, 27, 10, 192]);
        assert_eq!(s.aggregated, [14, 128, 128, 192]);
        assert_eq!(s.logits, [14, 128, 128, 3]);
    }

    #[test]
    fn desk_shapes() {
        let c = NetConfig::desk(&RadarConfig::desk());
        c.validate().unwrap();
        let s = c.stage_shapes();
        assert_eq!(s.features, [16, 8, 4, 16]);
        assert_eq!(s.logits, [8, 32, 32, 3]);
    }
}
