//! Run configuration: a TOML file with schema validation and defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Encoding, NetConfig, Profile};
use crate::occupancy::DEFAULT_RANGES;
use crate::radar::RadarConfig;
use crate::reduction::{DescriptorMode, ReduceConfig, SparsifyMode};

/// Switches for the four ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    /// Range-wise self-attention on the sparse tokens.
    pub rwa: bool,
    /// Doppler bins descriptor; `false` averages the Doppler axis instead.
    pub dbd: bool,
    /// Sparsification mode.
    pub sss: SparsifyMode,
    /// Where the tokens are encoded.
    pub sfe: Encoding,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            rwa: true,
            dbd: true,
            sss: SparsifyMode::Sidelobe,
            sfe: Encoding::Spherical,
        }
    }
}

/// Randomly generated desk scenes, used when no dataset directory is given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub train_frames: usize,
    pub val_frames: usize,
    pub frames_per_scene: usize,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            train_frames: 64,
            val_frames: 16,
            frames_per_scene: 4,
            seed: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Inverse class frequency of the training grids.
    #[default]
    Frequency,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Directories of `frame_NNNN.4drt` + `frame_NNNN.grid` pairs.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub synthetic: SyntheticData,
    pub lr: f64,
    pub epochs: usize,
    /// Overrides `epochs * train_frames` when set.
    pub max_steps: Option<usize>,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub n_r: usize,
    pub toggles: Toggles,
    pub loss_normalizer: bool,
    pub class_weights: WeightMode,
    pub hfov_deg: f64,
    pub ranges: Vec<f64>,
    /// Toggles flipped one at a time by `ablate`.
    pub ablate: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 7,
            out_dir: PathBuf::from("runs/desk"),
            train_dir: None,
            val_dir: None,
            synthetic: SyntheticData::default(),
            lr: 3e-4,
            epochs: 10,
            max_steps: None,
            warmup_fraction: 1.0 / 3.0,
            batch_size: 1,
            n_r: 32,
            toggles: Toggles::default(),
            loss_normalizer: true,
            class_weights: WeightMode::Frequency,
            hfov_deg: 107.0,
            ranges: DEFAULT_RANGES.to_vec(),
            ablate: ["RWA", "DBD", "SSS", "SFE"].map(String::from).to_vec(),
        }
    }
}

pub const ABLATION_NAMES: [&str; 4] = ["DBD", "SSS", "SFE", "RWA"];

impl RunConfig {
    /// Parses, validates and logs every key that fell back to its default.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let cfg: RunConfig = user.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let defaults = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        log_defaults("", &defaults, &user);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.max_steps == Some(0) {
            return bad("training needs at least one step".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction));
        }
        if self.batch_size != 1 {
            return bad(format!("only batch_size = 1 is supported, got {}", self.batch_size));
        }
        if self.n_r == 0 {
            return bad("n_r must be positive".into());
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg <= 360.0) {
            return bad(format!("hfov_deg {} outside (0, 360]", self.hfov_deg));
        }
        if self.ranges.is_empty() || self.ranges.iter().any(|r| !(*r > 0.0)) {
            return bad("ranges must be positive".into());
        }
        for a in &self.ablate {
            if !ABLATION_NAMES.contains(&a.as_str()) {
                return bad(format!("unknown ablation `{a}`; expected one of {ABLATION_NAMES:?}"));
            }
        }
        if self.train_dir.is_none() && self.synthetic.train_frames == 0 {
            return bad("no training data: set train_dir or synthetic.train_frames".into());
        }
        if self.synthetic.frames_per_scene == 0 {
            return bad("synthetic.frames_per_scene must be positive".into());
        }
        Ok(())
    }

    pub fn radar(&self) -> RadarConfig {
        match self.profile {
            Profile::Desk => RadarConfig::desk(),
            Profile::PaperShape => RadarConfig::paper(),
        }
    }

    pub fn net(&self) -> NetConfig {
        let mut c = NetConfig::for_profile(self.profile, &self.radar());
        c.rwa = self.toggles.rwa;
        c.encoding = self.toggles.sfe;
        c
    }

    pub fn reduce(&self) -> ReduceConfig {
        ReduceConfig {
            n_r: self.n_r,
            mode: self.toggles.sss,
            descriptor: if self.toggles.dbd {
                DescriptorMode::Doppler
            } else {
                DescriptorMode::AvgPool
            },
            keep_fraction: None,
        }
    }

    /// This config with one named ablation applied.
    pub fn ablated(&self, name: &str) -> Result<Self> {
        let mut c = self.clone();
        match name {
            "RWA" => c.toggles.rwa = false,
            "DBD" => c.toggles.dbd = false,
            "SSS" => c.toggles.sss = SparsifyMode::Percentile,
            "SFE" => c.toggles.sfe = Encoding::Cartesian,
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(c)
    }
}

fn log_defaults(prefix: &str, defaults: &toml::Table, user: &toml::Table) {
    for (k, v) in defaults {
        match (v, user.get(k)) {
            (toml::Value::Table(d), Some(toml::Value::Table(u))) => log_defaults(&format!("{prefix}{k}."), d, u),
            (_, Some(_)) => {}
            (v, None) => log::info!("config default {prefix}{k} = {v}"),
        }
    }
}
