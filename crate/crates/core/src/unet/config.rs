use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{VoxelSchedule, DEFAULT_K, DEFAULT_SAMPLES_PER_FACE};
use crate::pointconv::C_MID;
use crate::{Error, Result};

/// What the network output means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionMode {
    /// Next-frame displacement per point.
    #[serde(rename = "vel")]
    Velocity,
    /// Change of the per-frame displacement.
    #[serde(rename = "acc")]
    Acceleration,
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionMode::Velocity => "vel",
            PredictionMode::Acceleration => "acc",
        })
    }
}

impl FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vel" | "velocity" => Ok(PredictionMode::Velocity),
            "acc" | "acceleration" => Ok(PredictionMode::Acceleration),
            _ => Err(Error::invalid(format!("unknown prediction mode {s:?}"))),
        }
    }
}

/// Whether the network sees surface point clouds or mesh vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    PointCloud,
    Mesh,
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::PointCloud => "pointcloud",
            InputMode::Mesh => "mesh",
        })
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointcloud" | "pc" => Ok(InputMode::PointCloud),
            "mesh" => Ok(InputMode::Mesh),
            _ => Err(Error::invalid(format!("unknown input mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width at full resolution. Level `l` uses `C * 2^l`.
    pub base_channels: usize,
    /// Downsampling blocks; one per schedule level.
    pub encoder_blocks: usize,
    /// Blocks at the coarsest level.
    pub bottleneck_blocks: usize,
    /// Upsampling blocks; equal to `encoder_blocks`.
    pub decoder_blocks: usize,
    pub schedule: VoxelSchedule,
    /// Neighbors per query in every kNN search.
    pub k: usize,
    pub prediction: PredictionMode,
    pub input: InputMode,
    /// Mesh input only: face-to-face interaction points at full resolution
    /// instead of vertex-to-vertex relational neighbors.
    pub faces: bool,
    /// Samples per face when searching for interaction points.
    pub samples_per_face: usize,
    /// Velocity history length.
    pub history: usize,
    /// Feeds the height above the ground as an input. When off, the
    /// column is zero and the network is blind to 3-D translation.
    pub z_feature: bool,
    pub c_mid: usize,
    /// Hidden width of the input encoder and output head.
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    /// Full-size network: C = 32 and three levels of 3/3/3 blocks.
    fn default() -> Self {
        Self {
            base_channels: 32,
            encoder_blocks: 3,
            bottleneck_blocks: 3,
            decoder_blocks: 3,
            schedule: VoxelSchedule::physion(1.0),
            k: DEFAULT_K,
            prediction: PredictionMode::Acceleration,
            input: InputMode::PointCloud,
            faces: true,
            samples_per_face: DEFAULT_SAMPLES_PER_FACE,
            history: 2,
            z_feature: true,
            c_mid: C_MID,
            head_hidden: 32,
        }
    }
}

impl ModelConfig {
    /// Single-CPU network: C = 16, two levels, one bottleneck block.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            encoder_blocks: 2,
            bottleneck_blocks: 1,
            decoder_blocks: 2,
            schedule: VoxelSchedule::physion(1.0).truncated(2),
            k: 12,
            head_hidden: 32,
            ..Self::default()
        }
    }

    /// Network with `levels` down/up levels and as many bottleneck blocks.
    pub fn with_levels(mut self, levels: usize) -> Self {
        self.encoder_blocks = levels;
        self.bottleneck_blocks = levels;
        self.decoder_blocks = levels;
        self.schedule = VoxelSchedule::physion(1.0).truncated(levels);
        self
    }

    pub fn levels(&self) -> usize {
        self.encoder_blocks
    }

    /// Channel width at resolution level `l`.
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Raw input width before the input encoder: `3h + 1`.
    pub fn raw_width(&self) -> usize {
        3 * self.history + 1
    }

    pub fn total_blocks(&self) -> usize {
        self.encoder_blocks + self.bottleneck_blocks + self.decoder_blocks
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_blocks != self.decoder_blocks {
            return Err(Error::invalid(format!(
                "{} encoder blocks but {} decoder blocks",
                self.encoder_blocks, self.decoder_blocks
            )));
        }
        self.schedule.validate()?;
        if self.schedule.levels() != self.encoder_blocks {
            return Err(Error::invalid(format!(
                "schedule has {} levels for {} encoder blocks",
                self.schedule.levels(),
                self.encoder_blocks
            )));
        }
        if self.history == 0 {
            return Err(Error::invalid("history must be at least 1"));
        }
        if self.base_channels == 0 || self.c_mid == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.k == 0 || self.samples_per_face == 0 {
            return Err(Error::invalid("k and samples per face must be positive"));
        }
        if self.schedule.level_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid("relational radii must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_nine_blocks() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_blocks(), 9);
        assert_eq!((0..4).map(|l| c.width(l)).collect::<Vec<_>>(), vec![32, 64, 128, 256]);
        assert_eq!(c.raw_width(), 7);
        assert_eq!(ModelConfig::default().with_levels(1).total_blocks(), 3);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut c = ModelConfig::default();
        c.decoder_blocks = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.schedule = c.schedule.truncated(2);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.history = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::desk();
        let s = toml::to_string(&c).unwrap();
        assert!(s.contains("prediction = \"acc\""));
        let back: ModelConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!("vel".parse::<PredictionMode>().unwrap(), PredictionMode::Velocity);
        assert_eq!("mesh".parse::<InputMode>().unwrap(), InputMode::Mesh);
    }
}
