//! Channel schemas, demonstration sets and the on-disk artifacts built from them.

mod bundle;
mod demo_log;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use bundle::{
    load_bundle, parse_bundle, save_bundle, BehaviorBundle, LearnedSegment, Provenance,
    BUNDLE_FORMAT, BUNDLE_VERSION,
};
pub use demo_log::{load_demo_set, parse_demo_log, save_demo_set, write_demo_log, DEMO_LOG_MAGIC};

/// Physical role of a state channel. Determines the default normalization
/// range and how the channel is treated by segmentation and input mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    PositionCartesian,
    QuaternionComponent,
    SurfaceCoordinate,
    ForceNormal,
    ToolSpeed,
    ExecutionRate,
    SurfaceAngle,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 7] = [
        ChannelKind::PositionCartesian,
        ChannelKind::QuaternionComponent,
        ChannelKind::SurfaceCoordinate,
        ChannelKind::ForceNormal,
        ChannelKind::ToolSpeed,
        ChannelKind::ExecutionRate,
        ChannelKind::SurfaceAngle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::PositionCartesian => "position-cartesian",
            ChannelKind::QuaternionComponent => "quaternion-component",
            ChannelKind::SurfaceCoordinate => "surface-coordinate",
            ChannelKind::ForceNormal => "force-normal",
            ChannelKind::ToolSpeed => "tool-speed",
            ChannelKind::ExecutionRate => "execution-rate",
            ChannelKind::SurfaceAngle => "surface-angle",
        }
    }

    /// Expected range used to normalize the channel before per-frame PCA.
    pub fn default_range(self) -> f64 {
        match self {
            ChannelKind::PositionCartesian => 1.0,
            ChannelKind::QuaternionComponent => 1.0,
            ChannelKind::SurfaceCoordinate => 1.0,
            ChannelKind::ForceNormal => 20.0,
            ChannelKind::ToolSpeed => 5.0,
            ChannelKind::ExecutionRate => 2.0,
            ChannelKind::SurfaceAngle => 1.57,
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ChannelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown channel kind `{s}`"))
    }
}

/// Spatial correspondence of a channel. World axes for Cartesian channels,
/// surface tangent directions for surface coordinates and the pressing
/// direction for the normal force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpatialAxis {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "u")]
    SurfaceU,
    #[serde(rename = "v")]
    SurfaceV,
    #[serde(rename = "n")]
    SurfaceNormal,
}

impl SpatialAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SpatialAxis::X => "x",
            SpatialAxis::Y => "y",
            SpatialAxis::Z => "z",
            SpatialAxis::SurfaceU => "u",
            SpatialAxis::SurfaceV => "v",
            SpatialAxis::SurfaceNormal => "n",
        }
    }
}

impl FromStr for SpatialAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "x" => Ok(SpatialAxis::X),
            "y" => Ok(SpatialAxis::Y),
            "z" => Ok(SpatialAxis::Z),
            "u" => Ok(SpatialAxis::SurfaceU),
            "v" => Ok(SpatialAxis::SurfaceV),
            "n" => Ok(SpatialAxis::SurfaceNormal),
            other => Err(format!("unknown spatial axis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub name: String,
    pub unit: String,
    pub kind: ChannelKind,
    pub normalization_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_axis: Option<SpatialAxis>,
}

impl ChannelSchema {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, kind: ChannelKind) -> Self {
        ChannelSchema {
            name: name.into(),
            unit: unit.into(),
            kind,
            normalization_range: kind.default_range(),
            spatial_axis: None,
        }
    }

    pub fn with_axis(mut self, axis: SpatialAxis) -> Self {
        self.spatial_axis = Some(axis);
        self
    }

    pub fn with_range(mut self, range: f64) -> Self {
        self.normalization_range = range;
        self
    }
}

/// Ordered list of channels describing one state vector layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Schema {
    pub channels: Vec<ChannelSchema>,
}

impl Schema {
    pub fn new(channels: Vec<ChannelSchema>) -> Result<Self> {
        let schema = Schema { channels };
        schema.validate()?;
        Ok(schema)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for ch in &self.channels {
            if ch.name.is_empty() || ch.name.chars().any(char::is_whitespace) {
                return Err(Error::Schema(format!("invalid channel name `{}`", ch.name)));
            }
            if !seen.insert(ch.name.as_str()) {
                return Err(Error::Schema(format!("duplicate channel `{}`", ch.name)));
            }
            if !(ch.normalization_range > 0.0 && ch.normalization_range.is_finite()) {
                return Err(Error::Schema(format!(
                    "channel `{}` has non-positive normalization range {}",
                    ch.name, ch.normalization_range
                )));
            }
        }
        // quaternion components must come as contiguous groups of four
        let mut i = 0;
        while i < self.channels.len() {
            if self.channels[i].kind == ChannelKind::QuaternionComponent {
                let run = self.channels[i..]
                    .iter()
                    .take_while(|c| c.kind == ChannelKind::QuaternionComponent)
                    .count();
                if run % 4 != 0 {
                    return Err(Error::Schema(format!(
                        "quaternion group starting at `{}` has {run} components",
                        self.channels[i].name
                    )));
                }
                i += run;
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn indices_of_kind(&self, kind: ChannelKind) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn first_of_kind(&self, kind: ChannelKind) -> Option<usize> {
        self.channels.iter().position(|c| c.kind == kind)
    }

    pub fn index_of_axis(&self, axis: SpatialAxis) -> Option<usize> {
        self.channels
            .iter()
            .position(|c| c.spatial_axis == Some(axis))
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.normalization_range).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    /// Start indices of each complete quaternion group.
    pub fn quaternion_groups(&self) -> Vec<usize> {
        let idx = self.indices_of_kind(ChannelKind::QuaternionComponent);
        idx.chunks_exact(4).map(|c| c[0]).collect()
    }

    pub fn check_vector(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Schema(format!(
                "vector has {} values but schema declares {} channels",
                values.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Schema used for free-space (position controlled) segments.
    pub fn free_space() -> Schema {
        Schema {
            channels: vec![
                ChannelSchema::new("x", "m", ChannelKind::PositionCartesian).with_axis(SpatialAxis::X),
                ChannelSchema::new("y", "m", ChannelKind::PositionCartesian).with_axis(SpatialAxis::Y),
                ChannelSchema::new("z", "m", ChannelKind::PositionCartesian).with_axis(SpatialAxis::Z),
                ChannelSchema::new("qx", "1", ChannelKind::QuaternionComponent),
                ChannelSchema::new("qy", "1", ChannelKind::QuaternionComponent),
                ChannelSchema::new("qz", "1", ChannelKind::QuaternionComponent),
                ChannelSchema::new("qw", "1", ChannelKind::QuaternionComponent),
                ChannelSchema::new("v_tool", "V", ChannelKind::ToolSpeed),
                ChannelSchema::new("dn", "1", ChannelKind::ExecutionRate),
            ],
        }
    }

    /// Schema used for in-contact (hybrid controlled) segments.
    pub fn in_contact() -> Schema {
        Schema {
            channels: vec![
                ChannelSchema::new("u", "1", ChannelKind::SurfaceCoordinate)
                    .with_axis(SpatialAxis::SurfaceU),
                ChannelSchema::new("v", "1", ChannelKind::SurfaceCoordinate)
                    .with_axis(SpatialAxis::SurfaceV),
                ChannelSchema::new("f_n", "N", ChannelKind::ForceNormal)
                    .with_axis(SpatialAxis::SurfaceNormal),
                ChannelSchema::new("v_tool", "V", ChannelKind::ToolSpeed),
                ChannelSchema::new("dn", "1", ChannelKind::ExecutionRate),
                ChannelSchema::new("theta_u", "rad", ChannelKind::SurfaceAngle),
                ChannelSchema::new("theta_v", "rad", ChannelKind::SurfaceAngle),
            ],
        }
    }

    /// Raw capture layout: pose, normal contact force and tool speed.
    pub fn raw_capture() -> Schema {
        let mut channels: Vec<_> = Schema::free_space().channels.into_iter().take(7).collect();
        channels.push(ChannelSchema::new("f_n", "N", ChannelKind::ForceNormal));
        channels.push(ChannelSchema::new("v_tool", "V", ChannelKind::ToolSpeed));
        Schema { channels }
    }
}

/// One captured demonstration: time stamps and one state vector per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub timestamps: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

impl Demo {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, index: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[index]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub task: String,
    pub capture_rate_hz: f64,
    pub schema: Schema,
    pub demos: Vec<Demo>,
}

impl DemoSet {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.demos.len() < 2 {
            return Err(Error::DemoSet(format!(
                "need at least 2 demonstrations, found {}",
                self.demos.len()
            )));
        }
        if !(self.capture_rate_hz > 0.0 && self.capture_rate_hz.is_finite()) {
            return Err(Error::DemoSet(format!(
                "capture rate must be positive, got {}",
                self.capture_rate_hz
            )));
        }
        for (d, demo) in self.demos.iter().enumerate() {
            if demo.is_empty() {
                return Err(Error::DemoSet(format!("demonstration {d} is empty")));
            }
            if demo.timestamps.len() != demo.samples.len() {
                return Err(Error::DemoSet(format!(
                    "demonstration {d} has {} timestamps for {} samples",
                    demo.timestamps.len(),
                    demo.samples.len()
                )));
            }
            if let Some(i) = demo.timestamps.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::DemoSet(format!(
                    "demonstration {d}: timestamps not strictly increasing at sample {}",
                    i + 1
                )));
            }
            for (i, s) in demo.samples.iter().enumerate() {
                self.schema.check_vector(s).map_err(|e| {
                    Error::DemoSet(format!("demonstration {d}, sample {i}: {e}"))
                })?;
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DemoSet(format!(
                        "demonstration {d}, sample {i}: non-finite value"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// SHA-256 over the canonical demo-log serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(write_demo_log(self).as_bytes());
        hex::encode(hasher.finalize())
    }
}
