//! Behavior bundle: the learned artifact, stored as a JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Schema;
use crate::corrections::{CorrectionSchedule, KReport};
use crate::dmp::DmpPair;
use crate::error::{Error, Result};
use crate::pipeline::LearnConfig;
use crate::segmentation::SegmentKind;
use crate::surface::SurfaceModel;

pub const BUNDLE_FORMAT: &str = "csa-bundle";
pub const BUNDLE_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the demonstration log the bundle was learned from.
    pub demo_digest: String,
    pub task: String,
    pub num_demos: usize,
    pub capture_rate_hz: f64,
    pub config: LearnConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedSegment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    pub schema: Schema,
    pub dmp: DmpPair,
    pub schedule: CorrectionSchedule,
    pub k_report: KReport,
}

impl LearnedSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorBundle {
    pub format: String,
    pub version: String,
    pub provenance: Provenance,
    pub surface: Option<SurfaceModel>,
    /// Length of the warped reference timeline (samples).
    pub reference_length: usize,
    pub sample_period: f64,
    pub segments: Vec<LearnedSegment>,
    pub recommended_k: usize,
}

fn check_version(found: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().map(str::to_string);
    if found.split('.').count() != 3 || major(found) != major(BUNDLE_VERSION) {
        return Err(Error::Version {
            what: "bundle",
            found: found.to_string(),
            supported: BUNDLE_VERSION.to_string(),
        });
    }
    Ok(())
}

impl BehaviorBundle {
    pub fn validate(&self) -> Result<()> {
        if self.format != BUNDLE_FORMAT {
            return Err(Error::Bundle(format!("expected format `{BUNDLE_FORMAT}`, got `{}`", self.format)));
        }
        check_version(&self.version)?;
        if self.segments.is_empty() {
            return Err(Error::Bundle("bundle has no segments".into()));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::Bundle("sample period must be positive".into()));
        }
        let mut cursor = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start != cursor || seg.end <= seg.start {
                return Err(Error::Bundle(format!(
                    "segment {i} covers [{}, {}) but should start at {cursor}",
                    seg.start, seg.end
                )));
            }
            cursor = seg.end;
            seg.schema.validate()?;
            let m = seg.schema.len();
            for dmp in [&seg.dmp.forward, &seg.dmp.backward] {
                let dims_ok = dmp.start.len() == m
                    && dmp.goal.len() == m
                    && dmp.start_velocity.len() == m
                    && dmp.weights.len() == m
                    && dmp.weights.iter().all(|w| w.len() == dmp.params.n_basis);
                if !dims_ok {
                    return Err(Error::Bundle(format!("segment {i}: primitive does not match the schema")));
                }
                dmp.params.validate()?;
            }
            if seg.dmp.forward.direction == seg.dmp.backward.direction {
                return Err(Error::Bundle(format!("segment {i}: needs a forward and a backward primitive")));
            }
            if seg.schedule.frames.len() != seg.len()
                || seg.schedule.frames.iter().enumerate().any(|(k, f)| {
                    f.t != seg.start + k || f.mean.len() != m || f.scaled.iter().any(|s| s.len() != m)
                })
            {
                return Err(Error::Bundle(format!("segment {i}: correction schedule does not cover the segment")));
            }
        }
        if cursor != self.reference_length {
            return Err(Error::Bundle(format!(
                "segments end at {cursor}, timeline has {} samples",
                self.reference_length
            )));
        }
        if self.segments.iter().any(|s| s.kind == SegmentKind::InContact) && self.surface.is_none() {
            let projected = self
                .segments
                .iter()
                .filter(|s| s.kind == SegmentKind::InContact)
                .all(|s| s.schema.index_of("u").is_none());
            if !projected {
                return Err(Error::Bundle("in-contact segments in surface coordinates need a surface".into()));
            }
        }
        if let Some(s) = &self.surface {
            s.validate()?;
        }
        Ok(())
    }

    /// Digest of the serialized bundle, used to tie execution logs to it.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("bundle serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn parse_bundle(text: &str) -> Result<BehaviorBundle> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(BUNDLE_FORMAT) => {}
        other => {
            return Err(Error::Bundle(format!(
                "expected format `{BUNDLE_FORMAT}`, got {}",
                other.map_or("nothing".to_string(), |f| format!("`{f}`"))
            )))
        }
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Bundle("missing version".into()))?;
    check_version(version)?;
    let bundle: BehaviorBundle = serde_json::from_value(value)?;
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &BehaviorBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    bundle.validate()?;
    let text = serde_json::to_string_pretty(bundle)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<BehaviorBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bundle(&text)
}
