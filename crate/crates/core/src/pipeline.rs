//! The learning pipeline: align, segment, then fit primitives and
//! correction schedules per segment.

use serde::{Deserialize, Serialize};

use crate::alignment::{align, WarpResult};
use crate::corrections::{choose_k, extract, smooth_schedule, DEFAULT_K_THRESHOLD};
use crate::dmp::{learn as learn_dmp, DmpParams};
use crate::error::{Error, Result};
use crate::formats::{BehaviorBundle, DemoSet, LearnedSegment, Provenance, BUNDLE_FORMAT, BUNDLE_VERSION};
use crate::segmentation::{
    project_to_surface_schema, segment, Segment, SegmentKind, SegmentationConfig, SurfaceProjectionConfig,
};
use crate::surface::{ProjectionOptions, SurfaceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    /// Channels compared by the alignment; empty selects the Cartesian
    /// position channels.
    pub distance_channels: Vec<String>,
    pub force_channel: String,
    pub segmentation: SegmentationConfig,
    /// Largest distance (m) between an in-contact sample and the surface.
    pub max_surface_distance: f64,
    pub dmp: DmpParams,
    /// Smoothing of the scaled corrections (s); 0 disables it.
    pub smoothing_time_constant: f64,
    pub k_threshold: f64,
    /// Segments whose mean variance is below this share of the largest
    /// segment's do not influence the recommended input DOF.
    pub negligible_variance: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            distance_channels: Vec::new(),
            force_channel: "f_n".into(),
            segmentation: SegmentationConfig::default(),
            max_surface_distance: 0.05,
            dmp: DmpParams::default(),
            smoothing_time_constant: 0.1,
            k_threshold: DEFAULT_K_THRESHOLD,
            negligible_variance: 0.01,
        }
    }
}

/// Intermediate results, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub warp: WarpResult,
    /// Segments in their control schema (in-contact ones projected when a
    /// surface was given).
    pub segments: Vec<Segment>,
    pub bundle: BehaviorBundle,
}

pub fn learn(demos: &DemoSet, surface: Option<&SurfaceModel>, cfg: &LearnConfig) -> Result<BehaviorBundle> {
    learn_detailed(demos, surface, cfg).map(|o| o.bundle)
}

pub fn learn_detailed(demos: &DemoSet, surface: Option<&SurfaceModel>, cfg: &LearnConfig) -> Result<LearnOutcome> {
    demos.validate()?;
    if !(cfg.smoothing_time_constant >= 0.0) {
        return Err(Error::Config("smoothing_time_constant must be non-negative".into()));
    }
    let channels: Vec<&str> = cfg.distance_channels.iter().map(String::as_str).collect();
    let warp = align(demos, &channels)?;
    let warped = &warp.warped_set;
    let dt = warped.sample_period();
    let raw_segments = segment(warped, &cfg.force_channel, &cfg.segmentation)?;
    let projection = SurfaceProjectionConfig {
        max_distance: cfg.max_surface_distance,
        projection: ProjectionOptions::default(),
    };
    let segments = raw_segments
        .into_iter()
        .map(|s| match (s.kind, surface) {
            (SegmentKind::InContact, Some(surf)) => project_to_surface_schema(&s, surf, &projection),
            _ => Ok(s),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut learned = Vec::with_capacity(segments.len());
    for seg in &segments {
        let mean = seg.mean_trajectory();
        let dmp = learn_dmp(&mean, dt, &cfg.dmp)?;
        let raw = extract(seg)?;
        let schedule = smooth_schedule(&raw, cfg.smoothing_time_constant, dt)?;
        let k_report = choose_k(&schedule, cfg.k_threshold);
        learned.push(LearnedSegment {
            kind: seg.kind,
            start: seg.start,
            end: seg.end,
            schema: seg.schema.clone(),
            dmp,
            schedule,
            k_report,
        });
    }
    let recommended_k = recommend_k(&learned, cfg.negligible_variance);
    let bundle = BehaviorBundle {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION.into(),
        provenance: Provenance {
            demo_digest: demos.digest(),
            task: demos.task.clone(),
            num_demos: demos.len(),
            capture_rate_hz: demos.capture_rate_hz,
            config: cfg.clone(),
        },
        surface: surface.cloned(),
        reference_length: warped.len(),
        sample_period: dt,
        segments: learned,
        recommended_k,
    };
    bundle.validate()?;
    Ok(LearnOutcome { warp, segments, bundle })
}

/// Largest per-segment recommendation among segments carrying a
/// non-negligible share of the variance.
pub fn recommend_k(segments: &[LearnedSegment], negligible: f64) -> usize {
    let top = segments
        .iter()
        .map(|s| s.k_report.mean_total_variance)
        .fold(0.0, f64::max);
    segments
        .iter()
        .filter(|s| top > 0.0 && s.k_report.mean_total_variance >= negligible * top)
        .map(|s| s.k_report.recommended)
        .max()
        .unwrap_or(1)
}
