//! Force-threshold segmentation of the warped timeline into free-space and
//! in-contact segments.

use serde::{Deserialize, Serialize};

use crate::alignment::WarpedSet;
use crate::error::{Error, Result};
use crate::formats::{ChannelKind, Schema};
use crate::surface::{Point3, ProjectionOptions, SurfaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    FreeSpace,
    InContact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    /// Contact is declared where the filtered |f_n| exceeds this (N).
    pub threshold: f64,
    pub cutoff_hz: f64,
    pub min_segment_len: usize,
    /// Search radius (samples) for snapping boundaries to force edges.
    pub snap_radius: usize,
    /// Fail if no contact is found at all.
    pub require_contact: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            threshold: 1.0,
            cutoff_hz: 5.0,
            min_segment_len: 10,
            snap_radius: 10,
            require_contact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// First reference sample (inclusive).
    pub start: usize,
    /// One past the last reference sample.
    pub end: usize,
    pub schema: Schema,
    pub timestamps: Vec<f64>,
    /// `data[demo][sample][channel]`
    pub data: Vec<Vec<Vec<f64>>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn num_demos(&self) -> usize {
        self.data.len()
    }

    /// Cross-demonstration mean per sample.
    pub fn mean_trajectory(&self) -> Vec<Vec<f64>> {
        let n = self.data.len() as f64;
        (0..self.len())
            .map(|t| {
                (0..self.schema.len())
                    .map(|c| self.data.iter().map(|d| d[t][c]).sum::<f64>() / n)
                    .collect()
            })
            .collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Second-order Butterworth low-pass section.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth(cutoff_hz: f64, rate_hz: f64) -> Option<Biquad> {
        if !(cutoff_hz > 0.0) || cutoff_hz >= rate_hz / 2.0 {
            return None;
        }
        let k = (std::f64::consts::PI * cutoff_hz / rate_hz).tan();
        let s2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + s2 * k + k * k);
        let b0 = k * k * norm;
        Some(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - s2 * k + k * k) * norm],
        })
    }

    /// Transposed direct form II, state initialised at steady state for the
    /// first input so a constant signal passes unchanged.
    fn run(&self, x: impl Iterator<Item = f64>, first: f64) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut z2 = (b2 - a2) * first;
        let mut z1 = (1.0 - b0) * first;
        x.map(|xi| {
            let y = b0 * xi + z1;
            z1 = b1 * xi - a1 * y + z2;
            z2 = b2 * xi - a2 * y;
            y
        })
        .collect()
    }
}

/// Zero-phase (forward-backward) second-order Butterworth low-pass.
pub fn lowpass_filtfilt(signal: &[f64], cutoff_hz: f64, rate_hz: f64) -> Vec<f64> {
    let Some(bq) = Biquad::butterworth(cutoff_hz, rate_hz) else {
        return signal.to_vec();
    };
    if signal.is_empty() {
        return Vec::new();
    }
    let fwd = bq.run(signal.iter().copied(), signal[0]);
    let last = *fwd.last().expect("non-empty");
    let mut back = bq.run(fwd.iter().rev().copied(), last);
    back.reverse();
    back
}

/// DC group delay, in samples, of one causal pass of the second-order
/// Butterworth section.
pub fn group_delay_samples(cutoff_hz: f64, rate_hz: f64) -> f64 {
    std::f64::consts::SQRT_2 * rate_hz / (2.0 * std::f64::consts::PI * cutoff_hz)
}

/// Per-demonstration contact signals (filtered |f| above threshold).
pub fn contact_signals(warped: &WarpedSet, force_idx: usize, cfg: &SegmentationConfig) -> Vec<Vec<bool>> {
    warped
        .data
        .iter()
        .map(|demo| {
            let f: Vec<f64> = demo.iter().map(|row| row[force_idx].abs()).collect();
            lowpass_filtfilt(&f, cfg.cutoff_hz, warped.capture_rate_hz)
                .into_iter()
                .map(|x| x.abs() > cfg.threshold)
                .collect()
        })
        .collect()
}

/// Strict per-sample majority across demonstrations.
pub fn majority_vote(signals: &[Vec<bool>]) -> Vec<bool> {
    let n = signals.len();
    let len = signals.first().map_or(0, Vec::len);
    (0..len)
        .map(|t| 2 * signals.iter().filter(|s| s[t]).count() > n)
        .collect()
}

/// Runs of equal values as `(value, start, end)`.
fn runs(mask: &[bool]) -> Vec<(bool, usize, usize)> {
    let mut out: Vec<(bool, usize, usize)> = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == m => last.2 = i + 1,
            _ => out.push((m, i, i + 1)),
        }
    }
    out
}

/// Repeatedly absorbs the shortest run below `min_len` into its neighbours.
pub fn merge_short_runs(mask: &mut [bool], min_len: usize) {
    loop {
        let r = runs(mask);
        if r.len() <= 1 {
            return;
        }
        let shortest = r
            .iter()
            .enumerate()
            .filter(|(_, (_, s, e))| e - s < min_len)
            .min_by_key(|(i, (_, s, e))| (e - s, *i));
        let Some((_, &(value, s, e))) = shortest else {
            return;
        };
        mask[s..e].iter_mut().for_each(|m| *m = !value);
    }
}

/// Moves each interior boundary onto the force edge it came from: the peak
/// of the filtered mean-force gradient (rising into contact, falling out of
/// it) within `radius` samples. The filter is zero-phase, so that peak sits
/// on the edge itself rather than on the delayed threshold crossing. A
/// boundary stays put when the window holds no interior peak, and every
/// segment keeps at least `min_len` samples.
fn snap_boundaries(bounds: &mut [usize], rising: &[bool], smooth_force: &[f64], radius: usize, min_len: usize) {
    let total = smooth_force.len();
    let grad = |i: usize, up: bool| {
        let g = smooth_force[i] - smooth_force[i - 1];
        if up {
            g
        } else {
            -g
        }
    };
    for k in 1..bounds.len() - 1 {
        let b = bounds[k];
        let up = rising[k];
        let lo = b
            .saturating_sub(radius)
            .max(bounds[k - 1] + min_len.max(1))
            .max(2);
        let hi = (b + radius)
            .min(bounds[k + 1].saturating_sub(min_len.max(1)))
            .min(total.saturating_sub(2));
        let mut best: Option<(f64, usize)> = None;
        for i in lo..=hi {
            let g = grad(i, up);
            let peak = g > 0.0 && g >= grad(i - 1, up) && g >= grad(i + 1, up);
            let better = match best {
                None => true,
                Some((bg, bi)) => g > bg || (g == bg && i.abs_diff(b) < bi.abs_diff(b)),
            };
            if peak && better {
                best = Some((g, i));
            }
        }
        if let Some((_, i)) = best {
            bounds[k] = i;
        }
    }
}

/// Segment boundaries `[0, b1, ..., T]` and the kind of each segment.
pub fn segment_boundaries(
    warped: &WarpedSet,
    force_idx: usize,
    cfg: &SegmentationConfig,
) -> Result<(Vec<usize>, Vec<SegmentKind>)> {
    if !(cfg.threshold > 0.0) {
        return Err(Error::Segmentation(format!(
            "threshold must be positive, got {}",
            cfg.threshold
        )));
    }
    if warped.is_empty() {
        return Err(Error::Segmentation("empty warped set".into()));
    }
    let signals = contact_signals(warped, force_idx, cfg);
    let mut mask = majority_vote(&signals);
    merge_short_runs(&mut mask, cfg.min_segment_len);
    let r = runs(&mask);
    if cfg.require_contact && !r.iter().any(|(v, _, _)| *v) {
        return Err(Error::Segmentation("no contact detected".into()));
    }
    let mut bounds: Vec<usize> = r.iter().map(|(_, s, _)| *s).collect();
    bounds.push(mask.len());
    let n = warped.num_demos() as f64;
    let mean_force: Vec<f64> = (0..warped.len())
        .map(|t| warped.data.iter().map(|d| d[t][force_idx].abs()).sum::<f64>() / n)
        .collect();
    let smooth = lowpass_filtfilt(&mean_force, cfg.cutoff_hz, warped.capture_rate_hz);
    // boundary k opens run k
    let rising: Vec<bool> = r.iter().map(|(v, _, _)| *v).collect();
    snap_boundaries(&mut bounds, &rising, &smooth, cfg.snap_radius, cfg.min_segment_len);
    let kinds = r
        .iter()
        .map(|(v, _, _)| if *v { SegmentKind::InContact } else { SegmentKind::FreeSpace })
        .collect();
    Ok((bounds, kinds))
}

fn free_space_channels(schema: &Schema) -> Vec<usize> {
    schema
        .channels
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            matches!(
                c.kind,
                ChannelKind::PositionCartesian
                    | ChannelKind::QuaternionComponent
                    | ChannelKind::ToolSpeed
                    | ChannelKind::ExecutionRate
            )
        })
        .map(|(i, _)| i)
        .collect()
}

/// Splits the warped set at the force boundaries. Free-space segments are
/// reduced to their position-control channels; in-contact segments keep every
/// warped channel until [`project_to_surface_schema`] re-expresses them.
pub fn segment(warped: &WarpedSet, force_channel: &str, cfg: &SegmentationConfig) -> Result<Vec<Segment>> {
    let force_idx = warped
        .schema
        .index_of(force_channel)
        .ok_or_else(|| Error::Segmentation(format!("force channel `{force_channel}` missing")))?;
    let (bounds, kinds) = segment_boundaries(warped, force_idx, cfg)?;
    let free_idx = free_space_channels(&warped.schema);
    let all_idx: Vec<usize> = (0..warped.schema.len()).collect();
    Ok(bounds
        .windows(2)
        .zip(kinds)
        .map(|(w, kind)| {
            let (start, end) = (w[0], w[1]);
            let idx = match kind {
                SegmentKind::FreeSpace => &free_idx,
                SegmentKind::InContact => &all_idx,
            };
            Segment {
                kind,
                start,
                end,
                schema: Schema {
                    channels: idx.iter().map(|&i| warped.schema.channels[i].clone()).collect(),
                },
                timestamps: warped.timestamps[start..end].to_vec(),
                data: warped
                    .data
                    .iter()
                    .map(|demo| {
                        demo[start..end]
                            .iter()
                            .map(|row| idx.iter().map(|&i| row[i]).collect())
                            .collect()
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Tool z-axis of the unit quaternion `(x, y, z, w)`.
pub fn tool_axis(q: [f64; 4]) -> Point3 {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [x, y, z, w] = q.map(|c| c / norm);
    Point3::new(2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y))
}

/// Tilt of `axis` relative to the surface normal, as rotations about the
/// surface u and v axes.
pub fn surface_angles(axis: &Point3, frame: &crate::surface::SurfaceFrame) -> (f64, f64) {
    let (n, au, av) = (frame.normal(), frame.axis_u(), frame.axis_v());
    let tn = axis.dot(&n);
    ((-axis.dot(&av)).atan2(tn), axis.dot(&au).atan2(tn))
}

#[derive(Debug, Clone, Copy)]
pub struct SurfaceProjectionConfig {
    /// Largest admissible distance (m) between a sample and the surface.
    pub max_distance: f64,
    pub projection: ProjectionOptions,
}

impl Default for SurfaceProjectionConfig {
    fn default() -> Self {
        SurfaceProjectionConfig {
            max_distance: 0.05,
            projection: ProjectionOptions::default(),
        }
    }
}

/// Re-expresses an in-contact segment in surface coordinates
/// `(u, v, f_n, v_tool, dn, theta_u, theta_v)`.
pub fn project_to_surface_schema(
    segment: &Segment,
    surface: &SurfaceModel,
    cfg: &SurfaceProjectionConfig,
) -> Result<Segment> {
    if segment.kind != SegmentKind::InContact {
        return Err(Error::Segmentation("only in-contact segments can be projected".into()));
    }
    let src = &segment.schema;
    let pos = src.indices_of_kind(ChannelKind::PositionCartesian);
    if pos.len() != 3 {
        return Err(Error::Segmentation("in-contact segment needs x, y, z channels".into()));
    }
    let quat = src.quaternion_groups().first().copied();
    let need = |kind: ChannelKind| {
        src.first_of_kind(kind)
            .ok_or_else(|| Error::Segmentation(format!("in-contact segment lacks a {kind} channel")))
    };
    let force = need(ChannelKind::ForceNormal)?;
    let speed = need(ChannelKind::ToolSpeed)?;
    let rate = need(ChannelKind::ExecutionRate)?;

    let mut schema = Schema::in_contact();
    for (dst, from) in [(2usize, force), (3, speed), (4, rate)] {
        schema.channels[dst].normalization_range = src.channels[from].normalization_range;
        schema.channels[dst].unit = src.channels[from].unit.clone();
    }

    let mut data = Vec::with_capacity(segment.num_demos());
    for demo in &segment.data {
        let mut seed = (0.5, 0.5);
        let mut rows = Vec::with_capacity(demo.len());
        for row in demo {
            let p = Point3::new(row[pos[0]], row[pos[1]], row[pos[2]]);
            let pr = surface.project_with(&p, seed, &cfg.projection)?;
            if pr.distance > cfg.max_distance {
                return Err(Error::Projection {
                    point: [p.x, p.y, p.z],
                    distance: pr.distance,
                });
            }
            seed = (pr.u, pr.v);
            let (theta_u, theta_v) = match quat {
                Some(q) => {
                    let frame = surface.frame(pr.u, pr.v)?;
                    let axis = tool_axis([row[q], row[q + 1], row[q + 2], row[q + 3]]);
                    surface_angles(&axis, &frame)
                }
                None => (0.0, 0.0),
            };
            rows.push(vec![
                pr.u,
                pr.v,
                row[force].max(0.0),
                row[speed],
                row[rate],
                theta_u,
                theta_v,
            ]);
        }
        data.push(rows);
    }
    Ok(Segment {
        kind: SegmentKind::InContact,
        start: segment.start,
        end: segment.end,
        schema,
        timestamps: segment.timestamps.clone(),
        data,
    })
}
