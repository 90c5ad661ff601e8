//! Per-sample principal components of the demonstration spread and the
//! scaled correction directions derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{ChannelKind, Schema};
use crate::segmentation::Segment;

/// Number of components stored per frame (the 3-DOF input needs three).
pub const STORED_COMPONENTS: usize = 3;

/// Frames whose leading singular value falls below this carry no correction.
pub const DEGENERATE_SIGMA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFrame {
    /// Reference sample index on the warped timeline.
    pub t: usize,
    /// Cross-demonstration mean (raw units).
    pub mean: Vec<f64>,
    /// Unit principal directions in normalized state space, descending
    /// variance.
    pub components: Vec<Vec<f64>>,
    /// All singular values of the normalized, mean-removed sample matrix.
    pub singular_values: Vec<f64>,
    /// `sigma_i^2 / sum(sigma^2)` for every singular value.
    pub explained_fraction: Vec<f64>,
    /// `a_k * 3 sigma_k / sqrt(N)` expressed in raw channel units.
    pub scaled: Vec<Vec<f64>>,
    /// No usable variance at this sample; components are carried over and
    /// the scaling is zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSchedule {
    pub num_demos: usize,
    pub ranges: Vec<f64>,
    /// Time constant (s) of the smoothing applied to `scaled`; 0 when raw.
    pub smoothing_time_constant: f64,
    pub frames: Vec<CorrectionFrame>,
}

impl CorrectionSchedule {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(m: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    e[i] = 1.0;
    e
}

/// Principal decomposition of one frame. `rows` are the normalized,
/// mean-removed samples (one per demonstration). Returns the singular values
/// (descending) and matching right singular vectors, `m` of each.
pub fn frame_svd(rows: &[Vec<f64>], m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    // Zero rows up to a square matrix keep every right singular vector
    // available when N < m without changing the decomposition.
    let r = rows.len().max(m);
    let x = faer::Mat::<f64>::from_fn(r, m, |i, j| rows.get(i).map_or(0.0, |row| row[j]));
    // nalgebra's bidiagonal SVD loses energy when column scales differ by
    // many orders of magnitude (as with near-constant channels), so this
    // goes through faer.
    let svd = faer::linalg::solvers::Svd::new(x.as_ref()).expect("SVD of a finite matrix converges");
    let s = svd.S().column_vector();
    let v = svd.V();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let sigma = order.iter().map(|&i| s[i]).collect();
    let vecs = order.iter().map(|&i| (0..m).map(|j| v[(j, i)]).collect()).collect();
    (sigma, vecs)
}

/// Runs per-sample PCA over all demonstrations of `segment`.
pub fn extract(segment: &Segment) -> Result<CorrectionSchedule> {
    let n = segment.num_demos();
    if n < 2 {
        return Err(Error::Corrections(format!("need at least 2 demonstrations, got {n}")));
    }
    let schema = &segment.schema;
    let m = schema.len();
    let ranges = schema.ranges();
    if ranges.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Corrections("normalization ranges must be positive".into()));
    }
    let kept = STORED_COMPONENTS.min(m);
    let scale = 3.0 / (n as f64).sqrt();
    let mut frames: Vec<CorrectionFrame> = Vec::with_capacity(segment.len());
    for t in 0..segment.len() {
        let mean: Vec<f64> = (0..m)
            .map(|c| segment.data.iter().map(|d| d[t][c]).sum::<f64>() / n as f64)
            .collect();
        let rows: Vec<Vec<f64>> = segment
            .data
            .iter()
            .map(|d| (0..m).map(|c| (d[t][c] - mean[c]) / ranges[c]).collect())
            .collect();
        let (sigma, mut vecs) = frame_svd(&rows, m);
        let energy: f64 = sigma.iter().map(|s| s * s).sum();
        let explained = sigma
            .iter()
            .map(|s| if energy > 0.0 { s * s / energy } else { 0.0 })
            .collect();
        let degenerate = sigma[0] < DEGENERATE_SIGMA;
        let components: Vec<Vec<f64>> = if degenerate {
            match frames.last() {
                Some(prev) => prev.components.clone(),
                None => (0..kept).map(|i| unit(m, i)).collect(),
            }
        } else {
            vecs.truncate(kept);
            if let Some(prev) = frames.last() {
                for (a, p) in vecs.iter_mut().zip(&prev.components) {
                    if dot(a, p) < 0.0 {
                        a.iter_mut().for_each(|x| *x = -*x);
                    }
                }
            }
            vecs
        };
        frames.push(CorrectionFrame {
            t: segment.start + t,
            mean,
            scaled: Vec::new(),
            components,
            singular_values: sigma,
            explained_fraction: explained,
            degenerate,
        });
    }
    orient_tracks(&mut frames, schema);
    for f in &mut frames {
        f.scaled = f
            .components
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let s = if f.degenerate { 0.0 } else { f.singular_values[k] };
                a.iter().zip(&ranges).map(|(ai, r)| ai * r * scale * s).collect()
            })
            .collect();
    }
    Ok(CorrectionSchedule {
        num_demos: n,
        ranges,
        smoothing_time_constant: 0.0,
        frames,
    })
}

/// Flips whole component tracks so the force coefficient is positive on
/// average (or, without a force channel, the coefficient largest in mean
/// magnitude). Flipping an entire track keeps frame-to-frame continuity.
fn orient_tracks(frames: &mut [CorrectionFrame], schema: &Schema) {
    let Some(first) = frames.first() else { return };
    let (kept, m) = (first.components.len(), schema.len());
    let force = schema.first_of_kind(ChannelKind::ForceNormal);
    for k in 0..kept {
        let live = frames.iter().filter(|f| !f.degenerate);
        let count = live.clone().count().max(1) as f64;
        let mean: Vec<f64> = (0..m)
            .map(|c| live.clone().map(|f| f.components[k][c]).sum::<f64>() / count)
            .collect();
        let pivot = match force {
            Some(fi) if mean[fi].abs() > 1e-12 => fi,
            _ => (0..m)
                .max_by(|&a, &b| mean[a].abs().total_cmp(&mean[b].abs()).then(b.cmp(&a)))
                .expect("non-empty schema"),
        };
        if mean[pivot] < 0.0 {
            for f in frames.iter_mut() {
                f.components[k].iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
}

/// First-order smoothing of the scaled corrections across frames, with the
/// frame spacing `dt` seconds. `time_constant == 0` leaves the schedule
/// untouched.
pub fn smooth_schedule(schedule: &CorrectionSchedule, time_constant: f64, dt: f64) -> Result<CorrectionSchedule> {
    if !(time_constant >= 0.0) || !(dt > 0.0) {
        return Err(Error::Corrections(format!(
            "invalid smoothing time constant {time_constant} or frame period {dt}"
        )));
    }
    let mut out = schedule.clone();
    out.smoothing_time_constant = time_constant;
    if time_constant == 0.0 {
        return Ok(out);
    }
    let alpha = 1.0 - (-dt / time_constant).exp();
    for i in 1..out.frames.len() {
        let (prev, cur) = out.frames.split_at_mut(i);
        let prev = &prev[i - 1];
        for (ys, yp) in cur[0].scaled.iter_mut().zip(&prev.scaled) {
            for (y, p) in ys.iter_mut().zip(yp) {
                *y = p + alpha * (*y - p);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub recommended: usize,
    pub threshold: f64,
    /// Mean explained fraction of each stored component over the
    /// non-degenerate frames.
    pub mean_explained: Vec<f64>,
    /// Mean total normalized variance per frame.
    pub mean_total_variance: f64,
    pub degenerate_frames: usize,
    pub warnings: Vec<String>,
}

pub const DEFAULT_K_THRESHOLD: f64 = 0.85;

/// Recommends a 1-DOF input when the first component dominates, 3-DOF
/// otherwise.
pub fn choose_k(schedule: &CorrectionSchedule, threshold: f64) -> KReport {
    let live: Vec<&CorrectionFrame> = schedule.frames.iter().filter(|f| !f.degenerate).collect();
    let kept = schedule.frames.first().map_or(0, |f| f.components.len());
    let mut warnings = Vec::new();
    let degenerate_frames = schedule.frames.len() - live.len();
    let mean_explained: Vec<f64> = (0..kept)
        .map(|k| {
            if live.is_empty() {
                0.0
            } else {
                live.iter().map(|f| f.explained_fraction[k]).sum::<f64>() / live.len() as f64
            }
        })
        .collect();
    let n = schedule.num_demos as f64;
    let mean_total_variance = if schedule.frames.is_empty() {
        0.0
    } else {
        schedule
            .frames
            .iter()
            .map(|f| f.singular_values.iter().map(|s| s * s).sum::<f64>() / n)
            .sum::<f64>()
            / schedule.frames.len() as f64
    };
    let recommended = if live.is_empty() {
        warnings.push("no demonstration variance: corrections have zero magnitude".to_string());
        1
    } else if mean_explained[0] >= threshold {
        1
    } else {
        3
    };
    if degenerate_frames > 0 && !live.is_empty() {
        warnings.push(format!("{degenerate_frames} frame(s) without variance carry no correction"));
    }
    KReport {
        recommended,
        threshold,
        mean_explained,
        mean_total_variance,
        degenerate_frames,
        warnings,
    }
}
