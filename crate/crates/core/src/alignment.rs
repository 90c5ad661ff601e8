//! Dynamic time warping of demonstrations onto a common reference timeline.

use serde::{Deserialize, Serialize};

use crate::formats::{ChannelKind, ChannelSchema, DemoSet, Schema};
use crate::error::{Error, Result};

/// Name of the derived execution-rate channel appended to warped data.
pub const RATE_CHANNEL: &str = "dn";
const RATE_MIN: f64 = 0.1;
const RATE_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Matched index pairs `(i, j)` from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Classic DTW with steps {(1,0),(0,1),(1,1)} and no window. Backtracking
/// prefers the diagonal step on ties, then the step that advances `a`.
pub fn dtw<T, F>(a: &[T], b: &[T], dist: F) -> Result<DtwResult>
where
    F: Fn(&T, &T) -> f64,
{
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::Alignment("cannot align an empty trajectory".into()));
    }
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let d = dist(&a[i], &b[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[at(i, j)] = best + d;
        }
    }

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = acc[at(i - 1, j - 1)];
            let up = acc[at(i - 1, j)];
            let left = acc[at(i, j - 1)];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        path,
        cost: acc[at(n - 1, m - 1)],
    })
}

/// Demonstrations resampled onto the reference timeline, with the execution
/// rate channel appended as the last channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpedSet {
    pub schema: Schema,
    /// Reference timestamps, one per aligned sample.
    pub timestamps: Vec<f64>,
    pub capture_rate_hz: f64,
    /// `data[demo][sample][channel]`
    pub data: Vec<Vec<Vec<f64>>>,
}

impl WarpedSet {
    pub fn num_demos(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Mean sample period of the reference timeline.
    pub fn sample_period(&self) -> f64 {
        if self.timestamps.len() < 2 {
            return 1.0 / self.capture_rate_hz;
        }
        (self.timestamps[self.timestamps.len() - 1] - self.timestamps[0])
            / (self.timestamps.len() - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub reference_index: usize,
    /// Per demo, the DTW path as `(reference sample, demo sample)` pairs.
    pub warp_paths: Vec<Vec<(usize, usize)>>,
    pub costs: Vec<f64>,
    /// Per demo, the (fractional) demo sample matched to each reference sample.
    pub index_maps: Vec<Vec<f64>>,
    /// Per demo, local warp slope for each reference sample.
    pub rate_channel: Vec<Vec<f64>>,
    pub warped_set: WarpedSet,
}

/// Index of the demonstration with the median length (lower median, ties by
/// position in the set).
pub fn median_reference(demos: &DemoSet) -> usize {
    let mut order: Vec<usize> = (0..demos.len()).collect();
    order.sort_by_key(|&d| (demos.demos[d].len(), d));
    order[(order.len() - 1) / 2]
}

fn resolve_distance_channels(schema: &Schema, names: &[&str]) -> Result<Vec<usize>> {
    if names.is_empty() {
        let idx = schema.indices_of_kind(ChannelKind::PositionCartesian);
        if idx.is_empty() {
            return Err(Error::Alignment(
                "schema has no position-cartesian channels to align on".into(),
            ));
        }
        return Ok(idx);
    }
    names
        .iter()
        .map(|n| {
            schema
                .index_of(n)
                .ok_or_else(|| Error::Alignment(format!("distance channel `{n}` missing")))
        })
        .collect()
}

/// Aligns every demonstration to the median-length reference using the
/// Euclidean distance over `distance_channels` (default: the Cartesian
/// position channels).
pub fn align(demos: &DemoSet, distance_channels: &[&str]) -> Result<WarpResult> {
    demos.validate()?;
    let channels = resolve_distance_channels(&demos.schema, distance_channels)?;
    let reference_index = median_reference(demos);
    let project = |s: &Vec<f64>| channels.iter().map(|&c| s[c]).collect::<Vec<f64>>();
    let reference: Vec<Vec<f64>> = demos.demos[reference_index].samples.iter().map(project).collect();

    let mut warp_paths = Vec::with_capacity(demos.len());
    let mut costs = Vec::with_capacity(demos.len());
    let mut index_maps = Vec::with_capacity(demos.len());
    let mut rate_channel = Vec::with_capacity(demos.len());
    for demo in &demos.demos {
        let seq: Vec<Vec<f64>> = demo.samples.iter().map(project).collect();
        let res = dtw(&reference, &seq, |p, q| euclidean(p, q))?;
        let map = index_map(&res.path, reference.len());
        rate_channel.push(warp_slope(&map));
        index_maps.push(map);
        costs.push(res.cost);
        warp_paths.push(res.path);
    }

    let mut result = WarpResult {
        reference_index,
        warp_paths,
        costs,
        index_maps,
        rate_channel,
        warped_set: WarpedSet {
            schema: Schema::default(),
            timestamps: Vec::new(),
            capture_rate_hz: demos.capture_rate_hz,
            data: Vec::new(),
        },
    };
    result.warped_set = resample_to_reference(demos, &result);
    Ok(result)
}

pub fn euclidean(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Mean matched demo index for every reference index.
pub fn index_map(path: &[(usize, usize)], reference_len: usize) -> Vec<f64> {
    let mut sum = vec![0.0; reference_len];
    let mut count = vec![0usize; reference_len];
    for &(i, j) in path {
        sum[i] += j as f64;
        count[i] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

/// Central finite difference of the index map, clamped to [0.1, 10].
pub fn warp_slope(map: &[f64]) -> Vec<f64> {
    let n = map.len();
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|i| {
            let slope = if i == 0 {
                map[1] - map[0]
            } else if i == n - 1 {
                map[n - 1] - map[n - 2]
            } else {
                (map[i + 1] - map[i - 1]) / 2.0
            };
            slope.clamp(RATE_MIN, RATE_MAX)
        })
        .collect()
}

/// Resamples each demonstration at its warped indices (linear interpolation
/// between neighbouring samples) and appends the rate channel.
pub fn resample_to_reference(demos: &DemoSet, warp: &WarpResult) -> WarpedSet {
    let reference = &demos.demos[warp.reference_index];
    let mut channels = demos.schema.channels.clone();
    channels.push(ChannelSchema::new(RATE_CHANNEL, "1", ChannelKind::ExecutionRate));

    let data = demos
        .demos
        .iter()
        .zip(warp.index_maps.iter().zip(&warp.rate_channel))
        .map(|(demo, (map, rate))| {
            map.iter()
                .zip(rate)
                .map(|(&f, &dn)| {
                    let lo = f.floor() as usize;
                    let hi = (lo + 1).min(demo.len() - 1);
                    let w = f - lo as f64;
                    let mut row: Vec<f64> = demo.samples[lo]
                        .iter()
                        .zip(&demo.samples[hi])
                        .map(|(a, b)| if w == 0.0 { *a } else { a + w * (b - a) })
                        .collect();
                    row.push(dn);
                    row
                })
                .collect()
        })
        .collect();

    WarpedSet {
        schema: Schema { channels },
        timestamps: reference.timestamps.clone(),
        capture_rate_hz: demos.capture_rate_hz,
        data,
    }
}
