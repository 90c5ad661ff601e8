//! Principal-component report for a bundle, optionally checked against the
//! structure planted by `synth`.

use csa_core::demo_synth::GroundTruth;
use csa_core::formats::{BehaviorBundle, LearnedSegment};
use csa_core::segmentation::SegmentKind;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Loading {
    pub channel: String,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct ComponentSummary {
    pub index: usize,
    pub mean_explained: f64,
    /// Frame-averaged unit direction over the segment's channels.
    pub loadings: Vec<Loading>,
}

#[derive(Debug, Serialize)]
pub struct SegmentReport {
    pub index: usize,
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
    pub frames: usize,
    pub degenerate_frames: usize,
    pub recommended_k: usize,
    pub components: Vec<ComponentSummary>,
}

#[derive(Debug, Serialize)]
pub struct ComponentCheck {
    pub segment: usize,
    pub component: usize,
    pub worst_angle_deg: f64,
    pub mean_explained: f64,
    pub planted_explained: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct TruthCheck {
    pub angle_tolerance_deg: f64,
    pub fraction_tolerance: f64,
    pub components: Vec<ComponentCheck>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct PcReport {
    pub digest: String,
    pub task: String,
    pub recommended_k: usize,
    pub segments: Vec<SegmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<TruthCheck>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle between two lines, ignoring orientation.
pub fn line_angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot.abs() / (norm(a) * norm(b))).min(1.0).acos().to_degrees()
}

fn summarize(index: usize, seg: &LearnedSegment) -> SegmentReport {
    let frames = &seg.schedule.frames;
    let live: Vec<_> = frames.iter().filter(|f| !f.degenerate).collect();
    let stored = frames.first().map_or(0, |f| f.components.len());
    let components = (0..stored)
        .map(|k| {
            let mut mean = vec![0.0; seg.schema.len()];
            for f in &live {
                mean.iter_mut().zip(&f.components[k]).for_each(|(m, c)| *m += c);
            }
            let n = norm(&mean);
            if n > 0.0 {
                mean.iter_mut().for_each(|m| *m /= n);
            }
            ComponentSummary {
                index: k,
                mean_explained: seg.k_report.mean_explained.get(k).copied().unwrap_or(0.0),
                loadings: seg
                    .schema
                    .names()
                    .into_iter()
                    .zip(mean)
                    .map(|(c, value)| Loading {
                        channel: c.to_string(),
                        value,
                    })
                    .collect(),
            }
        })
        .collect();
    SegmentReport {
        index,
        kind: seg.kind,
        start: seg.start,
        end: seg.end,
        frames: frames.len(),
        degenerate_frames: seg.k_report.degenerate_frames,
        recommended_k: seg.k_report.recommended,
        components,
    }
}

fn check_segment(index: usize, seg: &LearnedSegment, truth: &GroundTruth, angle_tol: f64, frac_tol: f64) -> Vec<ComponentCheck> {
    let frames = &seg.schedule.frames;
    truth
        .directions
        .iter()
        .zip(&truth.expected_fractions)
        .enumerate()
        .map(|(k, (planted, &want))| {
            let mut worst = 0.0f64;
            let mut explained = 0.0;
            for f in frames {
                let a = f.components.get(k).map_or(90.0, |c| line_angle_deg(c, planted));
                worst = worst.max(a);
                explained += f.explained_fraction.get(k).copied().unwrap_or(0.0);
            }
            let mean = explained / frames.len().max(1) as f64;
            ComponentCheck {
                segment: index,
                component: k,
                worst_angle_deg: worst,
                mean_explained: mean,
                planted_explained: want,
                pass: worst <= angle_tol && (mean - want).abs() <= frac_tol,
            }
        })
        .collect()
}

pub fn report(
    bundle: &BehaviorBundle,
    only: Option<usize>,
    truth: Option<&GroundTruth>,
    angle_tol: f64,
    frac_tol: f64,
) -> PcReport {
    let chosen: Vec<(usize, &LearnedSegment)> = bundle
        .segments
        .iter()
        .enumerate()
        .filter(|(i, _)| only.is_none_or(|o| o == *i))
        .collect();
    let check = truth.map(|truth| {
        let components: Vec<ComponentCheck> = chosen
            .iter()
            .filter(|(_, s)| s.kind == SegmentKind::InContact)
            .flat_map(|&(i, s)| check_segment(i, s, truth, angle_tol, frac_tol))
            .collect();
        TruthCheck {
            angle_tolerance_deg: angle_tol,
            fraction_tolerance: frac_tol,
            pass: !components.is_empty() && components.iter().all(|c| c.pass),
            components,
        }
    });
    PcReport {
        digest: bundle.digest(),
        task: bundle.provenance.task.clone(),
        recommended_k: bundle.recommended_k,
        segments: chosen.into_iter().map(|(i, s)| summarize(i, s)).collect(),
        check,
    }
}

pub fn render(r: &PcReport) -> String {
    let mut out = format!("bundle {} ({})\nrecommended input axes: {}\n", &r.digest[..12], r.task, r.recommended_k);
    for s in &r.segments {
        out += &format!(
            "\nsegment {} {:?} [{}, {}) frames {} degenerate {} recommended K {}\n",
            s.index, s.kind, s.start, s.end, s.frames, s.degenerate_frames, s.recommended_k
        );
        for c in &s.components {
            let top: Vec<String> = {
                let mut l: Vec<&Loading> = c.loadings.iter().collect();
                l.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
                l.iter().take(3).map(|l| format!("{} {:+.3}", l.channel, l.value)).collect()
            };
            out += &format!("  pc{} {:6.2}%  {}\n", c.index + 1, 100.0 * c.mean_explained, top.join(", "));
        }
    }
    if let Some(c) = &r.check {
        out += "\nplanted structure:\n";
        for x in &c.components {
            out += &format!(
                "  segment {} pc{}: worst angle {:.3} deg, explained {:.2}% (planted {:.2}%) {}\n",
                x.segment,
                x.component + 1,
                x.worst_angle_deg,
                100.0 * x.mean_explained,
                100.0 * x.planted_explained,
                if x.pass { "ok" } else { "MISMATCH" }
            );
        }
    }
    out
}
