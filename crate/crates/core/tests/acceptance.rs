//! Acceptance checks. Each check prints one PASS/FAIL line with the measured
//! quantity; the process exits non-zero if any check fails.

#![allow(clippy::needless_range_loop)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use csa_core::alignment::dtw;
use csa_core::corrections::{extract, CorrectionFrame};
use csa_core::demo_synth::{generate, load_synth_spec, PlantedComponent, SynthSpec};
use csa_core::executor::{
    replay, run_headless, ExecutionLog, ExecutorConfig, InputMode, OperatorInput, Session, SessionStatus,
};
use csa_core::formats::{
    BehaviorBundle, ChannelKind, ChannelSchema, Schema, SpatialAxis,
};
use csa_core::input_mapping::{map_input_3dof, spatial_basis, SpatialContext};
use csa_core::override_law::{update, wall_force, OverrideConfig, OverrideState};
use csa_core::pipeline::{learn_detailed, LearnConfig, LearnOutcome};
use csa_core::policy::{NullPolicy, PosteriorPolicy, ScriptedInputs};
use csa_core::segmentation::{group_delay_samples, segment, SegmentKind, SegmentationConfig};
use csa_core::sim_env::{load_scenario, Scenario};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn shipped() -> (LearnOutcome, csa_core::demo_synth::GroundTruth, Scenario) {
    let spec = load_synth_spec(repo_file("cleaning.synth.json")).expect("shipped synth spec");
    let (set, truth) = generate(&spec).expect("synthesis");
    let out = learn_detailed(&set, Some(&truth.surface), &LearnConfig::default()).expect("learning");
    let scenario = load_scenario(repo_file("cleaning.scenario.json")).expect("shipped scenario");
    (out, truth, scenario)
}

// 1 ------------------------------------------------------------------------

/// Minimum over every monotone path, accumulated in path order.
fn exhaustive_min(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn dtw_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut exact = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = dtw(&a, &b, |x, y| (x - y).abs()).map_err(|e| e.to_string())?;
        let want = exhaustive_min(&a, &b);
        ensure(got.cost == want, || format!("case {case}: dtw {} vs exhaustive {want}", got.cost))?;
        let path_cost = got.path.iter().fold(0.0, |acc, &(i, j)| acc + (a[i] - b[j]).abs());
        ensure(path_cost == got.cost, || format!("case {case}: path cost {path_cost} != {}", got.cost))?;
        exact += 1;
    }
    Ok(format!("{exact}/200 pairs match the exhaustive minimum exactly"))
}

// 2 ------------------------------------------------------------------------

fn warped_forces(forces: &[Vec<f64>]) -> csa_core::alignment::WarpedSet {
    let t = forces[0].len();
    csa_core::alignment::WarpedSet {
        schema: Schema {
            channels: vec![
                ChannelSchema::new("x", "m", ChannelKind::PositionCartesian).with_axis(SpatialAxis::X),
                ChannelSchema::new("f_n", "N", ChannelKind::ForceNormal),
                ChannelSchema::new("dn", "1", ChannelKind::ExecutionRate),
            ],
        },
        timestamps: (0..t).map(|i| i as f64 / 100.0).collect(),
        capture_rate_hz: 100.0,
        data: forces
            .iter()
            .map(|f| f.iter().enumerate().map(|(i, &fi)| vec![i as f64 * 1e-3, fi, 1.0]).collect())
            .collect(),
    }
}

fn segmentation_accuracy() -> Check {
    let cfg = SegmentationConfig::default();
    let tol = group_delay_samples(cfg.cutoff_hz, 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let on = rng.random_range(40..160);
        let len = rng.random_range(80..400);
        let off = on + len;
        let total = off + rng.random_range(40..160);
        let level = rng.random_range(4.0..25.0);
        let ramp = rng.random_range(0..6);
        let demos: Vec<Vec<f64>> = (0..rng.random_range(3..10))
            .map(|_| {
                let noise = rng.random_range(0.0..0.2);
                (0..total)
                    .map(|i| {
                        let rise = if i < on {
                            0.0
                        } else if i < on + ramp {
                            (i - on + 1) as f64 / (ramp + 1) as f64
                        } else if i < off {
                            1.0
                        } else {
                            0.0
                        };
                        level * rise + noise * (rng.random::<f64>() - 0.5)
                    })
                    .collect()
            })
            .collect();
        let segs = segment(&warped_forces(&demos), "f_n", &cfg).map_err(|e| e.to_string())?;
        let kinds: Vec<_> = segs.iter().map(|s| s.kind).collect();
        ensure(
            kinds == [SegmentKind::FreeSpace, SegmentKind::InContact, SegmentKind::FreeSpace],
            || format!("case {case}: got {kinds:?}"),
        )?;
        let err_on = (segs[1].start as f64 - on as f64).abs();
        let err_off = (segs[1].end as f64 - off as f64).abs();
        worst = worst.max(err_on).max(err_off);
        ensure(err_on <= tol && err_off <= tol, || {
            format!("case {case}: boundaries ({}, {}) vs truth ({on}, {off})", segs[1].start, segs[1].end)
        })?;
    }

    let (out, truth, _) = shipped();
    let kinds: Vec<_> = out.segments.iter().map(|s| s.kind).collect();
    ensure(
        kinds == [SegmentKind::FreeSpace, SegmentKind::InContact, SegmentKind::FreeSpace],
        || format!("shipped demo: got {kinds:?}"),
    )?;
    let (on, off) = truth.contact[out.warp.reference_index];
    let shipped_err = (out.segments[1].start as f64 - on as f64)
        .abs()
        .max((out.segments[1].end as f64 - off as f64).abs());
    ensure(shipped_err <= tol, || format!("shipped demo boundary error {shipped_err}"))?;
    Ok(format!(
        "50 profiles, worst boundary error {worst} samples (tolerance {tol:.2}); shipped demo approach/contact/retract, error {shipped_err}"
    ))
}

// 3 ------------------------------------------------------------------------

fn dmp_convergence() -> Check {
    let (out, _, _) = shipped();
    let b = &out.bundle;
    let dt = b.sample_period;
    let mut worst_goal = 0.0f64;
    let mut worst_retrace = 0.0f64;
    for (si, seg) in b.segments.iter().enumerate() {
        let ranges = seg.schema.ranges();
        for dmp in [&seg.dmp.forward, &seg.dmp.backward] {
            let roll = dmp.rollout(dt, 1.25 * dmp.params.tau, 1.0);
            let end = roll.last().unwrap();
            for c in 0..ranges.len() {
                let e = (end[c] - dmp.goal[c]).abs() / ranges[c];
                worst_goal = worst_goal.max(e);
                ensure(e < 1e-3, || {
                    format!("segment {si} {:?} channel {}: |x - g| = {e:.2e} range", dmp.direction, seg.schema.channels[c].name)
                })?;
            }
        }
        let tau = seg.dmp.forward.params.tau;
        let fwd = seg.dmp.forward.rollout(dt, tau, 1.0);
        let bwd = seg.dmp.backward.rollout(dt, tau, 1.0);
        let n = fwd.len() - 1;
        for i in 0..=n {
            for c in 0..ranges.len() {
                let e = (fwd[i][c] - bwd[n - i][c]).abs() / ranges[c];
                worst_retrace = worst_retrace.max(e);
                ensure(e < 0.05, || format!("segment {si} sample {i} channel {c}: retrace error {e:.3} range"))?;
            }
        }
    }
    Ok(format!(
        "worst |x - g| at 1.25 tau {worst_goal:.2e} range (< 1e-3); worst retrace {:.2}% range (< 5%)",
        100.0 * worst_retrace
    ))
}

// 4 ------------------------------------------------------------------------

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb)).min(1.0).acos().to_degrees()
}

fn check_frames(frames: &[CorrectionFrame], rows: impl Fn(usize) -> Vec<Vec<f64>>) -> Result<(f64, f64), String> {
    let mut worst_ortho = 0.0f64;
    let mut worst_energy = 0.0f64;
    for (i, f) in frames.iter().enumerate() {
        for (p, a) in f.components.iter().enumerate() {
            for (q, b) in f.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let e = (dot - if p == q { 1.0 } else { 0.0 }).abs();
                worst_ortho = worst_ortho.max(e);
            }
        }
        if i > 0 {
            for (a, b) in f.components.iter().zip(&frames[i - 1].components) {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                ensure(dot >= 0.0, || format!("frame {}: sign flip (dot {dot})", f.t))?;
            }
        }
        let frob: f64 = rows(i).iter().flatten().map(|x| x * x).sum();
        let energy: f64 = f.singular_values.iter().map(|s| s * s).sum();
        let e = (energy - frob).abs() / frob.max(1e-300);
        worst_energy = worst_energy.max(e);
    }
    ensure(worst_ortho <= 1e-9, || format!("orthonormality error {worst_ortho:.2e}"))?;
    ensure(worst_energy <= 1e-9, || format!("energy conservation error {worst_energy:.2e}"))?;
    Ok((worst_ortho, worst_energy))
}

fn pca_recovery() -> Check {
    let mut report = Vec::new();
    for (name, spec) in [
        ("single", SynthSpec::single_coordination(21)),
        ("two", SynthSpec::two_coordination(22)),
    ] {
        let (set, truth) = generate(&spec).map_err(|e| e.to_string())?;
        let out = learn_detailed(&set, Some(&truth.surface), &LearnConfig::default()).map_err(|e| e.to_string())?;
        let mut worst_angle = 0.0f64;
        let mut worst_fraction = 0.0f64;
        let mut frames_checked = 0;
        for seg in &out.segments {
            let sched = extract(seg).map_err(|e| e.to_string())?;
            let ranges = seg.schema.ranges();
            let n = seg.num_demos();
            let rows = |t: usize| -> Vec<Vec<f64>> {
                let m = ranges.len();
                let mean: Vec<f64> = (0..m).map(|c| seg.data.iter().map(|d| d[t][c]).sum::<f64>() / n as f64).collect();
                seg.data.iter().map(|d| (0..m).map(|c| (d[t][c] - mean[c]) / ranges[c]).collect()).collect()
            };
            check_frames(&sched.frames, rows)?;
            if seg.kind != SegmentKind::InContact {
                continue;
            }
            let mut mean_fraction = vec![0.0; truth.directions.len()];
            for f in &sched.frames {
                for (k, planted) in truth.directions.iter().enumerate() {
                    let a = angle_deg(&f.components[k], planted);
                    worst_angle = worst_angle.max(a);
                    ensure(a <= 3.0, || format!("{name}: frame {} component {k} off by {a:.2} deg", f.t))?;
                    mean_fraction[k] += f.explained_fraction[k] / sched.frames.len() as f64;
                }
                frames_checked += 1;
            }
            for (k, (got, want)) in mean_fraction.iter().zip(&truth.expected_fractions).enumerate() {
                let e = (got - want).abs();
                worst_fraction = worst_fraction.max(e);
                ensure(e <= 0.02, || format!("{name}: component {k} explains {got:.4}, planted {want:.4}"))?;
            }
        }
        report.push(format!(
            "{name}: {frames_checked} frames, worst angle {worst_angle:.3} deg, worst fraction error {:.3} pt",
            100.0 * worst_fraction
        ));
    }
    Ok(format!("{}; orthonormality, sign continuity and energy within tolerance", report.join("; ")))
}

// 5 ------------------------------------------------------------------------

fn scaling_correctness() -> Check {
    let mut spec = SynthSpec::single_coordination(31);
    spec.components = vec![PlantedComponent {
        direction: [("f_n".to_string(), 1.0)].into_iter().collect(),
        amplitude: 0.15,
    }];
    spec.noise = 0.0;
    let (set, truth) = generate(&spec).map_err(|e| e.to_string())?;
    let out = learn_detailed(&set, Some(&truth.surface), &LearnConfig::default()).map_err(|e| e.to_string())?;
    let seg = out.segments.iter().find(|s| s.kind == SegmentKind::InContact).ok_or("no contact segment")?;
    let sched = extract(seg).map_err(|e| e.to_string())?;
    let fi = seg.schema.index_of("f_n").unwrap();
    let n = seg.num_demos() as f64;
    let mut worst = 0.0f64;
    for (t, f) in sched.frames.iter().enumerate() {
        let force: Vec<f64> = seg.data.iter().map(|d| d[t][fi]).collect();
        let mean = force.iter().sum::<f64>() / n;
        let std = (force.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mag = f.scaled[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        let e = (mag - 3.0 * std).abs() / (3.0 * std);
        worst = worst.max(e);
        ensure(e <= 1e-6, || format!("frame {}: |scaled| {mag} vs 3 std {}", f.t, 3.0 * std))?;
        ensure(f.scaled[0][fi] > 0.0, || format!("frame {}: force correction not positive", f.t))?;
    }
    Ok(format!("{} frames, worst relative error {worst:.2e}", sched.frames.len()))
}

// 6 ------------------------------------------------------------------------

fn frame_with(components: Vec<Vec<f64>>, scaled: Vec<Vec<f64>>) -> CorrectionFrame {
    let m = components[0].len();
    CorrectionFrame {
        t: 0,
        mean: vec![0.0; m],
        singular_values: vec![1.0; m],
        explained_fraction: vec![1.0 / m as f64; m],
        components,
        scaled,
        degenerate: false,
    }
}

fn cartesian_schema() -> Schema {
    Schema {
        channels: vec![
            ChannelSchema::new("x", "m", ChannelKind::PositionCartesian).with_axis(SpatialAxis::X),
            ChannelSchema::new("y", "m", ChannelKind::PositionCartesian).with_axis(SpatialAxis::Y),
            ChannelSchema::new("z", "m", ChannelKind::PositionCartesian).with_axis(SpatialAxis::Z),
            ChannelSchema::new("v_tool", "V", ChannelKind::ToolSpeed),
        ],
    }
}

fn gram_schmidt_hand_check() -> Check {
    // force-normal coefficient 0.9 on a surface whose normal is -z
    let schema = Schema::in_contact();
    let fi = schema.index_of("f_n").unwrap();
    let mut a1 = vec![0.0; schema.len()];
    a1[fi] = 0.9;
    a1[schema.index_of("v_tool").unwrap()] = (1.0f64 - 0.81).sqrt();
    let ctx = SpatialContext {
        force_dir: [0.0, 0.0, -1.0],
        ..SpatialContext::default()
    };
    let b = spatial_basis(&frame_with(vec![a1.clone()], vec![a1]), &schema, &ctx, 1);
    ensure(b.directions[0] == [0.0, 0.0, -1.0] && b.valid[0], || format!("example 1: {:?}", b.directions))?;

    // second component parallel to the first
    let frame = frame_with(
        vec![vec![0.6, 0.0, 0.0, 0.8], vec![-0.8, 0.0, 0.0, 0.6]],
        vec![vec![1.0; 4], vec![2.0; 4]],
    );
    let b = spatial_basis(&frame, &cartesian_schema(), &SpatialContext::default(), 2);
    ensure(b.valid == [true, false] && b.directions[1] == [0.0; 3], || format!("example 2: {b:?}"))?;

    // (1,1,0) and (1,0,0)
    let frame = frame_with(
        vec![vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]],
        vec![vec![0.0; 4], vec![0.0; 4]],
    );
    let b = spatial_basis(&frame, &cartesian_schema(), &SpatialContext::default(), 2);
    let r = 1.0 / 2f64.sqrt();
    ensure(b.directions[0] == [r, r, 0.0] && b.directions[1] == [r, -r, 0.0], || {
        format!("example 3: {:?}", b.directions)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_lin = 0.0f64;
    let mut worst_orth = 0.0f64;
    let mut worst_dec = 0.0f64;
    for _ in 0..1000 {
        let mut v = |lo: f64, hi: f64| -> Vec<Vec<f64>> {
            (0..3).map(|_| (0..4).map(|_| rng.random_range(lo..hi)).collect()).collect()
        };
        let frame = frame_with(v(-1.0, 1.0), v(-10.0, 10.0));
        let b = spatial_basis(&frame, &cartesian_schema(), &SpatialContext::default(), 3);
        let u: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let w: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let alpha: f64 = rng.random_range(-3.0..3.0);
        let sum = [u[0] + alpha * w[0], u[1] + alpha * w[1], u[2] + alpha * w[2]];
        let (yu, yw, ys) = (
            map_input_3dof(&u, &b, &frame),
            map_input_3dof(&w, &b, &frame),
            map_input_3dof(&sum, &b, &frame),
        );
        for c in 0..4 {
            worst_lin = worst_lin.max((ys[c] - yu[c] - alpha * yw[c]).abs());
        }
        for i in 0..3 {
            for j in 0..3 {
                if b.valid[i] && b.valid[j] {
                    let dot: f64 = (0..3).map(|x| b.directions[i][x] * b.directions[j][x]).sum();
                    worst_orth = worst_orth.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
                }
            }
        }
        // input built from basis coordinates maps to the same combination of
        // scaled corrections
        let c: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut input = [0.0; 3];
        for k in 0..3 {
            if b.valid[k] {
                for x in 0..3 {
                    input[x] += c[k] * b.directions[k][x];
                }
            }
        }
        let y = map_input_3dof(&input, &b, &frame);
        for ch in 0..4 {
            let want: f64 = (0..3).filter(|&k| b.valid[k]).map(|k| c[k] * frame.scaled[k][ch]).sum();
            worst_dec = worst_dec.max((y[ch] - want).abs());
        }
    }
    ensure(worst_lin < 1e-9, || format!("linearity error {worst_lin:.2e}"))?;
    ensure(worst_orth < 1e-9, || format!("orthonormality error {worst_orth:.2e}"))?;
    ensure(worst_dec < 1e-9, || format!("decomposition error {worst_dec:.2e}"))?;
    Ok(format!(
        "3 worked examples exact; 1000 frames: linearity {worst_lin:.1e}, orthonormality {worst_orth:.1e}, decomposition {worst_dec:.1e}"
    ))
}

// 7 ------------------------------------------------------------------------

fn override_law() -> Check {
    let cfg = OverrideConfig::default();
    let dt = 0.01;
    // proportional branch is the identity
    let mut st = OverrideState::new(1);
    for i in 0..=120 {
        let d = -cfg.d_wall + i as f64 * (2.0 * cfg.d_wall / 120.0);
        let out = update(&mut st, &[d], dt, &cfg);
        ensure(out.u[0] == d && !out.beyond_wall[0], || format!("u = {} for d = {d}", out.u[0]))?;
    }
    // force continuity at the wall: the stiff term vanishes there exactly
    for d_dot in [-0.3, 0.0, 0.7] {
        for sign in [-1.0, 1.0] {
            let d = sign * cfg.d_wall;
            let stiff_branch = cfg.k * d + cfg.b * d_dot + cfg.k_wall * (d - sign * cfg.d_wall);
            ensure(wall_force(d, d_dot, &cfg) == stiff_branch, || format!("force jump at d = {d}"))?;
            let next = f64::from_bits(d.abs().to_bits() + 1) * sign;
            let jump = (wall_force(next, d_dot, &cfg) - wall_force(d, d_dot, &cfg)).abs();
            ensure(jump < 1e-12, || format!("force jump {jump} just beyond the wall"))?;
        }
    }
    // integral accumulation over k ticks, on a dyadic grid so the closed form
    // is exact
    let cfg2 = OverrideConfig {
        d_wall: 0.625,
        gamma: 0.5,
        ..cfg
    };
    let dt2 = 1.0 / 64.0;
    let d = 0.875;
    let mut st = OverrideState::new(1);
    update(&mut st, &[cfg2.d_wall], dt2, &cfg2);
    let step = cfg2.gamma * dt2 * (d - cfg2.d_wall);
    let mut last = cfg2.d_wall;
    for k in 1..=10_000u32 {
        let out = update(&mut st, &[d], dt2, &cfg2);
        let closed = cfg2.d_wall + f64::from(k) * step;
        ensure(out.u[0] == closed, || format!("tick {k}: u = {} vs closed form {closed}", out.u[0]))?;
        ensure(out.u[0] > last, || format!("tick {k}: not increasing"))?;
        last = out.u[0];
    }
    // mirrored side
    let mut st = OverrideState::new(1);
    update(&mut st, &[-cfg2.d_wall], dt2, &cfg2);
    for _ in 0..10_000 {
        update(&mut st, &[-d], dt2, &cfg2);
    }
    ensure(st.u_prev[0] == -last, || format!("asymmetric accumulation {}", st.u_prev[0]))?;
    Ok(format!(
        "identity inside the wall, continuous wall force, closed-form accumulation exact; u grew from {} to {last} over 1e4 ticks",
        cfg2.d_wall
    ))
}

// 8 ------------------------------------------------------------------------

fn span_residual(y: &[f64], basis: &[Vec<f64>]) -> f64 {
    let a = DMatrix::from_fn(y.len(), basis.len(), |i, j| basis[j][i]);
    let yv = DVector::from_column_slice(y);
    let coef = a.clone().svd(true, true).solve(&yv, 1e-12).expect("svd solve");
    (yv - a * coef).norm()
}

fn arbitration(bundle: &Arc<BehaviorBundle>) -> Check {
    let mut ticks = 0;
    let mut worst_span = 0.0f64;
    for filtered in [true, false] {
        for mode in [InputMode::OneDof, InputMode::ThreeDof] {
            let cfg = ExecutorConfig {
                input_mode: mode,
                correction_filter: if filtered { 0.05 } else { 0.0 },
                ..ExecutorConfig::default()
            };
            let mut session = Session::new(bundle.clone(), None, cfg).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(ticks as u64 + 5);
            let mut d = vec![0.0; mode.axes()];
            while session.status() == SessionStatus::Running && session.tick_count() < 5000 {
                for x in &mut d {
                    *x = (*x + rng.random_range(-0.1f64..0.1)).clamp(-1.0, 1.0);
                }
                let reverse = (300..360).contains(&session.tick_count());
                let t = session.tick(&OperatorInput { d: d.clone(), reverse }).map_err(|e| e.to_string())?;
                ticks += 1;
                for j in 0..t.x_raw.len() {
                    ensure(t.x_raw[j] == t.x_n[j] + t.dy[j], || format!("tick {}: x - x_n != dy", t.tick))?;
                }
                if !filtered {
                    let frame = &bundle.segments[t.segment].schedule.frames[t.frame];
                    let k = mode.axes().min(frame.scaled.len());
                    let r = span_residual(&t.dy, &frame.scaled[..k]);
                    worst_span = worst_span.max(r);
                    ensure(r < 1e-9, || format!("tick {}: residual outside the span {r:.2e}", t.tick))?;
                }
            }
        }
    }
    Ok(format!("{ticks} ticks with x - x_n = dy exactly; worst span residual {worst_span:.1e} (filter off)"))
}

// 9 ------------------------------------------------------------------------

fn end_to_end(bundle: &Arc<BehaviorBundle>, scenario: &Scenario) -> Check {
    let cfg = ExecutorConfig::default();
    let null = run_headless(bundle.clone(), Some(scenario), &mut NullPolicy::default(), &cfg, 60.0)
        .map_err(|e| e.to_string())?;
    let mut posterior = PosteriorPolicy::new(cfg.override_law.d_wall);
    let post = run_headless(bundle.clone(), Some(scenario), &mut posterior, &cfg, 60.0).map_err(|e| e.to_string())?;
    let again = run_headless(
        bundle.clone(),
        Some(scenario),
        &mut PosteriorPolicy::new(cfg.override_law.d_wall),
        &cfg,
        60.0,
    )
    .map_err(|e| e.to_string())?;
    ensure(post.log.to_jsonl() == again.log.to_jsonl(), || "posterior runs differ".into())?;
    let rn = null.removal_fraction.unwrap();
    let rp = post.removal_fraction.unwrap();
    ensure(null.status == SessionStatus::Completed && post.status == SessionStatus::Completed, || {
        format!("runs ended {:?} / {:?}", null.status, post.status)
    })?;
    ensure(rn < 0.85, || format!("null policy removed {rn:.3}"))?;
    ensure(rp > 0.95, || format!("posterior policy removed {rp:.3}"))?;

    // reverse, then a re-pass with more force than nominal
    let recs = &post.log.records;
    let first_reverse = recs.iter().position(|r| r.input.reverse).ok_or("never reversed")?;
    let schema = &bundle.segments[recs[first_reverse].segment].schema;
    let fi = schema.first_of_kind(ChannelKind::ForceNormal).ok_or("reverse outside contact")?;
    let boosted = recs[first_reverse..]
        .iter()
        .skip_while(|r| r.input.reverse)
        .filter(|r| !r.input.reverse && r.env.is_some())
        .map(|r| r.x[fi] - r.x_n[fi])
        .fold(0.0, f64::max);
    ensure(boosted > 1.0, || format!("re-pass force only {boosted:.2} N above nominal"))?;
    ensure(posterior.max_level >= 1, || "no boosted re-pass".into())?;
    Ok(format!(
        "null {rn:.3} < 0.85, posterior {rp:.3} > 0.95; {} reversals, re-pass up to +{boosted:.1} N; deterministic",
        posterior.reversals
    ))
}

// 10 -----------------------------------------------------------------------

fn replay_equivalence(bundle: &Arc<BehaviorBundle>, scenario: &Scenario) -> Check {
    let mut checked = Vec::new();
    let cfg = ExecutorConfig::default();
    let mut posterior = PosteriorPolicy::new(cfg.override_law.d_wall);
    let post = run_headless(bundle.clone(), Some(scenario), &mut posterior, &cfg, 60.0).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs: Vec<OperatorInput> = (0..1500)
        .map(|i| OperatorInput {
            d: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            reverse: (i / 150) % 3 == 2,
        })
        .collect();
    let cfg3 = ExecutorConfig {
        input_mode: InputMode::ThreeDof,
        carry_corrections: true,
        ..ExecutorConfig::default()
    };
    let random = run_headless(bundle.clone(), Some(scenario), &mut ScriptedInputs::new(inputs), &cfg3, 60.0)
        .map_err(|e| e.to_string())?;

    for (name, log) in [("posterior", post.log), ("random 3-DOF", random.log)] {
        let parsed = ExecutionLog::parse(&log.to_jsonl()).map_err(|e| e.to_string())?;
        let report = replay(bundle.clone(), &parsed).map_err(|e| format!("{name}: {e}"))?;
        checked.push(format!("{name} {} ticks", report.ticks));
        let mut tampered = parsed;
        let mid = tampered.records.len() / 2;
        let x = &mut tampered.records[mid].x[0];
        *x = f64::from_bits(x.to_bits() ^ 1);
        ensure(replay(bundle.clone(), &tampered).is_err(), || format!("{name}: tampered log accepted"))?;
    }
    Ok(format!("{} reproduced bit-exactly; single-bit tampering detected", checked.join(", ")))
}

// --------------------------------------------------------------------------

fn main() {
    let mut failed = 0;
    let mut run = |label: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(msg), Some(l)) if elapsed > l => Err(format!("{msg}; took {elapsed:.1?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(msg) => println!("PASS  {label}: {msg} [{elapsed:.2?}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {label}: {msg} [{elapsed:.2?}]");
            }
        }
    };
    let secs = |s| Some(Duration::from_secs(s));

    run("DTW oracle equivalence", secs(10), &mut dtw_oracle);
    run("Segmentation boundary accuracy", None, &mut segmentation_accuracy);
    run("DMP convergence and retrace", None, &mut dmp_convergence);
    run("PCA recovery", secs(30), &mut pca_recovery);
    run("Scaling correctness", None, &mut scaling_correctness);
    run("Spatial mapping hand-check", None, &mut gram_schmidt_hand_check);
    run("Override law", None, &mut override_law);

    let (out, _, scenario) = shipped();
    let bundle = Arc::new(out.bundle);
    run("Arbitration identity and subspace", None, &mut || arbitration(&bundle));
    run("End-to-end cleaning ordering", secs(60), &mut || {
        // learning is part of the measured pipeline
        let (out, _, scenario) = shipped();
        end_to_end(&Arc::new(out.bundle), &scenario)
    });
    run("Replay equivalence", None, &mut || replay_equivalence(&bundle, &scenario));

    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
