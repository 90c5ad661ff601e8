//! Dynamic movement primitives with paired forward and backward instances.
//!
//! Each channel follows the transformation system
//!
//! ```text
//! tau^2 x'' = alpha (beta (g - x) - tau x') + f(s)
//! tau s'    = -a s
//! ```
//!
//! with `f(s) = s * sum(psi_i(s) w_i) / sum(psi_i(s))` and Gaussian basis
//! functions `psi_i` in phase space. `f` is zero once `s` falls below the
//! terminal phase `exp(-a)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::Schema;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmpParams {
    pub alpha: f64,
    pub beta: f64,
    pub a_canonical: f64,
    /// Nominal duration of the segment (s). Set by [`learn`].
    pub tau: f64,
    pub n_basis: usize,
    /// Ridge term relative to the mean diagonal of the regression Gram matrix.
    pub ridge: f64,
}

impl Default for DmpParams {
    fn default() -> Self {
        DmpParams {
            alpha: 25.0,
            beta: 25.0 / 4.0,
            a_canonical: 4.6,
            tau: 1.0,
            n_basis: 30,
            ridge: 1e-9,
        }
    }
}

impl DmpParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("a_canonical", self.a_canonical),
            ("tau", self.tau),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Dmp(format!("{name} must be positive, got {value}")));
            }
        }
        if self.n_basis < 2 {
            return Err(Error::Dmp(format!("n_basis must be at least 2, got {}", self.n_basis)));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Dmp("ridge must be non-negative".into()));
        }
        Ok(())
    }

    /// Basis centers, exponentially spaced so they are evenly spread in time.
    pub fn centers(&self) -> Vec<f64> {
        let n = self.n_basis;
        (0..n)
            .map(|i| (-self.a_canonical * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    /// Inverse squared spacing to the next center.
    pub fn widths(&self) -> Vec<f64> {
        let c = self.centers();
        let mut h: Vec<f64> = c.windows(2).map(|w| 1.0 / (w[1] - w[0]).powi(2)).collect();
        h.push(*h.last().expect("n_basis >= 2"));
        h
    }

    /// Phase reached at the end of the nominal duration.
    pub fn terminal_phase(&self) -> f64 {
        (-self.a_canonical).exp()
    }

    /// Nominal elapsed fraction of the segment, `t / tau`, at phase `s`.
    pub fn progress(&self, s: f64) -> f64 {
        -s.ln() / self.a_canonical
    }

    pub fn is_critically_damped(&self) -> bool {
        (self.beta - self.alpha / 4.0).abs() <= 1e-12 * self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn reversed(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedDmp {
    pub direction: Direction,
    pub params: DmpParams,
    pub start: Vec<f64>,
    /// Velocity at the start of the demonstration (units/s).
    pub start_velocity: Vec<f64>,
    pub goal: Vec<f64>,
    /// `weights[channel][basis]`
    pub weights: Vec<Vec<f64>>,
}

/// A forward primitive and the one learned on the time-reversed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpPair {
    pub forward: LearnedDmp,
    pub backward: LearnedDmp,
}

impl DmpPair {
    pub fn get(&self, direction: Direction) -> &LearnedDmp {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpState {
    pub x: Vec<f64>,
    pub xd: Vec<f64>,
    pub s: f64,
}

/// Central differences, one-sided at the ends.
fn gradient(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| match i {
            0 => (x[1] - x[0]) / dt,
            i if i == n - 1 => (x[n - 1] - x[n - 2]) / dt,
            i => (x[i + 1] - x[i - 1]) / (2.0 * dt),
        })
        .collect()
}

/// Centered 5-sample moving average, window shrinking at the ends.
fn smooth5(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let half = 2.min(i).min(n - 1 - i);
            let w = &x[i - half..=i + half];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

impl LearnedDmp {
    pub fn channels(&self) -> usize {
        self.goal.len()
    }

    pub fn forcing(&self, channel: usize, s: f64) -> f64 {
        // no forcing past the demonstrated phase interval, so the system
        // settles on the goal instead of extrapolating the last basis weights
        if s < self.params.terminal_phase() * (1.0 - 1e-9) {
            return 0.0;
        }
        let c = self.params.centers();
        let h = self.params.widths();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..c.len() {
            let psi = (-h[i] * (s - c[i]).powi(2)).exp();
            num += psi * self.weights[channel][i];
            den += psi;
        }
        if den > 0.0 {
            s * num / den
        } else {
            0.0
        }
    }

    /// State at the start of the primitive.
    pub fn initial_state(&self) -> DmpState {
        DmpState {
            x: self.start.clone(),
            xd: self.start_velocity.clone(),
            s: 1.0,
        }
    }

    /// One semi-implicit Euler step of the transformation and canonical
    /// systems with effective time constant `tau / rate_scale`.
    pub fn step(&self, state: &mut DmpState, dt: f64, rate_scale: f64) {
        let p = &self.params;
        let tau = p.tau / rate_scale;
        for c in 0..self.channels() {
            let f = self.forcing(c, state.s);
            let xdd = (p.alpha * (p.beta * (self.goal[c] - state.x[c]) - tau * state.xd[c]) + f) / (tau * tau);
            state.xd[c] += xdd * dt;
            state.x[c] += state.xd[c] * dt;
        }
        state.s *= (-p.a_canonical * dt / tau).exp();
    }

    /// Integrates from the start for `duration` seconds, returning the state
    /// after every step (the initial state first).
    pub fn rollout(&self, dt: f64, duration: f64, rate_scale: f64) -> Vec<Vec<f64>> {
        let steps = (duration / dt).round() as usize;
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(steps + 1);
        out.push(state.x.clone());
        for _ in 0..steps {
            self.step(&mut state, dt, rate_scale);
            out.push(state.x.clone());
        }
        out
    }
}

fn fit(traj: &[Vec<f64>], dt: f64, params: &DmpParams, direction: Direction) -> Result<LearnedDmp> {
    let len = traj.len();
    let channels = traj[0].len();
    let nb = params.n_basis;
    let c = params.centers();
    let h = params.widths();
    let tau = params.tau;
    let s: Vec<f64> = (0..len)
        .map(|i| (-params.a_canonical * i as f64 * dt / tau).exp())
        .collect();
    let phi = DMatrix::from_fn(len, nb, |i, b| {
        let psi = |j: usize| (-h[j] * (s[i] - c[j]).powi(2)).exp();
        let total: f64 = (0..nb).map(psi).sum();
        s[i] * psi(b) / total
    });
    let mut gram = phi.transpose() * &phi;
    let lambda = params.ridge * gram.trace() / nb as f64;
    for i in 0..nb {
        gram[(i, i)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Dmp("singular forcing-term regression".into()))?;

    let goal = traj[len - 1].clone();
    let mut start_velocity = Vec::with_capacity(channels);
    let mut weights = Vec::with_capacity(channels);
    for ch in 0..channels {
        let x: Vec<f64> = traj.iter().map(|r| r[ch]).collect();
        let xd = smooth5(&gradient(&x, dt));
        let xdd = smooth5(&gradient(&xd, dt));
        start_velocity.push(xd[0]);
        let target = DVector::from_fn(len, |i, _| {
            tau * tau * xdd[i] - params.alpha * (params.beta * (goal[ch] - x[i]) - tau * xd[i])
        });
        let w = chol.solve(&(phi.transpose() * target));
        weights.push(w.iter().copied().collect());
    }
    Ok(LearnedDmp {
        direction,
        params: *params,
        start: traj[0].clone(),
        start_velocity,
        goal,
        weights,
    })
}

/// Learns the forward primitive on `traj` (rows sampled every `dt` seconds)
/// and the backward primitive on its time reversal. `params.tau` is replaced
/// by the trajectory duration.
pub fn learn(traj: &[Vec<f64>], dt: f64, params: &DmpParams) -> Result<DmpPair> {
    if traj.len() < 3 {
        return Err(Error::Dmp(format!(
            "need at least 3 samples to learn a primitive, got {}",
            traj.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Dmp(format!("sample period must be positive, got {dt}")));
    }
    let channels = traj[0].len();
    if channels == 0 || traj.iter().any(|r| r.len() != channels) {
        return Err(Error::Dmp("trajectory rows must share a non-zero width".into()));
    }
    if traj.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Dmp("trajectory contains non-finite values".into()));
    }
    let mut params = *params;
    params.tau = (traj.len() - 1) as f64 * dt;
    params.validate()?;
    let reversed: Vec<Vec<f64>> = traj.iter().rev().cloned().collect();
    Ok(DmpPair {
        forward: fit(traj, dt, &params, Direction::Forward)?,
        backward: fit(&reversed, dt, &params, Direction::Backward)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseVelocity {
    /// Velocity changes sign so the motion continues smoothly backwards.
    #[default]
    Negate,
    /// Velocity restarts from rest.
    Zero,
}

/// Phase on the opposite primitive that corresponds to the same nominal
/// instant: `t' = tau - t`.
pub fn mirror_phase(s: f64, params: &DmpParams) -> f64 {
    (params.terminal_phase() / s).clamp(params.terminal_phase().min(1.0), 1.0)
}

/// Re-seeds the integration state for the opposite direction. Position is
/// kept, velocity is negated (or zeroed) and the phase is mirrored.
pub fn switch_direction(state: &mut DmpState, params: &DmpParams, velocity: ReverseVelocity) {
    for v in &mut state.xd {
        *v = match velocity {
            ReverseVelocity::Negate => -*v,
            ReverseVelocity::Zero => 0.0,
        };
    }
    state.s = mirror_phase(state.s, params);
}

/// Scales every quaternion group of `x` to unit norm.
pub fn renormalize_quaternion(x: &mut [f64], schema: &Schema) -> Result<()> {
    for q in schema.quaternion_groups() {
        let n = x[q..q + 4].iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        x[q..q + 4].iter_mut().for_each(|c| *c /= n);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{ChannelKind, ChannelSchema};
    use proptest::prelude::*;

    fn min_jerk(a: f64, b: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                vec![a + (b - a) * (10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5))]
            })
            .collect()
    }

    fn max_abs_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn straight_line_is_reproduced() {
        let n = 200;
        let traj: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let params = DmpParams {
            n_basis: 20,
            ..Default::default()
        };
        let pair = learn(&traj, 0.01, &params).unwrap();
        let roll = pair.forward.rollout(0.01, pair.forward.params.tau, 1.0);
        assert!(max_abs_err(&roll, &traj) < 0.02, "{}", max_abs_err(&roll, &traj));
    }

    #[test]
    fn constant_trajectory_stays_put() {
        let traj = vec![vec![0.3, -2.0]; 50];
        let pair = learn(&traj, 0.01, &DmpParams::default()).unwrap();
        assert!(pair.forward.weights.iter().flatten().all(|w| w.abs() < 1e-9));
        assert!(pair.forward.start_velocity.iter().all(|v| *v == 0.0));
        for row in pair.forward.rollout(0.01, 1.0, 1.0) {
            assert!((row[0] - 0.3).abs() < 1e-12 && (row[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn min_jerk_converges_to_goal() {
        let traj = min_jerk(-0.2, 0.5, 300);
        let pair = learn(&traj, 0.01, &DmpParams::default()).unwrap();
        let tau = pair.forward.params.tau;
        for dmp in [&pair.forward, &pair.backward] {
            let roll = dmp.rollout(0.01, 1.25 * tau, 1.0);
            let end = roll.last().unwrap()[0];
            assert!((end - dmp.goal[0]).abs() < 1e-3, "{end} vs {}", dmp.goal[0]);
        }
    }

    #[test]
    fn moving_end_still_settles() {
        // cut before the profile comes to rest
        let traj = &min_jerk(0.0, 1.0, 300)[..291];
        let pair = learn(traj, 0.01, &DmpParams::default()).unwrap();
        let dmp = &pair.forward;
        let range = traj[290][0];
        assert_eq!(dmp.forcing(0, 0.5 * dmp.params.terminal_phase()), 0.0);
        let end = dmp.rollout(0.01, 1.25 * dmp.params.tau, 1.0).last().unwrap()[0];
        assert!((end - dmp.goal[0]).abs() < 1e-3 * range, "{end} vs {}", dmp.goal[0]);
    }

    #[test]
    fn fixed_point_only_decays_phase() {
        let pair = learn(&vec![vec![1.0]; 10], 0.01, &DmpParams::default()).unwrap();
        let mut st = DmpState {
            x: vec![1.0],
            xd: vec![0.0],
            s: 0.7,
        };
        pair.forward.step(&mut st, 0.01, 1.0);
        assert_eq!((st.x[0], st.xd[0]), (1.0, 0.0));
        assert!(st.s < 0.7);
    }

    #[test]
    fn phase_follows_closed_form() {
        let pair = learn(&min_jerk(0.0, 1.0, 101), 0.01, &DmpParams::default()).unwrap();
        let p = pair.forward.params;
        for rate in [0.5, 1.0, 2.0, 3.7] {
            let mut st = pair.forward.initial_state();
            for k in 1..=150 {
                pair.forward.step(&mut st, 0.01, rate);
                let expect = (-p.a_canonical * k as f64 * 0.01 * rate / p.tau).exp();
                assert!((st.s - expect).abs() < 1e-12 * expect.max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn doubling_rate_halves_time_to_phase() {
        let pair = learn(&min_jerk(0.0, 1.0, 101), 0.01, &DmpParams::default()).unwrap();
        let ticks_to = |rate: f64| {
            let mut st = pair.forward.initial_state();
            let mut k = 0;
            while st.s > 0.05 {
                pair.forward.step(&mut st, 0.001, rate);
                k += 1;
            }
            k
        };
        let (t1, t2) = (ticks_to(1.0), ticks_to(2.0));
        assert!((t1 as f64 / t2 as f64 - 2.0).abs() < 2.0 / t2 as f64, "{t1} {t2}");
    }

    #[test]
    fn backward_retraces_forward() {
        let traj: Vec<Vec<f64>> = min_jerk(0.0, 0.8, 250)
            .into_iter()
            .zip(min_jerk(5.0, 2.0, 250))
            .map(|(a, b)| vec![a[0], b[0]])
            .collect();
        let pair = learn(&traj, 0.01, &DmpParams::default()).unwrap();
        let tau = pair.forward.params.tau;
        let fwd = pair.forward.rollout(0.01, tau, 1.0);
        let mut bwd = pair.backward.rollout(0.01, tau, 1.0);
        bwd.reverse();
        let ranges = [0.8, 3.0];
        for (f, b) in fwd.iter().zip(&bwd) {
            for c in 0..2 {
                assert!((f[c] - b[c]).abs() < 0.05 * ranges[c]);
            }
        }
        assert_eq!(pair.forward.start, pair.backward.goal);
        assert_eq!(pair.forward.goal, pair.backward.start);
    }

    #[test]
    fn switching_preserves_position_and_mirrors_phase() {
        let pair = learn(&min_jerk(0.0, 1.0, 200), 0.01, &DmpParams::default()).unwrap();
        let p = pair.forward.params;
        let mut st = pair.forward.initial_state();
        for _ in 0..80 {
            pair.forward.step(&mut st, 0.01, 1.0);
        }
        let before = st.clone();
        switch_direction(&mut st, &p, ReverseVelocity::Negate);
        assert_eq!(st.x, before.x);
        assert_eq!(st.xd[0], -before.xd[0]);
        let progress = p.progress(before.s) + p.progress(st.s);
        assert!((progress - 1.0).abs() < 1e-12);
        switch_direction(&mut st, &p, ReverseVelocity::Negate);
        assert!((st.s - before.s).abs() < 1e-15);
        assert_eq!(st.xd, before.xd);
        switch_direction(&mut st, &p, ReverseVelocity::Zero);
        assert_eq!(st.xd, vec![0.0]);
    }

    #[test]
    fn learn_rejects_degenerate_input() {
        assert!(learn(&[vec![0.0], vec![1.0]], 0.01, &DmpParams::default()).is_err());
        assert!(learn(&vec![vec![f64::NAN]; 5], 0.01, &DmpParams::default()).is_err());
        assert!(learn(&vec![vec![0.0]; 5], 0.0, &DmpParams::default()).is_err());
        let bad = DmpParams {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(learn(&vec![vec![0.0]; 5], 0.01, &bad).is_err());
        assert!(DmpParams::default().is_critically_damped());
    }

    fn quat_schema() -> Schema {
        Schema {
            channels: ["qx", "qy", "qz", "qw"]
                .into_iter()
                .map(|n| ChannelSchema::new(n, "1", ChannelKind::QuaternionComponent))
                .chain([ChannelSchema::new("f_n", "N", ChannelKind::ForceNormal)])
                .collect(),
        }
    }

    #[test]
    fn quaternion_renormalization() {
        let schema = quat_schema();
        let mut x = vec![2.0, 0.0, 0.0, 0.0, 7.0];
        renormalize_quaternion(&mut x, &schema).unwrap();
        assert_eq!(x, vec![1.0, 0.0, 0.0, 0.0, 7.0]);
        let mut unit = vec![0.0, 0.6, 0.0, 0.8, 3.0];
        let copy = unit.clone();
        renormalize_quaternion(&mut unit, &schema).unwrap();
        assert_eq!(unit, copy);
        let mut zero = vec![0.0; 5];
        assert!(matches!(renormalize_quaternion(&mut zero, &schema), Err(Error::ZeroQuaternion)));
    }

    proptest! {
        #[test]
        fn renormalized_quaternion_has_unit_norm(q in prop::array::uniform4(-10.0f64..10.0), f in -5.0f64..5.0) {
            prop_assume!(q.iter().map(|c| c * c).sum::<f64>() > 1e-6);
            let mut x = vec![q[0], q[1], q[2], q[3], f];
            renormalize_quaternion(&mut x, &quat_schema()).unwrap();
            let n = x[..4].iter().map(|c| c * c).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
            prop_assert_eq!(x[4], f);
        }

        #[test]
        fn phase_strictly_decreases(rate in 0.1f64..5.0, dt in 1e-4f64..0.05) {
            let pair = learn(&min_jerk(0.0, 1.0, 30), 0.01, &DmpParams::default()).unwrap();
            let mut st = pair.forward.initial_state();
            for _ in 0..50 {
                let prev = st.s;
                pair.forward.step(&mut st, dt, rate);
                prop_assert!(st.s < prev && st.s > 0.0);
            }
        }
    }
}
