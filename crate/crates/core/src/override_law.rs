//! Two-region input law: proportional inside the haptic wall, integral
//! accumulation beyond it, and the resistive force profile of the wall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverrideConfig {
    /// Wall position in normalized device units.
    pub d_wall: f64,
    /// Integral gain per second; multiplied by the tick period.
    pub gamma: f64,
    pub k: f64,
    pub k_wall: f64,
    pub b: f64,
    /// Keep the accumulated override when the handle returns inside the wall.
    pub latch_override: bool,
}

impl Default for OverrideConfig {
    fn default() -> Self {
        OverrideConfig {
            d_wall: 0.6,
            gamma: 0.5,
            k: 1.0,
            k_wall: 10.0,
            b: 0.05,
            latch_override: false,
        }
    }
}

impl OverrideConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d_wall > 0.0 && self.gamma > 0.0 && self.k > 0.0 && self.k_wall > self.k && self.b > 0.0;
        if !ok || ![self.d_wall, self.gamma, self.k, self.k_wall, self.b].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "override config needs d_wall, gamma, b > 0 and k_wall > k > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverrideState {
    pub u_prev: Vec<f64>,
    pub d_prev: Vec<f64>,
    /// Accumulated offset kept across wall re-entry when latching.
    pub bias: Vec<f64>,
}

impl OverrideState {
    pub fn new(axes: usize) -> Self {
        OverrideState {
            u_prev: vec![0.0; axes],
            d_prev: vec![0.0; axes],
            bias: vec![0.0; axes],
        }
    }

    pub fn axes(&self) -> usize {
        self.u_prev.len()
    }

    /// Clears the integral accumulator. The velocity history is kept so the
    /// damping term stays continuous.
    pub fn reset(&mut self) {
        self.u_prev.iter_mut().for_each(|u| *u = 0.0);
        self.bias.iter_mut().for_each(|u| *u = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideOutput {
    /// Effective input per axis.
    pub u: Vec<f64>,
    /// Resistive force per axis.
    pub force: Vec<f64>,
    /// Axes currently beyond the wall.
    pub beyond_wall: Vec<bool>,
}

/// Resistive force for displacement `d` and velocity `d_dot`.
pub fn wall_force(d: f64, d_dot: f64, cfg: &OverrideConfig) -> f64 {
    let mut f = cfg.k * d + cfg.b * d_dot;
    if d.abs() > cfg.d_wall {
        f += cfg.k_wall * (d - d.signum() * cfg.d_wall);
    }
    f
}

/// Advances the law by one tick of length `dt` for device displacement `d`.
pub fn update(state: &mut OverrideState, d: &[f64], dt: f64, cfg: &OverrideConfig) -> OverrideOutput {
    if state.axes() != d.len() {
        *state = OverrideState::new(d.len());
    }
    let gamma = cfg.gamma * dt;
    let mut out = OverrideOutput {
        u: Vec::with_capacity(d.len()),
        force: Vec::with_capacity(d.len()),
        beyond_wall: Vec::with_capacity(d.len()),
    };
    for (i, &di) in d.iter().enumerate() {
        let beyond = di.abs() > cfg.d_wall;
        let u = if beyond {
            state.u_prev[i] + gamma * di.signum() * (di.abs() - cfg.d_wall)
        } else if cfg.latch_override {
            state.bias[i] + di
        } else {
            di
        };
        if beyond {
            // offset of the accumulated value over the proportional input
            state.bias[i] = u - di;
        }
        let d_dot = if dt > 0.0 { (di - state.d_prev[i]) / dt } else { 0.0 };
        out.force.push(wall_force(di, d_dot, cfg));
        out.beyond_wall.push(beyond);
        out.u.push(u);
        state.u_prev[i] = u;
        state.d_prev[i] = di;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 0.01;

    #[test]
    fn rest_gives_nothing() {
        let cfg = OverrideConfig::default();
        let mut st = OverrideState::new(1);
        let out = update(&mut st, &[0.0], DT, &cfg);
        assert_eq!((out.u[0], out.force[0]), (0.0, 0.0));
    }

    #[test]
    fn wall_boundary_is_proportional() {
        let cfg = OverrideConfig::default();
        let mut st = OverrideState::new(1);
        update(&mut st, &[0.5], DT, &cfg);
        let out = update(&mut st, &[cfg.d_wall], DT, &cfg);
        assert_eq!(out.u[0], cfg.d_wall);
        let d_dot = (cfg.d_wall - 0.5) / DT;
        assert_eq!(out.force[0], cfg.k * cfg.d_wall + cfg.b * d_dot);
        assert!(!out.beyond_wall[0]);
    }

    #[test]
    fn accumulation_matches_closed_form() {
        let cfg = OverrideConfig::default();
        let mut st = OverrideState::new(1);
        update(&mut st, &[cfg.d_wall], DT, &cfg);
        let d = 1.5 * cfg.d_wall;
        let mut u = 0.0;
        for _ in 0..10 {
            u = update(&mut st, &[d], DT, &cfg).u[0];
        }
        // same operation sequence as the law itself
        let mut expect = cfg.d_wall;
        for _ in 0..10 {
            expect += cfg.gamma * DT * (d - cfg.d_wall);
        }
        assert_eq!(u, expect);
        assert!((u - (cfg.d_wall + 10.0 * cfg.gamma * DT * 0.5 * cfg.d_wall)).abs() < 1e-15);
    }

    #[test]
    fn release_relinquishes_unless_latched() {
        let mut cfg = OverrideConfig::default();
        let mut st = OverrideState::new(1);
        for _ in 0..100 {
            update(&mut st, &[1.0], DT, &cfg);
        }
        assert_eq!(update(&mut st, &[0.0], DT, &cfg).u[0], 0.0);

        cfg.latch_override = true;
        let mut st = OverrideState::new(1);
        let mut last = 0.0;
        for _ in 0..100 {
            last = update(&mut st, &[1.0], DT, &cfg).u[0];
        }
        let held = update(&mut st, &[0.0], DT, &cfg).u[0];
        assert!((held - (last - 1.0)).abs() < 1e-12);
        assert!((update(&mut st, &[0.2], DT, &cfg).u[0] - (held + 0.2)).abs() < 1e-12);
        st.reset();
        assert_eq!(update(&mut st, &[0.0], DT, &cfg).u[0], 0.0);
    }

    #[test]
    fn reset_restarts_accumulation() {
        let cfg = OverrideConfig::default();
        let mut st = OverrideState::new(1);
        update(&mut st, &[0.9], DT, &cfg);
        let first = update(&mut st, &[0.9], DT, &cfg).u[0];
        st.reset();
        let again = update(&mut st, &[0.9], DT, &cfg).u[0];
        assert!(again < first);
        assert_eq!(again, cfg.gamma * DT * (0.9 - cfg.d_wall));
    }

    #[test]
    fn config_validation() {
        assert!(OverrideConfig::default().validate().is_ok());
        let bad = OverrideConfig {
            k_wall: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn inside_is_identity(ds in prop::collection::vec(-0.6f64..=0.6, 1..50), pre in -5.0f64..5.0) {
            let cfg = OverrideConfig::default();
            let mut st = OverrideState::new(1);
            st.u_prev[0] = pre;
            for d in ds {
                prop_assert_eq!(update(&mut st, &[d], DT, &cfg).u[0], d);
            }
        }

        #[test]
        fn force_continuous_at_wall(v in -50.0f64..50.0, sign in prop::bool::ANY) {
            let cfg = OverrideConfig::default();
            let s = if sign { 1.0 } else { -1.0 };
            let at = wall_force(s * cfg.d_wall, v, &cfg);
            let just = wall_force(s * cfg.d_wall * (1.0 + 1e-12), v, &cfg);
            prop_assert_eq!(at, cfg.k * s * cfg.d_wall + cfg.b * v);
            prop_assert!((at - just).abs() < 1e-9);
        }

        #[test]
        fn mirror_symmetry(ds in prop::collection::vec(-2.0f64..2.0, 1..40)) {
            let cfg = OverrideConfig::default();
            let (mut a, mut b) = (OverrideState::new(1), OverrideState::new(1));
            for d in ds {
                let p = update(&mut a, &[d], DT, &cfg);
                let n = update(&mut b, &[-d], DT, &cfg);
                prop_assert_eq!(p.u[0], -n.u[0]);
                prop_assert_eq!(p.force[0], -n.force[0]);
            }
        }

        #[test]
        fn beyond_wall_grows_monotonically(d in 0.61f64..3.0) {
            let cfg = OverrideConfig::default();
            let mut st = OverrideState::new(1);
            let mut prev = f64::NEG_INFINITY;
            for _ in 0..200 {
                let u = update(&mut st, &[d], DT, &cfg).u[0];
                prop_assert!(u > prev);
                prev = u;
            }
        }
    }
}
