//! Scripted operators for headless runs.

use crate::dmp::Direction;
use crate::error::{Error, Result};
use crate::executor::{InputMode, OperatorInput, TelemetryFrame};

/// Chooses the device input for the next tick from the latest telemetry
/// (`None` before the first tick).
pub trait OperatorPolicy {
    fn name(&self) -> &str;
    fn reset(&mut self, mode: InputMode);
    fn act(&mut self, last: Option<&TelemetryFrame>) -> OperatorInput;
}

/// Never touches the device: the nominal behavior runs unmodified.
#[derive(Debug, Clone, Default)]
pub struct NullPolicy {
    mode: Option<InputMode>,
}

impl OperatorPolicy for NullPolicy {
    fn name(&self) -> &str {
        "null"
    }

    fn reset(&mut self, mode: InputMode) {
        self.mode = Some(mode);
    }

    fn act(&mut self, _last: Option<&TelemetryFrame>) -> OperatorInput {
        OperatorInput::zero(self.mode.unwrap_or(InputMode::OneDof))
    }
}

/// Holds a fixed displacement on every axis.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub d: Vec<f64>,
    pub reverse: bool,
}

impl OperatorPolicy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn reset(&mut self, _mode: InputMode) {}

    fn act(&mut self, _last: Option<&TelemetryFrame>) -> OperatorInput {
        OperatorInput {
            d: self.d.clone(),
            reverse: self.reverse,
        }
    }
}

/// Replays a recorded input sequence, then holds zero input.
#[derive(Debug, Clone)]
pub struct ScriptedInputs {
    pub inputs: Vec<OperatorInput>,
    cursor: usize,
    mode: InputMode,
}

impl ScriptedInputs {
    pub fn new(inputs: Vec<OperatorInput>) -> Self {
        ScriptedInputs {
            inputs,
            cursor: 0,
            mode: InputMode::OneDof,
        }
    }
}

impl OperatorPolicy for ScriptedInputs {
    fn name(&self) -> &str {
        "scripted"
    }

    fn reset(&mut self, mode: InputMode) {
        self.cursor = 0;
        self.mode = mode;
    }

    fn act(&mut self, _last: Option<&TelemetryFrame>) -> OperatorInput {
        let out = self
            .inputs
            .get(self.cursor)
            .cloned()
            .unwrap_or_else(|| OperatorInput::zero(self.mode));
        self.cursor += 1;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorConfig {
    /// Density under the tool that marks the start of a painted region.
    pub paint_threshold: f64,
    /// Density left behind the tool that triggers a re-pass.
    pub residual_threshold: f64,
    /// How far (surface units) behind the region entry to back up.
    pub backup_margin: f64,
    pub max_retries: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig {
            paint_threshold: 0.02,
            residual_threshold: 0.02,
            backup_margin: 0.02,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    /// Nominal execution, watching for paint.
    Watch,
    /// Passing over a painted region at the given boost level.
    Pass { level: usize },
    /// Backing up before re-passing at the given level.
    Reverse { level: usize },
}

/// Reacts to what was left behind: after a pass leaves residual paint, it
/// reverses past the start of the painted region and re-passes with more
/// force, escalating into the override region if a boosted pass is still
/// insufficient. Only the first input axis is used, which in 1-DOF mode
/// drives the dominant correction (force and tool speed together).
#[derive(Debug, Clone)]
pub struct PosteriorPolicy {
    pub cfg: PosteriorConfig,
    /// Wall position of the device, the proportional ceiling.
    pub d_wall: f64,
    mode: InputMode,
    stage: Stage,
    /// Ticks spent in the current stage.
    dwell: usize,
    /// Extent along u of the painted region being worked on.
    entry_u: f64,
    exit_u: f64,
    last_d: f64,
    /// Reverse presses so far.
    pub reversals: usize,
    /// Highest boost level used.
    pub max_level: usize,
}

/// Ticks after a stage change before the wake is trusted again (the wake
/// follows the direction of travel, which lags a direction switch).
const SETTLE_TICKS: usize = 10;

impl PosteriorPolicy {
    pub fn new(d_wall: f64) -> Self {
        PosteriorPolicy {
            cfg: PosteriorConfig::default(),
            d_wall,
            mode: InputMode::OneDof,
            stage: Stage::Watch,
            dwell: 0,
            entry_u: 0.0,
            exit_u: 0.0,
            last_d: 0.0,
            reversals: 0,
            max_level: 0,
        }
    }

    fn input(&mut self, d0: f64, reverse: bool) -> OperatorInput {
        let mut d = vec![0.0; self.mode.axes()];
        d[0] = d0;
        self.last_d = d0;
        OperatorInput { d, reverse }
    }

    /// Device displacement for a boost level: nominal, the proportional
    /// ceiling, then beyond the wall so the override accumulates. The handle
    /// passes through the wall on its way out, as a real device would.
    fn boost(&self, level: usize) -> f64 {
        match level {
            0 => 0.0,
            1 => self.d_wall,
            _ if self.last_d < self.d_wall => self.d_wall,
            _ => 1.0,
        }
    }

    fn next_stage(&mut self, t: &TelemetryFrame) -> Stage {
        let Some(env) = t.env.as_ref() else {
            return Stage::Watch;
        };
        let cfg = self.cfg;
        let painted = env.local_density > cfg.paint_threshold;
        if painted && t.direction == Direction::Forward {
            self.exit_u = self.exit_u.max(env.u);
        }
        let settled = self.dwell >= SETTLE_TICKS;
        match self.stage {
            Stage::Watch if painted => {
                self.entry_u = env.u;
                self.exit_u = env.u;
                Stage::Pass { level: 0 }
            }
            Stage::Watch => Stage::Watch,
            Stage::Pass { level }
                if settled
                    && t.direction == Direction::Forward
                    && env.wake_density > cfg.residual_threshold
                    && level < cfg.max_retries =>
            {
                self.reversals += 1;
                Stage::Reverse { level: level + 1 }
            }
            Stage::Pass { .. } if !painted && env.u > self.exit_u + cfg.backup_margin => Stage::Watch,
            Stage::Pass { level } => Stage::Pass { level },
            Stage::Reverse { level } if env.u < self.entry_u - cfg.backup_margin => {
                self.max_level = self.max_level.max(level);
                Stage::Pass { level }
            }
            Stage::Reverse { level } => Stage::Reverse { level },
        }
    }
}

impl OperatorPolicy for PosteriorPolicy {
    fn name(&self) -> &str {
        "posterior"
    }

    fn reset(&mut self, mode: InputMode) {
        *self = PosteriorPolicy {
            cfg: self.cfg,
            mode,
            ..PosteriorPolicy::new(self.d_wall)
        };
    }

    fn act(&mut self, last: Option<&TelemetryFrame>) -> OperatorInput {
        let next = last.map_or(Stage::Watch, |t| self.next_stage(t));
        if next == self.stage {
            self.dwell += 1;
        } else {
            self.stage = next;
            self.dwell = 0;
        }
        match self.stage {
            Stage::Watch => self.input(0.0, false),
            Stage::Pass { level } => {
                let d = self.boost(level);
                self.input(d, false)
            }
            Stage::Reverse { .. } => self.input(0.0, true),
        }
    }
}

/// Built-in policies by name: `null` or `posterior`.
pub fn policy_by_name(name: &str, d_wall: f64) -> Result<Box<dyn OperatorPolicy + Send>> {
    match name {
        "null" => Ok(Box::new(NullPolicy::default())),
        "posterior" => Ok(Box::new(PosteriorPolicy::new(d_wall))),
        other => Err(Error::Config(format!("unknown policy `{other}` (expected null or posterior)"))),
    }
}
