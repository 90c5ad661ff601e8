//! Synthetic demonstrations with planted, known variance structure.
//!
//! Every demonstration approaches a curved panel, makes one pass along the
//! surface `u` direction while pressing, and retracts. During the pass each
//! demonstration is displaced from the common base by
//! `sum_k c_ik * amplitude_k * direction_k` in normalized in-contact
//! coordinates `(u, v, f_n, v_tool, dn, theta_u, theta_v)`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{Demo, DemoSet, Schema};
use crate::sim_env::check_major;
use crate::surface::{Point3, SurfaceModel};

pub const SYNTH_FORMAT: &str = "csa-synth";
pub const SYNTH_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceSpec {
    /// Cylindrical panel with its axis along +y.
    CylinderPatch {
        radius: f64,
        half_angle: f64,
        length: f64,
        n_ctrl: usize,
    },
    Model(SurfaceModel),
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<SurfaceModel> {
        match self {
            SurfaceSpec::CylinderPatch {
                radius,
                half_angle,
                length,
                n_ctrl,
            } => SurfaceModel::cylinder_patch(*radius, *half_angle, *length, *n_ctrl),
            SurfaceSpec::Model(m) => {
                m.validate()?;
                Ok(m.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub approach_samples: usize,
    pub contact_samples: usize,
    pub retract_samples: usize,
    /// Stand-off distance (m) along the normal before and after contact.
    pub standoff: f64,
    pub u_start: f64,
    pub u_end: f64,
    pub v_path: f64,
    /// Nominal pressing force (N).
    pub contact_force: f64,
    /// Nominal tool speed (V).
    pub tool_speed: f64,
}

impl Default for Timeline {
    fn default() -> Self {
        Timeline {
            approach_samples: 150,
            contact_samples: 400,
            retract_samples: 150,
            standoff: 0.15,
            u_start: 0.1,
            u_end: 0.9,
            v_path: 0.5,
            contact_force: 10.0,
            tool_speed: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedComponent {
    /// Channel name to coefficient in normalized in-contact coordinates.
    /// Normalized to unit length on use.
    pub direction: BTreeMap<String, f64>,
    /// Standard deviation of the displacement along `direction`
    /// (normalized units).
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub format: String,
    pub version: String,
    pub task: String,
    pub seed: u64,
    pub num_demos: usize,
    pub capture_rate_hz: f64,
    pub surface: SurfaceSpec,
    pub timeline: Timeline,
    pub components: Vec<PlantedComponent>,
    /// Standard deviation of the measurement noise on force and tool speed
    /// (normalized units).
    pub noise: f64,
    /// Relative standard deviation of each demonstration's duration.
    #[serde(default)]
    pub timing_jitter: f64,
}

fn barrel() -> SurfaceSpec {
    SurfaceSpec::CylinderPatch {
        radius: 1.0,
        half_angle: 0.5,
        length: 1.0,
        n_ctrl: 8,
    }
}

fn dir(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(n, c)| (n.to_string(), *c)).collect()
}

impl SynthSpec {
    fn base(task: &str, seed: u64, components: Vec<PlantedComponent>) -> SynthSpec {
        SynthSpec {
            format: SYNTH_FORMAT.into(),
            version: SYNTH_VERSION.into(),
            task: task.into(),
            seed,
            num_demos: 8,
            capture_rate_hz: 100.0,
            surface: barrel(),
            timeline: Timeline::default(),
            components,
            noise: 1e-4,
            timing_jitter: 0.0,
        }
    }

    /// Cleaning pass dominated by one force and tool-speed coordination
    /// (about 88 % of the variance) with a small lateral drift.
    pub fn single_coordination(seed: u64) -> SynthSpec {
        let a1 = 0.125;
        SynthSpec::base(
            "cleaning pass, force and tool speed coordination",
            seed,
            vec![
                PlantedComponent {
                    direction: dir(&[("f_n", 0.8), ("v_tool", 0.6)]),
                    amplitude: a1,
                },
                PlantedComponent {
                    direction: dir(&[("v", 1.0)]),
                    amplitude: a1 * (0.12f64 / 0.88).sqrt(),
                },
            ],
        )
    }

    /// Cleaning pass with an 80 / 15 / 5 split between force and tool speed,
    /// lateral drift and tool tilt.
    pub fn two_coordination(seed: u64) -> SynthSpec {
        let a1 = 0.125;
        SynthSpec::base(
            "cleaning pass, coordination plus lateral drift",
            seed,
            vec![
                PlantedComponent {
                    direction: dir(&[("f_n", 0.8), ("v_tool", 0.6)]),
                    amplitude: a1,
                },
                PlantedComponent {
                    direction: dir(&[("v", 1.0)]),
                    amplitude: a1 * (15.0f64 / 80.0).sqrt(),
                },
                PlantedComponent {
                    direction: dir(&[("theta_v", 1.0)]),
                    amplitude: a1 * (5.0f64 / 80.0).sqrt(),
                },
            ],
        )
    }

    /// Unit planted directions over [`Schema::in_contact`].
    pub fn directions(&self) -> Result<Vec<Vec<f64>>> {
        let schema = Schema::in_contact();
        self.components
            .iter()
            .map(|c| {
                let mut d = vec![0.0; schema.len()];
                for (name, coef) in &c.direction {
                    let i = schema
                        .index_of(name)
                        .ok_or_else(|| Error::Config(format!("unknown in-contact channel `{name}`")))?;
                    if name == crate::alignment::RATE_CHANNEL {
                        return Err(Error::Config("the execution-rate channel cannot be planted".into()));
                    }
                    d[i] += coef;
                }
                let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(n > 0.0) {
                    return Err(Error::Config("planted direction is zero".into()));
                }
                Ok(d.into_iter().map(|x| x / n).collect())
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != SYNTH_FORMAT {
            return Err(Error::Config(format!("expected format `{SYNTH_FORMAT}`, got `{}`", self.format)));
        }
        check_major("synth spec", &self.version, SYNTH_VERSION)?;
        if self.num_demos < 2 {
            return Err(Error::Config("num_demos must be at least 2".into()));
        }
        if !self.components.is_empty() && self.num_demos <= self.components.len() {
            return Err(Error::Config(format!(
                "{} planted components need more than {} demonstrations",
                self.components.len(),
                self.num_demos
            )));
        }
        if !(self.capture_rate_hz > 0.0) || !(self.noise >= 0.0) || !(self.timing_jitter >= 0.0) {
            return Err(Error::Config("capture rate must be positive; noise and jitter non-negative".into()));
        }
        if self.components.iter().any(|c| !(c.amplitude >= 0.0)) {
            return Err(Error::Config("amplitudes must be non-negative".into()));
        }
        let t = &self.timeline;
        if t.approach_samples < 3 || t.contact_samples < 3 || t.retract_samples < 3 {
            return Err(Error::Config("every phase needs at least 3 samples".into()));
        }
        let dirs = self.directions()?;
        for i in 0..dirs.len() {
            for j in 0..i {
                let d: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum();
                if d.abs() > 1e-9 {
                    return Err(Error::Config(format!("planted directions {j} and {i} are not orthogonal")));
                }
            }
        }
        Ok(())
    }
}

pub fn load_synth_spec(path: impl AsRef<Path>) -> Result<SynthSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SynthSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Unit directions over the in-contact schema.
    pub directions: Vec<Vec<f64>>,
    pub amplitudes: Vec<f64>,
    /// `coefficients[demo][component]`, zero mean and unit population
    /// variance per component, uncorrelated across components.
    pub coefficients: Vec<Vec<f64>>,
    /// Share of the planted variance carried by each component.
    pub expected_fractions: Vec<f64>,
    /// Contact sample range `[start, end)` of each demonstration.
    pub contact: Vec<(usize, usize)>,
    pub surface: SurfaceModel,
}

fn min_jerk(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 3.0 {
            return z;
        }
    }
}

/// Centers each coefficient column, orthogonalizes the columns and scales
/// them to unit population variance.
fn whiten(coef: &mut [Vec<f64>], k: usize) {
    let n = coef.len();
    for j in 0..k {
        let mean = coef.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        coef.iter_mut().for_each(|r| r[j] -= mean);
        for p in 0..j {
            let proj = coef.iter().map(|r| r[j] * r[p]).sum::<f64>() / n as f64;
            coef.iter_mut().for_each(|r| r[j] -= proj * r[p]);
        }
        let std = (coef.iter().map(|r| r[j] * r[j]).sum::<f64>() / n as f64).sqrt();
        if std > 0.0 {
            coef.iter_mut().for_each(|r| r[j] /= std);
        }
    }
}

/// Tool orientation whose z axis is tilted from the outward normal by the
/// surface angles `(theta_u, theta_v)`.
fn tool_quaternion(frame: &crate::surface::SurfaceFrame, theta_u: f64, theta_v: f64) -> UnitQuaternion<f64> {
    let (n, au, av) = (frame.normal(), frame.axis_u(), frame.axis_v());
    let z = (n + au * theta_v.tan() - av * theta_u.tan()).normalize();
    let x = (au - z * au.dot(&z)).normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    UnitQuaternion::from_rotation_matrix(&rot)
}

fn push_quat(row: &mut Vec<f64>, q: &UnitQuaternion<f64>, prev: Option<[f64; 4]>) {
    let mut c = [q.i, q.j, q.k, q.w];
    let flip = match prev {
        Some(p) => p.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() < 0.0,
        None => c[3] < 0.0,
    };
    if flip {
        c = c.map(|x| -x);
    }
    row.extend_from_slice(&c);
}

/// Generates the demonstration set and the record of what was planted.
pub fn generate(spec: &SynthSpec) -> Result<(DemoSet, GroundTruth)> {
    spec.validate()?;
    let surface = spec.surface.build()?;
    let schema = Schema::raw_capture();
    let contact_schema = Schema::in_contact();
    let ranges = contact_schema.ranges();
    let directions = spec.directions()?;
    let k = directions.len();
    let n = spec.num_demos;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut coefficients: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| truncated_normal(&mut rng)).collect()).collect();
    whiten(&mut coefficients, k);

    let tl = &spec.timeline;
    let dt = 1.0 / spec.capture_rate_hz;
    let idx = |name: &str| contact_schema.index_of(name).expect("in-contact channel");
    let (iu, iv, iff, isp, itu, itv) = (idx("u"), idx("v"), idx("f_n"), idx("v_tool"), idx("theta_u"), idx("theta_v"));

    let mut demos = Vec::with_capacity(n);
    let mut contact = Vec::with_capacity(n);
    for coef in &coefficients {
        let mut stretch = || {
            if spec.timing_jitter > 0.0 {
                (1.0 + spec.timing_jitter * truncated_normal(&mut rng)).max(0.2)
            } else {
                1.0
            }
        };
        let na = ((tl.approach_samples as f64 * stretch()).round() as usize).max(3);
        let nc = ((tl.contact_samples as f64 * stretch()).round() as usize).max(3);
        let nr = ((tl.retract_samples as f64 * stretch()).round() as usize).max(3);

        // planted displacement in raw units (constant over the pass)
        let mut offset = vec![0.0; contact_schema.len()];
        for (j, d) in directions.iter().enumerate() {
            for c in 0..offset.len() {
                offset[c] += coef[j] * spec.components[j].amplitude * d[c] * ranges[c];
            }
        }

        let contact_state = |t: f64| -> [f64; 6] {
            let u = tl.u_start + (tl.u_end - tl.u_start) * min_jerk(t);
            [
                u + offset[iu],
                tl.v_path + offset[iv],
                tl.contact_force + offset[iff],
                tl.tool_speed + offset[isp],
                offset[itu],
                offset[itv],
            ]
        };
        let pose = |s: &[f64; 6]| -> Result<(Point3, UnitQuaternion<f64>, Point3)> {
            let (u, v) = (s[0].clamp(0.0, 1.0), s[1].clamp(0.0, 1.0));
            let frame = surface.frame(u, v)?;
            Ok((surface.evaluate(u, v)?, tool_quaternion(&frame, s[4], s[5]), frame.normal()))
        };

        let total = na + nc + nr;
        let mut samples = Vec::with_capacity(total);
        let mut prev_q: Option<[f64; 4]> = None;
        let noise = |rng: &mut ChaCha8Rng, range: f64| -> f64 {
            if spec.noise > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                spec.noise * range * z
            } else {
                0.0
            }
        };

        let first = contact_state(0.0);
        let (p0, q0, n0) = pose(&first)?;
        let last = contact_state(1.0);
        let (p1, q1, n1) = pose(&last)?;
        let approach_from = p0 + n0 * tl.standoff;
        let retract_to = p1 + n1 * tl.standoff;

        for i in 0..total {
            let mut row = Vec::with_capacity(schema.len());
            let (p, q, f, v_tool) = if i < na {
                let s = min_jerk(i as f64 / (na - 1) as f64);
                (approach_from + (p0 - approach_from) * s, q0, 0.0, tl.tool_speed)
            } else if i < na + nc {
                let st = contact_state((i - na) as f64 / (nc - 1) as f64);
                let (p, q, _) = pose(&st)?;
                (p, q, st[2], st[3])
            } else {
                let s = min_jerk((i - na - nc) as f64 / (nr - 1) as f64);
                (p1 + (retract_to - p1) * s, q1, 0.0, tl.tool_speed)
            };
            row.extend_from_slice(&[p.x, p.y, p.z]);
            push_quat(&mut row, &q, prev_q);
            prev_q = Some([row[3], row[4], row[5], row[6]]);
            row.push((f + noise(&mut rng, ranges[iff])).max(0.0));
            row.push(v_tool + noise(&mut rng, ranges[isp]));
            samples.push(row);
        }
        demos.push(Demo {
            timestamps: (0..total).map(|i| i as f64 * dt).collect(),
            samples,
        });
        contact.push((na, na + nc));
    }

    let energy: f64 = spec.components.iter().map(|c| c.amplitude * c.amplitude).sum();
    let expected_fractions = spec
        .components
        .iter()
        .map(|c| if energy > 0.0 { c.amplitude * c.amplitude / energy } else { 0.0 })
        .collect();
    let set = DemoSet {
        task: spec.task.clone(),
        capture_rate_hz: spec.capture_rate_hz,
        schema,
        demos,
    };
    set.validate()?;
    Ok((
        set,
        GroundTruth {
            directions,
            amplitudes: spec.components.iter().map(|c| c.amplitude).collect(),
            coefficients,
            expected_fractions,
            contact,
            surface,
        },
    ))
}
