//! Simulated surface-cleaning task: a paint density grid over the surface
//! parameters, a removal law driven by force and tool speed, and obstacles.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCENARIO_FORMAT: &str = "csa-scenario";
pub const SCENARIO_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalParams {
    /// Density removed per (N above threshold) * (tool speed unit) * s.
    pub rate: f64,
    /// Normal force (N) below which nothing is removed.
    pub force_threshold: f64,
}

impl Default for RemovalParams {
    fn default() -> Self {
        RemovalParams {
            rate: 0.1,
            force_threshold: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaintPatch {
    pub u: f64,
    pub v: f64,
    pub radius: f64,
    pub density: f64,
}

/// Seeded random placement of patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPatches {
    pub count: usize,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
    pub radius_range: [f64; 2],
    pub density_range: [f64; 2],
    /// Minimum center distance between generated patches.
    #[serde(default)]
    pub min_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PaintSpec {
    pub base_density: f64,
    pub patches: Vec<PaintPatch>,
    pub random: Option<RandomPatches>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    /// Closed polygon in (u, v).
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format: String,
    pub version: String,
    pub name: String,
    pub seed: u64,
    /// Grid resolution along u and v.
    pub grid: [usize; 2],
    /// Footprint radius in parameter units.
    pub tool_radius: f64,
    pub removal: RemovalParams,
    pub paint: PaintSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.format != SCENARIO_FORMAT {
            return Err(Error::Scenario(format!("expected format `{SCENARIO_FORMAT}`, got `{}`", self.format)));
        }
        check_major("scenario", &self.version, SCENARIO_VERSION)?;
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return Err(Error::Scenario("grid must be non-empty".into()));
        }
        if !(self.tool_radius > 0.0) {
            return Err(Error::Scenario("tool_radius must be positive".into()));
        }
        if !(self.removal.rate >= 0.0) || !(self.removal.force_threshold >= 0.0) {
            return Err(Error::Scenario("removal parameters must be non-negative".into()));
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.paint.base_density) || self.paint.patches.iter().any(|p| !in_unit(p.density)) {
            return Err(Error::Scenario("paint densities must lie in [0, 1]".into()));
        }
        if let Some(r) = &self.paint.random {
            if !(in_unit(r.density_range[0]) && in_unit(r.density_range[1])) || r.density_range[0] > r.density_range[1] {
                return Err(Error::Scenario("random density range must lie in [0, 1]".into()));
            }
            for range in [r.u_range, r.v_range, r.radius_range] {
                if range[0] > range[1] {
                    return Err(Error::Scenario(format!("empty range {range:?}")));
                }
            }
        }
        if self.obstacles.iter().any(|o| o.polygon.len() < 3) {
            return Err(Error::Scenario("obstacle polygons need at least 3 vertices".into()));
        }
        Ok(())
    }

    /// All patches, explicit ones first, then the seeded random ones.
    pub fn patches(&self) -> Vec<PaintPatch> {
        let mut out = self.paint.patches.clone();
        if let Some(r) = &self.paint.random {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let draw = |rng: &mut ChaCha8Rng, range: [f64; 2]| {
                if range[1] > range[0] {
                    rng.random_range(range[0]..range[1])
                } else {
                    range[0]
                }
            };
            let mut placed: Vec<PaintPatch> = Vec::new();
            let mut attempts = 0;
            while placed.len() < r.count && attempts < 10_000 {
                attempts += 1;
                let p = PaintPatch {
                    u: draw(&mut rng, r.u_range),
                    v: draw(&mut rng, r.v_range),
                    radius: draw(&mut rng, r.radius_range),
                    density: draw(&mut rng, r.density_range),
                };
                let clear = placed
                    .iter()
                    .all(|q| ((p.u - q.u).powi(2) + (p.v - q.v).powi(2)).sqrt() >= r.min_separation);
                if clear {
                    placed.push(p);
                }
            }
            out.extend(placed);
        }
        out
    }

    pub fn build_field(&self) -> Result<PaintField> {
        self.validate()?;
        let [nu, nv] = self.grid;
        let mut field = PaintField {
            nu,
            nv,
            density: vec![self.paint.base_density; nu * nv],
            obstacle: vec![false; nu * nv],
        };
        for p in self.patches() {
            for idx in field.cells_in_disc(p.u, p.v, p.radius) {
                field.density[idx] = field.density[idx].max(p.density);
            }
        }
        for o in &self.obstacles {
            for j in 0..nv {
                for i in 0..nu {
                    let (u, v) = field.cell_center(i, j);
                    if point_in_polygon(u, v, &o.polygon) {
                        field.obstacle[j * nu + i] = true;
                    }
                }
            }
        }
        Ok(field)
    }
}

pub(crate) fn check_major(what: &'static str, found: &str, supported: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().map(str::to_string);
    if major(found) != major(supported) || found.split('.').count() != 3 {
        return Err(Error::Version {
            what,
            found: found.to_string(),
            supported: supported.to_string(),
        });
    }
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let s: Scenario = serde_json::from_str(text)?;
    s.validate()?;
    Ok(s)
}

fn point_in_polygon(u: f64, v: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let ([ui, vi], [uj, vj]) = (poly[i], poly[j]);
        if (vi > v) != (vj > v) && u < (uj - ui) * (v - vi) / (vj - vi) + ui {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaintField {
    pub nu: usize,
    pub nv: usize,
    /// Row-major over v: `density[j * nu + i]`.
    pub density: Vec<f64>,
    pub obstacle: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    pub u: f64,
    pub v: f64,
    pub f_n: f64,
    pub v_tool: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepEvents {
    /// Total density removed this step.
    pub removed: f64,
    /// Mean density under the footprint after removal.
    pub local_density: f64,
    pub collision: bool,
}

impl PaintField {
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) / self.nu as f64, (j as f64 + 0.5) / self.nv as f64)
    }

    /// Indices of the cells whose centers lie within `r` of `(u, v)`.
    pub fn cells_in_disc(&self, u: f64, v: f64, r: f64) -> Vec<usize> {
        let (nu, nv) = (self.nu as f64, self.nv as f64);
        let i0 = ((u - r) * nu - 0.5).floor().max(0.0) as usize;
        let i1 = (((u + r) * nu - 0.5).ceil().max(0.0) as usize).min(self.nu - 1);
        let j0 = ((v - r) * nv - 0.5).floor().max(0.0) as usize;
        let j1 = (((v + r) * nv - 0.5).ceil().max(0.0) as usize).min(self.nv - 1);
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                let (cu, cv) = self.cell_center(i, j);
                if (cu - u).powi(2) + (cv - v).powi(2) <= r * r {
                    out.push(j * self.nu + i);
                }
            }
        }
        out
    }

    pub fn mean_density_in_disc(&self, u: f64, v: f64, r: f64) -> f64 {
        let cells = self.cells_in_disc(u, v, r);
        if cells.is_empty() {
            0.0
        } else {
            cells.iter().map(|&i| self.density[i]).sum::<f64>() / cells.len() as f64
        }
    }

    pub fn total(&self) -> f64 {
        self.density.iter().sum()
    }
}

/// Applies the removal law for one step of length `dt`.
pub fn step_env(
    field: &mut PaintField,
    tool: &ToolState,
    dt: f64,
    tool_radius: f64,
    removal: &RemovalParams,
) -> StepEvents {
    let cells = field.cells_in_disc(tool.u, tool.v, tool_radius);
    let amount = removal.rate * (tool.f_n - removal.force_threshold).max(0.0) * tool.v_tool.max(0.0) * dt;
    let mut ev = StepEvents::default();
    for &i in &cells {
        let before = field.density[i];
        let after = (before - amount).max(0.0);
        field.density[i] = after;
        ev.removed += before - after;
        ev.collision |= field.obstacle[i];
    }
    if !cells.is_empty() {
        ev.local_density = cells.iter().map(|&i| field.density[i]).sum::<f64>() / cells.len() as f64;
    }
    ev
}

/// `1 - sum(current) / sum(initial)`; 1 when nothing was painted.
pub fn removal_fraction(field: &PaintField, initial: &PaintField) -> Result<f64> {
    if field.nu != initial.nu || field.nv != initial.nv || field.density.len() != initial.density.len() {
        return Err(Error::Scenario("paint grids differ in size".into()));
    }
    let init = initial.total();
    if init <= 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - field.total() / init).clamp(0.0, 1.0))
}
