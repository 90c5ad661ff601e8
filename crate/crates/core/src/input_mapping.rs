//! Maps low-DOF operator input onto the correction directions of a frame.

use serde::{Deserialize, Serialize};

use crate::corrections::CorrectionFrame;
use crate::formats::{Schema, SpatialAxis};

/// Below this norm (after orthogonalization) a component has no usable
/// spatial direction.
pub const DEGENERATE_NORM: f64 = 1e-6;

/// World directions of the spatial axes at the current pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialContext {
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    /// Direction in which an increase of normal force pushes the tool.
    pub force_dir: [f64; 3],
}

impl Default for SpatialContext {
    fn default() -> Self {
        SpatialContext {
            axis_u: [1.0, 0.0, 0.0],
            axis_v: [0.0, 1.0, 0.0],
            force_dir: [0.0, 0.0, -1.0],
        }
    }
}

impl SpatialContext {
    pub fn direction(&self, axis: SpatialAxis) -> [f64; 3] {
        match axis {
            SpatialAxis::X => [1.0, 0.0, 0.0],
            SpatialAxis::Y => [0.0, 1.0, 0.0],
            SpatialAxis::Z => [0.0, 0.0, 1.0],
            SpatialAxis::SurfaceU => self.axis_u,
            SpatialAxis::SurfaceV => self.axis_v,
            SpatialAxis::SurfaceNormal => self.force_dir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialBasis {
    /// Unit directions; zero for degenerate components.
    pub directions: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Spatial direction of each of the first `k` components: spatially tagged
/// coefficients are summed per axis, orthogonalized against the earlier
/// directions and normalized.
pub fn spatial_basis(frame: &CorrectionFrame, schema: &Schema, ctx: &SpatialContext, k: usize) -> SpatialBasis {
    let mut basis = SpatialBasis {
        directions: Vec::with_capacity(k),
        valid: Vec::with_capacity(k),
    };
    let mut ortho: Vec<[f64; 3]> = Vec::with_capacity(k);
    for a in frame.components.iter().take(k) {
        let mut p = [0.0; 3];
        for (coef, ch) in a.iter().zip(&schema.channels) {
            if let Some(axis) = ch.spatial_axis {
                let dir = ctx.direction(axis);
                for i in 0..3 {
                    p[i] += coef * dir[i];
                }
            }
        }
        // Projections use the orthogonalized vectors before normalization;
        // the result is the same but hand-checkable cases stay exact.
        for q in &ortho {
            let c = dot3(&p, q) / dot3(q, q);
            for i in 0..3 {
                p[i] -= c * q[i];
            }
        }
        let norm = dot3(&p, &p).sqrt();
        if norm < DEGENERATE_NORM {
            basis.directions.push([0.0; 3]);
            basis.valid.push(false);
        } else {
            basis.directions.push(p.map(|x| x / norm));
            basis.valid.push(true);
            ortho.push(p);
        }
    }
    basis
}

/// `sum_k (u . d_k) * scaled_k` over the valid components.
pub fn map_input_3dof(u: &[f64; 3], basis: &SpatialBasis, frame: &CorrectionFrame) -> Vec<f64> {
    let m = frame.mean.len();
    let mut dy = vec![0.0; m];
    for ((d, ok), scaled) in basis.directions.iter().zip(&basis.valid).zip(&frame.scaled) {
        if !ok {
            continue;
        }
        let c = dot3(u, d);
        for (y, s) in dy.iter_mut().zip(scaled) {
            *y += c * s;
        }
    }
    dy
}

/// `u * scaled_1`.
pub fn map_input_1dof(u: f64, frame: &CorrectionFrame) -> Vec<f64> {
    match frame.scaled.first() {
        Some(s) => s.iter().map(|x| u * x).collect(),
        None => vec![0.0; frame.mean.len()],
    }
}
