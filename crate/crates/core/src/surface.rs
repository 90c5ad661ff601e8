//! Tensor-product B-spline surfaces: evaluation, local frames and closest
//! point projection.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

const DOMAIN_EPS: f64 = 1e-12;

/// Clamped, non-rational B-spline surface over `(u, v) ∈ [0,1]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub degree_u: usize,
    pub degree_v: usize,
    pub knots_u: Vec<f64>,
    pub knots_v: Vec<f64>,
    /// `control_points[i][j]`, `i` along u and `j` along v.
    pub control_points: Vec<Vec<[f64; 3]>>,
}

/// Position and partial derivatives up to second order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub r: Point3,
    pub ru: Point3,
    pub rv: Point3,
    pub ruu: Point3,
    pub ruv: Point3,
    pub rvv: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFrame {
    pub normal: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
}

impl SurfaceFrame {
    pub fn normal(&self) -> Point3 {
        Point3::from(self.normal)
    }
    pub fn axis_u(&self) -> Point3 {
        Point3::from(self.axis_u)
    }
    pub fn axis_v(&self) -> Point3 {
        Point3::from(self.axis_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub distance: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    /// Tangential residual (m) at which Newton stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Grid resolution of the fallback seed search.
    pub fallback_grid: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            tolerance: 1e-10,
            max_iterations: 60,
            fallback_grid: 40,
        }
    }
}

fn is_clamped(knots: &[f64], degree: usize) -> bool {
    let n = knots.len();
    n >= 2 * (degree + 1)
        && knots[..=degree].iter().all(|&k| k == 0.0)
        && knots[n - degree - 1..].iter().all(|&k| k == 1.0)
}

/// Uniform clamped knot vector on [0,1] for `n_ctrl` control points.
pub fn clamped_uniform_knots(n_ctrl: usize, degree: usize) -> Vec<f64> {
    let interior = n_ctrl - degree - 1;
    let mut knots = vec![0.0; degree + 1];
    knots.extend((1..=interior).map(|i| i as f64 / (interior + 1) as f64));
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    knots
}

fn find_span(knots: &[f64], degree: usize, n_ctrl: usize, t: f64) -> usize {
    if t >= knots[n_ctrl] {
        return n_ctrl - 1;
    }
    let (mut low, mut high) = (degree, n_ctrl);
    let mut mid = (low + high) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            high = mid;
        } else {
            low = mid;
        }
        mid = (low + high) / 2;
    }
    mid
}

/// Non-zero basis functions and their derivatives up to `order` at `t`
/// (`ders[k][j]` is the k-th derivative of N_{span-p+j}).
fn basis_derivatives(knots: &[f64], degree: usize, span: usize, t: f64, order: usize) -> Vec<Vec<f64>> {
    let p = degree;
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; order + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=order.min(p) {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        if k > p {
            row.iter_mut().for_each(|x| *x = 0.0);
            continue;
        }
        row.iter_mut().for_each(|x| *x *= factor);
        factor *= (p - k) as f64;
    }
    ders
}

impl SurfaceModel {
    pub fn new(
        degree_u: usize,
        degree_v: usize,
        knots_u: Vec<f64>,
        knots_v: Vec<f64>,
        control_points: Vec<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        let s = SurfaceModel {
            degree_u,
            degree_v,
            knots_u,
            knots_v,
            control_points,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree_u < 1 || self.degree_v < 1 {
            return Err(Error::Surface("degrees must be at least 1".into()));
        }
        let nu = self.control_points.len();
        let nv = self.control_points.first().map_or(0, Vec::len);
        if nu == 0 || nv == 0 || self.control_points.iter().any(|row| row.len() != nv) {
            return Err(Error::Surface("control grid must be a non-empty rectangle".into()));
        }
        for (name, knots, deg, n) in [
            ("u", &self.knots_u, self.degree_u, nu),
            ("v", &self.knots_v, self.degree_v, nv),
        ] {
            if knots.len() != n + deg + 1 {
                return Err(Error::Surface(format!(
                    "{name}: {} knots for {n} control points of degree {deg} (need {})",
                    knots.len(),
                    n + deg + 1
                )));
            }
            if knots.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Surface(format!("{name}: knot vector decreases")));
            }
            if !is_clamped(knots, deg) {
                return Err(Error::Surface(format!(
                    "{name}: knot vector must be clamped to [0,1]"
                )));
            }
        }
        if self
            .control_points
            .iter()
            .flatten()
            .flatten()
            .any(|c| !c.is_finite())
        {
            return Err(Error::Surface("non-finite control point".into()));
        }
        Ok(())
    }

    fn n_u(&self) -> usize {
        self.control_points.len()
    }

    fn n_v(&self) -> usize {
        self.control_points[0].len()
    }

    fn check_domain(u: f64, v: f64) -> Result<(f64, f64)> {
        let ok = |t: f64| (-DOMAIN_EPS..=1.0 + DOMAIN_EPS).contains(&t);
        if !(ok(u) && ok(v)) {
            return Err(Error::OutOfDomain { u, v });
        }
        Ok((u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)))
    }

    /// Position and first/second partial derivatives at `(u, v)`.
    pub fn derivatives(&self, u: f64, v: f64) -> Result<SurfacePoint> {
        let (u, v) = Self::check_domain(u, v)?;
        let (pu, pv) = (self.degree_u, self.degree_v);
        let su = find_span(&self.knots_u, pu, self.n_u(), u);
        let sv = find_span(&self.knots_v, pv, self.n_v(), v);
        let bu = basis_derivatives(&self.knots_u, pu, su, u, 2);
        let bv = basis_derivatives(&self.knots_v, pv, sv, v, 2);
        let mut out = [[Point3::zeros(); 3]; 3];
        for (k, bu_k) in bu.iter().enumerate() {
            for (l, bv_l) in bv.iter().enumerate().take(3 - k) {
                let mut acc = Point3::zeros();
                for (i, nu) in bu_k.iter().enumerate() {
                    let row = &self.control_points[su - pu + i];
                    let mut tmp = Point3::zeros();
                    for (j, nv) in bv_l.iter().enumerate() {
                        tmp += Point3::from(row[sv - pv + j]) * *nv;
                    }
                    acc += tmp * *nu;
                }
                out[k][l] = acc;
            }
        }
        Ok(SurfacePoint {
            r: out[0][0],
            ru: out[1][0],
            rv: out[0][1],
            ruu: out[2][0],
            ruv: out[1][1],
            rvv: out[0][2],
        })
    }

    pub fn evaluate(&self, u: f64, v: f64) -> Result<Point3> {
        Ok(self.derivatives(u, v)?.r)
    }

    /// Unit normal `ru × rv`, unit `ru` and the completing tangent
    /// `normal × axis_u`.
    pub fn frame(&self, u: f64, v: f64) -> Result<SurfaceFrame> {
        let d = self.derivatives(u, v)?;
        frame_from_partials(&d.ru, &d.rv).ok_or(Error::DegenerateFrame { u, v })
    }

    /// Nearest point parameters starting the search at `seed`.
    pub fn project(&self, p: &Point3, seed: (f64, f64)) -> Result<(f64, f64)> {
        self.project_with(p, seed, &ProjectionOptions::default())
            .map(|pr| (pr.u, pr.v))
    }

    pub fn project_with(
        &self,
        p: &Point3,
        seed: (f64, f64),
        opts: &ProjectionOptions,
    ) -> Result<Projection> {
        let seed = Self::check_domain(seed.0, seed.1)?;
        if let Some(pr) = self.newton(p, seed, opts)? {
            return Ok(pr);
        }
        let seed = self.grid_seed(p, opts.fallback_grid)?;
        if let Some(pr) = self.newton(p, seed, opts)? {
            return Ok(pr);
        }
        let distance = (self.evaluate(seed.0, seed.1)? - p).norm();
        Err(Error::Projection {
            point: [p.x, p.y, p.z],
            distance,
        })
    }

    fn grid_seed(&self, p: &Point3, n: usize) -> Result<(f64, f64)> {
        let mut best = (f64::INFINITY, (0.0, 0.0));
        for i in 0..=n {
            for j in 0..=n {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                let d = (self.evaluate(u, v)? - p).norm_squared();
                if d < best.0 {
                    best = (d, (u, v));
                }
            }
        }
        Ok(best.1)
    }

    /// Damped Newton iteration on the tangential residual. Returns `None`
    /// when the iteration budget is exhausted.
    fn newton(&self, p: &Point3, seed: (f64, f64), opts: &ProjectionOptions) -> Result<Option<Projection>> {
        let (mut u, mut v) = seed;
        let mut d = self.derivatives(u, v)?;
        for it in 0..=opts.max_iterations {
            let r = d.r - p;
            let grad = Vector2::new(d.ru.dot(&r), d.rv.dot(&r));
            let (res_u, res_v) = tangential_residual(u, v, &d, &grad);
            if res_u.abs() < opts.tolerance && res_v.abs() < opts.tolerance {
                return Ok(Some(Projection {
                    u,
                    v,
                    distance: r.norm(),
                    iterations: it,
                }));
            }
            if it == opts.max_iterations {
                break;
            }
            let hess = Matrix2::new(
                d.ru.dot(&d.ru) + r.dot(&d.ruu),
                d.ru.dot(&d.rv) + r.dot(&d.ruv),
                d.ru.dot(&d.rv) + r.dot(&d.ruv),
                d.rv.dot(&d.rv) + r.dot(&d.rvv),
            );
            let step = match hess.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    // indefinite Hessian: fall back to a Gauss-Newton step
                    let gn = Matrix2::new(
                        d.ru.dot(&d.ru),
                        d.ru.dot(&d.rv),
                        d.ru.dot(&d.rv),
                        d.rv.dot(&d.rv),
                    );
                    match gn.try_inverse() {
                        Some(inv) => -(inv * grad),
                        None => return Ok(None),
                    }
                }
            };
            let f0 = r.norm_squared();
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let nu = (u + lambda * step.x).clamp(0.0, 1.0);
                let nv = (v + lambda * step.y).clamp(0.0, 1.0);
                let nd = self.derivatives(nu, nv)?;
                if (nd.r - p).norm_squared() <= f0 {
                    accepted = Some((nu, nv, nd));
                    break;
                }
                lambda *= 0.5;
            }
            let Some((nu, nv, nd)) = accepted else {
                return Ok(None);
            };
            if nu == u && nv == v {
                // no representable progress left; accept a near-stationary point
                let (ru, rv) = tangential_residual(u, v, &d, &grad);
                if ru.abs().max(rv.abs()) < 1e3 * opts.tolerance {
                    return Ok(Some(Projection {
                        u,
                        v,
                        distance: r.norm(),
                        iterations: it + 1,
                    }));
                }
                return Ok(None);
            }
            u = nu;
            v = nv;
            d = nd;
        }
        Ok(None)
    }

    /// Flat bilinear patch `origin + u·edge_u + v·edge_v`.
    pub fn plane(origin: [f64; 3], edge_u: [f64; 3], edge_v: [f64; 3]) -> SurfaceModel {
        let o = Point3::from(origin);
        let (a, b) = (Point3::from(edge_u), Point3::from(edge_v));
        let pt = |x: Point3| [x.x, x.y, x.z];
        SurfaceModel {
            degree_u: 1,
            degree_v: 1,
            knots_u: vec![0.0, 0.0, 1.0, 1.0],
            knots_v: vec![0.0, 0.0, 1.0, 1.0],
            control_points: vec![vec![pt(o), pt(o + b)], vec![pt(o + a), pt(o + a + b)]],
        }
    }

    /// Parabolic cylinder `z = c·x²` for `x ∈ [-a, a]`, `y ∈ [0, length]`.
    /// Exactly representable: `x = a(2u - 1)`, `y = v·length`.
    pub fn parabolic_cylinder(a: f64, c: f64, length: f64) -> SurfaceModel {
        let h = c * a * a;
        let rows = [[-a, h], [0.0, -h], [a, h]];
        SurfaceModel {
            degree_u: 2,
            degree_v: 1,
            knots_u: vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            knots_v: vec![0.0, 0.0, 1.0, 1.0],
            control_points: rows
                .iter()
                .map(|&[x, z]| vec![[x, 0.0, z], [x, length, z]])
                .collect(),
        }
    }

    /// Cubic approximation of a circular cylinder section (fuselage barrel
    /// top): axis along +y, angle `θ ∈ [-half_angle, half_angle]` measured
    /// from +z, built by interpolating the arc at the Greville abscissae.
    pub fn cylinder_patch(radius: f64, half_angle: f64, length: f64, n_ctrl: usize) -> Result<SurfaceModel> {
        let degree = 3;
        if n_ctrl < degree + 1 {
            return Err(Error::Surface(format!("need at least {} control points", degree + 1)));
        }
        let knots = clamped_uniform_knots(n_ctrl, degree);
        let greville: Vec<f64> = (0..n_ctrl)
            .map(|i| knots[i + 1..=i + degree].iter().sum::<f64>() / degree as f64)
            .collect();
        let mut basis = DMatrix::<f64>::zeros(n_ctrl, n_ctrl);
        for (row, &t) in greville.iter().enumerate() {
            let span = find_span(&knots, degree, n_ctrl, t);
            let b = basis_derivatives(&knots, degree, span, t, 0);
            for (k, val) in b[0].iter().enumerate() {
                basis[(row, span - degree + k)] = *val;
            }
        }
        let lu = basis.lu();
        let angle = |t: f64| -half_angle + 2.0 * half_angle * t;
        let xs = DVector::from_iterator(n_ctrl, greville.iter().map(|&t| radius * angle(t).sin()));
        let zs = DVector::from_iterator(n_ctrl, greville.iter().map(|&t| radius * angle(t).cos()));
        let cx = lu
            .solve(&xs)
            .ok_or_else(|| Error::Surface("singular interpolation system".into()))?;
        let cz = lu
            .solve(&zs)
            .ok_or_else(|| Error::Surface("singular interpolation system".into()))?;
        SurfaceModel::new(
            degree,
            1,
            knots,
            vec![0.0, 0.0, 1.0, 1.0],
            (0..n_ctrl)
                .map(|i| vec![[cx[i], 0.0, cz[i]], [cx[i], length, cz[i]]])
                .collect(),
        )
    }
}

/// Distance-scaled gradient components; components pushing out of the
/// domain at a clamped bound count as converged.
fn tangential_residual(u: f64, v: f64, d: &SurfacePoint, grad: &Vector2<f64>) -> (f64, f64) {
    let scaled = |g: f64, t: f64, norm: f64| {
        if (t <= 0.0 && g > 0.0) || (t >= 1.0 && g < 0.0) {
            0.0
        } else {
            g / norm.max(f64::MIN_POSITIVE)
        }
    };
    (scaled(grad.x, u, d.ru.norm()), scaled(grad.y, v, d.rv.norm()))
}

pub(crate) fn frame_from_partials(ru: &Point3, rv: &Point3) -> Option<SurfaceFrame> {
    let n = ru.cross(rv);
    let scale = ru.norm() * rv.norm();
    if !(scale > 0.0) || n.norm() <= 1e-12 * scale {
        return None;
    }
    let normal = n.normalize();
    let axis_u = ru.normalize();
    let axis_v = normal.cross(&axis_u);
    Some(SurfaceFrame {
        normal: normal.into(),
        axis_u: axis_u.into(),
        axis_v: axis_v.into(),
    })
}

pub const SURFACE_FORMAT: &str = "csa-surface";
pub const SURFACE_VERSION: &str = "1.0.0";

#[derive(Serialize, Deserialize)]
struct SurfaceFile {
    format: String,
    version: String,
    #[serde(flatten)]
    surface: SurfaceModel,
}

/// Surface definition file: the model's control grid and knots plus a
/// format tag.
pub fn write_surface(surface: &SurfaceModel) -> String {
    let file = SurfaceFile {
        format: SURFACE_FORMAT.into(),
        version: SURFACE_VERSION.into(),
        surface: surface.clone(),
    };
    serde_json::to_string_pretty(&file).expect("surface serializes")
}

pub fn parse_surface(text: &str) -> Result<SurfaceModel> {
    let file: SurfaceFile = serde_json::from_str(text)?;
    if file.format != SURFACE_FORMAT {
        return Err(Error::Surface(format!(
            "expected format `{SURFACE_FORMAT}`, got `{}`",
            file.format
        )));
    }
    crate::sim_env::check_major("surface", &file.version, SURFACE_VERSION)?;
    file.surface.validate()?;
    Ok(file.surface)
}

pub fn save_surface(surface: &SurfaceModel, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    surface.validate()?;
    std::fs::write(path, write_surface(surface)).map_err(|e| Error::io(path, e))
}

pub fn load_surface(path: impl AsRef<std::path::Path>) -> Result<SurfaceModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_surface(&text)
}
