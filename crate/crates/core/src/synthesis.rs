//! Randomized gradient synthesis of a common quadratic Lyapunov matrix and an
//! a-posteriori checker for the resulting certificate.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::quantizer::{cells_covering_ellipsoid, QuantizerPartition};
use crate::system::{flow, Mode, Plant};

/// Boundary slack for the ball-membership tests inside the algorithm.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmParams {
    pub outer_ball: f64,
    pub inner_ball: f64,
    pub delta: f64,
    pub delta1: f64,
    pub decrease_rate: f64,
    pub samples_per_run: usize,
    pub time_samples: usize,
    pub seed: u64,
    pub max_runs: usize,
    /// Starting matrix; identity when absent.
    pub initial: Option<DMatrix<f64>>,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        Self {
            outer_ball: 80.0,
            inner_ball: 0.15,
            delta: 0.5,
            delta1: 0.25,
            decrease_rate: 1.0,
            samples_per_run: 100_000,
            time_samples: 5,
            seed: 1,
            max_runs: 200,
            initial: None,
        }
    }
}

impl AlgorithmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, detail: &str| {
            Err(Error::Parameter {
                name,
                detail: detail.to_string(),
            })
        };
        if !(self.inner_ball > 0.0 && self.outer_ball > self.inner_ball && self.outer_ball.is_finite()) {
            return bad("outer_ball", "need R0 > r0 > 0");
        }
        if !(self.delta1 > 0.0 && self.delta > self.delta1 && self.delta.is_finite()) {
            return bad("delta", "need delta > delta1 > 0");
        }
        if !(self.decrease_rate > 0.0 && self.decrease_rate.is_finite()) {
            return bad("decrease_rate", "need C > 0");
        }
        if self.time_samples == 0 {
            return bad("time_samples", "need l >= 1");
        }
        if self.samples_per_run == 0 || self.max_runs == 0 {
            return bad("samples_per_run", "need at least one sample and one run");
        }
        Ok(())
    }

    /// Eigenvalue floor `γ = √((δ² − δ₁²)/n)` of the projection.
    pub fn projection_floor(&self, n: usize) -> f64 {
        ((self.delta * self.delta - self.delta1 * self.delta1) / n as f64).sqrt()
    }
}

/// `V(x) = xᵀPx` with decrease rate `C` on `Ē_P(R) \ E̲_P(r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    p: DMatrix<f64>,
    decrease_rate: f64,
    outer_radius: f64,
    inner_radius: f64,
    lambda_min: f64,
    lambda_max: f64,
}

impl LyapunovCertificate {
    pub fn new(p: DMatrix<f64>, decrease_rate: f64, outer_radius: f64, inner_radius: f64) -> Result<Self> {
        linalg::ensure_symmetric(&p)?;
        let p = linalg::symmetrize(&p);
        let (lambda_min, lambda_max) = linalg::extreme_eigenvalues(&p);
        if !(lambda_min > 0.0) {
            return Err(Error::Parameter {
                name: "P",
                detail: format!("must be positive definite (lambda_min = {lambda_min})"),
            });
        }
        if !(decrease_rate > 0.0) {
            return Err(Error::Parameter {
                name: "decrease_rate",
                detail: "must be > 0".into(),
            });
        }
        if !(inner_radius > 0.0 && outer_radius > inner_radius && outer_radius.is_finite()) {
            return Err(Error::Parameter {
                name: "outer_radius",
                detail: format!("need R > r > 0, got R = {outer_radius}, r = {inner_radius}"),
            });
        }
        Ok(Self {
            p,
            decrease_rate,
            outer_radius,
            inner_radius,
            lambda_min,
            lambda_max,
        })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn decrease_rate(&self) -> f64 {
        self.decrease_rate
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        linalg::quad_form(&self.p, x)
    }

    /// Level `R²λ_max(P)` of `Ē_P(R)`.
    pub fn outer_level(&self) -> f64 {
        self.outer_radius.powi(2) * self.lambda_max
    }

    /// Level `r²λ_min(P)` of `E̲_P(r)`.
    pub fn inner_level(&self) -> f64 {
        self.inner_radius.powi(2) * self.lambda_min
    }

    /// Level `κ²r²λ_min(P)` of the attractor `E̲_P(κr)`.
    pub fn attractor_level(&self, kappa: f64) -> f64 {
        kappa * kappa * self.inner_level()
    }

    /// `κ²r²λ_min(P) < R²λ_max(P)`.
    pub fn check_kappa(&self, kappa: f64) -> Result<()> {
        let lhs = self.attractor_level(kappa);
        let rhs = self.outer_level();
        if lhs < rhs {
            Ok(())
        } else {
            Err(Error::CertificateIncompatible { kappa, lhs, rhs })
        }
    }

    /// Plain-text form: key/value header lines followed by `P` row by row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.dim();
        writeln!(out, "dimension {n}").unwrap();
        writeln!(out, "decrease_rate {:?}", self.decrease_rate).unwrap();
        writeln!(out, "outer_radius {:?}", self.outer_radius).unwrap();
        writeln!(out, "inner_radius {:?}", self.inner_radius).unwrap();
        writeln!(out, "P").unwrap();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:?}", self.p[(i, j)])).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}`")))?;
            let mut parts = line.splitn(2, char::is_whitespace);
            if parts.next() != Some(key) {
                return Err(Error::Parse(format!("expected `{key}`, found `{line}`")));
            }
            Ok(parts.next().unwrap_or("").trim().to_string())
        };
        let num = |s: String, key: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{key}`: {e}")))
        };
        let n: usize = field("dimension")?
            .parse()
            .map_err(|e| Error::Parse(format!("`dimension`: {e}")))?;
        let c = num(field("decrease_rate")?, "decrease_rate")?;
        let big_r = num(field("outer_radius")?, "outer_radius")?;
        let small_r = num(field("inner_radius")?, "inner_radius")?;
        field("P")?;
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing row {i} of P")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("P row {i}: {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != n {
                return Err(Error::Parse(format!("P row {i} has {} entries, expected {n}", row.len())));
            }
            values.extend(row);
        }
        Self::new(DMatrix::from_row_slice(n, n, &values), c, big_r, small_r)
    }
}

/// Mode schedule `h(k) = k mod |𝒫|`.
#[derive(Debug, Clone, Copy)]
pub struct RoundRobin {
    modes: usize,
}

impl RoundRobin {
    pub fn new(modes: usize) -> Self {
        assert!(modes > 0, "scheduler needs at least one mode");
        Self { modes }
    }

    pub fn mode(&self, k: u64) -> usize {
        (k % self.modes as u64) as usize
    }
}

/// `φ = flow(x, u, t)` and the vector field `Aφ + Bu` there.
fn flow_terms(mode: &Mode, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> (DVector<f64>, DVector<f64>) {
    let phi = flow(&mode.a, &mode.b, x, u, t);
    let a = &mode.a * &phi + &mode.b * u;
    (phi, a)
}

fn v_from_terms(p: &DMatrix<f64>, c: f64, phi: &DVector<f64>, a: &DVector<f64>) -> f64 {
    2.0 * a.dot(&(p * phi)) + c * phi.norm_squared()
}

fn gradient_from_terms(phi: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
    a * phi.transpose() + phi * a.transpose()
}

/// `v(P, x, j, t)` for the cell value `q` under the given mode's gain.
pub fn v_value(p: &DMatrix<f64>, mode: &Mode, x: &DVector<f64>, q: &DVector<f64>, t: f64, c: f64) -> f64 {
    let u = &mode.k * q;
    let (phi, a) = flow_terms(mode, x, &u, t);
    v_from_terms(p, c, &phi, &a)
}

/// `∇_P v(P, x, j, t)`; independent of `P`.
pub fn v_gradient(mode: &Mode, x: &DVector<f64>, q: &DVector<f64>, t: f64) -> DMatrix<f64> {
    let u = &mode.k * q;
    let (phi, a) = flow_terms(mode, x, &u, t);
    gradient_from_terms(&phi, &a)
}

/// `G_{δ,δ₁}(X)`: raises every eigenvalue below `γ = √((δ²−δ₁²)/n)` to `γ`.
pub fn project_psd(x: &DMatrix<f64>, delta: f64, delta1: f64) -> Result<DMatrix<f64>> {
    linalg::ensure_symmetric(x)?;
    if !(delta > delta1 && delta1 > 0.0) {
        return Err(Error::Parameter {
            name: "delta",
            detail: "need delta > delta1 > 0".into(),
        });
    }
    let n = x.nrows();
    let gamma = ((delta * delta - delta1 * delta1) / n as f64).sqrt();
    let (values, vectors) = linalg::sym_eigen(x);
    if values.iter().all(|&l| l >= gamma) {
        return Ok(x.clone());
    }
    let clamped = values.map(|l| l.max(gamma));
    Ok(linalg::symmetrize(&(&vectors * DMatrix::from_diagonal(&clamped) * vectors.transpose())))
}

/// Which part of the surface set a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    InnerSphere,
    OuterSphere,
    Face,
}

#[derive(Debug, Clone)]
pub struct SurfacePoint {
    pub x: DVector<f64>,
    pub cell: usize,
    pub kind: SurfaceKind,
}

#[derive(Debug, Clone)]
struct Face {
    cell: usize,
    axis: usize,
    coord: f64,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

/// Uniform sampler over the surface set: the spheres `∂B(r₀)`, `∂B(R₀)` and
/// all cell faces inside `B(R₀)`, weighted by surface measure.
#[derive(Debug, Clone)]
pub struct SurfaceSampler {
    dim: usize,
    inner: f64,
    outer: f64,
    faces: Vec<Face>,
    pieces: WeightedIndex<f64>,
    face_area: f64,
    sphere_area: [f64; 2],
}

/// Surface measure of the unit sphere in `ℝⁿ`.
fn unit_sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (n as f64 - 2.0) * unit_sphere_area(n - 2),
    }
}

impl SurfaceSampler {
    pub fn new(partition: &QuantizerPartition, inner: f64, outer: f64) -> Result<Self> {
        if outer > partition.coverage_radius() {
            return Err(Error::OutOfRange {
                norm: outer,
                radius: partition.coverage_radius(),
            });
        }
        let dim = partition.dim();
        let mut faces = Vec::new();
        let mut weights = Vec::new();
        for cell in partition.cells() {
            if cell.min_norm() > outer {
                continue;
            }
            for axis in 0..dim {
                for coord in [cell.lower[axis], cell.upper[axis]] {
                    let mut lower = cell.lower.map(|v| v.max(-outer));
                    let mut upper = cell.upper.map(|v| v.min(outer));
                    if coord.abs() > outer {
                        continue;
                    }
                    lower[axis] = coord;
                    upper[axis] = coord;
                    // Nearest point of the face to the origin.
                    let near = DVector::from_iterator(dim, (0..dim).map(|i| 0f64.clamp(lower[i], upper[i])));
                    if near.norm() > outer {
                        continue;
                    }
                    let area: f64 = (0..dim).filter(|&i| i != axis).map(|i| upper[i] - lower[i]).product();
                    if area <= 0.0 {
                        continue;
                    }
                    faces.push(Face {
                        cell: cell.id,
                        axis,
                        coord,
                        lower,
                        upper,
                    });
                    weights.push(area);
                }
            }
        }
        let face_area: f64 = weights.iter().sum();
        let unit = unit_sphere_area(dim);
        let sphere_area = [
            unit * inner.powi(dim as i32 - 1),
            unit * outer.powi(dim as i32 - 1),
        ];
        let mut all = vec![sphere_area[0], sphere_area[1]];
        all.extend(weights);
        let pieces = WeightedIndex::new(all).map_err(|e| Error::Parameter {
            name: "partition",
            detail: format!("empty surface set: {e}"),
        })?;
        Ok(Self {
            dim,
            inner,
            outer,
            faces,
            pieces,
            face_area,
            sphere_area,
        })
    }

    /// Total face area and the two sphere areas.
    pub fn measures(&self) -> (f64, f64, f64) {
        (self.face_area, self.sphere_area[0], self.sphere_area[1])
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, partition: &QuantizerPartition, rng: &mut R) -> SurfacePoint {
        loop {
            let piece = self.pieces.sample(rng);
            if piece < 2 {
                let radius = if piece == 0 { self.inner } else { self.outer };
                let kind = if piece == 0 { SurfaceKind::InnerSphere } else { SurfaceKind::OuterSphere };
                let dir = loop {
                    let g = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    let norm = g.norm();
                    if norm > 1e-12 {
                        break g / norm;
                    }
                };
                let x = dir * radius;
                let cell = partition
                    .locate(&x)
                    .expect("sphere inside coverage must be partitioned");
                return SurfacePoint { x, cell, kind };
            }
            let face = &self.faces[piece - 2];
            let x = DVector::from_iterator(
                self.dim,
                (0..self.dim).map(|i| {
                    if i == face.axis {
                        face.coord
                    } else {
                        face.lower[i] + rng.random::<f64>() * (face.upper[i] - face.lower[i])
                    }
                }),
            );
            if x.norm() <= self.outer {
                return SurfacePoint {
                    x,
                    cell: face.cell,
                    kind: SurfaceKind::Face,
                };
            }
        }
    }
}

/// Result of a synthesis run.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub certificate: LyapunovCertificate,
    pub runs: usize,
    pub updates: usize,
}

/// One Polyak-type correction at a violating witness. Returns `None` when
/// there is nothing to correct.
fn polyak_update(
    p: &DMatrix<f64>,
    params: &AlgorithmParams,
    phi: &DVector<f64>,
    a: &DVector<f64>,
) -> Option<DMatrix<f64>> {
    let v = v_from_terms(p, params.decrease_rate, phi, a);
    if v <= 0.0 {
        return None;
    }
    let grad = gradient_from_terms(phi, a);
    let gnorm = grad.norm();
    if gnorm == 0.0 {
        return None;
    }
    let mu = (v + params.delta * gnorm) / (gnorm * gnorm);
    let projected = project_psd(p, params.delta, params.delta1).ok()?;
    Some(projected - grad * mu)
}

/// One correction step at the witness `(x, q, t)` for the given mode, or
/// `None` when `v ≤ 0` there.
pub fn polyak_step(
    p: &DMatrix<f64>,
    params: &AlgorithmParams,
    mode: &Mode,
    x: &DVector<f64>,
    q: &DVector<f64>,
    t: f64,
) -> Option<DMatrix<f64>> {
    let (phi, a) = flow_terms(mode, x, &(&mode.k * q), t);
    polyak_update(p, params, &phi, &a)
}

/// `R = R₀√(λ_min/λ_max)` is the largest radius with
/// `Ē_P(R) ⊆ B(R₀)`; `r = r₀√(λ_max/λ_min)` is the smallest with
/// `B(r₀) ⊆ E̲_P(r)`, and it must leave `E̲_P(r) ⊆ Ē_P(R)`.
pub fn certificate_radii(p: &DMatrix<f64>, outer_ball: f64, inner_ball: f64) -> Result<(f64, f64)> {
    let (lmin, lmax) = linalg::extreme_eigenvalues(p);
    if !(lmin > 0.0) {
        return Err(Error::RadiusInfeasible(format!(
            "P is not positive definite (lambda_min = {lmin})"
        )));
    }
    let big_r = outer_ball * (lmin / lmax).sqrt();
    let small_r = inner_ball * (lmax / lmin).sqrt();
    if small_r * small_r * lmin > big_r * big_r * lmax || small_r >= big_r {
        return Err(Error::RadiusInfeasible(format!(
            "inner ellipsoid with r = {small_r} does not fit inside the outer one with R = {big_r}"
        )));
    }
    Ok((big_r, small_r))
}

/// Randomized common-Lyapunov synthesis with round-robin mode scheduling.
pub fn synthesize(plant: &Plant, partition: &QuantizerPartition, params: &AlgorithmParams) -> Result<Synthesis> {
    params.validate()?;
    let n = plant.states();
    if partition.dim() != n {
        return Err(Error::Dimension {
            mode: 0,
            detail: format!("partition has dimension {}, plant {n}", partition.dim()),
        });
    }
    let sampler = SurfaceSampler::new(partition, params.inner_ball, params.outer_ball)?;
    let schedule = RoundRobin::new(plant.mode_count());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut p = match &params.initial {
        Some(p0) => {
            linalg::ensure_symmetric(p0)?;
            p0.clone()
        }
        None => DMatrix::identity(n, n),
    };
    let ts = plant.sampling_period();
    let escape = |phi: &DVector<f64>| {
        let r = phi.norm();
        r >= params.outer_ball - BOUNDARY_TOL || r <= params.inner_ball + BOUNDARY_TOL
    };
    let mut k: u64 = 0;
    let mut total_updates = 0;
    let mut times = vec![0.0; params.time_samples];
    for run in 1..=params.max_runs {
        let mut updates = 0;
        for _ in 0..params.samples_per_run {
            let mode = plant.mode(schedule.mode(k));
            k += 1;
            let point = sampler.sample(partition, &mut rng);
            let u = &mode.k * &partition.cell(point.cell).q;
            match point.kind {
                SurfaceKind::InnerSphere | SurfaceKind::OuterSphere => {
                    let a = &mode.a * &point.x + &mode.b * &u;
                    if let Some(next) = polyak_update(&p, params, &point.x, &a) {
                        p = next;
                        updates += 1;
                    }
                }
                SurfaceKind::Face => {
                    for t in times.iter_mut() {
                        *t = rng.random::<f64>() * ts;
                    }
                    times.sort_by(f64::total_cmp);
                    for &t in &times {
                        let (phi, a) = flow_terms(mode, &point.x, &u, t);
                        if t != 0.0 && escape(&phi) {
                            break;
                        }
                        if phi.norm() <= params.inner_ball + BOUNDARY_TOL {
                            continue;
                        }
                        if let Some(next) = polyak_update(&p, params, &phi, &a) {
                            p = next;
                            updates += 1;
                        }
                    }
                }
            }
        }
        total_updates += updates;
        if updates == 0 {
            let (big_r, small_r) = certificate_radii(&p, params.outer_ball, params.inner_ball)?;
            let certificate = LyapunovCertificate::new(p, params.decrease_rate, big_r, small_r)?;
            return Ok(Synthesis {
                certificate,
                runs: run,
                updates: total_updates,
            });
        }
        if run == params.max_runs {
            return Err(Error::SynthesisFailed {
                runs: run,
                updates,
            });
        }
    }
    unreachable!("max_runs >= 1 is validated")
}

/// Worst point found by [`check_assumption4`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckWitness {
    pub start: DVector<f64>,
    pub mode: usize,
    pub time: f64,
    pub state: DVector<f64>,
    /// `−C‖φ‖² − V̇_p(φ)`; negative means the decrease condition fails.
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub passed: bool,
    pub start_points: usize,
    pub evaluations: usize,
    pub tolerance: f64,
    pub worst: Option<CheckWitness>,
}

impl CheckReport {
    pub fn worst_slack(&self) -> f64 {
        self.worst.as_ref().map_or(f64::INFINITY, |w| w.slack)
    }
}

/// Options for the sample set of [`check_assumption4`].
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub grid_density: usize,
    pub time_samples: usize,
    pub random_points: usize,
    pub include_cell_corners: bool,
    pub seed: u64,
}

impl CheckOptions {
    pub fn new(grid_density: usize, time_samples: usize) -> Self {
        Self {
            grid_density,
            time_samples,
            random_points: grid_density * grid_density,
            include_cell_corners: true,
            seed: 0x5eed,
        }
    }
}

/// Start points in `Ē_P(R) \ E̲_P(r)`: a Cartesian grid, level-set shells,
/// seeded random points and cell corners nudged inside their cells.
pub fn check_start_points(
    partition: &QuantizerPartition,
    cert: &LyapunovCertificate,
    options: &CheckOptions,
) -> Result<Vec<DVector<f64>>> {
    let n = cert.dim();
    let outer = cert.outer_level();
    let inner = cert.inner_level();
    let inside = |x: &DVector<f64>| {
        let v = cert.value(x);
        v <= outer && v > inner && x.norm() <= partition.coverage_radius()
    };
    let p_inv = cert.p().clone().try_inverse().ok_or_else(|| Error::Parameter {
        name: "P",
        detail: "singular".into(),
    })?;
    let half: Vec<f64> = (0..n).map(|i| (outer * p_inv[(i, i)]).sqrt()).collect();
    let mut points = Vec::new();

    let d = options.grid_density.max(2);
    let total = d.checked_pow(n as u32).unwrap_or(usize::MAX);
    for idx in 0..total {
        let mut rem = idx;
        let x = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let k = rem % d;
                rem /= d;
                -half[i] + 2.0 * half[i] * k as f64 / (d - 1) as f64
            }),
        );
        if inside(&x) {
            points.push(x);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let direction = |rng: &mut ChaCha8Rng, i: usize, count: usize| -> DVector<f64> {
        if n == 2 {
            let th = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            DVector::from_vec(vec![th.cos(), th.sin()])
        } else {
            let g = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            g.normalize()
        }
    };
    // Shells V = c with c spaced geometrically between the two levels.
    for s in 0..d {
        let frac = (s as f64 + 0.5) / d as f64;
        let level = inner * (outer / inner).powf(frac);
        for i in 0..d {
            let dir = direction(&mut rng, i, d);
            let x = &dir * (level / cert.value(&dir)).sqrt();
            if inside(&x) {
                points.push(x);
            }
        }
    }
    // Uniform points in the bounding box, kept when inside the region.
    let mut added = 0;
    let mut tries = 0;
    while added < options.random_points && tries < 100 * options.random_points.max(1) {
        tries += 1;
        let x = DVector::from_iterator(n, (0..n).map(|i| rng.random_range(-half[i]..=half[i])));
        if inside(&x) {
            points.push(x);
            added += 1;
        }
    }
    if options.include_cell_corners {
        for id in cells_covering_ellipsoid(partition, cert.p(), outer)? {
            let cell = partition.cell(id);
            let centre = (&cell.lower + &cell.upper) * 0.5;
            for v in cell.vertices() {
                let x = &v + (&centre - &v) * 1e-9;
                if inside(&x) && partition.locate(&x) == Some(id) {
                    points.push(x);
                }
            }
        }
    }
    Ok(points)
}

/// Verifies `V̇_p(φ, Q(x)) ≤ −C‖φ‖² + tol` for every mode along the held-input
/// flow from each start point, at `t_i = i·T_s/l`, unless the flow has already
/// entered `E̲_P(r)`.
pub fn check_assumption4(
    plant: &Plant,
    partition: &QuantizerPartition,
    cert: &LyapunovCertificate,
    options: &CheckOptions,
) -> Result<CheckReport> {
    let points = check_start_points(partition, cert, options)?;
    let ts = plant.sampling_period();
    let l = options.time_samples.max(1);
    let times: Vec<f64> = (0..l).map(|i| i as f64 * ts / l as f64).collect();
    let p = cert.p();
    let c = cert.decrease_rate();
    let inner = cert.inner_level();
    let tolerance = 1e-7 * (1.0 + linalg::spectral_norm(p));

    let worst = points
        .par_iter()
        .enumerate()
        .map(|(index, x0)| {
            let (q, _) = partition.quantize(x0).expect("start points lie inside coverage");
            let mut best: Option<(f64, usize, CheckWitness)> = None;
            let mut evaluations = 0;
            for (mi, mode) in plant.modes().iter().enumerate() {
                let u = &mode.k * &q;
                for &t in &times {
                    let (phi, a) = flow_terms(mode, x0, &u, t);
                    evaluations += 1;
                    if linalg::quad_form(p, &phi) <= inner {
                        continue;
                    }
                    let slack = -v_from_terms(p, c, &phi, &a);
                    if best.as_ref().is_none_or(|b| slack < b.0) {
                        best = Some((
                            slack,
                            index,
                            CheckWitness {
                                start: x0.clone(),
                                mode: mi,
                                time: t,
                                state: phi,
                                slack,
                            },
                        ));
                    }
                }
            }
            (best, evaluations)
        })
        .reduce(
            || (None, 0),
            |(a, na), (b, nb)| {
                let pick = match (a, b) {
                    (None, x) | (x, None) => x,
                    (Some(a), Some(b)) => {
                        if (b.0, b.1) < (a.0, a.1) {
                            Some(b)
                        } else {
                            Some(a)
                        }
                    }
                };
                (pick, na + nb)
            },
        );
    let (best, evaluations) = worst;
    let worst = best.map(|b| b.2);
    let passed = worst.as_ref().is_none_or(|w| w.slack >= -tolerance);
    Ok(CheckReport {
        passed,
        start_points: points.len(),
        evaluations,
        tolerance,
        worst,
    })
}
