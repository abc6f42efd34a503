//! Exact event-driven simulation of the sampled, quantized, switched loop and
//! the checks run on the resulting trajectories.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::bounds::StabilityBounds;
use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::quantizer::QuantizerPartition;
use crate::switching::MismatchProfile;
use crate::synthesis::LyapunovCertificate;
use crate::system::{on_sample_grid, sample_index, Plant, SwitchingSignal};

/// Relative slack for ellipsoid membership near a boundary.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

pub const DEFAULT_PROBES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Sample,
    Switch,
    Probe,
    Horizon,
    /// The sampled state left the quantizer coverage; the run stops here.
    CoverageExit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Sample => "sample",
            EventKind::Switch => "switch",
            EventKind::Probe => "probe",
            EventKind::Horizon => "horizon",
            EventKind::CoverageExit => "coverage_exit",
        }
    }
}

/// State and loop signals at one instant; modes and input are the
/// right limits at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub x: DVector<f64>,
    /// `x([t]⁻)`, the most recent sampled state.
    pub x_sample: DVector<f64>,
    pub plant_mode: usize,
    pub controller_mode: usize,
    pub q: DVector<f64>,
    pub v: Option<f64>,
    pub kind: EventKind,
}

impl EventRecord {
    pub fn mismatched(&self) -> bool {
        self.plant_mode != self.controller_mode
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub events: Vec<EventRecord>,
    pub horizon: f64,
    pub sampling_period: f64,
    /// Time of a coverage exit, if the run stopped early.
    pub halted_at: Option<f64>,
}

impl Trajectory {
    /// Earliest time after which every record lies strictly inside `{V < level}`.
    pub fn settled_below(&self, level: f64) -> Option<f64> {
        let inside = |e: &EventRecord| e.v.is_some_and(|v| v < level * (1.0 - MEMBERSHIP_TOL));
        let last_out = self.events.iter().rposition(|e| !inside(e));
        match last_out {
            None => self.events.first().map(|e| e.t),
            Some(i) if i + 1 < self.events.len() => Some(self.events[i + 1].t),
            Some(_) => None,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Sample).count()
    }
}

struct Loop<'a> {
    plant: &'a Plant,
    cert: Option<&'a LyapunovCertificate>,
    events: Vec<EventRecord>,
}

impl Loop<'_> {
    fn record(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        x_sample: &DVector<f64>,
        modes: (usize, usize),
        q: &DVector<f64>,
        kind: EventKind,
    ) {
        self.events.push(EventRecord {
            t,
            x: x.clone(),
            x_sample: x_sample.clone(),
            plant_mode: modes.0,
            controller_mode: modes.1,
            q: q.clone(),
            v: self.cert.map(|c| c.value(x)),
            kind,
        });
    }

    /// Advances `x` over `[a, b)` under plant mode `p` and held input `u`,
    /// recording `probes` interior points.
    #[allow(clippy::too_many_arguments)]
    fn span(
        &mut self,
        x: &DVector<f64>,
        a: f64,
        b: f64,
        modes: (usize, usize),
        u: &DVector<f64>,
        x_sample: &DVector<f64>,
        q: &DVector<f64>,
        probes: usize,
    ) -> DVector<f64> {
        let mode = self.plant.mode(modes.0);
        let advance = |dt: f64| {
            let (e, g) = linalg::exp_and_hold(&mode.a, &mode.b, dt);
            &e * x + &g * u
        };
        let width = b - a;
        for i in 1..=probes {
            let dt = width * i as f64 / (probes + 1) as f64;
            let xp = advance(dt);
            self.record(a + dt, &xp, x_sample, modes, q, EventKind::Probe);
        }
        advance(width)
    }
}

/// Simulates `ẋ = A_σ(t) x + B_σ(t) K_σ([t]⁻) Q(x([t]⁻))` exactly between
/// events. Switches closer than the grid-snapping slack to a sampling
/// instant are applied at that instant.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    plant: &Plant,
    partition: &QuantizerPartition,
    cert: Option<&LyapunovCertificate>,
    signal: &SwitchingSignal,
    x0: &DVector<f64>,
    horizon: f64,
    probes: usize,
) -> Result<Trajectory> {
    let n = plant.states();
    if x0.len() != n || partition.dim() != n {
        return Err(Error::Dimension {
            mode: 0,
            detail: format!("state has {} entries, plant {n}, partition {}", x0.len(), partition.dim()),
        });
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter {
            name: "horizon",
            detail: "must be finite and >= 0".into(),
        });
    }
    signal.check_modes(plant.mode_count())?;
    let ts = plant.sampling_period();
    let switches: Vec<(u64, f64, bool, usize)> = signal
        .switches()
        .iter()
        .map(|&(t, m)| (sample_index(t, ts), t, on_sample_grid(t, ts), m))
        .collect();
    let final_k = sample_index(horizon, ts);
    let horizon_on_grid = on_sample_grid(horizon, ts);

    let mut sim = Loop {
        plant,
        cert,
        events: Vec::new(),
    };
    let mut x = x0.clone();
    let mut plant_mode = signal.initial_mode();
    let mut next = 0;
    let mut halted_at = None;
    let mut k: u64 = 0;
    loop {
        let start = k as f64 * ts;
        while next < switches.len() && switches[next].0 == k && switches[next].2 {
            plant_mode = switches[next].3;
            next += 1;
        }
        let controller = plant_mode;
        let x_sample = x.clone();
        let q = match partition.quantize(&x_sample) {
            Ok((q, _)) => q,
            Err(_) => {
                sim.record(start, &x, &x_sample, (plant_mode, controller), &DVector::zeros(n), EventKind::CoverageExit);
                halted_at = Some(start);
                break;
            }
        };
        sim.record(start, &x, &x_sample, (plant_mode, controller), &q, EventKind::Sample);
        if k == final_k && horizon_on_grid {
            break;
        }
        let end = if k == final_k { horizon } else { (k + 1) as f64 * ts };
        let u = &plant.mode(controller).k * &q;
        let mut a = start;
        loop {
            let inside = next < switches.len() && switches[next].0 == k && !switches[next].2 && switches[next].1 < end;
            let b = if inside { switches[next].1 } else { end };
            x = sim.span(&x, a, b, (plant_mode, controller), &u, &x_sample, &q, probes);
            if !inside {
                break;
            }
            plant_mode = switches[next].3;
            next += 1;
            sim.record(b, &x, &x_sample, (plant_mode, controller), &q, EventKind::Switch);
            a = b;
        }
        // Skip switches at or past the horizon inside the final interval.
        while next < switches.len() && switches[next].0 == k {
            next += 1;
        }
        if k == final_k {
            sim.record(horizon, &x, &x_sample, (plant_mode, controller), &q, EventKind::Horizon);
            break;
        }
        k += 1;
    }
    Ok(Trajectory {
        events: sim.events,
        horizon,
        sampling_period: ts,
        halted_at,
    })
}

/// `V̇_{p,q}(x, q_x) = (A_p x + B_p K_q q_x)ᵀ P x + xᵀ P (A_p x + B_p K_q q_x)`.
pub fn lyapunov_derivative(
    plant: &Plant,
    p_matrix: &DMatrix<f64>,
    x: &DVector<f64>,
    q_x: &DVector<f64>,
    p: usize,
    q: usize,
) -> f64 {
    let f = &plant.mode(p).a * x + &plant.mode(p).b * (&plant.mode(q).k * q_x);
    2.0 * f.dot(&(p_matrix * x))
}

/// Findings on one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    /// (i) every record lies in `Int Ē_P(R)`.
    pub contained: bool,
    pub max_v: f64,
    /// (ii) first record inside `E̲_P(r)`.
    pub first_inner_entry: Option<f64>,
    /// (iii) earliest time after which every record lies in `Int E̲_P(κr)`.
    pub settle_time: Option<f64>,
    /// (iv) exits from `E̲_P(r)`, and how many of them began on a mismatched span.
    pub exits: usize,
    pub exits_on_mismatch: usize,
    /// (v) largest `V` after the first entry, against `κ²r²λ_min(P)`.
    pub max_excursion_v: f64,
    pub excursion_bound: f64,
    pub halted: bool,
}

impl StabilityVerdict {
    /// Containment and permanent entry into the attractor.
    pub fn converged(&self) -> bool {
        self.contained && self.settle_time.is_some() && !self.halted
    }

    pub fn exits_explained(&self) -> bool {
        self.exits == self.exits_on_mismatch
    }

    pub fn excursions_bounded(&self) -> bool {
        self.max_excursion_v <= self.excursion_bound * (1.0 + MEMBERSHIP_TOL)
    }

    pub fn all_hold(&self) -> bool {
        self.converged() && self.first_inner_entry.is_some() && self.exits_explained() && self.excursions_bounded()
    }
}

pub fn verdict(trajectory: &Trajectory, cert: &LyapunovCertificate, kappa: f64) -> StabilityVerdict {
    let outer = cert.outer_level();
    let inner = cert.inner_level();
    let attractor = cert.attractor_level(kappa);
    let values: Vec<f64> = trajectory.events.iter().map(|e| cert.value(&e.x)).collect();
    let max_v = values.iter().copied().fold(0.0, f64::max);
    let contained = values.iter().all(|&v| v < outer * (1.0 - MEMBERSHIP_TOL));
    let in_inner = |v: f64| v <= inner * (1.0 + MEMBERSHIP_TOL);
    let first = values.iter().position(|&v| in_inner(v));
    let mut exits = 0;
    let mut exits_on_mismatch = 0;
    let mut max_excursion_v = 0.0f64;
    if let Some(f) = first {
        for i in f + 1..values.len() {
            max_excursion_v = max_excursion_v.max(values[i]);
            if in_inner(values[i - 1]) && !in_inner(values[i]) {
                exits += 1;
                if trajectory.events[i - 1].mismatched() {
                    exits_on_mismatch += 1;
                }
            }
        }
        max_excursion_v = max_excursion_v.max(values[f]);
    }
    let settle_time = {
        let last_out = values.iter().rposition(|&v| !(v < attractor * (1.0 - MEMBERSHIP_TOL)));
        match last_out {
            None => trajectory.events.first().map(|e| e.t),
            Some(i) if i + 1 < values.len() => Some(trajectory.events[i + 1].t),
            Some(_) => None,
        }
    };
    StabilityVerdict {
        contained,
        max_v,
        first_inner_entry: first.map(|i| trajectory.events[i].t),
        settle_time,
        exits,
        exits_on_mismatch,
        max_excursion_v,
        excursion_bound: attractor,
        halted: trajectory.halted_at.is_some(),
    }
}

/// Tally of one inequality along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityTally {
    pub name: &'static str,
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen (negative when every check had room to spare).
    pub worst_excess: f64,
    pub worst_time: Option<f64>,
}

impl InequalityTally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            violations: 0,
            worst_excess: f64::NEG_INFINITY,
            worst_time: None,
        }
    }

    fn add(&mut self, t: f64, lhs: f64, rhs: f64, tol: f64) {
        self.checked += 1;
        let excess = lhs - rhs;
        if excess > self.worst_excess {
            self.worst_excess = excess;
            self.worst_time = Some(t);
        }
        if excess > tol {
            self.violations += 1;
        }
    }

    pub fn merge(&mut self, other: &InequalityTally) {
        self.checked += other.checked;
        self.violations += other.violations;
        if other.worst_excess > self.worst_excess {
            self.worst_excess = other.worst_excess;
            self.worst_time = other.worst_time;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub tallies: Vec<InequalityTally>,
    /// Largest `V̇_{p,q}/‖x‖²` over cross-mode pairs, for comparison with `D`.
    pub max_cross_rate: f64,
}

impl AuditReport {
    pub fn violations(&self) -> usize {
        self.tallies.iter().map(|t| t.violations).sum()
    }

    pub fn get(&self, name: &str) -> Option<&InequalityTally> {
        self.tallies.iter().find(|t| t.name == name)
    }

    pub fn merge(&mut self, other: &AuditReport) {
        for t in &other.tallies {
            match self.tallies.iter_mut().find(|s| s.name == t.name) {
                Some(s) => s.merge(t),
                None => self.tallies.push(t.clone()),
            }
        }
        self.max_cross_rate = self.max_cross_rate.max(other.max_cross_rate);
    }
}

/// Checks the pointwise bounds of the chain at every record.
///
/// * `alpha0`: `‖B_pK_qQ(x)‖ ≤ α₀‖x‖` at sampled states in `Ē_P(R)`.
/// * `alpha1`: `‖x([t]⁻)‖ ≤ α₁‖x(t)‖`.
/// * `beta1`: `‖x(t) − x([t]⁻)‖ ≤ β₁‖x([t]⁻)‖`.
/// * `gamma`: `‖PB_pK_q(q_x − x)‖ ≤ γ(p,q)‖x‖` for every pair `p ≠ q`.
/// * `dot_vpq`: `V̇_{p,q} ≤ D‖x‖²` for every pair `p ≠ q`.
/// * `dot_vp`: `V̇_p ≤ −C‖x‖²` on matched records in `Ē_P(R) \ E̲_P(r)`.
/// * `envelope`: `V(t) ≤ exp(D_Pμ − C_P(Δ − μ))V(s)` on consecutive records
///   outside `E̲_P(r)`.
///
/// All but `dot_vp` need `x([t]⁻) ∈ Ē_P(R)`. The norm inequalities get a
/// tolerance of `tol·‖x‖`, the derivative ones `tol·‖x‖²`.
pub fn audit(
    plant: &Plant,
    cert: &LyapunovCertificate,
    bounds: &StabilityBounds,
    trajectory: &Trajectory,
    profile: &MismatchProfile,
) -> AuditReport {
    let tol = 1e-7 * (1.0 + spectral_norm(cert.p()));
    let p = cert.p();
    let outer = cert.outer_level();
    let inner = cert.inner_level();
    let mut alpha0 = InequalityTally::new("alpha0");
    let mut alpha1 = InequalityTally::new("alpha1");
    let mut beta1 = InequalityTally::new("beta1");
    let mut gamma = InequalityTally::new("gamma");
    let mut dot_vpq = InequalityTally::new("dot_vpq");
    let mut dot_vp = InequalityTally::new("dot_vp");
    let mut envelope = InequalityTally::new("envelope");
    let mut max_cross_rate = f64::NEG_INFINITY;
    let m = plant.mode_count();
    let pbk: Vec<Vec<DMatrix<f64>>> = (0..m)
        .map(|a| (0..m).map(|b| p * &plant.mode(a).b * &plant.mode(b).k).collect())
        .collect();

    for e in &trajectory.events {
        if e.kind == EventKind::CoverageExit {
            continue;
        }
        let nx = e.x.norm();
        let ns = e.x_sample.norm();
        let sample_inside = cert.value(&e.x_sample) <= outer;
        if sample_inside {
            if e.kind == EventKind::Sample {
                for a in 0..m {
                    for b in 0..m {
                        let lhs = (&plant.mode(a).b * (&plant.mode(b).k * &e.q)).norm();
                        alpha0.add(e.t, lhs, bounds.alpha0 * ns, tol * ns);
                    }
                }
            }
            alpha1.add(e.t, ns, bounds.alpha1 * nx, tol * nx.max(ns));
            beta1.add(e.t, (&e.x - &e.x_sample).norm(), bounds.beta1 * ns, tol * ns);
            for a in 0..m {
                for b in 0..m {
                    if a == b {
                        continue;
                    }
                    let g = bounds.gamma.get(&(a, b)).copied().unwrap_or(0.0);
                    let lhs = (&pbk[a][b] * (&e.q - &e.x)).norm();
                    gamma.add(e.t, lhs, g * nx, tol * nx);
                    let vdot = lyapunov_derivative(plant, p, &e.x, &e.q, a, b);
                    if nx > 0.0 {
                        max_cross_rate = max_cross_rate.max(vdot / (nx * nx));
                    }
                    dot_vpq.add(e.t, vdot, bounds.d_computed * nx * nx, tol * nx * nx);
                }
            }
        }
        let v = cert.value(&e.x);
        if !e.mismatched() && v > inner && v <= outer {
            let vdot = lyapunov_derivative(plant, p, &e.x, &e.q, e.plant_mode, e.controller_mode);
            dot_vp.add(e.t, vdot, -cert.decrease_rate() * nx * nx, tol * nx * nx);
        }
    }

    let c_p = cert.decrease_rate() / cert.lambda_max();
    let d_p = bounds.d_computed / cert.lambda_min();
    for w in trajectory.events.windows(2) {
        let (s, t) = (&w[0], &w[1]);
        if t.kind == EventKind::CoverageExit {
            continue;
        }
        let vs = cert.value(&s.x);
        let vt = cert.value(&t.x);
        if vs <= inner || vt <= inner || cert.value(&s.x_sample) > outer {
            continue;
        }
        let mu = profile.total(t.t, s.t);
        let dt = t.t - s.t;
        let bound = (d_p * mu - c_p * (dt - mu)).exp() * vs;
        envelope.add(t.t, vt, bound, 1e-9 * vs);
    }

    AuditReport {
        tallies: vec![alpha0, alpha1, beta1, gamma, dot_vpq, dot_vp, envelope],
        max_cross_rate,
    }
}

/// Writes the trajectory as CSV with 17 significant digits.
pub fn write_csv<W: Write>(trajectory: &Trajectory, out: &mut W) -> io::Result<()> {
    let n = trajectory.events.first().map_or(0, |e| e.x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("plant_mode".into());
    header.push("controller_mode".into());
    header.extend((1..=n).map(|i| format!("q{i}")));
    header.push("V".into());
    header.push("kind".into());
    writeln!(out, "{}", header.join(","))?;
    for e in &trajectory.events {
        let mut row = vec![format!("{:.16e}", e.t)];
        row.extend(e.x.iter().map(|v| format!("{v:.16e}")));
        row.push(e.plant_mode.to_string());
        row.push(e.controller_mode.to_string());
        row.extend(e.q.iter().map(|v| format!("{v:.16e}")));
        row.push(e.v.map_or(String::new(), |v| format!("{v:.16e}")));
        row.push(e.kind.as_str().to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Point on `{xᵀPx = level}` in the direction of `d`.
pub fn boundary_point(p: &DMatrix<f64>, level: f64, d: &DVector<f64>) -> DVector<f64> {
    d * (level / linalg::quad_form(p, d)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::build_log_quantizer;
    use crate::system::Mode;

    fn decay_plant() -> Plant {
        Plant::new(
            vec![Mode::new(-DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2))],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn free_decay_in_deadzone() {
        let plant = decay_plant();
        let qz = build_log_quantizer(0.5, 1.5, 10, 2).unwrap();
        let cert = LyapunovCertificate::new(DMatrix::identity(2, 2), 1.0, 5.0, 0.01).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -0.2]);
        let traj = simulate(&plant, &qz, Some(&cert), &SwitchingSignal::constant(0), &x0, 1.0, 4).unwrap();
        let vs: Vec<f64> = traj.events.iter().map(|e| e.v.unwrap()).collect();
        assert!(vs.windows(2).all(|w| w[1] < w[0]));
        let last = traj.events.last().unwrap();
        assert!((last.x[0] - 0.3 * (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(traj.sample_count(), 11);
    }

    #[test]
    fn every_sampling_instant_present() {
        let plant = decay_plant();
        let qz = build_log_quantizer(0.5, 1.5, 10, 2).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let traj = simulate(&plant, &qz, None, &SwitchingSignal::constant(0), &x0, 0.95, 2).unwrap();
        assert_eq!(traj.sample_count(), 10);
        assert_eq!(traj.events.last().unwrap().kind, EventKind::Horizon);
        assert!(traj.events.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn coverage_exit_halts() {
        let plant = Plant::new(
            vec![Mode::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2))],
            0.1,
        )
        .unwrap();
        let qz = build_log_quantizer(0.5, 1.5, 3, 2).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = simulate(&plant, &qz, None, &SwitchingSignal::constant(0), &x0, 5.0, 0).unwrap();
        assert!(traj.halted_at.is_some());
        assert_eq!(traj.events.last().unwrap().kind, EventKind::CoverageExit);
    }

    #[test]
    fn matched_derivative_negative_with_lyapunov_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let plant = Plant::new(vec![Mode::new(a.clone(), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2))], 0.1).unwrap();
        let p = linalg::solve_lyapunov(&a, &DMatrix::identity(2, 2)).unwrap();
        let x = DVector::from_vec(vec![0.4, -1.1]);
        assert!(lyapunov_derivative(&plant, &p, &x, &x, 0, 0) < 0.0);
    }
}
