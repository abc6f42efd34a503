//! Switched plant, switching signals and exact state-transition algebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalue real parts must lie below `-HURWITZ_TOL` for a mode to count as stable.
pub const HURWITZ_TOL: f64 = 1e-9;

/// Relative slack (in units of `T_s`) used to snap a time onto the sampling grid.
const GRID_SNAP: f64 = 1e-9;

/// One plant mode `(A_p, B_p, K_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl Mode {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, k: DMatrix<f64>) -> Self {
        Self { a, b, k }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `A + B K` for the given gain.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }

    fn check_shape(&self, index: usize, n: usize, m: usize) -> Result<()> {
        let err = |detail: String| Err(Error::Dimension { mode: index, detail });
        if self.a.nrows() != n || self.a.ncols() != n {
            return err(format!("A is {}x{}, expected {n}x{n}", self.a.nrows(), self.a.ncols()));
        }
        if self.b.nrows() != n || self.b.ncols() != m {
            return err(format!("B is {}x{}, expected {n}x{m}", self.b.nrows(), self.b.ncols()));
        }
        if self.k.nrows() != m || self.k.ncols() != n {
            return err(format!("K is {}x{}, expected {m}x{n}", self.k.nrows(), self.k.ncols()));
        }
        Ok(())
    }
}

/// A finite family of modes sharing one sampler/hold period.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    modes: Vec<Mode>,
    sampling_period: f64,
}

impl Plant {
    pub fn new(modes: Vec<Mode>, sampling_period: f64) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Parameter {
                name: "modes",
                detail: "at least one mode is required".into(),
            });
        }
        if !(sampling_period.is_finite() && sampling_period > 0.0) {
            return Err(Error::Parameter {
                name: "sampling_period",
                detail: format!("must be finite and > 0, got {sampling_period}"),
            });
        }
        let n = modes[0].states();
        let m = modes[0].inputs();
        if n == 0 {
            return Err(Error::Dimension {
                mode: 0,
                detail: "empty state space".into(),
            });
        }
        for (i, mode) in modes.iter().enumerate() {
            mode.check_shape(i, n, m)?;
        }
        Ok(Self {
            modes,
            sampling_period,
        })
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, index: usize) -> &Mode {
        &self.modes[index]
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn states(&self) -> usize {
        self.modes[0].states()
    }

    pub fn inputs(&self) -> usize {
        self.modes[0].inputs()
    }

    pub fn sampling_period(&self) -> f64 {
        self.sampling_period
    }

    /// `Λ = max_p ‖A_p‖`.
    pub fn max_dynamics_norm(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| linalg::spectral_norm(&m.a))
            .fold(0.0, f64::max)
    }

    /// Eigenvalues of `A_p + B_p K_q` (plant mode `p`, controller mode `q`).
    pub fn cross_eigenvalues(&self, p: usize, q: usize) -> Vec<Complex<f64>> {
        linalg::eigenvalues(&self.modes[p].closed_loop(&self.modes[q].k))
    }

    /// Replaces every gain by the LQR-optimal one for the cost `∫ xᵀQx + uᵀRu`,
    /// using the current gains as the stabilising starting point.
    pub fn refine_gains_lqr(&self, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Plant> {
        let modes = self
            .modes
            .iter()
            .map(|mode| {
                let k = lqr_gain(&mode.a, &mode.b, q, r, &mode.k)?;
                Ok(Mode::new(mode.a.clone(), mode.b.clone(), k))
            })
            .collect::<Result<Vec<_>>>()?;
        Plant::new(modes, self.sampling_period)
    }
}

/// Newton–Kleinman iteration for the continuous-time LQR gain, with the
/// convention `u = Kx`. `initial` must be stabilising.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    initial: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r_inv = r.clone().try_inverse().ok_or_else(|| Error::Parameter {
        name: "lqr_r",
        detail: "input weight is singular".into(),
    })?;
    let mut k = initial.clone();
    for _ in 0..100 {
        let acl = a + b * &k;
        if linalg::eigenvalues(&acl).iter().any(|l| l.re >= -HURWITZ_TOL) {
            return Err(Error::Parameter {
                name: "gain",
                detail: "LQR refinement requires a stabilising initial gain".into(),
            });
        }
        let x = linalg::solve_lyapunov(&acl, &(q + k.transpose() * r * &k))?;
        let next = -(&r_inv * b.transpose() * x);
        let step = (&next - &k).amax();
        k = next;
        if step <= 1e-14 * (1.0 + k.amax()) {
            break;
        }
    }
    Ok(k)
}

/// Per-mode stability information.
#[derive(Debug, Clone)]
pub struct ModeReport {
    pub index: usize,
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_real_part: f64,
    pub hurwitz: bool,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub modes: Vec<ModeReport>,
    pub ok: bool,
}

/// Checks that every `A_p + B_p K_p` is Hurwitz.
pub fn validate_plant(plant: &Plant) -> ValidationReport {
    let modes: Vec<ModeReport> = plant
        .modes
        .iter()
        .enumerate()
        .map(|(index, mode)| {
            let eigenvalues = linalg::eigenvalues(&mode.closed_loop(&mode.k));
            let max_real_part = eigenvalues
                .iter()
                .map(|l| l.re)
                .fold(f64::NEG_INFINITY, f64::max);
            ModeReport {
                index,
                eigenvalues,
                max_real_part,
                hurwitz: max_real_part < -HURWITZ_TOL,
            }
        })
        .collect();
    let ok = modes.iter().all(|m| m.hurwitz);
    ValidationReport { modes, ok }
}

/// Index `k` of the sampling interval `[kT_s, (k+1)T_s)` containing `t`.
pub fn sample_index(t: f64, ts: f64) -> u64 {
    let s = t / ts;
    let nearest = s.round();
    if (s - nearest).abs() <= GRID_SNAP {
        nearest.max(0.0) as u64
    } else {
        s.floor().max(0.0) as u64
    }
}

/// `[t]⁻`, the most recent sampling instant.
pub fn last_sample(t: f64, ts: f64) -> f64 {
    sample_index(t, ts) as f64 * ts
}

/// Whether `t` coincides with a sampling instant.
pub fn on_sample_grid(t: f64, ts: f64) -> bool {
    let s = t / ts;
    (s - s.round()).abs() <= GRID_SNAP
}

/// A right-continuous piecewise-constant mode schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    initial_mode: usize,
    switches: Vec<(f64, usize)>,
}

impl SwitchingSignal {
    /// `switches` holds `(time, new mode)` pairs; times must be positive and
    /// strictly increasing and every entry must change the mode.
    pub fn new(initial_mode: usize, switches: Vec<(f64, usize)>) -> Result<Self> {
        let mut current = initial_mode;
        let mut last = 0.0;
        for (i, &(t, mode)) in switches.iter().enumerate() {
            if !t.is_finite() || t <= last {
                return Err(Error::Parameter {
                    name: "switches",
                    detail: format!("switch {i} at t = {t} is not strictly increasing and positive"),
                });
            }
            if mode == current {
                return Err(Error::Parameter {
                    name: "switches",
                    detail: format!("switch {i} at t = {t} does not change the mode"),
                });
            }
            current = mode;
            last = t;
        }
        Ok(Self {
            initial_mode,
            switches,
        })
    }

    pub fn constant(mode: usize) -> Self {
        Self {
            initial_mode: mode,
            switches: Vec::new(),
        }
    }

    pub fn initial_mode(&self) -> usize {
        self.initial_mode
    }

    pub fn switches(&self) -> &[(f64, usize)] {
        &self.switches
    }

    pub fn switch_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.switches.iter().map(|s| s.0)
    }

    /// Largest mode index used.
    pub fn max_mode(&self) -> usize {
        self.switches
            .iter()
            .map(|s| s.1)
            .fold(self.initial_mode, usize::max)
    }

    /// `σ(t)`.
    pub fn mode_at(&self, t: f64) -> usize {
        let idx = self.switches.partition_point(|s| s.0 <= t);
        if idx == 0 {
            self.initial_mode
        } else {
            self.switches[idx - 1].1
        }
    }

    /// Switches with time in the open interval `(a, b)`.
    pub fn switches_between(&self, a: f64, b: f64) -> &[(f64, usize)] {
        let lo = self.switches.partition_point(|s| s.0 <= a);
        let hi = self.switches.partition_point(|s| s.0 < b);
        &self.switches[lo..hi.max(lo)]
    }

    /// Every open sampling interval `(kT_s, (k+1)T_s)` hosts at most one switch.
    pub fn at_most_one_per_interval(&self, ts: f64) -> bool {
        let mut last_interval = None;
        for &(t, _) in &self.switches {
            if on_sample_grid(t, ts) {
                continue;
            }
            let k = sample_index(t, ts);
            if last_interval == Some(k) {
                return false;
            }
            last_interval = Some(k);
        }
        true
    }

    /// Checks mode indices against a plant.
    pub fn check_modes(&self, mode_count: usize) -> Result<()> {
        if self.max_mode() >= mode_count {
            return Err(Error::Parameter {
                name: "switches",
                detail: format!(
                    "mode {} referenced but the plant has {mode_count} modes",
                    self.max_mode()
                ),
            });
        }
        Ok(())
    }
}

/// `Φ(τ₁, τ₂)` together with the span it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub value: DMatrix<f64>,
    pub span: (f64, f64),
}

/// Unforced state-transition matrix of the switched system from `tau2` to `tau1`.
pub fn transition_matrix(
    plant: &Plant,
    signal: &SwitchingSignal,
    tau2: f64,
    tau1: f64,
) -> Result<TransitionMatrix> {
    if !(tau2 >= 0.0 && tau1 >= tau2) {
        return Err(Error::Parameter {
            name: "tau",
            detail: format!("need tau1 >= tau2 >= 0, got tau1 = {tau1}, tau2 = {tau2}"),
        });
    }
    signal.check_modes(plant.mode_count())?;
    let n = plant.states();
    let mut value = DMatrix::identity(n, n);
    let mut start = tau2;
    let mut mode = signal.mode_at(tau2);
    for &(t, next) in signal.switches_between(tau2, tau1) {
        value = linalg::expm(&(&plant.mode(mode).a * (t - start))) * value;
        start = t;
        mode = next;
    }
    if tau1 > start {
        value = linalg::expm(&(&plant.mode(mode).a * (tau1 - start))) * value;
    }
    Ok(TransitionMatrix {
        value,
        span: (tau2, tau1),
    })
}

/// `∫₀ᵗ e^{Aτ} dτ · B`.
pub fn hold_integral(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    linalg::exp_and_hold(a, b, t).1
}

/// `e^{At}x₀ + ∫₀ᵗ e^{Aτ}dτ·B u`, the response under a held input.
pub fn flow(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let (e, g) = linalg::exp_and_hold(a, b, t);
    e * x0 + g * u
}
