//! Total mismatch time between plant and controller modes, the conditions
//! built on it, and switching-signal generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::system::{on_sample_grid, sample_index, Plant, SwitchingSignal};

/// Intervals `[a, b)` on which `σ(τ) ≠ σ([τ]⁻)`, sorted and disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchProfile {
    intervals: Vec<(f64, f64)>,
    /// `cumulative[i]` is the total length of the first `i` intervals.
    cumulative: Vec<f64>,
    horizon: f64,
    assumption2: bool,
}

impl MismatchProfile {
    /// Profile from explicit intervals; they must be sorted, disjoint and
    /// non-empty.
    pub fn from_intervals(intervals: Vec<(f64, f64)>, horizon: f64) -> Result<Self> {
        let mut last = f64::NEG_INFINITY;
        for &(a, b) in &intervals {
            if !(a >= last && b > a) {
                return Err(Error::Parameter {
                    name: "intervals",
                    detail: format!("interval [{a}, {b}) is empty or out of order"),
                });
            }
            last = b;
        }
        Ok(Self::build(intervals, horizon, true))
    }

    fn build(intervals: Vec<(f64, f64)>, horizon: f64, assumption2: bool) -> Self {
        let mut cumulative = Vec::with_capacity(intervals.len() + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for &(a, b) in &intervals {
            acc += b - a;
            cumulative.push(acc);
        }
        Self {
            intervals,
            cumulative,
            horizon,
            assumption2,
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Whether every sampling interval hosted at most one switch.
    pub fn satisfies_assumption2(&self) -> bool {
        self.assumption2
    }

    /// `μ(t, 0)`.
    pub fn up_to(&self, t: f64) -> f64 {
        let idx = self.intervals.partition_point(|&(a, _)| a < t);
        if idx == 0 {
            return 0.0;
        }
        let (a, b) = self.intervals[idx - 1];
        self.cumulative[idx - 1] + (t.min(b) - a)
    }

    /// `μ(τ₁, τ₂)`, the mismatch measure of `[τ₂, τ₁)`.
    pub fn total(&self, tau1: f64, tau2: f64) -> f64 {
        if tau1 <= tau2 {
            return 0.0;
        }
        self.up_to(tau1) - self.up_to(tau2)
    }

    /// `σ(t) ≠ σ([t]⁻)`.
    pub fn is_mismatched(&self, t: f64) -> bool {
        let idx = self.intervals.partition_point(|&(a, _)| a <= t);
        idx > 0 && t < self.intervals[idx - 1].1
    }

    /// For every onset `sᵢ`, the largest `μ(e, sᵢ) − slope·(e − sᵢ)` over the
    /// interval ends `e ≥ sᵢ`, with the maximising end.
    ///
    /// `μ(·, sᵢ) − slope·(· − sᵢ)` grows only on mismatch intervals when
    /// `slope ≤ 1`, so interval ends are where it peaks.
    pub fn window_excess(&self, slope: f64) -> Vec<(f64, f64, f64)> {
        let k = self.intervals.len();
        let mut out = vec![(0.0, 0.0, 0.0); k];
        // Suffix maxima of g(e_k) = μ(e_k, 0) − slope·e_k.
        let mut best = f64::NEG_INFINITY;
        let mut best_end = 0.0;
        for i in (0..k).rev() {
            let (a, b) = self.intervals[i];
            let g = self.cumulative[i + 1] - slope * b;
            if g > best {
                best = g;
                best_end = b;
            }
            let base = self.cumulative[i] - slope * a;
            out[i] = (a, best_end, best - base);
        }
        out
    }
}

/// Exact mismatch intervals of `signal` on `[0, horizon)`.
///
/// Switches on the sampling grid are seen by the controller immediately and
/// cause no mismatch. Within a sampling interval every stretch whose mode
/// differs from the one sampled at its start counts, which is the literal
/// definition even when the interval hosts several switches.
pub fn mismatch_profile(signal: &SwitchingSignal, ts: f64, horizon: f64) -> Result<MismatchProfile> {
    if !(ts > 0.0) {
        return Err(Error::Parameter {
            name: "sampling_period",
            detail: "must be > 0".into(),
        });
    }
    let switches: Vec<(f64, usize)> = signal
        .switches()
        .iter()
        .copied()
        .take_while(|&(t, _)| t < horizon)
        .collect();
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut push = |a: f64, b: f64| {
        let b = b.min(horizon);
        if b <= a {
            return;
        }
        match intervals.last_mut() {
            Some(last) if last.1 == a => last.1 = b,
            _ => intervals.push((a, b)),
        }
    };
    let mut assumption2 = true;
    let mut mode = signal.initial_mode();
    let mut i = 0;
    while i < switches.len() {
        let k = sample_index(switches[i].0, ts);
        let start = k as f64 * ts;
        let end = (k + 1) as f64 * ts;
        let mut ctrl = mode;
        let mut current = mode;
        let mut seg_start = start;
        let mut inside = 0;
        while i < switches.len() && sample_index(switches[i].0, ts) == k {
            let (t, m) = switches[i];
            i += 1;
            if on_sample_grid(t, ts) {
                ctrl = m;
                current = m;
                continue;
            }
            inside += 1;
            if current != ctrl {
                push(seg_start, t);
            }
            seg_start = t;
            current = m;
        }
        if current != ctrl {
            push(seg_start, end);
        }
        if inside > 1 {
            assumption2 = false;
        }
        mode = current;
    }
    Ok(MismatchProfile::build(intervals, horizon, assumption2))
}

/// Which of the two mismatch-time conditions failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// `μ(t, 0) ≤ L t`.
    Fraction,
    /// `μ(t, T₀) ≤ f(κ) + L(t − T₀)`.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionViolation {
    pub condition: Condition,
    pub t: f64,
    pub t0: Option<f64>,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub passed: bool,
    /// Smallest `L t − μ(t, 0)` over the checked points.
    pub fraction_slack: f64,
    /// Smallest `f(κ) + L(t − T₀) − μ(t, T₀)` over onsets and later ends.
    pub window_slack: f64,
    /// Earliest violation, if any.
    pub violation: Option<ConditionViolation>,
}

/// Checks both mismatch-time conditions on `[0, horizon]`.
///
/// The first is evaluated at every mismatch-interval end. The second is
/// evaluated at every onset `T₀` (where its slack is smallest over `T₀`)
/// against every later interval end.
pub fn check_theorem2_conditions(
    profile: &MismatchProfile,
    l: f64,
    l_max: f64,
    f_kappa: f64,
    horizon: f64,
) -> Result<ConditionReport> {
    if !(l >= 0.0 && l < l_max) {
        return Err(Error::Precondition { l, l_max });
    }
    let within: Vec<(f64, f64)> = profile
        .intervals()
        .iter()
        .filter(|&&(a, _)| a < horizon)
        .map(|&(a, b)| (a, b.min(horizon)))
        .collect();
    let clipped = MismatchProfile::build(within, horizon.min(profile.horizon()), profile.satisfies_assumption2());

    let mut fraction_slack = f64::INFINITY;
    let mut first_fraction = None;
    for &(_, b) in clipped.intervals() {
        let slack = l * b - clipped.up_to(b);
        fraction_slack = fraction_slack.min(slack);
        if slack < 0.0 && first_fraction.is_none() {
            first_fraction = Some(ConditionViolation {
                condition: Condition::Fraction,
                t: b,
                t0: None,
                excess: -slack,
            });
        }
    }

    let mut window_slack = f64::INFINITY;
    let mut first_window = None;
    for (onset, end, excess) in clipped.window_excess(l) {
        let slack = f_kappa - excess;
        window_slack = window_slack.min(slack);
        if slack < 0.0 && first_window.is_none() {
            first_window = Some(ConditionViolation {
                condition: Condition::Window,
                t: end,
                t0: Some(onset),
                excess: -slack,
            });
        }
    }

    let violation = match (first_fraction, first_window) {
        (Some(a), Some(b)) => Some(if b.t0.unwrap_or(b.t) < a.t { b } else { a }),
        (a, b) => a.or(b),
    };
    Ok(ConditionReport {
        passed: violation.is_none(),
        fraction_slack,
        window_slack,
        violation,
    })
}

/// Slacks of the dwell-time upper bounds `μ(t,0) < t/n` and
/// `μ(t,T₀) < T_s + (t − T₀)/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBoundReport {
    pub fraction_slack: f64,
    pub window_slack: f64,
}

impl UpperBoundReport {
    pub fn holds(&self) -> bool {
        self.fraction_slack > 0.0 && self.window_slack > 0.0
    }
}

pub fn dwell_upper_bound_slack(profile: &MismatchProfile, n: u64, ts: f64) -> UpperBoundReport {
    let slope = 1.0 / n as f64;
    let fraction_slack = profile
        .intervals()
        .iter()
        .map(|&(_, b)| slope * b - profile.up_to(b))
        .fold(f64::INFINITY, f64::min);
    let window_slack = profile
        .window_excess(slope)
        .into_iter()
        .map(|(_, _, e)| ts - e)
        .fold(f64::INFINITY, f64::min);
    UpperBoundReport {
        fraction_slack,
        window_slack,
    }
}

/// Every gap between switches is at least `T_d` and nothing switches in
/// `[0, T_d)`, up to a relative rounding slack of `1e-12`.
pub fn check_dwell(signal: &SwitchingSignal, dwell: f64) -> bool {
    let floor = dwell * (1.0 - 1e-12);
    let mut last = 0.0;
    signal.switch_times().all(|t| {
        let ok = t - last >= floor;
        last = t;
        ok
    })
}

/// Random signal with dwell time `nT_s`: after each quiet stretch of `nT_s`,
/// every sampling interval hosts a switch with probability `p_switch` at a
/// uniformly distributed time.
pub fn generate_dwell_random(
    plant: &Plant,
    initial_mode: usize,
    n: u64,
    p_switch: f64,
    horizon: f64,
    seed: u64,
) -> Result<SwitchingSignal> {
    let modes = plant.mode_count();
    if n == 0 {
        return Err(Error::Parameter {
            name: "n",
            detail: "dwell multiple must be >= 1".into(),
        });
    }
    if !(0.0..=1.0).contains(&p_switch) {
        return Err(Error::Parameter {
            name: "p_switch",
            detail: format!("must lie in [0, 1], got {p_switch}"),
        });
    }
    if initial_mode >= modes {
        return Err(Error::Parameter {
            name: "initial_mode",
            detail: format!("mode {initial_mode} does not exist"),
        });
    }
    let ts = plant.sampling_period();
    let dwell = n as f64 * ts;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut switches = Vec::new();
    let mut mode = initial_mode;
    let mut last = 0.0;
    let mut k = n;
    if modes < 2 || p_switch == 0.0 {
        return SwitchingSignal::new(initial_mode, switches);
    }
    loop {
        let start = k as f64 * ts;
        if start >= horizon {
            break;
        }
        if rng.random::<f64>() < p_switch {
            let t = (k as f64 + rng.random::<f64>()) * ts;
            if t >= horizon {
                break;
            }
            if t - last < dwell {
                // Rounding put the draw a hair too early; try the next interval.
                k += 1;
                continue;
            }
            mode = if modes == 2 {
                1 - mode
            } else {
                let pick = rng.random_range(0..modes - 1);
                if pick >= mode {
                    pick + 1
                } else {
                    pick
                }
            };
            switches.push((t, mode));
            last = t;
            k = (t / ts).floor() as u64 + n;
            while (k as f64) * ts - last < dwell {
                k += 1;
            }
        } else {
            k += 1;
        }
    }
    SwitchingSignal::new(initial_mode, switches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialVariant {
    /// Maximises `μ(t, 0)`.
    Global,
    /// Maximises `μ(t, T₀)` after a mismatch onset `T₀`.
    Anchored,
}

#[derive(Debug, Clone)]
pub struct AdversarialSignal {
    pub signal: SwitchingSignal,
    /// Witness time.
    pub t: f64,
    pub t0: Option<f64>,
    /// Number of dwell periods `m` in the construction.
    pub periods: u64,
}

/// Worst-case signals with dwell time `nT_s`, alternating between modes 0 and 1.
///
/// Global: switches at `knT_s + ε/m` for `k = 1..m`, witness `t = mnT_s + T_s`.
/// Anchored: `[T₀]⁻ = nT_s`, `T₀ − [T₀]⁻ = ε/(2(m+1))`, further switches at
/// `[T₀]⁻ + knT_s + ε/(m+1)`, witness `t = T₀ + mnT_s + T_s`. In both cases
/// `m = ⌈T/(nT_s)⌉`, raised if needed so that every offset stays inside its
/// sampling interval.
pub fn generate_adversarial(n: u64, ts: f64, eps: f64, horizon_t: f64, variant: AdversarialVariant) -> Result<AdversarialSignal> {
    if n == 0 || !(ts > 0.0) || !(eps > 0.0) || !(horizon_t >= 0.0) {
        return Err(Error::Parameter {
            name: "adversarial",
            detail: "need n >= 1, T_s > 0, eps > 0 and T >= 0".into(),
        });
    }
    let period = n as f64 * ts;
    let mut m = ((horizon_t / period).ceil() as u64).max(1);
    while eps / m as f64 >= ts {
        m += 1;
    }
    let mf = m as f64;
    let mut switches = Vec::with_capacity(m as usize + 1);
    let mut mode = 0;
    let mut toggle = |t: f64, switches: &mut Vec<(f64, usize)>| {
        mode = 1 - mode;
        switches.push((t, mode));
    };
    match variant {
        AdversarialVariant::Global => {
            for k in 1..=m {
                toggle(k as f64 * period + eps / mf, &mut switches);
            }
            Ok(AdversarialSignal {
                signal: SwitchingSignal::new(0, switches)?,
                t: mf * period + ts,
                t0: None,
                periods: m,
            })
        }
        AdversarialVariant::Anchored => {
            let base = period;
            let t0 = base + eps / (2.0 * (mf + 1.0));
            toggle(t0, &mut switches);
            for k in 1..=m {
                toggle(base + k as f64 * period + eps / (mf + 1.0), &mut switches);
            }
            Ok(AdversarialSignal {
                signal: SwitchingSignal::new(0, switches)?,
                t: t0 + mf * period + ts,
                t0: Some(t0),
                periods: m,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TS: f64 = 0.025;

    #[test]
    fn no_switches_no_mismatch() {
        let p = mismatch_profile(&SwitchingSignal::constant(0), TS, 10.0).unwrap();
        assert!(p.intervals().is_empty());
        assert_eq!(p.up_to(5.0), 0.0);
    }

    #[test]
    fn single_switch_inside_interval() {
        let s = SwitchingSignal::new(0, vec![(0.01, 1)]).unwrap();
        let p = mismatch_profile(&s, TS, 1.0).unwrap();
        for t in [0.01, 0.015, 0.02, 0.025, 0.3] {
            assert_relative_eq!(p.up_to(t), t.min(0.025) - 0.01, epsilon = 1e-15);
        }
        assert_eq!(p.up_to(0.005), 0.0);
    }

    #[test]
    fn switch_on_grid_is_matched() {
        let s = SwitchingSignal::new(0, vec![(0.05, 1)]).unwrap();
        assert!(mismatch_profile(&s, TS, 1.0).unwrap().intervals().is_empty());
    }

    #[test]
    fn double_switch_flags_assumption() {
        let s = SwitchingSignal::new(0, vec![(0.005, 1), (0.015, 0)]).unwrap();
        let p = mismatch_profile(&s, TS, 1.0).unwrap();
        assert!(!p.satisfies_assumption2());
        assert_eq!(p.intervals(), &[(0.005, 0.015)]);
    }

    #[test]
    fn additivity() {
        let s = SwitchingSignal::new(0, vec![(0.01, 1), (0.08, 0), (0.31, 1)]).unwrap();
        let p = mismatch_profile(&s, TS, 1.0).unwrap();
        let (t1, t2, t3) = (0.004, 0.09, 0.33);
        assert_relative_eq!(p.total(t3, t1), p.total(t3, t2) + p.total(t2, t1), epsilon = 1e-15);
        assert_eq!(p.total(0.2, 0.2), 0.0);
    }

    #[test]
    fn zero_mismatch_passes_conditions() {
        let p = MismatchProfile::from_intervals(vec![], 10.0).unwrap();
        let r = check_theorem2_conditions(&p, 0.005, 0.01, 0.025, 10.0).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn full_mismatch_fails_at_first_end() {
        let p = MismatchProfile::from_intervals(vec![(0.0, 1.0)], 1.0).unwrap();
        let r = check_theorem2_conditions(&p, 0.1, 0.5, 0.025, 1.0).unwrap();
        let v = r.violation.unwrap();
        assert_eq!(v.t, 1.0);
        assert!(!r.passed);
    }

    #[test]
    fn l_out_of_range_is_precondition_error() {
        let p = MismatchProfile::from_intervals(vec![], 1.0).unwrap();
        assert!(matches!(
            check_theorem2_conditions(&p, 0.2, 0.1, 0.025, 1.0),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn dwell_examples() {
        assert!(check_dwell(&SwitchingSignal::constant(0), 5.0));
        let s = SwitchingSignal::new(0, vec![(1.0, 1), (1.5, 0)]).unwrap();
        assert!(!check_dwell(&s, 0.6));
        assert!(check_dwell(&s, 0.5));
    }

    #[test]
    fn global_adversary_value() {
        let a = generate_adversarial(2, TS, 1e-3, 1.0, AdversarialVariant::Global).unwrap();
        let p = mismatch_profile(&a.signal, TS, a.t + 1.0).unwrap();
        let m = a.periods as f64;
        assert_relative_eq!(p.up_to(a.t), m * TS - 1e-3, epsilon = 1e-12);
        assert!(check_dwell(&a.signal, 2.0 * TS));
    }
}
