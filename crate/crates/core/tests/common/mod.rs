//! Independent reference computations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use quantswitch::system::SwitchingSignal;

/// Adaptive Dormand-Prince 5(4) integration of `y' = f(t, y)` from `t0` to `t1`.
pub fn rk45<F>(f: F, t0: f64, t1: f64, y0: &DVector<f64>, rtol: f64, atol: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut t = t0;
    let mut y = y0.clone();
    if t1 <= t0 {
        return y;
    }
    let mut h = ((t1 - t0) / 100.0).min(1e-3);
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                ys += kj * (h * A[s][j]);
            }
            k.push(f(t + C[s] * h, &ys));
        }
        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for s in 0..7 {
            y5 += &k[s] * (h * B5[s]);
            y4 += &k[s] * (h * B4[s]);
        }
        let err = (&y5 - &y4)
            .iter()
            .zip(y5.iter())
            .map(|(e, v)| (e / (atol + rtol * v.abs())).powi(2))
            .sum::<f64>()
            .sqrt()
            / (y.len() as f64).sqrt();
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

/// Matrix exponential by scaled Taylor series and repeated squaring.
pub fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.1 {
        s += 1;
    }
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Composite Simpson rule for a matrix-valued integrand on `panels` (even) panels.
pub fn simpson_matrix<F>(f: F, a: f64, b: f64, panels: usize) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    assert!(panels % 2 == 0);
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += f(a + i as f64 * h) * w;
    }
    sum * (h / 3.0)
}

/// Mismatch time on `[from, to)` by sweeping a uniform grid of step `dt`
/// and comparing `σ(τ)` with `σ` at the last sampling instant.
pub fn mismatch_by_sweep(signal: &SwitchingSignal, ts: f64, from: f64, to: f64, dt: f64) -> f64 {
    let switches = signal.switches();
    let steps = ((to - from) / dt).round() as u64;
    let mut next = switches.partition_point(|&(t, _)| t <= from);
    let mut mode = signal.mode_at(from);
    let mut k = (from / ts).floor() as u64;
    let mut held = signal.mode_at(k as f64 * ts);
    let mut total = 0.0;
    for i in 0..steps {
        let tau = from + (i as f64 + 0.5) * dt;
        while next < switches.len() && switches[next].0 <= tau {
            mode = switches[next].1;
            next += 1;
        }
        let kk = (tau / ts).floor() as u64;
        if kk != k {
            k = kk;
            held = signal.mode_at(k as f64 * ts);
        }
        if mode != held {
            total += dt;
        }
    }
    total
}

/// Frobenius-norm relative difference.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
