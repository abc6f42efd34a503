//! Growth-rate bounds for the quantized sampled-data loop and the dwell-time
//! quantities derived from them.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::quantizer::{bits_per_sample, cells_covering_ellipsoid, QuantizerPartition};
use crate::synthesis::LyapunovCertificate;
use crate::system::Plant;

/// `(e^{ΛT} − 1)/Λ`, continuous at `Λ = 0`.
fn growth_integral(lambda: f64, ts: f64) -> f64 {
    if lambda == 0.0 {
        ts
    } else {
        (lambda * ts).exp_m1() / lambda
    }
}

/// Cells `𝒮_f` meeting `Ē_P(R)`, through the conservative ball cover.
pub fn covering_cells(partition: &QuantizerPartition, cert: &LyapunovCertificate) -> Result<Vec<usize>> {
    cells_covering_ellipsoid(partition, cert.p(), cert.outer_level())
}

fn nonorigin_ratio_cells(partition: &QuantizerPartition, cells: &[usize]) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for &id in cells {
        let cell = partition.cell(id);
        if cell.closure_contains_origin() {
            continue;
        }
        let m = cell.min_norm();
        if !(m > 0.0) {
            return Err(Error::Partition {
                cell: id,
                detail: "cell away from the origin has zero minimum norm".into(),
            });
        }
        out.push((id, m));
    }
    Ok(out)
}

/// `α₀ = max_{p,q} max_{j∈𝒮_f∖𝒮₀} ‖B_pK_q q_j‖ / min_{x∈𝒬_j}‖x‖`.
pub fn compute_alpha0(plant: &Plant, partition: &QuantizerPartition, cert: &LyapunovCertificate) -> Result<f64> {
    let cells = nonorigin_ratio_cells(partition, &covering_cells(partition, cert)?)?;
    let mut alpha0 = 0.0f64;
    for p in plant.modes() {
        for q in plant.modes() {
            let bk = &p.b * &q.k;
            for &(id, m) in &cells {
                alpha0 = alpha0.max((&bk * &partition.cell(id).q).norm() / m);
            }
        }
    }
    Ok(alpha0)
}

/// `η = α₀(e^{ΛT_s} − 1)/Λ`.
pub fn compute_eta(lambda: f64, alpha0: f64, ts: f64) -> f64 {
    alpha0 * growth_integral(lambda, ts)
}

/// `α₁ = e^{ΛT_s}/(1 − η)`; fails when `η ≥ 1`.
pub fn compute_alpha1(lambda: f64, alpha0: f64, ts: f64) -> Result<f64> {
    let eta = compute_eta(lambda, alpha0, ts);
    if !(eta < 1.0) {
        return Err(Error::ConditionViolated { eta });
    }
    Ok((lambda * ts).exp() / (1.0 - eta))
}

/// `β₁ = (e^{ΛT_s} − 1)(1 + α₀/Λ)`.
pub fn compute_beta1(lambda: f64, alpha0: f64, ts: f64) -> f64 {
    (lambda * ts).exp_m1() + alpha0 * growth_integral(lambda, ts)
}

/// `γ₀(p,q) = max{‖PB_pK_q‖, γ̂₀(p,q)}`.
pub fn compute_gamma0(
    plant: &Plant,
    partition: &QuantizerPartition,
    cert: &LyapunovCertificate,
    p: usize,
    q: usize,
) -> Result<f64> {
    let cells = nonorigin_ratio_cells(partition, &covering_cells(partition, cert)?)?;
    Ok(gamma0_from_cells(plant, partition, cert, &cells, p, q))
}

fn gamma0_from_cells(
    plant: &Plant,
    partition: &QuantizerPartition,
    cert: &LyapunovCertificate,
    cells: &[(usize, f64)],
    p: usize,
    q: usize,
) -> f64 {
    let pbk = spectral_norm(&(cert.p() * &plant.mode(p).b * &plant.mode(q).k));
    let hat = cells
        .iter()
        .map(|&(id, m)| pbk * partition.cell(id).max_deviation() / m)
        .fold(0.0, f64::max);
    pbk.max(hat)
}

/// `γ(p,q) = α₁(β₁‖PB_pK_q‖ + γ₀(p,q))`.
pub fn compute_gamma(plant: &Plant, cert: &LyapunovCertificate, alpha1: f64, beta1: f64, gamma0: f64, p: usize, q: usize) -> f64 {
    let pbk = spectral_norm(&(cert.p() * &plant.mode(p).b * &plant.mode(q).k));
    alpha1 * (beta1 * pbk + gamma0)
}

/// `D = 2 max_{p≠q} (‖P(A_p + B_pK_q)‖ + γ(p,q))`; zero for a single mode.
pub fn compute_growth_rate_d(plant: &Plant, cert: &LyapunovCertificate, gamma: &BTreeMap<(usize, usize), f64>) -> f64 {
    let mut d = 0.0f64;
    for p in 0..plant.mode_count() {
        for q in 0..plant.mode_count() {
            if p == q {
                continue;
            }
            let cross = spectral_norm(&(cert.p() * plant.mode(p).closed_loop(&plant.mode(q).k)));
            let g = gamma.get(&(p, q)).copied().unwrap_or(0.0);
            d = d.max(2.0 * (cross + g));
        }
    }
    d
}

/// Rates and dwell quantities built on a growth rate `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellQuantities {
    pub c_p: f64,
    pub d_p: f64,
    pub kappa: f64,
    pub f_kappa: f64,
    /// Exclusive upper bound on the admissible mismatch fraction `L`.
    pub l_max: f64,
    pub n_min: u64,
}

/// `C_P = C/λ_max`, `D_P = D/λ_min`, `κ = exp(T_s(C_P + D_P)/2)`,
/// `f(κ) = 2 ln κ/(C_P + D_P)`, `L_max = C_P/(C_P + D_P)` and
/// `n_min = ⌈1 + D_P/C_P⌉`; also checks `κ²r²λ_min < R²λ_max`.
pub fn compute_rates_and_dwell(cert: &LyapunovCertificate, d: f64, ts: f64) -> Result<DwellQuantities> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::Parameter {
            name: "D",
            detail: format!("growth rate must be finite and >= 0, got {d}"),
        });
    }
    if !(ts > 0.0) {
        return Err(Error::Parameter {
            name: "sampling_period",
            detail: "must be > 0".into(),
        });
    }
    let c_p = cert.decrease_rate() / cert.lambda_max();
    let d_p = d / cert.lambda_min();
    let kappa = (ts * (c_p + d_p) / 2.0).exp();
    let f_kappa = 2.0 * kappa.ln() / (c_p + d_p);
    debug_assert!((f_kappa - ts).abs() <= 1e-12 * ts.max(1.0));
    let l_max = c_p / (c_p + d_p);
    let n_min = (1.0 + d_p / c_p).ceil() as u64;
    cert.check_kappa(kappa)?;
    Ok(DwellQuantities {
        c_p,
        d_p,
        kappa,
        f_kappa,
        l_max,
        n_min,
    })
}

/// Composite Simpson rule on `f[0..=m]` with spacing `h`; the 3/8 rule
/// closes an odd panel count.
pub fn simpson(f: &[f64], h: f64) -> f64 {
    let m = f.len().saturating_sub(1);
    match m {
        0 => 0.0,
        1 => 0.5 * h * (f[0] + f[1]),
        _ => {
            let even = if m % 2 == 0 { m } else { m - 3 };
            let mut s = 0.0;
            let mut i = 0;
            while i < even {
                s += h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
                i += 2;
            }
            if m % 2 == 1 {
                s += 3.0 * h / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3]);
            }
            s
        }
    }
}

/// Sharper `α₁'`, `β₁'` for at most one switch per sampling interval: maxima
/// over mode pairs and switch positions `0 ≤ t' ≤ t ≤ T_s` on a uniform grid
/// with `grid` steps, norm integrals by Simpson's rule on the same grid.
///
/// Pairs with `p = q` are included, so a single-mode plant reduces to the
/// switch-free products.
pub fn refined_alpha1_beta1(plant: &Plant, alpha0: f64, ts: f64, grid: usize) -> Result<(f64, f64)> {
    let grid = grid.max(2);
    let h = ts / grid as f64;
    let n = plant.states();
    let eye = DMatrix::<f64>::identity(n, n);
    let powers = |a: &DMatrix<f64>| -> Vec<DMatrix<f64>> {
        let step = linalg::expm(&(a * h));
        let mut out = Vec::with_capacity(grid + 1);
        out.push(eye.clone());
        for k in 1..=grid {
            out.push(&step * &out[k - 1]);
        }
        out
    };
    let fwd: Vec<Vec<DMatrix<f64>>> = plant.modes().iter().map(|m| powers(&m.a)).collect();
    let bwd: Vec<Vec<DMatrix<f64>>> = plant.modes().iter().map(|m| powers(&(-&m.a))).collect();
    let pairs: Vec<(usize, usize)> = (0..plant.mode_count())
        .flat_map(|p| (0..plant.mode_count()).map(move |q| (p, q)))
        .collect();

    let results: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let back_p: Vec<f64> = bwd[p].iter().map(spectral_norm).collect();
            let fwd_q: Vec<f64> = fwd[q].iter().map(spectral_norm).collect();
            // Tables indexed by (switch step j, steps after the switch d), j + d ≤ grid.
            let mut inv = vec![Vec::new(); grid + 1];
            let mut jump = vec![Vec::new(); grid + 1];
            let mut tail = vec![Vec::new(); grid + 1];
            for j in 0..=grid {
                inv[j] = (0..=grid - j).map(|d| spectral_norm(&(&bwd[p][j] * &bwd[q][d]))).collect();
            }
            for d in 0..=grid {
                let lead = &fwd[q][d];
                jump[d] = (0..=grid - d).map(|j| spectral_norm(&(lead * &fwd[p][j] - &eye))).collect();
                tail[d] = (0..=grid - d).map(|m| spectral_norm(&(lead * &fwd[p][m]))).collect();
            }
            let mut a1 = 0.0f64;
            let mut b1 = 0.0f64;
            let mut rev = Vec::with_capacity(grid + 1);
            for j in 0..=grid {
                let int_p = simpson(&back_p[..=j], h);
                for d in 0..=grid - j {
                    let denom = 1.0 - alpha0 * (simpson(&inv[j][..=d], h) + int_p);
                    if !(denom > 0.0) {
                        return Err(Error::ConditionViolated { eta: 1.0 - denom });
                    }
                    a1 = a1.max(inv[j][d] / denom);
                    // ∫₀^{t'} ‖e^{A_q(t−t')} e^{A_p(t'−τ)}‖ dτ with integrand index t' − τ.
                    rev.clear();
                    rev.extend(tail[d][..=j].iter().rev());
                    let beta = jump[d][j] + alpha0 * (simpson(&fwd_q[..=d], h) + simpson(&rev, h));
                    b1 = b1.max(beta);
                }
            }
            Ok((a1, b1))
        })
        .collect();
    let mut a1 = 0.0f64;
    let mut b1 = 0.0f64;
    for r in results {
        let (a, b) = r?;
        a1 = a1.max(a);
        b1 = b1.max(b);
    }
    Ok((a1, b1))
}

/// The full bound chain for one plant, partition and certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityBounds {
    pub lambda: f64,
    pub alpha0: f64,
    pub eta: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub gamma0: BTreeMap<(usize, usize), f64>,
    pub gamma: BTreeMap<(usize, usize), f64>,
    /// Growth rate computed from the chain above.
    pub d_computed: f64,
    /// Growth rate the dwell quantities were built on.
    pub d: f64,
    pub dwell: DwellQuantities,
    /// `|𝒮_f|`.
    pub cell_count: usize,
    pub bits_per_sample: f64,
}

impl StabilityBounds {
    pub fn d_overridden(&self) -> bool {
        self.d != self.d_computed
    }
}

/// Evaluates the chain; `d_override` replaces the computed `D` in the dwell
/// quantities while keeping the computed value on record.
pub fn compute_bounds(
    plant: &Plant,
    partition: &QuantizerPartition,
    cert: &LyapunovCertificate,
    d_override: Option<f64>,
) -> Result<StabilityBounds> {
    let ts = plant.sampling_period();
    let lambda = plant.max_dynamics_norm();
    let cover = covering_cells(partition, cert)?;
    let cells = nonorigin_ratio_cells(partition, &cover)?;
    let alpha0 = compute_alpha0(plant, partition, cert)?;
    let eta = compute_eta(lambda, alpha0, ts);
    let alpha1 = compute_alpha1(lambda, alpha0, ts)?;
    let beta1 = compute_beta1(lambda, alpha0, ts);
    let mut gamma0 = BTreeMap::new();
    let mut gamma = BTreeMap::new();
    for p in 0..plant.mode_count() {
        for q in 0..plant.mode_count() {
            if p == q {
                continue;
            }
            let g0 = gamma0_from_cells(plant, partition, cert, &cells, p, q);
            gamma0.insert((p, q), g0);
            gamma.insert((p, q), compute_gamma(plant, cert, alpha1, beta1, g0, p, q));
        }
    }
    let d_computed = compute_growth_rate_d(plant, cert, &gamma);
    let d = d_override.unwrap_or(d_computed);
    let dwell = compute_rates_and_dwell(cert, d, ts)?;
    Ok(StabilityBounds {
        lambda,
        alpha0,
        eta,
        alpha1,
        beta1,
        gamma0,
        gamma,
        d_computed,
        d,
        dwell,
        cell_count: cover.len(),
        bits_per_sample: bits_per_sample(cover.len(), plant.mode_count()),
    })
}
