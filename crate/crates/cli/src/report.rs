//! Machine-readable experiment record and its plain-text rendering.

use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ModeRecord {
    pub index: usize,
    pub gain: Vec<Vec<f64>>,
    pub max_real_part: f64,
    pub hurwitz: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossRecord {
    pub plant_mode: usize,
    pub controller_mode: usize,
    /// Eigenvalues as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlantRecord {
    pub states: usize,
    pub inputs: usize,
    pub sampling_period: f64,
    pub gains: String,
    pub modes: Vec<ModeRecord>,
    pub cross: Vec<CrossRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantizerRecord {
    pub xi0: f64,
    pub eta: f64,
    pub levels: usize,
    pub cells: usize,
    pub coverage_radius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisRecord {
    pub seed: u64,
    pub samples_per_run: usize,
    pub time_samples: usize,
    pub runs: usize,
    pub updates: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRecord {
    pub source: String,
    pub p: Vec<Vec<f64>>,
    pub decrease_rate: f64,
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub grid_density: usize,
    pub time_samples: usize,
    pub passed: bool,
    pub start_points: usize,
    pub evaluations: usize,
    pub tolerance: f64,
    pub worst_slack: Option<f64>,
    pub worst_start: Option<Vec<f64>>,
    pub worst_mode: Option<usize>,
    pub worst_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairRecord {
    pub plant_mode: usize,
    pub controller_mode: usize,
    pub gamma0: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsRecord {
    pub lambda: f64,
    pub alpha0: f64,
    pub eta: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub pairs: Vec<PairRecord>,
    pub d_computed: f64,
    pub d: f64,
    pub d_overridden: bool,
    pub c_p: f64,
    pub d_p: f64,
    pub kappa: f64,
    pub f_kappa: f64,
    pub l_max: f64,
    pub n_min: u64,
    pub cell_count: usize,
    pub bits_per_sample: f64,
    pub refined_grid: Option<usize>,
    pub refined_alpha1: Option<f64>,
    pub refined_beta1: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedRecord {
    pub quantity: String,
    pub expected: f64,
    pub actual: f64,
    pub rel_tolerance: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub initial_mode: usize,
    pub x0: Vec<f64>,
    pub switches: usize,
    pub mismatch_time: f64,
    pub conditions_passed: Option<bool>,
    pub contained: bool,
    pub first_inner_entry: Option<f64>,
    pub settle_time: Option<f64>,
    pub exits: usize,
    pub exits_on_mismatch: usize,
    /// Largest `V` after the first entry, over `κ²r²λ_min(P)`.
    pub excursion_ratio: f64,
    pub halted: bool,
    pub records: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditRecord {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    pub worst_excess: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignRecord {
    pub dwell: u64,
    pub p_switch: f64,
    pub horizon: f64,
    pub kappa: f64,
    pub runs: Vec<RunRecord>,
    pub passed_runs: usize,
    pub audits: Vec<AuditRecord>,
    pub max_cross_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdversarialRun {
    pub variant: String,
    pub start: usize,
    pub periods: u64,
    pub witness_time: f64,
    pub mismatch_fraction: f64,
    pub conditions_passed: Option<bool>,
    pub contained: bool,
    pub settled: bool,
    pub halted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdversarialRecord {
    pub n: u64,
    pub eps: f64,
    pub horizon: f64,
    /// The dwell time is below the certified one, so instability is possible.
    pub expected_unstable: bool,
    pub runs: Vec<AdversarialRun>,
    pub containment_failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub verb: String,
    pub plant: PlantRecord,
    pub quantizer: QuantizerRecord,
    pub synthesis: Option<SynthesisRecord>,
    pub certificate: CertificateRecord,
    pub check: Option<CheckRecord>,
    pub bounds: Option<BoundsRecord>,
    pub expected: Vec<ExpectedRecord>,
    pub campaign: Option<CampaignRecord>,
    pub adversarial: Option<AdversarialRecord>,
    pub exit_code: i32,
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

fn matrix_rows(m: &[Vec<f64>]) -> String {
    m.iter()
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("; ")
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = self.write_summary(&mut s);
        s
    }

    fn write_summary(&self, s: &mut String) -> std::fmt::Result {
        writeln!(s, "experiment: {} ({})", self.name, self.verb)?;
        writeln!(s)?;
        let p = &self.plant;
        writeln!(
            s,
            "plant: {} modes, {} states, {} inputs, T_s = {}, gains {}",
            p.modes.len(),
            p.states,
            p.inputs,
            p.sampling_period,
            p.gains
        )?;
        for m in &p.modes {
            writeln!(
                s,
                "  mode {}: K = [{}], max Re(eig) = {:.4}{}",
                m.index,
                matrix_rows(&m.gain),
                m.max_real_part,
                if m.hurwitz { "" } else { "  NOT HURWITZ" }
            )?;
        }
        for c in &p.cross {
            let eig: Vec<String> = c
                .eigenvalues
                .iter()
                .map(|z| if z[1] == 0.0 { format!("{:.4}", z[0]) } else { format!("{:.4}{:+.4}i", z[0], z[1]) })
                .collect();
            writeln!(s, "  A{} + B{} K{}: eig = {}", c.plant_mode, c.plant_mode, c.controller_mode, eig.join(", "))?;
        }
        let q = &self.quantizer;
        writeln!(
            s,
            "quantizer: xi0 = {}, eta = {}, levels = {}, {} cells, coverage radius {:.4}",
            q.xi0, q.eta, q.levels, q.cells, q.coverage_radius
        )?;
        writeln!(s)?;
        if let Some(y) = &self.synthesis {
            writeln!(
                s,
                "synthesis: seed {}, {} samples/run, {} time samples, {} runs, {} updates",
                y.seed, y.samples_per_run, y.time_samples, y.runs, y.updates
            )?;
        }
        let c = &self.certificate;
        writeln!(s, "certificate ({}): P = [{}]", c.source, matrix_rows(&c.p))?;
        writeln!(
            s,
            "  C = {}, R = {:.4}, r = {:.4}, lambda_min = {:.4}, lambda_max = {:.4}",
            c.decrease_rate, c.outer_radius, c.inner_radius, c.lambda_min, c.lambda_max
        )?;
        if let Some(k) = &self.check {
            writeln!(
                s,
                "decrease check ({} per axis, {} time samples): {} over {} start points, worst slack {}",
                k.grid_density,
                k.time_samples,
                if k.passed { "PASS" } else { "FAIL" },
                k.start_points,
                k.worst_slack.map_or("-".into(), |v| format!("{v:.4e}"))
            )?;
        }
        if let Some(b) = &self.bounds {
            writeln!(s)?;
            writeln!(s, "bounds:")?;
            writeln!(s, "  Lambda = {:.6}", b.lambda)?;
            writeln!(s, "  alpha0 = {:.6}", b.alpha0)?;
            writeln!(s, "  eta    = {:.6}", b.eta)?;
            writeln!(s, "  alpha1 = {:.6}", b.alpha1)?;
            writeln!(s, "  beta1  = {:.6}", b.beta1)?;
            if let (Some(a), Some(bb), Some(g)) = (b.refined_alpha1, b.refined_beta1, b.refined_grid) {
                writeln!(s, "  refined (grid {g}): alpha1' = {a:.6}, beta1' = {bb:.6}")?;
            }
            for pr in &b.pairs {
                writeln!(
                    s,
                    "  pair ({}, {}): gamma0 = {:.6}, gamma = {:.6}",
                    pr.plant_mode, pr.controller_mode, pr.gamma0, pr.gamma
                )?;
            }
            writeln!(s, "  D computed = {:.6}", b.d_computed)?;
            if b.d_overridden {
                writeln!(s, "  D used     = {:.6} (override)", b.d)?;
            }
            writeln!(s, "  C_P = {:.6}, D_P = {:.6}", b.c_p, b.d_p)?;
            writeln!(s, "  kappa = {:.6}, f(kappa) = {:.6}", b.kappa, b.f_kappa)?;
            writeln!(s, "  L_max = {:.6}, n_min = {}", b.l_max, b.n_min)?;
            writeln!(s, "  |S_f| = {}, bits per sample = {:.4}", b.cell_count, b.bits_per_sample)?;
        }
        if !self.expected.is_empty() {
            writeln!(s)?;
            writeln!(s, "reference values:")?;
            for e in &self.expected {
                writeln!(
                    s,
                    "  {}: expected {}, got {:.6} (rel. tol. {}) {}",
                    e.quantity,
                    e.expected,
                    e.actual,
                    e.rel_tolerance,
                    if e.within { "ok" } else { "OUTSIDE TOLERANCE" }
                )?;
            }
        }
        if let Some(c) = &self.campaign {
            writeln!(s)?;
            writeln!(
                s,
                "campaign: dwell {} T_s, p_switch = {}, horizon = {}, kappa = {:.6}",
                c.dwell, c.p_switch, c.horizon, c.kappa
            )?;
            writeln!(s, "  seed  switches  mismatch  conditions  contained  entry     T_r       exits  excursion  result")?;
            for r in &c.runs {
                writeln!(
                    s,
                    "  {:<5} {:<9} {:<9.4} {:<11} {:<10} {:<9} {:<9} {:<6} {:<10.4} {}",
                    r.seed,
                    r.switches,
                    r.mismatch_time,
                    r.conditions_passed.map_or("-", |b| if b { "ok" } else { "violated" }),
                    if r.contained { "yes" } else { "no" },
                    opt(r.first_inner_entry),
                    opt(r.settle_time),
                    format!("{}/{}", r.exits_on_mismatch, r.exits),
                    r.excursion_ratio,
                    if r.passed { "PASS" } else { "FAIL" }
                )?;
            }
            writeln!(s, "  verdicts: {} of {} runs pass", c.passed_runs, c.runs.len())?;
            writeln!(s, "  bound audit (computed D):")?;
            for a in &c.audits {
                writeln!(
                    s,
                    "    {:<9} {} checks, {} violations, worst excess {}",
                    a.name,
                    a.checked,
                    a.violations,
                    a.worst_excess.map_or("-".into(), |v| format!("{v:.4e}"))
                )?;
            }
            writeln!(s, "    largest cross-mode rate Vdot/|x|^2 = {:.4}", c.max_cross_rate)?;
        }
        if let Some(a) = &self.adversarial {
            writeln!(s)?;
            writeln!(s, "adversarial: dwell {} T_s, eps = {}, horizon = {}", a.n, a.eps, a.horizon)?;
            if a.expected_unstable {
                writeln!(
                    s,
                    "  EXPECTED-UNSTABLE SCENARIO: dwell below the certified n_min; failures here are not errors"
                )?;
            }
            for r in &a.runs {
                writeln!(
                    s,
                    "  {} start {}: {} periods, mismatch fraction {:.4}, conditions {}, contained {}, settled {}{}",
                    r.variant,
                    r.start,
                    r.periods,
                    r.mismatch_fraction,
                    r.conditions_passed.map_or("-", |b| if b { "ok" } else { "violated" }),
                    if r.contained { "yes" } else { "no" },
                    if r.settled { "yes" } else { "no" },
                    if r.halted { ", left quantizer range" } else { "" }
                )?;
            }
            writeln!(s, "  containment failures: {} of {}", a.containment_failures, a.runs.len())?;
        }
        writeln!(s)?;
        writeln!(s, "exit code: {}", self.exit_code)?;
        Ok(())
    }
}
