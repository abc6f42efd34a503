//! Stage orchestration: plant → quantizer → certificate → check → bounds →
//! campaigns → files.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use quantswitch::bounds::{compute_bounds, refined_alpha1_beta1, StabilityBounds};
use quantswitch::quantizer::QuantizerPartition;
use quantswitch::simulate::{audit, boundary_point, simulate, verdict, write_csv, AuditReport, Trajectory};
use quantswitch::switching::{
    check_theorem2_conditions, generate_adversarial, generate_dwell_random, mismatch_profile, AdversarialVariant,
    MismatchProfile,
};
use quantswitch::synthesis::{check_assumption4, synthesize, LyapunovCertificate};
use quantswitch::system::{validate_plant, Plant};

use crate::config::{ExperimentConfig, GainSource, VariantSpec};
use crate::error::{CliError, Stage};
use crate::plot::{ellipsoid_polyline, write_phase_path, write_polyline};
use crate::report::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Synthesize,
    Bounds,
    Simulate,
    Adversarial,
}

impl Verb {
    fn as_str(self) -> &'static str {
        match self {
            Verb::Synthesize => "synthesize",
            Verb::Bounds => "bounds",
            Verb::Simulate => "simulate",
            Verb::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the synthesis seed and the first campaign seed.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub kappa_rel_tol: Option<f64>,
    pub d_rel_tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExitReport {
    pub code: i32,
    pub out_dir: PathBuf,
    pub report: ExperimentReport,
}

const POLYLINE_POINTS: usize = 360;

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn plant_record(config: &ExperimentConfig, plant: &Plant) -> PlantRecord {
    let validation = validate_plant(plant);
    let modes = validation
        .modes
        .iter()
        .map(|m| ModeRecord {
            index: m.index,
            gain: matrix_rows(&plant.mode(m.index).k),
            max_real_part: m.max_real_part,
            hurwitz: m.hurwitz,
        })
        .collect();
    let mut cross = Vec::new();
    for p in 0..plant.mode_count() {
        for q in 0..plant.mode_count() {
            if p != q {
                cross.push(CrossRecord {
                    plant_mode: p,
                    controller_mode: q,
                    eigenvalues: plant.cross_eigenvalues(p, q).iter().map(|z| [z.re, z.im]).collect(),
                });
            }
        }
    }
    PlantRecord {
        states: plant.states(),
        inputs: plant.inputs(),
        sampling_period: plant.sampling_period(),
        gains: match config.plant.gains {
            GainSource::AsGiven => "as given".into(),
            GainSource::Lqr => "recomputed (LQR)".into(),
        },
        modes,
        cross,
    }
}

fn certificate_record(cert: &LyapunovCertificate, source: &str) -> CertificateRecord {
    CertificateRecord {
        source: source.into(),
        p: matrix_rows(cert.p()),
        decrease_rate: cert.decrease_rate(),
        outer_radius: cert.outer_radius(),
        inner_radius: cert.inner_radius(),
        lambda_min: cert.lambda_min(),
        lambda_max: cert.lambda_max(),
    }
}

fn bounds_record(b: &StabilityBounds, refined: Option<(usize, f64, f64)>) -> BoundsRecord {
    BoundsRecord {
        lambda: b.lambda,
        alpha0: b.alpha0,
        eta: b.eta,
        alpha1: b.alpha1,
        beta1: b.beta1,
        pairs: b
            .gamma
            .iter()
            .map(|(&(p, q), &g)| PairRecord {
                plant_mode: p,
                controller_mode: q,
                gamma0: b.gamma0[&(p, q)],
                gamma: g,
            })
            .collect(),
        d_computed: b.d_computed,
        d: b.d,
        d_overridden: b.d_overridden(),
        c_p: b.dwell.c_p,
        d_p: b.dwell.d_p,
        kappa: b.dwell.kappa,
        f_kappa: b.dwell.f_kappa,
        l_max: b.dwell.l_max,
        n_min: b.dwell.n_min,
        cell_count: b.cell_count,
        bits_per_sample: b.bits_per_sample,
        refined_grid: refined.map(|r| r.0),
        refined_alpha1: refined.map(|r| r.1),
        refined_beta1: refined.map(|r| r.2),
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn audit_records(a: &AuditReport) -> Vec<AuditRecord> {
    a.tallies
        .iter()
        .map(|t| AuditRecord {
            name: t.name.to_string(),
            checked: t.checked,
            violations: t.violations,
            worst_excess: finite(t.worst_excess),
        })
        .collect()
}

/// Initial state `i` of `count`, on the boundary of `Ē_P(R − margin)`.
fn initial_state(cert: &LyapunovCertificate, margin: f64, i: usize, count: usize) -> DVector<f64> {
    let level = (cert.outer_radius() - margin).powi(2) * cert.lambda_max();
    let n = cert.dim();
    let theta = std::f64::consts::TAU * i as f64 / count.max(1) as f64;
    let mut d = DVector::zeros(n);
    d[0] = theta.cos();
    if n > 1 {
        d[1] = theta.sin();
    }
    boundary_point(cert.p(), level, &d)
}

fn conditions(profile: &MismatchProfile, n: u64, b: &StabilityBounds, horizon: f64) -> Option<bool> {
    let l = 1.0 / n as f64;
    match check_theorem2_conditions(profile, l, b.dwell.l_max, b.dwell.f_kappa, horizon) {
        Ok(r) => Some(r.passed),
        // Dwell too short for the bound to apply at all.
        Err(quantswitch::Error::Precondition { .. }) => Some(false),
        Err(_) => None,
    }
}

struct CampaignRun {
    record: RunRecord,
    trajectory: Trajectory,
    audit: AuditReport,
}

fn run_campaign(
    config: &ExperimentConfig,
    opts: &RunOptions,
    plant: &Plant,
    partition: &QuantizerPartition,
    cert: &LyapunovCertificate,
    bounds: &StabilityBounds,
) -> Result<Option<(CampaignRecord, Vec<CampaignRun>)>, CliError> {
    let Some(spec) = &config.campaign else {
        return Ok(None);
    };
    let dwell = spec.dwell.unwrap_or(bounds.dwell.n_min);
    let kappa = spec.kappa.unwrap_or(bounds.dwell.kappa);
    let first = opts.seed.unwrap_or(spec.first_seed);
    let count = spec.seeds as usize;
    let ts = plant.sampling_period();
    let runs: Vec<Result<CampaignRun, CliError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = first + i as u64;
            let initial_mode = i % plant.mode_count();
            let signal = generate_dwell_random(plant, initial_mode, dwell, spec.p_switch, spec.horizon, seed)
                .map_err(|e| CliError::core(Stage::Campaign, e))?;
            let x0 = initial_state(cert, spec.initial_margin, i, count);
            let trajectory = simulate(plant, partition, Some(cert), &signal, &x0, spec.horizon, spec.probes)
                .map_err(|e| CliError::core(Stage::Campaign, e))?;
            let profile = mismatch_profile(&signal, ts, spec.horizon).map_err(|e| CliError::core(Stage::Campaign, e))?;
            let v = verdict(&trajectory, cert, kappa);
            let audit = audit(plant, cert, bounds, &trajectory, &profile);
            let record = RunRecord {
                seed,
                initial_mode,
                x0: x0.iter().copied().collect(),
                switches: signal.switches().len(),
                mismatch_time: profile.up_to(spec.horizon),
                conditions_passed: conditions(&profile, dwell, bounds, spec.horizon),
                contained: v.contained,
                first_inner_entry: v.first_inner_entry,
                settle_time: v.settle_time,
                exits: v.exits,
                exits_on_mismatch: v.exits_on_mismatch,
                excursion_ratio: v.max_excursion_v / v.excursion_bound,
                halted: v.halted,
                records: trajectory.events.len(),
                passed: v.all_hold(),
            };
            Ok(CampaignRun {
                record,
                trajectory,
                audit,
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut total: Option<AuditReport> = None;
    for r in &runs {
        match total.as_mut() {
            Some(t) => t.merge(&r.audit),
            None => total = Some(r.audit.clone()),
        }
    }
    let (audits, max_cross_rate) = total.map_or((Vec::new(), 0.0), |t| (audit_records(&t), t.max_cross_rate));
    let record = CampaignRecord {
        dwell,
        p_switch: spec.p_switch,
        horizon: spec.horizon,
        kappa,
        passed_runs: runs.iter().filter(|r| r.record.passed).count(),
        runs: runs.iter().map(|r| r.record.clone()).collect(),
        audits,
        max_cross_rate: finite(max_cross_rate).unwrap_or(0.0),
    };
    Ok(Some((record, runs)))
}

fn run_adversarial(
    config: &ExperimentConfig,
    plant: &Plant,
    partition: &QuantizerPartition,
    cert: &LyapunovCertificate,
    bounds: &StabilityBounds,
) -> Result<Option<(AdversarialRecord, Vec<(String, Trajectory)>)>, CliError> {
    let Some(spec) = &config.adversarial else {
        return Ok(None);
    };
    if plant.mode_count() < 2 {
        return Err(CliError::new(Stage::Adversarial, "adversarial signals need two modes".into()));
    }
    let ts = plant.sampling_period();
    let mut jobs = Vec::new();
    for &variant in &spec.variants {
        for start in 0..spec.initial_states {
            jobs.push((variant, start));
        }
    }
    let results: Vec<Result<(AdversarialRun, String, Trajectory), CliError>> = jobs
        .par_iter()
        .map(|&(variant, start)| {
            let (v, label) = match variant {
                VariantSpec::Global => (AdversarialVariant::Global, "global"),
                VariantSpec::Anchored => (AdversarialVariant::Anchored, "anchored"),
            };
            let adv = generate_adversarial(spec.n, ts, spec.eps, spec.horizon, v)
                .map_err(|e| CliError::core(Stage::Adversarial, e))?;
            let horizon = adv.t.max(spec.horizon);
            let x0 = initial_state(cert, spec.initial_margin, start, spec.initial_states);
            let traj = simulate(plant, partition, Some(cert), &adv.signal, &x0, horizon, spec.probes)
                .map_err(|e| CliError::core(Stage::Adversarial, e))?;
            let profile = mismatch_profile(&adv.signal, ts, horizon).map_err(|e| CliError::core(Stage::Adversarial, e))?;
            let vd = verdict(&traj, cert, bounds.dwell.kappa);
            let run = AdversarialRun {
                variant: label.into(),
                start,
                periods: adv.periods,
                witness_time: adv.t,
                mismatch_fraction: profile.up_to(adv.t) / adv.t,
                conditions_passed: conditions(&profile, spec.n, bounds, horizon),
                contained: vd.contained && !vd.halted,
                settled: vd.settle_time.is_some(),
                halted: vd.halted,
            };
            Ok((run, format!("{label}_{start}"), traj))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let runs: Vec<AdversarialRun> = results.iter().map(|r| r.0.clone()).collect();
    let record = AdversarialRecord {
        n: spec.n,
        eps: spec.eps,
        horizon: spec.horizon,
        expected_unstable: spec.n < bounds.dwell.n_min,
        containment_failures: runs.iter().filter(|r| !r.contained).count(),
        runs,
    };
    Ok(Some((record, results.into_iter().map(|r| (r.1, r.2)).collect())))
}

fn expected_records(config: &ExperimentConfig, opts: &RunOptions, b: &StabilityBounds) -> Vec<ExpectedRecord> {
    let Some(e) = &config.expected else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let rel = |actual: f64, expected: f64| (actual / expected - 1.0).abs();
    if let Some(n) = e.n_min {
        out.push(ExpectedRecord {
            quantity: "n_min".into(),
            expected: n as f64,
            actual: b.dwell.n_min as f64,
            rel_tolerance: 0.0,
            within: b.dwell.n_min == n,
        });
    }
    if let Some(k) = e.kappa {
        let tol = opts.kappa_rel_tol.unwrap_or(e.kappa_rel_tol);
        out.push(ExpectedRecord {
            quantity: "kappa".into(),
            expected: k,
            actual: b.dwell.kappa,
            rel_tolerance: tol,
            within: rel(b.dwell.kappa, k) <= tol,
        });
    }
    if let Some(d) = e.d {
        let tol = opts.d_rel_tol.unwrap_or(e.d_rel_tol);
        out.push(ExpectedRecord {
            quantity: "D (computed)".into(),
            expected: d,
            actual: b.d_computed,
            rel_tolerance: tol,
            within: rel(b.d_computed, d) <= tol,
        });
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(e, &path.display().to_string()))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| CliError::io(e, &path.display().to_string()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| CliError::io(e, &path.display().to_string()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(e, &path.display().to_string()))
}

fn out_dir(config: &ExperimentConfig, base: &Path, opts: &RunOptions) -> PathBuf {
    if let Some(d) = &opts.out_dir {
        return d.clone();
    }
    match &config.output_dir {
        Some(d) => base.join(d),
        None => PathBuf::from("out").join(&config.name),
    }
}

/// Runs the stages `verb` needs and writes every output file.
pub fn run(config: &ExperimentConfig, base: &Path, verb: Verb, opts: &RunOptions) -> Result<ExitReport, CliError> {
    let plant = config.build_plant()?;
    let unstable: Vec<usize> = validate_plant(&plant).modes.iter().filter(|m| !m.hurwitz).map(|m| m.index).collect();
    if !unstable.is_empty() {
        return Err(CliError {
            stage: Stage::Plant,
            message: format!("closed loop of mode(s) {unstable:?} is not Hurwitz"),
            hint: Some("every mode needs a stabilising gain".into()),
        });
    }
    let partition = config.build_quantizer(plant.states())?;

    let stored = if verb == Verb::Synthesize {
        None
    } else {
        config.stored_certificate(base)?
    };
    let mut synthesis = None;
    let (cert, source) = match stored {
        Some(c) => (c, "config"),
        None => {
            let params = config.algorithm_params(opts.seed).ok_or_else(|| {
                CliError::new(Stage::Config, "need a [synthesis] section or a [certificate]".into())
            })?;
            let result = synthesize(&plant, &partition, &params).map_err(|e| CliError::core(Stage::Synthesis, e))?;
            synthesis = Some(SynthesisRecord {
                seed: params.seed,
                samples_per_run: params.samples_per_run,
                time_samples: params.time_samples,
                runs: result.runs,
                updates: result.updates,
            });
            (result.certificate, "synthesized")
        }
    };

    let check = match config.check_options() {
        Some(options) => {
            let r = check_assumption4(&plant, &partition, &cert, &options).map_err(|e| CliError::core(Stage::Check, e))?;
            Some(CheckRecord {
                grid_density: options.grid_density,
                time_samples: options.time_samples,
                passed: r.passed,
                start_points: r.start_points,
                evaluations: r.evaluations,
                tolerance: r.tolerance,
                worst_slack: r.worst.as_ref().map(|w| w.slack),
                worst_start: r.worst.as_ref().map(|w| w.start.iter().copied().collect()),
                worst_mode: r.worst.as_ref().map(|w| w.mode),
                worst_time: r.worst.as_ref().map(|w| w.time),
            })
        }
        None => None,
    };

    let mut report = ExperimentReport {
        name: config.name.clone(),
        verb: verb.as_str().into(),
        plant: plant_record(config, &plant),
        quantizer: QuantizerRecord {
            xi0: config.quantizer.xi0,
            eta: config.quantizer.eta,
            levels: config.quantizer.levels,
            cells: partition.cells().len(),
            coverage_radius: partition.coverage_radius(),
        },
        synthesis,
        certificate: certificate_record(&cert, source),
        check,
        bounds: None,
        expected: Vec::new(),
        campaign: None,
        adversarial: None,
        exit_code: 0,
    };

    let dir = out_dir(config, base, opts);
    create_dir(&dir)?;
    write_file(&dir.join("certificate.txt"), &cert.to_text())?;

    let mut campaign_runs = Vec::new();
    let mut adversarial_runs = Vec::new();
    let mut kappa_for_plot = None;
    if verb != Verb::Synthesize {
        let bounds = compute_bounds(&plant, &partition, &cert, config.bounds.d_override)
            .map_err(|e| CliError::core(Stage::Bounds, e))?;
        let refined = match config.bounds.refined_grid {
            Some(grid) => {
                let (a, b) = refined_alpha1_beta1(&plant, bounds.alpha0, plant.sampling_period(), grid)
                    .map_err(|e| CliError::core(Stage::Bounds, e))?;
                Some((grid, a, b))
            }
            None => None,
        };
        report.bounds = Some(bounds_record(&bounds, refined));
        report.expected = expected_records(config, opts, &bounds);
        kappa_for_plot = Some(bounds.dwell.kappa);
        if verb == Verb::Simulate {
            if let Some((record, runs)) = run_campaign(config, opts, &plant, &partition, &cert, &bounds)? {
                kappa_for_plot = Some(record.kappa);
                report.campaign = Some(record);
                campaign_runs = runs;
            }
        }
        if verb == Verb::Simulate || verb == Verb::Adversarial {
            if let Some((record, runs)) = run_adversarial(config, &plant, &partition, &cert, &bounds)? {
                report.adversarial = Some(record);
                adversarial_runs = runs;
            } else if verb == Verb::Adversarial {
                return Err(CliError::new(Stage::Config, "the adversarial verb needs an [adversarial] section".into()));
            }
        }
    }

    let check_failed = report.check.as_ref().is_some_and(|c| !c.passed);
    let verdict_failed = report.campaign.as_ref().is_some_and(|c| c.passed_runs < c.runs.len());
    report.exit_code = if check_failed || verdict_failed { 1 } else { 0 };

    write_file(&dir.join("summary.txt"), &report.summary())?;
    write_file(&dir.join("bounds.json"), &report.to_json())?;

    if plant.states() == 2 {
        let plot = dir.join("plot");
        create_dir(&plot)?;
        let mut levels = vec![("outer_boundary", cert.outer_level()), ("inner_boundary", cert.inner_level())];
        if let Some(k) = kappa_for_plot {
            levels.push(("attractor_boundary", cert.attractor_level(k)));
        }
        for (name, level) in levels {
            let pts = ellipsoid_polyline(cert.p(), level, POLYLINE_POINTS).map_err(|e| CliError::core(Stage::Output, e))?;
            write_with(&plot.join(format!("{name}.csv")), |w| write_polyline(&pts, true, w))?;
        }
        for r in &campaign_runs {
            write_with(&plot.join(format!("trajectory_{}.csv", r.record.seed)), |w| write_phase_path(&r.trajectory, w))?;
        }
        for (label, traj) in &adversarial_runs {
            write_with(&plot.join(format!("adversarial_{label}.csv")), |w| write_phase_path(traj, w))?;
        }
    }
    let write_traj = config.campaign.as_ref().is_some_and(|c| c.write_trajectories);
    if write_traj && !campaign_runs.is_empty() {
        let tdir = dir.join("trajectories");
        create_dir(&tdir)?;
        for r in &campaign_runs {
            write_with(&tdir.join(format!("run_{}.csv", r.record.seed)), |w| write_csv(&r.trajectory, w))?;
        }
    }

    Ok(ExitReport {
        code: report.exit_code,
        out_dir: dir,
        report,
    })
}
