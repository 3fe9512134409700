//! The subcommands. Each writes its artifacts into the run directory and
//! returns the overall status plus the lines to print.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use occlp::certificate::{
    closed_loop_rollout, nodes_in_y, polar_rotation_certificate, synthesize_feedback,
    verify_certificate, Certificate, CertificateReport, Field, TOL_CERT_EXTRACTED,
};
use occlp::dynamics::{integrate, ControlSignal, Trajectory};
use occlp::idlp::{
    aux_w_lp, extract_certificate, global_certificate, solve_kstar, IdlpDiscretization, KstarResult,
};
use occlp::occupation::{
    cesaro_measure, discounted_measure, hausdorff_diagnostic, integrate_against, w_residual,
    MetricConfig, OccMeasure,
};
use occlp::values::{
    abel_value_dp, cesaro_value_dp, dpp_gradient_diagnostic, GridSpec, ValueKind, ValueTable,
    ViOptions, TOL_DPP,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CertificateSource, Resolved};
use crate::error::CliError;
use crate::output::{tag, RunDir};
use crate::svg::{Plot, Series};

/// Allowed duality gap of a discrete solve.
pub const TOL_GAP: f64 = 1e-6;
/// Slack in `μ ≤ V_T ≤ k*` at the largest horizon.
pub const TOL_SANDWICH: f64 = 5e-2;
/// Slack in `∫V_T dγ ≤ ∫k dγ`: grid interpolation error plus the band
/// relaxation of `W`.
pub const TOL_VALUE_BELOW_COST: f64 = 5e-2;
/// Discounted measures are only formed when the dropped tail is below
/// `e^-10`.
pub const MIN_DISCOUNTED_SPAN: f64 = 10.0;
/// Coefficient box of the global certificate LP.
pub const GLOBAL_COEFF_BOUND: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

impl Status {
    fn of(pass: bool) -> Status {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        }
    }
}

pub struct Outcome {
    pub failed: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    fn new() -> Outcome {
        Outcome {
            failed: false,
            lines: Vec::new(),
        }
    }

    fn line(&mut self, status: Option<Status>, text: String) {
        if status == Some(Status::Fail) {
            self.failed = true;
        }
        match status {
            Some(s) => self.lines.push(format!("{:<4} {text}", s.label())),
            None => self.lines.push(text),
        }
    }
}

/// Runs `f` on every job across worker threads; results keep job order.
fn fan_out<J, T, F>(jobs: &[J], f: F) -> Result<Vec<T>, CliError>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T, CliError> + Sync,
{
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T, CliError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect()
}

fn state_grid(r: &Resolved) -> GridSpec {
    GridSpec::uniform(r.system.dim(), r.config.grid.nodes)
}

/// Four times finer than the state grid, for certificate verification.
fn fine_grid(r: &Resolved) -> GridSpec {
    GridSpec::uniform(r.system.dim(), 4 * (r.config.grid.nodes - 1) + 1)
}

fn discretization(r: &Resolved, y0: &[f64]) -> Result<IdlpDiscretization, CliError> {
    let lp = &r.config.lp;
    let mut d =
        IdlpDiscretization::new(&r.system, y0, r.config.grid.nodes, lp.degree)?.unperturbed();
    d.eps_c = lp.eps_c;
    d.xi_cap = lp.xi_cap;
    if let Some(p) = lp.perturbation {
        d = d.perturbed(p);
    }
    Ok(d)
}

fn header(r: &Resolved, extra: &[&str]) -> Vec<String> {
    r.system
        .state_names
        .iter()
        .cloned()
        .chain(extra.iter().map(|s| s.to_string()))
        .collect()
}

fn trajectory_rows(tr: &Trajectory) -> Vec<Vec<f64>> {
    tr.times
        .iter()
        .zip(&tr.states)
        .zip(&tr.controls)
        .map(|((&t, y), &u)| {
            std::iter::once(t)
                .chain(y.iter().copied())
                .chain([u])
                .collect()
        })
        .collect()
}

fn measure_rows(m: &OccMeasure) -> Vec<Vec<f64>> {
    m.atoms
        .iter()
        .map(|a| a.y.iter().copied().chain([a.u, a.w]).collect())
        .collect()
}

fn trajectory_header(r: &Resolved) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain(header(r, &[&r.system.control_name]))
        .collect()
}

fn fmt_point(y: &[f64]) -> String {
    let parts: Vec<String> = y.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(", "))
}

// ---- simulate ----

pub fn simulate(r: &Resolved, dir: &RunDir) -> Result<Outcome, CliError> {
    let sys = &r.system;
    let horizon = r.config.simulate.horizon.expect("resolved");
    let control = r.config.simulate.control.clone().expect("resolved");
    let step = r.config.grid.step;
    let mut out = Outcome::new();
    let mut runs = Vec::new();
    for (i, y0) in r.config.y0.iter().enumerate() {
        let tr = integrate(sys, y0, &control, horizon, step, 0.0)?;
        let m = cesaro_measure(&tr)?.merged();
        let avg = tr.time_average(|y, u| sys.k(y, u))?;
        let discounted = r
            .config
            .horizons
            .lambda
            .iter()
            .map(|&lambda| -> Result<Value, CliError> {
                if lambda * horizon < MIN_DISCOUNTED_SPAN {
                    return Ok(json!({
                        "lambda": lambda,
                        "cost": null,
                        "note": format!("needs λT ≥ {MIN_DISCOUNTED_SPAN}"),
                    }));
                }
                let dm = discounted_measure(&tr, lambda, horizon)?;
                Ok(json!({
                    "lambda": lambda,
                    "cost": integrate_against(&dm, |y, u| sys.k(y, u).unwrap_or(f64::NAN)),
                    "dropped_tail_weight": (-lambda * horizon).exp(),
                }))
            })
            .collect::<Result<Vec<_>, _>>()?;
        dir.write_csv(
            &format!("trajectory_{i}.csv"),
            &trajectory_header(r),
            &trajectory_rows(&tr),
        )?;
        dir.write_csv(
            &format!("measure_{i}.csv"),
            &header(r, &[&sys.control_name, "w"]),
            &measure_rows(&m),
        )?;
        out.line(
            None,
            format!(
                "y0 {}: average cost {avg:.6} over T = {horizon}",
                fmt_point(y0)
            ),
        );
        runs.push(json!({
            "y0": y0,
            "horizon": horizon,
            "average_cost": avg,
            "final_state": tr.final_state(),
            "measure_atoms": m.atoms.len(),
            "discounted": discounted,
            "trajectory_file": format!("trajectory_{i}.csv"),
            "measure_file": format!("measure_{i}.csv"),
        }));
    }
    dir.write_json("summary.json", &json!({ "config": r.config, "runs": runs }))?;
    Ok(out)
}

// ---- value ----

enum ValueJob {
    Cesaro { horizon: f64, delta: f64 },
    Abel { lambda: f64, delta: f64 },
}

fn value_jobs(r: &Resolved, deltas: &[f64]) -> Vec<ValueJob> {
    let h = &r.config.horizons;
    let mut jobs = Vec::new();
    for &delta in deltas {
        jobs.extend(
            h.t.iter()
                .map(|&horizon| ValueJob::Cesaro { horizon, delta }),
        );
        jobs.extend(
            h.lambda
                .iter()
                .map(|&lambda| ValueJob::Abel { lambda, delta }),
        );
    }
    jobs
}

fn solve_value(r: &Resolved, job: &ValueJob) -> Result<ValueTable, CliError> {
    let grid = state_grid(r);
    let step = r.config.grid.step;
    Ok(match *job {
        ValueJob::Cesaro { horizon, delta } => {
            cesaro_value_dp(&r.system, horizon, delta, &grid, step)?
        }
        ValueJob::Abel { lambda, delta } => {
            abel_value_dp(&r.system, lambda, delta, &grid, step, &ViOptions::default())?
        }
    })
}

fn at_y0(r: &Resolved, table: &ValueTable) -> Vec<Option<f64>> {
    r.config.y0.iter().map(|y| table.value_at(y)).collect()
}

pub fn value(r: &Resolved, dir: &RunDir) -> Result<Outcome, CliError> {
    let jobs = value_jobs(r, &r.config.horizons.delta);
    let entries = fan_out(&jobs, |job| {
        let table = solve_value(r, job)?;
        let (name, mut entry) = match (job, &table.kind) {
            (ValueJob::Cesaro { horizon, delta }, _) => (
                format!("cesaro_T{}_delta{}.csv", tag(*horizon), tag(*delta)),
                json!({ "kind": "cesaro", "T": horizon, "delta": delta }),
            ),
            (ValueJob::Abel { lambda, delta }, ValueKind::Abel { sweeps, .. }) => (
                format!("abel_lambda{}_delta{}.csv", tag(*lambda), tag(*delta)),
                json!({ "kind": "abel", "lambda": lambda, "delta": delta, "sweeps": sweeps }),
            ),
            (ValueJob::Abel { lambda, delta }, _) => (
                format!("abel_lambda{}_delta{}.csv", tag(*lambda), tag(*delta)),
                json!({ "kind": "abel", "lambda": lambda, "delta": delta }),
            ),
        };
        let rows: Vec<Vec<f64>> = (0..table.values.len())
            .map(|i| {
                table
                    .grid
                    .node(i)
                    .into_iter()
                    .chain([table.values[i]])
                    .collect()
            })
            .collect();
        dir.write_csv(&name, &header(r, &["value"]), &rows)?;
        entry["file"] = json!(name);
        entry["active_nodes"] = json!((0..table.values.len())
            .filter(|&i| table.is_active(i))
            .count());
        entry["at_y0"] = json!(at_y0(r, &table));
        Ok(entry)
    })?;
    let mut out = Outcome::new();
    for e in &entries {
        out.line(
            None,
            format!("{} → {}", e["file"].as_str().unwrap_or(""), e["at_y0"]),
        );
    }
    dir.write_json(
        "summary.json",
        &json!({ "config": r.config, "tables": entries }),
    )?;
    Ok(out)
}

// ---- lp ----

struct LpRun {
    result: KstarResult,
    cert: Certificate,
    report: CertificateReport,
}

fn lp_run(r: &Resolved, y0: &[f64]) -> Result<LpRun, CliError> {
    let disc = discretization(r, y0)?;
    let result = solve_kstar(&r.system, &disc)?;
    let cert = extract_certificate(&result, &disc, &r.system)?;
    let report = verify_certificate(&cert, &r.system, &fine_grid(r), TOL_CERT_EXTRACTED)?;
    Ok(LpRun {
        result,
        cert,
        report,
    })
}

pub fn lp(r: &Resolved, dir: &RunDir) -> Result<Outcome, CliError> {
    let idx: Vec<usize> = (0..r.config.y0.len()).collect();
    let runs = fan_out(&idx, |&i| {
        let y0 = &r.config.y0[i];
        let run = lp_run(r, y0)?;
        dir.write(
            &format!("certificate_{i}.json"),
            run.cert.to_json()?.as_bytes(),
        )?;
        dir.write_csv(
            &format!("gamma_{i}.csv"),
            &header(r, &[&r.system.control_name, "w"]),
            &measure_rows(&run.result.gamma),
        )?;
        Ok(run)
    })?;
    let mut out = Outcome::new();
    let mut entries = Vec::new();
    for (i, (y0, run)) in r.config.y0.iter().zip(&runs).enumerate() {
        let res = &run.result;
        let status = Status::of(res.gap <= TOL_GAP && run.report.pass);
        out.line(
            Some(status),
            format!(
                "y0 {}: k* = {:.6}, μ = {:.6}, gap {:.1e}, certificate margin {:.2e}",
                fmt_point(y0),
                res.kstar,
                res.mu,
                res.gap,
                run.report
                    .value_margin
                    .margin
                    .min(run.report.psi_margin.margin)
            ),
        );
        entries.push(json!({
            "y0": y0,
            "kstar": res.kstar,
            "mu": res.mu,
            "mu_normalization": res.mu_normalization,
            "gap": res.gap,
            "xi_mass": res.xi_mass,
            "gamma_atoms": res.gamma.atoms.len(),
            "iterations": res.solution.iterations,
            "certificate_file": format!("certificate_{i}.json"),
            "gamma_file": format!("gamma_{i}.csv"),
            "verification": run.report,
            "status": status,
        }));
    }
    dir.write_json("lp.json", &json!({ "config": r.config, "runs": entries }))?;
    Ok(out)
}

// ---- certify / feedback ----

/// The certificates named by the config, each with its initial state.
fn certificates(r: &Resolved) -> Result<Vec<Certificate>, CliError> {
    let sys = &r.system;
    match &r.config.certificate {
        CertificateSource::File(path) => {
            let cert = r.load_certificate(path)?;
            if cert.y0.len() != sys.dim() || sys.distance(&cert.y0) > sys.tol_viab {
                return Err(CliError::Config(format!(
                    "certificate y0 {:?} is not a point of Y",
                    cert.y0
                )));
            }
            Ok(vec![cert])
        }
        CertificateSource::ClosedForm => r
            .config
            .y0
            .iter()
            .map(|y| Ok(polar_rotation_certificate(y)?))
            .collect(),
        CertificateSource::Extracted => fan_out(&r.config.y0, |y| Ok(lp_run(r, y)?.cert)),
        CertificateSource::Global => {
            // one LP over the whole grid; only μ depends on y0
            let disc = discretization(r, &r.config.y0[0])?;
            let base = global_certificate(sys, &disc, GLOBAL_COEFF_BOUND)?;
            r.config
                .y0
                .iter()
                .map(|y| {
                    let mut c = base.clone();
                    c.mu += c.psi.value(y)? - c.psi.value(&c.y0)?;
                    c.y0 = y.clone();
                    Ok(c)
                })
                .collect()
        }
    }
}

fn source_label(s: &CertificateSource) -> String {
    match s {
        CertificateSource::File(p) => p.display().to_string(),
        other => serde_json::to_value(other)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
    }
}

pub fn certify(r: &Resolved, dir: &RunDir) -> Result<Outcome, CliError> {
    let certs = certificates(r)?;
    let grid = fine_grid(r);
    let reports = fan_out(&certs, |c| {
        Ok(verify_certificate(
            c,
            &r.system,
            &grid,
            c.default_tolerance(),
        )?)
    })?;
    let mut out = Outcome::new();
    let mut entries = Vec::new();
    for (i, (cert, rep)) in certs.iter().zip(&reports).enumerate() {
        let status = Status::of(rep.pass);
        out.line(
            Some(status),
            format!(
                "y0 {}: μ = {:.6}, value margin {:.2e} at {}, ψ margin {:.2e} (tol {:.0e}, {} points)",
                fmt_point(&cert.y0),
                cert.mu,
                rep.value_margin.margin,
                fmt_point(&rep.value_margin.y),
                rep.psi_margin.margin,
                rep.tol,
                rep.points
            ),
        );
        dir.write(&format!("certificate_{i}.json"), cert.to_json()?.as_bytes())?;
        entries.push(json!({
            "y0": cert.y0,
            "mu": cert.mu,
            "provenance": cert.provenance,
            "report": rep,
            "status": status,
        }));
    }
    dir.write_json(
        "certify.json",
        &json!({ "config": r.config, "source": source_label(&r.config.certificate), "results": entries }),
    )?;
    Ok(out)
}

pub fn feedback(r: &Resolved, dir: &RunDir) -> Result<Outcome, CliError> {
    let sys = &r.system;
    let certs = certificates(r)?;
    let (_, nodes) = nodes_in_y(sys, &state_grid(r))?;
    let horizon = r.config.feedback.horizon;
    let mut out = Outcome::new();
    let mut entries = Vec::new();
    for (i, cert) in certs.iter().enumerate() {
        let rep = verify_certificate(cert, sys, &fine_grid(r), cert.default_tolerance())?;
        let fb = synthesize_feedback(cert, sys);
        let (tr, avg) = closed_loop_rollout(&fb, sys, &cert.y0, horizon, r.config.grid.step, 0.0)?;
        dir.write_csv(
            &format!("rollout_{i}.csv"),
            &trajectory_header(r),
            &trajectory_rows(&tr),
        )?;
        let map = nodes
            .iter()
            .map(|y| Ok(y.iter().copied().chain([fb.control(y)?]).collect()))
            .collect::<Result<Vec<Vec<f64>>, CliError>>()?;
        dir.write_csv(
            &format!("feedback_map_{i}.csv"),
            &header(r, &[&sys.control_name]),
            &map,
        )?;
        let status = Status::of(rep.pass);
        out.line(
            Some(status),
            format!(
                "y0 {}: rollout average {avg:.6} over T = {horizon}, μ = {:.6}, certificate {}",
                fmt_point(&cert.y0),
                cert.mu,
                if rep.pass { "verified" } else { "not verified" }
            ),
        );
        entries.push(json!({
            "y0": cert.y0,
            "mu": cert.mu,
            "average_cost": avg,
            "final_state": tr.final_state(),
            "rollout_file": format!("rollout_{i}.csv"),
            "feedback_map_file": format!("feedback_map_{i}.csv"),
            "certificate_verified": rep.pass,
            "status": status,
        }));
    }
    dir.write_json(
        "feedback.json",
        &json!({ "config": r.config, "source": source_label(&r.config.certificate), "runs": entries }),
    )?;
    Ok(out)
}

// ---- diagnose ----

struct Check {
    name: String,
    status: Status,
    detail: Value,
}

fn cesaro_tables(r: &Resolved) -> Result<Vec<(f64, ValueTable)>, CliError> {
    let ts = r.config.horizons.t.clone();
    fan_out(&ts, |&t| {
        Ok((
            t,
            cesaro_value_dp(&r.system, t, 0.0, &state_grid(r), r.config.grid.step)?,
        ))
    })
}

/// A random point of `Y` by rejection from its bounding box.
fn random_point(r: &Resolved, rng: &mut StdRng) -> Option<Vec<f64>> {
    let (lo, hi) = r.system.constraint.bounding_box(0.0);
    (0..1000).find_map(|_| {
        let y: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| rng.gen_range(*a..=*b))
            .collect();
        (r.system.distance(&y) <= 0.0).then_some(y)
    })
}

fn random_signal(r: &Resolved, rng: &mut StdRng, horizon: f64) -> ControlSignal {
    let step = r.config.grid.step;
    let controls = &r.system.controls;
    let (mut durations, mut values, mut t) = (Vec::new(), Vec::new(), 0.0);
    while t < horizon {
        let d = rng.gen_range(step.max(0.2)..step.max(0.2) * 10.0);
        durations.push(d);
        values.push(controls[rng.gen_range(0..controls.len())]);
        t += d;
    }
    ControlSignal::from_durations(&durations, &values).expect("increasing breakpoints")
}

/// Occupational measures of admissible random trajectories; draws that leave
/// `Y` are discarded.
fn sampled_measures(r: &Resolved, horizon: f64, rng: &mut StdRng) -> (Vec<OccMeasure>, usize) {
    let want = r.config.diagnose.samples;
    let mut got = Vec::new();
    let mut tries = 0;
    while got.len() < want && tries < 50 * want {
        tries += 1;
        let Some(y0) = random_point(r, rng) else {
            break;
        };
        let sig = random_signal(r, rng, horizon);
        if let Ok(tr) = integrate(&r.system, &y0, &sig, horizon, r.config.grid.step, 0.0) {
            if let Ok(m) = cesaro_measure(&tr) {
                got.push(m.merged());
            }
        }
    }
    (got, tries)
}

/// Points of the discretized `W` picked out by random linear objectives.
fn w_vertices(
    r: &Resolved,
    disc: &IdlpDiscretization,
    rng: &mut StdRng,
) -> Result<Vec<OccMeasure>, CliError> {
    let mut out = Vec::new();
    for _ in 0..r.config.diagnose.samples {
        let coeffs: Vec<f64> = (0..disc.basis.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let psi = Field::linear(disc.basis.clone(), coeffs)?;
        out.push(aux_w_lp(&r.system, disc, |y| psi.value(y))?.gamma.merged());
    }
    Ok(out)
}

pub fn diagnose(r: &Resolved, dir: &RunDir) -> Result<Outcome, CliError> {
    let sys = &r.system;
    let mut checks = Vec::new();
    let tables = cesaro_tables(r)?;

    for (t, table) in &tables {
        let rep = dpp_gradient_diagnostic(table, sys, TOL_DPP)?;
        checks.push(Check {
            name: format!("gradient diagnostic T={t}"),
            status: Status::of(rep.pass),
            detail: serde_json::to_value(&rep)?,
        });
    }

    let runs = fan_out(&r.config.y0, |y| {
        let d = discretization(r, y)?;
        Ok((solve_kstar(sys, &d)?, d))
    })?;
    for (y0, (res, disc)) in r.config.y0.iter().zip(&runs) {
        let residual = w_residual(&res.gamma, &disc.basis, sys)?;
        let bands = disc.bands();
        let excess = residual
            .iter()
            .zip(&bands)
            .map(|(x, e)| x.abs() - e)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check {
            name: format!("W residual of optimal γ at y0 {}", fmt_point(y0)),
            status: Status::of(excess <= 1e-9),
            detail: json!({ "max_excess_over_band": excess, "residual": residual, "bands": bands }),
        });
        let cost = integrate_against(&res.gamma, |y, u| sys.k(y, u).unwrap_or(f64::NAN));
        for (t, table) in &tables {
            let v = integrate_against(&res.gamma, |y, _| table.value_at(y).unwrap_or(f64::NAN));
            checks.push(Check {
                name: format!("value below cost on optimal γ at y0 {}, T={t}", fmt_point(y0)),
                status: Status::of(v <= cost + TOL_VALUE_BELOW_COST),
                detail: json!({ "value_integral": v, "cost_integral": cost, "tol": TOL_VALUE_BELOW_COST }),
            });
        }
    }

    let mut rng = StdRng::seed_from_u64(r.config.seed);
    let reference = w_vertices(r, &runs[0].1, &mut rng)?;
    let (lo, hi) = sys.constraint.bounding_box(0.0);
    let metric = MetricConfig::monomials(&lo, &hi, sys.control_range.0, sys.control_range.1, 16);
    let basis = &runs[0].1.basis;
    let (_, nodes) = nodes_in_y(sys, &state_grid(r))?;
    let sup_phi = nodes
        .iter()
        .flat_map(|y| basis.values(y))
        .fold(0.0, |a: f64, v| a.max(v.abs()));
    let mut trend = Vec::new();
    let mut residuals = Vec::new();
    for &t in &r.config.horizons.t {
        let (sampled, tries) = sampled_measures(r, t, &mut rng);
        let distance = if sampled.is_empty() {
            None
        } else {
            Some(hausdorff_diagnostic(&sampled, &reference, &metric)?)
        };
        trend.push(
            json!({ "T": t, "samples": sampled.len(), "draws": tries, "distance": distance }),
        );
        let mut max: f64 = 0.0;
        for m in &sampled {
            max = w_residual(m, basis, sys)?
                .iter()
                .fold(max, |a, x| a.max(x.abs()));
        }
        residuals.push(json!({ "T": t, "samples": sampled.len(), "max_abs_residual": max, "scale": 2.0 * sup_phi / t }));
    }
    // the residual is (φ(y(T)) - φ(y0))/T up to quadrature error at switches
    checks.push(Check {
        name: "W residual of sampled trajectory measures".into(),
        status: Status::Info,
        detail: json!({ "sup_phi": sup_phi, "horizons": residuals }),
    });
    checks.push(Check {
        name: "Hausdorff trend of sampled measures against the discretized W".into(),
        status: Status::Info,
        detail: json!({ "reference_points": reference.len(), "trend": trend }),
    });

    let mut out = Outcome::new();
    for c in &checks {
        out.line(Some(c.status), c.name.clone());
    }
    let list: Vec<Value> = checks
        .iter()
        .map(|c| json!({ "name": c.name, "status": c.status, "detail": c.detail }))
        .collect();
    dir.write_json(
        "diagnose.json",
        &json!({ "config": r.config, "checks": list }),
    )?;
    Ok(out)
}

// ---- report ----

pub fn report(r: &Resolved, dir: &RunDir) -> Result<Outcome, CliError> {
    let jobs = value_jobs(r, &[0.0]);
    let tables = fan_out(&jobs, |job| solve_value(r, job))?;
    let lps = fan_out(&r.config.y0, |y| {
        Ok(solve_kstar(&r.system, &discretization(r, y)?)?)
    })?;
    let max_t = r.max_horizon();

    let mut out = Outcome::new();
    let mut entries = Vec::new();
    let mut v_series = Vec::new();
    let mut h_series = Vec::new();
    let mut s_series = Vec::new();
    for (i, (y0, lp)) in r.config.y0.iter().zip(&lps).enumerate() {
        let mut by_t = Vec::new();
        let mut by_lambda = Vec::new();
        for (job, table) in jobs.iter().zip(&tables) {
            let v = table.value_at(y0).unwrap_or(f64::NAN);
            match *job {
                ValueJob::Cesaro { horizon, .. } => by_t.push((horizon, v)),
                ValueJob::Abel { lambda, .. } => by_lambda.push((lambda, v)),
            }
        }
        by_t.sort_by(|a, b| a.0.total_cmp(&b.0));
        by_lambda.sort_by(|a, b| a.0.total_cmp(&b.0));
        let v_max = by_t.iter().find(|p| p.0 == max_t).map_or(f64::NAN, |p| p.1);
        let (lower, upper) = (lp.mu - TOL_SANDWICH, lp.kstar + TOL_SANDWICH);
        let status = Status::of(lower <= v_max && v_max <= upper);
        out.line(
            Some(status),
            format!(
                "y0 {}: μ - {TOL_SANDWICH} = {lower:.4} ≤ V_{max_t} = {v_max:.4} ≤ k* + {TOL_SANDWICH} = {upper:.4}",
                fmt_point(y0)
            ),
        );
        let label = format!("y0 {}", i + 1);
        let t_range = |y: f64| vec![(by_t[0].0, y), (max_t, y)];
        v_series.push(Series {
            label: format!("V_T, {label}"),
            points: by_t.clone(),
            dashed: false,
        });
        v_series.push(Series {
            label: format!("k*, {label}"),
            points: t_range(lp.kstar),
            dashed: true,
        });
        h_series.push(Series {
            label: format!("h_λ, {label}"),
            points: by_lambda.clone(),
            dashed: false,
        });
        h_series.push(Series {
            label: format!("k*, {label}"),
            points: vec![
                (by_lambda[0].0, lp.kstar),
                (by_lambda[by_lambda.len() - 1].0, lp.kstar),
            ],
            dashed: true,
        });
        s_series.push(Series {
            label: format!("V_T, {label}"),
            points: by_t.clone(),
            dashed: false,
        });
        s_series.push(Series {
            label: format!("μ - tol, {label}"),
            points: t_range(lower),
            dashed: true,
        });
        s_series.push(Series {
            label: format!("k* + tol, {label}"),
            points: t_range(upper),
            dashed: true,
        });
        entries.push(json!({
            "y0": y0,
            "kstar": lp.kstar,
            "mu": lp.mu,
            "gap": lp.gap,
            "value_by_T": by_t.iter().map(|(t, v)| json!({ "T": t, "value": v })).collect::<Vec<_>>(),
            "abel_by_lambda": by_lambda.iter().map(|(l, v)| json!({ "lambda": l, "value": v })).collect::<Vec<_>>(),
            "sandwich": { "T": max_t, "lower": lower, "value": v_max, "upper": upper, "status": status },
        }));
    }
    let plots = [
        (
            "value_vs_T.svg",
            "Finite-horizon value against T",
            "T",
            "V_T(y0)",
            false,
            v_series,
        ),
        (
            "abel_vs_lambda.svg",
            "Discounted value against λ",
            "λ",
            "h_λ(y0)",
            true,
            h_series,
        ),
        (
            "sandwich.svg",
            "μ - tol ≤ V_T ≤ k* + tol",
            "T",
            "value",
            false,
            s_series,
        ),
    ];
    let mut files = Vec::new();
    for (name, title, x, y, log_x, series) in plots {
        let plot = Plot {
            title: title.into(),
            x_label: x.into(),
            y_label: y.into(),
            log_x,
            series,
        };
        dir.write(name, plot.render().as_bytes())?;
        files.push(name);
    }
    dir.write_json(
        "report.json",
        &json!({ "config": r.config, "y0": entries, "plots": files }),
    )?;
    Ok(out)
}
