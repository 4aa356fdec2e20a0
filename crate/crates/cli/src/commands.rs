//! The four subcommands. Each writes its files under `out` and returns a
//! one-line summary for the terminal.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use opengrape::environment::{omega_grid, spectrum_table, SpectralDensity};
use opengrape::nlevel::{build_full_generator, NLevelGrid};
use opengrape::optimizer::{optimize_with, GradientBackend, NLevelBackend, OptimizationTrace, QubitBackend};
use opengrape::qubit::propagate;
use opengrape::{paulis, CMatrix};
use serde::Serialize;
use serde_json::json;

use crate::config::{Backend, DensitySpec, Problem, RunConfig, System};
use crate::error::CliError;

/// Relative-error threshold for `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-5;

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct StateOut {
    bloch: Option<[f64; 3]>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

fn state_out(rho: &CMatrix) -> StateOut {
    let n = rho.nrows();
    StateOut {
        bloch: (n == 2).then(|| bloch_components(rho)),
        re: (0..n).map(|i| (0..n).map(|j| rho[(i, j)].re).collect()).collect(),
        im: (0..n).map(|i| (0..n).map(|j| rho[(i, j)].im).collect()).collect(),
    }
}

fn bloch_components(rho: &CMatrix) -> [f64; 3] {
    let s = paulis();
    [0, 1, 2].map(|k| (&s[k] * rho).trace().re)
}

/// States at every breakpoint under the problem's current controls.
fn trajectory(p: &Problem) -> Result<Vec<CMatrix>, CliError> {
    if let Some((params, r0, grid)) = p.qubit() {
        return Ok(propagate(&r0, &grid, &params)?.iter().map(opengrape::bloch_matrix).collect());
    }
    let sys = p.nlevel_system();
    let mut rho = p.rho0.matrix().clone();
    let mut out = vec![rho.clone()];
    for m in 0..p.grid.segments() {
        let l = build_full_generator(&sys, &p.grid.u()[m], &p.grid.n(m))?;
        rho = l.exp(p.grid.dt(m)).apply(&rho);
        out.push(rho.clone());
    }
    Ok(out)
}

fn state_header(n: usize) -> String {
    if n == 2 {
        return "r1,r2,r3".into();
    }
    let mut cols = Vec::new();
    for i in 0..n {
        for j in 0..n {
            cols.push(format!("rho_{i}{j}_re"));
            cols.push(format!("rho_{i}{j}_im"));
        }
    }
    cols.join(",")
}

fn state_row(rho: &CMatrix) -> String {
    let n = rho.nrows();
    if n == 2 {
        return bloch_components(rho).map(num).join(",");
    }
    let mut cols = Vec::new();
    for i in 0..n {
        for j in 0..n {
            cols.push(num(rho[(i, j)].re));
            cols.push(num(rho[(i, j)].im));
        }
    }
    cols.join(",")
}

fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Bloch => "bloch",
        Backend::Superoperator => "superoperator",
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let p = cfg.resolve()?;
    let states = trajectory(&p)?;
    let mut csv = format!("t,{}\n", state_header(p.system.dim()));
    for (t, rho) in p.grid.times().iter().zip(&states) {
        writeln!(csv, "{},{}", num(*t), state_row(rho)).unwrap();
    }
    fs::write(out.join("trajectory.csv"), csv)?;
    let last = states.last().unwrap();
    write_json(
        &out.join("trajectory.json"),
        &json!({
            "backend": backend_name(p.backend),
            "dimension": p.system.dim(),
            "segments": p.grid.segments(),
            "total_time": p.grid.times().last().unwrap() - p.grid.times()[0],
            "system": cfg.system,
            "final_state": state_out(last),
        }),
    )?;
    Ok(format!("simulate: {} segments, final state {}", p.grid.segments(), state_row(last)))
}

fn backend(p: &Problem) -> Result<Box<dyn GradientBackend>, CliError> {
    let obj = p.objective.clone().ok_or_else(|| CliError::Config("config: missing `objective`".into()))?;
    Ok(match p.qubit() {
        Some((params, r0, grid)) => Box::new(QubitBackend::new(obj, r0, grid, params)),
        None => Box::new(NLevelBackend::new(obj, p.rho0.clone(), p.grid.clone(), p.nlevel_system())),
    })
}

fn control_header(p: &Problem) -> String {
    if p.system.control_count() == 1 && p.system.transition_count() == 1 {
        return "segment,t_left,u,w,n".into();
    }
    let pairs: Vec<(usize, usize)> = match &p.system {
        System::Qubit(_) => vec![(0, 1)],
        System::NLevel(s) => s.transitions(),
    };
    let mut cols = vec!["segment".to_string(), "t_left".to_string()];
    cols.extend((0..p.system.control_count()).map(|k| format!("u{k}")));
    cols.extend(pairs.iter().map(|(i, j)| format!("w_{i}{j}")));
    cols.extend(pairs.iter().map(|(i, j)| format!("n_{i}{j}")));
    cols.join(",")
}

fn controls_csv(p: &Problem, grid: &NLevelGrid) -> String {
    let mut s = control_header(p);
    s.push('\n');
    for m in 0..grid.segments() {
        let mut cols = vec![m.to_string(), num(grid.times()[m])];
        cols.extend(grid.u()[m].iter().map(|x| num(*x)));
        cols.extend(grid.w()[m].iter().map(|x| num(*x)));
        cols.extend(grid.n(m).iter().map(|x| num(*x)));
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

pub fn trace_csv(t: &OptimizationTrace) -> String {
    let mut s = String::from("iteration,F,grad_norm,step\n");
    writeln!(s, "0,{},{},{}", num(t.initial_objective), num(t.initial_gradient_norm), num(0.0)).unwrap();
    for it in &t.iterations {
        writeln!(s, "{},{},{},{}", it.iteration, num(it.objective), num(it.gradient_norm), num(it.step)).unwrap();
    }
    s
}

pub fn optimize(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let p = cfg.resolve()?;
    let be = backend(&p)?;
    let trace = optimize_with(be.as_ref(), &p.grid.flat_controls(), &p.optimizer)?;
    let grid = p.grid.with_flat_controls(&trace.final_controls)?;
    let fin = Problem { grid: grid.clone(), ..p.clone() };
    let last = trajectory(&fin)?.pop().unwrap();

    fs::write(out.join("trace.csv"), trace_csv(&trace))?;
    fs::write(out.join("controls.csv"), controls_csv(&p, &grid))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "termination": trace.termination.as_str(),
            "converged": trace.termination.converged(),
            "iterations": trace.iterations.len(),
            "initial_objective": trace.initial_objective,
            "final_objective": trace.final_objective,
            "final_gradient_norm": trace.final_gradient_norm,
            "final_state": state_out(&last),
        }),
    )?;
    let line = format!(
        "optimize: {} after {} iterations, F = {:.6e}, |grad| = {:.3e}",
        trace.termination.as_str(),
        trace.iterations.len(),
        trace.final_objective,
        trace.final_gradient_norm
    );
    if trace.termination.converged() {
        Ok(line)
    } else {
        Err(CliError::NotConverged(line))
    }
}

fn component_labels(p: &Problem) -> Vec<(String, usize)> {
    let m = p.grid.segments();
    let pairs: Vec<(usize, usize)> = match &p.system {
        System::Qubit(_) => vec![(0, 1)],
        System::NLevel(s) => s.transitions(),
    };
    let single = p.system.control_count() == 1 && pairs.len() == 1;
    let mut labels = Vec::new();
    for seg in 0..m {
        for k in 0..p.system.control_count() {
            labels.push((if single { "u".into() } else { format!("u{k}") }, seg));
        }
    }
    for seg in 0..m {
        for (i, j) in &pairs {
            labels.push((if single { "w".into() } else { format!("w_{i}{j}") }, seg));
        }
    }
    labels
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let p = cfg.resolve()?;
    let be = backend(&p)?;
    let x = p.grid.flat_controls();
    let (_, mut analytic) = be.cost_and_gradient(&x)?;
    if cfg.test_hooks.corrupt_gradient {
        analytic.iter_mut().for_each(|g| *g *= 1.01);
    }
    let scale = analytic.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
    let labels = component_labels(&p);

    let mut csv = String::from("index,control,segment,analytic,finite_difference,relative_error\n");
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let eval = |d: f64| -> Result<f64, CliError> {
            let mut y = x.clone();
            y[i] += d;
            Ok(be.cost_and_gradient(&y)?.0)
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        let err = (analytic[i] - fd).abs();
        // Measured against the gradient's scale: components far below it
        // sit under the difference quotient's rounding floor.
        let denom = analytic[i].abs().max(fd.abs()).max(scale);
        let rel = if err == 0.0 { 0.0 } else { err / denom };
        worst = worst.max(rel);
        let (label, seg) = &labels[i];
        writeln!(csv, "{i},{label},{seg},{},{},{}", num(analytic[i]), num(fd), num(rel)).unwrap();
    }
    fs::write(out.join("gradcheck.csv"), csv)?;
    let passed = worst <= GRADCHECK_TOL;
    write_json(
        &out.join("gradcheck.json"),
        &json!({
            "components": x.len(),
            "max_relative_error": worst,
            "tolerance": GRADCHECK_TOL,
            "passed": passed,
        }),
    )?;
    if passed {
        Ok(format!("gradcheck: {} components, max relative error {worst:.3e}", x.len()))
    } else {
        Err(CliError::GradcheckFailed(worst))
    }
}

fn density(spec: &DensitySpec) -> Result<SpectralDensity, CliError> {
    let r = match spec {
        DensitySpec::Planck { beta } => SpectralDensity::planck(*beta),
        DensitySpec::Filtered { beta, centers, variance } => SpectralDensity::filtered(*beta, centers.clone(), *variance),
        DensitySpec::TimeVarying { times, betas } => SpectralDensity::time_varying(times.clone(), betas.clone()),
    };
    r.map_err(|e| CliError::Config(format!("spectrum.density: {e}")))
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let spec = cfg.spectrum.as_ref().ok_or_else(|| CliError::Config("config: missing `spectrum`".into()))?;
    let d = density(&spec.density)?;
    let omegas = omega_grid(spec.omega_min, spec.omega_max, spec.points)
        .map_err(|e| CliError::Config(format!("spectrum: {e}")))?;
    let mut csv = String::from("omega,n_omega\n");
    let table = spectrum_table(&d, &omegas, spec.t);
    for (w, n) in &table {
        writeln!(csv, "{},{}", num(*w), num(*n)).unwrap();
    }
    fs::write(out.join("spectrum.csv"), csv)?;
    let peak = table.iter().cloned().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Ok(format!("spectrum: {} points, peak n = {:.6e} at omega = {:.4}", table.len(), peak.1, peak.0))
}
