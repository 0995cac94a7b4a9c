//! Runs a resolved invocation and writes its files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use lrmc::experiments::{
    convergence_instance, run_convergence, run_phase, run_timing, write_contour_csv,
    write_convergence_csv, write_phase_csv, write_timing_csv, Algorithm, ConvergenceRow,
    ExperimentSpec, Summary,
};
use lrmc::theory::{
    balancing_drift_check, concentration_check, contraction_check, hypothesis_check, run_loo_family,
};
use lrmc::{run, spectral_init, LooSelector, RunStatus, SolverConfig, SolverVariant};
use serde_json::json;

use crate::args::Task;
use crate::{plot, CliError};

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failure(format!("{}: {e}", path.display()))
}

fn prepare(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))
}

/// Writes through `fill` into a temporary sibling and renames it into place,
/// so a reader never sees a half-written file.
fn write_file(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<File>) -> lrmc::Result<()>,
) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    let file = File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
    let mut w = BufWriter::new(file);
    fill(&mut w).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_summary(
    out: &Path,
    name: &str,
    spec: &ExperimentSpec,
    stats: serde_json::Value,
) -> Result<(), CliError> {
    let summary = Summary::new(name, spec, stats)?;
    write_file(&out.join(format!("{name}.json")), |w| summary.write(w))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Failure(format!("cannot start worker pool: {e}")))
}

fn converge(spec: &ExperimentSpec, out: &Path) -> Result<(), CliError> {
    prepare(out)?;
    let result = run_convergence(spec)?;
    write_file(&out.join("convergence.csv"), |w| {
        write_convergence_csv(&result.rows, w)
    })?;
    for run in &result.runs {
        log::info!(
            "{} (lambda {:e}): {:?} after {} iterations, relative error {:.3e}",
            run.algorithm,
            run.lambda,
            run.status,
            run.iterations,
            run.final_rel_err
        );
    }
    let diverged: Vec<String> = result
        .runs
        .iter()
        .filter(|r| r.status == RunStatus::Diverged)
        .map(|r| r.algorithm.to_string())
        .collect();
    if !diverged.is_empty() {
        return Err(CliError::Failure(format!(
            "diverged: {}",
            diverged.join(", ")
        )));
    }
    write_summary(out, "convergence", spec, json!({ "runs": result.runs }))
}

fn phase(spec: &ExperimentSpec, algorithm: Algorithm, out: &Path) -> Result<(), CliError> {
    prepare(out)?;
    let grid = run_phase(spec, algorithm)?;
    write_file(&out.join("phase.csv"), |w| write_phase_csv(&grid, w))?;
    write_file(&out.join("contour.csv"), |w| {
        write_contour_csv(&grid.contour, w)
    })?;
    let rates: Vec<Vec<f64>> = (0..grid.r_values.len()).map(|ri| grid.rates(ri)).collect();
    let stats = json!({
        "algorithm": algorithm,
        "p_values": grid.p_values,
        "r_values": grid.r_values,
        "rates": rates,
        "contour": grid.contour,
    });
    write_summary(out, "phase", spec, stats)
}

fn timing(spec: &ExperimentSpec, out: &Path) -> Result<(), CliError> {
    prepare(out)?;
    let result = run_timing(spec)?;
    write_file(&out.join("timing.csv"), |w| {
        write_timing_csv(&result.rows, w)
    })?;
    write_summary(
        out,
        "timing",
        spec,
        json!({ "rows": result.rows, "trials": result.trials }),
    )
}

fn theory(
    spec: &ExperimentSpec,
    n_selectors: usize,
    stride: usize,
    out: &Path,
) -> Result<(), CliError> {
    prepare(out)?;
    let (gt, mask) = convergence_instance(spec)?;
    let mut config = SolverConfig::new(SolverVariant::Vanilla, spec.step);
    config.tol = spec.tol;
    config.max_iters = spec.max_iters;
    config.record_every = stride;
    config.track_dist = true;
    config.keep_iterates = true;
    let init = spectral_init(&gt, &mask, spec.r)?;
    let main = run(&gt, &mask, &config, &init)?;
    if main.status == RunStatus::Diverged {
        return Err(CliError::Failure(format!(
            "main run diverged after {} iterations",
            main.iterations
        )));
    }

    // leave-one-out sequences run exactly as long as the main run
    let selectors = LooSelector::evenly_spaced(spec.d1, spec.d2, n_selectors, n_selectors);
    let loo_config = SolverConfig {
        max_iters: main.iterations,
        ..config.clone()
    };
    let family =
        pool(spec.jobs)?.install(|| run_loo_family(&gt, &mask, &loo_config, &selectors))?;
    let report = hypothesis_check(&main, &family, &gt, spec.step, spec.p)?;
    let contraction = contraction_check(&main.trace, spec.step, gt.sigma_min())?;
    let dist0 = main.trace.records[0].dist.unwrap_or(f64::NAN);
    let drift = balancing_drift_check(&main.trace, gt.kappa, spec.step, gt.sigma_max(), dist0)?;
    let concentration = concentration_check(&mask, spec.p, spec.trials, spec.master_seed, spec.r)?;

    write_file(&out.join("hypothesis.csv"), |w| report.write_csv(w))?;
    let rows: Vec<ConvergenceRow> = main
        .trace
        .records
        .iter()
        .map(|rec| ConvergenceRow {
            algorithm: Algorithm::Vgd,
            lambda: 0.0,
            k: rec.k,
            rel_err: rec.rel_err,
            dist: rec.dist,
            balancing: rec.balancing,
            seconds: rec.seconds,
        })
        .collect();
    write_file(&out.join("trace.csv"), |w| write_convergence_csv(&rows, w))?;

    if !contraction.satisfied {
        log::warn!(
            "contraction bound violated at k = {:?}",
            contraction.violations
        );
    }
    let unevaluable = report.rows.iter().filter(|r| r.lhs.is_none()).count();
    let vacuous = report.rows.iter().filter(|r| r.vacuous).count();
    let stats = json!({
        "main": {
            "status": main.status,
            "iterations": main.iterations,
            "final_rel_err": main.trace.last().map(|r| r.rel_err),
        },
        "selectors": selectors.iter().map(|s| s.l()).collect::<Vec<_>>(),
        "stride": stride,
        "contraction": contraction,
        "balancing_drift": drift,
        "hypothesis": {
            "rows": report.rows.len(),
            "fraction_satisfied": report.fraction_satisfied(),
            "unevaluable": unevaluable,
            "vacuous": vacuous,
            "gl_unconverged": report.gl_unconverged,
        },
        "concentration": {
            "worst_ratio": concentration.worst_ratio,
            "mean_ratio": concentration.mean_ratio,
        },
    });
    write_summary(out, "theory", spec, stats)
}

fn plot_file(csv: &Path, kind: Option<crate::PlotKind>, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(csv).map_err(|e| io_error(csv, e))?;
    let svg = plot::render(&text, kind)
        .map_err(|e| CliError::Failure(format!("{}: {e}", csv.display())))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare(dir)?;
    }
    write_file(out, |w| Ok(w.write_all(svg.as_bytes())?))
}

/// Runs the task. Every experiment writes its JSON summary last, and only on
/// success.
pub fn dispatch(task: &Task) -> Result<(), CliError> {
    match task {
        Task::Converge { spec, out } => converge(spec, out),
        Task::Phase {
            spec,
            algorithm,
            out,
        } => phase(spec, *algorithm, out),
        Task::Timing { spec, out } => timing(spec, out),
        Task::Theory {
            spec,
            selectors,
            stride,
            out,
        } => theory(spec, *selectors, *stride, out),
        Task::Plot { csv, kind, out } => plot_file(csv, *kind, out),
    }
}
