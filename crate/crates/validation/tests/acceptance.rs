//! Acceptance run: every criterion at its stated tolerance, one PASS/FAIL line
//! each. Exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use lrmc::experiments::{
    convergence_instance, extract_contour, run_convergence, run_phase, run_timing,
    write_convergence_csv, Algorithm, ConvergenceResult, ExperimentSpec, SUCCESS_THRESHOLD,
};
use lrmc::svd::{full_svd, thin_qr};
use lrmc::theory::{balancing_drift_check, contraction_check, run_loo_family};
use lrmc::{
    balancing_norm, dist, gl_align, incoherence, procrustes_align, project, run, sample_mask,
    spectral_init, truncated_svd, DenseMatrix, FactorPair, GroundTruth, IterateTrace, LooSelector,
    ObservationMask, Problem, RunOutput, RunStatus, SolverConfig, SolverVariant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn fig2_spec() -> ExperimentSpec {
    ExperimentSpec {
        lambdas: vec![1e-6, 1e-10],
        jobs: 1,
        ..Default::default()
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Checks applied to every vanilla run of the suite: zero initial balancing
/// term, the drift bound on converged runs, and a non-increasing objective.
#[derive(Default)]
struct VanillaAudit {
    inits: usize,
    init_failures: Vec<String>,
    converged: usize,
    drift_failures: Vec<String>,
    objective_failures: Vec<String>,
}

impl VanillaAudit {
    fn run(
        &mut self,
        label: &str,
        gt: &GroundTruth,
        mask: &ObservationMask,
        config: &SolverConfig,
    ) -> RunOutput {
        let init = spectral_init(gt, mask, gt.dims().r).expect("spectral init");
        self.inits += 1;
        let b0 = balancing_norm(&init);
        if b0 > 1e-10 * gt.sigma_max() {
            self.init_failures.push(format!("{label}: B0 = {b0:e}"));
        }
        let out = run(gt, mask, config, &init).expect("solver run");
        if config.variant == SolverVariant::Vanilla && out.status == RunStatus::Converged {
            self.converged += 1;
            let dist0 = dist(&init, &gt.f_star()).expect("initial distance");
            let drift =
                balancing_drift_check(&out.trace, gt.kappa, config.step, gt.sigma_max(), dist0)
                    .expect("drift check");
            if !drift.satisfied() {
                self.drift_failures.push(format!("{label}: {drift:?}"));
            }
            if let Some(k) = objective_rise(&out.trace) {
                self.objective_failures
                    .push(format!("{label}: objective rose at k = {k}"));
            }
        }
        out
    }
}

fn objective_rise(trace: &IterateTrace) -> Option<usize> {
    trace
        .records
        .windows(2)
        .find(|w| w[1].objective > w[0].objective)
        .map(|w| w[1].k)
}

fn iters_to_threshold(out: &RunOutput) -> Option<usize> {
    out.trace.first_below(SUCCESS_THRESHOLD).map(|r| r.k)
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn csv_without_seconds(result: &ConvergenceResult) -> String {
    let mut buf = Vec::new();
    write_convergence_csv(&result.rows, &mut buf).expect("csv");
    String::from_utf8(buf)
        .expect("utf8")
        .lines()
        .map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_1(result: &ConvergenceResult, seconds: f64) -> Outcome {
    let vgd: Vec<_> = result
        .rows
        .iter()
        .filter(|r| r.algorithm == Algorithm::Vgd)
        .collect();
    let final_err = vgd.last().map_or(f64::NAN, |r| r.rel_err);
    let k_end = vgd.last().map_or(0, |r| r.k);
    let tail: Vec<_> = vgd.iter().filter(|r| 2 * r.k >= k_end).collect();
    let xs: Vec<f64> = tail.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.rel_err.ln()).collect();
    let r2 = r_squared(&xs, &ys);
    let ok = final_err < 1e-12 && r2 > 0.99 && seconds < 60.0;
    (
        ok,
        format!(
            "VGD final rel_err {final_err:.2e} at k = {k_end}, tail R^2 {r2:.5}, {seconds:.1} s"
        ),
    )
}

fn criterion_2(audit: &mut VanillaAudit) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    let mut ok = true;
    for seed in 0..10 {
        let spec = ExperimentSpec {
            master_seed: seed,
            ..fig2_spec()
        };
        let (gt, mask) = convergence_instance(&spec).expect("instance");
        let mut iters = Vec::new();
        for variant in [SolverVariant::Vanilla, SolverVariant::Balancing] {
            let mut config = SolverConfig::new(variant, spec.step);
            config.tol = SUCCESS_THRESHOLD;
            let out = audit.run(&format!("equivalence seed {seed}"), &gt, &mask, &config);
            iters.push(iters_to_threshold(&out));
        }
        match (iters[0], iters[1]) {
            (Some(v), Some(b)) => {
                let gap = (v as f64 - b as f64).abs() / v.min(b) as f64;
                worst = worst.max(gap);
                ok &= gap < 0.1;
                detail.push(format!("{v}/{b}"));
            }
            _ => {
                ok = false;
                detail.push("unreached".into());
            }
        }
    }
    (
        ok,
        format!(
            "VGD/BGD iterations {}, worst gap {:.1}%",
            detail.join(" "),
            100.0 * worst
        ),
    )
}

fn criterion_3(result: &ConvergenceResult) -> Outcome {
    let rows_for = |lambda: f64| -> Vec<f64> {
        result
            .rows
            .iter()
            .filter(|r| r.algorithm == Algorithm::Rgd && r.lambda == lambda)
            .map(|r| r.rel_err)
            .collect()
    };
    let plateau = rows_for(1e-6);
    let terminal = plateau.last().copied().unwrap_or(f64::NAN);
    let tail = &plateau[plateau.len() - plateau.len() / 5..];
    let non_decreasing = tail.windows(2).all(|w| w[1] >= w[0]);
    let small = rows_for(1e-10);
    let reached = small.iter().any(|&e| e < SUCCESS_THRESHOLD);
    let ok = (1e-8..=1e-2).contains(&terminal) && non_decreasing && reached;
    (
        ok,
        format!(
            "lambda 1e-6 terminal {terminal:.3e}, last 20% non-decreasing {non_decreasing}; \
             lambda 1e-10 reaches 1e-8 {reached} (min {:.2e})",
            small.iter().copied().fold(f64::INFINITY, f64::min)
        ),
    )
}

fn criterion_4(audit: &mut VanillaAudit) -> Outcome {
    let mut increasing = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let mut iters = Vec::new();
        for kappa in [1.0, 3.0, 5.0] {
            let spec = ExperimentSpec {
                master_seed: seed,
                kappa,
                ..fig2_spec()
            };
            let (gt, mask) = convergence_instance(&spec).expect("instance");
            let mut config = SolverConfig::new(SolverVariant::Vanilla, spec.step);
            config.tol = SUCCESS_THRESHOLD;
            let out = audit.run(&format!("kappa {kappa} seed {seed}"), &gt, &mask, &config);
            iters.push(iters_to_threshold(&out).map_or(usize::MAX, |k| k));
        }
        if iters[0] < iters[1] && iters[1] < iters[2] {
            increasing += 1;
        }
        detail.push(format!("{}<{}<{}", iters[0], iters[1], iters[2]));
    }
    (
        increasing > 5,
        format!(
            "{increasing}/10 seeds strictly increasing: {}",
            detail.join(" ")
        ),
    )
}

fn criterion_5(audit: &VanillaAudit) -> Outcome {
    let ok =
        audit.init_failures.is_empty() && audit.drift_failures.is_empty() && audit.converged > 0;
    let mut detail = format!(
        "{} spectral inits, {} converged VGD runs",
        audit.inits, audit.converged
    );
    for f in audit.init_failures.iter().chain(&audit.drift_failures) {
        detail.push_str(&format!("; {f}"));
    }
    (ok, detail)
}

fn criterion_6(audit: &mut VanillaAudit) -> Outcome {
    let spec = fig2_spec();
    let (gt, mask) = convergence_instance(&spec).expect("instance");
    let mut config = SolverConfig::new(SolverVariant::Vanilla, spec.step);
    config.track_dist = true;
    let out = audit.run("contraction", &gt, &mask, &config);
    let report = contraction_check(&out.trace, spec.step, gt.sigma_min()).expect("contraction");
    let d = |k: usize| {
        out.trace
            .records
            .get(k)
            .and_then(|r| r.dist)
            .unwrap_or(f64::NAN)
    };
    let mut detail = format!(
        "rate {:.4}, {} steps, worst ratio {:.4}, violations at k = {:?} (dist {:.6} -> {:.6} -> {:.6})",
        report.rate,
        report.steps_checked,
        report.worst_ratio,
        report.violations,
        d(0),
        d(1),
        d(2),
    );
    if !report.satisfied {
        // context only: the same check on neighbouring instances
        let others: Vec<String> = (1..6)
            .map(|seed| {
                let spec = ExperimentSpec {
                    master_seed: seed,
                    ..fig2_spec()
                };
                let (gt, mask) = convergence_instance(&spec).expect("instance");
                let out = audit.run("contraction context", &gt, &mask, &config);
                let rep =
                    contraction_check(&out.trace, spec.step, gt.sigma_min()).expect("contraction");
                format!(
                    "seed {seed}: {}",
                    if rep.satisfied { "holds" } else { "violated" }
                )
            })
            .collect();
        detail.push_str(&format!("; other instances {}", others.join(", ")));
    }
    (report.satisfied, detail)
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (r, p) in [(3, 0.2), (5, 0.2), (10, 0.3)] {
        let spec = ExperimentSpec {
            r,
            p,
            kappa: 3.0,
            lambdas: vec![1e-10],
            jobs: 1,
            ..Default::default()
        };
        let result = run_timing(&spec).expect("timing");
        let mean = |alg: Algorithm| {
            result
                .rows
                .iter()
                .find(|row| row.algorithm == alg)
                .and_then(|row| row.mean_s)
                .unwrap_or(f64::NAN)
        };
        let (v, rg, b) = (
            mean(Algorithm::Vgd),
            mean(Algorithm::Rgd),
            mean(Algorithm::Bgd),
        );
        ok &= v <= b && v <= 1.1 * rg;
        detail.push(format!("r={r} p={p}: VGD {v:.4}s RGD {rg:.4}s BGD {b:.4}s"));
    }
    (ok, detail.join("; "))
}

fn criterion_8() -> Outcome {
    let spec = ExperimentSpec {
        d1: 80,
        d2: 60,
        kappa: 3.0,
        trials: 20,
        max_iters: 3000,
        jobs: 0,
        ..Default::default()
    };
    let grid = run_phase(&spec, Algorithm::Vgd).expect("phase");
    let pi = |p: f64| {
        grid.p_values
            .iter()
            .position(|&x| (x - p).abs() < 1e-12)
            .expect("p")
    };
    let ri = |r: usize| grid.r_values.iter().position(|&x| x == r).expect("r");
    let easy = grid.rate(ri(2), pi(0.9));
    let hard = grid.rate(ri(12), pi(0.1));
    let rows = grid.r_values.len();
    let monotone = (0..rows)
        .filter(|&k| grid.rates(k).windows(2).all(|w| w[1] >= w[0]))
        .count();
    let contour = extract_contour(&grid);
    let spanning: Vec<usize> = (0..rows)
        .filter(|&k| {
            let rates = grid.rates(k);
            rates.contains(&0.0) && rates.contains(&1.0)
        })
        .collect();
    let crossings = spanning
        .iter()
        .filter(|&&k| contour[k].p_cross.is_some())
        .count();
    let ok = easy == 1.0
        && hard == 0.0
        && monotone as f64 >= 0.8 * rows as f64
        && crossings == spanning.len();
    let curve: Vec<String> = contour
        .iter()
        .map(|c| match c.p_cross {
            Some(p) => format!("r{}:{p:.3}", c.r),
            None => format!("r{}:-", c.r),
        })
        .collect();
    (
        ok,
        format!(
            "rate(0.9, 2) = {easy}, rate(0.1, 12) = {hard}, monotone rows {monotone}/{rows}, \
             crossings {crossings}/{}, contour {}",
            spanning.len(),
            curve.join(" ")
        ),
    )
}

fn fd_gradient_error(problem: &Problem, f: &FactorPair) -> f64 {
    let d1 = f.d1();
    let analytic = problem.gradient(f).expect("gradient").stacked();
    let mut stacked = f.stacked();
    let h = 1e-6 * (1.0 + f.frobenius_norm());
    let mut numeric = DenseMatrix::zeros(stacked.rows(), stacked.cols());
    for idx in 0..stacked.as_slice().len() {
        let orig = stacked.as_slice()[idx];
        stacked.as_mut_slice()[idx] = orig + h;
        let up = problem
            .value(&FactorPair::from_stacked(&stacked, d1))
            .expect("value");
        stacked.as_mut_slice()[idx] = orig - h;
        let down = problem
            .value(&FactorPair::from_stacked(&stacked, d1))
            .expect("value");
        stacked.as_mut_slice()[idx] = orig;
        numeric.as_mut_slice()[idx] = (up - down) / (2.0 * h);
    }
    analytic.sub(&numeric).frobenius_norm() / analytic.frobenius_norm()
}

fn planted(d1: usize, d2: usize, sigma: Vec<f64>, rng: &mut ChaCha8Rng) -> GroundTruth {
    let r = sigma.len();
    let u = thin_qr(&random(d1, r, rng)).0;
    let v = thin_qr(&random(d2, r, rng)).0;
    GroundTruth::from_factors(u, sigma, v).expect("ground truth")
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();

    // gradients against central differences
    let (d1, d2) = (12, 9);
    let gt = planted(d1, d2, vec![1.0, 0.5], &mut rng);
    let mask = sample_mask(d1, d2, 0.5, 1).expect("mask");
    let variants = [
        SolverVariant::Vanilla,
        SolverVariant::Regularized { lambda: 0.3 },
        SolverVariant::Balancing,
        SolverVariant::LeaveOneOut(LooSelector::new(d1 + 2, d1, d2).expect("selector")),
    ];
    let mut worst_fd: f64 = 0.0;
    for variant in variants {
        let problem = Problem::new(&gt, &mask, variant).expect("problem");
        for _ in 0..20 {
            let f =
                FactorPair::new(random(d1, 2, &mut rng), random(d2, 2, &mut rng)).expect("pair");
            worst_fd = worst_fd.max(fd_gradient_error(&problem, &f));
        }
    }
    if !(worst_fd < 1e-6) {
        failures.push(format!("gradient fd error {worst_fd:e}"));
    }

    // truncated SVD against the full SVD, dense and randomized paths
    let mut worst_svd: f64 = 0.0;
    for (rows, cols, r) in [(40, 30, 4), (600, 50, 3)] {
        let gt = planted(
            rows,
            cols,
            (0..r).map(|k| 1.0 - 0.2 * k as f64).collect(),
            &mut rng,
        );
        let m = gt.m_star.add(&random(rows, cols, &mut rng).scale(0.01));
        let t = truncated_svd(&m, r).expect("truncated");
        let full = full_svd(&m).expect("full");
        for k in 0..r {
            worst_svd = worst_svd.max((t.sigma0[k] - full.sigma[k]).abs());
        }
    }
    if !(worst_svd < 1e-8) {
        failures.push(format!("truncated svd error {worst_svd:e}"));
    }

    // Procrustes against a grid over O(2)
    let mut worst_procrustes: f64 = 0.0;
    for _ in 0..5 {
        let target = FactorPair::new(random(8, 2, &mut rng), random(6, 2, &mut rng)).expect("pair");
        let f = FactorPair::new(random(8, 2, &mut rng), random(6, 2, &mut rng)).expect("pair");
        let ours = procrustes_align(&f, &target).expect("procrustes").residual;
        let mut best = f64::INFINITY;
        let n = 50_000;
        for step in 0..n {
            let t = std::f64::consts::TAU * step as f64 / n as f64;
            let (c, s) = (t.cos(), t.sin());
            for o in [
                DenseMatrix::from_rows(&[&[c, -s], &[s, c]]),
                DenseMatrix::from_rows(&[&[c, s], &[s, -c]]),
            ] {
                let diff = f.right_mul(&o).stacked().sub(&target.stacked());
                best = best.min(diff.frobenius_norm());
            }
        }
        worst_procrustes = worst_procrustes.max((ours - best).abs());
    }
    if !(worst_procrustes < 1e-6) {
        failures.push(format!("procrustes grid gap {worst_procrustes:e}"));
    }

    // GL(r) alignment absorbs diagonal rescalings
    let mut gl_checked = 0;
    for _ in 0..5 {
        let target =
            FactorPair::new(random(10, 3, &mut rng), random(7, 3, &mut rng)).expect("pair");
        let scale: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..3.0)).collect();
        let inv: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
        let f = FactorPair::new(target.x.scale_columns(&scale), target.y.scale_columns(&inv))
            .expect("pair");
        let procrustes = procrustes_align(&f, &target).expect("procrustes").residual;
        if procrustes <= 0.1 {
            continue;
        }
        gl_checked += 1;
        let gl = gl_align(&f, &target).expect("gl").residual;
        if !(gl < 1e-8) {
            failures.push(format!(
                "gl residual {gl:e} with procrustes {procrustes:.3}"
            ));
        }
    }
    if gl_checked == 0 {
        failures.push("no rescaled pair separated gl from procrustes".into());
    }

    // projection is an orthogonal projector
    for pair in 0..100 {
        let (rows, cols) = (rng.random_range(1..15), rng.random_range(1..15));
        let (a, b) = (random(rows, cols, &mut rng), random(rows, cols, &mut rng));
        let mask = sample_mask(rows, cols, rng.random_range(0.05..1.0), pair).expect("mask");
        let pa = project(&a, &mask).expect("project");
        let pb = project(&b, &mask).expect("project");
        let adjoint = (pa.inner(&b) - a.inner(&pb)).abs();
        if project(&pa, &mask).expect("project") != pa || adjoint > 1e-12 {
            failures.push(format!("projection pair {pair}"));
        }
    }

    // incoherence of random frames
    let mut min_mu = f64::INFINITY;
    for _ in 0..1000 {
        let r = rng.random_range(1..=4);
        let (d1, d2) = (rng.random_range(r..=20), rng.random_range(r..=20));
        let u = thin_qr(&random(d1, r, &mut rng)).0;
        let v = thin_qr(&random(d2, r, &mut rng)).0;
        min_mu = min_mu.min(incoherence(&u, &v).expect("incoherence"));
    }
    if !(min_mu >= 1.0 - 1e-12) {
        failures.push(format!("min mu {min_mu}"));
    }

    // leave-one-out sequences collapse at full observation
    let (d1, d2) = (14, 10);
    let gt = planted(d1, d2, vec![1.0, 0.6], &mut rng);
    let full = sample_mask(d1, d2, 1.0, 0).expect("mask");
    let mut config = SolverConfig::new(SolverVariant::Balancing, 0.5);
    config.max_iters = 30;
    config.tol = f64::MIN_POSITIVE;
    config.keep_iterates = true;
    let init = spectral_init(&gt, &full, 2).expect("init");
    let main = run(&gt, &full, &config, &init).expect("run");
    let selectors: Vec<LooSelector> = (1..=d1 + d2)
        .map(|l| LooSelector::new(l, d1, d2).expect("selector"))
        .collect();
    let family = run_loo_family(&gt, &full, &config, &selectors).expect("family");
    let main_iterates = main.iterates.expect("iterates");
    let identical = family.runs.iter().all(|loo| loo.iterates == main_iterates);
    if !identical {
        failures.push("leave-one-out sequences differ from the main run at p = 1".into());
    }

    let ok = failures.is_empty();
    let detail = format!(
        "fd {worst_fd:.1e}, svd {worst_svd:.1e}, procrustes {worst_procrustes:.1e}, \
         gl pairs {gl_checked}, min mu {min_mu:.3}, loo bitwise {identical}{}",
        if ok {
            String::new()
        } else {
            format!("; failures: {}", failures.join(", "))
        }
    );
    (ok, detail)
}

fn criterion_10(first: &ConvergenceResult) -> Outcome {
    let second = run_convergence(&fig2_spec()).expect("convergence");
    let (a, b) = (csv_without_seconds(first), csv_without_seconds(&second));
    (a == b, format!("{} CSV lines compared", a.lines().count()))
}

fn main() -> ExitCode {
    let mut audit = VanillaAudit::default();
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut report = |n: &'static str, name: &'static str, outcome: Outcome| {
        println!(
            "{} {n:>3} {name}: {}",
            if outcome.0 { "PASS" } else { "FAIL" },
            outcome.1
        );
        results.push((n, name, outcome));
    };

    let start = Instant::now();
    let fig2 = run_convergence(&fig2_spec()).expect("convergence");
    let fig2_seconds = start.elapsed().as_secs_f64();
    {
        // the shared run also goes through the per-run audit
        let (gt, mask) = convergence_instance(&fig2_spec()).expect("instance");
        audit.run(
            "fig2",
            &gt,
            &mask,
            &SolverConfig::new(SolverVariant::Vanilla, 0.5),
        );
    }

    report("1", "fig2 convergence", criterion_1(&fig2, fig2_seconds));
    report("2", "vgd/bgd equivalence", criterion_2(&mut audit));
    report("3", "rgd plateau", criterion_3(&fig2));
    report("4", "condition-number slowdown", criterion_4(&mut audit));
    let contraction = criterion_6(&mut audit);
    report(
        "5",
        "balancing implicit regularization",
        criterion_5(&audit),
    );
    report("6", "contraction", contraction);
    report("7", "timing order", criterion_7());
    report("8", "phase transition", criterion_8());
    report("9", "oracle and property suite", criterion_9());
    report("10", "determinism", criterion_10(&fig2));
    let monotone_ok = audit.objective_failures.is_empty();
    report(
        "obj",
        "vanilla objective monotone on every run",
        (
            monotone_ok,
            if monotone_ok {
                format!("{} converged VGD runs", audit.converged)
            } else {
                audit.objective_failures.join("; ")
            },
        ),
    );

    let failed: Vec<&str> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
