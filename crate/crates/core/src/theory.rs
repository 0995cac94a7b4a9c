//! Numeric checks of the convergence theory: linear contraction, the
//! induction hypothesis clauses, leave-one-out co-runs, balancing drift and
//! sampling concentration.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{param, Result};
use crate::init::loo_init;
use crate::matrix::{dot, DenseMatrix, FactorPair, GroundTruth};
use crate::metrics::{dist, gl_align, procrustes_align, AlignmentResult};
use crate::rng::mix64;
use crate::sampling::{LooSelector, ObservationMask};
use crate::solvers::{run, IterateTrace, RunOutput, RunStatus, SolverConfig, SolverVariant};

/// Per-step contraction factor `1 - s sigma_min / 100`.
pub fn contraction_rate(s: f64, sigma_min: f64) -> f64 {
    1.0 - s * sigma_min / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub rate: f64,
    /// Largest per-step ratio `dist_{k+1} / dist_k` (geometric mean over a
    /// stride when the trace skips steps).
    pub worst_ratio: f64,
    /// Iterations `k + 1` at which the bound failed.
    pub violations: Vec<usize>,
    pub steps_checked: usize,
    pub satisfied: bool,
}

/// Checks `dist(F_{k+1}, F*) <= rate * dist(F_k, F*)` between consecutive
/// trace records (`rate^gap` across a stride). A nonpositive step gives a
/// rate of at least 1, which is reported as a violation at every step with
/// nonzero distance.
pub fn contraction_check(
    trace: &IterateTrace,
    s: f64,
    sigma_min: f64,
) -> Result<ContractionReport> {
    let rate = contraction_rate(s, sigma_min);
    // a rate of 1 or more claims no contraction, so any nonzero step fails
    let degenerate = !(rate < 1.0);
    let dists = trace
        .records
        .iter()
        .map(|r| r.dist.map(|d| (r.k, d)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| crate::Error::Parameter("trace has no distance column".into()))?;
    let mut worst_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    for w in dists.windows(2) {
        let ((k0, d0), (k1, d1)) = (w[0], w[1]);
        let gap = (k1 - k0) as i32;
        let ratio = if d0 > 0.0 {
            (d1 / d0).powf(1.0 / gap as f64)
        } else if d1 == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_ratio = worst_ratio.max(ratio);
        if !(d1 <= rate.powi(gap) * d0) || (degenerate && d0 > 0.0) {
            violations.push(k1);
        }
    }
    Ok(ContractionReport {
        rate,
        worst_ratio,
        satisfied: violations.is_empty(),
        steps_checked: dists.len().saturating_sub(1),
        violations,
    })
}

/// A leave-one-out sequence recorded at the main run's stride.
#[derive(Debug, Clone)]
pub struct LooRun {
    pub selector: LooSelector,
    pub ks: Vec<usize>,
    pub iterates: Vec<FactorPair>,
    /// `O_k^{(l)}`: Procrustes alignment of each iterate to `F*`.
    pub rotations: Vec<AlignmentResult>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Default)]
pub struct LooFamily {
    pub runs: Vec<LooRun>,
}

impl LooFamily {
    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Runs the leave-one-out problem of every selector from its own spectral
/// initialization for exactly `config.max_iters` steps, recording at
/// `config.record_every`. The relative-error stop rule is disabled so the
/// sequences stay step-aligned with a main run of that length.
pub fn run_loo_family(
    gt: &GroundTruth,
    mask: &ObservationMask,
    config: &SolverConfig,
    selectors: &[LooSelector],
) -> Result<LooFamily> {
    let r = gt.dims().r;
    let f_star = gt.f_star();
    let runs = selectors
        .par_iter()
        .map(|&sel| {
            let init = loo_init(gt, mask, r, sel)?;
            let cfg = SolverConfig {
                variant: SolverVariant::LeaveOneOut(sel),
                tol: f64::MIN_POSITIVE,
                track_dist: false,
                keep_iterates: true,
                ..config.clone()
            };
            let out = run(gt, mask, &cfg, &init)?;
            let iterates = out.iterates.unwrap_or_default();
            let rotations = iterates
                .iter()
                .map(|f| procrustes_align(f, &f_star))
                .collect::<Result<Vec<_>>>()?;
            Ok(LooRun {
                selector: sel,
                ks: out.trace.records.iter().map(|r| r.k).collect(),
                iterates,
                rotations,
                status: out.status,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LooFamily { runs })
}

/// One `(k, clause)` evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisRow {
    pub k: usize,
    /// `a`, `d`, `e`, or `b:l=<l>` / `c:l=<l>` for leave-one-out clauses.
    pub clause: String,
    /// `None` when the quantity could not be evaluated.
    pub lhs: Option<f64>,
    pub rhs: f64,
    pub slack: Option<f64>,
    pub satisfied: Option<bool>,
    /// The bound exceeds `||F*||`, so satisfying it says little.
    pub vacuous: bool,
}

impl HypothesisRow {
    fn new(k: usize, clause: String, lhs: Option<f64>, rhs: f64, vacuous: bool) -> Self {
        Self {
            k,
            clause,
            lhs,
            rhs,
            slack: lhs.map(|l| rhs - l),
            satisfied: lhs.map(|l| l <= rhs),
            vacuous,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub rows: Vec<HypothesisRow>,
    /// Steps where the GL(r) alignment hit its iteration cap.
    pub gl_unconverged: usize,
}

impl HypothesisReport {
    /// Fraction of evaluable `(k, clause)` pairs that hold.
    pub fn fraction_satisfied(&self) -> f64 {
        let evaluated: Vec<bool> = self.rows.iter().filter_map(|r| r.satisfied).collect();
        if evaluated.is_empty() {
            return 1.0;
        }
        evaluated.iter().filter(|&&ok| ok).count() as f64 / evaluated.len() as f64
    }

    pub fn clause_rows<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a HypothesisRow> {
        self.rows
            .iter()
            .filter(move |r| r.clause == prefix || r.clause.starts_with(&format!("{prefix}:")))
    }

    /// CSV with columns `k,clause,lhs,rhs,slack,satisfied`; unevaluable rows
    /// leave `lhs`, `slack` and `satisfied` empty.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["k", "clause", "lhs", "rhs", "slack", "satisfied"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            csv.write_record([
                row.k.to_string(),
                row.clause.clone(),
                opt(row.lhs),
                row.rhs.to_string(),
                opt(row.slack),
                row.satisfied.map(|b| b.to_string()).unwrap_or_default(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Right-hand sides of clauses (a)-(c). The log uses the larger dimension
/// and the `d2` of the bounds is the smaller one.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    a: f64,
    b: f64,
    c: f64,
}

impl Bounds {
    fn new(gt: &GroundTruth, s: f64, p: f64) -> Self {
        let dims = gt.dims();
        let (mu, r, kappa) = (gt.mu, dims.r as f64, gt.kappa);
        let (smax, smin) = (gt.sigma_max(), gt.sigma_min());
        let log_d = (dims.d1.max(dims.d2) as f64).ln();
        let d_small = dims.d1.min(dims.d2) as f64;
        Self {
            a: (s * smin + (mu * r * kappa.powi(6) * log_d / (p * d_small)).sqrt()) * smax.sqrt(),
            b: (1e3 * s * kappa.powi(2) * smin
                + 1e2 * (mu.powi(2) * r.powi(2) * kappa.powi(14) * log_d / (p * d_small)).sqrt())
                * (mu * r * smax / d_small).sqrt(),
            c: (s * smin / kappa
                + (mu.powi(2) * r.powi(2) * kappa.powi(10) * log_d / (p * d_small.powi(2))).sqrt())
                * smax.sqrt(),
        }
    }
}

/// Evaluates clauses (a)-(e) at every recorded step of `main`, which must
/// have been run with `keep_iterates`. Clauses (b) and (c) are evaluated for
/// each leave-one-out sequence in `loo` at the selector's own index.
pub fn hypothesis_check(
    main: &RunOutput,
    loo: &LooFamily,
    gt: &GroundTruth,
    s: f64,
    p: f64,
) -> Result<HypothesisReport> {
    let iterates = main
        .iterates
        .as_ref()
        .ok_or_else(|| crate::Error::Parameter("main run kept no iterates".into()))?;
    let records = &main.trace.records;
    if iterates.len() != records.len() {
        return param("main run iterates and trace differ in length");
    }
    let f_star = gt.f_star();
    let f_star_stacked = f_star.stacked();
    let f_star_norm = f_star_stacked.spectral_norm();
    let bounds = Bounds::new(gt, s, p);
    let rate = contraction_rate(s, gt.sigma_min());
    let e_bound = 1.0 / (400.0 * gt.kappa);

    let mut report = HypothesisReport::default();
    let mut dist0 = None;
    for (idx, (rec, f)) in records.iter().zip(iterates).enumerate() {
        let k = rec.k;
        let o = procrustes_align(f, &f_star)?;
        let fo = f.right_mul(&o.matrix);
        let lhs_a = fo.stacked().sub(&f_star_stacked).spectral_norm();
        report.rows.push(HypothesisRow::new(
            k,
            "a".into(),
            Some(lhs_a),
            bounds.a,
            bounds.a > f_star_norm,
        ));

        for run in &loo.runs {
            let l = run.selector.l();
            let at = run.ks.get(idx).filter(|&&kk| kk == k).map(|_| idx);
            let (lhs_b, lhs_c) = match at {
                Some(i) => {
                    let fl = &run.iterates[i];
                    let aligned = fl.right_mul(&run.rotations[i].matrix).stacked();
                    let row = run.selector.stacked_row();
                    let diff: Vec<f64> = aligned
                        .row(row)
                        .iter()
                        .zip(f_star_stacked.row(row))
                        .map(|(a, b)| a - b)
                        .collect();
                    let r_l = procrustes_align(fl, &fo)?;
                    let lhs_c = fo
                        .stacked()
                        .sub(&fl.right_mul(&r_l.matrix).stacked())
                        .frobenius_norm();
                    (Some(dot(&diff, &diff).sqrt()), Some(lhs_c))
                }
                None => (None, None),
            };
            report.rows.push(HypothesisRow::new(
                k,
                format!("b:l={l}"),
                lhs_b,
                bounds.b,
                bounds.b > f_star_norm,
            ));
            report.rows.push(HypothesisRow::new(
                k,
                format!("c:l={l}"),
                lhs_c,
                bounds.c,
                bounds.c > f_star_norm,
            ));
        }

        let dist_k = match rec.dist {
            Some(d) => Some(d),
            None => dist(f, &f_star).ok(),
        };
        if idx == 0 {
            dist0 = dist_k;
        }
        let rhs_d = dist0.map_or(f64::NAN, |d0| rate.powi(k as i32) * d0);
        report.rows.push(HypothesisRow::new(
            k,
            "d".into(),
            dist_k.filter(|_| dist0.is_some()),
            rhs_d,
            false,
        ));

        let lhs_e = match gl_align(f, &f_star) {
            Ok(q) => {
                if !q.converged {
                    report.gl_unconverged += 1;
                }
                Some(q.matrix.sub(&o.matrix).spectral_norm())
            }
            Err(_) => None,
        };
        report
            .rows
            .push(HypothesisRow::new(k, "e".into(), lhs_e, e_bound, false));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalancingDriftReport {
    pub b0: f64,
    pub b0_limit: f64,
    pub max_b: f64,
    pub bound: f64,
    pub initial_ok: bool,
    pub bound_ok: bool,
}

impl BalancingDriftReport {
    pub fn satisfied(&self) -> bool {
        self.initial_ok && self.bound_ok
    }
}

/// Checks `B_0 <= 1e-10 sigma_max` and
/// `max_k ||X_k^T X_k - Y_k^T Y_k||_F <= 7400 kappa s sigma_max dist0^2`.
pub fn balancing_drift_check(
    trace: &IterateTrace,
    kappa: f64,
    s: f64,
    sigma_max: f64,
    dist0: f64,
) -> Result<BalancingDriftReport> {
    let first = trace
        .records
        .first()
        .ok_or_else(|| crate::Error::Parameter("empty trace".into()))?;
    let b0 = first.balancing;
    let max_b = trace
        .records
        .iter()
        .map(|r| r.balancing)
        .fold(0.0, f64::max);
    let bound = 7400.0 * kappa * s * sigma_max * dist0 * dist0;
    let b0_limit = 1e-10 * sigma_max;
    Ok(BalancingDriftReport {
        b0,
        b0_limit,
        max_b,
        bound,
        initial_ok: b0 <= b0_limit,
        bound_ok: max_b <= bound,
    })
}

/// `|<(p^{-1} P_Omega - I)(X_A Y_A^T), X_B Y_B^T>|` divided by
/// `sqrt(max(d1, d2) / p) min(|X_A|_F |X_B|_2inf, |X_A|_2inf |X_B|_F)
/// min(|Y_A|_F |Y_B|_2inf, |Y_A|_2inf |Y_B|_F)`.
pub fn concentration_ratio(
    mask: &ObservationMask,
    p: f64,
    xa: &DenseMatrix,
    ya: &DenseMatrix,
    xb: &DenseMatrix,
    yb: &DenseMatrix,
) -> Result<f64> {
    let (d1, d2) = mask.dims();
    if xa.rows() != d1 || xb.rows() != d1 || ya.rows() != d2 || yb.rows() != d2 {
        return crate::error::dim("factor rows do not match the mask");
    }
    let mut sampled = 0.0;
    for (i, j) in mask.cells() {
        sampled += dot(xa.row(i), ya.row(j)) * dot(xb.row(i), yb.row(j));
    }
    // <X_A Y_A^T, X_B Y_B^T> = <X_A^T X_B, Y_A^T Y_B>
    let full = xa.t_matmul(xb).inner(&ya.t_matmul(yb));
    let deviation = (sampled / p - full).abs();
    let fx = (xa.frobenius_norm() * xb.two_inf_norm()).min(xa.two_inf_norm() * xb.frobenius_norm());
    let fy = (ya.frobenius_norm() * yb.two_inf_norm()).min(ya.two_inf_norm() * yb.frobenius_norm());
    let scale = (d1.max(d2) as f64 / p).sqrt() * fx * fy;
    Ok(if scale > 0.0 { deviation / scale } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub worst_ratio: f64,
    pub mean_ratio: f64,
    pub ratios: Vec<f64>,
}

/// Draws `trials` Gaussian factor quadruples of rank `rank` and reports the
/// concentration ratio. A diagnostic: the constant of the bound is unknown.
pub fn concentration_check(
    mask: &ObservationMask,
    p: f64,
    trials: usize,
    seed: u64,
    rank: usize,
) -> Result<ConcentrationReport> {
    if trials == 0 || rank == 0 {
        return param("concentration check needs at least one trial and rank >= 1");
    }
    let (d1, d2) = mask.dims();
    let ratios = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(t as u64)));
            let mut draw = |rows: usize| {
                DenseMatrix::from_fn(rows, rank, |_, _| StandardNormal.sample(&mut rng))
            };
            let (xa, ya, xb, yb) = (draw(d1), draw(d2), draw(d1), draw(d2));
            concentration_ratio(mask, p, &xa, &ya, &xb, &yb)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConcentrationReport {
        worst_ratio: ratios.iter().copied().fold(0.0, f64::max),
        mean_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
        ratios,
    })
}
