//! Synthetic instances and the convergence, phase-transition and timing
//! experiments, with CSV and JSON output.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{param, Error, Result};
use crate::init::spectral_init;
use crate::matrix::{DenseMatrix, Dims, GroundTruth};
use crate::metrics::relative_error;
use crate::rng::{derive_seed, mix64};
use crate::sampling::{sample_mask, ObservationMask};
use crate::solvers::{run, RunStatus, SolverConfig, SolverVariant};
use crate::svd::thin_qr;

/// Relative error counted as successful recovery in phase and timing runs.
pub const SUCCESS_THRESHOLD: f64 = 1e-8;

const QR_RETRIES: u64 = 3;
const INSTANCE_STREAM: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "VGD")]
    Vgd,
    #[serde(rename = "RGD")]
    Rgd,
    #[serde(rename = "BGD")]
    Bgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Vgd, Algorithm::Rgd, Algorithm::Bgd];

    pub fn variant(self, lambda: f64) -> SolverVariant {
        match self {
            Self::Vgd => SolverVariant::Vanilla,
            Self::Rgd => SolverVariant::Regularized { lambda },
            Self::Bgd => SolverVariant::Balancing,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Vgd => "VGD",
            Self::Rgd => "RGD",
            Self::Bgd => "BGD",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VGD" => Ok(Self::Vgd),
            "RGD" => Ok(Self::Rgd),
            "BGD" => Ok(Self::Bgd),
            _ => param(format!(
                "unknown algorithm `{s}` (expected VGD, RGD or BGD)"
            )),
        }
    }
}

/// Parameters shared by all experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub kappa: f64,
    pub p: f64,
    /// Sampling rates of the phase grid.
    pub p_grid: Vec<f64>,
    /// Ranks of the phase grid.
    pub r_grid: Vec<usize>,
    pub step: f64,
    /// Regularization weights for RGD.
    pub lambdas: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub tol: f64,
    pub max_iters: usize,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            d1: 160,
            d2: 100,
            r: 5,
            kappa: 1.0,
            p: 0.2,
            p_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            r_grid: (1..=6).map(|k| 2 * k).collect(),
            step: 0.5,
            lambdas: vec![1e-10],
            trials: 50,
            master_seed: 0,
            algorithms: Algorithm::ALL.to_vec(),
            tol: 1e-14,
            max_iters: 5000,
            jobs: 0,
        }
    }
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        Dims::new(self.d1, self.d2, self.r)?;
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return param(format!("kappa = {} must be at least 1", self.kappa));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return param(format!("p = {} outside (0, 1]", self.p));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return param(format!("step size {} must be positive", self.step));
        }
        if !(self.tol > 0.0) {
            return param(format!("tolerance {} must be positive", self.tol));
        }
        if self.trials == 0 {
            return param("at least one trial is required");
        }
        if self.algorithms.is_empty() {
            return param("no algorithms selected");
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return param("lambda list must be nonempty and positive");
        }
        if self.p_grid.is_empty() || !strictly_increasing(&self.p_grid) {
            return param("p grid must be nonempty and strictly increasing");
        }
        if self.p_grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return param("p grid values must lie in (0, 1]");
        }
        if self.r_grid.is_empty() || !strictly_increasing(&self.r_grid) {
            return param("r grid must be nonempty and strictly increasing");
        }
        if self.r_grid[0] == 0 || *self.r_grid.last().unwrap() > self.d1.min(self.d2) {
            return param("r grid values must lie in 1..=min(d1, d2)");
        }
        Ok(())
    }

    fn dims(&self) -> Dims {
        Dims {
            d1: self.d1,
            d2: self.d2,
            r: self.r,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))
    }

    /// `(algorithm, lambda)` pairs to run; RGD expands over the lambda list.
    fn runs(&self) -> Vec<(Algorithm, f64)> {
        let mut out = Vec::new();
        for &alg in &self.algorithms {
            if alg == Algorithm::Rgd {
                out.extend(self.lambdas.iter().map(|&l| (alg, l)));
            } else {
                out.push((alg, 0.0));
            }
        }
        out
    }
}

fn random_sign_frame(rows: usize, r: usize, rng: &mut ChaCha8Rng) -> Option<DenseMatrix> {
    let signs = DenseMatrix::from_fn(
        rows,
        r,
        |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 },
    );
    let (q, rr) = thin_qr(&signs);
    (0..r).all(|k| rr[(k, k)].abs() >= 1e-10).then_some(q)
}

/// `M* = U* diag(sigma) V*^T` with `U*`, `V*` from QR of random sign
/// matrices and `sigma` linearly spaced from 1 down to `1/kappa`.
pub fn gen_ground_truth(dims: Dims, kappa: f64, seed: u64) -> Result<GroundTruth> {
    let dims = Dims::new(dims.d1, dims.d2, dims.r)?;
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return param(format!("kappa = {kappa} must be at least 1"));
    }
    let r = dims.r;
    let sigma: Vec<f64> = if r == 1 {
        vec![1.0]
    } else {
        (0..r)
            .map(|k| 1.0 + (1.0 / kappa - 1.0) * k as f64 / (r - 1) as f64)
            .collect()
    };
    for attempt in 0..=QR_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed.wrapping_add(attempt)));
        let u = random_sign_frame(dims.d1, r, &mut rng);
        let v = random_sign_frame(dims.d2, r, &mut rng);
        if let (Some(u), Some(v)) = (u, v) {
            return GroundTruth::from_factors(u, sigma, v);
        }
        log::warn!("rank-deficient sign matrix for seed {seed}, attempt {attempt}; regenerating");
    }
    Err(Error::Decomposition(format!(
        "sign matrices stayed rank deficient after {QR_RETRIES} retries"
    )))
}

/// Ground truth and mask of one trial, both keyed by the trial seed.
pub fn gen_instance(
    dims: Dims,
    kappa: f64,
    p: f64,
    seed: u64,
) -> Result<(GroundTruth, ObservationMask)> {
    let gt = gen_ground_truth(dims, kappa, mix64(seed ^ 1))?;
    let mask = sample_mask(dims.d1, dims.d2, p, mix64(seed ^ 2))?;
    if mask.len() < dims.r * (dims.d1 + dims.d2) {
        log::warn!(
            "only {} observations for {} degrees of freedom; the problem is underdetermined",
            mask.len(),
            dims.r * (dims.d1 + dims.d2)
        );
    }
    Ok((gt, mask))
}

/// One row of the convergence CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub k: usize,
    pub rel_err: f64,
    pub dist: Option<f64>,
    pub balancing: f64,
    pub seconds: f64,
}

/// Outcome of one run of the convergence experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_rel_err: f64,
    /// First recorded iteration with relative error below 1e-8.
    pub iters_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
    pub runs: Vec<RunSummary>,
}

/// The single instance the convergence experiment runs on.
pub fn convergence_instance(spec: &ExperimentSpec) -> Result<(GroundTruth, ObservationMask)> {
    let seed = derive_seed(spec.master_seed, 0, INSTANCE_STREAM, 0)?;
    gen_instance(spec.dims(), spec.kappa, spec.p, seed)
}

/// Runs every selected algorithm on one shared instance (trial 0) from the
/// same spectral initialization.
pub fn run_convergence(spec: &ExperimentSpec) -> Result<ConvergenceResult> {
    spec.validate()?;
    let (gt, mask) = convergence_instance(spec)?;
    let init = spectral_init(&gt, &mask, spec.r)?;
    let runs = spec.runs();
    let outputs: Vec<Result<_>> = spec.pool()?.install(|| {
        runs.par_iter()
            .map(|&(alg, lambda)| {
                let mut config = SolverConfig::new(alg.variant(lambda), spec.step);
                config.tol = spec.tol;
                config.max_iters = spec.max_iters;
                config.track_dist = true;
                run(&gt, &mask, &config, &init).map(|out| (alg, lambda, out))
            })
            .collect()
    });

    let mut result = ConvergenceResult {
        rows: Vec::new(),
        runs: Vec::new(),
    };
    for out in outputs {
        let (algorithm, lambda, out) = out?;
        result.runs.push(RunSummary {
            algorithm,
            lambda,
            status: out.status,
            iterations: out.iterations,
            final_rel_err: out.trace.last().map_or(f64::NAN, |r| r.rel_err),
            iters_to_threshold: out.trace.first_below(SUCCESS_THRESHOLD).map(|r| r.k),
        });
        result
            .rows
            .extend(out.trace.records.iter().map(|rec| ConvergenceRow {
                algorithm,
                lambda,
                k: rec.k,
                rel_err: rec.rel_err,
                dist: rec.dist,
                balancing: rec.balancing,
                seconds: rec.seconds,
            }));
    }
    Ok(result)
}

/// Outcome of one Monte Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub trial: usize,
    /// Instance seed shared by every algorithm of the trial.
    pub seed: u64,
    pub status: RunStatus,
    pub iterations: usize,
    pub rel_err: f64,
    /// Wall time to reach the success threshold, if reached.
    pub seconds: Option<f64>,
}

/// Interpolated 50% success crossing of one rank row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContourPoint {
    pub r: usize,
    pub p_cross: Option<f64>,
    /// The row already succeeds at the smallest `p`.
    pub clipped: bool,
}

/// Success counts over a `(p, r)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseGrid {
    pub p_values: Vec<f64>,
    pub r_values: Vec<usize>,
    pub trials: usize,
    /// `successes[ri][pi]` for rank `r_values[ri]` and rate `p_values[pi]`.
    pub successes: Vec<Vec<usize>>,
    pub contour: Vec<ContourPoint>,
}

impl PhaseGrid {
    pub fn rate(&self, ri: usize, pi: usize) -> f64 {
        self.successes[ri][pi] as f64 / self.trials as f64
    }

    pub fn rates(&self, ri: usize) -> Vec<f64> {
        (0..self.p_values.len())
            .map(|pi| self.rate(ri, pi))
            .collect()
    }
}

/// First crossing of 0.5 along each rank row, scanning `p` upward, with
/// linear interpolation between the bracketing grid points.
pub fn extract_contour(grid: &PhaseGrid) -> Vec<ContourPoint> {
    grid.r_values
        .iter()
        .enumerate()
        .map(|(ri, &r)| {
            let rates = grid.rates(ri);
            let p = &grid.p_values;
            if rates[0] >= 0.5 {
                return ContourPoint {
                    r,
                    p_cross: Some(p[0]),
                    clipped: true,
                };
            }
            let p_cross = (0..rates.len() - 1)
                .find(|&k| rates[k + 1] >= 0.5)
                .map(|k| {
                    let (a, b) = (rates[k], rates[k + 1]);
                    p[k] + (0.5 - a) / (b - a) * (p[k + 1] - p[k])
                });
            ContourPoint {
                r,
                p_cross,
                clipped: false,
            }
        })
        .collect()
}

/// Runs `algorithm` on `trials` fresh instances per `(p, r)` cell. A trial
/// succeeds when the relative error drops below 1e-8 within `max_iters`.
pub fn run_phase(spec: &ExperimentSpec, algorithm: Algorithm) -> Result<PhaseGrid> {
    spec.validate()?;
    let (np, nr) = (spec.p_grid.len(), spec.r_grid.len());
    let jobs: Vec<(usize, usize, usize)> = (0..nr)
        .flat_map(|ri| (0..np).flat_map(move |pi| (0..spec.trials).map(move |t| (ri, pi, t))))
        .collect();
    let outcomes: Vec<Result<bool>> = spec.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(ri, pi, trial)| {
                let (p, r) = (spec.p_grid[pi], spec.r_grid[ri]);
                let seed = derive_seed(spec.master_seed, ri * np + pi, INSTANCE_STREAM, trial)?;
                let dims = Dims::new(spec.d1, spec.d2, r)?;
                let (gt, mask) = gen_instance(dims, spec.kappa, p, seed)?;
                let init = spectral_init(&gt, &mask, r)?;
                let mut config = SolverConfig::new(algorithm.variant(spec.lambdas[0]), spec.step);
                config.tol = SUCCESS_THRESHOLD;
                config.max_iters = spec.max_iters;
                config.record_every = spec.max_iters.max(1);
                let out = run(&gt, &mask, &config, &init)?;
                Ok(out.status == RunStatus::Converged)
            })
            .collect()
    });
    let mut successes = vec![vec![0usize; np]; nr];
    for (&(ri, pi, _), ok) in jobs.iter().zip(outcomes) {
        if ok? {
            successes[ri][pi] += 1;
        }
    }
    let mut grid = PhaseGrid {
        p_values: spec.p_grid.clone(),
        r_values: spec.r_grid.clone(),
        trials: spec.trials,
        successes,
        contour: Vec::new(),
    };
    grid.contour = extract_contour(&grid);
    Ok(grid)
}

/// Aggregated timing of one algorithm on one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub p: f64,
    pub kappa: f64,
    pub algorithm: Algorithm,
    pub n_ok: usize,
    pub n_fail: usize,
    pub mean_s: Option<f64>,
    pub median_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingResult {
    pub rows: Vec<TimingRow>,
    pub trials: Vec<TrialResult>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Wall time from spectral initialization until the relative error first
/// drops below 1e-8. Every algorithm of a trial sees the same instance; the
/// order in which they run rotates from trial to trial. RGD uses the first
/// lambda of the spec.
pub fn run_timing(spec: &ExperimentSpec) -> Result<TimingResult> {
    spec.validate()?;
    let algs = spec.algorithms.clone();
    let per_trial: Vec<Result<Vec<TrialResult>>> = spec.pool()?.install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(spec.master_seed, 0, INSTANCE_STREAM, trial)?;
                let (gt, mask) = gen_instance(spec.dims(), spec.kappa, spec.p, seed)?;
                let mut out = Vec::with_capacity(algs.len());
                for offset in 0..algs.len() {
                    let alg = algs[(trial + offset) % algs.len()];
                    let mut config = SolverConfig::new(alg.variant(spec.lambdas[0]), spec.step);
                    config.tol = SUCCESS_THRESHOLD;
                    config.max_iters = spec.max_iters;
                    config.record_every = spec.max_iters.max(1);
                    let start = Instant::now();
                    let init = spectral_init(&gt, &mask, spec.r)?;
                    let res = run(&gt, &mask, &config, &init)?;
                    let seconds = start.elapsed().as_secs_f64();
                    let ok = res.status == RunStatus::Converged;
                    out.push(TrialResult {
                        algorithm: alg,
                        trial,
                        seed,
                        status: res.status,
                        iterations: res.iterations,
                        rel_err: relative_error(&res.factors, &gt.m_star)?,
                        seconds: ok.then_some(seconds),
                    });
                }
                Ok(out)
            })
            .collect()
    });
    let mut trials = Vec::new();
    for t in per_trial {
        trials.extend(t?);
    }
    trials.sort_by_key(|t| (t.trial, t.algorithm));

    let rows = algs
        .iter()
        .map(|&alg| {
            let mine: Vec<&TrialResult> = trials.iter().filter(|t| t.algorithm == alg).collect();
            let mut times: Vec<f64> = mine.iter().filter_map(|t| t.seconds).collect();
            times.sort_by(f64::total_cmp);
            TimingRow {
                d1: spec.d1,
                d2: spec.d2,
                r: spec.r,
                p: spec.p,
                kappa: spec.kappa,
                algorithm: alg,
                n_ok: times.len(),
                n_fail: mine.len() - times.len(),
                mean_s: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
                median_s: median(&times),
            }
        })
        .collect();
    Ok(TimingResult { rows, trials })
}

fn write_rows<T: Serialize>(rows: &[T], header: &[&str], w: impl Write) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    csv.write_record(header)?;
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

pub const CONVERGENCE_HEADER: [&str; 7] = [
    "algorithm",
    "lambda",
    "k",
    "rel_err",
    "dist",
    "balancing",
    "seconds",
];
pub const PHASE_HEADER: [&str; 5] = ["p", "r", "trials", "successes", "rate"];
pub const CONTOUR_HEADER: [&str; 3] = ["r", "p_cross", "clipped"];
pub const TIMING_HEADER: [&str; 10] = [
    "d1",
    "d2",
    "r",
    "p",
    "kappa",
    "algorithm",
    "n_ok",
    "n_fail",
    "mean_s",
    "median_s",
];

pub fn write_convergence_csv(rows: &[ConvergenceRow], w: impl Write) -> Result<()> {
    write_rows(rows, &CONVERGENCE_HEADER, w)
}

#[derive(Serialize)]
struct PhaseRow {
    p: f64,
    r: usize,
    trials: usize,
    successes: usize,
    rate: f64,
}

/// One row per `(p, r)` cell, ordered by `r` then `p`.
pub fn write_phase_csv(grid: &PhaseGrid, w: impl Write) -> Result<()> {
    let mut rows = Vec::new();
    for (ri, &r) in grid.r_values.iter().enumerate() {
        for (pi, &p) in grid.p_values.iter().enumerate() {
            rows.push(PhaseRow {
                p,
                r,
                trials: grid.trials,
                successes: grid.successes[ri][pi],
                rate: grid.rate(ri, pi),
            });
        }
    }
    write_rows(&rows, &PHASE_HEADER, w)
}

pub fn write_contour_csv(contour: &[ContourPoint], w: impl Write) -> Result<()> {
    write_rows(contour, &CONTOUR_HEADER, w)
}

pub fn write_timing_csv(rows: &[TimingRow], w: impl Write) -> Result<()> {
    write_rows(rows, &TIMING_HEADER, w)
}

/// SHA-256 of `blob {len}\0{bytes}`, the way git names its objects.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// JSON document written next to every experiment's CSV output.
#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a, S: Serialize> {
    pub experiment: &'a str,
    pub spec: &'a ExperimentSpec,
    pub input_hash: String,
    pub stats: S,
}

impl<'a, S: Serialize> Summary<'a, S> {
    pub fn new(experiment: &'a str, spec: &'a ExperimentSpec, stats: S) -> Result<Self> {
        let input_hash = content_hash(&serde_json::to_vec(spec)?);
        Ok(Self {
            experiment,
            spec,
            input_hash,
            stats,
        })
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::full_svd;

    fn grid_with_rates(p: Vec<f64>, rows: Vec<Vec<usize>>, trials: usize) -> PhaseGrid {
        let r_values = (1..=rows.len()).collect();
        PhaseGrid {
            p_values: p,
            r_values,
            trials,
            successes: rows,
            contour: Vec::new(),
        }
    }

    #[test]
    fn ground_truth_spectrum() {
        let gt = gen_ground_truth(Dims::new(30, 20, 5).unwrap(), 3.0, 1).unwrap();
        let svd = full_svd(&gt.m_star).unwrap();
        let expected = [1.0, 5.0 / 6.0, 4.0 / 6.0, 3.0 / 6.0, 1.0 / 3.0];
        for (s, e) in svd.sigma.iter().zip(expected) {
            assert!((s - e).abs() < 1e-10);
        }
        assert!((gt.kappa - 3.0).abs() < 1e-12);
        assert!(gt.mu >= 1.0);
    }

    #[test]
    fn ground_truth_edge_cases() {
        let gt = gen_ground_truth(Dims::new(12, 9, 3).unwrap(), 1.0, 4).unwrap();
        let svd = full_svd(&gt.m_star).unwrap();
        assert!((svd.sigma[0] / svd.sigma[2] - 1.0).abs() < 1e-10);
        let gt = gen_ground_truth(Dims::new(12, 9, 1).unwrap(), 2.0, 5).unwrap();
        let svd = full_svd(&gt.m_star).unwrap();
        assert!(svd.sigma[1] < 1e-12);
        assert!(gen_ground_truth(Dims { d1: 4, d2: 4, r: 2 }, 0.5, 1).is_err());
        assert!(gen_ground_truth(Dims { d1: 4, d2: 4, r: 5 }, 2.0, 1).is_err());
    }

    #[test]
    fn contour_examples() {
        let p = vec![0.2, 0.4, 0.6, 0.8];
        let grid = grid_with_rates(p, vec![vec![0, 0, 4, 4], vec![4, 4, 4, 4], vec![0; 4]], 4);
        let c = extract_contour(&grid);
        assert!((c[0].p_cross.unwrap() - 0.5).abs() < 1e-15);
        assert!(!c[0].clipped);
        assert_eq!(c[1].p_cross, Some(0.2));
        assert!(c[1].clipped);
        assert_eq!(c[2].p_cross, None);
    }

    #[test]
    fn contour_interpolates_partial_rates() {
        let grid = grid_with_rates(vec![0.1, 0.3], vec![vec![1, 3]], 4);
        // 0.25 -> 0.75: halfway at 0.2
        assert!((extract_contour(&grid)[0].p_cross.unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        let ok = ExperimentSpec::default();
        assert!(ok.validate().is_ok());
        let bad = [
            ExperimentSpec {
                p: 1.5,
                ..ok.clone()
            },
            ExperimentSpec {
                trials: 0,
                ..ok.clone()
            },
            ExperimentSpec {
                p_grid: vec![0.3, 0.2],
                ..ok.clone()
            },
            ExperimentSpec {
                r_grid: vec![],
                ..ok.clone()
            },
            ExperimentSpec {
                kappa: 0.5,
                ..ok.clone()
            },
            ExperimentSpec {
                lambdas: vec![0.0],
                ..ok.clone()
            },
            ExperimentSpec {
                r: 200,
                ..ok.clone()
            },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for alg in Algorithm::ALL {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
        }
        assert_eq!("bgd".parse::<Algorithm>().unwrap(), Algorithm::Bgd);
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[1.0, 3.0, 4.0]), Some(3.0));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
    }

    #[test]
    fn content_hash_is_git_blob_style() {
        // the empty git blob, hashed with SHA-256 instead of SHA-1
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn csv_headers_and_empty_fields() {
        let rows = vec![ConvergenceRow {
            algorithm: Algorithm::Vgd,
            lambda: 0.0,
            k: 0,
            rel_err: 0.5,
            dist: None,
            balancing: 0.0,
            seconds: 0.0,
        }];
        let mut buf = Vec::new();
        write_convergence_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "algorithm,lambda,k,rel_err,dist,balancing,seconds\nVGD,0.0,0,0.5,,0.0,0.0\n"
        );
    }
}
