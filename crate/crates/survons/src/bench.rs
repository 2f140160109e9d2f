//! Experiment harness: learning-rate grids, pilot gradient-bound estimation,
//! replicated online runs with shared cohorts, trace CSV emission, and static
//! figures.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::bounds::{
    bound_ogd_order, bound_ons_avg_order, bound_ons_order, bound_survons, GammaAveraging,
    GammaTrace,
};
use crate::cohort::{simulate_cohort_stream, SimulationConfig};
use crate::concavity::estimate_curvature;
use crate::error::{Result, SurvError};
use crate::likelihood::{
    batch_minimizer_contexts, interval_gradient, interval_hessian, interval_loss, loss_contexts,
    LossContext, Parameter,
};
use crate::optim::{AdaptMode, OgdState, OnsState, SurvOnsState};

/// Default desk-scale experiment size; the full-scale protocol
/// (N=10000, n=1000, R=100) sits behind a flag.
pub const DESK_INDIVIDUALS: usize = 2000;
pub const DESK_HORIZON: usize = 300;
pub const DESK_DIM: usize = 4;
pub const DESK_REPS: usize = 20;
pub const DEFAULT_K: usize = 10;

pub const PAPER_INDIVIDUALS: usize = 10_000;
pub const PAPER_HORIZON: usize = 1000;
pub const PAPER_REPS: usize = 100;

/// Which learning-rate grid to build.
#[derive(Debug, Clone, PartialEq)]
pub enum GridKind {
    /// Endpoints `(1/sqrt(n), 1/(4 G D))`.
    G1,
    /// Endpoints `(1/(G D), 10/(G D))`.
    G2,
    /// User-supplied values, strictly increasing.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub kind: GridKind,
    pub k: usize,
    pub g: f64,
    pub big_d: f64,
    pub n: usize,
}

fn geometric_points(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        // Single point: the geometric midpoint of the endpoints.
        return vec![(lo * hi).sqrt()];
    }
    (0..k)
        .map(|i| {
            let frac = i as f64 / (k - 1) as f64;
            (lo.ln() + frac * (hi.ln() - lo.ln())).exp()
        })
        .collect()
}

/// Builds the grid `Gamma` (geometrically spaced, endpoints inclusive) and
/// the matching initializations `epsilon_k = 1/(gamma_k D)^2`.
pub fn build_grid(spec: &GridSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.k < 1 {
        return Err(SurvError::InvalidConfig("grid size must be at least 1".into()));
    }
    if spec.g <= 0.0 || spec.big_d <= 0.0 || spec.n < 1 {
        return Err(SurvError::InvalidConfig(
            "grid construction needs positive G, D and a horizon of at least 1".into(),
        ));
    }
    let grid = match &spec.kind {
        GridKind::Explicit(values) => {
            if values.is_empty() {
                return Err(SurvError::InvalidConfig("explicit grid is empty".into()));
            }
            if values.windows(2).any(|w| w[1] <= w[0]) || values[0] <= 0.0 {
                return Err(SurvError::InvalidConfig(
                    "explicit grid must be strictly increasing and positive".into(),
                ));
            }
            values.clone()
        }
        GridKind::G1 => {
            let lo = 1.0 / (spec.n as f64).sqrt();
            let hi = 1.0 / (4.0 * spec.g * spec.big_d);
            if lo >= hi {
                return Err(SurvError::InvalidConfig(format!(
                    "first-grid endpoints inverted (1/sqrt(n) = {lo:.4e} >= 1/(4GD) = {hi:.4e}); \
                     use a longer horizon or an explicit grid"
                )));
            }
            geometric_points(lo, hi, spec.k)
        }
        GridKind::G2 => {
            let lo = 1.0 / (spec.g * spec.big_d);
            geometric_points(lo, 10.0 * lo, spec.k)
        }
    };
    let eps = grid.iter().map(|g| 1.0 / (g * spec.big_d).powi(2)).collect();
    Ok((grid, eps))
}

/// Algorithm selector for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    /// Aggregated ONS learners with the adaptive clipped constant.
    SurvOns,
    /// Same aggregation with each expert pinned at its grid rate.
    BoaOns,
    /// Projected gradient descent with the `D/(G sqrt(t))` schedule.
    Ogd,
    /// Plain ONS at the given rate.
    OnsFixed(f64),
    /// Plain ONS at the grid entry with this index (per-replication grid).
    OnsIndex(usize),
}

impl Algorithm {
    pub fn label(&self) -> String {
        match self {
            Algorithm::SurvOns => "survons".into(),
            Algorithm::BoaOns => "boa-ons".into(),
            Algorithm::Ogd => "ogd".into(),
            Algorithm::OnsFixed(g) => format!("ons(gamma={g})"),
            Algorithm::OnsIndex(k) => format!("ons(grid[{k}])"),
        }
    }
}

/// How the domain radius is chosen per replication.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainRule {
    Explicit(f64),
    /// `D = 1.1 * ||theta*||`, from the simulated truth.
    ScaledTruth,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub sim: SimulationConfig,
    pub algorithm: Algorithm,
    pub grid_kind: GridKind,
    pub k: usize,
    /// Gradient-norm bound used by grids and the OGD schedule.
    pub g_bound: f64,
    pub reps: usize,
    pub domain_rule: DomainRule,
    /// Optional lower clamp applied to the grid rates.
    pub gamma_floor: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(SurvError::InvalidConfig("at least one replication is required".into()));
        }
        if self.g_bound <= 0.0 {
            return Err(SurvError::InvalidConfig("gradient bound must be positive".into()));
        }
        if let DomainRule::Explicit(d) = self.domain_rule {
            if d <= 0.0 {
                return Err(SurvError::InvalidConfig("domain radius must be positive".into()));
            }
        }
        if let Some(f) = self.gamma_floor {
            if f <= 0.0 {
                return Err(SurvError::InvalidConfig("gamma floor must be positive".into()));
            }
        }
        Ok(())
    }

    /// Desk-scale defaults running the aggregated algorithm on the second
    /// grid.
    pub fn desk_default(seed: u64) -> RunConfig {
        RunConfig {
            sim: SimulationConfig {
                n_individuals: DESK_INDIVIDUALS,
                horizon: DESK_HORIZON,
                dim: DESK_DIM,
                seed,
                arrival_model: crate::cohort::ArrivalModel::Uniform,
                theta_star: None,
                intercept: true,
            },
            algorithm: Algorithm::SurvOns,
            grid_kind: GridKind::G2,
            k: DEFAULT_K,
            g_bound: 1.0,
            reps: DESK_REPS,
            domain_rule: DomainRule::ScaledTruth,
            gamma_floor: None,
        }
    }
}

/// One recorded round.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    pub loss_pred: f64,
    /// Interval loss at the generating parameter.
    pub loss_star: f64,
    pub grad_norm: f64,
    pub mu_t: Option<f64>,
    pub gamma_t: Option<f64>,
    /// Cumulative loss difference against the batch minimizer.
    pub cum_regret: f64,
    /// `|| mean_{s<=t} prediction_s - theta* ||^2`.
    pub sq_err_mean_iterate: f64,
    pub pred_norm: f64,
    pub weights: Vec<f64>,
    pub prediction: DVector<f64>,
    pub mean_prediction: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentTrace {
    pub rows: Vec<TraceRow>,
    pub seed: u64,
    pub stream: u64,
    pub algorithm: String,
    pub grid: Vec<f64>,
    pub d_radius: f64,
    pub g_bound: f64,
}

impl ExperimentTrace {
    /// Per-round curvature constants packaged for the bound calculators.
    pub fn gamma_trace(&self) -> GammaTrace {
        GammaTrace {
            gammas: self.rows.iter().map(|r| r.gamma_t).collect(),
            grid: self.grid.clone(),
        }
    }

    /// Final cumulative loss difference against the generating parameter.
    pub fn final_cum_nll_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.loss_pred - r.loss_star).sum()
    }

    pub fn final_cum_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Cumulative loss difference against the generating parameter per round.
    pub fn cum_nll_diff_series(&self) -> Vec<f64> {
        let mut cum = 0.0;
        self.rows
            .iter()
            .map(|r| {
                cum += r.loss_pred - r.loss_star;
                cum
            })
            .collect()
    }
}

/// Pointwise means across replications.
#[derive(Debug, Clone)]
pub struct AveragedTrace {
    pub cum_nll_diff: Vec<f64>,
    pub sq_err: Vec<f64>,
}

pub fn average_traces(traces: &[ExperimentTrace]) -> AveragedTrace {
    let n = traces.first().map_or(0, |t| t.rows.len());
    let r = traces.len().max(1) as f64;
    let mut cum_nll_diff = vec![0.0; n];
    let mut sq_err = vec![0.0; n];
    for trace in traces {
        for (i, v) in trace.cum_nll_diff_series().into_iter().enumerate() {
            cum_nll_diff[i] += v / r;
        }
        for (i, row) in trace.rows.iter().enumerate() {
            sq_err[i] += row.sq_err_mean_iterate / r;
        }
    }
    AveragedTrace { cum_nll_diff, sq_err }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub traces: Vec<ExperimentTrace>,
    pub averaged: AveragedTrace,
}

struct RepSetup {
    contexts: Vec<LossContext>,
    theta_star: DVector<f64>,
    star: Parameter,
    dagger: Parameter,
    d_radius: f64,
    grid: Vec<f64>,
    dim: usize,
}

fn replication_setup(config: &RunConfig, rep: u64) -> Result<RepSetup> {
    let cohort = simulate_cohort_stream(&config.sim, rep)?;
    let theta_star = cohort
        .theta_star
        .clone()
        .ok_or_else(|| SurvError::InvalidConfig("simulated cohort lost its parameter".into()))?;
    let d_radius = match config.domain_rule {
        DomainRule::Explicit(d) => d,
        DomainRule::ScaledTruth => 1.1 * theta_star.norm(),
    };
    if d_radius <= 0.0 {
        return Err(SurvError::Numerical(
            "domain radius from the truth rule is zero; parameter draw degenerate".into(),
        ));
    }
    let n = config.sim.horizon;
    let contexts = loss_contexts(&cohort, n);
    let spec = GridSpec {
        kind: config.grid_kind.clone(),
        k: config.k,
        g: config.g_bound,
        big_d: d_radius,
        n,
    };
    let (mut grid, _) = build_grid(&spec)?;
    if let Some(floor) = config.gamma_floor {
        for g in &mut grid {
            *g = g.max(floor);
        }
        grid.dedup();
    }
    let star = Parameter::new(theta_star.clone(), d_radius)?;
    let dagger = batch_minimizer_contexts(&contexts, config.sim.dim, d_radius, 1e-8)?;
    Ok(RepSetup { contexts, theta_star, star, dagger, d_radius, grid, dim: config.sim.dim })
}

enum AlgState {
    Agg(SurvOnsState),
    Ons(OnsState),
    Ogd(OgdState),
}

fn run_algorithm(
    setup: &RepSetup,
    algorithm: &Algorithm,
    config: &RunConfig,
    rep: u64,
) -> Result<ExperimentTrace> {
    let dim = setup.dim;
    let d = setup.d_radius;
    let mut state = match algorithm {
        Algorithm::SurvOns => {
            AlgState::Agg(SurvOnsState::new(&setup.grid, dim, d, AdaptMode::Adaptive)?)
        }
        Algorithm::BoaOns => {
            AlgState::Agg(SurvOnsState::new(&setup.grid, dim, d, AdaptMode::Fixed)?)
        }
        Algorithm::Ogd => AlgState::Ogd(OgdState::new(dim, config.g_bound, d)?),
        Algorithm::OnsFixed(gamma) => AlgState::Ons(OnsState::new(dim, *gamma, d)?),
        Algorithm::OnsIndex(idx) => {
            let gamma = *setup.grid.get(*idx).ok_or_else(|| {
                SurvError::InvalidConfig(format!("grid index {idx} out of range"))
            })?;
            AlgState::Ons(OnsState::new(dim, gamma, d)?)
        }
    };

    let mut rows = Vec::with_capacity(setup.contexts.len());
    let mut cum_regret = 0.0;
    let mut mean_pred = DVector::zeros(dim);
    for ctx in &setup.contexts {
        let prediction = match &state {
            AlgState::Agg(s) => s.aggregated(),
            AlgState::Ons(s) => s.theta().clone(),
            AlgState::Ogd(s) => s.theta().clone(),
        };
        let pred_param = Parameter::new(prediction.clone(), d)?;
        let loss_pred = interval_loss(ctx, &pred_param)?;
        let loss_star = interval_loss(ctx, &setup.star)?;
        let loss_dagger = interval_loss(ctx, &setup.dagger)?;

        let (curvature, grad_norm, weights) = match &mut state {
            AlgState::Agg(s) => {
                let out = s.round(ctx)?;
                (out.curvature, out.curvature.grad_norm, s.weights().to_vec())
            }
            AlgState::Ons(s) => {
                let g = interval_gradient(ctx, &pred_param)?;
                let h = interval_hessian(ctx, &pred_param)?;
                let c = estimate_curvature(&g, &h, d)?;
                s.step(&g)?;
                (c, g.norm(), vec![1.0])
            }
            AlgState::Ogd(s) => {
                let g = interval_gradient(ctx, &pred_param)?;
                let h = interval_hessian(ctx, &pred_param)?;
                let c = estimate_curvature(&g, &h, d)?;
                s.step(&g)?;
                (c, g.norm(), vec![1.0])
            }
        };

        cum_regret += loss_pred - loss_dagger;
        let t = ctx.t;
        mean_pred = (&mean_pred * (t as f64 - 1.0) + &prediction) / t as f64;
        let sq_err = (&mean_pred - &setup.theta_star).norm_squared();
        rows.push(TraceRow {
            t,
            loss_pred,
            loss_star,
            grad_norm,
            mu_t: curvature.valid.then_some(curvature.mu),
            gamma_t: curvature.valid.then_some(curvature.gamma),
            cum_regret,
            sq_err_mean_iterate: sq_err,
            pred_norm: prediction.norm(),
            weights,
            prediction,
            mean_prediction: mean_pred.clone(),
        });
    }

    Ok(ExperimentTrace {
        rows,
        seed: config.sim.seed,
        stream: rep,
        algorithm: algorithm.label(),
        grid: setup.grid.clone(),
        d_radius: setup.d_radius,
        g_bound: config.g_bound,
    })
}

/// Runs several algorithms over the same replications, sharing each
/// replication's cohort, batch minimizer and grid. Replications execute in
/// parallel on independent RNG substreams.
pub fn run_experiment_multi(
    config: &RunConfig,
    algorithms: &[Algorithm],
) -> Result<Vec<ExperimentResult>> {
    config.validate()?;
    let per_rep: Vec<Vec<ExperimentTrace>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<Vec<ExperimentTrace>> {
            let setup = replication_setup(config, rep).map_err(|e| {
                SurvError::Numerical(format!(
                    "replication {rep} (seed {}, stream {rep}) failed during setup: {e}",
                    config.sim.seed
                ))
            })?;
            algorithms
                .iter()
                .map(|alg| {
                    run_algorithm(&setup, alg, config, rep).map_err(|e| {
                        SurvError::Numerical(format!(
                            "replication {rep} (seed {}, stream {rep}, {}) failed: {e}",
                            config.sim.seed,
                            alg.label()
                        ))
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok((0..algorithms.len())
        .map(|a| {
            let traces: Vec<ExperimentTrace> =
                per_rep.iter().map(|reps| reps[a].clone()).collect();
            let averaged = average_traces(&traces);
            ExperimentResult { traces, averaged }
        })
        .collect())
}

/// Runs the configured algorithm over all replications.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult> {
    Ok(run_experiment_multi(config, std::slice::from_ref(&config.algorithm))?.remove(0))
}

/// Runs plain ONS at every grid rate and keeps, per replication, the rate
/// with the best final cumulative loss. Note this selection is optimistic:
/// it overestimates what a single pre-committed rate would achieve.
pub fn run_best_ons_comparator(config: &RunConfig) -> Result<ExperimentResult> {
    let algorithms: Vec<Algorithm> = (0..config.k).map(Algorithm::OnsIndex).collect();
    let results = run_experiment_multi(config, &algorithms)?;
    let reps = config.reps;
    let mut selected = Vec::with_capacity(reps);
    for rep in 0..reps {
        let best = results
            .iter()
            .map(|r| &r.traces[rep])
            .min_by(|a, b| {
                let la: f64 = a.rows.iter().map(|r| r.loss_pred).sum();
                let lb: f64 = b.rows.iter().map(|r| r.loss_pred).sum();
                la.total_cmp(&lb)
            })
            .expect("at least one grid entry")
            .clone();
        selected.push(best);
    }
    let averaged = average_traces(&selected);
    Ok(ExperimentResult { traces: selected, averaged })
}

/// Pilot estimates of the gradient bound.
#[derive(Debug, Clone)]
pub struct PilotG {
    /// Max over rounds and pilot replications of the prediction gradient.
    pub g: f64,
    /// Per-replication maxima, for stability inspection.
    pub per_rep: Vec<f64>,
}

/// Stream ids for pilot cohorts, disjoint from experiment replications.
const PILOT_STREAM_BASE: u64 = 1 << 32;

/// Max over rounds of the gradient norm at the aggregated prediction, on one
/// cohort's contexts.
pub fn max_grad_norm_survons(
    contexts: &[LossContext],
    dim: usize,
    grid: &[f64],
    d_radius: f64,
) -> Result<f64> {
    let mut state = SurvOnsState::new(grid, dim, d_radius, AdaptMode::Adaptive)?;
    let mut max = 0.0_f64;
    for ctx in contexts {
        let out = state.round(ctx)?;
        max = max.max(out.curvature.grad_norm);
    }
    Ok(max)
}

/// Estimates `G = max_t ||grad l_t(theta_t)||` by running the aggregated
/// algorithm with a provisional grid (geometric, `1/sqrt(n)` to 1) on fresh
/// pilot cohorts.
pub fn estimate_g_pilot(config: &RunConfig, pilot_reps: usize) -> Result<PilotG> {
    if pilot_reps < 1 {
        return Err(SurvError::InvalidConfig("at least one pilot replication".into()));
    }
    let n = config.sim.horizon;
    let lo = (1.0 / (n as f64).sqrt()).min(0.999);
    let grid = geometric_points(lo, 1.0, DEFAULT_K);
    let mut per_rep = Vec::with_capacity(pilot_reps);
    for rep in 0..pilot_reps as u64 {
        let cohort = simulate_cohort_stream(&config.sim, PILOT_STREAM_BASE + rep)?;
        let theta_star = cohort
            .theta_star
            .clone()
            .ok_or_else(|| SurvError::InvalidConfig("simulated cohort lost its parameter".into()))?;
        let d_radius = match config.domain_rule {
            DomainRule::Explicit(d) => d,
            DomainRule::ScaledTruth => 1.1 * theta_star.norm(),
        };
        let contexts = loss_contexts(&cohort, n);
        per_rep.push(max_grad_norm_survons(&contexts, config.sim.dim, &grid, d_radius)?);
    }
    let g = per_rep.iter().cloned().fold(0.0_f64, f64::max);
    Ok(PilotG { g, per_rep })
}

/// Full round-trip decimal: 17 significant digits.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".into(), fmt)
}

/// Writes the trace with the fixed column contract
/// `t, loss_pred, loss_star, grad_norm, mu_t, gamma_t, cum_regret,
/// sq_err_mean_iterate, pred_norm, w_1..w_K`.
pub fn write_trace_csv<W: Write>(trace: &ExperimentTrace, mut w: W) -> Result<()> {
    let k = trace.grid.len().max(trace.rows.first().map_or(1, |r| r.weights.len()));
    let mut header =
        "t,loss_pred,loss_star,grad_norm,mu_t,gamma_t,cum_regret,sq_err_mean_iterate,pred_norm"
            .to_string();
    for i in 1..=k {
        header.push_str(&format!(",w_{i}"));
    }
    writeln!(w, "{header}")?;
    for row in &trace.rows {
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{}",
            row.t,
            fmt(row.loss_pred),
            fmt(row.loss_star),
            fmt(row.grad_norm),
            fmt_opt(row.mu_t),
            fmt_opt(row.gamma_t),
            fmt(row.cum_regret),
            fmt(row.sq_err_mean_iterate),
            fmt(row.pred_norm),
        );
        for wk in &row.weights {
            line.push(',');
            line.push_str(&fmt(*wk));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn save_trace_csv<P: AsRef<Path>>(trace: &ExperimentTrace, path: P) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trace_csv(trace, std::io::BufWriter::new(f))
}

/// Parses a trace CSV back into rows (prediction vectors are not stored in
/// the file and come back empty).
pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| SurvError::Parse("empty trace file".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 10 || cols[0] != "t" {
        return Err(SurvError::Parse(format!("unexpected trace header: {header}")));
    }
    let k = cols.len() - 9;
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 + k {
            return Err(SurvError::Parse(format!("row has {} fields, expected {}", f.len(), 9 + k)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| SurvError::Parse(format!("bad number {s:?}: {e}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            let v = num(s)?;
            Ok(if v.is_nan() { None } else { Some(v) })
        };
        rows.push(TraceRow {
            t: f[0]
                .parse()
                .map_err(|e| SurvError::Parse(format!("bad round index {:?}: {e}", f[0])))?,
            loss_pred: num(f[1])?,
            loss_star: num(f[2])?,
            grad_norm: num(f[3])?,
            mu_t: opt(f[4])?,
            gamma_t: opt(f[5])?,
            cum_regret: num(f[6])?,
            sq_err_mean_iterate: num(f[7])?,
            pred_norm: num(f[8])?,
            weights: f[9..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            prediction: DVector::zeros(0),
            mean_prediction: DVector::zeros(0),
        });
    }
    Ok(rows)
}

/// Writes an averaged trace as `t,cum_nll_diff,sq_err`.
pub fn write_averaged_csv<W: Write>(avg: &AveragedTrace, mut w: W) -> Result<()> {
    writeln!(w, "t,cum_nll_diff,sq_err")?;
    for (i, (c, s)) in avg.cum_nll_diff.iter().zip(&avg.sq_err).enumerate() {
        writeln!(w, "{},{},{}", i + 1, fmt(*c), fmt(*s))?;
    }
    Ok(())
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Options controlling how bound curves are rendered.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundOptions {
    /// Drop the dimension and log factors from the order curves.
    pub bare: bool,
    /// Use the literal running sum instead of the running mean.
    pub sum_gamma: bool,
}

/// Writes the bound curves keyed by `n`:
/// `n, bound_survons, bound_ons, bound_ogd, bound_ons_avg`.
pub fn write_bound_curves_csv<W: Write>(
    trace: &GammaTrace,
    horizon: usize,
    dim: usize,
    g: f64,
    big_d: f64,
    opts: BoundOptions,
    mut w: W,
) -> Result<()> {
    let mode = if opts.sum_gamma { GammaAveraging::Sum } else { GammaAveraging::Mean };
    writeln!(w, "n,bound_survons,bound_ons,bound_ogd,bound_ons_avg")?;
    for n in 2..=horizon.min(trace.len()) {
        let sv = bound_survons(trace, n, dim, g, big_d)?;
        let ons = bound_ons_order(trace, n, dim, opts.bare)?;
        let ogd = bound_ogd_order(n, g, big_d, opts.bare);
        let avg = bound_ons_avg_order(trace, n, dim, mode, opts.bare)?;
        writeln!(w, "{n},{},{},{},{}", fmt(sv), fmt(ons), fmt(ogd), fmt(avg))?;
    }
    Ok(())
}

/// Inputs for the static figures.
pub struct FigureInputs<'a> {
    /// Labeled averaged curves (cumulative loss difference and squared
    /// error).
    pub curves: Vec<(String, &'a AveragedTrace)>,
    /// Labeled per-round curvature samples for the histogram.
    pub gammas: Vec<(String, Vec<f64>)>,
    /// Data for the bound-order curves, if available.
    pub bounds: Option<(GammaTrace, usize, usize, f64, f64)>,
    pub bound_opts: BoundOptions,
}

fn freedman_diaconis_bins(values: &[f64]) -> (f64, f64, usize) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = *sorted.last().unwrap();
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p) as usize];
    let iqr = (q(0.75) - q(0.25)).max(1e-12);
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 200);
    (lo, hi, bins)
}

const PALETTE: [plotters::style::RGBColor; 6] = [
    plotters::style::RGBColor(31, 119, 180),
    plotters::style::RGBColor(255, 127, 14),
    plotters::style::RGBColor(44, 160, 44),
    plotters::style::RGBColor(214, 39, 40),
    plotters::style::RGBColor(148, 103, 189),
    plotters::style::RGBColor(140, 86, 75),
];

fn plot_err(e: impl std::fmt::Display) -> SurvError {
    SurvError::Io(std::io::Error::other(format!("figure emission failed: {e}")))
}

/// Renders the four static figures into `out_dir`:
/// a curvature histogram (Freedman-Diaconis bins), cumulative loss
/// difference curves, log-log squared-error curves, and log-log bound-order
/// curves. Returns the written paths.
pub fn emit_figures(inputs: &FigureInputs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    use plotters::prelude::*;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    if !inputs.gammas.is_empty() {
        let path = out_dir.join("gamma_hist.svg");
        let root = SVGBackend::new(&path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let all: Vec<f64> = inputs.gammas.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
        if !all.is_empty() {
            let (lo, hi, bins) = freedman_diaconis_bins(&all);
            let span = (hi - lo).max(1e-12);
            let width = span / bins as f64;
            let mut max_count = 0usize;
            let mut series = Vec::new();
            for (gi, (label, values)) in inputs.gammas.iter().enumerate() {
                let mut counts = vec![0usize; bins];
                for v in values {
                    let idx = (((v - lo) / width) as usize).min(bins - 1);
                    counts[idx] += 1;
                }
                max_count = max_count.max(counts.iter().cloned().max().unwrap_or(0));
                series.push((label.clone(), counts, PALETTE[gi % PALETTE.len()]));
            }
            let mut chart = ChartBuilder::on(&root)
                .margin(15)
                .caption("Per-round curvature constant (histogram)", ("sans-serif", 18))
                .x_label_area_size(35)
                .y_label_area_size(45)
                .build_cartesian_2d(lo..hi, 0usize..(max_count + 1))
                .map_err(plot_err)?;
            chart.configure_mesh().draw().map_err(plot_err)?;
            for (label, counts, color) in series {
                chart
                    .draw_series(counts.iter().enumerate().map(|(i, c)| {
                        let x0 = lo + i as f64 * width;
                        Rectangle::new([(x0, 0), (x0 + width, *c)], color.mix(0.45).filled())
                    }))
                    .map_err(plot_err)?
                    .label(label)
                    .legend(move |(x, y)| {
                        Rectangle::new([(x, y - 4), (x + 12, y + 4)], color.filled())
                    });
            }
            chart
                .configure_series_labels()
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
        written.push(path.clone());
    }

    if !inputs.curves.is_empty() {
        let path = out_dir.join("cum_nll.svg");
        let root = SVGBackend::new(&path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let n = inputs.curves.iter().map(|(_, a)| a.cum_nll_diff.len()).max().unwrap_or(0);
        let ymin = inputs
            .curves
            .iter()
            .flat_map(|(_, a)| a.cum_nll_diff.iter().cloned())
            .fold(0.0_f64, f64::min);
        let ymax = inputs
            .curves
            .iter()
            .flat_map(|(_, a)| a.cum_nll_diff.iter().cloned())
            .fold(1.0_f64, f64::max);
        let mut chart = ChartBuilder::on(&root)
            .margin(15)
            .caption("Mean cumulative loss difference vs truth", ("sans-serif", 18))
            .x_label_area_size(35)
            .y_label_area_size(55)
            .build_cartesian_2d(1.0..n as f64, ymin..ymax * 1.05)
            .map_err(plot_err)?;
        chart.configure_mesh().draw().map_err(plot_err)?;
        for (ci, (label, avg)) in inputs.curves.iter().enumerate() {
            let color = PALETTE[ci % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(
                    avg.cum_nll_diff.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)),
                    &color,
                ))
                .map_err(plot_err)?
                .label(label.clone())
                .legend(move |(x, y)| {
                    plotters::element::PathElement::new(vec![(x, y), (x + 16, y)], color)
                });
        }
        chart.configure_series_labels().border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
        written.push(path.clone());
    }

    if !inputs.curves.is_empty() {
        let path = out_dir.join("sq_err_loglog.svg");
        let root = SVGBackend::new(&path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let pts: Vec<Vec<(f64, f64)>> = inputs
            .curves
            .iter()
            .map(|(_, a)| {
                a.sq_err
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(i, v)| (((i + 1) as f64).ln(), v.ln()))
                    .collect()
            })
            .collect();
        let xs: Vec<f64> = pts.iter().flatten().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().flatten().map(|p| p.1).collect();
        if !xs.is_empty() {
            let (xmin, xmax) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            let (ymin, ymax) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            let mut chart = ChartBuilder::on(&root)
                .margin(15)
                .caption("Squared error of the averaged iterate (log-log)", ("sans-serif", 18))
                .x_label_area_size(35)
                .y_label_area_size(55)
                .build_cartesian_2d(xmin..xmax.max(xmin + 1e-9), ymin..ymax.max(ymin + 1e-9))
                .map_err(plot_err)?;
            chart.configure_mesh().draw().map_err(plot_err)?;
            for (ci, ((label, _), series)) in inputs.curves.iter().zip(&pts).enumerate() {
                let color = PALETTE[ci % PALETTE.len()];
                chart
                    .draw_series(LineSeries::new(series.iter().cloned(), &color))
                    .map_err(plot_err)?
                    .label(label.clone())
                    .legend(move |(x, y)| {
                        plotters::element::PathElement::new(vec![(x, y), (x + 16, y)], color)
                    });
            }
            chart.configure_series_labels().border_style(BLACK).draw().map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
        written.push(path.clone());
    }

    if let Some((trace, horizon, dim, g, big_d)) = &inputs.bounds {
        let path = out_dir.join("bounds_loglog.svg");
        let root = SVGBackend::new(&path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mode = if inputs.bound_opts.sum_gamma { GammaAveraging::Sum } else { GammaAveraging::Mean };
        let bare = inputs.bound_opts.bare;
        let mut labeled: Vec<(String, Vec<(f64, f64)>)> = vec![
            ("aggregated".into(), Vec::new()),
            ("ons".into(), Vec::new()),
            ("ogd".into(), Vec::new()),
            ("ons-avg".into(), Vec::new()),
        ];
        for n in 2..=*horizon.min(&trace.len()) {
            let x = (n as f64).ln();
            labeled[0].1.push((x, bound_survons(trace, n, *dim, *g, *big_d)?.ln()));
            labeled[1].1.push((x, bound_ons_order(trace, n, *dim, bare)?.ln()));
            labeled[2].1.push((x, bound_ogd_order(n, *g, *big_d, bare).ln()));
            labeled[3].1.push((x, bound_ons_avg_order(trace, n, *dim, mode, bare)?.ln()));
        }
        let xs: Vec<f64> = labeled.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).collect();
        let ys: Vec<f64> = labeled.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).collect();
        if !xs.is_empty() {
            let (xmin, xmax) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            let (ymin, ymax) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            let mut chart = ChartBuilder::on(&root)
                .margin(15)
                .caption("Regret bound orders (log-log)", ("sans-serif", 18))
                .x_label_area_size(35)
                .y_label_area_size(55)
                .build_cartesian_2d(xmin..xmax.max(xmin + 1e-9), ymin..ymax.max(ymin + 1e-9))
                .map_err(plot_err)?;
            chart.configure_mesh().draw().map_err(plot_err)?;
            for (ci, (label, series)) in labeled.iter().enumerate() {
                let color = PALETTE[ci % PALETTE.len()];
                chart
                    .draw_series(LineSeries::new(series.iter().cloned(), &color))
                    .map_err(plot_err)?
                    .label(label.clone())
                    .legend(move |(x, y)| {
                        plotters::element::PathElement::new(vec![(x, y), (x + 16, y)], color)
                    });
            }
            chart.configure_series_labels().border_style(BLACK).draw().map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
        written.push(path.clone());
    }

    Ok(written)
}
