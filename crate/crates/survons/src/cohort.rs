//! Censored survival cohorts: data model, interval indicators, and the
//! synthetic-data simulator.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};

use crate::error::{Result, SurvError};
use crate::rng::substream;

/// A left-continuous covariate path `x_i(.)`.
///
/// The constant case is the single-piece path; the general case is
/// piecewise-constant with value `v_j` holding on `(b_j, b_{j+1}]`, which
/// keeps every exposure integral exact.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariatePath {
    Constant(DVector<f64>),
    /// `(breakpoint, value)` pairs with strictly increasing breakpoints.
    Piecewise(Vec<(f64, DVector<f64>)>),
}

impl CovariatePath {
    pub fn dim(&self) -> usize {
        match self {
            CovariatePath::Constant(v) => v.len(),
            CovariatePath::Piecewise(pieces) => pieces[0].1.len(),
        }
    }

    /// Left-continuous value at time `t`: the piece whose breakpoint is
    /// strictly below `t` (the first piece for `t` at or before the first
    /// breakpoint).
    pub fn value_at(&self, t: f64) -> &DVector<f64> {
        match self {
            CovariatePath::Constant(v) => v,
            CovariatePath::Piecewise(pieces) => {
                let mut current = &pieces[0].1;
                for (b, v) in pieces {
                    if *b < t {
                        current = v;
                    } else {
                        break;
                    }
                }
                current
            }
        }
    }

    /// Constant segments `(value, length)` covering `[start, end]`.
    pub fn segments(&self, start: f64, end: f64) -> Vec<(&DVector<f64>, f64)> {
        if end <= start {
            return Vec::new();
        }
        match self {
            CovariatePath::Constant(v) => vec![(v, end - start)],
            CovariatePath::Piecewise(pieces) => {
                let mut out = Vec::new();
                for (j, (b, v)) in pieces.iter().enumerate() {
                    let seg_start = b.max(start);
                    let seg_end = match pieces.get(j + 1) {
                        Some((b_next, _)) => b_next.min(end),
                        None => end,
                    };
                    if seg_end > seg_start {
                        out.push((v, seg_end - seg_start));
                    }
                }
                // The window may begin before the first breakpoint; the first
                // piece extends backwards (left continuity).
                if pieces[0].0 > start {
                    let head_end = pieces[0].0.min(end);
                    if head_end > start {
                        out.insert(0, (&pieces[0].1, head_end - start));
                    }
                }
                out
            }
        }
    }

    fn validate(&self, arrival: f64) -> Result<()> {
        if let CovariatePath::Piecewise(pieces) = self {
            if pieces.is_empty() {
                return Err(SurvError::InvalidConfig(
                    "piecewise covariate path must have at least one piece".into(),
                ));
            }
            let d = pieces[0].1.len();
            for w in pieces.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(SurvError::InvalidConfig(
                        "piecewise covariate breakpoints must be strictly increasing".into(),
                    ));
                }
            }
            if pieces.iter().any(|(_, v)| v.len() != d) {
                return Err(SurvError::InvalidConfig(
                    "piecewise covariate values must share one dimension".into(),
                ));
            }
            if pieces[0].0 > arrival {
                return Err(SurvError::InvalidConfig(format!(
                    "first covariate breakpoint {} is after arrival {arrival}",
                    pieces[0].0
                )));
            }
        }
        Ok(())
    }
}

/// One subject of the cohort.
///
/// The latent `event_time` and `censor_time` are simulation ground truth;
/// estimators only consume `(observed, event_flag, arrival, covariates)`.
#[derive(Debug, Clone)]
pub struct Individual {
    pub arrival: f64,
    pub event_time: f64,
    pub censor_time: f64,
    pub observed: f64,
    pub event_flag: bool,
    pub covariates: CovariatePath,
}

impl Individual {
    pub fn new(
        arrival: f64,
        event_time: f64,
        censor_time: f64,
        covariates: CovariatePath,
    ) -> Result<Self> {
        if arrival < 0.0 {
            return Err(SurvError::InvalidConfig(format!(
                "arrival time must be non-negative, got {arrival}"
            )));
        }
        if event_time < arrival || censor_time < arrival {
            return Err(SurvError::InvalidConfig(format!(
                "event time {event_time} and censor time {censor_time} must not precede arrival {arrival}"
            )));
        }
        covariates.validate(arrival)?;
        Ok(Individual {
            arrival,
            event_time,
            censor_time,
            observed: event_time.min(censor_time),
            event_flag: event_time <= censor_time,
            covariates,
        })
    }
}

/// Exposure of one individual to the interval `(t-1, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalExposure {
    /// Event observed inside the interval.
    pub y: bool,
    /// At risk during the interval.
    pub r: bool,
    pub start: f64,
    pub end: f64,
    pub duration: f64,
}

/// Indicators and exposure window of `ind` on `(t-1, t]`. Total function.
pub fn interval_indicators(ind: &Individual, t: usize) -> IntervalExposure {
    debug_assert!(t >= 1);
    let t = t as f64;
    let y = ind.event_flag && t - 1.0 < ind.observed && ind.observed <= t;
    let r = ind.arrival <= t && ind.observed > t - 1.0;
    let start = ind.arrival.max(t - 1.0);
    let end = ind.observed.min(t);
    IntervalExposure {
        y,
        r,
        start,
        end,
        duration: (end - start).max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalModel {
    /// Arrivals uniform on `[0, horizon]`, one per individual.
    Uniform,
    /// Homogeneous Poisson process with the given intensity on `[0, horizon]`.
    /// The cohort size is then random and `n_individuals` is ignored.
    Poisson(f64),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n_individuals: usize,
    pub horizon: usize,
    pub dim: usize,
    pub seed: u64,
    pub arrival_model: ArrivalModel,
    /// Generating parameter; drawn from a standard normal when absent.
    pub theta_star: Option<DVector<f64>>,
    /// Prepend a constant-1 column; the remaining `dim - 1` covariates are
    /// standard normal.
    pub intercept: bool,
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        let needs_count = matches!(self.arrival_model, ArrivalModel::Uniform);
        if (needs_count && self.n_individuals < 1) || self.horizon < 1 || self.dim < 1 {
            return Err(SurvError::InvalidConfig(
                "n_individuals (for uniform arrivals), horizon and dim must all be at least 1"
                    .into(),
            ));
        }
        if self.intercept && self.dim < 2 {
            return Err(SurvError::InvalidConfig(
                "intercept requires dim >= 2 to leave room for a random covariate".into(),
            ));
        }
        if let ArrivalModel::Poisson(lambda) = self.arrival_model {
            if lambda <= 0.0 {
                return Err(SurvError::InvalidConfig(format!(
                    "Poisson intensity must be positive, got {lambda}"
                )));
            }
        }
        if let Some(theta) = &self.theta_star {
            if theta.len() != self.dim {
                return Err(SurvError::DimensionMismatch {
                    expected: self.dim,
                    got: theta.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub individuals: Vec<Individual>,
    pub dim: usize,
    /// Generating parameter when simulated, absent otherwise.
    pub theta_star: Option<DVector<f64>>,
}

impl Cohort {
    /// Individuals at risk in `(t-1, t]`, in stable index order.
    pub fn risk_set(&self, t: usize) -> Vec<(usize, IntervalExposure)> {
        self.individuals
            .iter()
            .enumerate()
            .filter_map(|(i, ind)| {
                let e = interval_indicators(ind, t);
                e.r.then_some((i, e))
            })
            .collect()
    }

    /// Writes the CSV interchange format: one row per individual with columns
    /// `id, tau, u, delta, x_0..x_{d-1}`. Constant covariates only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "id,tau,u,delta")?;
        for j in 0..self.dim {
            write!(w, ",x_{j}")?;
        }
        writeln!(w)?;
        for (i, ind) in self.individuals.iter().enumerate() {
            let x = match &ind.covariates {
                CovariatePath::Constant(v) => v,
                CovariatePath::Piecewise(_) => {
                    return Err(SurvError::InvalidConfig(
                        "cohort CSV interchange supports constant covariates only".into(),
                    ))
                }
            };
            write!(
                w,
                "{i},{},{},{}",
                ind.arrival,
                ind.observed,
                ind.event_flag as u8
            )?;
            for v in x.iter() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads the CSV interchange format. Latent times are reconstructed from
    /// the observation model: the unobserved one of `(t_i, c_i)` is set to
    /// `+inf`, which leaves `(u_i, delta_i)` and every estimator unchanged.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Cohort> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| SurvError::Parse("empty cohort CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 5 || cols[..4] != ["id", "tau", "u", "delta"] {
            return Err(SurvError::Parse(format!(
                "unexpected cohort CSV header: {header}"
            )));
        }
        let dim = cols.len() - 4;
        let mut individuals = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 4 + dim {
                return Err(SurvError::Parse(format!("bad cohort CSV row: {line}")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| SurvError::Parse(format!("bad number {s:?}: {e}")))
            };
            let tau = parse(fields[1])?;
            let u = parse(fields[2])?;
            let delta = fields[3].trim() == "1";
            let x = DVector::from_iterator(
                dim,
                fields[4..]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<_>>>()?,
            );
            let (event_time, censor_time) = if delta {
                (u, f64::INFINITY)
            } else {
                (f64::INFINITY, u)
            };
            individuals.push(Individual::new(
                tau,
                event_time,
                censor_time,
                CovariatePath::Constant(x),
            )?);
        }
        Ok(Cohort {
            individuals,
            dim,
            theta_star: None,
        })
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Cohort> {
        Cohort::read_csv(std::fs::File::open(path)?)
    }
}

/// Simulates a cohort under the exponential hazard model: covariates standard
/// normal (with an optional intercept column), and latent event/censoring
/// durations independent exponentials of rate `exp(theta_star^T x)` past the
/// arrival time. Deterministic given the seed.
pub fn simulate_cohort(config: &SimulationConfig) -> Result<Cohort> {
    simulate_cohort_stream(config, 0)
}

/// Same as [`simulate_cohort`] but drawing from the given RNG substream, so
/// replications can reuse one config with independent streams.
pub fn simulate_cohort_stream(config: &SimulationConfig, stream: u64) -> Result<Cohort> {
    config.validate()?;
    let mut rng = substream(config.seed, stream);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let theta_star = match &config.theta_star {
        Some(theta) => theta.clone(),
        None => DVector::from_fn(config.dim, |_, _| std_normal.sample(&mut rng)),
    };

    let horizon = config.horizon as f64;
    let arrivals: Vec<f64> = match config.arrival_model {
        ArrivalModel::Uniform => {
            let unif = Uniform::new(0.0, horizon)
                .map_err(|e| SurvError::InvalidConfig(e.to_string()))?;
            (0..config.n_individuals).map(|_| unif.sample(&mut rng)).collect()
        }
        ArrivalModel::Poisson(lambda) => {
            let inter = Exp::new(lambda).expect("positive intensity");
            let mut times = Vec::new();
            let mut t = inter.sample(&mut rng);
            while t <= horizon {
                times.push(t);
                t += inter.sample(&mut rng);
            }
            times
        }
    };

    let mut individuals = Vec::with_capacity(arrivals.len());
    for tau in arrivals {
        let x = if config.intercept {
            let mut v = DVector::zeros(config.dim);
            v[0] = 1.0;
            for j in 1..config.dim {
                v[j] = std_normal.sample(&mut rng);
            }
            v
        } else {
            DVector::from_fn(config.dim, |_, _| std_normal.sample(&mut rng))
        };
        let lin = theta_star.dot(&x);
        if lin.abs() > 700.0 {
            return Err(SurvError::LinearPredictorOverflow(lin.abs()));
        }
        let rate = lin.exp();
        let exp = Exp::new(rate).map_err(|e| SurvError::Numerical(e.to_string()))?;
        let event_time = tau + exp.sample(&mut rng);
        let censor_time = tau + exp.sample(&mut rng);
        individuals.push(Individual::new(
            tau,
            event_time,
            censor_time,
            CovariatePath::Constant(x),
        )?);
    }

    Ok(Cohort {
        individuals,
        dim: config.dim,
        theta_star: Some(theta_star),
    })
}

// Suppress unused-import warning until generic Rng methods are needed.
#[allow(unused)]
fn _rng_bound<R: Rng>(_r: &mut R) {}
