//! Command-line benchmark harness.
//!
//! Subcommands: `simulate` (write a cohort CSV), `run` (one algorithm),
//! `bench` (all algorithms, comparator, figures), `bounds` (regret-bound
//! curves or stochastic constants), `pilot-g` (gradient-bound estimation).
//!
//! Flags can also be supplied through a flat `key=value` config file; command
//! line flags override file entries. Exit codes: 0 success, 2 invalid
//! configuration, 3 numerical failure.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use survons::bench::{
    build_grid, estimate_g_pilot, run_best_ons_comparator, run_experiment_multi, write_averaged_csv,
    write_bound_curves_csv, write_trace_csv, Algorithm, BoundOptions, DomainRule, ExperimentResult,
    FigureInputs, GridKind, GridSpec, RunConfig, DEFAULT_K, DESK_DIM, DESK_HORIZON,
    DESK_INDIVIDUALS, DESK_REPS, PAPER_HORIZON, PAPER_INDIVIDUALS, PAPER_REPS,
};
use survons::bounds::{
    corollary_bound, stochastic_regret_bound, theoretical_g, GammaTrace, StochasticConstants,
};
use survons::cohort::{simulate_cohort, ArrivalModel, SimulationConfig};
use survons::{Result, SurvError};

#[derive(Parser, Debug)]
#[command(name = "survons", version, about = "Online second-order survival benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Flat key=value file mirroring the flags; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Horizon (number of rounds).
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    individuals: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Learning-rate grid: `g1`, `g2`, or a file with one rate per line.
    #[arg(long, global = true)]
    grid: Option<String>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long = "gamma-floor", global = true)]
    gamma_floor: Option<f64>,
    /// Full-scale protocol sizes (N=10000, n=1000, R=100).
    #[arg(long = "paper-scale", global = true)]
    paper_scale: bool,
    /// Drop dimension and log factors from the bound-order curves.
    #[arg(long = "bare-order", global = true)]
    bare_order: bool,
    /// Use the literal running sum of the constants instead of their mean.
    #[arg(long = "sum-gamma", global = true)]
    sum_gamma: bool,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// For `run`: survons | boa-ons | ogd | ons.
    #[arg(long, global = true)]
    algorithm: Option<String>,
    #[arg(long = "pilot-reps", global = true)]
    pilot_reps: Option<usize>,
    /// Gradient bound; estimated by a pilot run when absent.
    #[arg(long = "g-bound", global = true)]
    g_bound: Option<f64>,
    /// Explicit domain radius; default is 1.1 times the generating norm.
    #[arg(long = "d-radius", global = true)]
    d_radius: Option<f64>,
    /// Poisson arrival intensity; default is uniform arrivals.
    #[arg(long, global = true)]
    poisson: Option<f64>,
    /// Arrival intensity for the stochastic constants.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Design constant for the stochastic bounds.
    #[arg(long = "a-const", global = true)]
    a_const: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long = "x-inf", global = true)]
    x_inf: Option<f64>,
    /// Previously emitted trace CSV for the `bounds` subcommand.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate a cohort and write it as CSV.
    Simulate,
    /// Run one algorithm over all replications.
    Run,
    /// Run every algorithm plus the best-in-grid comparator, emit figures.
    Bench,
    /// Emit regret-bound curves from a trace, or stochastic-bound curves
    /// from constants.
    Bounds,
    /// Estimate the gradient bound with pilot replications.
    PilotG,
}

/// All knobs after merging the config file and the flags.
struct Settings {
    seed: u64,
    n: usize,
    individuals: usize,
    dim: usize,
    reps: usize,
    grid: String,
    k: usize,
    gamma_floor: Option<f64>,
    bare_order: bool,
    sum_gamma: bool,
    out: PathBuf,
    algorithm: String,
    pilot_reps: usize,
    g_bound: Option<f64>,
    d_radius: Option<f64>,
    poisson: Option<f64>,
    lambda: f64,
    a_const: f64,
    rho: f64,
    x_inf: f64,
    trace: Option<PathBuf>,
}

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            SurvError::InvalidConfig(format!(
                "config line {} is not key=value: {line:?}",
                i + 1
            ))
        })?;
        map.insert(key.trim().replace('-', "_"), value.trim().to_string());
    }
    Ok(map)
}

fn file_get<T: std::str::FromStr>(map: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            SurvError::InvalidConfig(format!("config key {key} has invalid value {raw:?}"))
        }),
    }
}

fn resolve(cli: &Cli) -> Result<Settings> {
    let file = match &cli.config {
        Some(p) => parse_config_file(p)?,
        None => HashMap::new(),
    };
    let paper = cli.paper_scale || file_get::<bool>(&file, "paper_scale")?.unwrap_or(false);
    let pick_flag = |flag: bool, key: &str| -> Result<bool> {
        Ok(flag || file_get::<bool>(&file, key)?.unwrap_or(false))
    };
    macro_rules! pick {
        ($flag:expr, $key:literal) => {
            match &$flag {
                Some(v) => Some(v.clone()),
                None => file_get(&file, $key)?,
            }
        };
    }
    Ok(Settings {
        seed: pick!(cli.seed, "seed").unwrap_or(1),
        n: pick!(cli.n, "n").unwrap_or(if paper { PAPER_HORIZON } else { DESK_HORIZON }),
        individuals: pick!(cli.individuals, "individuals")
            .unwrap_or(if paper { PAPER_INDIVIDUALS } else { DESK_INDIVIDUALS }),
        dim: pick!(cli.dim, "dim").unwrap_or(DESK_DIM),
        reps: pick!(cli.reps, "reps").unwrap_or(if paper { PAPER_REPS } else { DESK_REPS }),
        grid: pick!(cli.grid, "grid").unwrap_or_else(|| "g2".to_string()),
        k: pick!(cli.k, "k").unwrap_or(DEFAULT_K),
        gamma_floor: pick!(cli.gamma_floor, "gamma_floor"),
        bare_order: pick_flag(cli.bare_order, "bare_order")?,
        sum_gamma: pick_flag(cli.sum_gamma, "sum_gamma")?,
        out: pick!(cli.out, "out").unwrap_or_else(|| PathBuf::from("out")),
        algorithm: pick!(cli.algorithm, "algorithm").unwrap_or_else(|| "survons".to_string()),
        pilot_reps: pick!(cli.pilot_reps, "pilot_reps").unwrap_or(3),
        g_bound: pick!(cli.g_bound, "g_bound"),
        d_radius: pick!(cli.d_radius, "d_radius"),
        poisson: pick!(cli.poisson, "poisson"),
        lambda: pick!(cli.lambda, "lambda").unwrap_or(2.0),
        a_const: pick!(cli.a_const, "a_const").unwrap_or(0.1),
        rho: pick!(cli.rho, "rho").unwrap_or(0.05),
        x_inf: pick!(cli.x_inf, "x_inf").unwrap_or(1.0),
        trace: pick!(cli.trace, "trace"),
    })
}

impl Settings {
    fn sim_config(&self) -> SimulationConfig {
        SimulationConfig {
            n_individuals: self.individuals,
            horizon: self.n,
            dim: self.dim,
            seed: self.seed,
            arrival_model: match self.poisson {
                Some(lambda) => ArrivalModel::Poisson(lambda),
                None => ArrivalModel::Uniform,
            },
            theta_star: None,
            intercept: self.dim >= 2,
        }
    }

    fn grid_kind(&self) -> Result<GridKind> {
        match self.grid.as_str() {
            "g1" => Ok(GridKind::G1),
            "g2" => Ok(GridKind::G2),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    SurvError::InvalidConfig(format!(
                        "grid must be g1, g2 or a readable file; {path:?}: {e}"
                    ))
                })?;
                let values = text
                    .split_whitespace()
                    .map(|s| {
                        s.parse::<f64>().map_err(|e| {
                            SurvError::InvalidConfig(format!("bad grid value {s:?}: {e}"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(GridKind::Explicit(values))
            }
        }
    }

    fn run_config(&self, g_bound: f64) -> Result<RunConfig> {
        Ok(RunConfig {
            sim: self.sim_config(),
            algorithm: Algorithm::SurvOns,
            grid_kind: self.grid_kind()?,
            k: self.k,
            g_bound,
            reps: self.reps,
            domain_rule: match self.d_radius {
                Some(d) => DomainRule::Explicit(d),
                None => DomainRule::ScaledTruth,
            },
            gamma_floor: self.gamma_floor,
        })
    }

    fn resolve_g(&self) -> Result<f64> {
        if let Some(g) = self.g_bound {
            return Ok(g);
        }
        let config = self.run_config(1.0)?;
        let pilot = estimate_g_pilot(&config, self.pilot_reps)?;
        eprintln!(
            "pilot gradient bound: G = {:.6} (per replication: {:?})",
            pilot.g, pilot.per_rep
        );
        if pilot.g <= 0.0 {
            return Err(SurvError::Numerical(
                "pilot estimation produced a zero gradient bound".into(),
            ));
        }
        Ok(pilot.g)
    }

    fn bound_opts(&self) -> BoundOptions {
        BoundOptions { bare: self.bare_order, sum_gamma: self.sum_gamma }
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn save_result(result: &ExperimentResult, label: &str, out: &Path) -> Result<()> {
    for trace in &result.traces {
        let path = out.join(format!("{label}_rep{}.csv", trace.stream));
        let f = std::fs::File::create(path)?;
        write_trace_csv(trace, std::io::BufWriter::new(f))?;
    }
    let f = std::fs::File::create(out.join(format!("{label}_averaged.csv")))?;
    write_averaged_csv(&result.averaged, std::io::BufWriter::new(f))
}

fn cmd_simulate(s: &Settings) -> Result<()> {
    let cohort = simulate_cohort(&s.sim_config())?;
    std::fs::create_dir_all(&s.out)?;
    let path = s.out.join("cohort.csv");
    cohort.save_csv(&path)?;
    println!(
        "wrote {} ({} individuals, dim {})",
        path.display(),
        cohort.individuals.len(),
        cohort.dim
    );
    Ok(())
}

fn cmd_pilot_g(s: &Settings) -> Result<()> {
    let config = s.run_config(1.0)?;
    let pilot = estimate_g_pilot(&config, s.pilot_reps)?;
    println!("G = {}", fmt17(pilot.g));
    for (i, g) in pilot.per_rep.iter().enumerate() {
        println!("pilot_rep_{i} = {}", fmt17(*g));
    }
    Ok(())
}

fn parse_algorithm(name: &str) -> Result<Algorithm> {
    match name {
        "survons" => Ok(Algorithm::SurvOns),
        "boa-ons" => Ok(Algorithm::BoaOns),
        "ogd" => Ok(Algorithm::Ogd),
        // Plain ONS at the middle grid rate.
        "ons" => Ok(Algorithm::OnsIndex(DEFAULT_K / 2)),
        other => Err(SurvError::InvalidConfig(format!(
            "unknown algorithm {other:?}; use survons, boa-ons, ogd or ons"
        ))),
    }
}

fn cmd_run(s: &Settings) -> Result<()> {
    let g = s.resolve_g()?;
    let mut config = s.run_config(g)?;
    config.algorithm = parse_algorithm(&s.algorithm)?;
    if let Algorithm::OnsIndex(i) = config.algorithm {
        config.algorithm = Algorithm::OnsIndex(i.min(config.k - 1));
    }
    let result =
        run_experiment_multi(&config, std::slice::from_ref(&config.algorithm))?.remove(0);
    std::fs::create_dir_all(&s.out)?;
    save_result(&result, &s.algorithm, &s.out)?;
    println!(
        "{}: {} replications, mean final cumulative loss difference {}",
        s.algorithm,
        config.reps,
        fmt17(result.averaged.cum_nll_diff.last().copied().unwrap_or(0.0))
    );
    Ok(())
}

fn cmd_bench(s: &Settings) -> Result<()> {
    let g = s.resolve_g()?;
    std::fs::create_dir_all(&s.out)?;
    let config = s.run_config(g)?;

    let mut results: Vec<(String, ExperimentResult)> = Vec::new();
    let multi =
        run_experiment_multi(&config, &[Algorithm::SurvOns, Algorithm::BoaOns, Algorithm::Ogd])?;
    let grid_label = match &config.grid_kind {
        GridKind::G1 => "g1",
        GridKind::G2 => "g2",
        GridKind::Explicit(_) => "explicit",
    };
    let mut iter = multi.into_iter();
    results.push((format!("survons-{grid_label}"), iter.next().unwrap()));
    results.push(("boa-ons".into(), iter.next().unwrap()));
    results.push(("ogd".into(), iter.next().unwrap()));

    // The aggregated algorithm on the other standard grid, when feasible.
    let other_kind = match &config.grid_kind {
        GridKind::G1 => Some((GridKind::G2, "survons-g2")),
        GridKind::G2 => Some((GridKind::G1, "survons-g1")),
        GridKind::Explicit(_) => None,
    };
    if let Some((kind, label)) = other_kind {
        let mut other = config.clone();
        other.grid_kind = kind.clone();
        let feasible = build_grid(&GridSpec {
            kind,
            k: other.k,
            g: other.g_bound,
            big_d: 1.0, // feasibility of the endpoints is probed per replication below
            n: other.sim.horizon,
        });
        match feasible.and_then(|_| run_experiment_multi(&other, &[Algorithm::SurvOns])) {
            Ok(mut r) => results.push((label.into(), r.remove(0))),
            Err(e) => eprintln!("skipping {label}: {e}"),
        }
    }

    let comparator = run_best_ons_comparator(&config)?;
    results.push(("ons-best".into(), comparator));

    for (label, result) in &results {
        save_result(result, label, &s.out)?;
    }

    // Bound curves from the first aggregated replication.
    let lead = &results[0].1.traces[0];
    let gamma_trace = lead.gamma_trace();
    {
        let f = std::fs::File::create(s.out.join("bound_curves.csv"))?;
        write_bound_curves_csv(
            &gamma_trace,
            s.n,
            s.dim,
            g,
            lead.d_radius,
            s.bound_opts(),
            std::io::BufWriter::new(f),
        )?;
    }

    let gammas: Vec<(String, Vec<f64>)> = results
        .iter()
        .filter(|(label, _)| label.starts_with("survons"))
        .map(|(label, r)| {
            let samples =
                r.traces.iter().flat_map(|t| t.rows.iter().filter_map(|row| row.gamma_t)).collect();
            (label.clone(), samples)
        })
        .collect();
    let inputs = FigureInputs {
        curves: results.iter().map(|(l, r)| (l.clone(), &r.averaged)).collect(),
        gammas,
        bounds: Some((gamma_trace, s.n, s.dim, g, lead.d_radius)),
        bound_opts: s.bound_opts(),
    };
    let figures = survons::bench::emit_figures(&inputs, &s.out)?;

    let mut meta = std::fs::File::create(s.out.join("metadata.txt"))?;
    writeln!(meta, "seed = {}", s.seed)?;
    writeln!(meta, "n = {}", s.n)?;
    writeln!(meta, "individuals = {}", s.individuals)?;
    writeln!(meta, "dim = {}", s.dim)?;
    writeln!(meta, "reps = {}", s.reps)?;
    writeln!(meta, "grid = {} (k = {})", s.grid, s.k)?;
    writeln!(meta, "g_bound = {}", fmt17(g))?;
    writeln!(
        meta,
        "note: the ons-best comparator picks the best rate per replication after \
         the fact, which overestimates the performance a single pre-committed \
         rate could achieve"
    )?;

    println!("wrote {} result sets and {} figures to {}", results.len(), figures.len(), s.out.display());
    Ok(())
}

fn cmd_bounds(s: &Settings) -> Result<()> {
    std::fs::create_dir_all(&s.out)?;
    if let Some(trace_path) = &s.trace {
        let f = std::fs::File::open(trace_path)?;
        let rows = survons::bench::read_trace_csv(f)?;
        if rows.is_empty() {
            return Err(SurvError::InvalidConfig("trace file has no rows".into()));
        }
        let g = s.g_bound.unwrap_or(1.0);
        let d = s.d_radius.unwrap_or(1.0);
        let kind = s.grid_kind()?;
        let (grid, _) = build_grid(&GridSpec { kind, k: s.k, g, big_d: d, n: rows.len() })?;
        let trace = GammaTrace { gammas: rows.iter().map(|r| r.gamma_t).collect(), grid };
        let out = s.out.join("bound_curves.csv");
        let f = std::fs::File::create(&out)?;
        write_bound_curves_csv(
            &trace,
            rows.len(),
            s.dim,
            g,
            d,
            s.bound_opts(),
            std::io::BufWriter::new(f),
        )?;
        println!("wrote {}", out.display());
        return Ok(());
    }

    // Constants mode: stochastic-setting curves.
    let mut sc = StochasticConstants {
        lambda: s.lambda,
        a: s.a_const,
        big_d: s.d_radius.unwrap_or(1.0),
        x_inf: s.x_inf,
        dim: s.dim,
        rho: s.rho,
        g: s.g_bound.unwrap_or(1.0),
    };
    let g_theory = theoretical_g(&sc)?;
    if s.g_bound.is_none() {
        sc.g = g_theory;
    }
    println!("theoretical_G = {}", fmt17(g_theory));
    println!("mu = {}", fmt17(sc.mu()));
    let out = s.out.join("stochastic_bounds.csv");
    let f = std::fs::File::create(&out)?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "n,stochastic_regret_bound,corollary_bound")?;
    for n in 1..=s.n {
        writeln!(
            w,
            "{n},{},{}",
            fmt17(stochastic_regret_bound(&sc, n)?),
            fmt17(corollary_bound(&sc, n)?)
        )?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let settings = resolve(cli)?;
    match cli.cmd {
        Cmd::Simulate => cmd_simulate(&settings),
        Cmd::Run => cmd_run(&settings),
        Cmd::Bench => cmd_bench(&settings),
        Cmd::Bounds => cmd_bounds(&settings),
        Cmd::PilotG => cmd_pilot_g(&settings),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        let code = match e {
            SurvError::InvalidConfig(_)
            | SurvError::DimensionMismatch { .. }
            | SurvError::Parse(_) => 2,
            _ => 3,
        };
        std::process::exit(code);
    }
}
