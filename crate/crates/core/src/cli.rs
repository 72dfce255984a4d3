//! Command-line driver: parse map/potential specs, dispatch subcommands,
//! emit machine-readable reports.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::backward::{self, PruningPolicy};
use crate::complexdyn::{
    complex_periodic_pressure, complex_preimage_pressure, julia_certify, julia_sample,
    ComplexPotential, ComplexQuadratic,
};
use crate::config::{parse_map_spec, parse_potential_spec};
use crate::error::Error;
use crate::ldp::{
    deviation_decay, legendre_rate, pressure_consensus, project_level2, scgf, weakstar_check,
    Equilibrium, Level2Source, RateProfile, ScgfCurve, ScgfMethod, ScgfOptions,
};
use crate::maps::PiecewiseMap;
use crate::numerics::linspace;
use crate::periodic::{log_partition_over, periodic_points};
use crate::potentials::{hyperbolicity_margin, sharpen, Potential};
use crate::pressure::{cross_validate, estimate, Method, Schedule};
use crate::report::{
    complex_csv, csv_table, periodic_records, spectral_csv, tree_records, Report,
};
use crate::transfer::{
    build_discretization, conformal_residual, default_growth_grid, duality_residual,
    leading_eigen, normalized_growth_check,
};
use crate::Result;

#[derive(Parser, Debug)]
#[command(name = "ruelle", version, about = "Pressure, equilibrium states, and large-deviation rate functions for one-dimensional maps")]
pub struct Cli {
    /// Worker threads (0 = all cores). The count never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// RNG seed echoed into every report.
    #[arg(long, global = true, default_value_t = 20260809)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Serialize)]
pub struct MapPotArgs {
    /// Built-in map name or a .toml descriptor path.
    #[arg(long)]
    pub map: String,
    /// Inline potential spec (const:, affine:, branch:, cosine:).
    #[arg(long, default_value = "const:0")]
    pub potential: String,
}

impl MapPotArgs {
    fn build(&self) -> Result<(PiecewiseMap, Potential)> {
        Ok((parse_map_spec(&self.map)?, parse_potential_spec(&self.potential)?))
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cross-validate the pressure estimators.
    Pressure(PressureArgs),
    /// Iterated preimage tree and its partition function.
    Preimages(PreimagesArgs),
    /// Enumerate Per_n and its partition function.
    Periodic(PeriodicArgs),
    /// Transfer-operator discretization: spectrum, eigenvectors, growth.
    Ulam(UlamArgs),
    /// Scaled cumulant generating function of an observable.
    Scgf(ScgfArgs),
    /// Legendre-transform rate function of an observable.
    Rate(RateArgs),
    /// Deviation-decay slopes and weak* convergence of the three sources.
    LdpCheck(LdpCheckArgs),
    /// Pullback-diameter decay diagnostic.
    Shrinking(ShrinkingArgs),
    /// Conformal-measure and duality residuals of the discretization.
    ConformalCheck(ConformalCheckArgs),
    /// Hyperbolicity margin with the averaging-window search.
    HyperbolicCheck(HyperbolicCheckArgs),
    /// Pressure estimators on quadratic Julia sets.
    ComplexPressure(ComplexPressureArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct PressureArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    /// Estimators to run (preimage, periodic, spectral).
    #[arg(long = "method", value_delimiter = ',', default_values = ["preimage", "periodic", "spectral"])]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 14)]
    pub n_max: usize,
    #[arg(long, default_value_t = 4)]
    pub n_min: usize,
    #[arg(long, default_value_t = 12)]
    pub periodic_n_max: usize,
    #[arg(long, default_value_t = 2)]
    pub periodic_n_min: usize,
    /// Largest spectral resolution; the ladder is m/4, m/2, m.
    #[arg(long, default_value_t = 1024)]
    pub m: usize,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct PreimagesArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// none or threshold:DELTA.
    #[arg(long, default_value = "none")]
    pub policy: String,
    #[arg(long, default_value_t = backward::DEFAULT_NODE_BUDGET)]
    pub budget: usize,
    /// Write line-delimited records (word point log_weight) here.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct PeriodicArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    #[arg(long, default_value_t = 12)]
    pub n_max: usize,
    /// Write records (word point log_weight multiplier) at n_max here.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct UlamArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    #[arg(long, default_value_t = 1024)]
    pub m: usize,
    /// Also evaluate the normalized-iterate growth profile to this depth.
    #[arg(long)]
    pub growth_n_max: Option<usize>,
    /// Write the eigenvector table (midpoint, density, conformal) here.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ScgfArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    /// Observable spec, same syntax as --potential.
    #[arg(long)]
    pub observable: String,
    #[arg(long, default_value_t = -2.0)]
    pub t_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 41)]
    pub t_count: usize,
    /// pressure-difference, monte-carlo, or both.
    #[arg(long, default_value = "both")]
    pub method: String,
    #[arg(long, default_value_t = 30)]
    pub mc_n: usize,
    #[arg(long, default_value_t = 10_000)]
    pub mc_trials: usize,
    /// Equilibrium resolution for the Monte Carlo sampler.
    #[arg(long, default_value_t = 1024)]
    pub mc_m: usize,
    #[arg(long)]
    pub x0: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct RateArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    #[arg(long)]
    pub observable: String,
    #[arg(long, default_value_t = -4.0)]
    pub t_min: f64,
    #[arg(long, default_value_t = 4.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 81)]
    pub t_count: usize,
    /// Default: the observable's sampled range, shrunk 5% per side.
    #[arg(long)]
    pub s_min: Option<f64>,
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long, default_value_t = 81)]
    pub s_count: usize,
    #[arg(long)]
    pub x0: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct LdpCheckArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    #[arg(long)]
    pub observable: String,
    #[arg(long, default_value_t = 0.7)]
    pub s0: f64,
    #[arg(long, default_value_t = 200)]
    pub n_max: usize,
    #[arg(long, default_value_t = 20)]
    pub n_min: usize,
    /// Sources for the weak* table (deviation slopes skip birkhoff).
    #[arg(long, value_delimiter = ',', default_values = ["preimages", "periodic", "birkhoff"])]
    pub sources: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 15, 20])]
    pub weakstar_n: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1024)]
    pub m: usize,
    #[arg(long)]
    pub x0: Option<f64>,
    /// Agreement threshold between the decay slope and -I(s0).
    #[arg(long, default_value_t = 1e-2)]
    pub rate_tolerance: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct ShrinkingArgs {
    /// Built-in map name or a .toml descriptor path.
    #[arg(long)]
    pub map: String,
    #[arg(long, default_value_t = 0.05)]
    pub rho0: f64,
    #[arg(long, default_value_t = 9)]
    pub centers: usize,
    #[arg(long, default_value_t = 15)]
    pub n_max: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct ConformalCheckArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    #[arg(long, default_value_t = 1024)]
    pub m: usize,
    /// Number of seeded random test cells.
    #[arg(long, default_value_t = 16)]
    pub cells: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct HyperbolicCheckArgs {
    #[command(flatten)]
    pub mappot: MapPotArgs,
    #[arg(long, default_value_t = 12)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
    /// Search the averaging window N in 1..=this for a positive margin.
    #[arg(long, default_value_t = 8)]
    pub sharpen_max: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct ComplexPressureArgs {
    /// Parameter c as re,im.
    #[arg(long, default_value = "0,0")]
    pub c: String,
    /// Tree root as re,im.
    #[arg(long, default_value = "1.1,0.37")]
    pub z0: String,
    /// const:C, re, or im.
    #[arg(long, default_value = "const:0")]
    pub potential: String,
    #[arg(long, default_value_t = 18)]
    pub n_max: usize,
    #[arg(long, default_value_t = 4)]
    pub n_min: usize,
    #[arg(long, default_value_t = 8)]
    pub periodic_n_max: usize,
    #[arg(long, default_value_t = 3)]
    pub periodic_n_min: usize,
    /// Also draw this many Julia-set samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Forward-orbit horizon for the sample escape certification.
    #[arg(long, default_value_t = 30)]
    pub certify_horizon: usize,
    /// Write samples (re, im, log_weight) here.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "preimage" => Ok(Method::PreimageSum),
            "periodic" => Ok(Method::PeriodicSum),
            "spectral" => Ok(Method::Spectral),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        })
        .collect()
}

fn parse_complex(spec: &str) -> Result<num_complex::Complex64> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("complex spec '{spec}' must be re,im")));
    }
    let re = parts[0].trim().parse::<f64>().map_err(|_| Error::Config(format!("bad re in '{spec}'")))?;
    let im = parts[1].trim().parse::<f64>().map_err(|_| Error::Config(format!("bad im in '{spec}'")))?;
    Ok(num_complex::Complex64::new(re, im))
}

fn parse_complex_potential(spec: &str) -> Result<ComplexPotential> {
    match spec {
        "re" => Ok(ComplexPotential::Re),
        "im" => Ok(ComplexPotential::Im),
        s if s.starts_with("const:") => {
            let v = s[6..]
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad complex potential '{s}'")))?;
            Ok(ComplexPotential::Constant(v))
        }
        other => Err(Error::Config(format!("unknown complex potential '{other}'"))),
    }
}

fn parse_policy(spec: &str) -> Result<PruningPolicy> {
    if spec == "none" {
        return Ok(PruningPolicy::None);
    }
    if let Some(d) = spec.strip_prefix("threshold:") {
        let delta = d
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad pruning threshold '{spec}'")))?;
        return Ok(PruningPolicy::Threshold { delta });
    }
    Err(Error::Config(format!("unknown pruning policy '{spec}'")))
}

fn schedule_from(
    n_min: usize,
    n_max: usize,
    per_min: usize,
    per_max: usize,
    m: usize,
    x0: Option<f64>,
) -> Schedule {
    Schedule {
        preimage_n: (n_min, n_max),
        periodic_n: (per_min, per_max),
        spectral_m: vec![(m / 4).max(16), (m / 2).max(16), m.max(16)],
        x0,
        node_budget: backward::DEFAULT_NODE_BUDGET,
    }
}

fn write_artifact(path: &PathBuf, content: &str) -> Result<()> {
    std::fs::write(path, content)?;
    Ok(())
}

/// Dispatch one parsed invocation; returns the results value and an
/// optional CSV rendering for --format csv.
fn dispatch(cli: &Cli) -> Result<(serde_json::Value, Option<String>, serde_json::Value)> {
    match &cli.command {
        Command::Pressure(args) => {
            let (map, phi) = args.mappot.build()?;
            let methods = parse_methods(&args.methods)?;
            let sched = schedule_from(
                args.n_min,
                args.n_max,
                args.periodic_n_min,
                args.periodic_n_max,
                args.m,
                args.x0,
            );
            let results = if methods.len() == 1 {
                let est = estimate(&map, &phi, methods[0], &sched)?;
                json!({
                    "estimates": [est],
                    "consensus": est.extrapolated,
                    "max_pairwise_difference": 0.0,
                    "verdict": true,
                })
            } else {
                serde_json::to_value(cross_validate(&map, &phi, &methods, &sched, args.tolerance)?)
                    .unwrap()
            };
            let csv = results["estimates"].as_array().map(|ests| {
                let mut rows = Vec::new();
                for (mi, est) in ests.iter().enumerate() {
                    for pair in est["iterates"].as_array().unwrap() {
                        rows.push(vec![
                            mi as f64,
                            pair[0].as_f64().unwrap(),
                            pair[1].as_f64().unwrap(),
                        ]);
                    }
                }
                csv_table(&["method_index", "n_or_m", "value"], &rows)
            });
            Ok((serde_json::to_value(args).unwrap(), csv, results))
        }
        Command::Preimages(args) => {
            let (map, phi) = args.mappot.build()?;
            let x0 = args.x0.unwrap_or(map.domain.lo + map.domain.len() / 3.0);
            let policy = parse_policy(&args.policy)?;
            let tree = backward::backward_orbit_with_budget(
                &map, &phi, x0, args.n, policy, args.budget,
            )?;
            let log_z = backward::log_partition_preimage(&tree)?;
            if let Some(path) = &args.export {
                write_artifact(path, &tree_records(&tree))?;
            }
            let results = json!({
                "x0": x0,
                "n": args.n,
                "nodes": tree.nodes.len(),
                "log_partition": log_z,
                "pressure_iterate": log_z / args.n as f64,
                "pruning": tree.pruning,
                "x0_on_critical_orbit": map.on_critical_orbit(x0, 64, 1e-12),
            });
            Ok((serde_json::to_value(args).unwrap(), None, results))
        }
        Command::Periodic(args) => {
            let (map, phi) = args.mappot.build()?;
            let mut counts = Vec::new();
            let mut last = None;
            for n in 1..=args.n_max {
                let set = periodic_points(&map, n)?;
                let log_z = if set.points.is_empty() {
                    None
                } else {
                    Some(log_partition_over(&map, &phi, &set)?)
                };
                counts.push(json!({
                    "n": n,
                    "count": set.points.len(),
                    "full_shift_defect": set.full_shift_defect,
                    "neutral": set.neutral_count(),
                    "log_partition": log_z,
                    "pressure_iterate": log_z.map(|z| z / n as f64),
                }));
                last = Some(set);
            }
            if let (Some(path), Some(set)) = (&args.export, &last) {
                write_artifact(path, &periodic_records(&map, &phi, set)?)?;
            }
            let csv = Some(csv_table(
                &["n", "count", "pressure_iterate"],
                &counts
                    .iter()
                    .map(|c| {
                        vec![
                            c["n"].as_u64().unwrap() as f64,
                            c["count"].as_u64().unwrap() as f64,
                            c["pressure_iterate"].as_f64().unwrap_or(f64::NAN),
                        ]
                    })
                    .collect::<Vec<_>>(),
            ));
            Ok((serde_json::to_value(args).unwrap(), csv, json!({ "per_n": counts })))
        }
        Command::Ulam(args) => {
            let (map, phi) = args.mappot.build()?;
            let disc = build_discretization(&map, &phi, args.m)?;
            let spectral = leading_eigen(&disc)?;
            if let Some(path) = &args.export {
                write_artifact(path, &spectral_csv(&disc, &spectral))?;
            }
            let growth = match args.growth_n_max {
                Some(n_max) => {
                    let grid = default_growth_grid(&map);
                    Some(normalized_growth_check(
                        &map,
                        &phi,
                        spectral.pressure_spectral,
                        n_max,
                        &grid,
                    )?)
                }
                None => None,
            };
            let csv = Some(spectral_csv(&disc, &spectral));
            let results = json!({
                "m": args.m,
                "lambda": spectral.lambda,
                "pressure_spectral": spectral.pressure_spectral,
                "residual": spectral.residual,
                "power_iterations": spectral.power_iterations,
                "cover_connected": disc.cover_connected,
                "growth": growth,
            });
            Ok((serde_json::to_value(args).unwrap(), csv, results))
        }
        Command::Scgf(args) => {
            let (map, phi) = args.mappot.build()?;
            let psi = parse_potential_spec(&args.observable)?;
            let t_grid = linspace(args.t_min, args.t_max, args.t_count);
            let opts = ScgfOptions {
                schedule: schedule_from(4, 14, 2, 12, 1024, args.x0),
                mc_n: args.mc_n,
                mc_trials: args.mc_trials,
                seed: cli.seed,
                ..Default::default()
            };
            let mut pd: Option<ScgfCurve> = None;
            let mut mc: Option<ScgfCurve> = None;
            if args.method == "pressure-difference" || args.method == "both" {
                pd = Some(scgf(
                    &map,
                    &phi,
                    &psi,
                    &t_grid,
                    ScgfMethod::PressureDifference,
                    &opts,
                    None,
                )?);
            }
            if args.method == "monte-carlo" || args.method == "both" {
                let (disc, spectral) = crate::ldp::solve_equilibrium(&map, &phi, args.mc_m)?;
                let eq = Equilibrium { disc: &disc, spectral: &spectral };
                mc = Some(scgf(&map, &phi, &psi, &t_grid, ScgfMethod::MonteCarlo, &opts, Some(&eq))?);
            }
            let csv = {
                let mut header = vec!["t"];
                if pd.is_some() {
                    header.push("lambda_pressure_difference");
                }
                if mc.is_some() {
                    header.push("lambda_monte_carlo");
                }
                let rows: Vec<Vec<f64>> = t_grid
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        let mut row = vec![t];
                        if let Some(c) = &pd {
                            row.push(c.lambda[i]);
                        }
                        if let Some(c) = &mc {
                            row.push(c.lambda[i]);
                        }
                        row
                    })
                    .collect();
                Some(csv_table(&header, &rows))
            };
            let max_gap = match (&pd, &mc) {
                (Some(a), Some(b)) => Some(
                    a.lambda
                        .iter()
                        .zip(&b.lambda)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0_f64, f64::max),
                ),
                _ => None,
            };
            let results = json!({
                "pressure_difference": pd,
                "monte_carlo": mc,
                "max_method_gap": max_gap,
            });
            Ok((serde_json::to_value(args).unwrap(), csv, results))
        }
        Command::Rate(args) => {
            let (map, phi) = args.mappot.build()?;
            let psi = parse_potential_spec(&args.observable)?;
            let t_grid = linspace(args.t_min, args.t_max, args.t_count);
            let opts = ScgfOptions {
                schedule: schedule_from(4, 14, 2, 12, 1024, args.x0),
                seed: cli.seed,
                ..Default::default()
            };
            let curve =
                scgf(&map, &phi, &psi, &t_grid, ScgfMethod::PressureDifference, &opts, None)?;
            let (range_lo, range_hi) = psi.sampled_range(&map, 4096);
            let pad = 0.05 * (range_hi - range_lo).max(1e-9);
            let s_lo = args.s_min.unwrap_or(range_lo + pad);
            let s_hi = args.s_max.unwrap_or(range_hi - pad);
            let s_grid = linspace(s_lo, s_hi, args.s_count);
            let profile: RateProfile = legendre_rate(&curve, &s_grid)?;
            let csv = Some(csv_table(
                &["s", "rate"],
                &s_grid
                    .iter()
                    .zip(&profile.values)
                    .map(|(&s, &v)| vec![s, v])
                    .collect::<Vec<_>>(),
            ));
            let results = json!({ "scgf": curve, "profile": profile });
            Ok((serde_json::to_value(args).unwrap(), csv, results))
        }
        Command::LdpCheck(args) => {
            let (mut map, phi) = args.mappot.build()?;
            let psi = parse_potential_spec(&args.observable)?;
            // the weak* table may enumerate periodic points beyond the
            // default cap; raise it to cover the requested depths
            let deepest = args.weakstar_n.iter().max().copied().unwrap_or(0);
            if deepest > map.periodic_depth_cap {
                map = map.with_periodic_cap(deepest);
            }
            let x0 = args.x0.unwrap_or(map.domain.lo + map.domain.len() / 3.0);
            // reference rate at s0 from the Legendre profile
            let opts = ScgfOptions {
                schedule: schedule_from(4, 14, 2, 12, 1024, Some(x0)),
                seed: cli.seed,
                ..Default::default()
            };
            let t_grid = linspace(-4.0, 4.0, 81);
            let curve =
                scgf(&map, &phi, &psi, &t_grid, ScgfMethod::PressureDifference, &opts, None)?;
            let profile = legendre_rate(&curve, &[args.s0])?;
            let reference = -profile.values[0];
            // deviation slopes for the enumerable sources
            let mut deviations = Vec::new();
            for source in &args.sources {
                let src = match source.as_str() {
                    "preimages" => Level2Source::Preimages { x0 },
                    "periodic" => Level2Source::Periodic,
                    "birkhoff" => continue,
                    other => return Err(Error::Config(format!("unknown source '{other}'"))),
                };
                let report = deviation_decay(
                    &map,
                    &phi,
                    src,
                    &psi,
                    args.s0,
                    (args.n_min, args.n_max),
                    None,
                )?;
                let agrees = (report.slope - reference).abs() <= args.rate_tolerance;
                deviations.push(json!({
                    "report": report,
                    "reference_rate": reference,
                    "agreement": agrees,
                }));
            }
            // weak* table across the requested sources
            let (disc, spectral) = crate::ldp::solve_equilibrium(&map, &phi, args.m)?;
            let eq = Equilibrium { disc: &disc, spectral: &spectral };
            let eq_mean = eq.mean(&map, &psi);
            let mut projections = Vec::new();
            for source in &args.sources {
                for &n in &args.weakstar_n {
                    let src = match source.as_str() {
                        "preimages" => Level2Source::Preimages { x0 },
                        "periodic" => Level2Source::Periodic,
                        "birkhoff" => Level2Source::Birkhoff {
                            trials: args.trials,
                            seed: cli.seed,
                            burn_in: 100,
                        },
                        _ => unreachable!("validated above"),
                    };
                    projections.push(project_level2(&map, &phi, src, &[&psi], n, Some(&eq))?);
                }
            }
            let weakstar = weakstar_check(&projections, &[eq_mean]);
            let results = json!({
                "s0": args.s0,
                "reference_rate": reference,
                "deviation": deviations,
                "equilibrium_mean": eq_mean,
                "weakstar": weakstar,
            });
            let csv = Some(csv_table(
                &["n", "deviation"],
                &weakstar
                    .rows
                    .iter()
                    .map(|r| vec![r.n as f64, r.deviations[0]])
                    .collect::<Vec<_>>(),
            ));
            Ok((serde_json::to_value(args).unwrap(), csv, results))
        }
        Command::Shrinking(args) => {
            let map = parse_map_spec(&args.map)?;
            let pad = map.domain.len() * 0.1;
            let centers = linspace(map.domain.lo + pad, map.domain.hi - pad, args.centers);
            let report =
                backward::shrinking_diagnostic(&map, args.rho0, &centers, args.n_max)?;
            let csv = Some(csv_table(
                &["n", "max_diameter"],
                &report
                    .max_diameters
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| vec![(i + 1) as f64, d])
                    .collect::<Vec<_>>(),
            ));
            Ok((
                serde_json::to_value(args).unwrap(),
                csv,
                serde_json::to_value(&report).unwrap(),
            ))
        }
        Command::ConformalCheck(args) => {
            let (map, phi) = args.mappot.build()?;
            let disc = build_discretization(&map, &phi, args.m)?;
            let spectral = leading_eigen(&disc)?;
            // seeded cells, each inside a single branch
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cli.seed);
            let mut cells = Vec::new();
            let mut guard = 0;
            while cells.len() < args.cells && guard < 10_000 {
                guard += 1;
                let i = rng.gen_range(0..disc.m);
                let cell = disc.cell_interval(i);
                let inside_one_branch = map
                    .branches
                    .iter()
                    .any(|b| cell.lo >= b.domain.lo - 1e-12 && cell.hi <= b.domain.hi + 1e-12);
                if inside_one_branch {
                    cells.push(i);
                }
            }
            let conformal = conformal_residual(&map, &phi, &disc, &spectral, &cells)?;
            let sine = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
            let cosine = |x: f64| (std::f64::consts::PI * x).cos();
            let ones = |_: f64| 1.0;
            let duality = duality_residual(&disc, &spectral, &[&ones, &sine, &cosine]);
            let results = json!({
                "m": args.m,
                "cells": cells,
                "conformal_residual": conformal,
                "duality_residual": duality,
                "pressure_spectral": spectral.pressure_spectral,
            });
            Ok((serde_json::to_value(args).unwrap(), None, results))
        }
        Command::HyperbolicCheck(args) => {
            let (map, phi) = args.mappot.build()?;
            let sched = Schedule::default();
            let consensus = pressure_consensus(
                &map,
                &phi,
                &[Method::PreimageSum, Method::PeriodicSum, Method::Spectral],
                &sched,
            )?;
            let mut extra = Vec::new();
            for k in 1..=8.min(map.periodic_depth_cap) {
                if let Ok(set) = periodic_points(&map, k) {
                    extra.extend(set.points.iter().map(|p| p.point));
                }
            }
            let mut margins = Vec::new();
            let mut chosen = None;
            for window in 1..=args.sharpen_max {
                let sharp = sharpen(&map, &phi, window);
                let report =
                    hyperbolicity_margin(&map, &sharp, consensus, args.n, args.grid, &extra)?;
                let positive = report.margin > 0.0;
                margins.push(json!({ "window": window, "margin": report.margin }));
                if positive && chosen.is_none() {
                    chosen = Some((window, report));
                }
            }
            let results = json!({
                "pressure_consensus": consensus,
                "margins_by_window": margins,
                "chosen_window": chosen.as_ref().map(|(w, _)| w),
                "margin": chosen.as_ref().map(|(_, r)| r),
                "hyperbolic_evidence": chosen.is_some(),
            });
            Ok((serde_json::to_value(args).unwrap(), None, results))
        }
        Command::ComplexPressure(args) => {
            let c = parse_complex(&args.c)?;
            let z0 = parse_complex(&args.z0)?;
            let phi = parse_complex_potential(&args.potential)?;
            let map = ComplexQuadratic::new(c);
            let pre = complex_preimage_pressure(&map, &phi, z0, (args.n_min, args.n_max))?;
            let per = complex_periodic_pressure(
                &map,
                &phi,
                (args.periodic_n_min, args.periodic_n_max),
            )?;
            let gap = (pre.extrapolated - per.extrapolated).abs();
            let samples = args.samples.map(|count| {
                let pts = julia_sample(&map, count, cli.seed);
                let escaped = julia_certify(&map, &pts, args.certify_horizon);
                (pts, escaped)
            });
            if let (Some(path), Some((pts, _))) = (&args.export, &samples) {
                let rows: Vec<(f64, f64, f64)> = pts.iter().map(|z| (z.re, z.im, 0.0)).collect();
                write_artifact(path, &complex_csv(&rows))?;
            }
            let results = json!({
                "c": [c.re, c.im],
                "escape_radius": map.escape_radius,
                "preimage": pre,
                "periodic": per,
                "method_gap": gap,
                "samples": samples.as_ref().map(|(pts, escaped)| json!({
                    "count": pts.len(),
                    "escaped_within_horizon": escaped,
                })),
            });
            let csv = Some(csv_table(
                &["n", "preimage_iterate"],
                &pre.iterates.iter().map(|&(n, v)| vec![n, v]).collect::<Vec<_>>(),
            ));
            Ok((serde_json::to_value(args).unwrap(), csv, results))
        }
    }
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error display
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.threads > 0 {
        // a global pool can only be installed once per process; later
        // invocations with the same flag are fine to ignore
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let started = Instant::now();
    match dispatch(&cli) {
        Ok((inputs, csv, results)) => {
            let wall = started.elapsed().as_secs_f64() * 1e3;
            let command = command_name(&cli.command);
            let report = Report::new(command, cli.seed, effective_threads(&cli), inputs, results, wall);
            let body = match (cli.format, csv) {
                (Format::Csv, Some(table)) => table,
                _ => {
                    let mut s = report.render();
                    s.push('\n');
                    s
                }
            };
            match &cli.output {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, body) {
                        eprintln!("ruelle: {e}");
                        return 2;
                    }
                }
                None => print!("{body}"),
            }
            0
        }
        Err(e) => {
            eprintln!("ruelle: {e}");
            e.exit_code()
        }
    }
}

fn effective_threads(cli: &Cli) -> usize {
    if cli.threads > 0 {
        cli.threads
    } else {
        rayon::current_num_threads()
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Pressure(_) => "pressure",
        Command::Preimages(_) => "preimages",
        Command::Periodic(_) => "periodic",
        Command::Ulam(_) => "ulam",
        Command::Scgf(_) => "scgf",
        Command::Rate(_) => "rate",
        Command::LdpCheck(_) => "ldp-check",
        Command::Shrinking(_) => "shrinking",
        Command::ConformalCheck(_) => "conformal-check",
        Command::HyperbolicCheck(_) => "hyperbolic-check",
        Command::ComplexPressure(_) => "complex-pressure",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_parse() {
        assert_eq!(
            parse_methods(&["preimage".into(), "spectral".into()]).unwrap(),
            vec![Method::PreimageSum, Method::Spectral]
        );
        assert!(parse_methods(&["bogus".into()]).is_err());
    }

    #[test]
    fn policies_parse() {
        assert_eq!(parse_policy("none").unwrap(), PruningPolicy::None);
        assert_eq!(
            parse_policy("threshold:30").unwrap(),
            PruningPolicy::Threshold { delta: 30.0 }
        );
        assert!(parse_policy("x").is_err());
    }

    #[test]
    fn complex_specs_parse() {
        let z = parse_complex("-1,0.5").unwrap();
        assert_eq!((z.re, z.im), (-1.0, 0.5));
        assert!(parse_complex("1").is_err());
        assert!(matches!(parse_complex_potential("re").unwrap(), ComplexPotential::Re));
        assert!(parse_complex_potential("norm").is_err());
    }
}
