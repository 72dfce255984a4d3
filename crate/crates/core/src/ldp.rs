//! Level-2 empirical measures projected onto observables, the scaled
//! cumulant generating function, Legendre-transform rate functions, rate
//! evaluation on Markov measures, and empirical deviation-decay slopes.
//!
//! Level-2 sets are probed through half-space projections
//! {mu : integral of psi d mu >= s}: convex, open, finite-dimensional, and
//! carrying exact oracles on the full-shift families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::backward::{walk_preimage_levels, PruningPolicy};
use crate::error::Error;
use crate::maps::PiecewiseMap;
use crate::numerics::{affine_fit, log_sum_exp, LnFactorial};
use crate::periodic::periodic_points;
use crate::potentials::{birkhoff_sum, Potential};
use crate::pressure::{
    estimate, extrapolate_iterates, variational_lower_bound, Method, Schedule,
};
use crate::transfer::{build_discretization, leading_eigen, SpectralData, TransferDiscretization};
use crate::Result;

/// A stationary Markov measure on a declared Markov partition.
#[derive(Clone, Debug, Serialize)]
pub struct MarkovMeasure {
    /// Row-stochastic transition matrix on the partition cells.
    pub transition: Vec<Vec<f64>>,
    /// Stationary row vector: pi^T P = pi^T.
    pub stationary: Vec<f64>,
    /// -sum_i pi_i sum_j P_ij log P_ij
    pub entropy: f64,
}

impl MarkovMeasure {
    pub fn new(transition: Vec<Vec<f64>>) -> Result<Self> {
        let k = transition.len();
        for row in &transition {
            if row.len() != k {
                return Err(Error::Config("markov measure: transition matrix not square".into()));
            }
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                return Err(Error::Config("markov measure: probabilities outside [0, 1]".into()));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("markov measure: row sums to {s}, not 1")));
            }
        }
        // stationary vector by damped power iteration on the transpose;
        // damping makes periodic chains converge without changing the
        // stationary vector
        let mut pi = vec![1.0 / k as f64; k];
        for _ in 0..200_000 {
            let mut next = vec![0.0; k];
            for (i, row) in transition.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    next[j] += pi[i] * p;
                }
            }
            let mut delta = 0.0;
            for j in 0..k {
                next[j] = 0.5 * next[j] + 0.5 * pi[j];
                delta += (next[j] - pi[j]).abs();
            }
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        let total: f64 = pi.iter().sum();
        for p in pi.iter_mut() {
            *p /= total;
        }
        // verify stationarity
        let mut image = vec![0.0; k];
        for (i, row) in transition.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                image[j] += pi[i] * p;
            }
        }
        let err: f64 = image.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if err > 1e-12 {
            return Err(Error::NoConvergence {
                op: "markov_stationary",
                iterations: 200_000,
                residual: err,
            });
        }
        let entropy = -transition
            .iter()
            .zip(&pi)
            .map(|(row, &p)| {
                p * row.iter().map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>()
            })
            .sum::<f64>();
        Ok(MarkovMeasure { transition, stationary: pi, entropy })
    }

    /// Product (Bernoulli) measure: every row equals the weight vector.
    pub fn bernoulli(weights: &[f64]) -> Result<Self> {
        MarkovMeasure::new(vec![weights.to_vec(); weights.len()])
    }

    pub fn states(&self) -> usize {
        self.transition.len()
    }
}

// ------------------------------------------------------------------
// Level-2 projections
// ------------------------------------------------------------------

/// Where the empirical measures come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Level2Source {
    /// Iterated preimages of x0, weighted by exp(S_n(phi)).
    Preimages { x0: f64 },
    /// Fixed points of f^n, weighted by exp(S_n(phi)).
    Periodic,
    /// Orbit segments sampled from the (approximate) equilibrium state,
    /// uniform weights.
    Birkhoff { trials: usize, seed: u64, burn_in: usize },
}

impl Level2Source {
    pub fn label(&self) -> &'static str {
        match self {
            Level2Source::Preimages { .. } => "preimages",
            Level2Source::Periodic => "periodic",
            Level2Source::Birkhoff { .. } => "birkhoff",
        }
    }
}

/// Empirical measures of one source at one depth, projected onto a fixed
/// list of observables: each sample carries the vector of Birkhoff
/// averages (1/n) S_n(psi_i) and its log-weight.
#[derive(Clone, Debug, Serialize)]
pub struct Level2Projection {
    pub source: String,
    pub observables: Vec<String>,
    pub n: usize,
    /// (average vector, log_weight)
    pub samples: Vec<(Vec<f64>, f64)>,
    /// log of the total weight; exponentiated weights divided by this
    /// normalize to 1.
    pub log_normalization: f64,
}

impl Level2Projection {
    /// Normalized weighted mean of each observable's averages.
    pub fn weighted_means(&self) -> Vec<f64> {
        let k = self.observables.len();
        let mut means = vec![0.0; k];
        for (v, logw) in &self.samples {
            let w = (logw - self.log_normalization).exp();
            for (m, x) in means.iter_mut().zip(v) {
                *m += w * x;
            }
        }
        means
    }

    /// Normalized mass of the half-space {sample : v_obs >= s0}.
    pub fn log_mass_above(&self, obs: usize, s0: f64) -> f64 {
        let qualifying: Vec<f64> = self
            .samples
            .iter()
            .filter(|(v, _)| v[obs] >= s0 - 1e-12)
            .map(|(_, w)| *w)
            .collect();
        log_sum_exp(&qualifying) - self.log_normalization
    }

    /// Sum of normalized weights; 1 up to rounding by construction.
    pub fn total_normalized_weight(&self) -> f64 {
        self.samples.iter().map(|(_, w)| (w - self.log_normalization).exp()).sum()
    }
}

/// The approximate equilibrium state used by the Birkhoff source: a
/// spectral solve at some resolution.
pub struct Equilibrium<'a> {
    pub disc: &'a TransferDiscretization,
    pub spectral: &'a SpectralData,
}

impl Equilibrium<'_> {
    /// integral of psi against the equilibrium cell masses.
    pub fn mean(&self, map: &PiecewiseMap, psi: &Potential) -> f64 {
        self.spectral
            .equilibrium_cells()
            .iter()
            .enumerate()
            .map(|(i, nu)| nu * psi.eval(map, self.disc.midpoint(i)))
            .sum()
    }
}

/// Build the level-2 projection of one source onto the observables.
pub fn project_level2(
    map: &PiecewiseMap,
    potential: &Potential,
    source: Level2Source,
    observables: &[&Potential],
    n: usize,
    equilibrium: Option<&Equilibrium<'_>>,
) -> Result<Level2Projection> {
    let names: Vec<String> = observables.iter().map(|p| p.name.clone()).collect();
    let samples: Vec<(Vec<f64>, f64)> = match source {
        Level2Source::Preimages { x0 } => {
            let mut pots: Vec<&Potential> = vec![potential];
            pots.extend(observables.iter().copied());
            let mut out = Vec::new();
            walk_preimage_levels(
                map,
                &pots,
                x0,
                n,
                crate::backward::DEFAULT_NODE_BUDGET,
                PruningPolicy::None,
                |level| {
                    if level.depth == n {
                        for i in 0..level.points.len() {
                            let v: Vec<f64> = (0..observables.len())
                                .map(|j| level.sums[j + 1][i] / n as f64)
                                .collect();
                            out.push((v, level.sums[0][i]));
                        }
                    }
                },
            )?;
            out
        }
        Level2Source::Periodic => {
            let set = periodic_points(map, n)?;
            if set.points.is_empty() {
                return Err(Error::EmptyPeriodicSet { n });
            }
            set.points
                .iter()
                .map(|p| {
                    let v: Vec<f64> = observables
                        .iter()
                        .map(|psi| birkhoff_sum(map, psi, p.point, n).map(|s| s / n as f64))
                        .collect::<Result<_>>()?;
                    let w = birkhoff_sum(map, potential, p.point, n)?;
                    Ok((v, w))
                })
                .collect::<Result<_>>()?
        }
        Level2Source::Birkhoff { trials, seed, burn_in } => {
            let eq = equilibrium.ok_or(Error::MissingEquilibrium)?;
            let cells = eq.spectral.equilibrium_cells();
            let mut cdf = Vec::with_capacity(cells.len());
            let mut acc = 0.0;
            for &c in &cells {
                acc += c;
                cdf.push(acc);
            }
            (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(trial as u64 + 1);
                    let orbit = backward_equilibrium_orbit(
                        map, potential, eq, &cdf, &mut rng, burn_in, n,
                    )?;
                    let v: Vec<f64> = observables
                        .iter()
                        .map(|psi| {
                            orbit.iter().map(|&x| psi.eval(map, x)).sum::<f64>() / n as f64
                        })
                        .collect();
                    Ok((v, 0.0))
                })
                .collect::<Result<_>>()?
        }
    };
    let log_normalization = log_sum_exp(&samples.iter().map(|(_, w)| *w).collect::<Vec<_>>());
    Ok(Level2Projection {
        source: source.label().into(),
        observables: names,
        n,
        samples,
        log_normalization,
    })
}

/// Sample one stationary orbit segment of length n by anchoring a draw in
/// the equilibrium cells and relaxing it with backward steps through the
/// normalized transfer kernel (probabilities proportional to
/// exp(phi(y)) h(y) over the preimages y). Inverse branches contract, so
/// the relaxation is numerically stable where forward iteration of
/// dyadic-linear maps would shift information out of the mantissa; the
/// recorded points form an exact forward orbit by construction.
fn backward_equilibrium_orbit(
    map: &PiecewiseMap,
    potential: &Potential,
    eq: &Equilibrium<'_>,
    anchor_cdf: &[f64],
    rng: &mut ChaCha8Rng,
    burn_in: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let u: f64 = rng.gen();
    let cell = anchor_cdf.partition_point(|&c| c < u).min(anchor_cdf.len() - 1);
    let iv = eq.disc.cell_interval(cell);
    let mut z = iv.lo + rng.gen::<f64>() * iv.len();
    let mut recorded = vec![0.0; n];
    for step in 0..(burn_in + n) {
        let pre = map.preimages_one_step(z)?;
        debug_assert!(!pre.is_empty());
        let mut weights: Vec<f64> = pre
            .iter()
            .map(|&(y, _)| {
                potential.eval(map, y).exp()
                    * eq.spectral.density[eq.disc.cell_of(y)].max(1e-300)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut idx = 0;
        for (i, w) in weights.iter_mut().enumerate() {
            if pick <= *w || i == pre.len() - 1 {
                idx = i;
                break;
            }
            pick -= *w;
        }
        z = pre[idx].0;
        if step >= burn_in {
            // forward order: deepest preimage first
            recorded[n - 1 - (step - burn_in)] = z;
        }
    }
    Ok(recorded)
}

// ------------------------------------------------------------------
// SCGF
// ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ScgfMethod {
    /// Lambda(t) = P(phi + t psi) - P(phi) through the pressure
    /// estimators.
    PressureDifference,
    /// (1/n) log of the empirical mean of exp(S_n(t psi)) over
    /// equilibrium samples.
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScgfCurve {
    pub observable: String,
    pub method: ScgfMethod,
    pub t_grid: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mc_n: Option<usize>,
    pub mc_trials: Option<usize>,
    pub seed: Option<u64>,
}

impl ScgfCurve {
    /// Largest violation of discrete convexity (most negative second
    /// difference, as a positive number).
    pub fn convexity_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for w in self.lambda.windows(3) {
            let second = w[0] - 2.0 * w[1] + w[2];
            worst = worst.max(-second);
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct ScgfOptions {
    pub schedule: Schedule,
    /// Estimators feeding the PressureDifference consensus.
    pub methods: Vec<Method>,
    /// Birkhoff-average depth for the hyperbolicity screen.
    pub screen_n: usize,
    pub screen_grid: usize,
    pub mc_n: usize,
    pub mc_trials: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl Default for ScgfOptions {
    fn default() -> Self {
        ScgfOptions {
            schedule: Schedule::default(),
            methods: vec![Method::PreimageSum, Method::PeriodicSum, Method::Spectral],
            screen_n: 12,
            screen_grid: 1000,
            mc_n: 30,
            mc_trials: 10_000,
            seed: 7,
            burn_in: 100,
        }
    }
}

/// Scaled cumulant generating function of psi relative to the equilibrium
/// of phi, on the given t grid.
pub fn scgf(
    map: &PiecewiseMap,
    phi: &Potential,
    psi: &Potential,
    t_grid: &[f64],
    method: ScgfMethod,
    options: &ScgfOptions,
    equilibrium: Option<&Equilibrium<'_>>,
) -> Result<ScgfCurve> {
    let lambda = match method {
        ScgfMethod::PressureDifference => {
            let engine = PdEngine::build(map, phi, psi, options)?;
            let consensus: Vec<f64> =
                t_grid.par_iter().map(|&t| engine.consensus_at(t)).collect();
            engine.screen_all(t_grid, &consensus)?;
            let base = engine.consensus_at(0.0);
            consensus.iter().map(|c| c - base).collect()
        }
        ScgfMethod::MonteCarlo => {
            let eq = equilibrium.ok_or(Error::MissingEquilibrium)?;
            let proj = project_level2(
                map,
                phi,
                Level2Source::Birkhoff {
                    trials: options.mc_trials,
                    seed: options.seed,
                    burn_in: options.burn_in,
                },
                &[psi],
                options.mc_n,
                Some(eq),
            )?;
            let n = options.mc_n as f64;
            let sums: Vec<f64> = proj.samples.iter().map(|(v, _)| v[0] * n).collect();
            let log_trials = (options.mc_trials as f64).ln();
            t_grid
                .iter()
                .map(|&t| {
                    let terms: Vec<f64> = sums.iter().map(|s| t * s).collect();
                    (log_sum_exp(&terms) - log_trials) / n
                })
                .collect()
        }
    };
    Ok(ScgfCurve {
        observable: psi.name.clone(),
        method,
        t_grid: t_grid.to_vec(),
        lambda,
        mc_n: (method == ScgfMethod::MonteCarlo).then_some(options.mc_n),
        mc_trials: (method == ScgfMethod::MonteCarlo).then_some(options.mc_trials),
        seed: (method == ScgfMethod::MonteCarlo).then_some(options.seed),
    })
}

/// Precomputed geometry shared by every t: preimage level sums, periodic
/// point sums, spectral assembly inputs, and screen probes. Only the
/// exponential weights depend on t.
struct PdEngine<'a> {
    options: &'a ScgfOptions,
    /// (depth, S_phi, S_psi) for each retained preimage level.
    pre_levels: Vec<(usize, Vec<f64>, Vec<f64>)>,
    /// (n, per-point (S_phi, S_psi)).
    per_sets: Vec<(usize, Vec<(f64, f64)>)>,
    /// for each spectral resolution: per-midpoint preimage data
    /// (cell, phi(y), psi(y)).
    spectral: Vec<(usize, Vec<Vec<(u32, f64, f64)>>)>,
    /// (S_n phi, S_n psi) at the screen probes, n = screen_n.
    screen: Vec<(f64, f64)>,
}

impl<'a> PdEngine<'a> {
    fn build(
        map: &'a PiecewiseMap,
        phi: &Potential,
        psi: &Potential,
        options: &'a ScgfOptions,
    ) -> Result<Self> {
        let sched = &options.schedule;
        let mut pre_levels = Vec::new();
        let (plo, phi_n) = sched.preimage_n;
        walk_preimage_levels(
            map,
            &[phi, psi],
            sched.x0_for(map),
            phi_n,
            sched.node_budget,
            PruningPolicy::None,
            |level| {
                if level.depth >= plo {
                    pre_levels.push((level.depth, level.sums[0].clone(), level.sums[1].clone()));
                }
            },
        )?;
        let mut per_sets = Vec::new();
        if options.methods.contains(&Method::PeriodicSum) {
            let (lo, hi) = sched.periodic_n;
            for n in lo..=hi {
                let set = periodic_points(map, n)?;
                if set.points.is_empty() {
                    continue;
                }
                let sums: Vec<(f64, f64)> = set
                    .points
                    .iter()
                    .map(|p| {
                        Ok((
                            birkhoff_sum(map, phi, p.point, n)?,
                            birkhoff_sum(map, psi, p.point, n)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                per_sets.push((n, sums));
            }
        }
        let mut spectral = Vec::new();
        if options.methods.contains(&Method::Spectral) {
            for &m in &sched.spectral_m {
                let width = map.domain.len() / m as f64;
                let rows: Vec<Vec<(u32, f64, f64)>> = (0..m)
                    .into_par_iter()
                    .map(|i| {
                        let x = map.domain.lo + width * (i as f64 + 0.5);
                        let pre = map.preimages_one_step(x)?;
                        Ok(pre
                            .into_iter()
                            .map(|(y, _)| {
                                let j = (((y - map.domain.lo) / width).floor() as isize)
                                    .clamp(0, m as isize - 1);
                                (j as u32, phi.eval(map, y), psi.eval(map, y))
                            })
                            .collect())
                    })
                    .collect::<Result<_>>()?;
                spectral.push((m, rows));
            }
        }
        // screen probes: uniform grid plus periodic points up to period 8
        let mut probes: Vec<f64> = (0..options.screen_grid)
            .map(|i| {
                map.domain.lo
                    + map.domain.len() * i as f64 / (options.screen_grid.max(2) - 1) as f64
            })
            .collect();
        for k in 1..=8.min(map.periodic_depth_cap) {
            if let Ok(set) = periodic_points(map, k) {
                probes.extend(set.points.iter().map(|p| p.point));
            }
        }
        let screen: Vec<(f64, f64)> = probes
            .par_iter()
            .map(|&x| {
                Ok((
                    birkhoff_sum(map, phi, x, options.screen_n)?,
                    birkhoff_sum(map, psi, x, options.screen_n)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(PdEngine { options, pre_levels, per_sets, spectral, screen })
    }

    fn consensus_at(&self, t: f64) -> f64 {
        let mut values = Vec::new();
        if self.options.methods.contains(&Method::PreimageSum) {
            let iter: Vec<(f64, f64)> = self
                .pre_levels
                .iter()
                .map(|(n, sphi, spsi)| {
                    let terms: Vec<f64> =
                        sphi.iter().zip(spsi).map(|(a, b)| a + t * b).collect();
                    (*n as f64, log_sum_exp(&terms) / *n as f64)
                })
                .collect();
            values.push(extrapolate_iterates(&iter).0);
        }
        if !self.per_sets.is_empty() {
            let iter: Vec<(f64, f64)> = self
                .per_sets
                .iter()
                .map(|(n, sums)| {
                    let terms: Vec<f64> = sums.iter().map(|(a, b)| a + t * b).collect();
                    (*n as f64, log_sum_exp(&terms) / *n as f64)
                })
                .collect();
            values.push(extrapolate_iterates(&iter).0);
        }
        for (m, rows) in &self.spectral {
            let _ = m;
            // assemble and power iterate; the geometry is fixed, only the
            // weights move with t
            let matrix: Vec<Vec<(u32, f64)>> = rows
                .iter()
                .map(|row| row.iter().map(|&(j, a, b)| (j, (a + t * b).exp())).collect())
                .collect();
            if let Ok(lnl) = leading_log_eigenvalue(&matrix) {
                values.push(lnl);
            }
        }
        if self.spectral.len() > 1 {
            // collapse the spectral ladder to its extrapolation
            let k = values.len();
            let lads: Vec<(f64, f64)> = self
                .spectral
                .iter()
                .enumerate()
                .map(|(i, (m, _))| (*m as f64, values[k - self.spectral.len() + i]))
                .collect();
            values.truncate(k - self.spectral.len());
            values.push(extrapolate_iterates(&lads).0);
        }
        median(&values)
    }

    fn screen_all(&self, t_grid: &[f64], consensus: &[f64]) -> Result<()> {
        for (&t, &c) in t_grid.iter().zip(consensus) {
            let sup = self
                .screen
                .iter()
                .map(|&(a, b)| (a + t * b) / self.options.screen_n as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let margin = c - sup;
            if margin <= 0.0 {
                return Err(Error::HyperbolicityScreenFailed { t, margin });
            }
        }
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Power iteration for the log leading eigenvalue of a sparse row-major
/// nonnegative matrix.
fn leading_log_eigenvalue(rows: &[Vec<(u32, f64)>]) -> Result<f64> {
    let m = rows.len();
    let mut v = vec![1.0 / m as f64; m];
    let mut lambda = 1.0;
    for _ in 0..100_000 {
        let mut w = vec![0.0; m];
        for (i, row) in rows.iter().enumerate() {
            w[i] = row.iter().map(|&(j, x)| x * v[j as usize]).sum();
        }
        let norm: f64 = w.iter().sum();
        if norm <= 0.0 {
            return Err(Error::ReducibleMatrix);
        }
        let mut delta = 0.0;
        for i in 0..m {
            w[i] /= norm;
            delta += (w[i] - v[i]).abs();
        }
        lambda = norm;
        v = w;
        // the L1 change bottoms out near m * eps, so stop just above it
        if delta < 1e-12 {
            break;
        }
    }
    Ok(lambda.ln())
}

// ------------------------------------------------------------------
// Legendre transform and rate functions
// ------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct RateProfile {
    pub s_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// True where the Legendre maximizer sat on the t-grid boundary (the
    /// true transform is unbounded or out of reach there).
    pub at_boundary: Vec<bool>,
    /// Zero of the rate function.
    pub minimizer: f64,
    pub min_value: f64,
}

/// Legendre transform I(s) = sup_t (t s - Lambda(t)) over the curve's
/// grid, with three-point parabolic refinement at interior maximizers.
pub fn legendre_rate(curve: &ScgfCurve, s_grid: &[f64]) -> Result<RateProfile> {
    let defect = curve.convexity_defect();
    if defect > 1e-8 {
        let at = curve
            .lambda
            .windows(3)
            .zip(&curve.t_grid[1..])
            .find(|(w, _)| w[0] - 2.0 * w[1] + w[2] < -1e-8)
            .map(|(_, t)| *t)
            .unwrap_or(0.0);
        return Err(Error::NonConvexCurve { t: at, value: -defect });
    }
    let mut values = Vec::with_capacity(s_grid.len());
    let mut at_boundary = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let g: Vec<f64> =
            curve.t_grid.iter().zip(&curve.lambda).map(|(t, l)| t * s - l).collect();
        let mut k = 0;
        for (i, &v) in g.iter().enumerate() {
            if v > g[k] {
                k = i;
            }
        }
        if k == 0 || k == g.len() - 1 {
            values.push(g[k]);
            at_boundary.push(true);
        } else {
            values.push(parabolic_peak(g[k - 1], g[k], g[k + 1]));
            at_boundary.push(false);
        }
    }
    // minimizer: refine around the grid argmin
    let mut k = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[k] {
            k = i;
        }
    }
    let (minimizer, min_value) = if k == 0 || k == values.len() - 1 {
        (s_grid[k], values[k])
    } else {
        let denom = values[k - 1] - 2.0 * values[k] + values[k + 1];
        if denom.abs() < 1e-300 {
            (s_grid[k], values[k])
        } else {
            let ds = s_grid[k + 1] - s_grid[k];
            let shift = 0.5 * (values[k - 1] - values[k + 1]) / denom;
            (
                s_grid[k] + shift * ds,
                values[k] - 0.125 * (values[k - 1] - values[k + 1]).powi(2) / denom,
            )
        }
    };
    Ok(RateProfile { s_grid: s_grid.to_vec(), values, at_boundary, minimizer, min_value })
}

/// Peak of the parabola through three equally spaced values, the middle
/// one largest.
fn parabolic_peak(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 || denom.abs() < 1e-300 {
        return c;
    }
    c - 0.125 * (l - r) * (l - r) / denom
}

/// The rate function evaluated at a Markov measure:
/// P - integral of phi d mu - h_mu. Nonnegative by the variational
/// principle.
pub fn rate_markov(
    map: &PiecewiseMap,
    potential: &Potential,
    measure: &MarkovMeasure,
    pressure_consensus: f64,
) -> Result<f64> {
    Ok(pressure_consensus - variational_lower_bound(map, potential, measure)?)
}

// ------------------------------------------------------------------
// Deviation decay
// ------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct DeviationReport {
    pub source: String,
    pub s0: f64,
    /// (n, log normalized mass of {average psi >= s0}).
    pub masses: Vec<(usize, f64)>,
    /// Affine-fit slope of the log masses against n over the top half of
    /// the range.
    pub slope: f64,
    pub used_exact_path: bool,
}

/// Exponential decay rate of the half-space masses
/// Theta_n{mean psi >= s0}. For branch-constant phi and psi on full
/// maps the masses are computed exactly by summing over symbol counts,
/// which reaches n in the hundreds; otherwise the projection machinery
/// enumerates samples.
pub fn deviation_decay(
    map: &PiecewiseMap,
    potential: &Potential,
    source: Level2Source,
    observable: &Potential,
    s0: f64,
    n_range: (usize, usize),
    equilibrium: Option<&Equilibrium<'_>>,
) -> Result<DeviationReport> {
    let exact = map.is_full_branched()
        && !matches!(source, Level2Source::Birkhoff { .. })
        && potential.as_branch_values(map).is_some()
        && observable.as_branch_values(map).is_some();
    let (lo, hi) = n_range;
    assert!(lo >= 1 && lo <= hi);
    let mut masses = Vec::new();
    if exact {
        let phi_vals = potential.as_branch_values(map).unwrap();
        let psi_vals = observable.as_branch_values(map).unwrap();
        let drop_last_word =
            map.endpoints_identified && matches!(source, Level2Source::Periodic);
        let lf = LnFactorial::up_to(hi);
        for n in lo..=hi {
            let lm = exact_halfspace_log_mass(
                &phi_vals, &psi_vals, s0, n, &lf, drop_last_word,
            )?;
            masses.push((n, lm));
        }
    } else {
        for n in lo..=hi {
            let proj = project_level2(map, potential, source, &[observable], n, equilibrium)?;
            let lm = proj.log_mass_above(0, s0);
            if !lm.is_finite() {
                return Err(Error::EmptyDeviationSet { s0 });
            }
            masses.push((n, lm));
        }
    }
    let from = masses.len() / 2;
    let xs: Vec<f64> = masses[from..].iter().map(|&(n, _)| n as f64).collect();
    let ys: Vec<f64> = masses[from..].iter().map(|&(_, v)| v).collect();
    let (_, slope, _) = affine_fit(&xs, &ys);
    Ok(DeviationReport {
        source: source.label().into(),
        s0,
        masses,
        slope,
        used_exact_path: exact,
    })
}

/// Sum the word weights by symbol-count vectors. Words with the same
/// branch counts share both the weight exp(sum phi) and the average of
/// psi, so the half-space mass is a sum of multinomial terms.
fn exact_halfspace_log_mass(
    phi_vals: &[f64],
    psi_vals: &[f64],
    s0: f64,
    n: usize,
    lf: &LnFactorial,
    drop_last_word: bool,
) -> Result<f64> {
    let d = phi_vals.len();
    let mut above: Vec<f64> = Vec::new();
    let mut total: Vec<f64> = Vec::new();
    let mut counts = vec![0usize; d];
    // enumerate compositions of n into d parts
    fn recurse(
        branch: usize,
        remaining: usize,
        counts: &mut Vec<usize>,
        phi_vals: &[f64],
        psi_vals: &[f64],
        s0: f64,
        n: usize,
        lf: &LnFactorial,
        above: &mut Vec<f64>,
        total: &mut Vec<f64>,
    ) {
        let d = phi_vals.len();
        if branch == d - 1 {
            counts[branch] = remaining;
            let mut log_multiplicity = lf.ln_factorial(n);
            let mut s_phi = 0.0;
            let mut s_psi = 0.0;
            for i in 0..d {
                log_multiplicity -= lf.ln_factorial(counts[i]);
                s_phi += counts[i] as f64 * phi_vals[i];
                s_psi += counts[i] as f64 * psi_vals[i];
            }
            let term = log_multiplicity + s_phi;
            total.push(term);
            if s_psi / n as f64 >= s0 - 1e-12 {
                above.push(term);
            }
            return;
        }
        for k in 0..=remaining {
            counts[branch] = k;
            recurse(branch + 1, remaining - k, counts, phi_vals, psi_vals, s0, n, lf, above, total);
        }
    }
    recurse(0, n, &mut counts, phi_vals, psi_vals, s0, n, lf, &mut above, &mut total);
    let mut log_above = log_sum_exp(&above);
    let mut log_total = log_sum_exp(&total);
    if drop_last_word {
        // remove the single word on the identified right endpoint: the
        // all-(d-1) itinerary
        let w = n as f64 * phi_vals[d - 1];
        log_total = log_sub_exp(log_total, w);
        let v = psi_vals[d - 1];
        if v >= s0 - 1e-12 {
            log_above = log_sub_exp(log_above, w);
        }
    }
    if !log_above.is_finite() {
        return Err(Error::EmptyDeviationSet { s0 });
    }
    Ok(log_above - log_total)
}

/// log(e^a - e^b) for a > b.
fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    debug_assert!(a >= b);
    a + (-(b - a).exp()).ln_1p()
}

// ------------------------------------------------------------------
// Weak* convergence check
// ------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct WeakstarRow {
    pub source: String,
    pub n: usize,
    /// |weighted mean - equilibrium mean| per observable.
    pub deviations: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakstarReport {
    pub rows: Vec<WeakstarRow>,
    pub max_deviation_at_largest_n: f64,
}

/// Compare weighted observable means of the projections against the
/// equilibrium means.
pub fn weakstar_check(
    projections: &[Level2Projection],
    equilibrium_means: &[f64],
) -> WeakstarReport {
    let mut rows: Vec<WeakstarRow> = projections
        .iter()
        .map(|p| {
            let means = p.weighted_means();
            let deviations: Vec<f64> = means
                .iter()
                .zip(equilibrium_means)
                .map(|(m, e)| (m - e).abs())
                .collect();
            WeakstarRow { source: p.source.clone(), n: p.n, deviations }
        })
        .collect();
    rows.sort_by(|a, b| a.source.cmp(&b.source).then(a.n.cmp(&b.n)));
    let largest_n = rows.iter().map(|r| r.n).max().unwrap_or(0);
    let max_dev = rows
        .iter()
        .filter(|r| r.n == largest_n)
        .flat_map(|r| r.deviations.iter().cloned())
        .fold(0.0_f64, f64::max);
    WeakstarReport { rows, max_deviation_at_largest_n: max_dev }
}

/// Convenience: a spectral solve packaged for the Birkhoff source.
pub fn solve_equilibrium(
    map: &PiecewiseMap,
    potential: &Potential,
    m: usize,
) -> Result<(TransferDiscretization, SpectralData)> {
    let disc = build_discretization(map, potential, m)?;
    let spectral = leading_eigen(&disc)?;
    Ok((disc, spectral))
}

/// Pressure consensus helper shared by the CLI paths: median of the
/// requested estimators.
pub fn pressure_consensus(
    map: &PiecewiseMap,
    potential: &Potential,
    methods: &[Method],
    schedule: &Schedule,
) -> Result<f64> {
    let mut values = Vec::new();
    for &method in methods {
        if method == Method::VariationalLowerBound {
            continue;
        }
        values.push(estimate(map, potential, method, schedule)?.extrapolated);
    }
    Ok(median(&values))
}
