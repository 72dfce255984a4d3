//! The pressure estimators -- iterated preimages, periodic points, the
//! operator spectrum, and variational lower-bound witnesses -- with
//! (1/n)-extrapolation and cross-validation of their shared limit.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backward::{walk_preimage_levels, PruningPolicy, DEFAULT_NODE_BUDGET};
use crate::error::Error;
use crate::ldp::MarkovMeasure;
use crate::maps::PiecewiseMap;
use crate::numerics::{affine_fit, log_sum_exp};
use crate::periodic::{log_partition_over, periodic_points};
use crate::potentials::{hyperbolicity_margin, MarginReport, Potential};
use crate::transfer::{build_discretization, leading_eigen};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    PreimageSum,
    PeriodicSum,
    Spectral,
    VariationalLowerBound,
}

/// Numeric schedule shared by the estimators.
#[derive(Clone, Debug, Serialize)]
pub struct Schedule {
    /// Depth range for the preimage partition function.
    pub preimage_n: (usize, usize),
    /// Depth range for the periodic partition function.
    pub periodic_n: (usize, usize),
    /// Resolution ladder for the spectral estimator.
    pub spectral_m: Vec<usize>,
    /// Root of the preimage tree; None picks the interior point at one
    /// third of the domain, which avoids the critical orbits of the
    /// built-in maps.
    pub x0: Option<f64>,
    pub node_budget: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            preimage_n: (4, 14),
            periodic_n: (2, 12),
            spectral_m: vec![256, 512, 1024],
            x0: None,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

impl Schedule {
    pub fn x0_for(&self, map: &PiecewiseMap) -> f64 {
        self.x0.unwrap_or(map.domain.lo + map.domain.len() / 3.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PressureEstimate {
    pub method: Method,
    /// (n, value) pairs; for Spectral the first coordinate is the
    /// resolution m.
    pub iterates: Vec<(f64, f64)>,
    pub extrapolated: f64,
    /// Half-width of the fit: |slope|/n_last plus the largest residual.
    pub uncertainty: f64,
    pub inputs_digest: String,
}

/// Affine fit of the iterates against 1/n over the top half of the range;
/// the intercept is the extrapolated value.
pub fn extrapolate_iterates(iterates: &[(f64, f64)]) -> (f64, f64) {
    assert!(!iterates.is_empty());
    let from = iterates.len() / 2;
    let tail = &iterates[from..];
    let xs: Vec<f64> = tail.iter().map(|&(n, _)| 1.0 / n).collect();
    let ys: Vec<f64> = tail.iter().map(|&(_, v)| v).collect();
    let (intercept, slope, max_resid) = affine_fit(&xs, &ys);
    let n_last = iterates.last().unwrap().0;
    (intercept, slope.abs() / n_last + max_resid)
}

fn digest(map: &PiecewiseMap, potential: &Potential, method: Method, schedule: &Schedule) -> String {
    let mut h = Sha256::new();
    h.update(map.name.as_bytes());
    h.update(potential.name.as_bytes());
    h.update(format!("{method:?}").as_bytes());
    h.update(format!("{schedule:?}").as_bytes());
    let out = h.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Run one estimator over its schedule.
pub fn estimate(
    map: &PiecewiseMap,
    potential: &Potential,
    method: Method,
    schedule: &Schedule,
) -> Result<PressureEstimate> {
    let iterates: Vec<(f64, f64)> = match method {
        Method::PreimageSum => {
            let x0 = schedule.x0_for(map);
            let (lo, hi) = schedule.preimage_n;
            let mut out = Vec::new();
            walk_preimage_levels(
                map,
                &[potential],
                x0,
                hi,
                schedule.node_budget,
                PruningPolicy::None,
                |level| {
                    if level.depth >= lo {
                        out.push((
                            level.depth as f64,
                            log_sum_exp(&level.sums[0]) / level.depth as f64,
                        ));
                    }
                },
            )?;
            out
        }
        Method::PeriodicSum => {
            let (lo, hi) = schedule.periodic_n;
            let mut out = Vec::new();
            for n in lo..=hi {
                let set = periodic_points(map, n)?;
                if set.points.is_empty() {
                    // Per_n can be empty below the least period; skip and
                    // record nothing for this n
                    continue;
                }
                let z = log_partition_over(map, potential, &set)?;
                out.push((n as f64, z / n as f64));
            }
            out
        }
        Method::Spectral => {
            let mut out = Vec::new();
            for &m in &schedule.spectral_m {
                let disc = build_discretization(map, potential, m)?;
                let s = leading_eigen(&disc)?;
                out.push((m as f64, s.pressure_spectral));
            }
            out
        }
        Method::VariationalLowerBound => {
            return Err(Error::Config(
                "estimate: the variational lower bound needs a Markov measure; call variational_lower_bound"
                    .into(),
            ))
        }
    };
    if iterates.is_empty() {
        return Err(Error::EmptyPeriodicSet { n: schedule.periodic_n.1 });
    }
    let (extrapolated, uncertainty) = extrapolate_iterates(&iterates);
    Ok(PressureEstimate {
        method,
        iterates,
        extrapolated,
        uncertainty,
        inputs_digest: digest(map, potential, method, schedule),
    })
}

/// Entropy plus integral of the potential for a stationary Markov measure
/// on the declared partition: a certified lower bound for the pressure.
/// The integral refines through cylinder midpoints; branch-constant
/// potentials integrate exactly at depth one.
pub fn variational_lower_bound(
    map: &PiecewiseMap,
    potential: &Potential,
    measure: &MarkovMeasure,
) -> Result<f64> {
    let cells = map.markov_partition.as_ref().ok_or_else(|| Error::NotMarkov {
        op: "variational_lower_bound",
        map: map.name.clone(),
    })?;
    if cells.len() != map.branch_count() || measure.states() != cells.len() {
        return Err(Error::NotMarkov { op: "variational_lower_bound", map: map.name.clone() });
    }
    for (cell, branch) in cells.iter().zip(&map.branches) {
        if (cell.lo - branch.domain.lo).abs() > 1e-12 || (cell.hi - branch.domain.hi).abs() > 1e-12
        {
            return Err(Error::NotMarkov { op: "variational_lower_bound", map: map.name.clone() });
        }
    }
    let integral = if let Some(values) = potential.as_branch_values(map) {
        measure.stationary.iter().zip(&values).map(|(p, v)| p * v).sum::<f64>()
    } else {
        // cylinder-midpoint quadrature at a depth where cells are fine
        let depth = 12.min(map.depth_cap);
        let mut acc = 0.0;
        for (word, pullback) in map.branch_words(depth)? {
            let mut mass = measure.stationary[word[0] as usize];
            for w in word.windows(2) {
                mass *= measure.transition[w[0] as usize][w[1] as usize];
                if mass == 0.0 {
                    break;
                }
            }
            if mass > 0.0 {
                acc += mass * potential.eval(map, pullback.midpoint());
            }
        }
        acc
    };
    Ok(measure.entropy + integral)
}

#[derive(Clone, Debug, Serialize)]
pub struct AgreementReport {
    pub estimates: Vec<PressureEstimate>,
    /// Median of the extrapolated estimates.
    pub consensus: f64,
    pub max_pairwise_difference: f64,
    pub tolerance: f64,
    /// True iff the estimates agree within the tolerance.
    pub verdict: bool,
    /// Hyperbolicity margin of the potential against the consensus.
    pub margin: MarginReport,
    /// Lower-bound witness from the closed-form equilibrium Markov
    /// measure, available for full-branch maps with branch-constant
    /// potentials.
    pub variational_witness: Option<f64>,
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

/// Run the applicable estimators and compare their limits; the underlying
/// theory asserts they agree.
pub fn cross_validate(
    map: &PiecewiseMap,
    potential: &Potential,
    methods: &[Method],
    schedule: &Schedule,
    tolerance: f64,
) -> Result<AgreementReport> {
    assert!(methods.len() >= 2, "cross_validate needs at least two methods");
    let mut estimates = Vec::new();
    for &m in methods {
        if m == Method::VariationalLowerBound {
            continue;
        }
        estimates.push(estimate(map, potential, m, schedule)?);
    }
    let values: Vec<f64> = estimates.iter().map(|e| e.extrapolated).collect();
    let consensus = median(&values);
    let mut max_diff = 0.0_f64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            max_diff = max_diff.max((values[i] - values[j]).abs());
        }
    }
    // margin against the consensus: uniform grid plus enumerated periodic
    // points up to period 12 (or the map's cap)
    let margin_n = 12.min(map.periodic_depth_cap);
    let mut extra = Vec::new();
    for k in 1..=8.min(map.periodic_depth_cap) {
        if let Ok(set) = periodic_points(map, k) {
            extra.extend(set.points.iter().map(|p| p.point));
        }
    }
    let margin = hyperbolicity_margin(map, potential, consensus, margin_n, 1000, &extra)?;
    let variational_witness = equilibrium_witness(map, potential)
        .map(|mu| variational_lower_bound(map, potential, &mu))
        .transpose()?;
    Ok(AgreementReport {
        estimates,
        consensus,
        max_pairwise_difference: max_diff,
        tolerance,
        verdict: max_diff <= tolerance,
        margin,
        variational_witness,
    })
}

/// For a full-branch map with a branch-constant potential, the equilibrium
/// state is the product measure with weights e^{v_i} / sum e^{v_j}.
pub fn equilibrium_witness(map: &PiecewiseMap, potential: &Potential) -> Option<MarkovMeasure> {
    if !map.is_full_branched() || map.markov_partition.is_none() {
        return None;
    }
    let values = potential.as_branch_values(map)?;
    let z: f64 = values.iter().map(|v| v.exp()).sum();
    let weights: Vec<f64> = values.iter().map(|v| v.exp() / z).collect();
    MarkovMeasure::bernoulli(&weights).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{doubling, golden_markov, logistic, tent};
    use crate::potentials::TrigTerm;
    use std::f64::consts::LN_2;

    fn bc_pressure() -> f64 {
        (0.2_f64.exp() + (-0.3_f64).exp()).ln()
    }

    #[test]
    fn preimage_iterates_are_exact_on_the_full_shift() {
        let m = doubling();
        let phi = Potential::constant(0.0);
        let sched = Schedule { preimage_n: (1, 12), ..Default::default() };
        let est = estimate(&m, &phi, Method::PreimageSum, &sched).unwrap();
        for &(_, v) in &est.iterates {
            assert!((v - LN_2).abs() < 1e-12);
        }
        assert!((est.extrapolated - LN_2).abs() < 1e-12);
    }

    #[test]
    fn periodic_iterates_extrapolate_to_log_two() {
        let m = doubling();
        let phi = Potential::constant(0.0);
        let sched = Schedule::default();
        let est = estimate(&m, &phi, Method::PeriodicSum, &sched).unwrap();
        // iterate sequence has the closed form (1/n) log(2^n - 1)
        for &(n, v) in &est.iterates {
            let expect = ((2.0_f64.powf(n) - 1.0).ln()) / n;
            assert!((v - expect).abs() < 1e-10);
        }
        // the iterates converge exponentially, so the affine-in-1/n fit
        // slightly overshoots; 2e-3 reflects that model floor at n <= 12
        assert!((est.extrapolated - LN_2).abs() < 2e-3, "{}", est.extrapolated);
    }

    #[test]
    fn all_methods_agree_on_branch_constant() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let sched = Schedule::default();
        for method in [Method::PreimageSum, Method::PeriodicSum, Method::Spectral] {
            let est = estimate(&m, &phi, method, &sched).unwrap();
            assert!(
                (est.extrapolated - bc_pressure()).abs() < 1e-3,
                "{method:?}: {}",
                est.extrapolated
            );
        }
    }

    #[test]
    fn extrapolation_stays_near_the_iterate_hull() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let sched = Schedule::default();
        for method in [Method::PreimageSum, Method::PeriodicSum, Method::Spectral] {
            let est = estimate(&m, &phi, method, &sched).unwrap();
            let tail: Vec<f64> =
                est.iterates.iter().rev().take(3).map(|&(_, v)| v).collect();
            let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min) - est.uncertainty;
            let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + est.uncertainty;
            assert!(
                est.extrapolated >= lo - 1e-12 && est.extrapolated <= hi + 1e-12,
                "{method:?}: {} outside [{lo}, {hi}]",
                est.extrapolated
            );
        }
    }

    #[test]
    fn variational_bound_trivial_cases() {
        let m = doubling();
        let phi = Potential::constant(0.0);
        let max_ent = MarkovMeasure::bernoulli(&[0.5, 0.5]).unwrap();
        let v = variational_lower_bound(&m, &phi, &max_ent).unwrap();
        assert!((v - LN_2).abs() < 1e-12);
        let skew = MarkovMeasure::bernoulli(&[0.7, 0.3]).unwrap();
        let v = variational_lower_bound(&m, &phi, &skew).unwrap();
        let h = -(0.7_f64 * 0.7_f64.ln() + 0.3 * 0.3_f64.ln());
        assert!((v - h).abs() < 1e-12);
        assert!(v < LN_2);
    }

    #[test]
    fn equilibrium_witness_attains_the_pressure() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let witness = equilibrium_witness(&m, &phi).unwrap();
        let v = variational_lower_bound(&m, &phi, &witness).unwrap();
        assert!((v - bc_pressure()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn quadrature_path_matches_branch_table_path() {
        // evaluate an affine potential two ways: the cylinder quadrature
        // against the known Lebesgue integral
        let m = doubling();
        let phi = Potential::affine(1.0, 0.0);
        let mu = MarkovMeasure::bernoulli(&[0.5, 0.5]).unwrap();
        let v = variational_lower_bound(&m, &phi, &mu).unwrap();
        // h = log 2, integral of x over Lebesgue = 1/2
        assert!((v - (LN_2 + 0.5)).abs() < 1e-4, "{v}");
    }

    #[test]
    fn lower_bound_respects_consensus() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let report = cross_validate(
            &m,
            &phi,
            &[Method::PreimageSum, Method::PeriodicSum, Method::Spectral],
            &Schedule::default(),
            1e-3,
        )
        .unwrap();
        assert!(report.verdict);
        assert!((report.consensus - bc_pressure()).abs() < 1e-3);
        assert!(report.margin.margin > 0.0);
        let witness = report.variational_witness.unwrap();
        assert!(witness <= report.consensus + 1e-3);
        // random Markov measures stay below the consensus
        for seed in 0..20u64 {
            let p = 0.05 + 0.9 * ((seed as f64 * 0.618).fract());
            let mu = MarkovMeasure::bernoulli(&[p, 1.0 - p]).unwrap();
            let v = variational_lower_bound(&m, &phi, &mu).unwrap();
            assert!(v <= report.consensus + 1e-3, "p = {p}: {v}");
        }
    }

    #[test]
    fn constant_shift_covariance() {
        let m = doubling();
        let phi = Potential::constant(0.0);
        for c in [-1.0, 0.0, 1.0] {
            let report = cross_validate(
                &m,
                &phi.shifted(c),
                &[Method::PreimageSum, Method::PeriodicSum, Method::Spectral],
                &Schedule::default(),
                1e-3,
            )
            .unwrap();
            assert!(
                (report.consensus - (LN_2 + c)).abs() < 1e-6,
                "c = {c}: consensus {}",
                report.consensus
            );
        }
    }

    #[test]
    fn monotone_and_lipschitz_in_the_potential() {
        let m = tent();
        let lo = Potential::branch_constant(vec![0.0, -0.2]);
        let hi = Potential::branch_constant(vec![0.15, -0.05]);
        let sched = Schedule { preimage_n: (4, 10), periodic_n: (2, 8), ..Default::default() };
        for method in [Method::PreimageSum, Method::PeriodicSum, Method::Spectral] {
            let a = estimate(&m, &lo, method, &sched).unwrap().extrapolated;
            let b = estimate(&m, &hi, method, &sched).unwrap().extrapolated;
            assert!(a <= b + 1e-9, "{method:?}");
            // Lipschitz: |P(lo) - P(hi)| <= sup |lo - hi| = 0.15
            assert!((a - b).abs() <= 0.15 + 1e-9);
        }
    }

    #[test]
    fn conjugate_maps_share_pressure() {
        // h(x) = sin^2(pi x / 2) conjugates the tent map to the full
        // quadratic; pressures of matched potentials coincide
        let t = tent();
        let l = logistic();
        // psi on the quadratic side: identity; on the tent side:
        // psi(h(x)) = (1 - cos(pi x)) / 2
        let psi_log = Potential::affine(1.0, 0.0);
        let psi_tent =
            Potential::trig(0.5, vec![TrigTerm { harmonic: 1, cos_coeff: -0.5, sin_coeff: 0.0 }]);
        let methods = [Method::PreimageSum, Method::PeriodicSum];
        let sched_t = Schedule {
            preimage_n: (4, 14),
            periodic_n: (2, 10),
            x0: Some(1.0 / 3.0),
            ..Default::default()
        };
        let sched_l = Schedule {
            preimage_n: (4, 14),
            periodic_n: (2, 10),
            x0: Some(0.25), // h(1/3)
            ..Default::default()
        };
        let rt = cross_validate(&t, &psi_tent, &methods, &sched_t, 5e-3).unwrap();
        let rl = cross_validate(&l, &psi_log, &methods, &sched_l, 5e-3).unwrap();
        assert!(
            (rt.consensus - rl.consensus).abs() < 2e-3,
            "tent {} vs quadratic {}",
            rt.consensus,
            rl.consensus
        );
    }

    #[test]
    fn golden_markov_pressure_is_log_golden() {
        let m = golden_markov();
        let phi = Potential::constant(0.0);
        let sched = Schedule { periodic_n: (2, 12), preimage_n: (4, 14), ..Default::default() };
        let report = cross_validate(
            &m,
            &phi,
            &[Method::PreimageSum, Method::PeriodicSum, Method::Spectral],
            &sched,
            5e-2,
        )
        .unwrap();
        let golden = ((1.0 + 5.0_f64.sqrt()) / 2.0).ln();
        assert!((report.consensus - golden).abs() < 1e-2, "{}", report.consensus);
        // the Parry measure is an equilibrium witness for zero potential
        let g = (1.0 + 5.0_f64.sqrt()) / 2.0;
        let parry =
            MarkovMeasure::new(vec![vec![1.0 / g, 1.0 - 1.0 / g], vec![1.0, 0.0]]).unwrap();
        let v = variational_lower_bound(&m, &phi, &parry).unwrap();
        assert!((v - golden).abs() < 1e-10);
        assert!(v <= report.consensus + 1e-2);
    }

    #[test]
    fn missing_partition_is_not_markov() {
        let branches = vec![
            crate::maps::Branch::new(
                0,
                crate::maps::Interval::new(0.0, 0.5),
                crate::maps::BranchForm::Linear { slope: 2.0, intercept: 0.0 },
            ),
            crate::maps::Branch::new(
                1,
                crate::maps::Interval::new(0.5, 1.0),
                crate::maps::BranchForm::Linear { slope: 2.0, intercept: -1.0 },
            ),
        ];
        let m = PiecewiseMap::new("bare", crate::maps::Interval::new(0.0, 1.0), branches).unwrap();
        let mu = MarkovMeasure::bernoulli(&[0.5, 0.5]).unwrap();
        let err = variational_lower_bound(&m, &Potential::constant(0.0), &mu);
        assert!(matches!(err, Err(Error::NotMarkov { .. })));
    }
}
