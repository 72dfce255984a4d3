//! Enumeration of Per_n(f) = {p : f^n(p) = p} by one bracketed root per
//! monotone branch word, and the periodic partition function.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::maps::{forward_along_word, PiecewiseMap, TOL_DEDUP};
use crate::numerics::log_sum_exp;
use crate::potentials::{birkhoff_sum, Potential};
use crate::Result;

/// Multipliers this close to the unit circle are flagged as neutral; the
/// surrounding theory assumes hyperbolic repelling cycles.
pub const NEUTRAL_TOL: f64 = 1e-8;

/// A fixed point of f^n (period divides n, not necessarily prime).
#[derive(Clone, Debug, Serialize)]
pub struct PeriodicPoint {
    pub point: f64,
    /// The n solved for; the prime period divides it.
    pub period_dividing: usize,
    pub word: Vec<u8>,
    /// Df^n at the point, by the chain rule along the word branches.
    pub multiplier: f64,
}

impl PeriodicPoint {
    pub fn is_neutral(&self) -> bool {
        self.multiplier.abs() <= 1.0 + NEUTRAL_TOL
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicSet {
    pub n: usize,
    pub points: Vec<PeriodicPoint>,
    /// d^n - count, which records whether endpoint identification removed
    /// a root (full d-branch maps have d^n or d^n - 1 fixed points of f^n).
    pub full_shift_defect: i64,
}

impl PeriodicSet {
    pub fn neutral_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_neutral()).count()
    }
}

/// Enumerate the fixed points of f^n: for each admissible word, bisect
/// g(x) = f^n(x) - x on the word pullback (f^n evaluated along the word's
/// branches, so shared lap endpoints stay on the lap). Equal endpoint signs
/// mean the word contributes no root; roots within the dedup tolerance of
/// each other are merged, and a fixed right endpoint of an
/// endpoint-identified map is dropped in favor of the left one.
pub fn periodic_points(map: &PiecewiseMap, n: usize) -> Result<PeriodicSet> {
    if n > map.periodic_depth_cap {
        return Err(Error::DepthCapExceeded {
            op: "periodic_points",
            requested: n,
            cap: map.periodic_depth_cap,
        });
    }
    assert!(n >= 1);
    let words: Vec<(Vec<u8>, crate::maps::Interval)> = map.branch_words(n)?.collect();
    let mut roots: Vec<(f64, Vec<u8>)> = words
        .par_iter()
        .filter_map(|(word, pullback)| {
            bisect_word_root(map, word, pullback.lo, pullback.hi).map(|p| (p, word.clone()))
        })
        .collect();
    // words are produced in lexicographic order, which orders pullbacks
    // monotonically only for orientation-preserving maps; sort by point
    roots.sort_by(|a, b| a.0.total_cmp(&b.0));
    roots.dedup_by(|a, b| (a.0 - b.0).abs() <= TOL_DEDUP);
    if map.endpoints_identified
        && roots.len() >= 2
        && (roots.first().unwrap().0 - map.domain.lo).abs() <= TOL_DEDUP
        && (roots.last().unwrap().0 - map.domain.hi).abs() <= TOL_DEDUP
    {
        roots.pop();
    }
    let points: Vec<PeriodicPoint> = roots
        .into_iter()
        .map(|(p, word)| {
            let multiplier = word_multiplier(map, p, &word);
            PeriodicPoint { point: p, period_dividing: n, word, multiplier }
        })
        .collect();
    let d = map.branch_count() as i64;
    let full_shift_defect = d.pow(n as u32) - points.len() as i64;
    Ok(PeriodicSet { n, points, full_shift_defect })
}

/// At most one root of f^n(x) = x per monotone lap: sign-change bisection
/// refined to machine width.
fn bisect_word_root(map: &PiecewiseMap, word: &[u8], mut a: f64, mut b: f64) -> Option<f64> {
    let g = |x: f64| forward_along_word(map, x, word) - x;
    let mut ga = g(a);
    let gb = g(b);
    if ga == 0.0 {
        return Some(a);
    }
    if gb == 0.0 {
        return Some(b);
    }
    if (ga > 0.0) == (gb > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Some(mid);
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

fn word_multiplier(map: &PiecewiseMap, x: f64, word: &[u8]) -> f64 {
    let mut cur = x;
    let mut d = 1.0;
    for &b in word {
        let branch = &map.branches[b as usize];
        let clamped = branch.domain.clamp(cur);
        d *= branch.derivative(clamped);
        cur = branch.forward(clamped);
    }
    d
}

/// log sum over Per_n(f) of exp(S_n(phi)(p)); (1/n) of this is the n-th
/// periodic pressure iterate.
pub fn log_partition_periodic(
    map: &PiecewiseMap,
    potential: &Potential,
    n: usize,
) -> Result<f64> {
    let set = periodic_points(map, n)?;
    log_partition_over(map, potential, &set)
}

/// Partition function over an already-enumerated periodic set.
pub fn log_partition_over(
    map: &PiecewiseMap,
    potential: &Potential,
    set: &PeriodicSet,
) -> Result<f64> {
    if set.points.is_empty() {
        return Err(Error::EmptyPeriodicSet { n: set.n });
    }
    let weights: Vec<f64> = set
        .points
        .iter()
        .map(|p| birkhoff_sum(map, potential, p.point, set.n))
        .collect::<Result<_>>()?;
    Ok(log_sum_exp(&weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{doubling, full_linear3, golden_markov, tent};

    #[test]
    fn doubling_period_two_points() {
        let set = periodic_points(&doubling(), 2).unwrap();
        let pts: Vec<f64> = set.points.iter().map(|p| p.point).collect();
        assert_eq!(pts.len(), 3);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0];
        for (p, e) in pts.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
        assert_eq!(set.full_shift_defect, 1);
    }

    #[test]
    fn tent_fixed_points() {
        let set = periodic_points(&tent(), 1).unwrap();
        let pts: Vec<f64> = set.points.iter().map(|p| p.point).collect();
        assert_eq!(pts.len(), 2);
        assert!((pts[0] - 0.0).abs() < 1e-12);
        assert!((pts[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_counts_are_full_shift_minus_one() {
        let m = doubling();
        for n in 1..=12 {
            let set = periodic_points(&m, n).unwrap();
            assert_eq!(set.points.len(), (1usize << n) - 1, "n = {n}");
            assert_eq!(set.full_shift_defect, 1);
        }
    }

    #[test]
    fn tent_counts_are_full_shift() {
        let m = tent();
        for n in 1..=10 {
            let set = periodic_points(&m, n).unwrap();
            assert_eq!(set.points.len(), 1usize << n, "n = {n}");
            assert_eq!(set.full_shift_defect, 0);
        }
    }

    #[test]
    fn linear3_counts() {
        let m = full_linear3();
        for n in 1..=6 {
            let set = periodic_points(&m, n).unwrap();
            let expect = 3usize.pow(n as u32);
            // endpoints 0 and 1 are both fixed and not identified
            assert_eq!(set.points.len(), expect, "n = {n}");
        }
    }

    #[test]
    fn golden_markov_counts_follow_the_trace_formula() {
        // trace of [[1,1],[1,0]]^n: 1, 3, 4, 7, 11, 18, 29, 47
        let lucas = [1usize, 3, 4, 7, 11, 18, 29, 47];
        let m = golden_markov();
        for (i, &expect) in lucas.iter().enumerate() {
            let n = i + 1;
            let set = periodic_points(&m, n).unwrap();
            assert_eq!(set.points.len(), expect, "n = {n}");
        }
    }

    #[test]
    fn periodicity_closure() {
        for m in [doubling(), tent(), golden_markov()] {
            let set = periodic_points(&m, 7).unwrap();
            for p in &set.points {
                let back = forward_along_word(&m, p.point, &p.word);
                assert!((back - p.point).abs() <= 1e-9, "map {}", m.name);
            }
        }
    }

    #[test]
    fn words_match_itineraries_for_interior_points() {
        let m = doubling();
        let set = periodic_points(&m, 6).unwrap();
        for p in &set.points {
            if p.point > 1e-9 && p.point < 1.0 - 1e-9 {
                assert_eq!(m.itinerary(p.point, 6).unwrap(), p.word);
            }
        }
    }

    #[test]
    fn doubling_multipliers_are_two_to_the_n() {
        let set = periodic_points(&doubling(), 5).unwrap();
        for p in &set.points {
            assert!((p.multiplier - 32.0).abs() < 1e-9);
            assert!(!p.is_neutral());
        }
    }

    #[test]
    fn at_most_one_root_per_lap() {
        for m in [doubling(), tent(), full_linear3()] {
            for n in [3usize, 6] {
                let words = m.branch_words(n).unwrap().count();
                let set = periodic_points(&m, n).unwrap();
                assert!(set.points.len() <= words);
            }
        }
    }

    #[test]
    fn partition_zero_potential_counts_points() {
        let m = doubling();
        let z = log_partition_periodic(&m, &Potential::constant(0.0), 8).unwrap();
        assert!((z - 255.0_f64.ln()).abs() < 1e-10, "z = {z}");
    }

    #[test]
    fn partition_constant_shift_factors_out() {
        let m = doubling();
        let c = -0.45;
        let z = log_partition_periodic(&m, &Potential::constant(c), 8).unwrap();
        assert!((z - (8.0 * c + 255.0_f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn partition_branch_constant_vs_trace_formula() {
        // sum over all binary words of the product weight is
        // (e^a + e^b)^n; the dropped all-ones root at x = 1 removes e^{nb}
        let m = doubling();
        let (a, b) = (0.2, -0.3);
        let phi = Potential::branch_constant(vec![a, b]);
        for n in [6usize, 10] {
            let z = log_partition_periodic(&m, &phi, n).unwrap();
            let full = (a.exp() + b.exp()).powi(n as i32);
            let closed = (full - (n as f64 * b).exp()).ln();
            assert!((z - closed).abs() < 1e-9, "n = {n}: {z} vs {closed}");
            // coarse bound quoted for the iterate sequence
            let p = (a.exp() + b.exp()).ln();
            assert!((z / n as f64 - p).abs() <= 2e-2);
        }
    }

    #[test]
    fn partition_monotone_in_the_potential() {
        let m = tent();
        let lo = Potential::branch_constant(vec![0.1, -0.2]);
        let hi = Potential::branch_constant(vec![0.3, -0.1]);
        for n in [2usize, 5, 8] {
            let zl = log_partition_periodic(&m, &lo, n).unwrap();
            let zh = log_partition_periodic(&m, &hi, n).unwrap();
            assert!(zl <= zh + 1e-9);
        }
    }

    #[test]
    fn depth_cap_applies() {
        let m = doubling();
        assert!(matches!(
            periodic_points(&m, 15),
            Err(Error::DepthCapExceeded { .. })
        ));
    }

    #[test]
    fn all_log_weights_finite() {
        let m = golden_markov();
        let phi = Potential::branch_constant(vec![0.7, -1.1]);
        for n in 1..=8 {
            let set = periodic_points(&m, n).unwrap();
            for p in &set.points {
                let w = birkhoff_sum(&m, &phi, p.point, n).unwrap();
                assert!(w.is_finite());
            }
        }
    }
}
