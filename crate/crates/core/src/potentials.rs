//! Hölder observables on map domains: Birkhoff sums, the averaging
//! (sharpening) transform, and the hyperbolicity margin.

use std::fmt;
use std::sync::Arc;

use crate::maps::PiecewiseMap;
use crate::Result;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Closed-form observable families plus a generic descriptor. Evaluation
/// may depend on the map (branch-constant tables, averaged potentials), so
/// every evaluator takes the map as an argument.
#[derive(Clone)]
pub enum PotentialKind {
    Constant(f64),
    Affine { slope: f64, intercept: f64 },
    /// One value per branch; the left-closed branch convention decides
    /// values at joints.
    BranchConstant(Vec<f64>),
    /// offset + sum of a*cos(k*pi*u) + b*sin(k*pi*u) with u the
    /// domain-normalized coordinate.
    Trig { offset: f64, terms: Vec<TrigTerm> },
    /// (1/N) S_N(base): same equilibrium states, flattened Birkhoff sums.
    Averaged { base: Arc<Potential>, window: usize },
    /// Linear combination sum of coeff * base.
    Combination(Vec<(f64, Arc<Potential>)>),
    Custom(RealFn),
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrigTerm {
    pub harmonic: u32,
    pub cos_coeff: f64,
    pub sin_coeff: f64,
}

/// A Hölder observable with exponent metadata.
#[derive(Clone)]
pub struct Potential {
    pub name: String,
    pub kind: PotentialKind,
    pub hoelder_exponent: f64,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Potential({})", self.name)
    }
}

impl Potential {
    pub fn constant(c: f64) -> Self {
        Potential { name: format!("const:{c}"), kind: PotentialKind::Constant(c), hoelder_exponent: 1.0 }
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        Potential {
            name: format!("affine:{slope},{intercept}"),
            kind: PotentialKind::Affine { slope, intercept },
            hoelder_exponent: 1.0,
        }
    }

    pub fn branch_constant(values: Vec<f64>) -> Self {
        let name = format!(
            "branch:{}",
            values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        Potential { name, kind: PotentialKind::BranchConstant(values), hoelder_exponent: 1.0 }
    }

    pub fn trig(offset: f64, terms: Vec<TrigTerm>) -> Self {
        Potential { name: "trig".into(), kind: PotentialKind::Trig { offset, terms }, hoelder_exponent: 1.0 }
    }

    pub fn custom(name: impl Into<String>, f: RealFn) -> Self {
        Potential { name: name.into(), kind: PotentialKind::Custom(f), hoelder_exponent: 1.0 }
    }

    /// phi + t * psi, preserving branch-constant structure when both sides
    /// have it (the factorized oracle paths key off that).
    pub fn combine(&self, coeff: f64, other: &Potential) -> Potential {
        Potential {
            name: format!("{} + {}*{}", self.name, coeff, other.name),
            kind: PotentialKind::Combination(vec![
                (1.0, Arc::new(self.clone())),
                (coeff, Arc::new(other.clone())),
            ]),
            hoelder_exponent: self.hoelder_exponent.min(other.hoelder_exponent),
        }
    }

    pub fn shifted(&self, c: f64) -> Potential {
        self.combine(1.0, &Potential::constant(c))
    }

    pub fn eval(&self, map: &PiecewiseMap, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Constant(c) => *c,
            PotentialKind::Affine { slope, intercept } => slope * x + intercept,
            PotentialKind::BranchConstant(values) => {
                let idx = map.branch_index(x).unwrap_or(0);
                values[idx.min(values.len() - 1)]
            }
            PotentialKind::Trig { offset, terms } => {
                let u = (x - map.domain.lo) / map.domain.len();
                let mut acc = *offset;
                for t in terms {
                    let arg = std::f64::consts::PI * t.harmonic as f64 * u;
                    acc += t.cos_coeff * arg.cos() + t.sin_coeff * arg.sin();
                }
                acc
            }
            PotentialKind::Averaged { base, window } => {
                let mut acc = 0.0;
                let mut cur = x;
                for _ in 0..*window {
                    acc += base.eval(map, cur);
                    cur = map.evaluate(cur, 1).unwrap_or(cur);
                }
                acc / *window as f64
            }
            PotentialKind::Combination(terms) => {
                terms.iter().map(|(c, p)| c * p.eval(map, x)).sum()
            }
            PotentialKind::Custom(f) => f(x),
        }
    }

    /// Per-branch value table when the potential is exactly constant on
    /// every branch. This is the hook for the factorized oracle paths.
    pub fn as_branch_values(&self, map: &PiecewiseMap) -> Option<Vec<f64>> {
        match &self.kind {
            PotentialKind::Constant(c) => Some(vec![*c; map.branch_count()]),
            PotentialKind::BranchConstant(values) => {
                if values.len() == map.branch_count() {
                    Some(values.clone())
                } else {
                    None
                }
            }
            PotentialKind::Combination(terms) => {
                let mut acc = vec![0.0; map.branch_count()];
                for (coeff, p) in terms {
                    let vals = p.as_branch_values(map)?;
                    for (a, v) in acc.iter_mut().zip(vals) {
                        *a += coeff * v;
                    }
                }
                Some(acc)
            }
            _ => None,
        }
    }

    /// Range of the potential over a sampling grid (plus branch values when
    /// exact); used for sup/inf bounds in screens and pruning.
    pub fn sampled_range(&self, map: &PiecewiseMap, grid_size: usize) -> (f64, f64) {
        if let Some(values) = self.as_branch_values(map) {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            return (lo, hi);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..grid_size {
            let x = map.domain.lo + map.domain.len() * (i as f64 + 0.5) / grid_size as f64;
            let v = self.eval(map, x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        for x in [map.domain.lo, map.domain.hi] {
            let v = self.eval(map, x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// S_n(phi)(x) = sum of phi along the first n orbit points.
pub fn birkhoff_sum(map: &PiecewiseMap, potential: &Potential, x: f64, n: usize) -> Result<f64> {
    let mut acc = 0.0;
    let mut cur = x;
    map.evaluate(cur, 0)?;
    for _ in 0..n {
        acc += potential.eval(map, cur);
        cur = map.evaluate(cur, 1)?;
    }
    Ok(acc)
}

/// The averaging transform (1/N) S_N(phi). For N = 1 the result evaluates
/// pointwise identically to the input; the Hölder exponent tag is carried
/// over unchanged.
pub fn sharpen(map: &PiecewiseMap, potential: &Potential, window: usize) -> Potential {
    assert!(window >= 1);
    let _ = map;
    if window == 1 {
        return potential.clone();
    }
    Potential {
        name: format!("avg{window}({})", potential.name),
        kind: PotentialKind::Averaged { base: Arc::new(potential.clone()), window },
        hoelder_exponent: potential.hoelder_exponent,
    }
}

/// Hyperbolicity margin report: pressure minus the largest observed
/// Birkhoff average of the potential.
#[derive(Clone, Debug, serde::Serialize)]
pub struct MarginReport {
    pub margin: f64,
    pub sup_birkhoff_average: f64,
    pub pressure_estimate: f64,
    pub n: usize,
    pub grid_size: usize,
    pub extra_points: usize,
}

/// Margin = pressure_estimate - sup over the grid (and any supplied extra
/// points, typically enumerated periodic points) of (1/n) S_n(phi).
///
/// The sup is a lower bound on the true supremum up to grid resolution, so
/// a positive margin is evidence, not proof, that the potential is
/// hyperbolic.
pub fn hyperbolicity_margin(
    map: &PiecewiseMap,
    potential: &Potential,
    pressure_estimate: f64,
    n: usize,
    grid_size: usize,
    extra_points: &[f64],
) -> Result<MarginReport> {
    assert!(n >= 1);
    let mut sup = f64::NEG_INFINITY;
    let mut scan = |x: f64| -> Result<()> {
        let avg = birkhoff_sum(map, potential, x, n)? / n as f64;
        if avg > sup {
            sup = avg;
        }
        Ok(())
    };
    for i in 0..grid_size {
        let x = map.domain.lo + map.domain.len() * i as f64 / (grid_size.max(2) - 1) as f64;
        scan(x)?;
    }
    for &x in extra_points {
        scan(x)?;
    }
    Ok(MarginReport {
        margin: pressure_estimate - sup,
        sup_birkhoff_average: sup,
        pressure_estimate,
        n,
        grid_size,
        extra_points: extra_points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{doubling, tent};

    #[test]
    fn birkhoff_fixed_point_at_zero() {
        let m = doubling();
        let phi = Potential::affine(1.0, 0.0);
        assert_eq!(birkhoff_sum(&m, &phi, 0.0, 5).unwrap(), 0.0);
    }

    #[test]
    fn birkhoff_constant_potential() {
        let m = tent();
        let phi = Potential::constant(1.0);
        assert_eq!(birkhoff_sum(&m, &phi, 0.3, 7).unwrap(), 7.0);
    }

    #[test]
    fn birkhoff_period_two_orbit() {
        let m = doubling();
        let phi = Potential::affine(1.0, 0.0);
        // 1/3 -> 2/3 -> 1/3: S_2 = 1
        let s = birkhoff_sum(&m, &phi, 1.0 / 3.0, 2).unwrap();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sharpen_window_one_is_identity() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let sharp = sharpen(&m, &phi, 1);
        for x in [0.1, 0.3, 0.7, 0.95] {
            assert_eq!(sharp.eval(&m, x), phi.eval(&m, x));
        }
    }

    #[test]
    fn sharpen_branch_constant_by_hand() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let sharp = sharpen(&m, &phi, 2);
        // orbit of 0.1: 0.1, 0.2 -- both in the left branch
        assert!((sharp.eval(&m, 0.1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sharpen_constant_stays_constant() {
        let m = tent();
        let phi = Potential::constant(-0.7);
        let sharp = sharpen(&m, &phi, 5);
        for x in [0.0, 0.21, 0.5, 0.99] {
            assert!((sharp.eval(&m, x) + 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn margin_of_zero_potential_is_pressure() {
        let m = doubling();
        let phi = Potential::constant(0.0);
        let p = std::f64::consts::LN_2;
        let r = hyperbolicity_margin(&m, &phi, p, 8, 100, &[]).unwrap();
        assert!((r.margin - p).abs() < 1e-14);
    }

    #[test]
    fn margin_boundary_case_constant_log2() {
        // with the pressure estimate held at log 2, shifting the potential
        // up by log 2 pushes the margin to the boundary
        let m = doubling();
        let phi = Potential::constant(std::f64::consts::LN_2);
        let r = hyperbolicity_margin(&m, &phi, std::f64::consts::LN_2, 8, 100, &[]).unwrap();
        assert!(r.margin.abs() < 1e-12);
    }

    #[test]
    fn margin_branch_constant_vs_word_brute_force() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let pressure = (0.2_f64.exp() + (-0.3_f64).exp()).ln();
        let n = 12;
        // brute force: the maximal average over all 2^12 words is the max
        // branch value (the all-zeros word)
        let mut best = f64::NEG_INFINITY;
        for w in 0..(1_u32 << n) {
            let mut s = 0.0;
            for i in 0..n {
                s += if w >> i & 1 == 0 { 0.2 } else { -0.3 };
            }
            best = best.max(s / n as f64);
        }
        assert!((best - 0.2).abs() < 1e-12);
        // the grid point x = 0 has the all-zeros itinerary, so the scan
        // attains the brute-force sup exactly
        let r = hyperbolicity_margin(&m, &phi, pressure, n, 1000, &[]).unwrap();
        assert!((r.sup_birkhoff_average - best).abs() < 1e-12);
        assert!((r.margin - (pressure - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn cocycle_additivity() {
        let m = tent();
        let phi = Potential::trig(
            0.3,
            vec![TrigTerm { harmonic: 2, cos_coeff: 0.4, sin_coeff: -0.1 }],
        );
        let mut x = 0.137;
        for (mm, nn) in [(3usize, 5usize), (1, 20), (10, 10), (7, 2)] {
            let lhs = birkhoff_sum(&m, &phi, x, mm + nn).unwrap();
            let mid = m.evaluate(x, mm).unwrap();
            let rhs = birkhoff_sum(&m, &phi, x, mm).unwrap() + birkhoff_sum(&m, &phi, mid, nn).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
            x = m.evaluate(x, 1).unwrap();
        }
    }

    #[test]
    fn constant_shift_exact() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.5, -0.1]);
        let shifted = phi.shifted(0.75);
        for x in [0.05, 0.4, 0.81] {
            let a = birkhoff_sum(&m, &phi, x, 9).unwrap();
            let b = birkhoff_sum(&m, &shifted, x, 9).unwrap();
            assert!((b - (a + 9.0 * 0.75)).abs() < 1e-12);
        }
    }

    #[test]
    fn sharpening_sum_bound() {
        // sup |S_n(avg) - S_n(phi)| <= (N-1)(sup phi - inf phi)
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        for window in [2usize, 4] {
            let sharp = sharpen(&m, &phi, window);
            let bound = (window as f64 - 1.0) * (0.2 - (-0.3));
            for n in [1usize, 10, 25, 50] {
                let mut worst = 0.0_f64;
                for i in 0..1000 {
                    let x = (i as f64 + 0.5) / 1000.0;
                    let a = birkhoff_sum(&m, &sharp, x, n).unwrap();
                    let b = birkhoff_sum(&m, &phi, x, n).unwrap();
                    worst = worst.max((a - b).abs());
                }
                assert!(worst <= bound + 1e-10, "n = {n}, worst = {worst}, bound = {bound}");
            }
        }
    }

    #[test]
    fn combination_preserves_branch_tables() {
        let m = doubling();
        let phi = Potential::branch_constant(vec![0.2, -0.3]);
        let psi = Potential::branch_constant(vec![0.0, 1.0]);
        let combo = phi.combine(2.0, &psi);
        let table = combo.as_branch_values(&m).unwrap();
        assert!((table[0] - 0.2).abs() < 1e-15);
        assert!((table[1] - 1.7).abs() < 1e-15);
        let aff = Potential::affine(1.0, 0.0);
        assert!(phi.combine(1.0, &aff).as_branch_values(&m).is_none());
    }
}
