//! Iterated preimage trees f^{-n}(x0) carrying Birkhoff log-weights, the
//! preimage partition function, pull-back components of intervals, and the
//! shrinking-rate diagnostic.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::maps::{Interval, PiecewiseMap};
use crate::numerics::{affine_fit, log_sum_exp};
use crate::potentials::Potential;
use crate::Result;

/// Default cap on materialized tree nodes.
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PruningPolicy {
    /// Keep every node; exceeding the budget is an error.
    None,
    /// Drop nodes whose best-possible completed weight falls more than
    /// `delta` nats below the running maximum.
    Threshold { delta: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct PruningReport {
    pub policy: String,
    pub discarded_count: usize,
    /// Upper bound, in log space, on the exponential mass the discarded
    /// subtrees could have contributed at full depth.
    pub discarded_log_mass_bound: f64,
}

impl PruningReport {
    pub fn none() -> Self {
        PruningReport {
            policy: "none".into(),
            discarded_count: 0,
            discarded_log_mass_bound: f64::NEG_INFINITY,
        }
    }
}

/// One level of the breadth-first inverse orbit: the points of f^{-k}(x0)
/// and, for each requested potential, the accumulated sums S_k(phi)(y).
pub struct Level {
    pub depth: usize,
    pub points: Vec<f64>,
    pub sums: Vec<Vec<f64>>,
}

/// Breadth-first expansion of iterated preimages, streaming one level at a
/// time so that pressure iterates at depth n never materialize the whole
/// tree. The first potential drives the pruning policy; additional
/// potentials ride along with their own accumulated sums.
///
/// Levels are expanded branch-parallel but children are kept in
/// (parent-order, branch-id) order, so results do not depend on the worker
/// count.
pub fn walk_preimage_levels<F>(
    map: &PiecewiseMap,
    potentials: &[&Potential],
    x0: f64,
    n_max: usize,
    budget: usize,
    policy: PruningPolicy,
    mut visit: F,
) -> Result<PruningReport>
where
    F: FnMut(&Level),
{
    map.evaluate(x0, 0)?;
    let sup_phi = potentials
        .first()
        .map(|p| p.sampled_range(map, 4096).1)
        .unwrap_or(0.0);
    let k = potentials.len();
    let mut points = vec![x0];
    let mut sums = vec![vec![0.0]; k];
    let mut discarded = 0usize;
    let mut discarded_bounds: Vec<f64> = Vec::new();
    let d = map.branch_count() as f64;

    for depth in 1..=n_max {
        let expanded: Vec<(Vec<f64>, Vec<Vec<f64>>)> = points
            .par_iter()
            .enumerate()
            .map(|(i, &parent)| {
                let pre = map.preimages_one_step(parent)?;
                let mut pts = Vec::with_capacity(pre.len());
                let mut acc = vec![Vec::with_capacity(pre.len()); k];
                for (y, _) in pre {
                    pts.push(y);
                    for (j, pot) in potentials.iter().enumerate() {
                        acc[j].push(pot.eval(map, y) + sums[j][i]);
                    }
                }
                Ok((pts, acc))
            })
            .collect::<Result<_>>()?;

        let mut next_points = Vec::new();
        let mut next_sums = vec![Vec::new(); k];
        for (pts, acc) in expanded {
            next_points.extend(pts);
            for j in 0..k {
                next_sums[j].extend(acc[j].iter().copied());
            }
        }

        if let PruningPolicy::Threshold { delta } = policy {
            if !next_points.is_empty() && k > 0 {
                let remaining = (n_max - depth) as f64;
                let best = next_sums[0]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
                    + remaining * sup_phi;
                let keep: Vec<bool> = next_sums[0]
                    .iter()
                    .map(|&w| w + remaining * sup_phi >= best - delta)
                    .collect();
                for (i, &k) in keep.iter().enumerate() {
                    if !k {
                        discarded += 1;
                        discarded_bounds
                            .push(next_sums[0][i] + remaining * (sup_phi + d.ln()));
                    }
                }
                let mut idx = 0;
                next_points.retain(|_| {
                    let k = keep[idx];
                    idx += 1;
                    k
                });
                for s in next_sums.iter_mut() {
                    let mut idx = 0;
                    s.retain(|_| {
                        let k = keep[idx];
                        idx += 1;
                        k
                    });
                }
            }
        }

        if next_points.len() > budget {
            return Err(Error::NodeBudgetExceeded { budget, depth });
        }

        points = next_points;
        sums = next_sums;
        visit(&Level { depth, points: points.clone(), sums: sums.clone() });
    }

    Ok(PruningReport {
        policy: match policy {
            PruningPolicy::None => "none".into(),
            PruningPolicy::Threshold { delta } => format!("threshold:{delta}"),
        },
        discarded_count: discarded,
        discarded_log_mass_bound: log_sum_exp(&discarded_bounds),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TreeNode {
    pub point: f64,
    /// Forward itinerary of the node down to the root: applying the
    /// inverse branches of the word to x0, deepest symbol first,
    /// reproduces the point.
    pub word: Vec<u8>,
    /// S_n(phi) accumulated along the forward orbit of the node.
    pub log_weight: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PreimageTree {
    pub root: f64,
    pub depth: usize,
    pub nodes: Vec<TreeNode>,
    pub pruning: PruningReport,
}

/// Materialized breadth-first inverse tree of depth n with exact S_n(phi)
/// weights. All-or-nothing on the node budget unless the policy prunes.
pub fn backward_orbit(
    map: &PiecewiseMap,
    potential: &Potential,
    x0: f64,
    n: usize,
    policy: PruningPolicy,
) -> Result<PreimageTree> {
    backward_orbit_with_budget(map, potential, x0, n, policy, DEFAULT_NODE_BUDGET)
}

pub fn backward_orbit_with_budget(
    map: &PiecewiseMap,
    potential: &Potential,
    x0: f64,
    n: usize,
    policy: PruningPolicy,
    budget: usize,
) -> Result<PreimageTree> {
    assert!(n >= 1);
    map.evaluate(x0, 0)?;
    let sup_phi = potential.sampled_range(map, 4096).1;
    let d = map.branch_count() as f64;
    let mut nodes = vec![TreeNode { point: x0, word: Vec::new(), log_weight: 0.0 }];
    let mut discarded = 0usize;
    let mut discarded_bounds: Vec<f64> = Vec::new();

    for depth in 1..=n {
        let mut next: Vec<TreeNode> = nodes
            .par_iter()
            .map(|parent| {
                let pre = map.preimages_one_step(parent.point)?;
                let children: Vec<TreeNode> = pre
                    .into_iter()
                    .map(|(y, branch)| {
                        let mut word = Vec::with_capacity(parent.word.len() + 1);
                        word.push(branch as u8);
                        word.extend_from_slice(&parent.word);
                        TreeNode {
                            point: y,
                            word,
                            log_weight: potential.eval(map, y) + parent.log_weight,
                        }
                    })
                    .collect();
                Ok(children)
            })
            .collect::<Result<Vec<Vec<TreeNode>>>>()?
            .into_iter()
            .flatten()
            .collect();

        if let PruningPolicy::Threshold { delta } = policy {
            let remaining = (n - depth) as f64;
            let best = next
                .iter()
                .map(|t| t.log_weight)
                .fold(f64::NEG_INFINITY, f64::max)
                + remaining * sup_phi;
            next.retain(|t| {
                let completed = t.log_weight + remaining * sup_phi;
                if completed >= best - delta {
                    true
                } else {
                    discarded += 1;
                    discarded_bounds.push(completed + remaining * d.ln());
                    false
                }
            });
        }

        if next.len() > budget {
            return Err(Error::NodeBudgetExceeded { budget, depth });
        }
        nodes = next;
    }

    // deterministic order regardless of scheduling: sort by word
    nodes.sort_by(|a, b| a.word.cmp(&b.word));
    Ok(PreimageTree {
        root: x0,
        depth: n,
        nodes,
        pruning: PruningReport {
            policy: match policy {
                PruningPolicy::None => "none".into(),
                PruningPolicy::Threshold { delta } => format!("threshold:{delta}"),
            },
            discarded_count: discarded,
            discarded_log_mass_bound: log_sum_exp(&discarded_bounds),
        },
    })
}

/// log sum over nodes of exp(S_n(phi)), max-shifted. (1/n) of this is the
/// n-th preimage pressure iterate.
pub fn log_partition_preimage(tree: &PreimageTree) -> Result<f64> {
    if tree.nodes.is_empty() {
        return Err(Error::EmptyTree);
    }
    let weights: Vec<f64> = tree.nodes.iter().map(|t| t.log_weight).collect();
    Ok(log_sum_exp(&weights))
}

/// Connected components of f^{-n}(target), each returned as an interval.
/// Word pullbacks whose closures touch are merged: the shrinking condition
/// measures components, not monotone laps.
pub fn pullback_components(
    map: &PiecewiseMap,
    target: Interval,
    n: usize,
) -> Result<Vec<Interval>> {
    if n > map.depth_cap {
        return Err(Error::DepthCapExceeded {
            op: "pullback_components",
            requested: n,
            cap: map.depth_cap,
        });
    }
    if n == 0 {
        return Ok(vec![target]);
    }
    let mut pieces: Vec<Interval> = Vec::new();
    for (word, _) in map.branch_words(n)? {
        // pull target back through the word, deepest symbol first
        let mut cur = target;
        let mut alive = true;
        for &b in word.iter().rev() {
            let branch = &map.branches[b as usize];
            let img = branch.image();
            let cut = match cur.intersect(&img) {
                Some(c) => c,
                None => {
                    alive = false;
                    break;
                }
            };
            let a = branch.inverse(cut.lo)?;
            let bq = branch.inverse(cut.hi)?;
            match (a, bq) {
                (Some(p), Some(q)) => {
                    cur = Interval::new(p.min(q), p.max(q));
                }
                _ => {
                    alive = false;
                    break;
                }
            }
        }
        if alive && cur.len() > 0.0 {
            pieces.push(cur);
        }
    }
    pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut merged: Vec<Interval> = Vec::new();
    for p in pieces {
        match merged.last_mut() {
            Some(last) if p.lo <= last.hi + 1e-10 => {
                last.hi = last.hi.max(p.hi);
            }
            _ => merged.push(p),
        }
    }
    // endpoint check: f^n maps each component into the target closure
    for c in &merged {
        for e in [c.lo, c.hi, c.midpoint()] {
            let y = map.evaluate(e, n)?;
            if y < target.lo - 1e-9 || y > target.hi + 1e-9 {
                return Err(Error::Config(format!(
                    "pullback_components: f^{n}({e}) = {y} escapes the target {target}"
                )));
            }
        }
    }
    Ok(merged)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DecayLaw {
    Exponential,
    Polynomial,
}

/// Fit report for the per-depth maximal pullback diameters.
#[derive(Clone, Debug, Serialize)]
pub struct ShrinkingReport {
    pub radius: f64,
    pub centers: Vec<f64>,
    /// max over centers and components of diam(component) at depth n,
    /// indexed by n = 1..=n_max.
    pub max_diameters: Vec<f64>,
    pub law: DecayLaw,
    /// Exponential decay rate (diam ~ C exp(-rate n)) when exponential
    /// fits better.
    pub rate: f64,
    /// Polynomial exponent (diam ~ C0 n^-beta) when polynomial fits
    /// better.
    pub beta_hat: f64,
    pub c0_estimate: f64,
    pub exp_residual: f64,
    pub poly_residual: f64,
    /// True when the fitted decay evidences the shrinking hypothesis
    /// (polynomial exponent > 1, or outright exponential decay).
    pub hypothesis_evidenced: bool,
}

/// Measure max component diameters of f^{-n}(B(c, rho0)) over a grid of
/// centers and fit exponential vs polynomial decay on the top half of the
/// depth range (the condition is asymptotic; early depths are transient).
pub fn shrinking_diagnostic(
    map: &PiecewiseMap,
    rho0: f64,
    centers: &[f64],
    n_max: usize,
) -> Result<ShrinkingReport> {
    assert!(rho0 > 0.0);
    let mut max_diameters = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut worst = 0.0_f64;
        for &c in centers {
            let ball = Interval::new(
                (c - rho0).max(map.domain.lo),
                (c + rho0).min(map.domain.hi),
            );
            for comp in pullback_components(map, ball, n)? {
                worst = worst.max(comp.len());
            }
        }
        max_diameters.push(worst);
    }
    let fit_from = n_max / 2;
    let ns: Vec<f64> = (fit_from..n_max).map(|i| (i + 1) as f64).collect();
    let logs: Vec<f64> = (fit_from..n_max).map(|i| max_diameters[i].ln()).collect();
    let (exp_icpt, exp_slope, exp_res) = affine_fit(&ns, &logs);
    let lns: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let (poly_icpt, poly_slope, poly_res) = affine_fit(&lns, &logs);
    let law = if exp_res <= poly_res { DecayLaw::Exponential } else { DecayLaw::Polynomial };
    let rate = -exp_slope;
    let beta_hat = -poly_slope;
    let c0_estimate = match law {
        DecayLaw::Exponential => exp_icpt.exp(),
        DecayLaw::Polynomial => poly_icpt.exp(),
    };
    let hypothesis_evidenced = match law {
        DecayLaw::Exponential => rate > 0.0,
        DecayLaw::Polynomial => beta_hat > 1.0,
    };
    Ok(ShrinkingReport {
        radius: rho0,
        centers: centers.to_vec(),
        max_diameters,
        law,
        rate,
        beta_hat,
        c0_estimate,
        exp_residual: exp_res,
        poly_residual: poly_res,
        hypothesis_evidenced,
    })
}
