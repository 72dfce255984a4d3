//! Collocation discretization of the transfer operator
//! L(h)(x) = sum over preimages y of exp(phi(y)) h(y), its leading
//! eigendata (pressure, equilibrium density, conformal measure), and the
//! operator identities: normalized-iterate growth, the conformal property,
//! and the duality between the normalized operator and its conformal
//! measure.
//!
//! Midpoint collocation keeps the matrix assembly exact for piecewise
//! linear maps with branch-constant potentials, which are the oracle
//! cases; everything else converges at O(1/m).

use rayon::prelude::*;
use serde::Serialize;

use crate::backward::{walk_preimage_levels, PruningPolicy, DEFAULT_NODE_BUDGET};
use crate::error::Error;
use crate::maps::{Interval, PiecewiseMap};
use crate::numerics::log_sum_exp;
use crate::potentials::Potential;
use crate::Result;

/// Sparse row-major collocation matrix: entry (i, j) is the mass sent from
/// cell j to cell i, i.e. the sum of exp(phi(y)) over preimages y of the
/// i-th cell midpoint that land in cell j.
#[derive(Clone, Debug)]
pub struct TransferDiscretization {
    pub m: usize,
    pub domain: Interval,
    pub potential_name: String,
    pub rows: Vec<Vec<(u32, f64)>>,
    /// Strong connectivity of the interval cover graph (edge i -> k when
    /// f(cell i) overlaps cell k with positive length). This tests the
    /// declared topological exactness of the map itself; the midpoint
    /// matrix graph can drop edges at exact cell-boundary preimages and at
    /// near-critical cells whose image is shorter than one cell.
    pub cover_connected: bool,
}

impl TransferDiscretization {
    pub fn cell_width(&self) -> f64 {
        self.domain.len() / self.m as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.domain.lo + self.cell_width() * (i as f64 + 0.5)
    }

    pub fn cell_interval(&self, i: usize) -> Interval {
        let w = self.cell_width();
        Interval::new(self.domain.lo + w * i as f64, self.domain.lo + w * (i + 1) as f64)
    }

    /// Left-closed cell index of x.
    pub fn cell_of(&self, x: f64) -> usize {
        let idx = ((x - self.domain.lo) / self.cell_width()).floor() as isize;
        idx.clamp(0, self.m as isize - 1) as usize
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * h[j as usize]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[j as usize] += w * mu[i];
            }
        }
        out
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, w)| w).sum()
    }

    /// Strong connectivity of the mass-transport graph.
    pub fn is_irreducible(&self) -> bool {
        let forward = self.reach(false);
        let backward = self.reach(true);
        forward.iter().all(|&r| r) && backward.iter().all(|&r| r)
    }

    fn reach(&self, transpose: bool) -> Vec<bool> {
        // adjacency: edge j -> i for entry (i, j); reach from node 0
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); self.m];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                if w > 0.0 {
                    if transpose {
                        adj[i as usize].push(j);
                    } else {
                        adj[j as usize].push(i as u32);
                    }
                }
            }
        }
        let mut seen = vec![false; self.m];
        let mut stack = vec![0u32];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v as usize] {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }
}

/// Assemble the collocation matrix on m uniform cells.
pub fn build_discretization(
    map: &PiecewiseMap,
    potential: &Potential,
    m: usize,
) -> Result<TransferDiscretization> {
    assert!(m >= 16, "resolution below the minimum of 16 cells");
    let domain = map.domain;
    let width = domain.len() / m as f64;
    let rows: Vec<Vec<(u32, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let x = domain.lo + width * (i as f64 + 0.5);
            let pre = map.preimages_one_step(x)?;
            let mut row = Vec::with_capacity(pre.len());
            for (y, _) in pre {
                let j = (((y - domain.lo) / width).floor() as isize).clamp(0, m as isize - 1);
                row.push((j as u32, potential.eval(map, y).exp()));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let cover_connected = cover_graph_connected(map, m);
    Ok(TransferDiscretization {
        m,
        domain,
        potential_name: potential.name.clone(),
        rows,
        cover_connected,
    })
}

/// Strong connectivity of the graph i -> k when f(cell i) covers part of
/// cell k, with images taken branch by branch.
fn cover_graph_connected(map: &PiecewiseMap, m: usize) -> bool {
    let w = map.domain.len() / m as f64;
    let cell_range = |iv: Interval| -> (usize, usize) {
        let lo = (((iv.lo - map.domain.lo) / w).floor() as isize).clamp(0, m as isize - 1) as usize;
        let hi = (((iv.hi - map.domain.lo) / w).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
        (lo, hi.max(lo))
    };
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); m];
    let mut radj: Vec<Vec<u32>> = vec![Vec::new(); m];
    for i in 0..m {
        let cell = Interval::new(map.domain.lo + w * i as f64, map.domain.lo + w * (i + 1) as f64);
        for b in &map.branches {
            if let Some(part) = cell.intersect(&b.domain) {
                if part.len() <= 0.0 {
                    continue;
                }
                let fa = b.forward(part.lo);
                let fb = b.forward(part.hi);
                let image = Interval::new(fa.min(fb), fa.max(fb));
                if image.len() <= 0.0 {
                    continue;
                }
                let (klo, khi) = cell_range(image);
                for k in klo..=khi {
                    adj[i].push(k as u32);
                    radj[k].push(i as u32);
                }
            }
        }
    }
    let reach_all = |g: &Vec<Vec<u32>>| -> bool {
        let mut seen = vec![false; m];
        seen[0] = true;
        let mut stack = vec![0u32];
        while let Some(v) = stack.pop() {
            for &t in &g[v as usize] {
                if !seen[t as usize] {
                    seen[t as usize] = true;
                    stack.push(t);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach_all(&adj) && reach_all(&radj)
}

/// Leading eigendata of a discretized operator.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralData {
    pub lambda: f64,
    pub pressure_spectral: f64,
    /// Right eigenvector: equilibrium density h, scaled so that
    /// sum h_i mu_i = 1.
    pub density: Vec<f64>,
    /// Left eigenvector: conformal cell masses, total mass 1.
    pub conformal: Vec<f64>,
    pub power_iterations: usize,
    pub residual: f64,
}

impl SpectralData {
    /// Cell masses of the equilibrium measure (density times conformal
    /// mass, normalized).
    pub fn equilibrium_cells(&self) -> Vec<f64> {
        let total: f64 = self.density.iter().zip(&self.conformal).map(|(h, m)| h * m).sum();
        self.density
            .iter()
            .zip(&self.conformal)
            .map(|(h, m)| h * m / total)
            .collect()
    }
}

const EIGEN_TOL: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 100_000;

fn power_iterate<A: Fn(&[f64]) -> Vec<f64>>(
    apply: A,
    m: usize,
) -> Result<(f64, Vec<f64>, usize, f64)> {
    let mut v = vec![1.0 / m as f64; m];
    for iter in 1..=EIGEN_MAX_ITER {
        let w = apply(&v);
        let norm: f64 = w.iter().map(|x| x.abs()).sum();
        if norm == 0.0 {
            return Err(Error::ReducibleMatrix);
        }
        let lambda = norm;
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let residual: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        // residual of the eigen equation in L1, scaled by the eigenvalue
        if residual * lambda <= EIGEN_TOL * lambda.max(1.0) || residual <= 1e-16 {
            let w = apply(&v);
            let lam: f64 = w.iter().map(|x| x.abs()).sum();
            let res: f64 =
                w.iter().zip(&v).map(|(a, b)| (a - lam * b).abs()).sum::<f64>() / lam.max(1.0);
            if res <= EIGEN_TOL {
                return Ok((lam, v, iter, res));
            }
        }
    }
    Err(Error::NoConvergence {
        op: "leading_eigen",
        iterations: EIGEN_MAX_ITER,
        residual: f64::NAN,
    })
}

/// Power iteration on both sides to the target residual. The left vector
/// is normalized to total mass 1; the right vector so the equilibrium
/// cells h * mu sum to 1.
pub fn leading_eigen(disc: &TransferDiscretization) -> Result<SpectralData> {
    if !disc.cover_connected {
        return Err(Error::ReducibleMatrix);
    }
    let (lambda_r, mut density, it_r, res_r) = power_iterate(|h| disc.apply(h), disc.m)?;
    let (_lambda_l, mut conformal, it_l, res_l) = power_iterate(|v| disc.apply_transpose(v), disc.m)?;
    let mass: f64 = conformal.iter().sum();
    for c in conformal.iter_mut() {
        *c /= mass;
    }
    let pairing: f64 = density.iter().zip(&conformal).map(|(h, m)| h * m).sum();
    for h in density.iter_mut() {
        *h /= pairing;
    }
    Ok(SpectralData {
        lambda: lambda_r,
        pressure_spectral: lambda_r.ln(),
        density,
        conformal,
        power_iterations: it_r + it_l,
        residual: res_r.max(res_l),
    })
}

/// Default probe grid for the growth profile: nine points across the
/// middle 80% of the domain.
pub fn default_growth_grid(map: &PiecewiseMap) -> Vec<f64> {
    let pad = 0.1 * map.domain.len();
    crate::numerics::linspace(map.domain.lo + pad, map.domain.hi - pad, 9)
}

/// One point of the normalized-iterate growth profile.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GrowthPoint {
    pub n: usize,
    /// (1/n) log sup over the grid of the normalized n-th iterate on 1.
    pub a_n: f64,
    /// (1/n) log inf over the grid of the same.
    pub b_n: f64,
}

/// Evaluate the normalized operator iterates exactly through preimage
/// trees at the grid points (never through the matrix): the n-th iterate
/// of 1 at x is exp(-n P) times the preimage partition function at x.
/// Sub-exponential growth pinches both profiles toward zero.
pub fn normalized_growth_check(
    map: &PiecewiseMap,
    potential: &Potential,
    pressure_est: f64,
    n_max: usize,
    grid: &[f64],
) -> Result<Vec<GrowthPoint>> {
    let mut log_z: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    for (gi, &x) in grid.iter().enumerate() {
        walk_preimage_levels(
            map,
            &[potential],
            x,
            n_max,
            DEFAULT_NODE_BUDGET,
            PruningPolicy::None,
            |level| log_z[gi].push(log_sum_exp(&level.sums[0])),
        )?;
    }
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let normalized: Vec<f64> =
            log_z.iter().map(|zs| zs[n - 1] - n as f64 * pressure_est).collect();
        let sup = normalized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let inf = normalized.iter().cloned().fold(f64::INFINITY, f64::min);
        out.push(GrowthPoint { n, a_n: sup / n as f64, b_n: inf / n as f64 });
    }
    Ok(out)
}

/// Max over the given cells A of |mu(f(A)) - integral over A of
/// exp(P - phi) d mu|, both sides read from the discrete left eigenvector.
/// Each test cell must sit inside a single branch domain.
pub fn conformal_residual(
    map: &PiecewiseMap,
    potential: &Potential,
    disc: &TransferDiscretization,
    spectral: &SpectralData,
    cells: &[usize],
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for &cell in cells {
        let a = disc.cell_interval(cell);
        let branch = map
            .branches
            .iter()
            .find(|b| a.lo >= b.domain.lo - 1e-12 && a.hi <= b.domain.hi + 1e-12)
            .ok_or(Error::CellStraddlesBranch { lo: a.lo, hi: a.hi })?;
        let fa = branch.forward(a.lo);
        let fb = branch.forward(a.hi);
        let image = Interval::new(fa.min(fb), fa.max(fb));
        let mu_image = measure_of_interval(disc, &spectral.conformal, image);
        let g = (spectral.pressure_spectral - potential.eval(map, a.midpoint())).exp();
        let integral = spectral.conformal[cell] * g;
        worst = worst.max((mu_image - integral).abs());
    }
    Ok(worst)
}

/// mu-mass of an interval, pro-rata on partial cells.
pub fn measure_of_interval(
    disc: &TransferDiscretization,
    masses: &[f64],
    interval: Interval,
) -> f64 {
    let w = disc.cell_width();
    let mut acc = 0.0;
    let first = disc.cell_of(interval.lo + 1e-15);
    let last = disc.cell_of(interval.hi - 1e-15);
    for i in first..=last {
        let cell = disc.cell_interval(i);
        let overlap = (cell.hi.min(interval.hi) - cell.lo.max(interval.lo)).max(0.0);
        acc += masses[i] * overlap / w;
    }
    acc
}

/// Max over test functions h of |integral of the normalized operator
/// applied to h d mu - integral of h d mu| with the discrete operator and
/// left eigenvector. Equality is the duality the conformal measure
/// satisfies; the residual measures how far the solved eigenpair is from
/// it.
pub fn duality_residual(
    disc: &TransferDiscretization,
    spectral: &SpectralData,
    test_functions: &[&(dyn Fn(f64) -> f64 + Sync)],
) -> f64 {
    let mut worst = 0.0_f64;
    for f in test_functions {
        let h: Vec<f64> = (0..disc.m).map(|i| f(disc.midpoint(i))).collect();
        let lh = disc.apply(&h);
        let lhs: f64 =
            lh.iter().zip(&spectral.conformal).map(|(v, mu)| v * mu).sum::<f64>() / spectral.lambda;
        let rhs: f64 = h.iter().zip(&spectral.conformal).map(|(v, mu)| v * mu).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}
