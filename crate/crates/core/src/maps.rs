//! Piecewise-monotone interval maps with exact branch calculus: evaluation,
//! certified branch inverses, and admissible monotone branch words of f^n.
//!
//! Maps are declared as a finite ordered list of monotone branches over
//! closed subintervals whose interiors are disjoint and whose closures cover
//! the domain. A point on a shared branch joint belongs to the *left*
//! branch; this left-closed convention keeps partition functions
//! deterministic.

use std::fmt;
use std::sync::Arc;

use crate::error::Error;
use crate::Result;

/// Residual tolerance for certified branch inverses.
pub const TOL_INV: f64 = 1e-12;
/// Two preimage points closer than this are considered the same point.
pub const TOL_DEDUP: f64 = 1e-10;
/// Word pullbacks shorter than this are treated as degenerate.
const TOL_DEGENERATE: f64 = 1e-13;

/// A closed interval in map coordinates. Degenerate (lo == hi) intervals
/// only appear as root brackets.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "interval endpoints out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Closed-form branch families plus a generic monotone descriptor.
#[derive(Clone)]
pub enum BranchForm {
    /// f(x) = slope * x + intercept
    Linear { slope: f64, intercept: f64 },
    /// f(x) = coeff * x * (1 - x), restricted to one monotone side of 1/2.
    Quadratic { coeff: f64 },
    /// Generic strictly monotone branch; inverted by bracketed bisection
    /// with Newton acceleration.
    Monotone { forward: RealFn, derivative: RealFn },
}

impl fmt::Debug for BranchForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchForm::Linear { slope, intercept } => {
                write!(f, "Linear {{ slope: {slope}, intercept: {intercept} }}")
            }
            BranchForm::Quadratic { coeff } => write!(f, "Quadratic {{ coeff: {coeff} }}"),
            BranchForm::Monotone { .. } => write!(f, "Monotone {{ .. }}"),
        }
    }
}

/// One monotone branch of a piecewise map.
#[derive(Clone, Debug)]
pub struct Branch {
    pub id: usize,
    pub domain: Interval,
    /// +1 increasing, -1 decreasing; equals the derivative sign on the
    /// branch interior.
    pub orientation: i8,
    pub form: BranchForm,
    /// Critical-order metadata; never consumed by any computation.
    pub flatness_order: f64,
}

impl Branch {
    pub fn new(id: usize, domain: Interval, form: BranchForm) -> Self {
        let mid = domain.midpoint();
        let orientation = match &form {
            BranchForm::Linear { slope, .. } => {
                if *slope >= 0.0 {
                    1
                } else {
                    -1
                }
            }
            BranchForm::Quadratic { coeff } => {
                let d = coeff * (1.0 - 2.0 * mid);
                if d >= 0.0 {
                    1
                } else {
                    -1
                }
            }
            BranchForm::Monotone { derivative, .. } => {
                if derivative(mid) >= 0.0 {
                    1
                } else {
                    -1
                }
            }
        };
        Branch { id, domain, orientation, form, flatness_order: 1.0 }
    }

    pub fn with_flatness(mut self, order: f64) -> Self {
        self.flatness_order = order;
        self
    }

    pub fn forward(&self, x: f64) -> f64 {
        match &self.form {
            BranchForm::Linear { slope, intercept } => slope * x + intercept,
            BranchForm::Quadratic { coeff } => coeff * x * (1.0 - x),
            BranchForm::Monotone { forward, .. } => forward(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.form {
            BranchForm::Linear { slope, .. } => *slope,
            BranchForm::Quadratic { coeff } => coeff * (1.0 - 2.0 * x),
            BranchForm::Monotone { derivative, .. } => derivative(x),
        }
    }

    /// Image as an ordered interval.
    pub fn image(&self) -> Interval {
        let a = self.forward(self.domain.lo);
        let b = self.forward(self.domain.hi);
        Interval::new(a.min(b), a.max(b))
    }

    /// Certified monotone inverse on this branch. Returns None if y lies
    /// outside the branch image (beyond the inverse tolerance).
    pub fn inverse(&self, y: f64) -> Result<Option<f64>> {
        let img = self.image();
        if y < img.lo - TOL_INV || y > img.hi + TOL_INV {
            return Ok(None);
        }
        let y = img.clamp(y);
        let x = match &self.form {
            BranchForm::Linear { slope, intercept } => (y - intercept) / slope,
            BranchForm::Quadratic { coeff } => {
                // x^2 - x + y/coeff = 0
                let disc = (1.0 - 4.0 * y / coeff).max(0.0);
                let root = disc.sqrt();
                if self.orientation > 0 {
                    0.5 * (1.0 - root)
                } else {
                    0.5 * (1.0 + root)
                }
            }
            BranchForm::Monotone { .. } => self.bracketed_solve(y)?,
        };
        let x = self.domain.clamp(x);
        let residual = (self.forward(x) - y).abs();
        if residual > TOL_INV {
            return Err(Error::NoConvergence {
                op: "branch_inverse",
                iterations: 0,
                residual,
            });
        }
        Ok(Some(x))
    }

    /// Bisection with Newton acceleration on a guaranteed bracket.
    fn bracketed_solve(&self, y: f64) -> Result<f64> {
        let (mut a, mut b) = (self.domain.lo, self.domain.hi);
        let g = |x: f64| self.forward(x) - y;
        let (mut fa, fb) = (g(a), g(b));
        if fa == 0.0 {
            return Ok(a);
        }
        if fb == 0.0 {
            return Ok(b);
        }
        // Monotone branch: signs at the endpoints differ whenever y is in
        // the image interior.
        let mut x = 0.5 * (a + b);
        for iteration in 0..200 {
            let fx = g(x);
            if fx.abs() <= TOL_INV * self.derivative(x).abs().max(1.0) || b - a < 1e-15 {
                return Ok(x);
            }
            if (fx > 0.0) == (fa > 0.0) {
                a = x;
                fa = fx;
            } else {
                b = x;
            }
            // Newton step from the current iterate, demoted to bisection
            // whenever it leaves the bracket.
            let d = self.derivative(x);
            let newton = x - fx / d;
            x = if d != 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if iteration == 199 {
                return Err(Error::NoConvergence {
                    op: "branch_inverse",
                    iterations: 200,
                    residual: fx.abs(),
                });
            }
        }
        unreachable!()
    }
}

/// A piecewise-monotone interval map.
#[derive(Clone, Debug)]
pub struct PiecewiseMap {
    pub name: String,
    pub domain: Interval,
    pub branches: Vec<Branch>,
    /// Branch joints at which the derivative vanishes.
    pub critical_points: Vec<f64>,
    pub markov_partition: Option<Vec<Interval>>,
    /// Declared, checked only heuristically.
    pub topologically_exact: bool,
    /// Circle-style identification of the two domain endpoints; decides
    /// whether a fixed point at `hi` duplicates one at `lo`.
    pub endpoints_identified: bool,
    /// Branch-word depth cap.
    pub depth_cap: usize,
    /// Periodic-point enumeration depth cap.
    pub periodic_depth_cap: usize,
}

impl PiecewiseMap {
    pub fn new(
        name: impl Into<String>,
        domain: Interval,
        branches: Vec<Branch>,
    ) -> Result<Self> {
        let map = PiecewiseMap {
            name: name.into(),
            domain,
            branches,
            critical_points: Vec::new(),
            markov_partition: None,
            topologically_exact: true,
            endpoints_identified: false,
            depth_cap: 24,
            periodic_depth_cap: 14,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn with_critical_points(mut self, pts: Vec<f64>) -> Self {
        self.critical_points = pts;
        self
    }

    pub fn with_markov_partition(mut self, cells: Vec<Interval>) -> Result<Self> {
        self.markov_partition = Some(cells);
        self.validate_markov()?;
        Ok(self)
    }

    pub fn identifying_endpoints(mut self) -> Self {
        self.endpoints_identified = true;
        self
    }

    pub fn with_periodic_cap(mut self, cap: usize) -> Self {
        self.periodic_depth_cap = cap;
        self
    }

    fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::Config(format!("map '{}': {msg}", self.name));
        if self.branches.is_empty() {
            return Err(err("no branches declared".into()));
        }
        let mut prev_hi = self.domain.lo;
        for (k, b) in self.branches.iter().enumerate() {
            if b.id != k {
                return Err(err(format!("branch ids must be 0..d in order, got {}", b.id)));
            }
            if (b.domain.lo - prev_hi).abs() > 1e-12 {
                return Err(err(format!(
                    "branch {k} starts at {} but previous cover ends at {prev_hi}",
                    b.domain.lo
                )));
            }
            prev_hi = b.domain.hi;
            // forward image must stay inside the domain
            for i in 0..=256 {
                let x = b.domain.lo + b.domain.len() * (i as f64 / 256.0);
                let y = b.forward(x);
                if y < self.domain.lo - 1e-9 || y > self.domain.hi + 1e-9 {
                    return Err(err(format!("branch {k} maps {x} to {y}, outside the domain")));
                }
            }
            // derivative sign matches orientation on the interior
            for i in 1..64 {
                let x = b.domain.lo + b.domain.len() * (i as f64 / 64.0);
                let d = b.derivative(x);
                if d != 0.0 && (d > 0.0) != (b.orientation > 0) {
                    return Err(err(format!("branch {k} is not monotone at {x}")));
                }
            }
            // inverse certification spot check
            let img = b.image();
            for i in 0..=32 {
                let y = img.lo + img.len() * (i as f64 / 32.0);
                if let Some(x) = b.inverse(y)? {
                    if (b.forward(x) - y).abs() > TOL_INV {
                        return Err(err(format!("branch {k} inverse fails certification at {y}")));
                    }
                }
            }
        }
        if (prev_hi - self.domain.hi).abs() > 1e-12 {
            return Err(err(format!("branch cover ends at {prev_hi}, domain at {}", self.domain.hi)));
        }
        Ok(())
    }

    fn validate_markov(&self) -> Result<()> {
        let cells = self.markov_partition.as_ref().unwrap();
        let err = |msg: String| Error::Config(format!("map '{}': {msg}", self.name));
        let boundaries: Vec<f64> = {
            let mut b: Vec<f64> = cells.iter().flat_map(|c| [c.lo, c.hi]).collect();
            b.sort_by(f64::total_cmp);
            b.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            b
        };
        // the image of every cell endpoint must land on a cell boundary
        for c in cells {
            for e in [c.lo, c.hi] {
                let y = self.apply(e);
                if !boundaries.iter().any(|b| (b - y).abs() < 1e-10) {
                    return Err(err(format!(
                        "partition cell endpoint {e} maps to {y}, not a cell boundary"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Does every branch map onto the whole domain?
    pub fn is_full_branched(&self) -> bool {
        self.branches.iter().all(|b| {
            let img = b.image();
            (img.lo - self.domain.lo).abs() < 1e-9 && (img.hi - self.domain.hi).abs() < 1e-9
        })
    }

    /// Branch owning x under the left-closed convention.
    pub fn branch_index(&self, x: f64) -> Result<usize> {
        if x < self.domain.lo - 1e-9 || x > self.domain.hi + 1e-9 {
            return Err(Error::PointOutsideDomain {
                op: "branch_index",
                x,
                lo: self.domain.lo,
                hi: self.domain.hi,
            });
        }
        let x = self.domain.clamp(x);
        if x == self.domain.lo {
            return Ok(0);
        }
        for b in &self.branches {
            if x <= b.domain.hi {
                return Ok(b.id);
            }
        }
        Ok(self.branches.len() - 1)
    }

    /// One application of the map (panics never; callers validated x).
    fn apply(&self, x: f64) -> f64 {
        let idx = self.branch_index(x).unwrap_or(0);
        self.domain.clamp(self.branches[idx].forward(x))
    }

    /// f^steps(x); steps = 0 returns x.
    pub fn evaluate(&self, x: f64, steps: usize) -> Result<f64> {
        let mut cur = x;
        self.check_in_domain("evaluate", cur)?;
        for _ in 0..steps {
            let idx = self.branch_index(cur)?;
            cur = self.branches[idx].forward(cur);
            self.check_in_domain("evaluate", cur)?;
            cur = self.domain.clamp(cur);
        }
        Ok(cur)
    }

    fn check_in_domain(&self, op: &'static str, x: f64) -> Result<()> {
        if x < self.domain.lo - 1e-9 || x > self.domain.hi + 1e-9 {
            return Err(Error::PointOutsideDomain {
                op,
                x,
                lo: self.domain.lo,
                hi: self.domain.hi,
            });
        }
        Ok(())
    }

    /// Derivative of the map at x (derivative of the owning branch).
    pub fn derivative(&self, x: f64) -> Result<f64> {
        Ok(self.branches[self.branch_index(x)?].derivative(x))
    }

    /// Df^n(x) by the chain rule along the orbit.
    pub fn orbit_derivative(&self, x: f64, n: usize) -> Result<f64> {
        let mut cur = x;
        let mut d = 1.0;
        for _ in 0..n {
            d *= self.derivative(cur)?;
            cur = self.evaluate(cur, 1)?;
        }
        Ok(d)
    }

    /// First n branch symbols of the orbit of x.
    pub fn itinerary(&self, x: f64, n: usize) -> Result<Vec<u8>> {
        let mut word = Vec::with_capacity(n);
        let mut cur = x;
        for _ in 0..n {
            word.push(self.branch_index(cur)? as u8);
            cur = self.evaluate(cur, 1)?;
        }
        Ok(word)
    }

    /// All one-step preimages of y, one per branch whose image contains y,
    /// ordered by branch id; points closer than the dedup tolerance are
    /// merged (the lower branch id wins).
    pub fn preimages_one_step(&self, y: f64) -> Result<Vec<(f64, usize)>> {
        self.check_in_domain("preimages_one_step", y)?;
        let mut out: Vec<(f64, usize)> = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            if let Some(x) = b.inverse(y)? {
                if out.iter().all(|(px, _)| (px - x).abs() > TOL_DEDUP) {
                    out.push((x, b.id));
                }
            }
        }
        Ok(out)
    }

    /// Certified inverse on a single branch.
    pub fn branch_inverse(&self, branch_id: usize, y: f64) -> Result<Option<f64>> {
        self.branches
            .get(branch_id)
            .ok_or_else(|| Error::Config(format!("branch id {branch_id} out of range")))?
            .inverse(y)
    }

    /// Iterator over admissible monotone branch words of length n together
    /// with their pullback intervals, in lexicographic word order.
    pub fn branch_words(&self, n: usize) -> Result<BranchWords<'_>> {
        if n > self.depth_cap {
            return Err(Error::DepthCapExceeded {
                op: "branch_words",
                requested: n,
                cap: self.depth_cap,
            });
        }
        assert!(n >= 1);
        Ok(BranchWords::new(self, n))
    }

    /// Is x on the forward orbit (within depth steps) of a critical point?
    pub fn on_critical_orbit(&self, x: f64, depth: usize, tol: f64) -> bool {
        for &c in &self.critical_points {
            let mut cur = c;
            for _ in 0..depth {
                cur = self.apply(cur);
                if (cur - x).abs() <= tol {
                    return true;
                }
            }
        }
        false
    }
}

/// Depth-first enumeration of admissible words.
///
/// A stack entry holds the word prefix and the x-interval of points whose
/// itinerary starts with that prefix. Extending by a branch symbol cuts the
/// image against the branch domain and pulls the cut back through the
/// recorded inverse chain.
pub struct BranchWords<'a> {
    map: &'a PiecewiseMap,
    n: usize,
    stack: Vec<(Vec<u8>, Interval)>,
}

impl<'a> BranchWords<'a> {
    fn new(map: &'a PiecewiseMap, n: usize) -> Self {
        let mut stack = Vec::new();
        for b in map.branches.iter().rev() {
            stack.push((vec![b.id as u8], b.domain));
        }
        BranchWords { map, n, stack }
    }

    /// Pull back the value t through the inverse branches of `word`,
    /// starting from the deepest symbol.
    fn invert_chain(&self, word: &[u8], t: f64) -> Option<f64> {
        let mut cur = t;
        for &b in word.iter().rev() {
            let branch = &self.map.branches[b as usize];
            match branch.inverse(cur) {
                Ok(Some(x)) => cur = x,
                _ => return None,
            }
        }
        Some(cur)
    }
}

impl Iterator for BranchWords<'_> {
    type Item = (Vec<u8>, Interval);

    fn next(&mut self) -> Option<Self::Item> {
        while let Some((word, pullback)) = self.stack.pop() {
            if word.len() == self.n {
                return Some((word, pullback));
            }
            // orientation of f^k on the pullback decides which endpoint of
            // the cut image corresponds to which x endpoint
            let orient: i32 = word
                .iter()
                .map(|&b| self.map.branches[b as usize].orientation as i32)
                .product();
            // image of the pullback under f^k
            let fa = forward_along_word(self.map, pullback.lo, &word);
            let fb = forward_along_word(self.map, pullback.hi, &word);
            let img = Interval::new(fa.min(fb), fa.max(fb));
            for b in self.map.branches.iter().rev() {
                let cut = match img.intersect(&b.domain) {
                    Some(c) if c.len() > TOL_DEGENERATE => c,
                    _ => continue,
                };
                let (xlo_t, xhi_t) = if orient > 0 { (cut.lo, cut.hi) } else { (cut.hi, cut.lo) };
                let xlo = self.invert_chain(&word, xlo_t);
                let xhi = self.invert_chain(&word, xhi_t);
                if let (Some(mut xlo), Some(mut xhi)) = (xlo, xhi) {
                    xlo = pullback.clamp(xlo);
                    xhi = pullback.clamp(xhi);
                    if xhi - xlo > TOL_DEGENERATE {
                        let mut next = word.clone();
                        next.push(b.id as u8);
                        self.stack.push((next, Interval::new(xlo, xhi)));
                    }
                }
            }
        }
        None
    }
}

/// f^len(word)(x) following the declared branches rather than the
/// left-closed lookup; the right notion of f^n on the closure of a word
/// pullback, where shared lap endpoints would otherwise be routed to the
/// neighboring lap.
pub fn forward_along_word(map: &PiecewiseMap, x: f64, word: &[u8]) -> f64 {
    let mut cur = x;
    for &b in word {
        let branch = &map.branches[b as usize];
        cur = branch.forward(branch.domain.clamp(cur));
    }
    map.domain.clamp(cur)
}

// ------------------------------------------------------------------
// Built-in maps
// ------------------------------------------------------------------

/// Doubling map 2x mod 1 on [0, 1], endpoints identified (circle map).
pub fn doubling() -> PiecewiseMap {
    let branches = vec![
        Branch::new(0, Interval::new(0.0, 0.5), BranchForm::Linear { slope: 2.0, intercept: 0.0 }),
        Branch::new(1, Interval::new(0.5, 1.0), BranchForm::Linear { slope: 2.0, intercept: -1.0 }),
    ];
    PiecewiseMap::new("doubling", Interval::new(0.0, 1.0), branches)
        .unwrap()
        .identifying_endpoints()
        .with_markov_partition(vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)])
        .unwrap()
}

/// Tent map with slope 2 on [0, 1].
pub fn tent() -> PiecewiseMap {
    let branches = vec![
        Branch::new(0, Interval::new(0.0, 0.5), BranchForm::Linear { slope: 2.0, intercept: 0.0 }),
        Branch::new(1, Interval::new(0.5, 1.0), BranchForm::Linear { slope: -2.0, intercept: 2.0 }),
    ];
    PiecewiseMap::new("tent", Interval::new(0.0, 1.0), branches)
        .unwrap()
        .with_markov_partition(vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)])
        .unwrap()
}

/// Full quadratic family member 4x(1-x) on [0, 1].
pub fn logistic() -> PiecewiseMap {
    let branches = vec![
        Branch::new(0, Interval::new(0.0, 0.5), BranchForm::Quadratic { coeff: 4.0 }).with_flatness(2.0),
        Branch::new(1, Interval::new(0.5, 1.0), BranchForm::Quadratic { coeff: 4.0 }).with_flatness(2.0),
    ];
    PiecewiseMap::new("logistic", Interval::new(0.0, 1.0), branches)
        .unwrap()
        .with_critical_points(vec![0.5])
        .with_markov_partition(vec![Interval::new(0.0, 0.5), Interval::new(0.5, 1.0)])
        .unwrap()
}

/// Three full linear branches on [0, 1] (middle branch decreasing).
pub fn full_linear3() -> PiecewiseMap {
    let third = 1.0 / 3.0;
    let branches = vec![
        Branch::new(0, Interval::new(0.0, third), BranchForm::Linear { slope: 3.0, intercept: 0.0 }),
        Branch::new(1, Interval::new(third, 2.0 * third), BranchForm::Linear { slope: -3.0, intercept: 2.0 }),
        Branch::new(2, Interval::new(2.0 * third, 1.0), BranchForm::Linear { slope: 3.0, intercept: -2.0 }),
    ];
    PiecewiseMap::new("linear3", Interval::new(0.0, 1.0), branches)
        .unwrap()
        .with_markov_partition(vec![
            Interval::new(0.0, third),
            Interval::new(third, 2.0 * third),
            Interval::new(2.0 * third, 1.0),
        ])
        .unwrap()
}

/// Two-cell Markov linear map with the non-full golden-mean transition
/// structure: cell A = [0, 2/3] covers everything, cell B = [2/3, 1] maps
/// onto A only.
pub fn golden_markov() -> PiecewiseMap {
    let c = 2.0 / 3.0;
    let branches = vec![
        Branch::new(0, Interval::new(0.0, c), BranchForm::Linear { slope: 1.5, intercept: 0.0 }),
        Branch::new(1, Interval::new(c, 1.0), BranchForm::Linear { slope: 2.0, intercept: -2.0 * c }),
    ];
    PiecewiseMap::new("markov2", Interval::new(0.0, 1.0), branches)
        .unwrap()
        .with_markov_partition(vec![Interval::new(0.0, c), Interval::new(c, 1.0)])
        .unwrap()
}

/// Built-in lookup used by the CLI and the configuration loader.
pub fn builtin(name: &str) -> Option<PiecewiseMap> {
    match name {
        "doubling" => Some(doubling()),
        "tent" => Some(tent()),
        "logistic" => Some(logistic()),
        "linear3" => Some(full_linear3()),
        "markov2" => Some(golden_markov()),
        _ => None,
    }
}
