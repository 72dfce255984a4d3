//! Map and potential descriptors: short inline specs for the built-in
//! families and a TOML schema for custom declarations.
//!
//! Inline map specs name a built-in (`doubling`, `tent`, `logistic`,
//! `linear3`, `markov2`) or point at a `.toml` file. Inline potential
//! specs:
//!
//! ```text
//! const:C
//! affine:SLOPE,INTERCEPT
//! branch:V0,V1[,V2...]
//! cosine:OFFSET,COEFF,HARMONIC[,COEFF,HARMONIC...]
//! ```

use serde::Deserialize;

use crate::error::Error;
use crate::maps::{builtin, Branch, BranchForm, Interval, PiecewiseMap};
use crate::potentials::{Potential, TrigTerm};
use crate::Result;

#[derive(Debug, Deserialize)]
pub struct FileConfig {
    pub map: MapConfig,
    pub potential: Option<PotentialConfig>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct MapConfig {
    pub name: String,
    pub domain: [f64; 2],
    #[serde(default)]
    pub endpoints_identified: bool,
    #[serde(default = "default_true")]
    pub topologically_exact: bool,
    pub markov_partition: Option<Vec<[f64; 2]>>,
    pub critical_points: Option<Vec<f64>>,
    #[serde(rename = "branch")]
    pub branches: Vec<BranchConfig>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
pub struct BranchConfig {
    pub kind: String,
    pub domain: [f64; 2],
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub coeff: Option<f64>,
    pub flatness_order: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct PotentialConfig {
    pub kind: String,
    pub value: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub offset: Option<f64>,
    /// (coefficient, harmonic) pairs for the cosine family.
    pub terms: Option<Vec<(f64, u32)>>,
}

impl MapConfig {
    pub fn build(&self) -> Result<PiecewiseMap> {
        let domain = Interval::new(self.domain[0], self.domain[1]);
        let mut branches = Vec::new();
        for (id, b) in self.branches.iter().enumerate() {
            let bdom = Interval::new(b.domain[0], b.domain[1]);
            let form = match b.kind.as_str() {
                "linear" => BranchForm::Linear {
                    slope: b.slope.ok_or_else(|| Error::Config("linear branch needs slope".into()))?,
                    intercept: b.intercept.unwrap_or(0.0),
                },
                "quadratic" => BranchForm::Quadratic {
                    coeff: b.coeff.ok_or_else(|| Error::Config("quadratic branch needs coeff".into()))?,
                },
                other => return Err(Error::Config(format!("unknown branch kind '{other}'"))),
            };
            let mut branch = Branch::new(id, bdom, form);
            if let Some(f) = b.flatness_order {
                branch = branch.with_flatness(f);
            }
            branches.push(branch);
        }
        let mut map = PiecewiseMap::new(self.name.clone(), domain, branches)?;
        map.topologically_exact = self.topologically_exact;
        if self.endpoints_identified {
            map = map.identifying_endpoints();
        }
        if let Some(pts) = &self.critical_points {
            map = map.with_critical_points(pts.clone());
        }
        if let Some(cells) = &self.markov_partition {
            map = map
                .with_markov_partition(cells.iter().map(|c| Interval::new(c[0], c[1])).collect())?;
        }
        Ok(map)
    }
}

impl PotentialConfig {
    pub fn build(&self) -> Result<Potential> {
        match self.kind.as_str() {
            "const" => Ok(Potential::constant(
                self.value.ok_or_else(|| Error::Config("const potential needs value".into()))?,
            )),
            "affine" => Ok(Potential::affine(
                self.slope.unwrap_or(1.0),
                self.intercept.unwrap_or(0.0),
            )),
            "branch" => Ok(Potential::branch_constant(
                self.values
                    .clone()
                    .ok_or_else(|| Error::Config("branch potential needs values".into()))?,
            )),
            "cosine" => {
                let terms = self
                    .terms
                    .clone()
                    .unwrap_or_default()
                    .into_iter()
                    .map(|(coeff, harmonic)| TrigTerm {
                        harmonic,
                        cos_coeff: coeff,
                        sin_coeff: 0.0,
                    })
                    .collect();
                Ok(Potential::trig(self.offset.unwrap_or(0.0), terms))
            }
            other => Err(Error::Config(format!("unknown potential kind '{other}'"))),
        }
    }
}

/// Resolve a map spec: a built-in name or a TOML file path.
pub fn parse_map_spec(spec: &str) -> Result<PiecewiseMap> {
    if let Some(map) = builtin(spec) {
        return Ok(map);
    }
    if spec.ends_with(".toml") {
        let text = std::fs::read_to_string(spec)?;
        let config: FileConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{spec}: {e}")))?;
        return config.map.build();
    }
    Err(Error::Config(format!(
        "unknown map '{spec}' (built-ins: doubling, tent, logistic, linear3, markov2; or a .toml path)"
    )))
}

/// Parse an inline potential spec.
pub fn parse_potential_spec(spec: &str) -> Result<Potential> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("potential spec '{spec}' needs kind:params")))?;
    let nums: Vec<f64> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number '{s}' in '{spec}'")))
            })
            .collect::<Result<_>>()?
    };
    match kind {
        "const" => {
            if nums.len() != 1 {
                return Err(Error::Config("const:C".into()));
            }
            Ok(Potential::constant(nums[0]))
        }
        "affine" => {
            if nums.len() != 2 {
                return Err(Error::Config("affine:SLOPE,INTERCEPT".into()));
            }
            Ok(Potential::affine(nums[0], nums[1]))
        }
        "branch" => {
            if nums.len() < 2 {
                return Err(Error::Config("branch:V0,V1[,V2...]".into()));
            }
            Ok(Potential::branch_constant(nums))
        }
        "cosine" => {
            if nums.is_empty() || nums.len() % 2 == 0 {
                return Err(Error::Config("cosine:OFFSET,COEFF,HARMONIC[,...]".into()));
            }
            let terms = nums[1..]
                .chunks(2)
                .map(|c| TrigTerm { harmonic: c[1] as u32, cos_coeff: c[0], sin_coeff: 0.0 })
                .collect();
            Ok(Potential::trig(nums[0], terms))
        }
        other => Err(Error::Config(format!("unknown potential kind '{other}'"))),
    }
}
