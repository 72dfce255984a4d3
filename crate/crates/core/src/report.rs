//! Machine-readable run reports and tabular exports.
//!
//! Reports are deterministic for a fixed config, seed, and version: field
//! order is fixed by the structs and floats render through the shortest
//! round-trip form. The wall-time field is the only part that varies
//! between identical runs.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backward::PreimageTree;
use crate::maps::PiecewiseMap;
use crate::periodic::PeriodicSet;
use crate::potentials::{birkhoff_sum, Potential};
use crate::transfer::{SpectralData, TransferDiscretization};
use crate::Result;

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: serde_json::Value,
    pub inputs_digest: String,
    pub results: serde_json::Value,
    /// milliseconds; excluded from byte-for-byte comparisons
    pub wall_time_ms: f64,
}

impl Report {
    pub fn new(
        command: &str,
        seed: u64,
        threads: usize,
        inputs: serde_json::Value,
        results: serde_json::Value,
        wall_time_ms: f64,
    ) -> Self {
        let canonical = serde_json::to_string(&inputs).unwrap_or_default();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(canonical.as_bytes());
        let digest: String = h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect();
        Report {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            inputs,
            inputs_digest: digest,
            results,
            wall_time_ms,
        }
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Simple CSV assembly for numeric curves.
pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn word_string(word: &[u8]) -> String {
    word.iter().map(|b| char::from(b'0' + *b)).collect()
}

/// Line-delimited tree records: word, point, log_weight.
pub fn tree_records(tree: &PreimageTree) -> String {
    let mut out = String::new();
    for node in &tree.nodes {
        out.push_str(&format!("{} {} {}\n", word_string(&node.word), node.point, node.log_weight));
    }
    out
}

/// Line-delimited periodic records: word, point, log_weight, multiplier.
pub fn periodic_records(
    map: &PiecewiseMap,
    potential: &Potential,
    set: &PeriodicSet,
) -> Result<String> {
    let mut out = String::new();
    for p in &set.points {
        let w = birkhoff_sum(map, potential, p.point, set.n)?;
        out.push_str(&format!(
            "{} {} {} {}\n",
            word_string(&p.word),
            p.point,
            w,
            p.multiplier
        ));
    }
    Ok(out)
}

/// Eigenvector export: cell midpoint, density, conformal mass.
pub fn spectral_csv(disc: &TransferDiscretization, spectral: &SpectralData) -> String {
    let rows: Vec<Vec<f64>> = (0..disc.m)
        .map(|i| vec![disc.midpoint(i), spectral.density[i], spectral.conformal[i]])
        .collect();
    csv_table(&["midpoint", "density", "conformal"], &rows)
}

/// Complex sample export: re, im[, log_weight].
pub fn complex_csv(points: &[(f64, f64, f64)]) -> String {
    let rows: Vec<Vec<f64>> = points.iter().map(|&(re, im, w)| vec![re, im, w]).collect();
    csv_table(&["re", "im", "log_weight"], &rows)
}
