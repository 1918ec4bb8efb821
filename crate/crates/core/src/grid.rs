//! Power-system data model: buses, lines, generators with quadratic costs,
//! and the embedded IEEE 30-bus case.
//!
//! Indices are 0-based everywhere in code; the case file format uses the
//! published 1-based bus numbers and is converted on load.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

const CASE30_TOML: &str = include_str!("data/case30.toml");

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dispatch length {got} does not match generator count {expected}")]
    DispatchLength { expected: usize, got: usize },
    #[error("load length {got} does not match bus count {expected}")]
    LoadLength { expected: usize, got: usize },
    #[error("failed to read case file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse case file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error("network is disconnected: the susceptance matrix reduced by the slack bus is singular")]
    Disconnected,
}

/// A generating unit with box limits and quadratic cost c2*p^2 + c1*p + c0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Bus the unit is connected to (0-based).
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Generator {
    pub fn range(&self) -> f64 {
        self.p_max - self.p_min
    }

    pub fn marginal_cost_at(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }
}

/// A transmission line. `limit` of `None` means unlimited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    pub limit: Option<f64>,
}

/// Immutable system description. Construct via [`build_case30`] or
/// [`PowerSystem::from_toml_str`]; both validate the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSystem {
    pub name: String,
    pub n_buses: usize,
    pub slack_bus: usize,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
    pub base_load: Vec<f64>,
}

/// Generator outputs in MW, one entry per unit. Raw network outputs land
/// here too, so no sign or bound constraint is implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchVector(pub Vec<f64>);

impl DispatchVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Deref for DispatchVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-bus demand in MW, entries >= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadVector(pub Vec<f64>);

impl LoadVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Base load scaled by a single factor.
    pub fn scaled(base: &[f64], factor: f64) -> Self {
        LoadVector(base.iter().map(|v| v * factor).collect())
    }
}

impl std::ops::Deref for LoadVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Deserialize)]
struct CaseFile {
    name: Option<String>,
    n_buses: usize,
    slack_bus: usize,
    base_load: Vec<f64>,
    generators: Vec<CaseGenerator>,
    lines: Vec<CaseLine>,
}

#[derive(Deserialize)]
struct CaseGenerator {
    bus: usize,
    p_min: f64,
    p_max: f64,
    c2: f64,
    c1: f64,
    #[serde(default)]
    c0: f64,
}

#[derive(Deserialize)]
struct CaseLine {
    from: usize,
    to: usize,
    reactance: f64,
    limit: Option<f64>,
}

impl PowerSystem {
    /// Parse a case from the TOML schema used by the embedded data file
    /// (1-based bus numbers) and validate it.
    pub fn from_toml_str(text: &str) -> Result<Self, GridError> {
        let case: CaseFile = toml::from_str(text)?;
        let to_idx = |bus: usize, what: &str| -> Result<usize, GridError> {
            if bus == 0 || bus > case.n_buses {
                return Err(GridError::Invalid(format!(
                    "{what} references bus {bus}, valid range is 1..={}",
                    case.n_buses
                )));
            }
            Ok(bus - 1)
        };
        let mut generators = Vec::with_capacity(case.generators.len());
        for (i, g) in case.generators.iter().enumerate() {
            generators.push(Generator {
                bus: to_idx(g.bus, &format!("generator {}", i + 1))?,
                p_min: g.p_min,
                p_max: g.p_max,
                c2: g.c2,
                c1: g.c1,
                c0: g.c0,
            });
        }
        let mut lines = Vec::with_capacity(case.lines.len());
        for (i, l) in case.lines.iter().enumerate() {
            lines.push(Line {
                from: to_idx(l.from, &format!("line {}", i + 1))?,
                to: to_idx(l.to, &format!("line {}", i + 1))?,
                reactance: l.reactance,
                limit: l.limit,
            });
        }
        let system = PowerSystem {
            name: case.name.unwrap_or_else(|| "unnamed".to_string()),
            n_buses: case.n_buses,
            slack_bus: to_idx(case.slack_bus, "slack_bus")?,
            generators,
            lines,
            base_load: case.base_load,
        };
        system.validate()?;
        Ok(system)
    }

    pub fn from_file(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.base_load.len() != self.n_buses {
            return Err(GridError::Invalid(format!(
                "base_load has {} entries for {} buses",
                self.base_load.len(),
                self.n_buses
            )));
        }
        if self.base_load.iter().any(|&d| d < 0.0 || !d.is_finite()) {
            return Err(GridError::Invalid("negative or non-finite bus load".into()));
        }
        if self.generators.is_empty() {
            return Err(GridError::Invalid("no generators".into()));
        }
        for (i, g) in self.generators.iter().enumerate() {
            if g.bus >= self.n_buses {
                return Err(GridError::Invalid(format!("generator {i} on invalid bus")));
            }
            if !(g.p_min < g.p_max) {
                return Err(GridError::Invalid(format!(
                    "generator {i}: p_min {} must be below p_max {}",
                    g.p_min, g.p_max
                )));
            }
            if !(g.c2 > 0.0) {
                return Err(GridError::Invalid(format!(
                    "generator {i}: c2 must be strictly positive for a unique dispatch optimum"
                )));
            }
        }
        for (i, l) in self.lines.iter().enumerate() {
            if l.from >= self.n_buses || l.to >= self.n_buses {
                return Err(GridError::Invalid(format!("line {i} on invalid bus")));
            }
            if l.from == l.to {
                return Err(GridError::Invalid(format!("line {i} is a self-loop")));
            }
            if !(l.reactance > 0.0) {
                return Err(GridError::Invalid(format!(
                    "line {i}: reactance must be strictly positive"
                )));
            }
        }
        if !self.is_connected() {
            return Err(GridError::Invalid("line graph is not connected".into()));
        }
        // Every evaluation scenario (70%..130% of base) must be servable.
        let total = self.total_base_load();
        if self.sum_p_min() > 0.70 * total || self.sum_p_max() < 1.30 * total {
            return Err(GridError::Invalid(format!(
                "generation limits [{}, {}] cannot serve 70%..130% of base load {total}",
                self.sum_p_min(),
                self.sum_p_max()
            )));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_buses];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; self.n_buses];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for &n in &adj[b] {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn total_base_load(&self) -> f64 {
        self.base_load.iter().sum()
    }

    pub fn sum_p_min(&self) -> f64 {
        self.generators.iter().map(|g| g.p_min).sum()
    }

    pub fn sum_p_max(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    /// Capacity-proportional rebalancing weights w_i = range_i / sum(range),
    /// used by both projection flavors.
    pub fn capacity_weights(&self) -> Vec<f64> {
        let total: f64 = self.generators.iter().map(|g| g.range()).sum();
        self.generators.iter().map(|g| g.range() / total).collect()
    }

    pub fn p_min_vec(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.p_min).collect()
    }

    pub fn p_max_vec(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.p_max).collect()
    }
}

/// The IEEE 30-bus system with the six-unit cost data, from the embedded
/// case file.
pub fn build_case30() -> PowerSystem {
    PowerSystem::from_toml_str(CASE30_TOML).expect("embedded case30 data is valid")
}

/// Total generation cost sum_i c2_i*p_i^2 + c1_i*p_i + c0_i in $.
pub fn cost(system: &PowerSystem, dispatch: &[f64]) -> Result<f64, GridError> {
    if dispatch.len() != system.n_generators() {
        return Err(GridError::DispatchLength {
            expected: system.n_generators(),
            got: dispatch.len(),
        });
    }
    Ok(system
        .generators
        .iter()
        .zip(dispatch)
        .map(|(g, &p)| g.c2 * p * p + g.c1 * p + g.c0)
        .sum())
}

/// Marginal cost 2*c2_i*p_i + c1_i in $/MW, per generator.
pub fn marginal_cost(system: &PowerSystem, dispatch: &[f64]) -> Result<Vec<f64>, GridError> {
    if dispatch.len() != system.n_generators() {
        return Err(GridError::DispatchLength {
            expected: system.n_generators(),
            got: dispatch.len(),
        });
    }
    Ok(system
        .generators
        .iter()
        .zip(dispatch)
        .map(|(g, &p)| g.marginal_cost_at(p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case30_matches_published_shape() {
        let sys = build_case30();
        assert_eq!(sys.n_buses, 30);
        assert_eq!(sys.lines.len(), 41);
        assert_eq!(sys.n_generators(), 6);
        assert_eq!(sys.slack_bus, 0);
        assert!((sys.total_base_load() - 283.4).abs() < 1e-9);
        assert!((sys.sum_p_min() - 117.0).abs() < 1e-12);
        assert!((sys.sum_p_max() - 435.0).abs() < 1e-12);
    }

    #[test]
    fn case30_generator_three() {
        let sys = build_case30();
        let g = &sys.generators[2];
        assert_eq!(g.bus, 4); // bus 5, 1-based
        assert_eq!(g.p_min, 15.0);
        assert_eq!(g.p_max, 50.0);
        assert_eq!(g.c2, 0.0625);
        assert_eq!(g.c1, 1.00);
        assert_eq!(g.c0, 0.0);
    }

    #[test]
    fn cost_at_p_min_matches_direct_evaluation() {
        let sys = build_case30();
        let p_min = sys.p_min_vec();
        // Independent evaluation of the quadratic, term by term.
        let mut expect = 0.0;
        for g in &sys.generators {
            expect += g.c2 * g.p_min * g.p_min + g.c1 * g.p_min + g.c0;
        }
        assert!((expect - 281.4965).abs() < 1e-9);
        assert!((cost(&sys, &p_min).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn cost_at_zero_is_zero() {
        let sys = build_case30();
        assert_eq!(cost(&sys, &vec![0.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn cost_at_p_max_matches_direct_evaluation() {
        let sys = build_case30();
        let p_max = sys.p_max_vec();
        // 480 + 252 + 206.25 + 123.9665 + 112.5 + 160
        assert!((cost(&sys, &p_max).unwrap() - 1334.7165).abs() < 1e-9);
    }

    #[test]
    fn cost_rejects_length_mismatch() {
        let sys = build_case30();
        assert!(matches!(
            cost(&sys, &[1.0, 2.0]),
            Err(GridError::DispatchLength { expected: 6, got: 2 })
        ));
    }

    #[test]
    fn marginal_cost_examples() {
        let sys = build_case30();
        let mc = marginal_cost(&sys, &[100.0, 0.0, 0.0, 0.0, 0.0, 12.0]).unwrap();
        assert!((mc[0] - 2.40).abs() < 1e-12);
        assert!((mc[2] - 1.00).abs() < 1e-12);
        assert!((mc[5] - 3.60).abs() < 1e-12);
    }

    #[test]
    fn marginal_cost_matches_finite_difference_of_cost() {
        let sys = build_case30();
        let p = vec![120.0, 45.0, 30.0, 20.0, 15.0, 25.0];
        let mc = marginal_cost(&sys, &p).unwrap();
        // Central differences are exact for quadratics, so a wide step
        // avoids cancellation noise entirely.
        let h = 0.5;
        for i in 0..6 {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd = (cost(&sys, &hi).unwrap() - cost(&sys, &lo).unwrap()) / (2.0 * h);
            let rel = (mc[i] - fd).abs() / mc[i].abs().max(1e-12);
            assert!(rel < 1e-10, "gen {i}: mc {} vs fd {}", mc[i], fd);
        }
    }

    #[test]
    fn cost_is_strictly_convex() {
        let sys = build_case30();
        let a = vec![60.0, 30.0, 20.0, 15.0, 12.0, 14.0];
        let b = vec![180.0, 70.0, 45.0, 30.0, 28.0, 38.0];
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let cm = cost(&sys, &mid).unwrap();
        let avg = 0.5 * (cost(&sys, &a).unwrap() + cost(&sys, &b).unwrap());
        assert!(cm < avg);
    }

    #[test]
    fn capacity_weights_sum_to_one_and_match_ranges() {
        let sys = build_case30();
        let w = sys.capacity_weights();
        let expect = [150.0, 60.0, 35.0, 25.0, 20.0, 28.0];
        for (wi, e) in w.iter().zip(expect) {
            assert!((wi - e / 318.0).abs() < 1e-15);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_cases_are_rejected() {
        // disconnected graph
        let text = r#"
n_buses = 3
slack_bus = 1
base_load = [0.0, 1.0, 1.0]
[[generators]]
bus = 1
p_min = 0.1
p_max = 10.0
c2 = 0.1
c1 = 1.0
[[lines]]
from = 1
to = 2
reactance = 0.1
"#;
        assert!(matches!(
            PowerSystem::from_toml_str(text),
            Err(GridError::Invalid(_))
        ));
    }
}
