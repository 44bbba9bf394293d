//! JSON run configuration, validated before any computation.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "scenario": "sdf-linear",
//!   "tau": 0.5,
//!   "T": 1.0,
//!   "L": "auto",
//!   "mode": "exact"
//! }
//! ```
//!
//! `scenario` is either a built-in name or a custom field
//! `{"kind": "sampled", "expr": "-x + u", "dim": 1, "noise": {"labels": [1, -1]}}`.
//! A custom field needs an explicit `mu0` and a numeric `L`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{auto_l_bound, SweepMode};
use crate::error::{Error, Result};
use crate::euler::{EulerOptions, DEFAULT_ATOM_CAP, DEFAULT_TUPLE_CAP};
use crate::fields::dsl::{compile_field, FieldKind};
use crate::fields::{scenario, scenario_names, NoiseSpace, PvfSpec, Scenario};
use crate::limit::StickyFlowConfig;
use crate::measure::DiscreteMeasure;
use crate::montecarlo::NoiseMode;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub labels: Vec<f64>,
    /// Uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomField {
    pub kind: FieldKind,
    pub expr: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    /// Declared dissipativity modulus, used by `verify`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Named(String),
    Custom(CustomField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Exact,
    MonteCarlo,
    ExactOrMonteCarlo,
}

/// Inputs of the `bounds` command; missing values come from the scenario and `mu0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsInput {
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_samples() -> usize {
    1000
}
fn default_atom_cap() -> usize {
    DEFAULT_ATOM_CAP
}
fn default_tuple_cap() -> usize {
    DEFAULT_TUPLE_CAP
}
fn default_reference_dt() -> f64 {
    1e-4
}
fn default_merge_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub scenario: FieldSource,
    /// Initial measure; defaults to the scenario's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<DiscreteMeasure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Step sizes of a sweep, strictly decreasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// A number, `"auto"`, or omitted for the scenario default.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<serde_json::Value>,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default = "default_atom_cap")]
    pub atom_cap: usize,
    #[serde(default = "default_tuple_cap")]
    pub tuple_cap: usize,
    #[serde(default)]
    pub coalesce_tol: f64,
    /// Micro-step of the limit-flow reference.
    #[serde(default = "default_reference_dt")]
    pub reference_dt: f64,
    #[serde(default = "default_merge_tol")]
    pub merge_tol: f64,
    #[serde(default)]
    pub bounds: BoundsInput,
    #[serde(default)]
    pub record_timings: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// A validated configuration with its field and initial measure resolved.
#[derive(Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub name: String,
    pub spec: PvfSpec,
    pub mu0: DiscreteMeasure,
    pub builtin: Option<Scenario>,
    pub lambda: Option<f64>,
    pub l_bound: f64,
    /// SHA-256 of the canonical config JSON.
    pub hash: String,
}

impl std::fmt::Debug for Resolved {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolved")
            .field("name", &self.name)
            .field("l_bound", &self.l_bound)
            .field("hash", &self.hash)
            .finish()
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl RunConfig {
    pub fn from_json(src: &str) -> Result<Self> {
        serde_json::from_str(src).map_err(|e| cfg_err(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Step sizes of a sweep: `taus`, or `[tau]`.
    pub fn sweep_taus(&self) -> Result<Vec<f64>> {
        match (&self.taus, self.tau) {
            (Some(t), _) => Ok(t.clone()),
            (None, Some(t)) => Ok(vec![t]),
            (None, None) => Err(cfg_err("tau or taus is required")),
        }
    }

    pub fn euler_options(&self) -> EulerOptions {
        EulerOptions {
            coalesce_tol: self.coalesce_tol,
            atom_cap: self.atom_cap,
        }
    }

    pub fn sticky_config(&self) -> StickyFlowConfig {
        StickyFlowConfig {
            dt: self.reference_dt,
            merge_tol: self.merge_tol,
            ..StickyFlowConfig::default()
        }
    }

    pub fn sweep_mode(&self) -> SweepMode {
        match self.mode {
            RunMode::Exact => SweepMode::Exact,
            RunMode::MonteCarlo => SweepMode::MonteCarlo {
                samples: self.samples,
                seed: self.seed,
            },
            RunMode::ExactOrMonteCarlo => SweepMode::ExactOrMonteCarlo {
                samples: self.samples,
                seed: self.seed,
            },
        }
    }

    /// Validates every field and resolves the scenario.
    pub fn resolve(self) -> Result<Resolved> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        positive("T", self.horizon)?;
        if let Some(t) = self.tau {
            positive("tau", t)?;
        }
        if let Some(ts) = &self.taus {
            if ts.is_empty() {
                return Err(cfg_err("taus must not be empty"));
            }
            for &t in ts {
                positive("taus entry", t)?;
            }
            if ts.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(cfg_err("taus must be strictly decreasing"));
            }
        }
        if self.samples == 0 {
            return Err(cfg_err("samples must be at least 1"));
        }
        if self.atom_cap == 0 || self.tuple_cap == 0 {
            return Err(cfg_err("caps must be positive"));
        }
        if !(self.coalesce_tol >= 0.0 && self.coalesce_tol.is_finite()) {
            return Err(cfg_err("coalesce_tol must be non-negative"));
        }
        positive("reference_dt", self.reference_dt)?;
        if !(self.merge_tol >= 0.0 && self.merge_tol.is_finite()) {
            return Err(cfg_err("merge_tol must be non-negative"));
        }

        let (name, spec, builtin, dim, lambda) = match &self.scenario {
            FieldSource::Named(n) => {
                let s = scenario(n).ok_or_else(|| {
                    cfg_err(format!(
                        "unknown scenario {n:?}; available: {}",
                        scenario_names().join(", ")
                    ))
                })?;
                (
                    n.clone(),
                    s.spec.clone(),
                    Some(s.clone()),
                    s.dim,
                    Some(s.lambda),
                )
            }
            FieldSource::Custom(c) => {
                if c.dim == 0 {
                    return Err(cfg_err("custom field dim must be positive"));
                }
                let noise = match &c.noise {
                    None => NoiseSpace::trivial(),
                    Some(n) => match &n.weights {
                        None if n.labels.is_empty() => {
                            return Err(cfg_err("noise labels must not be empty"))
                        }
                        None => NoiseSpace::uniform(n.labels.clone()),
                        Some(w) => NoiseSpace::new(n.labels.clone(), w.clone())
                            .map_err(|e| cfg_err(e.to_string()))?,
                    },
                };
                let spec = compile_field(c.kind, &c.expr, c.dim, noise)
                    .map_err(|e| cfg_err(format!("field expression: {e}")))?;
                ("custom".to_string(), spec, None, c.dim, c.lambda)
            }
        };

        let mu0 = match (&self.mu0, &builtin) {
            (Some(m), _) => m.clone(),
            (None, Some(s)) => s.mu0.clone(),
            (None, None) => return Err(cfg_err("a custom field needs an explicit mu0")),
        };
        if mu0.dim() != dim {
            return Err(cfg_err(format!(
                "mu0 lives in dimension {}, the field in {dim}",
                mu0.dim()
            )));
        }

        let l_bound = match &self.l {
            None => match &builtin {
                Some(s) => s.default_l,
                None => return Err(cfg_err("a custom field needs a numeric L")),
            },
            Some(serde_json::Value::Number(n)) => {
                let v = n.as_f64().unwrap_or(f64::NAN);
                positive("L", v)?;
                v
            }
            Some(serde_json::Value::String(s)) if s == "auto" => {
                let Some(sc) = &builtin else {
                    return Err(cfg_err("L = \"auto\" needs a built-in scenario"));
                };
                match (sc.growth_a, &sc.rho) {
                    (Some(a), Some(rho)) => auto_l_bound(&mu0, a, self.horizon, rho.as_ref())
                        .map_err(|e| cfg_err(e.to_string()))?,
                    _ => return Err(cfg_err(format!(
                        "L = \"auto\" needs declared growth and support constants; {name} has none"
                    ))),
                }
            }
            Some(other) => {
                return Err(cfg_err(format!(
                    "L must be a number or \"auto\", got {other}"
                )))
            }
        };

        let hash = self.hash();
        Ok(Resolved {
            config: self,
            name,
            spec,
            mu0,
            builtin,
            lambda,
            l_bound,
            hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Resolved> {
        RunConfig::from_json(s)?.resolve()
    }

    #[test]
    fn builtin_defaults() {
        let r = parse(r#"{"scenario": "sdf-linear", "tau": 0.5, "T": 1}"#).unwrap();
        assert_eq!(r.l_bound, 2.0);
        assert_eq!(r.mu0, DiscreteMeasure::dirac(&[0.0]).unwrap());
        assert_eq!(r.hash.len(), 64);
    }

    #[test]
    fn auto_l_uses_declared_constants() {
        let r = parse(r#"{"scenario": "sdf-linear", "tau": 0.1, "T": 1, "L": "auto"}"#).unwrap();
        let a = crate::fields::scenarios::growth_constant(1.0);
        let rp = a.exp() * (1.0 + 2.0 * a).sqrt() + 1.0;
        assert!((r.l_bound - (rp * rp + (rp + 1.0) * (rp + 1.0)).sqrt()).abs() < 1e-12);
        let e = parse(r#"{"scenario": "stochastic-idf", "tau": 0.1, "T": 1, "L": "auto"}"#);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn custom_field_compiles() {
        let r = parse(
            r#"{"scenario": {"kind": "sampled", "expr": "-x + u", "dim": 1,
                "noise": {"labels": [1, -1]}},
                "mu0": {"dim": 1, "atoms": [[0]], "weights": [1]},
                "tau": 0.5, "T": 1, "L": 2}"#,
        )
        .unwrap();
        assert_eq!(r.spec.branching(1), 2);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"scenario": "sdf-linear", "tau": 0, "T": 1}"#,
            r#"{"scenario": "nope", "tau": 0.5, "T": 1}"#,
            r#"{"scenario": "sdf-linear", "taus": [0.1, 0.2], "T": 1}"#,
            r#"{"scenario": "sdf-linear", "tau": 0.5, "T": 1, "extra": 3}"#,
            r#"{"scenario": "sdf-linear", "tau": 0.5, "T": 1, "L": "big"}"#,
            r#"{"scenario": {"kind": "sampled", "expr": "-x", "dim": 1}, "tau": 0.5, "T": 1, "L": 1}"#,
            r#"{"scenario": "sdf-linear", "tau": 0.5, "T": 1, "schema_version": 9}"#,
        ] {
            assert!(matches!(parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::from_json(r#"{"scenario": "sdf-linear", "tau": 0.5, "T": 1}"#).unwrap();
        let b = RunConfig::from_json(r#"{"T": 1, "tau": 0.5, "scenario": "sdf-linear"}"#).unwrap();
        let c = RunConfig::from_json(r#"{"scenario": "sdf-linear", "tau": 0.25, "T": 1}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
