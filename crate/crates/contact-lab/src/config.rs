//! Run configuration: a single JSON document drives every subcommand.
//!
//! Parsing is strict: unknown fields are rejected with line-anchored
//! messages, every cross-field constraint is validated before any
//! computation starts, and the raw document is echoed into the manifest of
//! every artifact so a run can be regenerated from its outputs alone.

use serde::{Deserialize, Serialize};

use crate::coupling::{ConditioningEvent, Side};
use crate::dynamics::Configuration;
use crate::error::{Error, Result};
use crate::graph::{apply_perturbation, make_graph, BaseKind, EdgePerturbation, Graph, VertexId};

/// A vertex in config form: a bare integer (one-dimensional coordinate or a
/// single tree label) or an integer array (coordinates, or a tree word).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VertexSpec {
    Scalar(i64),
    Tuple(Vec<i64>),
}

impl VertexSpec {
    fn parts(&self) -> Vec<i64> {
        match self {
            VertexSpec::Scalar(x) => vec![*x],
            VertexSpec::Tuple(xs) => xs.clone(),
        }
    }

    /// Resolves against a base kind: coordinate encodings for lattice
    /// families, label words for trees.
    pub fn resolve(&self, base: &BaseKind, field: &str) -> Result<VertexId> {
        let parts = self.parts();
        let id = match base {
            BaseKind::Lattice { .. } | BaseKind::Ring { .. } | BaseKind::Torus { .. } => {
                VertexId::Coord(parts)
            }
            BaseKind::Tree { .. } | BaseKind::TreeBall { .. } => {
                let mut word = Vec::with_capacity(parts.len());
                for p in parts {
                    if !(0..=255).contains(&p) {
                        return Err(Error::validation(
                            field,
                            format!("tree edge label {p} out of range"),
                        ));
                    }
                    word.push(p as u8);
                }
                VertexId::Word(word)
            }
        };
        Ok(id)
    }
}

/// Graph section of the config: a base family plus edge perturbations, e.g.
/// `{"base": "ring", "L": 200, "added": [[0, 100]], "removed": []}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub base: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub len: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<u32>,
    #[serde(default)]
    pub added: Vec<(VertexSpec, VertexSpec)>,
    #[serde(default)]
    pub removed: Vec<(VertexSpec, VertexSpec)>,
    #[serde(default)]
    pub strict_distinct: bool,
}

impl GraphSpec {
    fn base_kind(&self) -> Result<BaseKind> {
        let need = |opt: Option<u64>, name: &'static str| {
            opt.ok_or_else(|| {
                Error::validation(
                    format!("graph.{name}"),
                    format!("required for base \"{}\"", self.base),
                )
            })
        };
        match self.base.as_str() {
            "lattice" => Ok(BaseKind::Lattice {
                dim: need(self.dim.map(u64::from), "dim")? as u32,
            }),
            "tree" => Ok(BaseKind::Tree {
                degree: need(self.degree.map(u64::from), "degree")? as u32,
            }),
            "ring" => Ok(BaseKind::Ring {
                len: need(self.len, "L")?,
            }),
            "torus" => Ok(BaseKind::Torus {
                dim: need(self.dim.map(u64::from), "dim")? as u32,
                len: need(self.len, "L")?,
            }),
            "tree_ball" => Ok(BaseKind::TreeBall {
                degree: need(self.degree.map(u64::from), "degree")? as u32,
                radius: need(self.radius.map(u64::from), "radius")? as u32,
            }),
            other => Err(Error::validation(
                "graph.base",
                format!(
                    "unknown base \"{other}\" (expected lattice, tree, ring, torus, tree_ball)"
                ),
            )),
        }
    }

    pub fn perturbation(&self, base: &BaseKind) -> Result<EdgePerturbation> {
        let resolve_pairs = |pairs: &[(VertexSpec, VertexSpec)],
                             field: &str|
         -> Result<Vec<(VertexId, VertexId)>> {
            pairs
                .iter()
                .map(|(a, b)| Ok((a.resolve(base, field)?, b.resolve(base, field)?)))
                .collect()
        };
        Ok(EdgePerturbation {
            added: resolve_pairs(&self.added, "graph.added")?,
            removed: resolve_pairs(&self.removed, "graph.removed")?,
            strict_distinct: self.strict_distinct,
        })
    }

    /// Builds the graph, returning perturbation warnings alongside.
    pub fn build(&self) -> Result<(Graph, Vec<String>)> {
        let kind = self.base_kind()?;
        let g = make_graph(kind)?;
        let p = self.perturbation(g.base())?;
        if p.is_empty() {
            return Ok((g, Vec::new()));
        }
        let out = apply_perturbation(&g, &p)?;
        Ok((out.graph, out.warnings))
    }
}

/// Extra perturbation applied on top of `graph` to form the compared graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimeSpec {
    #[serde(default)]
    pub added: Vec<(VertexSpec, VertexSpec)>,
    #[serde(default)]
    pub removed: Vec<(VertexSpec, VertexSpec)>,
    #[serde(default)]
    pub strict_distinct: bool,
}

impl PrimeSpec {
    pub fn perturbation(&self, base: &BaseKind) -> Result<EdgePerturbation> {
        let spec = GraphSpec {
            base: String::new(),
            dim: None,
            degree: None,
            len: None,
            radius: None,
            added: self.added.clone(),
            removed: self.removed.clone(),
            strict_distinct: self.strict_distinct,
        };
        spec.perturbation(base)
    }
}

/// Initial condition.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    /// Single infection at the origin.
    #[default]
    Origin,
    /// Dense start on a finite graph.
    AllOnes,
    /// Explicit finite seed set.
    #[serde(untagged)]
    SeedSet { seed_set: Vec<VertexSpec> },
}

impl InitSpec {
    pub fn build(&self, g: &Graph) -> Result<Configuration> {
        match self {
            InitSpec::Origin => Ok(Configuration::from_vertices([g.origin()])),
            InitSpec::AllOnes => Configuration::all_ones(g),
            InitSpec::SeedSet { seed_set } => {
                let mut vs = Vec::with_capacity(seed_set.len());
                for s in seed_set {
                    let v = s.resolve(g.base(), "init.seed_set")?;
                    if !g.contains_vertex(&v) {
                        return Err(Error::validation(
                            "init.seed_set",
                            format!("{v} is not a vertex"),
                        ));
                    }
                    vs.push(v);
                }
                Ok(Configuration::from_vertices(vs))
            }
        }
    }
}

/// Observation grid: either an explicit strictly increasing list or a count
/// of evenly spaced points spanning `[0, horizon]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GridSpec {
    Points { points: u32 },
    Explicit(Vec<f64>),
}

impl GridSpec {
    pub fn build(&self, horizon: f64) -> Result<Vec<f64>> {
        match self {
            GridSpec::Points { points } => {
                if *points == 0 || *points > 1_000_000 {
                    return Err(Error::validation("grid.points", "must be 1..=1000000"));
                }
                Ok((0..=*points)
                    .map(|j| horizon * j as f64 / *points as f64)
                    .collect())
            }
            GridSpec::Explicit(ts) => {
                if ts.is_empty() {
                    return Err(Error::validation("grid", "must be nonempty"));
                }
                Ok(ts.clone())
            }
        }
    }
}

/// Which perturbed edge a conditioning event refers to.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    /// "added" or "removed": which list of the prime perturbation.
    pub kind: String,
    #[serde(default)]
    pub index: usize,
    /// "first" or "second": the endpoint conditioned to be healthy.
    pub healthy: String,
}

impl EventSpec {
    pub fn build(&self, base: &BaseKind, prime: &PrimeSpec) -> Result<ConditioningEvent> {
        let list = match self.kind.as_str() {
            "added" => &prime.added,
            "removed" => &prime.removed,
            other => {
                return Err(Error::validation(
                    "event.kind",
                    format!("expected \"added\" or \"removed\", got \"{other}\""),
                ))
            }
        };
        let (a, b) = list.get(self.index).ok_or_else(|| {
            Error::validation(
                "event.index",
                format!("prime.{} has {} entries", self.kind, list.len()),
            )
        })?;
        let side = match self.healthy.as_str() {
            "first" => Side::First,
            "second" => Side::Second,
            other => {
                return Err(Error::validation(
                    "event.healthy",
                    format!("expected \"first\" or \"second\", got \"{other}\""),
                ))
            }
        };
        ConditioningEvent::new((a.resolve(base, "event")?, b.resolve(base, "event")?), side)
    }
}

/// Conditioned-pair sampling knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxSpec {
    pub t_relax: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<u64>,
    #[serde(default = "default_attempts")]
    pub attempts: u64,
    /// Force the endpoint values instead of rejection sampling; the
    /// fallback when the conditioned measure is degenerate.
    #[serde(default)]
    pub force: bool,
}

fn default_attempts() -> u64 {
    200
}

/// Critical-protocol knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalSpec {
    pub bracket: (f64, f64),
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_bisection_steps")]
    pub bisection_steps: u32,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: u32,
}

fn default_threshold() -> f64 {
    0.05
}

fn default_bisection_steps() -> u32 {
    12
}

fn default_bootstrap() -> u32 {
    1000
}

/// Simulation engine choice for independent-replica subcommands.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EngineSpec {
    #[default]
    Gillespie,
    Graphical,
}

/// The complete run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: GraphSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub engine: EngineSpec,
    #[serde(default)]
    pub log_events: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_cap: Option<f64>,
    /// Length of the graphical construction's generation/memoization window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prime: Option<PrimeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relax: Option<RelaxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical: Option<CriticalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_instances: Option<u64>,
}

fn default_replicas() -> u64 {
    1000
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::validation("lambda", "must be finite and >= 0"));
            }
        }
        if let Some(h) = self.horizon {
            if !h.is_finite() || h <= 0.0 {
                return Err(Error::validation("horizon", "must be finite and > 0"));
            }
        }
        if self.replicas == 0 {
            return Err(Error::validation("replicas", "must be >= 1"));
        }
        if let Some(cap) = self.rate_cap {
            if !cap.is_finite() || cap < 0.0 {
                return Err(Error::validation("rate_cap", "must be finite and >= 0"));
            }
            if let Some(l) = self.lambda {
                if l > cap {
                    return Err(Error::validation("rate_cap", "must be >= lambda"));
                }
            }
        }
        if let Some(w) = self.stream_window {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::validation("stream_window", "must be finite and > 0"));
            }
        }
        if let Some(c) = &self.critical {
            if !(c.bracket.0 >= 0.0
                && c.bracket.0.is_finite()
                && c.bracket.1.is_finite()
                && c.bracket.1 > c.bracket.0)
            {
                return Err(Error::validation(
                    "critical.bracket",
                    "must satisfy 0 <= lo < hi",
                ));
            }
            if !(c.threshold > 0.0 && c.threshold < 1.0) {
                return Err(Error::validation(
                    "critical.threshold",
                    "must lie in (0, 1)",
                ));
            }
            if c.bisection_steps == 0 || c.bisection_steps > 40 {
                return Err(Error::validation(
                    "critical.bisection_steps",
                    "must be 1..=40",
                ));
            }
        }
        if let Some(r) = &self.relax {
            if !r.t_relax.is_finite() || r.t_relax <= 0.0 {
                return Err(Error::validation("relax.t_relax", "must be finite and > 0"));
            }
            if r.attempts == 0 {
                return Err(Error::validation("relax.attempts", "must be >= 1"));
            }
        }
        if let Some((lo, hi)) = self.fit_window {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::validation("fit_window", "must satisfy lo < hi"));
            }
        }
        // cheap structural pass over the graph section
        let _ = self.graph.build()?;
        Ok(())
    }

    pub fn require_lambda(&self) -> Result<f64> {
        self.lambda
            .ok_or_else(|| Error::validation("lambda", "required by this subcommand"))
    }

    pub fn require_horizon(&self) -> Result<f64> {
        self.horizon
            .ok_or_else(|| Error::validation("horizon", "required by this subcommand"))
    }

    /// The perturbed companion graph formed by applying `prime` on top of
    /// the base graph.
    pub fn build_prime(&self, g: &Graph) -> Result<(Graph, Vec<String>)> {
        let prime = self
            .prime
            .as_ref()
            .ok_or_else(|| Error::validation("prime", "required by this subcommand"))?;
        let p = prime.perturbation(g.base())?;
        let out = apply_perturbation(g, &p)?;
        Ok((out.graph, out.warnings))
    }
}
