//! Experiment configuration files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::LabError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    BarrierCheck,
    AbpCheck,
    CzDemo,
    Levelsets,
    DeGiorgi,
    Holder,
    Harnack,
    Counterexample,
    Convergence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        Self::Solve,
        Self::BarrierCheck,
        Self::AbpCheck,
        Self::CzDemo,
        Self::Levelsets,
        Self::DeGiorgi,
        Self::Holder,
        Self::Harnack,
        Self::Counterexample,
        Self::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::BarrierCheck => "barrier-check",
            Self::AbpCheck => "abp-check",
            Self::CzDemo => "cz-demo",
            Self::Levelsets => "levelsets",
            Self::DeGiorgi => "de-giorgi",
            Self::Holder => "holder",
            Self::Harnack => "harnack",
            Self::Counterexample => "counterexample",
            Self::Convergence => "convergence",
        }
    }

    /// Kinds that run on a solved instance of the regularity suite.
    pub fn uses_regularity_instance(self) -> bool {
        matches!(self, Self::Levelsets | Self::DeGiorgi | Self::Holder | Self::Harnack)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyConfig {
    Uniform {
        #[serde(default = "one")]
        radius: f64,
    },
    Ellipsoids {
        count: usize,
        cell: f64,
    },
    AtomPair {
        offset: Vec<f64>,
    },
    AxisAtoms,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Constant { value: f64 },
    Spike { center: Vec<f64>, height: f64, width: f64, base: f64 },
    Linear { base: f64, slope: Vec<f64> },
    Quadratic { base: f64, coef: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Ball,
    Cube,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: Shape,
    /// Radius of a ball or side of a cube.
    pub size: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorChoice {
    #[default]
    Linear,
    SupPair,
    TugOfWar,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: Option<usize>,
    pub eps: Option<f64>,
    pub h: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub domain: Option<DomainConfig>,
    pub family: Option<FamilyConfig>,
    /// Constant source f.
    pub source: Option<f64>,
    pub boundary: Option<BoundaryConfig>,
    #[serde(default)]
    pub operator: OperatorChoice,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub solver: Option<f64>,
    pub envelope_agreement: Option<f64>,
    pub max_final_error: Option<f64>,
    pub holder_stability: Option<f64>,
}

/// Kind-specific parameters; fields a kind does not read are rejected.
#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentParams {
    pub samples: Option<usize>,
    pub dims: Option<Vec<usize>>,
    pub method: Option<String>,
    pub compare_methods: Option<bool>,
    pub levels: Option<u32>,
    pub l_max: Option<u32>,
    pub delta1: Option<String>,
    pub delta2: Option<String>,
    pub trials: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
    pub ladder_k: Option<u32>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub theta: Option<f64>,
    pub radius: Option<f64>,
    pub max_nodes: Option<usize>,
    pub refine: Option<u32>,
    pub a_values: Option<Vec<f64>>,
    pub case: Option<String>,
    pub eps_ladder: Option<Vec<f64>>,
    pub h_ratio: Option<f64>,
}

impl ExperimentParams {
    fn set_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! probe {
            ($($f:ident),*) => { $( if self.$f.is_some() { out.push(stringify!($f)); } )* };
        }
        probe!(samples, dims, method, compare_methods, levels, l_max, delta1, delta2, trials, thresholds, ladder_k, mu, rho, theta, radius, max_nodes, refine, a_values, case, eps_ladder, h_ratio);
        out
    }
}

fn allowed_params(kind: ExperimentKind) -> &'static [&'static str] {
    const PIPELINE: &[&str] = &["mu", "rho", "theta", "radius", "max_nodes", "thresholds", "ladder_k", "refine"];
    match kind {
        ExperimentKind::Solve => &[],
        ExperimentKind::BarrierCheck => &["samples", "dims"],
        ExperimentKind::AbpCheck => &["method", "compare_methods"],
        ExperimentKind::CzDemo => &["levels", "l_max", "delta1", "delta2", "trials"],
        ExperimentKind::Levelsets | ExperimentKind::DeGiorgi | ExperimentKind::Holder => PIPELINE,
        ExperimentKind::Harnack => &["mu", "rho", "theta", "radius", "max_nodes", "thresholds", "ladder_k", "refine", "a_values"],
        ExperimentKind::Counterexample => &["a_values"],
        ExperimentKind::Convergence => &["case", "eps_ladder", "h_ratio"],
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub kind: ExperimentKind,
    pub seed: Option<u64>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub experiment: ExperimentParams,
}

fn one() -> f64 {
    1.0
}

pub fn parse_ratio(field: &str, s: &str) -> Result<Ratio<u64>, LabError> {
    let r = Ratio::<u64>::from_str(s.trim()).map_err(|_| LabError::field(field, format!("`{s}` is not a ratio p/q")))?;
    if *r.numer() == 0 || r >= Ratio::from_integer(1) {
        return Err(LabError::field(field, format!("{s} must lie in (0, 1)")));
    }
    Ok(r)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Randomness enters through sampled points, random instances or a
    /// random measure family.
    pub fn needs_seed(&self) -> bool {
        matches!(self.kind, ExperimentKind::BarrierCheck | ExperimentKind::CzDemo) || matches!(self.problem.family, Some(FamilyConfig::Ellipsoids { .. }))
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if self.schema != SCHEMA_VERSION {
            return Err(LabError::field("schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.needs_seed() && self.seed.is_none() {
            return Err(LabError::field("seed", format!("required for `{}` with this problem", self.kind)));
        }
        let allowed = allowed_params(self.kind);
        if let Some(bad) = self.experiment.set_fields().into_iter().find(|f| !allowed.contains(f)) {
            return Err(LabError::field(&format!("experiment.{bad}"), format!("not used by `{}`", self.kind)));
        }
        let p = &self.problem;
        if let Some(d) = p.dim {
            if !(1..=3).contains(&d) {
                return Err(LabError::field("problem.dim", format!("{d} outside 1..=3")));
            }
        }
        if let Some(b) = p.beta {
            if !(b > 0.0 && b <= 1.0) {
                return Err(LabError::field("problem.beta", format!("{b} outside (0, 1]")));
            }
        }
        if let Some(a) = p.alpha {
            if !(0.0..1.0).contains(&a) {
                return Err(LabError::field("problem.alpha", format!("{a} outside [0, 1)")));
            }
            if let Some(b) = p.beta {
                if (a + b - 1.0).abs() > 1e-12 {
                    return Err(LabError::field("problem.alpha", format!("α + β = {} ≠ 1", a + b)));
                }
            }
        }
        if let Some(l) = p.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(LabError::field("problem.lambda", format!("{l} must be positive")));
            }
        }
        for (name, v) in [("problem.eps", p.eps), ("problem.h", p.h)] {
            if let Some(v) = v {
                if !(v > 0.0 && v < 1.0) {
                    return Err(LabError::field(name, format!("{v} outside (0, 1)")));
                }
            }
        }
        if let (Some(e), Some(h)) = (p.eps, p.h) {
            if h > e {
                return Err(LabError::field("problem.h", format!("h = {h} exceeds ε = {e}")));
            }
        }
        if let Some(d) = &p.domain {
            if !(d.size > 0.0 && d.size.is_finite()) {
                return Err(LabError::field("problem.domain.size", format!("{} must be positive", d.size)));
            }
        }
        if let Some(s) = p.source {
            if !s.is_finite() {
                return Err(LabError::field("problem.source", "must be finite"));
            }
        }
        if let Some(t) = self.tolerances.solver {
            if !(t > 0.0) {
                return Err(LabError::field("tolerances.solver", format!("{t} must be positive")));
            }
        }
        if p.operator != OperatorChoice::Linear && self.kind != ExperimentKind::Solve {
            return Err(LabError::field("problem.operator", format!("only `linear` is supported by `{}`", self.kind)));
        }
        let e = &self.experiment;
        for (name, v) in [("experiment.delta1", &e.delta1), ("experiment.delta2", &e.delta2)] {
            if let Some(s) = v {
                parse_ratio(name, s)?;
            }
        }
        if let Some(t) = e.theta {
            if !(t > 0.0 && t <= 1.0) {
                return Err(LabError::field("experiment.theta", format!("{t} outside (0, 1]")));
            }
        }
        if let Some(m) = e.mu {
            if !(m > 0.0 && m < 1.0) {
                return Err(LabError::field("experiment.mu", format!("{m} outside (0, 1)")));
            }
        }
        if let Some(m) = &e.method {
            if m != "hull" && m != "lp" {
                return Err(LabError::field("experiment.method", format!("`{m}` is neither `hull` nor `lp`")));
            }
        }
        if let Some(a) = &e.a_values {
            if a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(LabError::field("experiment.a_values", "entries must be positive"));
            }
        }
        if let Some(l) = &e.eps_ladder {
            if l.is_empty() || l.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(LabError::field("experiment.eps_ladder", "entries must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.problem.beta.or(self.problem.alpha.map(|a| 1.0 - a)).unwrap_or(0.5)
    }
}
