//! Model configuration files and the built-in example networks.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{fields_from_terms, FormationModel, Term};
use crate::error::{Error, Result};
use crate::pattern::PatternMatrix;
use crate::sdp::certificate::Method;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// JSON schema describing [`ModelConfig`] files.
pub const MODEL_SCHEMA: &str = include_str!("../schema/model.schema.json");

/// Pattern matrix source: `{"cycle": N}`, `{"matrix": [[..]]}` or
/// `{"edges": [[i, j, w], ..]}` (1-based agents).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternSpec {
    Cycle(CycleSpec),
    Matrix(MatrixSpec),
    Edges(EdgesSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSpec {
    pub cycle: usize,
    #[serde(default = "unit", skip_serializing_if = "is_unit")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgesSpec {
    pub edges: Vec<(usize, usize, f64)>,
}

impl PatternSpec {
    pub fn cycle(n_agents: usize) -> Self {
        PatternSpec::Cycle(CycleSpec {
            cycle: n_agents,
            weight: 1.0,
        })
    }
}

fn unit() -> f64 {
    1.0
}

fn is_unit(v: &f64) -> bool {
    *v == 1.0
}

impl PatternSpec {
    pub fn build(&self, n_agents: usize) -> Result<PatternMatrix> {
        let p = match self {
            PatternSpec::Cycle(CycleSpec { cycle, weight }) => {
                PatternMatrix::cycle_laplacian(*cycle, *weight)?
            }
            PatternSpec::Matrix(MatrixSpec { matrix }) => {
                let k = matrix.len();
                if matrix.iter().any(|r| r.len() != k) {
                    return Err(Error::Config("pattern matrix must be square".into()));
                }
                PatternMatrix::from_dense(DMatrix::from_fn(k, k, |i, j| matrix[i][j]))?
            }
            PatternSpec::Edges(EdgesSpec { edges }) => {
                PatternMatrix::from_edge_list(n_agents, edges)?
            }
        };
        if p.n_agents() != n_agents {
            return Err(Error::Config(format!(
                "pattern has {} agents but N = {n_agents}",
                p.n_agents()
            )));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodDefaults {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default = "unit")]
    pub epsilon: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub non_strict_margin: f64,
    #[serde(default = "default_verify_tol")]
    pub verify_tol: f64,
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
}

fn default_method() -> Method {
    Method::Theorem1
}
fn default_l() -> usize {
    1
}
fn default_margin() -> f64 {
    1e-6
}
fn default_verify_tol() -> f64 {
    1e-7
}
fn default_zero_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    100
}
fn default_solver_tol() -> f64 {
    1e-9
}

impl Default for MethodDefaults {
    fn default() -> Self {
        Self {
            method: default_method(),
            l: default_l(),
            epsilon: 1.0,
            margin: default_margin(),
            non_strict_margin: 0.0,
            verify_tol: default_verify_tol(),
            zero_tol: default_zero_tol(),
            max_iters: default_max_iters(),
            solver_tol: default_solver_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub n: usize,
    #[serde(rename = "N")]
    pub n_agents: usize,
    pub agent_terms: Vec<Term>,
    pub coupling_terms: Vec<Term>,
    /// Gain multiplying every coupling term at load time.
    #[serde(default = "unit")]
    pub c: f64,
    pub pattern: PatternSpec,
    /// Named physical parameters, informational only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub defaults: MethodDefaults,
}

impl ModelConfig {
    /// Parse and validate. Syntax and type errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Constraints of the published schema that serde does not enforce.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return bad(format!(
                "schema_version must be {MODEL_SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.n_agents < 2 {
            return bad("N must be >= 2".into());
        }
        if !self.c.is_finite() {
            return bad("c must be finite".into());
        }
        for (field, terms) in [
            ("agent_terms", &self.agent_terms),
            ("coupling_terms", &self.coupling_terms),
        ] {
            for (k, t) in terms.iter().enumerate() {
                if t.row == 0 || t.row > self.n {
                    return bad(format!(
                        "{field}[{k}].row = {} is outside 1..={}",
                        t.row, self.n
                    ));
                }
                if t.powers.len() != self.n {
                    return bad(format!(
                        "{field}[{k}].powers has {} entries, expected n = {}",
                        t.powers.len(),
                        self.n
                    ));
                }
                if !t.coeff.is_finite() {
                    return bad(format!("{field}[{k}].coeff is not finite"));
                }
            }
        }
        let d = &self.defaults;
        if d.l == 0 {
            return bad("defaults.l must be >= 1".into());
        }
        if !(d.epsilon >= 0.0 && d.margin >= 0.0 && d.non_strict_margin >= 0.0) {
            return bad("defaults.epsilon and margins must be >= 0".into());
        }
        if !(d.verify_tol > 0.0 && d.zero_tol > 0.0 && d.solver_tol > 0.0) || d.max_iters == 0 {
            return bad("defaults tolerances and max_iters must be positive".into());
        }
        Ok(())
    }

    /// Coupling terms with the gain applied.
    pub fn scaled_coupling_terms(&self) -> Vec<Term> {
        self.coupling_terms
            .iter()
            .map(|t| Term {
                coeff: t.coeff * self.c,
                ..t.clone()
            })
            .collect()
    }

    pub fn build(&self) -> Result<FormationModel> {
        self.validate()?;
        let (agent, coupling) =
            fields_from_terms(self.n, &self.agent_terms, &self.scaled_coupling_terms())?;
        let pattern = self.pattern.build(self.n_agents)?;
        FormationModel::with_zero_tol(agent, coupling, pattern, self.defaults.zero_tol)
    }

    /// SHA-256 of the compact canonical serialisation.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config always serialises");
        content_hash(text.as_bytes())
    }
}

/// Hex SHA-256 digest.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Van der Pol oscillators on a cycle, coupled through `-c (x + y)` in the
/// second component. `classical` switches the damping to `mu (1 - x^2) y`.
pub fn van_der_pol(n_agents: usize, mu: f64, c: f64, l: usize, classical: bool) -> ModelConfig {
    let damping = if classical {
        Term::new(2, -mu, &[2, 1])
    } else {
        Term::new(2, -mu, &[1, 1])
    };
    let mut parameters = BTreeMap::new();
    parameters.insert("mu".to_string(), mu);
    ModelConfig {
        schema_version: MODEL_SCHEMA_VERSION,
        name: Some(if classical { "vdp-classical" } else { "vdp" }.to_string()),
        description: Some(if classical {
            "Van der Pol oscillators, damping mu (1 - x^2) y".to_string()
        } else {
            "Van der Pol oscillators, damping mu (1 - x) y".to_string()
        }),
        n: 2,
        n_agents,
        agent_terms: vec![
            Term::new(1, 1.0, &[0, 1]),
            Term::new(2, mu, &[0, 1]),
            damping,
            Term::new(2, -1.0, &[1, 0]),
        ],
        coupling_terms: vec![Term::new(2, -1.0, &[1, 0]), Term::new(2, -1.0, &[0, 1])],
        c,
        pattern: PatternSpec::cycle(n_agents),
        parameters,
        defaults: MethodDefaults {
            method: Method::Theorem2,
            l,
            ..MethodDefaults::default()
        },
    }
}

/// Lorenz systems on a cycle with diffusive coupling in every component.
pub fn lorenz(n_agents: usize, sigma: f64, rho: f64, beta: f64, c: f64, l: usize) -> ModelConfig {
    let mut parameters = BTreeMap::new();
    parameters.insert("sigma".to_string(), sigma);
    parameters.insert("rho".to_string(), rho);
    parameters.insert("beta".to_string(), beta);
    ModelConfig {
        schema_version: MODEL_SCHEMA_VERSION,
        name: Some("lorenz".to_string()),
        description: Some("Lorenz systems with diffusive coupling".to_string()),
        n: 3,
        n_agents,
        agent_terms: vec![
            Term::new(1, -sigma, &[1, 0, 0]),
            Term::new(1, sigma, &[0, 1, 0]),
            Term::new(2, rho, &[1, 0, 0]),
            Term::new(2, -1.0, &[1, 0, 1]),
            Term::new(2, -1.0, &[0, 1, 0]),
            Term::new(3, 1.0, &[1, 1, 0]),
            Term::new(3, -beta, &[0, 0, 1]),
        ],
        coupling_terms: vec![
            Term::new(1, -1.0, &[1, 0, 0]),
            Term::new(2, -1.0, &[0, 1, 0]),
            Term::new(3, -1.0, &[0, 0, 1]),
        ],
        c,
        pattern: PatternSpec::cycle(n_agents),
        parameters,
        defaults: MethodDefaults {
            method: Method::Theorem1,
            l,
            ..MethodDefaults::default()
        },
    }
}

/// The two reference networks with their published parameters.
pub fn example(name: &str) -> Option<ModelConfig> {
    match name {
        "vdp" => Some(van_der_pol(10, 0.5, 15.0, 6, false)),
        "vdp-classical" => Some(van_der_pol(10, 0.5, 15.0, 6, true)),
        "lorenz" => Some(lorenz(8, 10.0, 28.0, 8.0 / 3.0, 50.0, 6)),
        _ => None,
    }
}

pub const EXAMPLE_NAMES: [&str; 3] = ["vdp", "vdp-classical", "lorenz"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vdp_coupling_matrix() {
        let m = example("vdp").unwrap().build().unwrap();
        let expect = DMatrix::from_row_slice(
            2,
            6,
            &[0.0; 6]
                .iter()
                .chain(&[0.0, -15.0, -15.0, 0.0, 0.0, 0.0])
                .copied()
                .collect::<Vec<_>>(),
        );
        assert_eq!(m.coupling.coefficients(), &expect);
        assert_eq!(m.n_agents(), 10);
    }

    #[test]
    fn lorenz_coupling_matrix() {
        let m = example("lorenz").unwrap().build().unwrap();
        let b = m.coupling.coefficients();
        for i in 0..3 {
            for k in 0..10 {
                let expect = if k == i + 1 { -50.0 } else { 0.0 };
                assert_eq!(b[(i, k)], expect);
            }
        }
        // z' row: x y coefficient 1, z coefficient -beta.
        let a = m.agent.coefficients();
        let basis = m.agent.basis();
        let xy = basis
            .index_of(&crate::polybasis::Exponent::new(vec![1, 1, 0]))
            .unwrap();
        assert_eq!(a[(2, xy)], 1.0);
        assert_eq!(a[(2, 3)], -8.0 / 3.0);
    }

    #[test]
    fn zero_gain_decouples() {
        let mut cfg = example("vdp").unwrap();
        cfg.c = 0.0;
        let m = cfg.build().unwrap();
        assert!(m.coupling.coefficients().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_and_hash() {
        for name in EXAMPLE_NAMES {
            let cfg = example(name).unwrap();
            let back = ModelConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
        assert_ne!(
            example("vdp").unwrap().hash(),
            example("lorenz").unwrap().hash()
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "{\n  \"schema_version\": 1,\n  \"n\": \"two\"\n}";
        let err = ModelConfig::from_json(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let unknown = "{\"schema_version\": 1, \"bogus\": 2}";
        assert!(ModelConfig::from_json(unknown).is_err());
    }

    #[test]
    fn pattern_forms() {
        let cycle: PatternSpec = serde_json::from_str("{\"cycle\": 4}").unwrap();
        let edges: PatternSpec =
            serde_json::from_str("{\"edges\": [[1,2,1.0],[2,3,1.0],[3,4,1.0],[4,1,1.0]]}").unwrap();
        assert_eq!(
            cycle.build(4).unwrap().entries(),
            edges.build(4).unwrap().entries()
        );
        assert!(cycle.build(5).is_err());
    }
}
