#![allow(dead_code)]

use std::collections::BTreeMap;

use polyconsensus::dynamics::Term;
use polyconsensus::model::{
    EdgesSpec, MethodDefaults, ModelConfig, PatternSpec, MODEL_SCHEMA_VERSION,
};
use polyconsensus::pattern::PatternMatrix;
use rand::Rng;

pub fn config(
    name: &str,
    n: usize,
    n_agents: usize,
    agent: Vec<Term>,
    coupling: Vec<Term>,
) -> ModelConfig {
    ModelConfig {
        schema_version: MODEL_SCHEMA_VERSION,
        name: Some(name.into()),
        description: None,
        n,
        n_agents,
        agent_terms: agent,
        coupling_terms: coupling,
        c: 1.0,
        pattern: PatternSpec::cycle(n_agents),
        parameters: BTreeMap::new(),
        defaults: MethodDefaults::default(),
    }
}

/// Single integrators with diffusive coupling.
pub fn integrator(n_agents: usize) -> ModelConfig {
    config(
        "integrator",
        1,
        n_agents,
        vec![],
        vec![Term::new(1, -1.0, &[1])],
    )
}

/// Damped harmonic oscillators coupled in both components.
pub fn oscillator(n_agents: usize) -> ModelConfig {
    config(
        "oscillator",
        2,
        n_agents,
        vec![
            Term::new(1, 1.0, &[0, 1]),
            Term::new(2, -1.0, &[1, 0]),
            Term::new(2, -1.0, &[0, 1]),
        ],
        vec![Term::new(1, -1.0, &[1, 0]), Term::new(2, -1.0, &[0, 1])],
    )
}

/// `xdot = -x^3` with linear coupling.
pub fn cubic(n_agents: usize) -> ModelConfig {
    config(
        "cubic",
        1,
        n_agents,
        vec![Term::new(1, -1.0, &[3])],
        vec![Term::new(1, -2.0, &[1])],
    )
}

/// Random spanning tree plus extra edges, weights in `[0.1, 2]`.
pub fn random_edges<R: Rng>(rng: &mut R, n_agents: usize) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for i in 1..n_agents {
        let j = rng.random_range(0..i);
        edges.push((i + 1, j + 1, rng.random_range(0.1..2.0)));
    }
    let extra = rng.random_range(0..=n_agents);
    for _ in 0..extra {
        let a = rng.random_range(0..n_agents);
        let b = rng.random_range(0..n_agents);
        if a != b {
            edges.push((a + 1, b + 1, rng.random_range(0.1..2.0)));
        }
    }
    edges
}

pub fn random_graph<R: Rng>(rng: &mut R, n_agents: usize) -> PatternMatrix {
    PatternMatrix::from_edge_list(n_agents, &random_edges(rng, n_agents)).unwrap()
}

pub fn edges_spec<R: Rng>(rng: &mut R, n_agents: usize) -> PatternSpec {
    PatternSpec::Edges(EdgesSpec {
        edges: random_edges(rng, n_agents),
    })
}
