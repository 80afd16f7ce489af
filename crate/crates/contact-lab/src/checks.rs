//! Randomized exact-verification suites over small instances.
//!
//! Each suite sweeps randomized small graphs (perturbed rings on up to five
//! vertices cover connected, chorded, and disconnected shapes), evaluates
//! one residual through the exact oracle, and reports the worst case against
//! a pinned tolerance. The `exact-check` subcommand runs all of them; the
//! acceptance suite runs them at its own instance counts.

use serde::Serialize;

use crate::dynamics::{Configuration, ModelParams};
use crate::error::Result;
use crate::exact::{self, enumerate_generator, DistributionVector};
use crate::graph::{apply_perturbation, make_graph, BaseKind, EdgePerturbation, Graph, VertexId};
use crate::rng::{derive_seed, Rng};

pub const DECOMPOSITION_TOL: f64 = 1e-12;
pub const LEMMA_TOL: f64 = 1e-8;
pub const DUALITY_TOL: f64 = 1e-8;
pub const CHAPMAN_TOL: f64 = 1e-10;
pub const CONSERVATION_TOL: f64 = 1e-12;

/// Outcome of one residual suite.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check_name: String,
    pub instances: u64,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckReport {
    fn new(name: &str, instances: u64, max_residual: f64, tolerance: f64) -> Self {
        CheckReport {
            check_name: name.to_string(),
            instances,
            max_residual,
            tolerance,
            pass: max_residual < tolerance,
        }
    }
}

fn v(k: i64) -> VertexId {
    VertexId::coord(vec![k])
}

/// Random perturbation of a ring: each base edge kept with probability 3/4,
/// each chord added with probability 1/4. Covers disconnected graphs and
/// isolated vertices.
pub fn random_small_graph(rng: &mut Rng, n: u64) -> Graph {
    let g = make_graph(BaseKind::Ring { len: n }).unwrap();
    let mut added = Vec::new();
    let mut removed = Vec::new();
    for i in 0..n as i64 {
        for j in (i + 1)..n as i64 {
            if g.has_edge(&v(i), &v(j)) {
                if rng.uniform() < 0.25 {
                    removed.push((v(i), v(j)));
                }
            } else if rng.uniform() < 0.25 {
                added.push((v(i), v(j)));
            }
        }
    }
    apply_perturbation(
        &g,
        &EdgePerturbation {
            added,
            removed,
            strict_distinct: false,
        },
    )
    .unwrap()
    .graph
}

/// A random instance pair `(g, g_prime)` differing by one to three toggled
/// edges, together with the rate drawn from `{0.5, 1, 2}`.
pub fn random_instance_pair(rng: &mut Rng) -> (Graph, Graph, ModelParams) {
    let n = 3 + rng.below(3); // 3..=5 vertices
    let g = random_small_graph(rng, n);
    let gp = loop {
        let mut added = Vec::new();
        let mut removed = Vec::new();
        for _ in 0..(1 + rng.below(3)) {
            let i = rng.below(n) as i64;
            let mut j = rng.below(n) as i64;
            if i == j {
                j = (j + 1) % n as i64;
            }
            let pair = (v(i.min(j)), v(i.max(j)));
            if added.contains(&pair) || removed.contains(&pair) {
                continue;
            }
            if g.has_edge(&pair.0, &pair.1) {
                removed.push(pair);
            } else {
                added.push(pair);
            }
        }
        if added.is_empty() && removed.is_empty() {
            continue;
        }
        break apply_perturbation(
            &g,
            &EdgePerturbation {
                added,
                removed,
                strict_distinct: false,
            },
        )
        .unwrap()
        .graph;
    };
    let lambda = [0.5, 1.0, 2.0][rng.below(3) as usize];
    (g, gp, ModelParams::new(lambda).unwrap())
}

fn random_configuration(rng: &mut Rng, n: u64) -> Configuration {
    Configuration::from_vertices((0..n as i64).filter(|_| rng.uniform() < 0.5).map(v))
}

fn random_distribution(rng: &mut Rng, n_states: usize) -> DistributionVector {
    let raw: Vec<f64> = (0..n_states).map(|_| rng.uniform() + 1e-4).collect();
    let total: f64 = raw.iter().sum();
    DistributionVector::from_weights(raw.iter().map(|x| x / total).collect()).unwrap()
}

/// Exhaustive-over-states residual of the generator decomposition on random
/// instance pairs, with a random observable per instance.
pub fn decomposition_suite(instances: u64, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(derive_seed(seed, &[1]));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (g, gp, params) = random_instance_pair(&mut rng);
        let q = enumerate_generator(&g, &params)?;
        let f = exact::Observable(
            (0..q.n_states())
                .map(|_| rng.uniform() * 4.0 - 2.0)
                .collect(),
        );
        let r = exact::generator_decomposition_residual(&g, &gp, &params, &f)?;
        worst = worst.max(r);
    }
    Ok(CheckReport::new(
        "generator_decomposition",
        instances,
        worst,
        DECOMPOSITION_TOL,
    ))
}

/// Residual of the conditioned-pair rate identity with random distributions
/// and `t` drawn from `{0, 0.5, 2}`.
pub fn lemma_suite(instances: u64, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(derive_seed(seed, &[2]));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (g, gp, params) = random_instance_pair(&mut rng);
        let q = enumerate_generator(&g, &params)?;
        let mu = random_distribution(&mut rng, q.n_states());
        let n = q.n_sites() as u64;
        let x = v(rng.below(n) as i64);
        let t = [0.0, 0.5, 2.0][rng.below(3) as usize];
        let r = exact::lemma_rate_identity_residual(&g, &gp, &params, &mu, &x, t)?;
        worst = worst.max(r);
    }
    Ok(CheckReport::new(
        "lemma_rate_identity",
        instances,
        worst,
        LEMMA_TOL,
    ))
}

/// Residual of the duality identity on random `(graph, eta, A, t)` tuples.
pub fn duality_suite(instances: u64, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(derive_seed(seed, &[3]));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = 3 + rng.below(3);
        let g = random_small_graph(&mut rng, n);
        let lambda = [0.5, 1.0, 2.0][rng.below(3) as usize];
        let params = ModelParams::new(lambda).unwrap();
        let eta = random_configuration(&mut rng, n);
        let a = random_configuration(&mut rng, n);
        let t = [0.3, 1.0, 3.0][rng.below(3) as usize];
        let r = exact::duality_residual(&g, &params, &eta, &a, t)?;
        worst = worst.max(r);
    }
    Ok(CheckReport::new(
        "duality_exact",
        instances,
        worst,
        DUALITY_TOL,
    ))
}

/// Semigroup composition property `S(t+s) = S(t) S(s)` on random instances.
pub fn chapman_suite(instances: u64, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(derive_seed(seed, &[4]));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = 3 + rng.below(3);
        let g = random_small_graph(&mut rng, n);
        let params = ModelParams::new(0.5 + rng.uniform() * 1.5).unwrap();
        let q = enumerate_generator(&g, &params)?;
        let mu = random_distribution(&mut rng, q.n_states());
        let (t, s) = (0.2 + rng.uniform(), 0.2 + rng.uniform());
        let direct = q.evolve_distribution(&mu, t + s, 1e-13)?;
        let part = q.evolve_distribution(&mu, t, 1e-13)?;
        let composed = q.evolve_distribution(&part, s, 1e-13)?;
        for m in 0..q.n_states() {
            worst = worst.max((direct.0[m] - composed.0[m]).abs());
        }
    }
    Ok(CheckReport::new(
        "chapman_kolmogorov",
        instances,
        worst,
        CHAPMAN_TOL,
    ))
}

/// Probability conservation of the uniformized semigroup.
pub fn conservation_suite(instances: u64, seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(derive_seed(seed, &[5]));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = 3 + rng.below(3);
        let g = random_small_graph(&mut rng, n);
        let params = ModelParams::new(0.5 + rng.uniform() * 2.0).unwrap();
        let q = enumerate_generator(&g, &params)?;
        let mu = random_distribution(&mut rng, q.n_states());
        let out = q.evolve_distribution(&mu, 0.5 + rng.uniform() * 3.0, 1e-13)?;
        worst = worst.max((out.total() - 1.0).abs());
        if let Some(min) = out.0.iter().cloned().reduce(f64::min) {
            worst = worst.max((-min).max(0.0));
        }
    }
    Ok(CheckReport::new(
        "probability_conservation",
        instances,
        worst,
        CONSERVATION_TOL,
    ))
}

/// The default `exact-check` battery.
pub fn default_suites(instances: u64, seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        decomposition_suite(instances.max(200), seed)?,
        lemma_suite(instances.max(100), seed)?,
        duality_suite(instances.max(100), seed)?,
        chapman_suite(instances.clamp(20, 50), seed)?,
        conservation_suite(instances.clamp(20, 50), seed)?,
    ])
}
