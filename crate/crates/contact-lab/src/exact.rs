//! Exact finite-state computations for small graphs.
//!
//! For a finite graph with `n <= cap` vertices (default 12, 4096 states) this
//! module enumerates the full jump-rate matrix of the contact process over
//! `{0,1}^n`, applies the semigroup by uniformization with an explicit
//! Poisson tail bound, and verifies three identities to tight tolerances:
//! the self-duality equation, the decomposition of the generator into a
//! perturbed generator plus per-edge endpoint corrections, and the
//! conditioned-pair rate identity that the coupled simulations discretize.
//! Everything here is a pure function of its inputs.

use crate::dynamics::{Configuration, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{edge_diff, Graph, VertexId};

/// Default vertex cap (`2^12` states).
pub const DEFAULT_STATE_CAP: usize = 12;

/// Sparse rate matrix of the contact process on a finite graph.
///
/// State `m` encodes the configuration whose infected sites are the set bits
/// of `m` under the canonical vertex order. Off-diagonal entries are the
/// single-site flip rates; the diagonal is minus the row sum.
pub struct GeneratorMatrix {
    vertices: Vec<VertexId>,
    lambda: f64,
    offsets: Vec<u32>,
    targets: Vec<u32>,
    rates: Vec<f64>,
    diag: Vec<f64>,
    uniformization_rate: f64,
}

/// Probability weights over the `2^n` configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionVector(pub Vec<f64>);

/// Real-valued function of the `2^n` configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable(pub Vec<f64>);

impl DistributionVector {
    pub fn point_mass(n_states: usize, state: usize) -> Self {
        let mut w = vec![0.0; n_states];
        w[state] = 1.0;
        DistributionVector(w)
    }

    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::parameter("weights", "must be finite and >= 0"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::parameter(
                "weights",
                format!("must sum to 1 (got {sum})"),
            ));
        }
        Ok(DistributionVector(w))
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn enumerate_generator(g: &Graph, params: &ModelParams) -> Result<GeneratorMatrix> {
    enumerate_generator_with_cap(g, params, DEFAULT_STATE_CAP)
}

pub fn enumerate_generator_with_cap(
    g: &Graph,
    params: &ModelParams,
    cap: usize,
) -> Result<GeneratorMatrix> {
    let vertices = g.vertices()?;
    let n = vertices.len();
    if n > cap {
        return Err(Error::Capacity { vertices: n, cap });
    }
    let index_of = |v: &VertexId| {
        vertices
            .binary_search(v)
            .expect("vertex in canonical order")
    };
    // infected-neighbor masks
    let nbr_mask: Vec<u32> = vertices
        .iter()
        .map(|v| {
            g.neighbors(v)
                .iter()
                .map(|u| 1u32 << index_of(u))
                .fold(0, |a, b| a | b)
        })
        .collect();

    let n_states = 1usize << n;
    let mut offsets = Vec::with_capacity(n_states + 1);
    let mut targets = Vec::new();
    let mut rates = Vec::new();
    let mut diag = vec![0.0; n_states];
    let mut uniformization_rate = 0.0f64;
    offsets.push(0);
    for m in 0..n_states as u32 {
        let mut row_sum = 0.0;
        for (x, mask) in nbr_mask.iter().enumerate() {
            let bit = 1u32 << x;
            let rate = if m & bit != 0 {
                1.0
            } else {
                let k = (m & mask).count_ones();
                params.lambda * k as f64
            };
            if rate > 0.0 {
                targets.push(m ^ bit);
                rates.push(rate);
                row_sum += rate;
            }
        }
        diag[m as usize] = -row_sum;
        uniformization_rate = uniformization_rate.max(row_sum);
        offsets.push(targets.len() as u32);
    }
    Ok(GeneratorMatrix {
        vertices,
        lambda: params.lambda,
        offsets,
        targets,
        rates,
        diag,
        uniformization_rate,
    })
}

impl GeneratorMatrix {
    pub fn n_sites(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_states(&self) -> usize {
        self.diag.len()
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn site_bit(&self, v: &VertexId) -> Result<u32> {
        self.vertices
            .binary_search(v)
            .map(|i| 1u32 << i)
            .map_err(|_| Error::validation("vertex", format!("{v} is not a vertex")))
    }

    pub fn state_of(&self, eta: &Configuration) -> Result<usize> {
        let mut m = 0u32;
        for v in eta.iter() {
            m |= self.site_bit(v)?;
        }
        Ok(m as usize)
    }

    /// Row sum including the diagonal; zero for a conservative generator.
    pub fn row_sum(&self, state: usize) -> f64 {
        let (a, b) = (
            self.offsets[state] as usize,
            self.offsets[state + 1] as usize,
        );
        self.rates[a..b].iter().sum::<f64>() + self.diag[state]
    }

    /// Backward action `(Q f)(m) = sum_x c(x, m) [f(m_x) - f(m)]`.
    pub fn apply_to_observable(&self, f: &Observable) -> Observable {
        let out = (0..self.n_states())
            .map(|m| {
                let (a, b) = (self.offsets[m] as usize, self.offsets[m + 1] as usize);
                let mut acc = self.diag[m] * f.0[m];
                for e in a..b {
                    acc += self.rates[e] * f.0[self.targets[e] as usize];
                }
                acc
            })
            .collect();
        Observable(out)
    }

    /// Forward action `(mu Q)(m)`.
    pub fn apply_to_distribution(&self, mu: &DistributionVector) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        for m in 0..self.n_states() {
            let w = mu.0[m];
            if w == 0.0 {
                continue;
            }
            out[m] += w * self.diag[m];
            let (a, b) = (self.offsets[m] as usize, self.offsets[m + 1] as usize);
            for e in a..b {
                out[self.targets[e] as usize] += w * self.rates[e];
            }
        }
        out
    }

    fn uniformized_step(&self, v: &[f64], forward: bool) -> Vec<f64> {
        let lam = self.uniformization_rate;
        let mut out = v.to_vec();
        if lam == 0.0 {
            return out;
        }
        if forward {
            for m in 0..self.n_states() {
                let w = v[m];
                if w == 0.0 {
                    continue;
                }
                out[m] += w * self.diag[m] / lam;
                let (a, b) = (self.offsets[m] as usize, self.offsets[m + 1] as usize);
                for e in a..b {
                    out[self.targets[e] as usize] += w * self.rates[e] / lam;
                }
            }
        } else {
            for m in 0..self.n_states() {
                let (a, b) = (self.offsets[m] as usize, self.offsets[m + 1] as usize);
                let mut acc = v[m] * (1.0 + self.diag[m] / lam);
                for e in a..b {
                    acc += self.rates[e] / lam * v[self.targets[e] as usize];
                }
                out[m] = acc;
            }
        }
        out
    }

    /// `e^{tQ}` applied by uniformization, truncating the Poisson series when
    /// the remaining tail mass drops below `tol`. `forward` selects the
    /// distribution direction (`mu e^{tQ}`) versus the observable direction
    /// (`e^{tQ} f`).
    fn semigroup(&self, v: &[f64], t: f64, tol: f64, forward: bool) -> Result<Vec<f64>> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::parameter("t", "must be finite and >= 0"));
        }
        if tol.is_nan() || tol <= 0.0 {
            return Err(Error::parameter("tol", "must be > 0"));
        }
        let total_mean = self.uniformization_rate * t;
        if total_mean == 0.0 {
            return Ok(v.to_vec());
        }
        // keep exp(-mean) comfortably inside f64 range per segment
        let segments = (total_mean / 400.0).ceil().max(1.0) as usize;
        let seg_t = t / segments as f64;
        let seg_mean = self.uniformization_rate * seg_t;
        let seg_tol = tol / segments as f64;
        let mut cur = v.to_vec();
        for _ in 0..segments {
            let mut weight = (-seg_mean).exp();
            let mut cum = weight;
            let mut acc: Vec<f64> = cur.iter().map(|x| x * weight).collect();
            let mut vk = cur;
            let mut k = 1u64;
            let k_max = (seg_mean + 60.0 * seg_mean.sqrt() + 200.0) as u64;
            while cum < 1.0 - seg_tol && k <= k_max {
                vk = self.uniformized_step(&vk, forward);
                weight *= seg_mean / k as f64;
                cum += weight;
                for (a, x) in acc.iter_mut().zip(vk.iter()) {
                    *a += weight * x;
                }
                k += 1;
            }
            cur = acc;
        }
        Ok(cur)
    }

    /// `mu S(t)`: distribution after time `t`.
    pub fn evolve_distribution(
        &self,
        mu: &DistributionVector,
        t: f64,
        tol: f64,
    ) -> Result<DistributionVector> {
        Ok(DistributionVector(self.semigroup(&mu.0, t, tol, true)?))
    }

    /// `S(t) f`: conditional expectation of `f` after time `t`.
    pub fn evolve_observable(&self, f: &Observable, t: f64, tol: f64) -> Result<Observable> {
        Ok(Observable(self.semigroup(&f.0, t, tol, false)?))
    }

    /// Expected number of infected sites under `mu`.
    pub fn expected_infected(&self, mu: &DistributionVector) -> f64 {
        mu.0.iter()
            .enumerate()
            .map(|(m, w)| w * (m as u32).count_ones() as f64)
            .sum()
    }
}

const SEMIGROUP_TOL: f64 = 1e-13;

/// Exact `E|A_t|` started from the finite set `a0`.
pub fn expected_infected_exact(
    g: &Graph,
    params: &ModelParams,
    a0: &Configuration,
    t: f64,
) -> Result<f64> {
    let q = enumerate_generator(g, params)?;
    let mu0 = DistributionVector::point_mass(q.n_states(), q.state_of(a0)?);
    let mu = q.evolve_distribution(&mu0, t, SEMIGROUP_TOL)?;
    Ok(q.expected_infected(&mu))
}

/// Exact survival probability `P^{a0}(A_t != empty)`.
pub fn survival_exact(g: &Graph, params: &ModelParams, a0: &Configuration, t: f64) -> Result<f64> {
    let q = enumerate_generator(g, params)?;
    let mu0 = DistributionVector::point_mass(q.n_states(), q.state_of(a0)?);
    let mu = q.evolve_distribution(&mu0, t, SEMIGROUP_TOL)?;
    Ok(1.0 - mu.0[0])
}

/// Exact infected density at time `t` started from all ones.
pub fn density_from_all_ones(g: &Graph, params: &ModelParams, t: f64) -> Result<f64> {
    let q = enumerate_generator(g, params)?;
    let full = q.n_states() - 1;
    let mu0 = DistributionVector::point_mass(q.n_states(), full);
    let mu = q.evolve_distribution(&mu0, t, SEMIGROUP_TOL)?;
    Ok(q.expected_infected(&mu) / q.n_sites() as f64)
}

/// Absolute residual of the self-duality identity
/// `P^eta[eta_t = 0 on A] = P^A[eta = 0 on A_t]`, both sides computed
/// exactly through the semigroup. Empty intersections make both sides 1.
pub fn duality_residual(
    g: &Graph,
    params: &ModelParams,
    eta: &Configuration,
    a: &Configuration,
    t: f64,
) -> Result<f64> {
    let q = enumerate_generator(g, params)?;
    let eta_mask = q.state_of(eta)? as u32;
    let a_mask = q.state_of(a)? as u32;
    let avoid = |mask: u32| -> Observable {
        Observable(
            (0..q.n_states() as u32)
                .map(|m| if m & mask == 0 { 1.0 } else { 0.0 })
                .collect(),
        )
    };
    let lhs = q.evolve_observable(&avoid(a_mask), t, SEMIGROUP_TOL)?.0[eta_mask as usize];
    let rhs = q.evolve_observable(&avoid(eta_mask), t, SEMIGROUP_TOL)?.0[a_mask as usize];
    Ok((lhs - rhs).abs())
}

/// Per-edge rate difference `c_g(z, m) - c_g'(z, m)` attributable to one
/// perturbed edge with endpoints `(z, other)`: `-lambda` times the indicator
/// of `{m(z) = 0, m(other) = 1}` for an added edge, `+lambda` for a removed
/// one. Summing per edge keeps the decomposition valid even when endpoints
/// repeat across perturbed edges.
fn edge_rate_diff(lambda: f64, added: bool, z_bit: u32, other_bit: u32, m: u32) -> f64 {
    if m & z_bit == 0 && m & other_bit != 0 {
        if added {
            -lambda
        } else {
            lambda
        }
    } else {
        0.0
    }
}

fn perturbed_edges(
    q: &GeneratorMatrix,
    g: &Graph,
    g_prime: &Graph,
) -> Result<Vec<(bool, u32, u32)>> {
    let (added, removed) = edge_diff(g, g_prime)?;
    let mut out = Vec::new();
    for (a, b) in &added {
        out.push((true, q.site_bit(a)?, q.site_bit(b)?));
    }
    for (a, b) in &removed {
        out.push((false, q.site_bit(a)?, q.site_bit(b)?));
    }
    Ok(out)
}

/// Max-over-states residual of the generator decomposition
/// `L_g f = L_g' f + sum_edges sum_endpoints (c_g - c_g')(z, .) [f(. flipped at z) - f]`.
/// Pure algebra: no time evolution is involved.
pub fn generator_decomposition_residual(
    g: &Graph,
    g_prime: &Graph,
    params: &ModelParams,
    f: &Observable,
) -> Result<f64> {
    let qg = enumerate_generator(g, params)?;
    let qgp = enumerate_generator(g_prime, params)?;
    if qg.vertices() != qgp.vertices() {
        return Err(Error::validation("graphs", "vertex sets differ"));
    }
    if f.0.len() != qg.n_states() {
        return Err(Error::parameter("f", "wrong dimension"));
    }
    let edges = perturbed_edges(&qg, g, g_prime)?;
    let lg = qg.apply_to_observable(f);
    let lgp = qgp.apply_to_observable(f);
    let mut worst = 0.0f64;
    for m in 0..qg.n_states() as u32 {
        let mut correction = 0.0;
        for &(added, ba, bb) in &edges {
            for (z, other) in [(ba, bb), (bb, ba)] {
                let d = edge_rate_diff(params.lambda, added, z, other, m);
                if d != 0.0 {
                    correction += d * (f.0[(m ^ z) as usize] - f.0[m as usize]);
                }
            }
        }
        let resid = (lg.0[m as usize] - lgp.0[m as usize] - correction).abs();
        worst = worst.max(resid);
    }
    Ok(worst)
}

/// Residual of the generalized conditioned-pair rate identity
///
/// `d/dt (mu S_g(t)){m(x)=1} = <mu, Q_g' h> + sum_edges sum_z (+/-) lambda
///  sum_{m in D_z} mu(m) [h(m) - h(m flipped at z)]`,
///
/// with `h = S_g(t) 1_x` and the time derivative computed analytically as
/// `<mu, Q_g h>`. The `<mu, Q_g' h>` term is retained because a generic `mu`
/// is not invariant under the perturbed dynamics; conditioning events with
/// `mu`-mass zero contribute zero. The sign flips between added and removed
/// edges with the sign of `c_g - c_g'`.
pub fn lemma_rate_identity_residual(
    g: &Graph,
    g_prime: &Graph,
    params: &ModelParams,
    mu: &DistributionVector,
    x: &VertexId,
    t: f64,
) -> Result<f64> {
    let qg = enumerate_generator(g, params)?;
    let qgp = enumerate_generator(g_prime, params)?;
    if qg.vertices() != qgp.vertices() {
        return Err(Error::validation("graphs", "vertex sets differ"));
    }
    if mu.0.len() != qg.n_states() {
        return Err(Error::parameter("mu", "wrong dimension"));
    }
    let x_bit = qg.site_bit(x)?;
    let ind_x = Observable(
        (0..qg.n_states() as u32)
            .map(|m| if m & x_bit != 0 { 1.0 } else { 0.0 })
            .collect(),
    );
    let h = qg.evolve_observable(&ind_x, t, SEMIGROUP_TOL)?;

    let pair = |q: &GeneratorMatrix| -> f64 {
        let qh = q.apply_to_observable(&h);
        mu.0.iter().zip(qh.0.iter()).map(|(a, b)| a * b).sum()
    };
    let lhs = pair(&qg);
    let invariance_term = pair(&qgp);

    let edges = perturbed_edges(&qg, g, g_prime)?;
    let mut conditional_terms = 0.0;
    for &(added, ba, bb) in &edges {
        let sign = if added { 1.0 } else { -1.0 };
        for (z, other) in [(ba, bb), (bb, ba)] {
            // event D_z: z healthy, other infected
            let mut term = 0.0;
            for m in 0..qg.n_states() as u32 {
                if m & z == 0 && m & other != 0 {
                    let w = mu.0[m as usize];
                    if w != 0.0 {
                        term += w * (h.0[m as usize] - h.0[(m ^ z) as usize]);
                    }
                }
            }
            conditional_terms += sign * params.lambda * term;
        }
    }
    Ok((lhs - invariance_term - conditional_terms).abs())
}

/// Restriction of `mu` to the event `{m(z)=0, m(other)=1}`, renormalized.
/// Returns the event weight and the conditional distribution, or `None`
/// when the event has mass zero.
pub fn conditioned_on_event(
    mu: &DistributionVector,
    z_bit: u32,
    other_bit: u32,
) -> Option<(f64, DistributionVector)> {
    let mut w = vec![0.0; mu.0.len()];
    let mut mass = 0.0;
    for (m, &p) in mu.0.iter().enumerate() {
        let m = m as u32;
        if m & z_bit == 0 && m & other_bit != 0 {
            w[m as usize] = p;
            mass += p;
        }
    }
    if mass == 0.0 {
        return None;
    }
    for x in &mut w {
        *x /= mass;
    }
    Some((mass, DistributionVector(w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{apply_perturbation, make_graph, BaseKind, EdgePerturbation};
    use crate::rng::Rng;

    fn ring(len: u64) -> Graph {
        make_graph(BaseKind::Ring { len }).unwrap()
    }

    fn v(k: i64) -> VertexId {
        VertexId::coord(vec![k])
    }

    fn single_vertex() -> Graph {
        make_graph(BaseKind::TreeBall {
            degree: 2,
            radius: 0,
        })
        .unwrap()
    }

    /// 3-vertex path 0-1-2 built as a ring(3) minus one edge.
    fn path3() -> Graph {
        apply_perturbation(&ring(3), &EdgePerturbation::removing(vec![(v(0), v(2))]))
            .unwrap()
            .graph
    }

    fn params(lambda: f64) -> ModelParams {
        ModelParams::new(lambda).unwrap()
    }

    #[test]
    fn single_vertex_generator() {
        let q = enumerate_generator(&single_vertex(), &params(2.0)).unwrap();
        assert_eq!(q.n_states(), 2);
        // state {o}: recovery at rate 1 to state 0; state 0 absorbing
        assert_eq!(q.row_sum(0), 0.0);
        assert_eq!(q.row_sum(1), 0.0);
        assert_eq!(q.diag[1], -1.0);
        assert_eq!(q.diag[0], 0.0);
    }

    #[test]
    fn two_vertex_edge_rate() {
        // path 0-1 plus an isolated vertex
        let g = apply_perturbation(
            &ring(3),
            &EdgePerturbation::removing(vec![(v(0), v(2)), (v(1), v(2))]),
        )
        .unwrap()
        .graph;
        let lam = 1.7;
        let q = enumerate_generator(&g, &params(lam)).unwrap();
        // from {0}: infection of 1 at rate lambda
        let m = 0b001usize;
        let (a, b) = (q.offsets[m] as usize, q.offsets[m + 1] as usize);
        let mut found = false;
        for e in a..b {
            if q.targets[e] == 0b011 {
                assert!((q.rates[e] - lam).abs() < 1e-15);
                found = true;
            }
        }
        assert!(found);
        // vertex 2 is isolated: no transition into 0b101 from 0b001
        for e in a..b {
            assert_ne!(q.targets[e], 0b101);
        }
    }

    #[test]
    fn row_sums_vanish_on_random_graphs() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let g = random_perturbed_ring(&mut rng, 5);
            let q = enumerate_generator(&g, &params(1.3)).unwrap();
            for m in 0..q.n_states() {
                assert!(q.row_sum(m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn semigroup_identity_at_zero() {
        let q = enumerate_generator(&path3(), &params(1.0)).unwrap();
        let mu = DistributionVector::point_mass(q.n_states(), 3);
        let out = q.evolve_distribution(&mu, 0.0, 1e-12).unwrap();
        assert_eq!(out, mu);
    }

    #[test]
    fn single_vertex_decay() {
        let q = enumerate_generator(&single_vertex(), &params(0.0)).unwrap();
        let mu = DistributionVector::point_mass(2, 1);
        for t in [0.3, 1.0, 2.5] {
            let out = q.evolve_distribution(&mu, t, 1e-13).unwrap();
            assert!((out.0[1] - (-t).exp()).abs() < 1e-11);
            assert!((out.total() - 1.0).abs() < 1e-12);
        }
    }

    /// Dense RK4 integration of the forward equation, independent of the
    /// uniformization path.
    fn rk4_forward(q: &GeneratorMatrix, mu0: &[f64], t: f64, steps: usize) -> Vec<f64> {
        let n = q.n_states();
        let mut dense = vec![vec![0.0f64; n]; n];
        for (m, row) in dense.iter_mut().enumerate() {
            row[m] = q.diag[m];
            let (a, b) = (q.offsets[m] as usize, q.offsets[m + 1] as usize);
            for e in a..b {
                row[q.targets[e] as usize] += q.rates[e];
            }
        }
        let deriv = |v: &[f64]| -> Vec<f64> {
            let mut d = vec![0.0; n];
            for s in 0..n {
                if v[s] != 0.0 {
                    for tgt in 0..n {
                        d[tgt] += v[s] * dense[s][tgt];
                    }
                }
            }
            d
        };
        let h = t / steps as f64;
        let mut cur = mu0.to_vec();
        for _ in 0..steps {
            let k1 = deriv(&cur);
            let mid1: Vec<f64> = cur.iter().zip(&k1).map(|(x, k)| x + 0.5 * h * k).collect();
            let k2 = deriv(&mid1);
            let mid2: Vec<f64> = cur.iter().zip(&k2).map(|(x, k)| x + 0.5 * h * k).collect();
            let k3 = deriv(&mid2);
            let end: Vec<f64> = cur.iter().zip(&k3).map(|(x, k)| x + h * k).collect();
            let k4 = deriv(&end);
            for i in 0..n {
                cur[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        cur
    }

    #[test]
    fn uniformization_matches_ode_oracle() {
        let g = path3();
        let q = enumerate_generator(&g, &params(1.0)).unwrap();
        let mu0 = DistributionVector::point_mass(q.n_states(), 0b010);
        let uni = q.evolve_distribution(&mu0, 0.7, 1e-13).unwrap();
        let ode = rk4_forward(&q, &mu0.0, 0.7, 4000);
        for (m, (u, o)) in uni.0.iter().zip(&ode).enumerate() {
            assert!((u - o).abs() < 1e-8, "state {m}: {u} vs {o}");
        }
        assert!((uni.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chapman_kolmogorov() {
        let g = apply_perturbation(&ring(4), &EdgePerturbation::adding(vec![(v(0), v(2))]))
            .unwrap()
            .graph;
        let q = enumerate_generator(&g, &params(1.5)).unwrap();
        let mu0 = DistributionVector::point_mass(q.n_states(), 0b0101);
        let direct = q.evolve_distribution(&mu0, 1.9, 1e-13).unwrap();
        let part = q.evolve_distribution(&mu0, 0.6, 1e-13).unwrap();
        let composed = q.evolve_distribution(&part, 1.3, 1e-13).unwrap();
        for m in 0..q.n_states() {
            assert!((direct.0[m] - composed.0[m]).abs() < 1e-10);
        }
    }

    #[test]
    fn duality_trivial_cases() {
        let g = single_vertex();
        let o = g.origin();
        let eta = Configuration::from_vertices([o.clone()]);
        // A empty: both sides 1
        let r = duality_residual(&g, &params(1.0), &eta, &Configuration::empty(), 1.0).unwrap();
        assert!(r < 1e-12);
        // single vertex, eta = A = {o}: both sides 1 - e^{-t}
        let a = Configuration::from_vertices([o]);
        let r = duality_residual(&g, &params(0.7), &eta, &a, 0.9).unwrap();
        assert!(r < 1e-12);
    }

    pub(super) fn random_perturbed_ring(rng: &mut Rng, n: u64) -> Graph {
        let g = ring(n);
        let mut added = Vec::new();
        let mut removed = Vec::new();
        for i in 0..n as i64 {
            for j in (i + 1)..n as i64 {
                let base_edge = g.has_edge(&v(i), &v(j));
                if base_edge {
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

    #[test]
    fn duality_random_sweep() {
        let mut rng = Rng::new(2024);
        for _ in 0..30 {
            let n = 3 + rng.below(2);
            let g = random_perturbed_ring(&mut rng, n);
            let lam = [0.5, 1.0, 2.0][rng.below(3) as usize];
            let eta = random_config(&mut rng, n);
            let a = random_config(&mut rng, n);
            for t in [0.3, 1.0, 3.0] {
                let r = duality_residual(&g, &params(lam), &eta, &a, t).unwrap();
                assert!(r < 1e-8, "residual {r}");
            }
        }
    }

    fn random_config(rng: &mut Rng, n: u64) -> Configuration {
        Configuration::from_vertices((0..n as i64).filter(|_| rng.uniform() < 0.5).map(v))
    }

    #[test]
    fn decomposition_identity_cases() {
        let g = ring(5);
        let p = params(1.2);
        let q = enumerate_generator(&g, &p).unwrap();
        // g == g': zero residual for arbitrary f
        let mut rng = Rng::new(8);
        let f = Observable(
            (0..q.n_states())
                .map(|_| rng.uniform() * 4.0 - 2.0)
                .collect(),
        );
        assert!(generator_decomposition_residual(&g, &g, &p, &f).unwrap() < 1e-15);
        // constant f: generators kill constants
        let gp = apply_perturbation(&g, &EdgePerturbation::adding(vec![(v(0), v(2))]))
            .unwrap()
            .graph;
        let c = Observable(vec![3.25; q.n_states()]);
        assert!(generator_decomposition_residual(&g, &gp, &p, &c).unwrap() < 1e-12);
    }

    #[test]
    fn decomposition_exhaustive_indicators() {
        // random 5-vertex graphs, one added edge, f = 1_x for each x
        let mut rng = Rng::new(99);
        for _ in 0..10 {
            let g = random_perturbed_ring(&mut rng, 5);
            // find a missing pair to add
            let mut pair = None;
            'outer: for i in 0..5i64 {
                for j in (i + 1)..5 {
                    if !g.has_edge(&v(i), &v(j)) {
                        pair = Some((v(i), v(j)));
                        break 'outer;
                    }
                }
            }
            let Some(pair) = pair else { continue };
            let gp = apply_perturbation(&g, &EdgePerturbation::adding(vec![pair]))
                .unwrap()
                .graph;
            let p = params(2.0);
            let q = enumerate_generator(&g, &p).unwrap();
            for x in 0..5i64 {
                let bit = q.site_bit(&v(x)).unwrap();
                let f = Observable(
                    (0..q.n_states() as u32)
                        .map(|m| if m & bit != 0 { 1.0 } else { 0.0 })
                        .collect(),
                );
                let r = generator_decomposition_residual(&g, &gp, &p, &f).unwrap();
                assert!(r < 1e-12, "residual {r}");
            }
        }
    }

    #[test]
    fn lemma_identity_hand_example() {
        // Vertices u=0, v=1 isolated (plus a third isolated vertex);
        // g' adds the edge (u, v). mu = point mass on {u infected, v healthy}.
        // At t=0 and x=v: d/dt eta(v) under g is 0; the g'-generator term
        // contributes +lambda and the conditional term -lambda.
        let edgeless = apply_perturbation(
            &ring(3),
            &EdgePerturbation::removing(vec![(v(0), v(1)), (v(1), v(2)), (v(0), v(2))]),
        )
        .unwrap()
        .graph;
        let gp = apply_perturbation(&edgeless, &EdgePerturbation::adding(vec![(v(0), v(1))]))
            .unwrap()
            .graph;
        let p = params(1.6);
        let q = enumerate_generator(&edgeless, &p).unwrap();
        let mu = DistributionVector::point_mass(q.n_states(), 0b001); // u=0 infected
        let r = lemma_rate_identity_residual(&edgeless, &gp, &p, &mu, &v(1), 0.0).unwrap();
        assert!(r < 1e-13, "residual {r}");

        // and the two contributions really do cancel rather than both vanish
        let qgp = enumerate_generator(&gp, &p).unwrap();
        let ind_v = Observable(
            (0..q.n_states() as u32)
                .map(|m| if m & 0b010 != 0 { 1.0 } else { 0.0 })
                .collect(),
        );
        let qh = qgp.apply_to_observable(&ind_v);
        let inv_term: f64 = mu.0.iter().zip(qh.0.iter()).map(|(a, b)| a * b).sum();
        assert!((inv_term - p.lambda).abs() < 1e-13);
    }

    #[test]
    fn lemma_identity_absorbing_zero() {
        let g = ring(4);
        let gp = apply_perturbation(&g, &EdgePerturbation::adding(vec![(v(0), v(2))]))
            .unwrap()
            .graph;
        let p = params(1.0);
        let q = enumerate_generator(&g, &p).unwrap();
        let mu = DistributionVector::point_mass(q.n_states(), 0);
        let r = lemma_rate_identity_residual(&g, &gp, &p, &mu, &v(1), 0.8).unwrap();
        assert!(r < 1e-13);
    }

    #[test]
    fn lemma_identity_random_sweep_with_removals() {
        let mut rng = Rng::new(314);
        for _ in 0..20 {
            let n = 4 + rng.below(2);
            let g = random_perturbed_ring(&mut rng, n);
            // toggle one or two random pairs
            let mut added = Vec::new();
            let mut removed = Vec::new();
            for _ in 0..(1 + rng.below(2)) {
                let i = rng.below(n) as i64;
                let mut j = rng.below(n) as i64;
                if i == j {
                    j = (j + 1) % n as i64;
                }
                let (a, b) = (v(i.min(j)), v(i.max(j)));
                if added.contains(&(a.clone(), b.clone()))
                    || removed.contains(&(a.clone(), b.clone()))
                {
                    continue;
                }
                if g.has_edge(&a, &b) {
                    removed.push((a, b));
                } else {
                    added.push((a, b));
                }
            }
            let gp = apply_perturbation(
                &g,
                &EdgePerturbation {
                    added,
                    removed,
                    strict_distinct: false,
                },
            )
            .unwrap()
            .graph;
            let p = params([0.5, 1.0, 2.0][rng.below(3) as usize]);
            let q = enumerate_generator(&g, &p).unwrap();
            let raw: Vec<f64> = (0..q.n_states()).map(|_| rng.uniform() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mu =
                DistributionVector::from_weights(raw.iter().map(|x| x / total).collect()).unwrap();
            let x = v(rng.below(n) as i64);
            for t in [0.0, 0.5, 2.0] {
                let r = lemma_rate_identity_residual(&g, &gp, &p, &mu, &x, t).unwrap();
                assert!(r < 1e-8, "residual {r}");
            }
        }
    }

    #[test]
    fn expected_infected_closed_forms() {
        let g = ring(6);
        let p0 = params(0.0);
        let a0 = Configuration::from_vertices([v(0), v(2), v(4)]);
        for t in [0.0, 0.5, 1.5] {
            let e = expected_infected_exact(&g, &p0, &a0, t).unwrap();
            assert!((e - 3.0 * (-t).exp()).abs() < 1e-10, "t={t}: {e}");
        }
        assert_eq!(
            expected_infected_exact(&g, &params(1.0), &a0, 0.0).unwrap(),
            3.0
        );
    }

    #[test]
    fn density_from_all_ones_monotone() {
        let g = apply_perturbation(&ring(5), &EdgePerturbation::adding(vec![(v(0), v(2))]))
            .unwrap()
            .graph;
        let p = params(1.5);
        let mut prev = 1.0 + 1e-12;
        for k in 0..12 {
            let t = k as f64 * 0.4;
            let d = density_from_all_ones(&g, &p, t).unwrap();
            assert!(d <= prev + 1e-10, "density rose at t={t}");
            prev = d;
        }
    }

    #[test]
    fn capacity_error() {
        let g = ring(20);
        assert!(matches!(
            enumerate_generator(&g, &params(1.0)),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn conditioned_distribution_mass() {
        let q = enumerate_generator(&ring(4), &params(1.0)).unwrap();
        let uniform =
            DistributionVector::from_weights(vec![1.0 / q.n_states() as f64; q.n_states()])
                .unwrap();
        let (mass, cond) = conditioned_on_event(&uniform, 0b0001, 0b0010).unwrap();
        assert!((mass - 0.25).abs() < 1e-12);
        assert!((cond.total() - 1.0).abs() < 1e-12);
        // conditional support lies inside the event
        for (m, &w) in cond.0.iter().enumerate() {
            if w > 0.0 {
                assert!(m & 0b0001 == 0 && m & 0b0010 != 0);
            }
        }
        let delta0 = DistributionVector::point_mass(q.n_states(), 0);
        assert!(conditioned_on_event(&delta0, 0b0001, 0b0010).is_none());
    }
}
