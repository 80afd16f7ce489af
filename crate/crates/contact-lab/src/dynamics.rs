//! Contact-process dynamics: rates, configurations, and the fast Gillespie
//! engine for independent replicas.
//!
//! Infected sites recover at rate 1; a healthy site is infected at rate
//! `lambda` times its number of infected neighbors. Simulation is exact in
//! distribution. Two engines share this law: the thinned next-event sampler
//! here (fresh randomness per replica, O(1) per event) and the
//! graphical-construction replay in [`crate::graphical`], used whenever two
//! or more processes must share randomness.

use std::collections::BTreeSet;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::graphical::GraphicalConstruction;
use crate::rng::Rng;

/// Model parameters. The recovery rate is fixed at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::parameter("lambda", "must be finite and >= 0"));
        }
        Ok(ModelParams { lambda })
    }
}

/// An infection state with finite support, stored as the set of infected
/// vertices. Dense (all-ones) starts on finite graphs materialize the full
/// vertex set; the engines keep their own bit-array views internally.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Configuration {
    infected: BTreeSet<VertexId>,
}

impl Configuration {
    pub fn empty() -> Self {
        Configuration::default()
    }

    pub fn from_vertices(vs: impl IntoIterator<Item = VertexId>) -> Self {
        Configuration {
            infected: vs.into_iter().collect(),
        }
    }

    /// The all-ones state of a finite graph.
    pub fn all_ones(g: &Graph) -> Result<Self> {
        Ok(Configuration {
            infected: g.vertices()?.into_iter().collect(),
        })
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.infected.contains(v)
    }

    pub fn len(&self) -> usize {
        self.infected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infected.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VertexId> {
        self.infected.iter()
    }

    pub fn insert(&mut self, v: VertexId) -> bool {
        self.infected.insert(v)
    }

    pub fn remove(&mut self, v: &VertexId) -> bool {
        self.infected.remove(v)
    }

    pub fn is_subset(&self, other: &Configuration) -> bool {
        self.infected.is_subset(&other.infected)
    }

    pub fn union(&self, other: &Configuration) -> Configuration {
        Configuration {
            infected: self.infected.union(&other.infected).cloned().collect(),
        }
    }

    /// Sites infected here but not in `other`.
    pub fn difference(&self, other: &Configuration) -> Configuration {
        Configuration {
            infected: self.infected.difference(&other.infected).cloned().collect(),
        }
    }
}

impl FromIterator<VertexId> for Configuration {
    fn from_iter<T: IntoIterator<Item = VertexId>>(iter: T) -> Self {
        Configuration::from_vertices(iter)
    }
}

/// Flip the state at `x`: healthy becomes infected and vice versa.
/// Involutive: `flip(flip(eta, x), x) == eta`.
pub fn flip(eta: &Configuration, x: &VertexId) -> Configuration {
    let mut out = eta.clone();
    if !out.remove(x) {
        out.insert(x.clone());
    }
    out
}

/// Jump rate at site `x`: 1 when infected, `lambda * (# infected neighbors)`
/// when healthy.
pub fn transition_rate(g: &Graph, x: &VertexId, eta: &Configuration, params: &ModelParams) -> f64 {
    if eta.contains(x) {
        1.0
    } else {
        let k = g.neighbors(x).iter().filter(|y| eta.contains(y)).count();
        params.lambda * k as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Recovery,
    Infection,
}

#[derive(Clone, Debug)]
pub struct Event {
    pub time: f64,
    pub site: VertexId,
    pub kind: EventKind,
}

/// A sampled path: infected counts on the observation grid (right-continuous
/// step convention), the final state at the horizon, and optionally the full
/// event log.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub counts: Vec<usize>,
    pub final_state: Configuration,
    pub horizon: f64,
    pub events: Option<Vec<Event>>,
}

impl Trajectory {
    /// Whether any site is still infected at the horizon.
    pub fn survived(&self) -> bool {
        !self.final_state.is_empty()
    }
}

/// Randomness source for [`simulate`].
pub enum Driver<'c> {
    /// Independent randomness from this seed (next-event sampler).
    Fresh { seed: u64 },
    /// Replay of a shared graphical construction.
    Construction(&'c GraphicalConstruction),
}

/// Runs the contact process on `g` from `init` up to `horizon`, observing
/// `|A_t|` at the grid times. The trajectory's law is the continuous-time
/// Markov chain with the rates above; under a shared construction the
/// outcome is a deterministic function of `(construction, init)`.
pub fn simulate(
    g: &Graph,
    params: &ModelParams,
    init: &Configuration,
    horizon: f64,
    driver: Driver<'_>,
    observe_at: &[f64],
    log_events: bool,
) -> Result<Trajectory> {
    validate_run(g, init, horizon, observe_at)?;
    match driver {
        Driver::Fresh { seed } => {
            gillespie_run(g, params, init, horizon, observe_at, seed, log_events)
        }
        Driver::Construction(c) => {
            crate::graphical::run_single(c, g, params, init, horizon, observe_at, false, log_events)
        }
    }
}

/// The dual finite-set process driven by a shared construction: the forward
/// engine replayed with every arrow reversed. On these undirected graphs the
/// reversed arrow ensemble has the same law as the forward one, so the dual
/// is marginally equal in law to [`simulate`] from the same seed set; the
/// reversal convention only matters for pathwise joint use.
pub fn dual_process(
    g: &Graph,
    params: &ModelParams,
    a0: &Configuration,
    horizon: f64,
    construction: &GraphicalConstruction,
    observe_at: &[f64],
) -> Result<Trajectory> {
    if a0.is_empty() {
        return Err(Error::parameter("A0", "must be nonempty"));
    }
    validate_run(g, a0, horizon, observe_at)?;
    crate::graphical::run_single(
        construction,
        g,
        params,
        a0,
        horizon,
        observe_at,
        true,
        false,
    )
}

pub(crate) fn validate_run(
    g: &Graph,
    init: &Configuration,
    horizon: f64,
    observe_at: &[f64],
) -> Result<()> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::parameter("horizon", "must be finite and > 0"));
    }
    if observe_at.is_empty() {
        return Err(Error::parameter("observe_at", "must be nonempty"));
    }
    let mut prev = -1.0;
    for &t in observe_at {
        if t.is_nan() || t < 0.0 || t > horizon || t <= prev {
            return Err(Error::parameter(
                "observe_at",
                "must be strictly increasing within [0, horizon]",
            ));
        }
        prev = t;
    }
    for v in init.iter() {
        if !g.contains_vertex(v) {
            return Err(Error::validation("init", format!("{v} is not a vertex")));
        }
    }
    Ok(())
}

/// Dense site indexing over the (possibly infinite) vertex set: assigns
/// consecutive `u32` indices to vertices as the simulation touches them.
pub(crate) struct SiteIndexer {
    pub ids: Vec<VertexId>,
    pub hashes: Vec<u64>,
    index: FxHashMap<VertexId, u32>,
}

impl SiteIndexer {
    pub fn new() -> Self {
        SiteIndexer {
            ids: Vec::new(),
            hashes: Vec::new(),
            index: FxHashMap::default(),
        }
    }

    pub fn intern(&mut self, v: &VertexId) -> u32 {
        if let Some(&i) = self.index.get(v) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(v.clone());
        self.hashes.push(v.canonical_hash());
        self.index.insert(v.clone(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Lazily resolved adjacency (as site indices, sorted) of one graph under a
/// shared indexer. Separate from the indexer so several graphs can share one
/// vertex universe.
pub(crate) struct AdjCache<'g> {
    pub graph: &'g Graph,
    adj: Vec<Option<Box<[u32]>>>,
}

impl<'g> AdjCache<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        AdjCache {
            graph,
            adj: Vec::new(),
        }
    }

    pub fn ensure(&mut self, indexer: &mut SiteIndexer, i: u32) {
        let i = i as usize;
        if i >= self.adj.len() {
            self.adj.resize(indexer.len().max(i + 1), None);
        }
        if self.adj[i].is_none() {
            let v = indexer.ids[i].clone();
            let mut ns: Vec<u32> = self
                .graph
                .neighbors(&v)
                .iter()
                .map(|n| indexer.intern(n))
                .collect();
            ns.sort_unstable();
            self.adj[i] = Some(ns.into_boxed_slice());
        }
    }

    pub fn neighbors(&mut self, indexer: &mut SiteIndexer, i: u32) -> &[u32] {
        self.ensure(indexer, i);
        self.adj[i as usize].as_deref().unwrap()
    }

    pub fn has_edge(&mut self, indexer: &mut SiteIndexer, a: u32, b: u32) -> bool {
        self.ensure(indexer, a);
        self.adj[a as usize]
            .as_deref()
            .unwrap()
            .binary_search(&b)
            .is_ok()
    }
}

/// Bit-array view of one process state over indexed sites.
pub(crate) struct DenseState {
    flags: Vec<bool>,
    infected: Vec<u32>,
    pos: Vec<u32>,
}

const NO_POS: u32 = u32::MAX;

impl DenseState {
    pub fn new() -> Self {
        DenseState {
            flags: Vec::new(),
            infected: Vec::new(),
            pos: Vec::new(),
        }
    }

    fn grow(&mut self, i: u32) {
        let need = i as usize + 1;
        if self.flags.len() < need {
            self.flags.resize(need, false);
            self.pos.resize(need, NO_POS);
        }
    }

    pub fn infected(&self, i: u32) -> bool {
        self.flags.get(i as usize).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.infected.len()
    }

    pub fn infect(&mut self, i: u32) -> bool {
        self.grow(i);
        if self.flags[i as usize] {
            return false;
        }
        self.flags[i as usize] = true;
        self.pos[i as usize] = self.infected.len() as u32;
        self.infected.push(i);
        true
    }

    pub fn recover(&mut self, i: u32) -> bool {
        if !self.infected(i) {
            return false;
        }
        self.flags[i as usize] = false;
        let p = self.pos[i as usize];
        self.pos[i as usize] = NO_POS;
        let last = self.infected.pop().unwrap();
        if last != i {
            self.infected[p as usize] = last;
            self.pos[last as usize] = p;
        }
        true
    }

    pub fn nth_infected(&self, k: usize) -> u32 {
        self.infected[k]
    }

    pub fn to_configuration(&self, indexer: &SiteIndexer) -> Configuration {
        Configuration::from_vertices(
            self.infected
                .iter()
                .map(|&i| indexer.ids[i as usize].clone()),
        )
    }
}

/// Next-event sampler with degree thinning.
///
/// Each infected site carries total attempt rate `1 + lambda * deg_max`; an
/// attempt picks a uniform neighbor slot and is discarded when the slot
/// exceeds the site's degree or the target is already infected. This keeps
/// every step O(1) while reproducing the exact jump law.
fn gillespie_run(
    g: &Graph,
    params: &ModelParams,
    init: &Configuration,
    horizon: f64,
    observe_at: &[f64],
    seed: u64,
    log_events: bool,
) -> Result<Trajectory> {
    let mut rng = Rng::new(seed);
    let mut indexer = SiteIndexer::new();
    let mut adj = AdjCache::new(g);
    let mut state = DenseState::new();
    for v in init.iter() {
        let i = indexer.intern(v);
        state.infect(i);
    }
    let deg_max = g.max_degree();
    let attempt_rate = 1.0 + params.lambda * deg_max as f64;

    let mut events = if log_events { Some(Vec::new()) } else { None };
    let mut counts = Vec::with_capacity(observe_at.len());
    let mut next_obs = 0usize;
    let mut t = 0.0f64;

    loop {
        let n = state.count();
        if n == 0 {
            break;
        }
        let total = n as f64 * attempt_rate;
        t += rng.exponential(total);
        if t > horizon {
            break;
        }
        while next_obs < observe_at.len() && observe_at[next_obs] < t {
            counts.push(state.count());
            next_obs += 1;
        }
        let k = rng.below(n as u64) as usize;
        let x = state.nth_infected(k);
        let u = rng.uniform() * attempt_rate;
        if u < 1.0 {
            state.recover(x);
            if let Some(log) = events.as_mut() {
                log.push(Event {
                    time: t,
                    site: indexer.ids[x as usize].clone(),
                    kind: EventKind::Recovery,
                });
            }
        } else {
            let slot = ((u - 1.0) / params.lambda) as usize;
            let ns = adj.neighbors(&mut indexer, x);
            if slot < ns.len() {
                let y = ns[slot];
                if state.infect(y) {
                    if let Some(log) = events.as_mut() {
                        log.push(Event {
                            time: t,
                            site: indexer.ids[y as usize].clone(),
                            kind: EventKind::Infection,
                        });
                    }
                }
            }
        }
    }

    while next_obs < observe_at.len() {
        counts.push(state.count());
        next_obs += 1;
    }

    Ok(Trajectory {
        grid: observe_at.to_vec(),
        counts,
        final_state: state.to_configuration(&indexer),
        horizon,
        events,
    })
}
