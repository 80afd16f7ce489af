//! Shared-randomness graphical construction and its replay engine.
//!
//! The construction assigns every site a Poisson stream of recovery marks
//! (rate 1) and every directed edge a Poisson stream of infection arrows
//! (rate `rate_cap`), each arrow carrying an independent uniform mark. A
//! process with infection rate `lambda <= rate_cap` accepts an arrow when
//! `mark * rate_cap < lambda`, so runs at different rates on one
//! construction are pathwise ordered in `lambda`, and graphs sharing edges
//! see identical streams on them.
//!
//! Streams are pure functions of `(master_seed, canonical endpoint
//! encodings, window index)`, generated lazily one time-window at a time and
//! memoized per run. Replaying a construction therefore costs nothing to
//! share: two runs handed the same descriptor see the same marks and arrows,
//! which is exactly the basic coupling.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;

use crate::dynamics::{
    validate_run, AdjCache, Configuration, DenseState, Event, EventKind, ModelParams, SiteIndexer,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{derive_seed, Rng};

const TAG_RECOVERY: u64 = 0x52454356; // "RECV"
const TAG_ARROW: u64 = 0x4152524f; // "ARRO"

/// Descriptor of a deterministic event field. Copyable and stateless; all
/// memoization lives inside each run.
#[derive(Clone, Copy, Debug)]
pub struct GraphicalConstruction {
    pub master_seed: u64,
    /// Length of the generation/memoization time window.
    pub window: f64,
    /// Rate at which arrow streams are generated; every process driven by
    /// this construction must have `lambda <= rate_cap`.
    pub rate_cap: f64,
}

impl GraphicalConstruction {
    pub fn new(master_seed: u64, rate_cap: f64) -> Result<Self> {
        Self::with_window(master_seed, rate_cap, 1.0)
    }

    pub fn with_window(master_seed: u64, rate_cap: f64, window: f64) -> Result<Self> {
        if !rate_cap.is_finite() || rate_cap < 0.0 {
            return Err(Error::parameter("rate_cap", "must be finite and >= 0"));
        }
        if !window.is_finite() || window <= 0.0 {
            return Err(Error::parameter("window", "must be finite and > 0"));
        }
        Ok(GraphicalConstruction {
            master_seed,
            window,
            rate_cap,
        })
    }

    /// Recovery marks of one site inside window `w`, in increasing order.
    pub fn recovery_window(&self, site_hash: u64, w: u64) -> Vec<f64> {
        poisson_window(
            derive_seed(self.master_seed, &[TAG_RECOVERY, site_hash, w]),
            1.0,
            self.window,
            w,
        )
        .into_iter()
        .map(|(t, _)| t)
        .collect()
    }

    /// Arrow events of the directed edge `src -> dst` inside window `w`:
    /// `(time, mark)` pairs in increasing time order.
    pub fn arrow_window(&self, src_hash: u64, dst_hash: u64, w: u64) -> Vec<(f64, f64)> {
        if self.rate_cap == 0.0 {
            return Vec::new();
        }
        poisson_window(
            derive_seed(self.master_seed, &[TAG_ARROW, src_hash, dst_hash, w]),
            self.rate_cap,
            self.window,
            w,
        )
    }
}

/// Events of one Poisson(rate) stream restricted to `[w*window, (w+1)*window)`,
/// each with a uniform mark drawn alongside the gap.
fn poisson_window(seed: u64, rate: f64, window: f64, w: u64) -> Vec<(f64, f64)> {
    let mut rng = Rng::new(seed);
    let start = w as f64 * window;
    let end = (w + 1) as f64 * window;
    let mut out = Vec::new();
    let mut t = start;
    loop {
        t += rng.exponential(rate);
        if t >= end {
            return out;
        }
        let mark = rng.uniform();
        out.push((t, mark));
    }
}

// Stream keys packed into u64: bit 63 tags recoveries; arrows pack the two
// site indices (which stay far below 2^31 in any run).
#[inline]
fn recovery_key(site: u32) -> u64 {
    (1u64 << 63) | site as u64
}

#[inline]
fn arrow_key(src: u32, dst: u32) -> u64 {
    ((src as u64) << 32) | dst as u64
}

#[inline]
fn decode_key(key: u64) -> StreamId {
    if key & (1 << 63) != 0 {
        StreamId::Recovery((key & 0xffff_ffff) as u32)
    } else {
        StreamId::Arrow((key >> 32) as u32, (key & 0xffff_ffff) as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StreamId {
    Recovery(u32),
    Arrow(u32, u32),
}

struct Cursor {
    events: Vec<(f64, f64)>,
    idx: usize,
    window: u64,
    active: bool,
}

/// Wrapper giving event times a total order in the heap (never NaN).
/// Equal-time collisions between distinct streams have probability zero in
/// theory; when floating point produces one it resolves by the canonical
/// stream token, which is identical across runs sharing the construction.
#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    time: f64,
    /// stable across runs: derived from canonical endpoint hashes
    canonical: u64,
    key: u64,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .partial_cmp(&other.time)
            .unwrap()
            .then(self.canonical.cmp(&other.canonical))
            .then(self.key.cmp(&other.key))
    }
}

/// One process evolving in a joint replay.
pub(crate) struct ProcessSpec<'a> {
    pub graph: &'a Graph,
    pub lambda: f64,
    pub init: &'a Configuration,
}

/// What a replay reports back per applied (state-changing) event.
pub(crate) struct EventRecord {
    pub time: f64,
    /// Index of the site whose state changed.
    pub site: u32,
}

pub(crate) struct ReplayOutcome {
    /// `counts[p][j]` = infected count of process `p` at grid point `j`.
    pub counts: Vec<Vec<usize>>,
    pub finals: Vec<Configuration>,
    /// Number of equal-time collisions between distinct streams (measure
    /// zero in theory; counted when floating-point produces them).
    pub tie_anomalies: u64,
    pub events: Option<Vec<Event>>,
}

/// Joint replay of `processes` on one construction. All processes see the
/// same marks and arrows; process `p` reacts to an arrow only if its graph
/// has the edge, its source is infected in `p`, and the mark accepts at
/// `lambda_p`. `on_event` runs after every state-changing event and may
/// fail the run (used for pathwise assertions).
pub(crate) fn replay_run(
    construction: &GraphicalConstruction,
    processes: &[ProcessSpec<'_>],
    horizon: f64,
    grid: &[f64],
    reverse_arrows: bool,
    log_events: bool,
    mut on_event: impl FnMut(&EventRecord, &[DenseState]) -> Result<()>,
) -> Result<ReplayOutcome> {
    assert!(!processes.is_empty() && processes.len() <= 32);
    for spec in processes {
        if spec.lambda > construction.rate_cap + 1e-12 {
            return Err(Error::parameter(
                "lambda",
                format!(
                    "process rate {} exceeds construction rate_cap {}",
                    spec.lambda, construction.rate_cap
                ),
            ));
        }
        validate_run(spec.graph, spec.init, horizon, grid)?;
    }

    let mut indexer = SiteIndexer::new();
    let mut adj: Vec<AdjCache<'_>> = processes.iter().map(|s| AdjCache::new(s.graph)).collect();
    let mut states: Vec<DenseState> = processes.iter().map(|_| DenseState::new()).collect();
    let n_proc = processes.len();

    // how many processes currently infect each site
    let mut rel: Vec<u32> = Vec::new();
    let mut cursors: FxHashMap<u64, Cursor> = FxHashMap::default();
    let mut heap: BinaryHeap<Reverse<HeapEntry>> = BinaryHeap::new();
    let max_window = (horizon / construction.window).ceil() as u64 + 1;

    macro_rules! bump_rel {
        ($site:expr) => {{
            let s = $site as usize;
            if s >= rel.len() {
                rel.resize(s + 1, 0);
            }
            rel[s] += 1;
            rel[s] == 1
        }};
    }

    for (p, spec) in processes.iter().enumerate() {
        for v in spec.init.iter() {
            let i = indexer.intern(v);
            if states[p].infect(i) {
                let _ = bump_rel!(i);
            }
        }
    }

    let lambdas: Vec<f64> = processes.iter().map(|s| s.lambda).collect();
    let cap = construction.rate_cap;

    // Positions `cursor` at the first event strictly after `t` and returns it.
    let position_after = |cursors: &mut FxHashMap<u64, Cursor>,
                          key: u64,
                          t: f64,
                          indexer: &SiteIndexer|
     -> Option<f64> {
        let cursor = cursors.entry(key).or_insert_with(|| Cursor {
            events: Vec::new(),
            idx: 0,
            window: u64::MAX,
            active: false,
        });
        let gen = |w: u64| -> Vec<(f64, f64)> {
            match decode_key(key) {
                StreamId::Recovery(s) => construction
                    .recovery_window(indexer.hashes[s as usize], w)
                    .into_iter()
                    .map(|t| (t, 0.0))
                    .collect(),
                StreamId::Arrow(a, b) => construction.arrow_window(
                    indexer.hashes[a as usize],
                    indexer.hashes[b as usize],
                    w,
                ),
            }
        };
        let mut w = (t / construction.window) as u64;
        if cursor.window != w {
            cursor.window = w;
            cursor.events = gen(w);
            cursor.idx = 0;
        }
        loop {
            while cursor.idx < cursor.events.len() {
                let (et, _) = cursor.events[cursor.idx];
                if et > t {
                    return Some(et);
                }
                cursor.idx += 1;
            }
            w += 1;
            if w >= max_window {
                return None;
            }
            cursor.window = w;
            cursor.events = gen(w);
            cursor.idx = 0;
        }
    };

    let canonical_token = |key: u64, indexer: &SiteIndexer| -> u64 {
        match decode_key(key) {
            StreamId::Recovery(s) => indexer.hashes[s as usize],
            StreamId::Arrow(a, b) => {
                indexer.hashes[a as usize]
                    .rotate_left(17)
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    ^ indexer.hashes[b as usize]
            }
        }
    };

    macro_rules! activate_stream {
        ($key:expr, $t:expr) => {{
            let key = $key;
            let already = cursors.get(&key).map_or(false, |c| c.active);
            if !already {
                if let Some(et) = position_after(&mut cursors, key, $t, &indexer) {
                    cursors.get_mut(&key).unwrap().active = true;
                    heap.push(Reverse(HeapEntry {
                        time: et,
                        canonical: canonical_token(key, &indexer),
                        key,
                    }));
                }
            }
        }};
    }

    // Activates every stream that can act from `site` while it is infected
    // somewhere: its recovery marks plus, for each union-graph neighbor, the
    // outgoing arrow (or the incoming one when replaying reversed).
    macro_rules! activate_site {
        ($site:expr, $t:expr) => {{
            let site = $site;
            activate_stream!(recovery_key(site), $t);
            if cap > 0.0 {
                let mut union: Vec<u32> = Vec::new();
                for a in adj.iter_mut() {
                    union.extend_from_slice(a.neighbors(&mut indexer, site));
                }
                union.sort_unstable();
                union.dedup();
                for n in union {
                    let key = if reverse_arrows {
                        arrow_key(n, site)
                    } else {
                        arrow_key(site, n)
                    };
                    activate_stream!(key, $t);
                }
            }
        }};
    }

    let initial: Vec<u32> = rel
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, _)| i as u32)
        .collect();
    for i in initial {
        activate_site!(i, 0.0);
    }

    let mut counts: Vec<Vec<usize>> = vec![Vec::with_capacity(grid.len()); n_proc];
    let mut next_obs = 0usize;
    let mut tie_anomalies = 0u64;
    let mut last_time = -1.0f64;
    let mut events: Option<Vec<Event>> = if log_events { Some(Vec::new()) } else { None };

    macro_rules! snapshot_until {
        ($t:expr) => {
            while next_obs < grid.len() && grid[next_obs] < $t {
                for (p, c) in counts.iter_mut().enumerate() {
                    c.push(states[p].count());
                }
                next_obs += 1;
            }
        };
    }

    while let Some(Reverse(entry)) = heap.pop() {
        let te = entry.time;
        if te > horizon {
            break;
        }
        snapshot_until!(te);
        if te == last_time {
            tie_anomalies += 1;
        }
        last_time = te;

        let cursor = cursors.get_mut(&entry.key).unwrap();
        cursor.active = false;
        let mark = cursor.events[cursor.idx].1;

        let id = decode_key(entry.key);
        let (src, tgt) = match id {
            StreamId::Recovery(s) => (s, s),
            StreamId::Arrow(a, b) => {
                if reverse_arrows {
                    (b, a)
                } else {
                    (a, b)
                }
            }
        };

        if rel.get(src as usize).copied().unwrap_or(0) == 0 {
            // source dead everywhere: park the stream; it will be
            // repositioned if the site is reinfected (skipped events are
            // no-ops by construction).
            continue;
        }

        let mut changed = 0u32;
        match id {
            StreamId::Recovery(s) => {
                for (p, st) in states.iter_mut().enumerate() {
                    if st.recover(s) {
                        changed |= 1 << p;
                        rel[s as usize] -= 1;
                    }
                }
                if changed != 0 {
                    if let Some(log) = events.as_mut() {
                        log.push(Event {
                            time: te,
                            site: indexer.ids[s as usize].clone(),
                            kind: EventKind::Recovery,
                        });
                    }
                    on_event(&EventRecord { time: te, site: s }, &states)?;
                }
            }
            StreamId::Arrow(..) => {
                let mut newly_relevant = false;
                for p in 0..n_proc {
                    if states[p].infected(src)
                        && mark * cap < lambdas[p]
                        && adj[p].has_edge(&mut indexer, src, tgt)
                        && states[p].infect(tgt)
                    {
                        changed |= 1 << p;
                        if bump_rel!(tgt) {
                            newly_relevant = true;
                        }
                    }
                }
                if changed != 0 {
                    if newly_relevant {
                        activate_site!(tgt, te);
                    }
                    if let Some(log) = events.as_mut() {
                        log.push(Event {
                            time: te,
                            site: indexer.ids[tgt as usize].clone(),
                            kind: EventKind::Infection,
                        });
                    }
                    on_event(
                        &EventRecord {
                            time: te,
                            site: tgt,
                        },
                        &states,
                    )?;
                }
            }
        }

        // keep the stream scheduled while its source can still act
        if rel.get(src as usize).copied().unwrap_or(0) > 0 {
            let cursor = cursors.get_mut(&entry.key).unwrap();
            cursor.idx += 1;
            let next = {
                let c = cursors.get(&entry.key).unwrap();
                c.events.get(c.idx).map(|&(t, _)| t)
            };
            let next = match next {
                Some(t) => Some(t),
                None => position_after(&mut cursors, entry.key, te, &indexer),
            };
            if let Some(nt) = next {
                cursors.get_mut(&entry.key).unwrap().active = true;
                heap.push(Reverse(HeapEntry {
                    time: nt,
                    canonical: entry.canonical,
                    key: entry.key,
                }));
            }
        }
    }

    snapshot_until!(horizon + 1.0);

    Ok(ReplayOutcome {
        counts,
        finals: states
            .iter()
            .map(|s| s.to_configuration(&indexer))
            .collect(),
        tie_anomalies,
        events,
    })
}

/// Single-process run driven by a construction.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_single(
    construction: &GraphicalConstruction,
    g: &Graph,
    params: &ModelParams,
    init: &Configuration,
    horizon: f64,
    grid: &[f64],
    reverse_arrows: bool,
    log_events: bool,
) -> Result<Trajectory> {
    let spec = ProcessSpec {
        graph: g,
        lambda: params.lambda,
        init,
    };
    let out = replay_run(
        construction,
        std::slice::from_ref(&spec),
        horizon,
        grid,
        reverse_arrows,
        log_events,
        |_, _| Ok(()),
    )?;
    let ReplayOutcome {
        mut counts,
        mut finals,
        events,
        ..
    } = out;
    Ok(Trajectory {
        grid: grid.to_vec(),
        counts: counts.remove(0),
        final_state: finals.remove(0),
        horizon,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, Driver};
    use crate::graph::{make_graph, BaseKind, VertexId};

    fn ring(len: u64) -> Graph {
        make_graph(BaseKind::Ring { len }).unwrap()
    }

    fn v(k: i64) -> VertexId {
        VertexId::coord(vec![k])
    }

    #[test]
    fn stream_windows_are_pure_functions() {
        let c = GraphicalConstruction::new(99, 2.0).unwrap();
        let h = v(3).canonical_hash();
        assert_eq!(c.recovery_window(h, 0), c.recovery_window(h, 0));
        assert_eq!(c.arrow_window(h, 17, 4), c.arrow_window(h, 17, 4));
        assert_ne!(c.arrow_window(h, 17, 4), c.arrow_window(17, h, 4));
        let c2 = GraphicalConstruction::new(100, 2.0).unwrap();
        assert_ne!(c.recovery_window(h, 0), c2.recovery_window(h, 0));
    }

    #[test]
    fn stream_times_sorted_and_in_window() {
        let c = GraphicalConstruction::new(7, 3.0).unwrap();
        for w in 0..20u64 {
            let evs = c.arrow_window(11, 22, w);
            let mut prev = w as f64;
            for (t, mark) in evs {
                assert!(t >= w as f64 && t < (w + 1) as f64);
                assert!(t >= prev);
                assert!((0.0..1.0).contains(&mark));
                prev = t;
            }
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let g = ring(20);
        let p = ModelParams::new(1.5).unwrap();
        let init = Configuration::from_vertices([v(0), v(10)]);
        let c = GraphicalConstruction::new(12345, 1.5).unwrap();
        let grid = [1.0, 2.0, 5.0, 8.0];
        let a = simulate(&g, &p, &init, 8.0, Driver::Construction(&c), &grid, false).unwrap();
        let b = simulate(&g, &p, &init, 8.0, Driver::Construction(&c), &grid, false).unwrap();
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn additivity_and_monotonicity_under_shared_construction() {
        // A_t^{A u B} = A_t^A u A_t^B, exactly, at every event of a joint run.
        let g = ring(24);
        let p = ModelParams::new(1.2).unwrap();
        for seed in 0..25u64 {
            let c = GraphicalConstruction::new(1000 + seed, 1.2).unwrap();
            let a = Configuration::from_vertices([v(0), v(5)]);
            let b = Configuration::from_vertices([v(5), v(12)]);
            let ab = a.union(&b);
            let specs = [
                ProcessSpec {
                    graph: &g,
                    lambda: p.lambda,
                    init: &a,
                },
                ProcessSpec {
                    graph: &g,
                    lambda: p.lambda,
                    init: &b,
                },
                ProcessSpec {
                    graph: &g,
                    lambda: p.lambda,
                    init: &ab,
                },
            ];
            let out = replay_run(&c, &specs, 6.0, &[6.0], false, false, |rec, states| {
                let union_count = (0..states[2].count())
                    .map(|k| states[2].nth_infected(k))
                    .filter(|&i| !states[0].infected(i) && !states[1].infected(i))
                    .count();
                assert_eq!(union_count, 0, "union exceeded A+B at t={}", rec.time);
                for k in 0..states[0].count() {
                    assert!(states[2].infected(states[0].nth_infected(k)));
                }
                for k in 0..states[1].count() {
                    assert!(states[2].infected(states[1].nth_infected(k)));
                }
                Ok(())
            })
            .unwrap();
            let union = out.finals[0].union(&out.finals[1]);
            assert_eq!(union, out.finals[2], "seed {seed}");
        }
    }

    #[test]
    fn lambda_monotonicity_under_shared_construction() {
        let g = ring(30);
        let init = Configuration::from_vertices([v(0)]);
        for seed in 0..20u64 {
            let c = GraphicalConstruction::new(777 + seed, 2.0).unwrap();
            let lo = run_single(
                &c,
                &g,
                &ModelParams::new(0.8).unwrap(),
                &init,
                6.0,
                &[6.0],
                false,
                false,
            )
            .unwrap();
            let hi = run_single(
                &c,
                &g,
                &ModelParams::new(2.0).unwrap(),
                &init,
                6.0,
                &[6.0],
                false,
                false,
            )
            .unwrap();
            assert!(
                lo.final_state.is_subset(&hi.final_state),
                "seed {seed}: lower-rate state must be contained in higher-rate state"
            );
        }
    }

    #[test]
    fn dual_seed_monotonicity() {
        let g = ring(16);
        let p = ModelParams::new(1.0).unwrap();
        for seed in 0..10u64 {
            let c = GraphicalConstruction::new(31 + seed, 1.0).unwrap();
            let small = Configuration::from_vertices([v(2)]);
            let big = Configuration::from_vertices([v(2), v(9)]);
            let a = crate::dynamics::dual_process(&g, &p, &small, 5.0, &c, &[5.0]).unwrap();
            let b = crate::dynamics::dual_process(&g, &p, &big, 5.0, &c, &[5.0]).unwrap();
            assert!(a.final_state.is_subset(&b.final_state));
        }
    }

    #[test]
    fn rate_above_cap_rejected() {
        let g = ring(8);
        let c = GraphicalConstruction::new(1, 1.0).unwrap();
        let p = ModelParams::new(1.5).unwrap();
        let init = Configuration::from_vertices([v(0)]);
        assert!(simulate(&g, &p, &init, 1.0, Driver::Construction(&c), &[1.0], false).is_err());
    }
}
