//! Basic coupling of contact processes, conditioned initial pairs, and the
//! discrepancy-domination run.
//!
//! Two processes driven by one graphical construction form the basic
//! coupling: they share every recovery mark and infection arrow, so an
//! initial pointwise ordering is preserved at every event. The discrepancy
//! set of an ordered pair that starts one flipped site apart is itself
//! dominated, pathwise, by a contact process started from that site on the
//! same construction; [`joint_domination_run`] evolves all three processes
//! jointly and verifies the domination after every state-changing event.

use crate::dynamics::{Configuration, DenseState, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::graphical::{replay_run, EventRecord, GraphicalConstruction, ProcessSpec};
use crate::rng::derive_seed;

/// Which endpoint of a perturbed edge is conditioned to be healthy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

/// The conditioning event on configurations attached to one perturbed edge:
/// the `healthy_side` endpoint is 0 and the opposite endpoint is 1.
#[derive(Clone, Debug)]
pub struct ConditioningEvent {
    pub edge: (VertexId, VertexId),
    pub healthy_side: Side,
}

impl ConditioningEvent {
    pub fn new(edge: (VertexId, VertexId), healthy_side: Side) -> Result<Self> {
        if edge.0 == edge.1 {
            return Err(Error::validation("event", "edge endpoints must differ"));
        }
        Ok(ConditioningEvent { edge, healthy_side })
    }

    /// The endpoint conditioned healthy; the flip site of the pair.
    pub fn healthy_vertex(&self) -> &VertexId {
        match self.healthy_side {
            Side::First => &self.edge.0,
            Side::Second => &self.edge.1,
        }
    }

    pub fn infected_vertex(&self) -> &VertexId {
        match self.healthy_side {
            Side::First => &self.edge.1,
            Side::Second => &self.edge.0,
        }
    }

    /// Whether a configuration lies in the event.
    pub fn holds(&self, eta: &Configuration) -> bool {
        !eta.contains(self.healthy_vertex()) && eta.contains(self.infected_vertex())
    }

    /// The disjoint mirrored event on the same edge.
    pub fn opposite(&self) -> ConditioningEvent {
        ConditioningEvent {
            edge: self.edge.clone(),
            healthy_side: match self.healthy_side {
                Side::First => Side::Second,
                Side::Second => Side::First,
            },
        }
    }
}

/// An ordered pair of configurations sharing a construction.
#[derive(Clone, Debug)]
pub struct CoupledPair {
    pub lower: Configuration,
    pub upper: Configuration,
    pub construction: GraphicalConstruction,
}

impl CoupledPair {
    pub fn new(
        lower: Configuration,
        upper: Configuration,
        construction: GraphicalConstruction,
    ) -> Result<Self> {
        if !lower.is_subset(&upper) {
            return Err(Error::Coupling(
                "initial lower state is not contained in the upper state".into(),
            ));
        }
        Ok(CoupledPair {
            lower,
            upper,
            construction,
        })
    }

    /// Sites infected above but not below.
    pub fn discrepancy(&self) -> Configuration {
        self.upper.difference(&self.lower)
    }
}

/// A conditioned initial pair: `lower` lies in the conditioning event and
/// `upper` equals `lower` with the healthy endpoint flipped to infected, so
/// the initial discrepancy is exactly that one site.
#[derive(Clone, Debug)]
pub struct InitialPairSample {
    pub lower: Configuration,
    pub upper: Configuration,
    pub flipped: VertexId,
    pub weight: Option<WeightEstimate>,
}

/// Acceptance-frequency estimate of the conditioning-event probability.
#[derive(Clone, Copy, Debug)]
pub struct WeightEstimate {
    pub value: f64,
    pub std_error: f64,
    pub accepted: u64,
    pub attempts: u64,
}

impl InitialPairSample {
    /// Builds the pair from a configuration already inside the event.
    pub fn from_conditioned(lower: Configuration, event: &ConditioningEvent) -> Result<Self> {
        if !event.holds(&lower) {
            return Err(Error::Coupling(format!(
                "configuration is not in the conditioning event ({} healthy, {} infected)",
                event.healthy_vertex(),
                event.infected_vertex()
            )));
        }
        let z = event.healthy_vertex().clone();
        let mut upper = lower.clone();
        upper.insert(z.clone());
        Ok(InitialPairSample {
            lower,
            upper,
            flipped: z,
            weight: None,
        })
    }

    /// Forces an arbitrary configuration into the event by overwriting the
    /// two endpoint values, then builds the pair. Used where the conditioned
    /// measure is degenerate (deeply subcritical rates) but a valid member
    /// of the event is still needed.
    pub fn forcing(mut state: Configuration, event: &ConditioningEvent) -> Self {
        state.remove(event.healthy_vertex());
        state.insert(event.infected_vertex().clone());
        Self::from_conditioned(state, event).expect("forced state lies in the event")
    }
}

/// A coupled trajectory sampled on a grid. The discrepancy count is
/// `upper - lower`, valid because the ordering is asserted at every event.
#[derive(Clone, Debug)]
pub struct CoupledTrajectory {
    pub grid: Vec<f64>,
    pub lower_counts: Vec<usize>,
    pub upper_counts: Vec<usize>,
    pub final_lower: Configuration,
    pub final_upper: Configuration,
    pub events_checked: u64,
    pub tie_anomalies: u64,
}

impl CoupledTrajectory {
    pub fn discrepancy_counts(&self) -> Vec<usize> {
        self.upper_counts
            .iter()
            .zip(&self.lower_counts)
            .map(|(u, l)| u - l)
            .collect()
    }
}

/// Evolves an ordered pair under the basic coupling up to `horizon`.
///
/// Both marginals follow their own correct law; on the same graph the two
/// processes move together except on the discrepancy, and with
/// `g_lower`'s edges contained in `g_upper`'s the extra edges act on the
/// upper process only. The pointwise ordering is asserted after every
/// state-changing event.
pub fn basic_couple(
    g_lower: &Graph,
    g_upper: &Graph,
    params: &ModelParams,
    pair: &CoupledPair,
    horizon: f64,
    observe_at: &[f64],
) -> Result<CoupledTrajectory> {
    if !crate::graph::is_edge_subgraph(g_lower, g_upper)? {
        return Err(Error::Coupling(
            "lower graph has edges missing from the upper graph".into(),
        ));
    }
    let specs = [
        ProcessSpec {
            graph: g_lower,
            lambda: params.lambda,
            init: &pair.lower,
        },
        ProcessSpec {
            graph: g_upper,
            lambda: params.lambda,
            init: &pair.upper,
        },
    ];
    let mut checked = 0u64;
    let out = replay_run(
        &pair.construction,
        &specs,
        horizon,
        observe_at,
        false,
        false,
        |rec: &EventRecord, states: &[DenseState]| {
            checked += 1;
            if states[0].infected(rec.site) && !states[1].infected(rec.site) {
                return Err(Error::Coupling(format!(
                    "ordering violated at t={} site index {}",
                    rec.time, rec.site
                )));
            }
            Ok(())
        },
    )?;
    let mut finals = out.finals;
    Ok(CoupledTrajectory {
        grid: observe_at.to_vec(),
        lower_counts: out.counts[0].clone(),
        upper_counts: out.counts[1].clone(),
        final_lower: finals.remove(0),
        final_upper: finals.remove(0),
        events_checked: checked,
        tie_anomalies: out.tie_anomalies,
    })
}

/// Output of [`joint_domination_run`]: the discrepancy path and the path of
/// the dominating single-seed process, on the observation grid.
#[derive(Clone, Debug)]
pub struct DominationRun {
    pub grid: Vec<f64>,
    pub lower_counts: Vec<usize>,
    pub upper_counts: Vec<usize>,
    pub discrepancy_counts: Vec<usize>,
    pub dominator_counts: Vec<usize>,
    pub final_discrepancy: Configuration,
    pub final_dominator: Configuration,
    pub events_checked: u64,
}

/// Runs the coupled pair and the dominating process started from the pair's
/// flipped site, all three on `g` under one construction, asserting sitewise
/// `discrepancy <= dominator` after every state-changing event. A violation
/// is an engine bug and fails the run. `g_prime` is the perturbed graph the
/// conditioning event refers to; it participates in validation only.
#[allow(clippy::too_many_arguments)]
pub fn joint_domination_run(
    g: &Graph,
    g_prime: &Graph,
    params: &ModelParams,
    event: &ConditioningEvent,
    pair: &InitialPairSample,
    horizon: f64,
    observe_at: &[f64],
    construction: &GraphicalConstruction,
) -> Result<DominationRun> {
    // the conditioned edge must distinguish the two graphs
    let in_g = g.has_edge(&event.edge.0, &event.edge.1);
    let in_gp = g_prime.has_edge(&event.edge.0, &event.edge.1);
    if in_g == in_gp {
        return Err(Error::validation(
            "event",
            "conditioned edge must be present in exactly one of the two graphs",
        ));
    }
    let mut expected_upper = pair.lower.clone();
    expected_upper.insert(pair.flipped.clone());
    if !event.holds(&pair.lower)
        || pair.upper != expected_upper
        || pair.flipped != *event.healthy_vertex()
    {
        return Err(Error::Coupling(
            "pair does not match the conditioning event".into(),
        ));
    }

    let seed = Configuration::from_vertices([pair.flipped.clone()]);
    let specs = [
        ProcessSpec {
            graph: g,
            lambda: params.lambda,
            init: &pair.lower,
        },
        ProcessSpec {
            graph: g,
            lambda: params.lambda,
            init: &pair.upper,
        },
        ProcessSpec {
            graph: g,
            lambda: params.lambda,
            init: &seed,
        },
    ];
    let mut checked = 0u64;
    let out = replay_run(
        construction,
        &specs,
        horizon,
        observe_at,
        false,
        false,
        |rec: &EventRecord, states: &[DenseState]| {
            checked += 1;
            let s = rec.site;
            if states[0].infected(s) && !states[1].infected(s) {
                return Err(Error::Coupling(format!(
                    "ordering violated at t={} site index {s}",
                    rec.time
                )));
            }
            if states[1].infected(s) && !states[0].infected(s) && !states[2].infected(s) {
                return Err(Error::Coupling(format!(
                    "domination violated at t={} site index {s}",
                    rec.time
                )));
            }
            Ok(())
        },
    )?;
    let discrepancy_counts = out.counts[1]
        .iter()
        .zip(&out.counts[0])
        .map(|(u, l)| u - l)
        .collect();
    let final_discrepancy = out.finals[1].difference(&out.finals[0]);
    Ok(DominationRun {
        grid: observe_at.to_vec(),
        lower_counts: out.counts[0].clone(),
        upper_counts: out.counts[1].clone(),
        discrepancy_counts,
        dominator_counts: out.counts[2].clone(),
        final_discrepancy,
        final_dominator: out.finals[2].clone(),
        events_checked: checked,
    })
}

/// Default acceptance floor reported by sampling failures.
pub const ACCEPTANCE_FLOOR: f64 = 1e-4;

/// Draws a conditioned initial pair by relaxing the all-ones state on the
/// finite truncation of `g_prime` for `relax_time` and rejection-sampling on
/// the conditioning event. All `attempts` relaxations run regardless of when
/// the first acceptance lands, so the acceptance frequency is a binomial
/// estimate of the event weight under the relaxed measure.
pub fn sample_initial_pair(
    g_prime: &Graph,
    params: &ModelParams,
    event: &ConditioningEvent,
    relax_time: f64,
    truncation: u64,
    attempts: u64,
    seed: u64,
) -> Result<InitialPairSample> {
    if attempts == 0 {
        return Err(Error::parameter("attempts", "must be >= 1"));
    }
    let g_t = crate::graph::finite_truncation(g_prime, truncation)?;
    for v in [&event.edge.0, &event.edge.1] {
        if !g_t.contains_vertex(v) {
            return Err(Error::validation(
                "event",
                format!("{v} is not a vertex of the truncated graph"),
            ));
        }
    }
    let all_ones = Configuration::all_ones(&g_t)?;
    let n = all_ones.len() as f64;
    let mut accepted = 0u64;
    let mut first: Option<Configuration> = None;
    let mut last_density = 0.0;
    for k in 0..attempts {
        let traj = crate::dynamics::simulate(
            &g_t,
            params,
            &all_ones,
            relax_time,
            crate::dynamics::Driver::Fresh {
                seed: derive_seed(seed, &[0x52454c41, k]),
            },
            &[relax_time],
            false,
        )?;
        last_density = traj.final_state.len() as f64 / n;
        if event.holds(&traj.final_state) {
            accepted += 1;
            if first.is_none() {
                first = Some(traj.final_state);
            }
        }
    }
    let Some(state) = first else {
        return Err(Error::SamplingFailure {
            attempts,
            floor: ACCEPTANCE_FLOOR,
            last_density,
        });
    };
    let w = accepted as f64 / attempts as f64;
    let mut pair = InitialPairSample::from_conditioned(state, event)?;
    pair.weight = Some(WeightEstimate {
        value: w,
        std_error: (w * (1.0 - w) / attempts as f64).sqrt(),
        accepted,
        attempts,
    });
    Ok(pair)
}
