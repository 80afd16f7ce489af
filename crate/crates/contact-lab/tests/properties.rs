//! Property tests over randomized graphs, perturbations, and couplings.

use proptest::prelude::*;

use contact_lab::dynamics::{flip, Configuration, ModelParams};
use contact_lab::graph::{
    apply_perturbation, graph_distance, make_graph, BaseKind, Distance, EdgePerturbation, Graph,
    VertexId,
};
use contact_lab::graphical::GraphicalConstruction;
use contact_lab::{coupling, dynamics};

fn v(k: i64) -> VertexId {
    VertexId::coord(vec![k])
}

/// Strategy: a base graph plus a valid random perturbation of it.
fn perturbed_graph() -> impl Strategy<Value = Graph> {
    let base = prop_oneof![
        (3u64..12).prop_map(|l| BaseKind::Ring { len: l }),
        (1u32..3).prop_map(|d| BaseKind::Lattice { dim: d }),
        (2u32..4).prop_map(|q| BaseKind::Tree { degree: q }),
        ((2u32..4), (1u32..4)).prop_map(|(q, r)| BaseKind::TreeBall {
            degree: q,
            radius: r
        }),
        ((1u32..3), (3u64..5)).prop_map(|(d, l)| BaseKind::Torus { dim: d, len: l }),
    ];
    (base, any::<u64>()).prop_map(|(kind, seed)| {
        let g = make_graph(kind).unwrap();
        random_perturbation(&g, seed)
    })
}

/// Deterministic random perturbation driven by a seed: walks the two-hop
/// neighborhood of the origin, toggling a few pairs where valid.
fn random_perturbation(g: &Graph, seed: u64) -> Graph {
    let mut rng = contact_lab::rng::Rng::new(seed);
    let o = g.origin();
    let mut pool = vec![o.clone()];
    for n in g.neighbors(&o) {
        for m in g.neighbors(&n) {
            if !pool.contains(&m) {
                pool.push(m);
            }
        }
        if !pool.contains(&n) {
            pool.push(n);
        }
    }
    let mut added = Vec::new();
    let mut removed = Vec::new();
    for _ in 0..rng.below(4) {
        let a = pool[rng.below(pool.len() as u64) as usize].clone();
        let b = pool[rng.below(pool.len() as u64) as usize].clone();
        if a == b {
            continue;
        }
        let pair = if a <= b { (a, b) } else { (b, a) };
        if added.contains(&pair) || removed.contains(&pair) {
            continue;
        }
        if g.has_edge(&pair.0, &pair.1) {
            removed.push(pair);
        } else {
            added.push(pair);
        }
    }
    apply_perturbation(
        g,
        &EdgePerturbation {
            added,
            removed,
            strict_distinct: false,
        },
    )
    .unwrap()
    .graph
}

/// Vertices within two hops of the origin, a finite probe set that works on
/// infinite graphs too.
fn probe_set(g: &Graph) -> Vec<VertexId> {
    let mut out = vec![g.origin()];
    for n in g.neighbors(&g.origin()) {
        for m in g.neighbors(&n) {
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if !out.contains(&n) {
            out.push(n);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// y in neighbors(x) iff x in neighbors(y), overlay included.
    #[test]
    fn neighbor_symmetry(g in perturbed_graph()) {
        for x in probe_set(&g) {
            for y in g.neighbors(&x) {
                prop_assert!(
                    g.neighbors(&y).contains(&x),
                    "asymmetric edge {x} -> {y}"
                );
            }
        }
    }

    /// An empty perturbation is extensionally the identity on any probe set.
    #[test]
    fn empty_perturbation_is_identity(g in perturbed_graph()) {
        let same = apply_perturbation(&g, &EdgePerturbation::default()).unwrap().graph;
        for x in probe_set(&g) {
            prop_assert_eq!(same.neighbors(&x), g.neighbors(&x));
        }
    }

    /// Degree accounting at perturbation endpoints and elsewhere.
    #[test]
    fn degree_accounting(g in perturbed_graph()) {
        let p = g.perturbation();
        let base = {
            // rebuild the unperturbed base
            make_graph(g.base().clone()).unwrap()
        };
        for x in probe_set(&g) {
            let added_here = p.added.iter().filter(|(a, b)| *a == x || *b == x).count();
            let removed_here = p.removed.iter().filter(|(a, b)| *a == x || *b == x).count();
            prop_assert_eq!(
                g.degree(&x),
                base.degree(&x) + added_here - removed_here,
                "degree accounting failed at {}", x
            );
        }
    }

    /// Capped breadth-first distance satisfies the triangle inequality.
    #[test]
    fn distance_triangle_inequality(g in perturbed_graph(), seed in any::<u64>()) {
        let pool = probe_set(&g);
        let mut rng = contact_lab::rng::Rng::new(seed);
        let pick = |rng: &mut contact_lab::rng::Rng| {
            pool[rng.below(pool.len() as u64) as usize].clone()
        };
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let cap = 32;
        let d = |x: &VertexId, y: &VertexId| graph_distance(&g, x, y, cap).unwrap();
        if let (Distance::Exact(ab), Distance::Exact(bc), Distance::Exact(ac)) =
            (d(&a, &b), d(&b, &c), d(&a, &c))
        {
            prop_assert!(ac <= ab + bc, "triangle violated: {ab} + {bc} < {ac}");
        }
    }

    /// flip is involutive and changes exactly one site.
    #[test]
    fn flip_involution(bits in prop::collection::vec(any::<bool>(), 6), site in 0i64..6) {
        let eta = Configuration::from_vertices(
            bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| v(i as i64)),
        );
        let x = v(site);
        let once = flip(&eta, &x);
        prop_assert_eq!(flip(&once, &x), eta.clone());
        let delta = once.difference(&eta).len() + eta.difference(&once).len();
        prop_assert_eq!(delta, 1);
    }

    /// Additivity of the shared construction: the process from a union seed
    /// set is the union of the processes from the parts, exactly.
    #[test]
    fn construction_additivity(
        seed in any::<u64>(),
        a_sites in prop::collection::btree_set(0i64..20, 1..4),
        b_sites in prop::collection::btree_set(0i64..20, 1..4),
        lambda in 0.3f64..1.8,
    ) {
        let g = make_graph(BaseKind::Ring { len: 20 }).unwrap();
        let c = GraphicalConstruction::new(seed, lambda).unwrap();
        let p = ModelParams::new(lambda).unwrap();
        let a = Configuration::from_vertices(a_sites.iter().map(|&k| v(k)));
        let b = Configuration::from_vertices(b_sites.iter().map(|&k| v(k)));
        let run = |init: &Configuration| {
            dynamics::simulate(&g, &p, init, 4.0, dynamics::Driver::Construction(&c), &[2.0, 4.0], false)
                .unwrap()
        };
        let ra = run(&a);
        let rb = run(&b);
        let rab = run(&a.union(&b));
        prop_assert_eq!(rab.final_state, ra.final_state.union(&rb.final_state));
    }

    /// Monotonicity in the seed set under a shared construction.
    #[test]
    fn construction_monotonicity(
        seed in any::<u64>(),
        a_sites in prop::collection::btree_set(0i64..16, 1..3),
        extra in prop::collection::btree_set(0i64..16, 1..3),
        lambda in 0.3f64..1.8,
    ) {
        let g = make_graph(BaseKind::Ring { len: 16 }).unwrap();
        let c = GraphicalConstruction::new(seed, lambda).unwrap();
        let p = ModelParams::new(lambda).unwrap();
        let a = Configuration::from_vertices(a_sites.iter().map(|&k| v(k)));
        let b = a.union(&Configuration::from_vertices(extra.iter().map(|&k| v(k))));
        let run = |init: &Configuration| {
            dynamics::simulate(&g, &p, init, 3.0, dynamics::Driver::Construction(&c), &[3.0], false)
                .unwrap()
        };
        prop_assert!(run(&a).final_state.is_subset(&run(&b).final_state));
    }

    /// Pathwise ordering of coupled pairs from random ordered initial states.
    #[test]
    fn coupled_pairs_stay_ordered(
        seed in any::<u64>(),
        lower_sites in prop::collection::btree_set(0i64..18, 0..4),
        extra in prop::collection::btree_set(0i64..18, 1..4),
        lambda in 0.3f64..2.0,
    ) {
        let g = make_graph(BaseKind::Ring { len: 18 }).unwrap();
        let c = GraphicalConstruction::new(seed, lambda).unwrap();
        let p = ModelParams::new(lambda).unwrap();
        let lower = Configuration::from_vertices(lower_sites.iter().map(|&k| v(k)));
        let upper = lower.union(&Configuration::from_vertices(extra.iter().map(|&k| v(k))));
        let pair = coupling::CoupledPair::new(lower, upper, c).unwrap();
        // basic_couple asserts the ordering after every event internally
        let out = coupling::basic_couple(&g, &g, &p, &pair, 4.0, &[1.0, 4.0]).unwrap();
        prop_assert!(out.final_lower.is_subset(&out.final_upper));
    }
}
