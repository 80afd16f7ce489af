//! Fuzz the graph section: parse, build, and probe the neighbor oracle and
//! the capped distance search. No input may panic or hang.

#![no_main]

use libfuzzer_sys::fuzz_target;

use contact_lab::config::GraphSpec;
use contact_lab::graph::graph_distance;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = serde_json::from_str::<GraphSpec>(text) else {
        return;
    };
    let Ok((g, _warnings)) = spec.build() else {
        return;
    };
    // probe the oracle around the origin
    let o = g.origin();
    let mut frontier = vec![o.clone()];
    for _ in 0..2 {
        let mut next = Vec::new();
        for x in &frontier {
            for y in g.neighbors(x) {
                assert!(
                    g.neighbors(&y).contains(x),
                    "asymmetric adjacency from fuzz input"
                );
                next.push(y);
            }
        }
        frontier = next;
        frontier.truncate(16);
    }
    if let Some(y) = frontier.first() {
        let _ = graph_distance(&g, &o, y, 2);
    }
    // enumeration only on comfortably small graphs
    if let Some(n) = g.vertex_count() {
        if n <= 4096 {
            let vs = g.vertices().expect("finite graph enumerates");
            assert_eq!(vs.len() as u64, n);
        }
    }
});
