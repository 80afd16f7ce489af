//! Fuzz vertex-spec resolution against every base family, plus the
//! canonical hash of whatever resolves.

#![no_main]

use libfuzzer_sys::fuzz_target;

use contact_lab::config::VertexSpec;
use contact_lab::graph::BaseKind;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = serde_json::from_str::<VertexSpec>(text) else {
        return;
    };
    let bases = [
        BaseKind::Lattice { dim: 2 },
        BaseKind::Ring { len: 16 },
        BaseKind::Torus { dim: 2, len: 5 },
        BaseKind::Tree { degree: 3 },
        BaseKind::TreeBall {
            degree: 3,
            radius: 4,
        },
    ];
    for base in bases {
        if let Ok(v) = spec.resolve(&base, "fuzz") {
            let _ = v.canonical_hash();
            let _ = v.csv_token();
        }
    }
});
