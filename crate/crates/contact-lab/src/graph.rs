//! Base graphs and finite edge perturbations.
//!
//! Base families are connected vertex-transitive graphs exposed as lazy
//! neighbor oracles: the integer lattice `Z^d`, the degree-regular tree, the
//! ring `C_L`, and the torus `(Z_L)^d`. Infinite graphs never materialize a
//! vertex set; a simulation from a finite seed only ever touches the finite
//! region it visits. Two finite truncations are provided for dense starts:
//! the periodic torus for lattices (preserves transitivity) and the radius-r
//! ball for trees (boundary vertices simply lack outward edges; the radius is
//! a convergence knob).
//!
//! A [`Graph`] is a base plus a finite overlay of added and removed edges.
//! Graphs are immutable after construction and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::error::{Error, Result};
use crate::rng::fnv1a;

/// Canonical vertex encoding.
///
/// Lattices, rings and tori use integer coordinate tuples. Trees use the
/// root-to-vertex edge-label word of the degree-regular tree seen as the
/// Cayley graph of a free product of involutions: words over `{0..degree-1}`
/// in which consecutive labels differ. Toggling label `a` from vertex `w`
/// appends `a`, unless `w` already ends in `a`, in which case it strips it
/// (parent collapse). Both encodings are canonical: equal encodings denote
/// equal vertices, and the origin is `Coord([0; d])` resp. the empty word.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VertexId {
    Coord(Vec<i64>),
    Word(Vec<u8>),
}

impl VertexId {
    pub fn coord(c: impl Into<Vec<i64>>) -> Self {
        VertexId::Coord(c.into())
    }

    pub fn word(w: impl Into<Vec<u8>>) -> Self {
        VertexId::Word(w.into())
    }

    /// Compact single-token form safe for CSV cells: coordinates joined by
    /// semicolons, tree words prefixed with `w`.
    pub fn csv_token(&self) -> String {
        match self {
            VertexId::Coord(c) => c
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            VertexId::Word(w) => {
                let mut s = String::from("w");
                for (i, l) in w.iter().enumerate() {
                    if i > 0 {
                        s.push(';');
                    }
                    s.push_str(&l.to_string());
                }
                s
            }
        }
    }

    /// Stable 64-bit hash of the canonical encoding; used to key the
    /// per-site randomness streams of the graphical construction.
    pub fn canonical_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(1 + 8 * 4);
        match self {
            VertexId::Coord(c) => {
                bytes.push(0xC0);
                for &x in c {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
            VertexId::Word(w) => {
                bytes.push(0x77);
                bytes.extend_from_slice(w);
            }
        }
        fnv1a(&bytes)
    }
}

impl fmt::Debug for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexId::Coord(c) if c.len() == 1 => write!(f, "{}", c[0]),
            VertexId::Coord(c) => write!(f, "{c:?}"),
            VertexId::Word(w) => {
                write!(f, "w")?;
                for &l in w {
                    write!(f, "{l}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Base graph family. Caps on the size parameters keep arithmetic comfortably
/// inside `i64`/`usize` so the neighbor oracle and truncations cannot overflow
/// on hostile config input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BaseKind {
    /// Infinite integer lattice `Z^d`.
    Lattice { dim: u32 },
    /// Infinite degree-regular tree.
    Tree { degree: u32 },
    /// Cycle on `len` vertices.
    Ring { len: u64 },
    /// Periodic lattice `(Z_len)^d`.
    Torus { dim: u32, len: u64 },
    /// Ball of the given radius in the degree-regular tree, absorbing
    /// (edge-free) boundary. `radius = 0` is the single-vertex graph.
    TreeBall { degree: u32, radius: u32 },
}

pub const MAX_DIM: u32 = 8;
pub const MAX_DEGREE: u32 = 64;
pub const MAX_SIDE: u64 = 1 << 32;
pub const MAX_TREE_RADIUS: u32 = 48;

impl BaseKind {
    fn validate(&self) -> Result<()> {
        match *self {
            BaseKind::Lattice { dim } => {
                if !(1..=MAX_DIM).contains(&dim) {
                    return Err(Error::parameter("dim", format!("must be 1..={MAX_DIM}")));
                }
            }
            BaseKind::Tree { degree } => {
                if !(2..=MAX_DEGREE).contains(&degree) {
                    return Err(Error::parameter(
                        "degree",
                        format!("must be 2..={MAX_DEGREE}"),
                    ));
                }
            }
            BaseKind::Ring { len } => {
                if !(3..=MAX_SIDE).contains(&len) {
                    return Err(Error::parameter("L", format!("must be 3..={MAX_SIDE}")));
                }
            }
            BaseKind::Torus { dim, len } => {
                if !(1..=MAX_DIM).contains(&dim) {
                    return Err(Error::parameter("dim", format!("must be 1..={MAX_DIM}")));
                }
                if !(3..=MAX_SIDE).contains(&len) {
                    return Err(Error::parameter("L", format!("must be 3..={MAX_SIDE}")));
                }
                // keep the full vertex count enumerable
                if (len as u128).pow(dim) > (1u128 << 40) {
                    return Err(Error::parameter("L", "torus vertex count exceeds 2^40"));
                }
            }
            BaseKind::TreeBall { degree, radius } => {
                if !(2..=MAX_DEGREE).contains(&degree) {
                    return Err(Error::parameter(
                        "degree",
                        format!("must be 2..={MAX_DEGREE}"),
                    ));
                }
                if radius > MAX_TREE_RADIUS {
                    return Err(Error::parameter(
                        "radius",
                        format!("must be <= {MAX_TREE_RADIUS}"),
                    ));
                }
                if ball_size(degree, radius).is_none() {
                    return Err(Error::parameter(
                        "radius",
                        "tree ball exceeds 2^40 vertices",
                    ));
                }
            }
        }
        Ok(())
    }

    fn origin(&self) -> VertexId {
        match *self {
            BaseKind::Lattice { dim } => VertexId::Coord(vec![0; dim as usize]),
            BaseKind::Torus { dim, .. } => VertexId::Coord(vec![0; dim as usize]),
            BaseKind::Ring { .. } => VertexId::Coord(vec![0]),
            BaseKind::Tree { .. } | BaseKind::TreeBall { .. } => VertexId::Word(vec![]),
        }
    }

    /// Checks that `v` is a canonical vertex of this base graph.
    fn contains(&self, v: &VertexId) -> bool {
        match (self, v) {
            (BaseKind::Lattice { dim }, VertexId::Coord(c)) => c.len() == *dim as usize,
            (BaseKind::Ring { len }, VertexId::Coord(c)) => {
                c.len() == 1 && c[0] >= 0 && (c[0] as u64) < *len
            }
            (BaseKind::Torus { dim, len }, VertexId::Coord(c)) => {
                c.len() == *dim as usize && c.iter().all(|&x| x >= 0 && (x as u64) < *len)
            }
            (BaseKind::Tree { degree }, VertexId::Word(w)) => reduced_word(w, *degree),
            (BaseKind::TreeBall { degree, radius }, VertexId::Word(w)) => {
                w.len() <= *radius as usize && reduced_word(w, *degree)
            }
            _ => false,
        }
    }

    fn base_neighbors(&self, v: &VertexId) -> Vec<VertexId> {
        match (self, v) {
            (BaseKind::Lattice { .. }, VertexId::Coord(c)) => {
                let mut out = Vec::with_capacity(2 * c.len());
                for i in 0..c.len() {
                    for delta in [1i64, -1] {
                        let mut n = c.clone();
                        n[i] += delta;
                        out.push(VertexId::Coord(n));
                    }
                }
                out
            }
            (BaseKind::Ring { len }, VertexId::Coord(c)) => {
                let l = *len as i64;
                let k = c[0];
                if l == 3 {
                    // all three vertices mutually adjacent exactly once
                    return vec![
                        VertexId::Coord(vec![(k + 1) % l]),
                        VertexId::Coord(vec![(k + 2) % l]),
                    ];
                }
                vec![
                    VertexId::Coord(vec![(k + 1) % l]),
                    VertexId::Coord(vec![(k + l - 1) % l]),
                ]
            }
            (BaseKind::Torus { len, .. }, VertexId::Coord(c)) => {
                let l = *len as i64;
                let mut out = Vec::with_capacity(2 * c.len());
                for i in 0..c.len() {
                    for delta in [1i64, l - 1] {
                        let mut n = c.clone();
                        n[i] = (n[i] + delta) % l;
                        let n = VertexId::Coord(n);
                        if !out.contains(&n) && n != *v {
                            out.push(n);
                        }
                    }
                }
                out
            }
            (BaseKind::Tree { degree }, VertexId::Word(w)) => {
                (0..*degree as u8).map(|a| toggle_word(w, a)).collect()
            }
            (BaseKind::TreeBall { degree, radius }, VertexId::Word(w)) => (0..*degree as u8)
                .map(|a| toggle_word(w, a))
                .filter(|n| match n {
                    VertexId::Word(nw) => nw.len() <= *radius as usize,
                    _ => unreachable!(),
                })
                .collect(),
            _ => panic!("vertex encoding does not match base kind"),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(
            self,
            BaseKind::Ring { .. } | BaseKind::Torus { .. } | BaseKind::TreeBall { .. }
        )
    }

    fn vertex_count(&self) -> Option<u64> {
        match *self {
            BaseKind::Ring { len } => Some(len),
            BaseKind::Torus { dim, len } => Some((len as u128).pow(dim) as u64),
            BaseKind::TreeBall { degree, radius } => ball_size(degree, radius),
            _ => None,
        }
    }
}

fn reduced_word(w: &[u8], degree: u32) -> bool {
    w.iter().all(|&l| (l as u32) < degree) && w.windows(2).all(|p| p[0] != p[1])
}

fn toggle_word(w: &[u8], label: u8) -> VertexId {
    let mut n = w.to_vec();
    if n.last() == Some(&label) {
        n.pop();
    } else {
        n.push(label);
    }
    VertexId::Word(n)
}

fn ball_size(degree: u32, radius: u32) -> Option<u64> {
    // 1 + q * sum_{k=0}^{r-1} (q-1)^k
    let q = degree as u128;
    let mut total: u128 = 1;
    let mut shell: u128 = q;
    for _ in 0..radius {
        total += shell;
        if total > (1 << 40) {
            return None;
        }
        shell *= q - 1;
    }
    Some(total as u64)
}

/// Finite signed edge perturbation: edges to add and edges to remove.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgePerturbation {
    pub added: Vec<(VertexId, VertexId)>,
    pub removed: Vec<(VertexId, VertexId)>,
    /// When set, endpoints across the added edges must be pairwise distinct
    /// and a violation is an error instead of a warning.
    pub strict_distinct: bool,
}

impl EdgePerturbation {
    pub fn adding(added: Vec<(VertexId, VertexId)>) -> Self {
        EdgePerturbation {
            added,
            removed: Vec::new(),
            strict_distinct: false,
        }
    }

    pub fn removing(removed: Vec<(VertexId, VertexId)>) -> Self {
        EdgePerturbation {
            added: Vec::new(),
            removed,
            strict_distinct: false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

fn norm_edge(a: &VertexId, b: &VertexId) -> (VertexId, VertexId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// A base graph with a finite edge overlay applied. Immutable; cheap to clone.
#[derive(Clone, Debug)]
pub struct Graph {
    base: BaseKind,
    added: BTreeMap<VertexId, Vec<VertexId>>,
    removed: BTreeMap<VertexId, Vec<VertexId>>,
    added_edges: BTreeSet<(VertexId, VertexId)>,
    removed_edges: BTreeSet<(VertexId, VertexId)>,
}

/// Result of [`apply_perturbation`]: the perturbed graph plus any
/// non-fatal warnings raised during validation.
#[derive(Clone, Debug)]
pub struct PerturbationOutcome {
    pub graph: Graph,
    pub warnings: Vec<String>,
}

/// Builds a base graph with no perturbation.
pub fn make_graph(kind: BaseKind) -> Result<Graph> {
    kind.validate()?;
    Ok(Graph {
        base: kind,
        added: BTreeMap::new(),
        removed: BTreeMap::new(),
        added_edges: BTreeSet::new(),
        removed_edges: BTreeSet::new(),
    })
}

/// Overlays a finite edge perturbation on `g`, returning the perturbed graph.
/// `g` is unchanged. Perturbing an already-perturbed graph composes overlays:
/// adding back a previously removed edge cancels the removal and vice versa.
pub fn apply_perturbation(g: &Graph, p: &EdgePerturbation) -> Result<PerturbationOutcome> {
    let mut out = g.clone();
    let mut warnings = Vec::new();

    let mut seen = BTreeSet::new();
    for (a, b) in &p.added {
        if a == b {
            return Err(Error::validation(
                "added",
                format!("self-loop at {a}: loops are meaningless here"),
            ));
        }
        for v in [a, b] {
            if !out.base.contains(v) {
                return Err(Error::validation(
                    "added",
                    format!("{v} is not a vertex of the base graph"),
                ));
            }
        }
        let e = norm_edge(a, b);
        if !seen.insert(e.clone()) {
            return Err(Error::validation(
                "added",
                format!("edge ({a}, {b}) listed twice"),
            ));
        }
        if out.has_edge(a, b) {
            return Err(Error::validation(
                "added",
                format!("edge ({a}, {b}) is already present"),
            ));
        }
        if out.removed_edges.remove(&e) {
            // re-adding a removed edge restores the base edge
            detach(&mut out.removed, a, b);
        } else {
            out.added_edges.insert(e);
            attach(&mut out.added, a, b);
        }
    }

    let mut seen = BTreeSet::new();
    for (a, b) in &p.removed {
        if a == b {
            return Err(Error::validation("removed", format!("self-loop at {a}")));
        }
        for v in [a, b] {
            if !out.base.contains(v) {
                return Err(Error::validation(
                    "removed",
                    format!("{v} is not a vertex of the base graph"),
                ));
            }
        }
        let e = norm_edge(a, b);
        if !seen.insert(e.clone()) {
            return Err(Error::validation(
                "removed",
                format!("edge ({a}, {b}) listed twice"),
            ));
        }
        if !out.has_edge(a, b) {
            return Err(Error::validation(
                "removed",
                format!("edge ({a}, {b}) is not present"),
            ));
        }
        if out.added_edges.remove(&e) {
            detach(&mut out.added, a, b);
        } else {
            out.removed_edges.insert(e);
            attach(&mut out.removed, a, b);
        }
    }

    // The distinct-endpoint convention applies to the composed added set.
    let mut endpoints = BTreeMap::new();
    for (a, b) in &out.added_edges {
        for v in [a, b] {
            *endpoints.entry(v.clone()).or_insert(0u32) += 1;
        }
    }
    let repeated: Vec<_> = endpoints.iter().filter(|(_, &c)| c > 1).collect();
    if !repeated.is_empty() {
        let msg = format!(
            "added-edge endpoints are not pairwise distinct: {:?}",
            repeated.iter().map(|(v, _)| v).collect::<Vec<_>>()
        );
        if p.strict_distinct {
            return Err(Error::validation("added", msg));
        }
        warnings.push(msg);
    }

    Ok(PerturbationOutcome {
        graph: out,
        warnings,
    })
}

fn attach(map: &mut BTreeMap<VertexId, Vec<VertexId>>, a: &VertexId, b: &VertexId) {
    map.entry(a.clone()).or_default().push(b.clone());
    map.entry(b.clone()).or_default().push(a.clone());
}

fn detach(map: &mut BTreeMap<VertexId, Vec<VertexId>>, a: &VertexId, b: &VertexId) {
    if let Some(v) = map.get_mut(a) {
        v.retain(|x| x != b);
        if v.is_empty() {
            map.remove(a);
        }
    }
    if let Some(v) = map.get_mut(b) {
        v.retain(|x| x != a);
        if v.is_empty() {
            map.remove(b);
        }
    }
}

impl Graph {
    pub fn base(&self) -> &BaseKind {
        &self.base
    }

    pub fn origin(&self) -> VertexId {
        self.base.origin()
    }

    pub fn contains_vertex(&self, v: &VertexId) -> bool {
        self.base.contains(v)
    }

    pub fn is_finite(&self) -> bool {
        self.base.is_finite()
    }

    /// Composed overlay relative to the unperturbed base.
    pub fn perturbation(&self) -> EdgePerturbation {
        EdgePerturbation {
            added: self.added_edges.iter().cloned().collect(),
            removed: self.removed_edges.iter().cloned().collect(),
            strict_distinct: false,
        }
    }

    /// Neighbor oracle with the overlay applied. Order is deterministic:
    /// base neighbors first (family order), surviving removals, then added.
    pub fn neighbors(&self, v: &VertexId) -> Vec<VertexId> {
        let mut out = self.base.base_neighbors(v);
        if let Some(gone) = self.removed.get(v) {
            out.retain(|n| !gone.contains(n));
        }
        if let Some(extra) = self.added.get(v) {
            out.extend(extra.iter().cloned());
        }
        out
    }

    pub fn degree(&self, v: &VertexId) -> usize {
        self.neighbors(v).len()
    }

    pub fn has_edge(&self, a: &VertexId, b: &VertexId) -> bool {
        if a == b {
            return false;
        }
        let e = norm_edge(a, b);
        if self.added_edges.contains(&e) {
            return true;
        }
        if self.removed_edges.contains(&e) {
            return false;
        }
        self.base.base_neighbors(a).contains(b)
    }

    /// Largest degree any vertex of this graph can have; used by the
    /// rejection step of the event sampler.
    pub fn max_degree(&self) -> usize {
        let base = match self.base {
            BaseKind::Lattice { dim } | BaseKind::Torus { dim, .. } => 2 * dim as usize,
            BaseKind::Ring { .. } => 2,
            BaseKind::Tree { degree } | BaseKind::TreeBall { degree, .. } => degree as usize,
        };
        let mut max = base;
        for (v, extra) in &self.added {
            let d = self.base.base_neighbors(v).len() + extra.len()
                - self.removed.get(v).map_or(0, Vec::len);
            max = max.max(d);
        }
        max
    }

    pub fn vertex_count(&self) -> Option<u64> {
        self.base.vertex_count()
    }

    /// All vertices in canonical order. Finite graphs only.
    pub fn vertices(&self) -> Result<Vec<VertexId>> {
        match self.base {
            BaseKind::Ring { len } => {
                Ok((0..len as i64).map(|k| VertexId::Coord(vec![k])).collect())
            }
            BaseKind::Torus { dim, len } => {
                let d = dim as usize;
                let l = len as i64;
                let mut out = Vec::with_capacity((len as usize).pow(dim));
                let mut cur = vec![0i64; d];
                loop {
                    out.push(VertexId::Coord(cur.clone()));
                    let mut i = d;
                    loop {
                        if i == 0 {
                            return Ok(out);
                        }
                        i -= 1;
                        cur[i] += 1;
                        if cur[i] < l {
                            break;
                        }
                        cur[i] = 0;
                    }
                }
            }
            BaseKind::TreeBall { degree, radius } => {
                let mut out = vec![VertexId::Word(vec![])];
                let mut frontier = vec![Vec::<u8>::new()];
                for _ in 0..radius {
                    let mut next = Vec::new();
                    for w in &frontier {
                        for a in 0..degree as u8 {
                            if w.last() != Some(&a) {
                                let mut n = w.clone();
                                n.push(a);
                                next.push(n);
                            }
                        }
                    }
                    out.extend(next.iter().cloned().map(VertexId::Word));
                    frontier = next;
                }
                out.sort();
                Ok(out)
            }
            _ => Err(Error::parameter(
                "graph",
                "vertex enumeration requires a finite graph",
            )),
        }
    }
}

/// Result of a capped breadth-first distance query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Exact(u64),
    ExceedsCap,
}

impl Distance {
    pub fn exact(self) -> Option<u64> {
        match self {
            Distance::Exact(d) => Some(d),
            Distance::ExceedsCap => None,
        }
    }
}

/// Shortest-path distance between `a` and `b` in `g` (overlay included),
/// by breadth-first search bounded at `cap` hops.
pub fn graph_distance(g: &Graph, a: &VertexId, b: &VertexId, cap: u32) -> Result<Distance> {
    for (name, v) in [("a", a), ("b", b)] {
        if !g.contains_vertex(v) {
            return Err(Error::validation(name, format!("{v} is not a vertex")));
        }
    }
    if a == b {
        return Ok(Distance::Exact(0));
    }
    let mut seen = BTreeSet::new();
    seen.insert(a.clone());
    let mut queue = VecDeque::new();
    queue.push_back((a.clone(), 0u64));
    while let Some((v, d)) = queue.pop_front() {
        if d >= cap as u64 {
            continue;
        }
        for n in g.neighbors(&v) {
            if n == *b {
                return Ok(Distance::Exact(d + 1));
            }
            if seen.insert(n.clone()) {
                queue.push_back((n, d + 1));
            }
        }
    }
    Ok(Distance::ExceedsCap)
}

/// Maps an infinite graph onto its canonical finite truncation, carrying the
/// overlay along: lattices wrap onto the periodic torus (coordinates mod L),
/// trees restrict to the radius-`size` ball. Finite graphs pass through
/// unchanged. Overlay endpoints that collide or fall outside the truncation
/// are validation errors.
pub fn finite_truncation(g: &Graph, size: u64) -> Result<Graph> {
    if g.is_finite() {
        return Ok(g.clone());
    }
    type VertexMap = Box<dyn Fn(&VertexId) -> Result<VertexId>>;
    let (base, map): (BaseKind, VertexMap) = match g.base {
        BaseKind::Lattice { dim } => {
            let kind = if dim == 1 {
                BaseKind::Ring { len: size }
            } else {
                BaseKind::Torus { dim, len: size }
            };
            let l = size as i64;
            (
                kind,
                Box::new(move |v: &VertexId| match v {
                    VertexId::Coord(c) => Ok(VertexId::Coord(
                        c.iter().map(|&x| x.rem_euclid(l)).collect(),
                    )),
                    _ => unreachable!(),
                }),
            )
        }
        BaseKind::Tree { degree } => {
            if size > MAX_TREE_RADIUS as u64 {
                return Err(Error::parameter(
                    "truncation",
                    format!("tree radius must be <= {MAX_TREE_RADIUS}"),
                ));
            }
            let radius = size as u32;
            (
                BaseKind::TreeBall { degree, radius },
                Box::new(move |v: &VertexId| match v {
                    VertexId::Word(w) => {
                        if w.len() <= radius as usize {
                            Ok(v.clone())
                        } else {
                            Err(Error::validation(
                                "truncation",
                                format!("{v} lies outside the radius-{radius} ball"),
                            ))
                        }
                    }
                    _ => unreachable!(),
                }),
            )
        }
        _ => unreachable!(),
    };
    let trunc = make_graph(base)?;
    let overlay = g.perturbation();
    let map_pairs = |pairs: &[(VertexId, VertexId)]| -> Result<EdgeList> {
        pairs
            .iter()
            .map(|(a, b)| {
                let (ma, mb) = (map(a)?, map(b)?);
                if ma == mb {
                    return Err(Error::validation(
                        "truncation",
                        format!("edge ({a}, {b}) collapses to a loop under wrapping"),
                    ));
                }
                Ok((ma, mb))
            })
            .collect()
    };
    let p = EdgePerturbation {
        added: map_pairs(&overlay.added)?,
        removed: map_pairs(&overlay.removed)?,
        strict_distinct: false,
    };
    Ok(apply_perturbation(&trunc, &p)?.graph)
}

/// Whether every edge of `a` is an edge of `b`. Finite graphs compare full
/// edge sets; infinite graphs must share a base kind and are compared
/// through their overlays.
pub fn is_edge_subgraph(a: &Graph, b: &Graph) -> Result<bool> {
    if a.is_finite() && b.is_finite() {
        let (_, removed) = edge_diff(a, b)?;
        return Ok(removed.is_empty());
    }
    if a.base != b.base {
        return Err(Error::validation(
            "graphs",
            "infinite graphs must share a base kind to compare edges",
        ));
    }
    // every base edge kept by `a` must be kept by `b`
    for e in &b.removed_edges {
        if !a.removed_edges.contains(e) {
            return Ok(false);
        }
    }
    // every extra edge of `a` must exist in `b`
    for (x, y) in &a.added_edges {
        if !b.has_edge(x, y) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A list of undirected edges as vertex pairs.
pub type EdgeList = Vec<(VertexId, VertexId)>;

/// Edge difference between two finite graphs on the same vertex set:
/// `(added, removed)` such that `b = a + added - removed`.
pub fn edge_diff(a: &Graph, b: &Graph) -> Result<(EdgeList, EdgeList)> {
    let va = a.vertices()?;
    let vb = b.vertices()?;
    if va != vb {
        return Err(Error::validation(
            "graphs",
            "edge_diff requires identical vertex sets",
        ));
    }
    let collect = |g: &Graph| -> BTreeSet<(VertexId, VertexId)> {
        let mut edges = BTreeSet::new();
        for v in &va {
            for n in g.neighbors(v) {
                edges.insert(norm_edge(v, &n));
            }
        }
        edges
    };
    let ea = collect(a);
    let eb = collect(b);
    let added = eb.difference(&ea).cloned().collect();
    let removed = ea.difference(&eb).cloned().collect();
    Ok((added, removed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(len: u64) -> Graph {
        make_graph(BaseKind::Ring { len }).unwrap()
    }

    fn v(k: i64) -> VertexId {
        VertexId::Coord(vec![k])
    }

    #[test]
    fn ring4_neighbors() {
        let g = ring(4);
        let mut n = g.neighbors(&v(0));
        n.sort();
        assert_eq!(n, vec![v(1), v(3)]);
    }

    #[test]
    fn lattice1_neighbors() {
        let g = make_graph(BaseKind::Lattice { dim: 1 }).unwrap();
        let mut n = g.neighbors(&v(0));
        n.sort();
        assert_eq!(n, vec![v(-1), v(1)]);
    }

    #[test]
    fn tree3_regular() {
        let g = make_graph(BaseKind::Tree { degree: 3 }).unwrap();
        assert_eq!(g.neighbors(&g.origin()).len(), 3);
        let w = VertexId::word(vec![0, 1]);
        let n = g.neighbors(&w);
        assert_eq!(n.len(), 3);
        assert!(n.contains(&VertexId::word(vec![0])));
        assert!(n.contains(&VertexId::word(vec![0, 1, 0])));
        assert!(n.contains(&VertexId::word(vec![0, 1, 2])));
    }

    #[test]
    fn ring6_chord() {
        let g = ring(6);
        let p = EdgePerturbation::adding(vec![(v(0), v(3))]);
        let out = apply_perturbation(&g, &p).unwrap();
        assert!(out.warnings.is_empty());
        let mut n = out.graph.neighbors(&v(0));
        n.sort();
        assert_eq!(n, vec![v(1), v(3), v(5)]);
        // original untouched
        assert_eq!(g.neighbors(&v(0)).len(), 2);
    }

    #[test]
    fn lattice_removed_edge() {
        let g = make_graph(BaseKind::Lattice { dim: 1 }).unwrap();
        let out = apply_perturbation(&g, &EdgePerturbation::removing(vec![(v(0), v(1))])).unwrap();
        assert_eq!(out.graph.neighbors(&v(0)), vec![v(-1)]);
        assert_eq!(out.graph.neighbors(&v(1)), vec![v(2)]);
    }

    #[test]
    fn empty_perturbation_identity() {
        let g = ring(8);
        let out = apply_perturbation(&g, &EdgePerturbation::default()).unwrap();
        for k in 0..8 {
            assert_eq!(out.graph.neighbors(&v(k)), g.neighbors(&v(k)));
        }
    }

    #[test]
    fn rejects_duplicate_add_and_absent_removal() {
        let g = ring(6);
        let dup = EdgePerturbation::adding(vec![(v(0), v(3)), (v(3), v(0))]);
        assert!(apply_perturbation(&g, &dup).is_err());
        let existing = EdgePerturbation::adding(vec![(v(0), v(1))]);
        assert!(apply_perturbation(&g, &existing).is_err());
        let absent = EdgePerturbation::removing(vec![(v(0), v(3))]);
        assert!(apply_perturbation(&g, &absent).is_err());
        let selfloop = EdgePerturbation::adding(vec![(v(2), v(2))]);
        assert!(apply_perturbation(&g, &selfloop).is_err());
    }

    #[test]
    fn distinct_endpoint_warning_vs_strict() {
        let g = ring(8);
        let mut p = EdgePerturbation::adding(vec![(v(0), v(3)), (v(0), v(5))]);
        let out = apply_perturbation(&g, &p).unwrap();
        assert_eq!(out.warnings.len(), 1);
        p.strict_distinct = true;
        assert!(apply_perturbation(&g, &p).is_err());
    }

    #[test]
    fn add_then_remove_cancels() {
        let g = ring(6);
        let g2 = apply_perturbation(&g, &EdgePerturbation::adding(vec![(v(0), v(3))]))
            .unwrap()
            .graph;
        let g3 = apply_perturbation(&g2, &EdgePerturbation::removing(vec![(v(0), v(3))]))
            .unwrap()
            .graph;
        assert!(g3.perturbation().is_empty());
        for k in 0..6 {
            assert_eq!(g3.neighbors(&v(k)), g.neighbors(&v(k)));
        }
    }

    #[test]
    fn distances() {
        let g = ring(8);
        assert_eq!(
            graph_distance(&g, &v(0), &v(0), 10).unwrap(),
            Distance::Exact(0)
        );
        assert_eq!(
            graph_distance(&g, &v(0), &v(3), 10).unwrap(),
            Distance::Exact(3)
        );
        let chord = apply_perturbation(&g, &EdgePerturbation::adding(vec![(v(0), v(4))]))
            .unwrap()
            .graph;
        assert_eq!(
            graph_distance(&chord, &v(0), &v(4), 10).unwrap(),
            Distance::Exact(1)
        );
        let g2 = make_graph(BaseKind::Lattice { dim: 2 }).unwrap();
        assert_eq!(
            graph_distance(
                &g2,
                &VertexId::coord(vec![0, 0]),
                &VertexId::coord(vec![2, 3]),
                16
            )
            .unwrap(),
            Distance::Exact(5)
        );
        assert_eq!(
            graph_distance(
                &g2,
                &VertexId::coord(vec![0, 0]),
                &VertexId::coord(vec![9, 9]),
                4
            )
            .unwrap(),
            Distance::ExceedsCap
        );
    }

    #[test]
    fn degree_accounting() {
        let g = ring(10);
        let p = EdgePerturbation {
            added: vec![(v(0), v(5)), (v(2), v(7))],
            removed: vec![(v(0), v(1))],
            strict_distinct: false,
        };
        let gp = apply_perturbation(&g, &p).unwrap().graph;
        assert_eq!(gp.degree(&v(0)), 2 + 1 - 1);
        assert_eq!(gp.degree(&v(5)), 3);
        assert_eq!(gp.degree(&v(1)), 1);
        assert_eq!(gp.degree(&v(3)), 2);
        assert_eq!(gp.max_degree(), 3);
    }

    #[test]
    fn tree_ball_counts() {
        let g = make_graph(BaseKind::TreeBall {
            degree: 3,
            radius: 2,
        })
        .unwrap();
        let vs = g.vertices().unwrap();
        assert_eq!(vs.len(), 1 + 3 + 6);
        assert_eq!(g.vertex_count(), Some(10));
        // boundary vertices have only their parent edge
        assert_eq!(g.degree(&VertexId::word(vec![0, 1])), 1);
        assert_eq!(g.degree(&g.origin()), 3);
        // radius 0 is the single-vertex graph
        let single = make_graph(BaseKind::TreeBall {
            degree: 3,
            radius: 0,
        })
        .unwrap();
        assert_eq!(single.vertices().unwrap().len(), 1);
        assert!(single.neighbors(&single.origin()).is_empty());
    }

    #[test]
    fn truncation_wraps_overlay() {
        let g = make_graph(BaseKind::Lattice { dim: 1 }).unwrap();
        let gp = apply_perturbation(&g, &EdgePerturbation::adding(vec![(v(-1), v(7))]))
            .unwrap()
            .graph;
        let t = finite_truncation(&gp, 10).unwrap();
        assert!(t.has_edge(&v(9), &v(7)));
        assert_eq!(t.vertex_count(), Some(10));
    }

    #[test]
    fn edge_diff_roundtrip() {
        let g = ring(6);
        let p = EdgePerturbation {
            added: vec![(v(0), v(3))],
            removed: vec![(v(1), v(2))],
            strict_distinct: false,
        };
        let gp = apply_perturbation(&g, &p).unwrap().graph;
        let (added, removed) = edge_diff(&g, &gp).unwrap();
        assert_eq!(added, vec![(v(0), v(3))]);
        assert_eq!(removed, vec![(v(1), v(2))]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_graph(BaseKind::Ring { len: 2 }).is_err());
        assert!(make_graph(BaseKind::Lattice { dim: 0 }).is_err());
        assert!(make_graph(BaseKind::Tree { degree: 1 }).is_err());
        assert!(make_graph(BaseKind::Torus { dim: 1, len: 2 }).is_err());
    }
}
