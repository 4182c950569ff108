//! Longer chains: reduction bounds and coupling-topology controllability.
//!
//! A relaxation-free subspace is state-to-state controllable exactly when
//! every pair of its levels is joined by a path that never visits two
//! consecutive decaying levels. Admissible paths decompose into type-I
//! segments (relaxation-free links) and type-II segments (one decaying
//! intermediate between two relaxation-free levels, traversed losslessly in
//! the adiabatic limit).
//!
//! For chains of consecutive decaying intermediates, merging the trailing
//! levels one at a time shows the transfer efficiency is monotone
//! non-increasing in the run length, so any run of two or more inherits the
//! four-level ceiling `sqrt(1 + xi^2) - xi`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ChainSystem;
use crate::{Error, Result};

/// A level in a coupling graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphNode {
    pub id: u32,
    /// Non-negative decay rate; controllability only reads `rate > 0`.
    #[serde(default)]
    pub decay_rate: f64,
}

/// Undirected coupling topology with a distinguished relaxation-free
/// subspace `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingGraph {
    pub nodes: Vec<GraphNode>,
    /// Unordered level pairs with an available control coupling.
    pub edges: Vec<(u32, u32)>,
    /// The relaxation-free levels between which transfer is sought.
    pub subspace: Vec<u32>,
}

impl CouplingGraph {
    pub fn new(nodes: Vec<GraphNode>, edges: Vec<(u32, u32)>, subspace: Vec<u32>) -> Result<Self> {
        let g = CouplingGraph {
            nodes,
            edges,
            subspace,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for n in &self.nodes {
            if !n.decay_rate.is_finite() || n.decay_rate < 0.0 {
                return Err(Error::contract(format!(
                    "node {} has invalid decay rate {}",
                    n.id, n.decay_rate
                )));
            }
            if !seen.insert(n.id) {
                return Err(Error::contract(format!("duplicate node id {}", n.id)));
            }
        }
        let mut edge_set = std::collections::BTreeSet::new();
        for &(a, b) in &self.edges {
            if a == b {
                return Err(Error::contract(format!("self-loop on node {a}")));
            }
            if !seen.contains(&a) || !seen.contains(&b) {
                return Err(Error::contract(format!(
                    "edge ({a}, {b}) references unknown node"
                )));
            }
            if !edge_set.insert((a.min(b), a.max(b))) {
                return Err(Error::contract(format!("duplicate edge ({a}, {b})")));
            }
        }
        for &s in &self.subspace {
            if !seen.contains(&s) {
                return Err(Error::contract(format!("subspace node {s} unknown")));
            }
            if self.decays(s) {
                return Err(Error::contract(format!(
                    "subspace node {s} is flagged decaying"
                )));
            }
        }
        Ok(())
    }

    pub fn decays(&self, id: u32) -> bool {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .is_some_and(|n| n.decay_rate > 0.0)
    }

    fn index_of(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Adjacency lists over node indices, sorted by neighbour id.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            let (ia, ib) = (self.index_of(a).unwrap(), self.index_of(b).unwrap());
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        for list in &mut adj {
            list.sort_by_key(|&i| self.nodes[i].id);
        }
        adj
    }
}

/// Segment kinds of an admissible path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentType {
    /// A direct link between relaxation-free levels.
    TypeI,
    /// Two relaxation-free levels joined through one decaying intermediate.
    TypeII,
}

/// An admissible path: never two consecutive decaying nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWitness {
    pub nodes: Vec<u32>,
    pub segments: Vec<SegmentType>,
}

impl PathWitness {
    fn from_nodes(g: &CouplingGraph, nodes: Vec<u32>) -> Self {
        let mut segments = Vec::new();
        let mut i = 0;
        while i + 1 < nodes.len() {
            if g.decays(nodes[i + 1]) {
                segments.push(SegmentType::TypeII);
                i += 2;
            } else {
                segments.push(SegmentType::TypeI);
                i += 1;
            }
        }
        PathWitness { nodes, segments }
    }
}

/// Outcome of the controllability decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Controllability {
    /// Every subspace pair is admissibly connected; one shortest witness per
    /// pair (ties broken towards lexicographically smaller node sequences).
    Controllable(BTreeMap<(u32, u32), PathWitness>),
    /// The first subspace pair (in sorted order) with no admissible path.
    NotControllable { counterexample: (u32, u32) },
}

impl Controllability {
    pub fn verdict(&self) -> bool {
        matches!(self, Controllability::Controllable(_))
    }
}

/// Shortest admissible path from `source` to `target`, or `None`.
///
/// Search runs on the product state (node, previous-node-decaying?): a move
/// onto a decaying node is pruned when the previous node also decayed.
/// Distances come from one backward BFS; the witness is then grown greedily
/// towards the smallest next node id, which yields the lexicographically
/// smallest shortest path. `O(V + E)` per query.
pub fn admissible_path_search(
    g: &CouplingGraph,
    source: u32,
    target: u32,
) -> Result<Option<PathWitness>> {
    g.validate()?;
    if !g.subspace.contains(&source) || !g.subspace.contains(&target) {
        return Err(Error::contract("source and target must lie in the subspace"));
    }
    if source == target {
        return Ok(Some(PathWitness::from_nodes(g, vec![source])));
    }
    let n = g.nodes.len();
    let adj = g.adjacency();
    let src = g.index_of(source).unwrap();
    let tgt = g.index_of(target).unwrap();
    let decay: Vec<bool> = g.nodes.iter().map(|nd| nd.decay_rate > 0.0).collect();

    // backward BFS on the product graph (node, node-decays flag): moving
    // u -> v is forbidden iff both decay
    let mut dist = vec![[usize::MAX; 2]; n];
    let mut queue = std::collections::VecDeque::new();
    let tgt_flag = usize::from(decay[tgt]);
    dist[tgt][tgt_flag] = 0;
    queue.push_back((tgt, tgt_flag));
    while let Some((v, f)) = queue.pop_front() {
        for &u in &adj[v] {
            if decay[u] && f == 1 {
                continue;
            }
            let fu = usize::from(decay[u]);
            if dist[u][fu] == usize::MAX {
                dist[u][fu] = dist[v][f] + 1;
                queue.push_back((u, fu));
            }
        }
    }

    let start_flag = usize::from(decay[src]);
    if dist[src][start_flag] == usize::MAX {
        return Ok(None);
    }

    // greedy forward walk: smallest node id consistent with a shortest
    // admissible completion
    let mut nodes = vec![g.nodes[src].id];
    let mut cur = src;
    let mut remaining = dist[src][start_flag];
    while cur != tgt {
        let cur_decays = decay[cur];
        let mut next = None;
        for &w in &adj[cur] {
            if cur_decays && decay[w] {
                continue;
            }
            let fw = usize::from(decay[w]);
            if dist[w][fw] != usize::MAX && dist[w][fw] + 1 == remaining {
                next = Some(w);
                break; // adjacency sorted by id: first hit is smallest
            }
        }
        let w = next.ok_or_else(|| Error::numerical("path reconstruction lost the target"))?;
        nodes.push(g.nodes[w].id);
        cur = w;
        remaining -= 1;
    }
    Ok(Some(PathWitness::from_nodes(g, nodes)))
}

/// Decide controllability of the relaxation-free subspace.
pub fn is_controllable(g: &CouplingGraph) -> Result<Controllability> {
    g.validate()?;
    if g.subspace.is_empty() {
        return Err(Error::contract("subspace must be non-empty"));
    }
    let mut ids = g.subspace.clone();
    ids.sort_unstable();
    ids.dedup();
    let mut witnesses = BTreeMap::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            match admissible_path_search(g, ids[i], ids[j])? {
                Some(w) => {
                    witnesses.insert((ids[i], ids[j]), w);
                }
                None => {
                    return Ok(Controllability::NotControllable {
                        counterexample: (ids[i], ids[j]),
                    });
                }
            }
        }
    }
    Ok(Controllability::Controllable(witnesses))
}

/// Merge of the two trailing levels of a chain.
///
/// For a chain ending `... -(omega)- d -(omega')- e` with `d` decaying and
/// `e` decay-free, the amplitudes combine into `y = sqrt(x_d^2 + x_e^2)`
/// with mixing angle `tan(theta) = x_e/x_d`; the merged level couples at
/// `omega cos(theta)` and decays at `k cos^2(theta)`. Since `y >= x_e`, any
/// transfer efficiency achieved on the original chain lower-bounds the
/// reduced one, which is what makes repeated reduction an upper-bound chain
/// down to the four-level solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainReduction {
    /// The reduced chain (one level shorter). Its static decay table is the
    /// `theta = pi/2` instance of the merged level (decay-free); the actual
    /// merged-level decay is angle-dependent via
    /// [`ChainReduction::effective_decay`].
    pub reduced: ChainSystem,
    /// Indices (in the original chain) of the merged levels.
    pub merged_levels: (usize, usize),
    /// Decay rate of the absorbed next-to-last level.
    pub merged_decay_base: f64,
}

impl ChainReduction {
    /// Decay rate of the merged level at mixing angle `theta`.
    pub fn effective_decay(&self, theta: f64) -> f64 {
        let c = theta.cos();
        self.merged_decay_base * c * c
    }

    /// Coupling into the merged level at mixing angle `theta`.
    pub fn effective_coupling(&self, omega: f64, theta: f64) -> f64 {
        omega * theta.cos()
    }
}

/// Merge the trailing decay-free level into its decaying neighbour.
pub fn reduce_chain(sys: &ChainSystem) -> Result<ChainReduction> {
    let n = sys.n_levels();
    if n < 4 {
        return Err(Error::contract("chain reduction needs at least 4 levels"));
    }
    let rates = sys.decay_rates();
    if rates[n - 1] != 0.0 {
        return Err(Error::contract("last level must be decay-free"));
    }
    if rates[n - 2] <= 0.0 {
        return Err(Error::contract("second-to-last level must decay"));
    }
    let mut reduced_rates = rates[..n - 1].to_vec();
    let merged_decay_base = reduced_rates[n - 2];
    reduced_rates[n - 2] = 0.0; // theta = pi/2 instance; see effective_decay
    let reduced = ChainSystem::new(
        reduced_rates,
        sys.coupling_bound(),
        sys.bounded_control_index().min(n - 3),
    )?;
    Ok(ChainReduction {
        reduced,
        merged_levels: (n - 2, n - 1),
        merged_decay_base,
    })
}

/// Infinite-horizon efficiency ceiling for a chain whose longest run of
/// consecutive decaying intermediates has the given length.
///
/// Run length 0 is a direct link (unit efficiency); length 1 is the
/// three-level case, perfect in the adiabatic limit; length 2 or more is
/// capped by the four-level asymptote, inherited by every longer run
/// through the reduction chain.
pub fn chain_efficiency_upper_bound(n_decaying_run: usize, xi: f64) -> Result<f64> {
    if !(xi >= 0.0) {
        return Err(Error::contract("xi must be non-negative"));
    }
    match n_decaying_run {
        0 | 1 => Ok(1.0),
        _ => crate::four_level::asymptotic_efficiency(xi),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u32, decays: bool) -> GraphNode {
        GraphNode {
            id,
            decay_rate: if decays { 1.0 } else { 0.0 },
        }
    }

    /// Alternating chain 1-a-2-b-3-c-4 with decaying a, b, c (ids 5, 6, 7):
    /// every subspace pair is admissibly connected.
    fn fig4a() -> CouplingGraph {
        CouplingGraph::new(
            vec![
                node(1, false),
                node(2, false),
                node(3, false),
                node(4, false),
                node(5, true),
                node(6, true),
                node(7, true),
            ],
            vec![(1, 5), (5, 2), (2, 6), (6, 3), (3, 7), (7, 4)],
            vec![1, 2, 3, 4],
        )
        .unwrap()
    }

    /// Same subspace but level 4 is reachable only through a run of three
    /// decaying nodes (ids 7, 8, 9): |1> and |4> cannot be connected.
    fn fig4b() -> CouplingGraph {
        CouplingGraph::new(
            vec![
                node(1, false),
                node(2, false),
                node(3, false),
                node(4, false),
                node(5, true),
                node(6, true),
                node(7, true),
                node(8, true),
                node(9, true),
            ],
            vec![
                (1, 5),
                (5, 2),
                (2, 6),
                (6, 3),
                (3, 7),
                (7, 8),
                (8, 9),
                (9, 4),
            ],
            vec![1, 2, 3, 4],
        )
        .unwrap()
    }

    #[test]
    fn lambda_system_path() {
        // 1-2-3 with only 2 decaying: one type-II segment
        let g = CouplingGraph::new(
            vec![node(1, false), node(2, true), node(3, false)],
            vec![(1, 2), (2, 3)],
            vec![1, 3],
        )
        .unwrap();
        let w = admissible_path_search(&g, 1, 3).unwrap().unwrap();
        assert_eq!(w.nodes, vec![1, 2, 3]);
        assert_eq!(w.segments, vec![SegmentType::TypeII]);
    }

    #[test]
    fn two_consecutive_decaying_block_transfer() {
        // 1-2-3-4 with 2, 3 decaying: no admissible path
        let g = CouplingGraph::new(
            vec![node(1, false), node(2, true), node(3, true), node(4, false)],
            vec![(1, 2), (2, 3), (3, 4)],
            vec![1, 4],
        )
        .unwrap();
        assert_eq!(admissible_path_search(&g, 1, 4).unwrap(), None);
        match is_controllable(&g).unwrap() {
            Controllability::NotControllable { counterexample } => {
                assert_eq!(counterexample, (1, 4));
            }
            _ => panic!("expected not controllable"),
        }
    }

    #[test]
    fn trivial_paths() {
        let g = CouplingGraph::new(
            vec![node(1, false), node(2, false)],
            vec![(1, 2)],
            vec![1, 2],
        )
        .unwrap();
        // source = target
        let w = admissible_path_search(&g, 1, 1).unwrap().unwrap();
        assert_eq!(w.nodes, vec![1]);
        assert!(w.segments.is_empty());
        // direct edge, no decay: type I
        let w = admissible_path_search(&g, 1, 2).unwrap().unwrap();
        assert_eq!(w.segments, vec![SegmentType::TypeI]);
        assert!(is_controllable(&g).unwrap().verdict());
    }

    #[test]
    fn alternating_chain_is_controllable() {
        match is_controllable(&fig4a()).unwrap() {
            Controllability::Controllable(witnesses) => {
                assert_eq!(witnesses.len(), 6);
                let w14 = &witnesses[&(1, 4)];
                assert_eq!(w14.nodes, vec![1, 5, 2, 6, 3, 7, 4]);
                assert_eq!(
                    w14.segments,
                    vec![SegmentType::TypeII, SegmentType::TypeII, SegmentType::TypeII]
                );
            }
            other => panic!("expected controllable, got {other:?}"),
        }
    }

    #[test]
    fn decaying_run_breaks_controllability() {
        match is_controllable(&fig4b()).unwrap() {
            Controllability::NotControllable { counterexample } => {
                // (1,2), (1,3), (2,3) are fine; (1,4) is the first failure
                assert_eq!(counterexample, (1, 4));
            }
            other => panic!("expected not controllable, got {other:?}"),
        }
        assert!(admissible_path_search(&fig4b(), 1, 3).unwrap().is_some());
    }

    #[test]
    fn witnesses_never_chain_decaying_nodes() {
        for g in [fig4a(), fig4b()] {
            for &s in &g.subspace {
                for &t in &g.subspace {
                    if let Some(w) = admissible_path_search(&g, s, t).unwrap() {
                        for pair in w.nodes.windows(2) {
                            assert!(!(g.decays(pair[0]) && g.decays(pair[1])));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn witness_prefers_lexicographically_smaller_path() {
        // two equal-length admissible routes 1-2-4 and 1-3-4: pick via 2
        let g = CouplingGraph::new(
            vec![node(1, false), node(2, false), node(3, false), node(4, false)],
            vec![(1, 3), (3, 4), (1, 2), (2, 4)],
            vec![1, 4],
        )
        .unwrap();
        let w = admissible_path_search(&g, 1, 4).unwrap().unwrap();
        assert_eq!(w.nodes, vec![1, 2, 4]);
        // and shorter beats smaller: add a direct edge
        let g2 = CouplingGraph::new(
            vec![node(1, false), node(2, false), node(3, false), node(4, false)],
            vec![(1, 3), (3, 4), (1, 2), (2, 4), (1, 4)],
            vec![1, 4],
        )
        .unwrap();
        let w = admissible_path_search(&g2, 1, 4).unwrap().unwrap();
        assert_eq!(w.nodes, vec![1, 4]);
    }

    #[test]
    fn subspace_validation() {
        let g = CouplingGraph::new(
            vec![node(1, false), node(2, true)],
            vec![(1, 2)],
            vec![1, 2],
        );
        assert!(g.is_err(), "decaying subspace node must be rejected");
        let g = CouplingGraph::new(vec![node(1, false)], vec![(1, 1)], vec![1]);
        assert!(g.is_err(), "self-loop must be rejected");
        let g = CouplingGraph::new(
            vec![node(1, false), node(2, false)],
            vec![(1, 2), (2, 1)],
            vec![1],
        );
        assert!(g.is_err(), "duplicate edge must be rejected");
    }

    #[test]
    fn edge_addition_is_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let n = rng.random_range(3..=9u32);
            let nodes: Vec<GraphNode> = (1..=n)
                .map(|id| node(id, id > 2 && rng.random_bool(0.4)))
                .collect();
            let mut edges = Vec::new();
            for a in 1..=n {
                for b in a + 1..=n {
                    if rng.random_bool(0.3) {
                        edges.push((a, b));
                    }
                }
            }
            let subspace = vec![1, 2];
            let Ok(g) = CouplingGraph::new(nodes.clone(), edges.clone(), subspace.clone()) else {
                continue;
            };
            let before = is_controllable(&g).unwrap().verdict();
            // add one absent edge
            let mut extra = None;
            'outer: for a in 1..=n {
                for b in a + 1..=n {
                    if !edges.contains(&(a, b)) {
                        extra = Some((a, b));
                        break 'outer;
                    }
                }
            }
            let Some(e) = extra else { continue };
            let mut edges2 = edges;
            edges2.push(e);
            let g2 = CouplingGraph::new(nodes, edges2, subspace).unwrap();
            let after = is_controllable(&g2).unwrap().verdict();
            assert!(!before || after, "adding an edge flipped the verdict to false");
        }
    }

    #[test]
    fn reduce_chain_structure() {
        let sys = ChainSystem::five_chain(1.3, 1.0).unwrap();
        let red = reduce_chain(&sys).unwrap();
        assert_eq!(red.reduced.n_levels(), 4);
        assert_eq!(red.merged_levels, (3, 4));
        assert_eq!(red.reduced.decay_rates(), &[0.0, 1.3, 1.3, 0.0]);
        // theta = 0: all weight on the decaying component
        assert_eq!(red.effective_decay(0.0), 1.3);
        assert_eq!(red.effective_coupling(0.7, 0.0), 0.7);
        // theta = pi/2: merged level decay-free and decoupled
        assert!(red.effective_decay(std::f64::consts::FRAC_PI_2) < 1e-30);
        assert!(
            red.effective_coupling(0.7, std::f64::consts::FRAC_PI_2)
                .abs()
                < 1e-16
        );
    }

    #[test]
    fn reduce_chain_preconditions() {
        // too short
        let sys = ChainSystem::three_level(1.0, 1.0).unwrap();
        assert!(reduce_chain(&sys).is_err());
        // second-to-last not decaying
        let sys = ChainSystem::new(vec![0.0, 1.0, 0.0, 0.0], 1.0, 1).unwrap();
        assert!(reduce_chain(&sys).is_err());
    }

    #[test]
    fn upper_bound_by_run_length() {
        assert_eq!(chain_efficiency_upper_bound(0, 3.0).unwrap(), 1.0);
        assert_eq!(chain_efficiency_upper_bound(1, 3.0).unwrap(), 1.0);
        let four = crate::four_level::asymptotic_efficiency(1.0).unwrap();
        assert_eq!(chain_efficiency_upper_bound(2, 1.0).unwrap(), four);
        assert_eq!(chain_efficiency_upper_bound(3, 1.0).unwrap(), four);
        assert_eq!(chain_efficiency_upper_bound(7, 1.0).unwrap(), four);
    }
}
