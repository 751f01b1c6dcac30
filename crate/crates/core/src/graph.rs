//! Implicit dynamic link graph.
//!
//! Every directed V2V link `tx -> rx` is a node. Two links are neighbours when
//! they share an endpoint vehicle, so each node sees roughly a dozen
//! neighbours regardless of how many vehicles are on the map. Edges carry a
//! proximity weight `1 - d(tx_p, tx_q) / max(D)` where `D` holds the pairwise
//! distances of all vehicles currently present.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use crate::env::geometry::{Point, Vehicle, VehicleId};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkLabel {
    pub tx: VehicleId,
    pub rx: VehicleId,
}

impl LinkLabel {
    pub fn new(tx: VehicleId, rx: VehicleId) -> Self {
        Self { tx, rx }
    }

    pub fn touches(&self, vehicle: VehicleId) -> bool {
        self.tx == vehicle || self.rx == vehicle
    }
}

impl std::fmt::Display for LinkLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "V{}toV{}", self.tx, self.rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Neighbours share an endpoint vehicle.
    Implicit,
    /// Every other link is a neighbour (reference for cost comparisons).
    Complete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    nodes: Vec<LinkLabel>,
    index: BTreeMap<LinkLabel, usize>,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
    vehicles: Vec<VehicleId>,
    distances: Array2<f64>,
    max_distance: f64,
}

/// Weight of an edge whose transmitters are `distance` apart.
pub fn edge_weight(distance: f64, max_distance: f64) -> f64 {
    if max_distance <= 0.0 {
        return 1.0;
    }
    (1.0 - distance / max_distance).clamp(0.0, 1.0)
}

/// Multiplications needed by one single-layer aggregation over every node.
pub fn count_aggregation_ops(vehicles: usize, d_in: usize, d_out: usize, mode: GraphMode) -> u64 {
    let nodes = 3 * vehicles as u64;
    let per_node = match mode {
        GraphMode::Complete => nodes.saturating_sub(1),
        GraphMode::Implicit => 12,
    };
    d_in as u64 * d_out as u64 * nodes * per_node
}

impl GraphTopology {
    /// Builds the implicit graph from vehicles that each have exactly
    /// `destinations` receivers.
    pub fn build(vehicles: &[Vehicle], destinations: usize) -> Result<Self> {
        for v in vehicles {
            if v.destinations.len() != destinations {
                return Err(LabError::structural(format!(
                    "vehicle {} has {} destinations, expected {destinations}",
                    v.id,
                    v.destinations.len()
                )));
            }
        }
        let links = vehicles
            .iter()
            .flat_map(|v| v.destinations.iter().map(move |&rx| LinkLabel::new(v.id, rx)))
            .collect();
        let positions = vehicles.iter().map(|v| (v.id, v.position)).collect();
        Self::from_links(links, &positions, GraphMode::Implicit)
    }

    /// Builds a graph over arbitrary links. Every endpoint must have a position.
    pub fn from_links(
        mut links: Vec<LinkLabel>,
        positions: &BTreeMap<VehicleId, Point>,
        mode: GraphMode,
    ) -> Result<Self> {
        links.sort_unstable();
        links.dedup();
        for l in &links {
            if l.tx == l.rx {
                return Err(LabError::structural(format!("self link {l}")));
            }
            for v in [l.tx, l.rx] {
                if !positions.contains_key(&v) {
                    return Err(LabError::structural(format!("link {l} references unknown vehicle {v}")));
                }
            }
        }
        let vehicles: Vec<VehicleId> = positions.keys().copied().collect();
        let pos: Vec<Point> = positions.values().copied().collect();
        let s = vehicles.len();
        let distances = Array2::from_shape_fn((s, s), |(a, b)| pos[a].distance(&pos[b]));
        let max_distance = distances.iter().copied().fold(0.0, f64::max);
        let vehicle_slot: BTreeMap<VehicleId, usize> =
            vehicles.iter().enumerate().map(|(i, &v)| (v, i)).collect();

        let index: BTreeMap<LinkLabel, usize> = links.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let neighbors: Vec<Vec<usize>> = match mode {
            GraphMode::Implicit => {
                let mut incident: BTreeMap<VehicleId, Vec<usize>> = BTreeMap::new();
                for (i, l) in links.iter().enumerate() {
                    incident.entry(l.tx).or_default().push(i);
                    incident.entry(l.rx).or_default().push(i);
                }
                links
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let set: BTreeSet<usize> = incident[&l.tx]
                            .iter()
                            .chain(incident[&l.rx].iter())
                            .copied()
                            .filter(|&n| n != i)
                            .collect();
                        set.into_iter().collect()
                    })
                    .collect()
            }
            GraphMode::Complete => (0..links.len())
                .map(|i| (0..links.len()).filter(|&n| n != i).collect())
                .collect(),
        };
        let weights = neighbors
            .iter()
            .enumerate()
            .map(|(i, ns)| {
                let a = vehicle_slot[&links[i].tx];
                ns.iter()
                    .map(|&n| edge_weight(distances[[a, vehicle_slot[&links[n].tx]]], max_distance))
                    .collect()
            })
            .collect();
        Ok(Self { nodes: links, index, neighbors, weights, vehicles, distances, max_distance })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[LinkLabel] {
        &self.nodes
    }

    pub fn node_index(&self, label: &LinkLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Weights aligned with [`GraphTopology::neighbors`].
    pub fn neighbor_weights(&self, node: usize) -> &[f64] {
        &self.weights[node]
    }

    /// Weight of the edge `a`-`b`, if they are neighbours.
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let pos = self.neighbors[a].binary_search(&b).ok()?;
        Some(self.weights[a][pos])
    }

    /// Weight between any two nodes computed from `D`, edge or not.
    pub fn proximity(&self, a: usize, b: usize) -> f64 {
        let slot = |v: VehicleId| self.vehicles.binary_search(&v).expect("known vehicle");
        let d = self.distances[[slot(self.nodes[a].tx), slot(self.nodes[b].tx)]];
        edge_weight(d, self.max_distance)
    }

    pub fn vehicles(&self) -> &[VehicleId] {
        &self.vehicles
    }

    pub fn distances(&self) -> &Array2<f64> {
        &self.distances
    }

    pub fn max_distance(&self) -> f64 {
        self.max_distance
    }

    pub fn mean_degree(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.nodes.len() as f64
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Checks symmetry, irreflexivity and the weight range.
    pub fn check_invariants(&self) -> Result<()> {
        for (v, ns) in self.neighbors.iter().enumerate() {
            for (k, &u) in ns.iter().enumerate() {
                if u == v {
                    return Err(LabError::structural(format!("node {v} lists itself")));
                }
                if self.neighbors[u].binary_search(&v).is_err() {
                    return Err(LabError::structural(format!("edge {v}->{u} not mirrored")));
                }
                let w = self.weights[v][k];
                if !(0.0..=1.0).contains(&w) {
                    return Err(LabError::structural(format!("edge {v}-{u} weight {w}")));
                }
            }
        }
        Ok(())
    }

    /// Line-oriented dump: one `node` line per link, one `edge` line per
    /// undirected edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# nodes={} edges={} max_distance_m={:.6}", self.len(), self.edge_count(), self.max_distance);
        for (i, l) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "node {i} {l} degree={}", self.neighbors[i].len());
        }
        for (a, ns) in self.neighbors.iter().enumerate() {
            for (k, &b) in ns.iter().enumerate() {
                if a < b {
                    let _ = writeln!(out, "edge {a} {b} {:.6}", self.weights[a][k]);
                }
            }
        }
        out
    }
}

/// Neighbours sampled for one target node across two layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledNeighborhood {
    pub node: usize,
    /// N_s(v)
    pub layer1: Vec<usize>,
    /// N_s(u) for each `u` in `layer1`, same order
    pub layer2: Vec<Vec<usize>>,
    /// Set when some sampled pool was empty and the node sampled itself.
    pub self_sampled: bool,
}

/// Samples `fanout` neighbours of `node`: without replacement when the pool is
/// large enough, otherwise uniformly with replacement. An isolated node
/// samples itself and reports it.
pub fn sample_neighbors<R: Rng + ?Sized>(topo: &GraphTopology, node: usize, fanout: usize, rng: &mut R) -> (Vec<usize>, bool) {
    let pool = topo.neighbors(node);
    if pool.is_empty() {
        return (vec![node; fanout], true);
    }
    if pool.len() >= fanout {
        let picks = index::sample(rng, pool.len(), fanout);
        (picks.into_iter().map(|k| pool[k]).collect(), false)
    } else {
        ((0..fanout).map(|_| pool[rng.gen_range(0..pool.len())]).collect(), false)
    }
}

pub fn sample_neighborhood<R: Rng + ?Sized>(topo: &GraphTopology, node: usize, fanout: usize, rng: &mut R) -> SampledNeighborhood {
    let (layer1, mut flagged) = sample_neighbors(topo, node, fanout, rng);
    let layer2 = layer1
        .iter()
        .map(|&u| {
            let (s, f) = sample_neighbors(topo, u, fanout, rng);
            flagged |= f;
            s
        })
        .collect();
    SampledNeighborhood { node, layer1, layer2, self_sampled: flagged }
}

/// Neighbourhood containing every neighbour at both layers (no sampling).
pub fn full_neighborhood(topo: &GraphTopology, node: usize) -> SampledNeighborhood {
    let mut flagged = false;
    let mut full = |n: usize| {
        let ns = topo.neighbors(n);
        if ns.is_empty() {
            flagged = true;
            vec![n]
        } else {
            ns.to_vec()
        }
    };
    let layer1 = full(node);
    let layer2 = layer1.iter().map(|&u| full(u)).collect();
    SampledNeighborhood { node, layer1, layer2, self_sampled: flagged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::geometry::Lane;
    use crate::rng::{stream, Stream};

    fn vehicle(id: VehicleId, x: f64, dests: &[VehicleId]) -> Vehicle {
        Vehicle { id, position: Point::new(x, 0.0), lane: Lane(0), speed: 10.0, destinations: dests.to_vec() }
    }

    #[test]
    fn weights_at_extremes() {
        assert_eq!(edge_weight(10.0, 10.0), 0.0);
        assert_eq!(edge_weight(0.0, 10.0), 1.0);
        assert_eq!(edge_weight(5.0, 10.0), 0.5);
        assert_eq!(edge_weight(0.0, 0.0), 1.0);
    }

    #[test]
    fn op_counts() {
        assert_eq!(count_aggregation_ops(20, 60, 20, GraphMode::Complete), 4_248_000);
        assert_eq!(count_aggregation_ops(20, 60, 20, GraphMode::Implicit), 864_000);
        let ratio = count_aggregation_ops(20, 60, 20, GraphMode::Complete) as f64
            / count_aggregation_ops(20, 60, 20, GraphMode::Implicit) as f64;
        assert!((ratio - 59.0 / 12.0).abs() < 1e-12);
    }

    /// The six-vehicle example: Vx -> {Vm, Vp, Vo}, Vy -> Vx, Vz -> Vx.
    #[test]
    fn figure_two_neighbourhood() {
        let (x, m, p, o, y, z) = (0, 1, 2, 3, 4, 5);
        let vehicles = vec![
            vehicle(x, 0.0, &[m, p, o]),
            vehicle(m, 10.0, &[x, p, o]),
            vehicle(p, 20.0, &[x, m, o]),
            vehicle(o, 30.0, &[x, m, p]),
            vehicle(y, 40.0, &[x, m, p]),
            vehicle(z, 50.0, &[x, m, p]),
        ];
        let g = GraphTopology::build(&vehicles, 3).unwrap();
        let v = g.node_index(&LinkLabel::new(x, m)).unwrap();
        let ns: BTreeSet<LinkLabel> = g.neighbors(v).iter().map(|&n| g.nodes()[n]).collect();
        for l in [(x, p), (x, o), (y, x), (z, x)] {
            assert!(ns.contains(&LinkLabel::new(l.0, l.1)), "{l:?}");
        }
        for (i, l) in g.nodes().iter().enumerate() {
            if i != v && (l.touches(x) || l.touches(m)) {
                assert!(ns.contains(l), "{l}");
            }
        }
        assert!(ns.iter().all(|l| l.touches(x) || l.touches(m)));
        g.check_invariants().unwrap();
    }

    #[test]
    fn mutual_pair_shares_everything() {
        let positions: BTreeMap<_, _> = [(0, Point::new(0.0, 0.0)), (1, Point::new(3.0, 4.0))].into_iter().collect();
        let links = vec![LinkLabel::new(0, 1), LinkLabel::new(1, 0)];
        let g = GraphTopology::from_links(links, &positions, GraphMode::Implicit).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.weight(0, 1), Some(0.0));
        assert_eq!(g.max_distance(), 5.0);
    }

    #[test]
    fn wrong_destination_count_is_structural_error() {
        let vehicles = vec![vehicle(0, 0.0, &[1]), vehicle(1, 1.0, &[0])];
        assert!(matches!(GraphTopology::build(&vehicles, 3), Err(LabError::Structural(_))));
    }

    #[test]
    fn exact_pool_without_replacement_is_the_pool() {
        let positions: BTreeMap<_, _> = (0..6).map(|i| (i, Point::new(i as f64, 0.0))).collect();
        // star: node 0 touches vehicle 0, nodes 1..=5 each link 0 -> k
        let links: Vec<_> = (1..6).map(|k| LinkLabel::new(0, k)).chain([LinkLabel::new(1, 2)]).collect();
        let g = GraphTopology::from_links(links, &positions, GraphMode::Implicit).unwrap();
        let hub = g.node_index(&LinkLabel::new(0, 1)).unwrap();
        assert_eq!(g.neighbors(hub).len(), 5);
        let mut rng = stream(1, Stream::Sampling, 0);
        let (mut s, flagged) = sample_neighbors(&g, hub, 5, &mut rng);
        s.sort_unstable();
        assert_eq!(s, g.neighbors(hub));
        assert!(!flagged);
    }

    #[test]
    fn fanout_one_chain() {
        let positions: BTreeMap<_, _> = (0..3).map(|i| (i, Point::new(i as f64, 0.0))).collect();
        let links = vec![LinkLabel::new(0, 1), LinkLabel::new(1, 2)];
        let g = GraphTopology::from_links(links, &positions, GraphMode::Implicit).unwrap();
        let mut rng = stream(2, Stream::Sampling, 0);
        let s = sample_neighborhood(&g, 0, 1, &mut rng);
        assert_eq!(s.layer1.len(), 1);
        assert_eq!(s.layer2.len(), 1);
        assert_eq!(s.layer2[0].len(), 1);
    }

    #[test]
    fn isolated_node_samples_itself() {
        let positions: BTreeMap<_, _> = (0..2).map(|i| (i, Point::new(i as f64, 0.0))).collect();
        let g = GraphTopology::from_links(vec![LinkLabel::new(0, 1)], &positions, GraphMode::Implicit).unwrap();
        let mut rng = stream(3, Stream::Sampling, 0);
        let s = sample_neighborhood(&g, 0, 5, &mut rng);
        assert!(s.self_sampled);
        assert_eq!(s.layer1, vec![0; 5]);
    }

    #[test]
    fn sampling_replays_with_same_seed() {
        let positions: BTreeMap<_, _> = (0..8).map(|i| (i, Point::new(i as f64 * 7.0, 0.0))).collect();
        let links: Vec<_> = (0..8).flat_map(|i| [(i + 1) % 8, (i + 3) % 8, (i + 5) % 8].map(|j| LinkLabel::new(i, j))).collect();
        let g = GraphTopology::from_links(links, &positions, GraphMode::Implicit).unwrap();
        let a: Vec<_> = (0..g.len()).map(|v| sample_neighborhood(&g, v, 5, &mut stream(9, Stream::Sampling, v as u64))).collect();
        let b: Vec<_> = (0..g.len()).map(|v| sample_neighborhood(&g, v, 5, &mut stream(9, Stream::Sampling, v as u64))).collect();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.layer1.iter().all(|u| g.neighbors(s.node).contains(u)));
        }
    }

    #[test]
    fn dump_lists_nodes_and_edges() {
        let positions: BTreeMap<_, _> = (0..3).map(|i| (i, Point::new(i as f64, 0.0))).collect();
        let links = vec![LinkLabel::new(0, 1), LinkLabel::new(1, 2), LinkLabel::new(2, 0)];
        let g = GraphTopology::from_links(links, &positions, GraphMode::Implicit).unwrap();
        let text = g.dump();
        assert_eq!(text.lines().filter(|l| l.starts_with("node ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("edge ")).count(), 3);
        assert!(text.contains("node 0 V0toV1 degree=2"));
    }
}
