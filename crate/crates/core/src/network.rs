//! Sensor-network topology, drift geometry and consensus weights.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_info::WEIGHT_SUM_TOL;

/// 1-based sensor node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl NodeId {
    pub(crate) fn index(self) -> usize {
        self.0 - 1
    }
}

/// Grid spacing of the canonical 9-node layouts.
pub const GRID_SPACING_M: f64 = 500.0;

const TREE9_EDGES: [(usize, usize); 8] = [(1, 2), (2, 3), (2, 4), (4, 5), (5, 6), (4, 7), (7, 8), (7, 9)];
const CYCLE9_EXTRA: [(usize, usize); 3] = [(3, 6), (6, 9), (8, 1)];

/// Directed sensor graph. `(i, j)` in `edges` means node `j` receives data from node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    edges: BTreeSet<(NodeId, NodeId)>,
    positions: Vec<Vector2<f64>>,
}

impl Topology {
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
        positions: Vec<Vector2<f64>>,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidInput("topology needs at least one node".into()));
        }
        if positions.len() != node_count {
            return Err(Error::DimensionMismatch { expected: node_count, found: positions.len() });
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            for n in [i, j] {
                if n.0 == 0 || n.0 > node_count {
                    return Err(Error::UnknownNode(n));
                }
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop on node {i}")));
            }
            set.insert((i, j));
        }
        Ok(Topology { node_count, edges: set, positions })
    }

    /// Builds a topology with both directions of every listed link.
    pub fn undirected(
        node_count: usize,
        links: impl IntoIterator<Item = (usize, usize)>,
        positions: Vec<Vector2<f64>>,
    ) -> Result<Self> {
        let edges: Vec<_> = links
            .into_iter()
            .flat_map(|(a, b)| [(NodeId(a), NodeId(b)), (NodeId(b), NodeId(a))])
            .collect();
        Topology::new(node_count, edges, positions)
    }

    /// 9-node tree on a 3×3 grid centered at the origin, numbered row by row.
    pub fn tree9() -> Self {
        Topology::undirected(9, TREE9_EDGES, grid9()).expect("static topology")
    }

    /// The tree plus three links closing cycles.
    pub fn cycle9() -> Self {
        Topology::undirected(9, TREE9_EDGES.into_iter().chain(CYCLE9_EXTRA), grid9()).expect("static topology")
    }

    pub fn single(position: Vector2<f64>) -> Self {
        Topology::new(1, [], vec![position]).expect("static topology")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.node_count).map(NodeId)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn position(&self, i: NodeId) -> Result<Vector2<f64>> {
        self.check(i)?;
        Ok(self.positions[i.index()])
    }

    pub fn positions(&self) -> &[Vector2<f64>] {
        &self.positions
    }

    fn check(&self, i: NodeId) -> Result<()> {
        if i.0 == 0 || i.0 > self.node_count {
            Err(Error::UnknownNode(i))
        } else {
            Ok(())
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(i, j)| self.edges.contains(&(j, i)))
    }

    /// In-neighbors of `i`, including `i`, in ascending order.
    pub fn in_neighbors(&self, i: NodeId) -> Result<Vec<NodeId>> {
        self.check(i)?;
        let mut out: BTreeSet<NodeId> = self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
        out.insert(i);
        Ok(out.into_iter().collect())
    }

    /// In-neighbors of `i` excluding `i`.
    pub fn neighbors(&self, i: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.in_neighbors(i)?.into_iter().filter(|&j| j != i).collect())
    }

    pub fn degree(&self, i: NodeId) -> Result<usize> {
        Ok(self.in_neighbors(i)?.len() - 1)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = BTreeSet::from([NodeId(1)]);
        let mut stack = vec![NodeId(1)];
        while let Some(n) = stack.pop() {
            for &(a, b) in &self.edges {
                for (from, to) in [(a, b), (b, a)] {
                    if from == n && seen.insert(to) {
                        stack.push(to);
                    }
                }
            }
        }
        seen.len() == self.node_count
    }
}

fn grid9() -> Vec<Vector2<f64>> {
    (0..9)
        .map(|k| Vector2::new((k % 3) as f64 - 1.0, (k / 3) as f64 - 1.0) * GRID_SPACING_M)
        .collect()
}

/// Per-node consensus weights `π^{i,j}` over `N^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusWeights {
    rows: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
}

impl ConsensusWeights {
    /// Validates positivity and unit row sums.
    pub fn new(rows: BTreeMap<NodeId, BTreeMap<NodeId, f64>>) -> Result<Self> {
        for row in rows.values() {
            let mut sum = 0.0;
            for &w in row.values() {
                if !(w > 0.0) {
                    return Err(Error::NonPositiveWeight { weight: w });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::WeightSum { sum });
            }
        }
        Ok(ConsensusWeights { rows })
    }

    pub fn row(&self, i: NodeId) -> Result<&BTreeMap<NodeId, f64>> {
        self.rows.get(&i).ok_or(Error::UnknownNode(i))
    }

    pub fn weight(&self, i: NodeId, j: NodeId) -> Result<f64> {
        self.row(i)?.get(&j).copied().ok_or(Error::MissingNeighbor { node: i, neighbor: j })
    }
}

/// `π^{i,j} = 1 / (1 + max(d_i, d_j))` for neighbors, self-weight takes the remainder.
pub fn metropolis_weights(t: &Topology) -> Result<ConsensusWeights> {
    if let Some(&(i, j)) = t.edges.iter().find(|&&(i, j)| !t.edges.contains(&(j, i))) {
        return Err(Error::AsymmetricEdge(i, j));
    }
    let mut rows = BTreeMap::new();
    for i in t.nodes() {
        let di = t.degree(i)?;
        let mut row = BTreeMap::new();
        let mut others = 0.0;
        for j in t.neighbors(i)? {
            let w = 1.0 / (1.0 + di.max(t.degree(j)?) as f64);
            others += w;
            row.insert(j, w);
        }
        row.insert(i, 1.0 - others);
        rows.insert(i, row);
    }
    ConsensusWeights::new(rows)
}

/// Drift parameters `θ^{i,j} = [ξ^{i,j}, 0, η^{i,j}, 0]` held by node `i` for each neighbor `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftVector {
    owner: NodeId,
    entries: BTreeMap<NodeId, Vector4<f64>>,
}

impl DriftVector {
    /// All-zero drifts for the given neighbors.
    pub fn zeros(owner: NodeId, neighbors: &[NodeId]) -> Self {
        DriftVector {
            owner,
            entries: neighbors.iter().filter(|&&j| j != owner).map(|&j| (j, Vector4::zeros())).collect(),
        }
    }

    pub fn from_offsets(owner: NodeId, offsets: impl IntoIterator<Item = (NodeId, Vector2<f64>)>) -> Self {
        DriftVector {
            owner,
            entries: offsets.into_iter().map(|(j, p)| (j, Vector4::new(p[0], 0.0, p[1], 0.0))).collect(),
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    /// `θ^{i,j}`; zero for `j == owner`.
    pub fn get(&self, j: NodeId) -> Option<Vector4<f64>> {
        if j == self.owner {
            Some(Vector4::zeros())
        } else {
            self.entries.get(&j).copied()
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Vector4<f64>)> {
        self.entries.iter().map(|(j, v)| (*j, v))
    }

    /// Entries stacked in ascending neighbor order.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(4 * self.entries.len(), self.entries.values().flat_map(|v| v.iter().copied()))
    }

    /// Replaces entries from a stacked vector, zeroing the velocity components.
    pub fn set_stacked(&mut self, s: &DVector<f64>) -> Result<()> {
        if s.len() != 4 * self.entries.len() {
            return Err(Error::DimensionMismatch { expected: 4 * self.entries.len(), found: s.len() });
        }
        for (k, v) in self.entries.values_mut().enumerate() {
            *v = Vector4::new(s[4 * k], 0.0, s[4 * k + 2], 0.0);
        }
        Ok(())
    }
}

/// Ground-truth drifts: `θ^{i,j}` is the position of `j` in `i`'s frame.
pub fn true_drifts(t: &Topology) -> BTreeMap<NodeId, DriftVector> {
    t.nodes()
        .map(|i| {
            let pi = t.positions[i.index()];
            let offsets = t
                .neighbors(i)
                .expect("node from topology")
                .into_iter()
                .map(|j| (j, t.positions[j.index()] - pi));
            (i, DriftVector::from_offsets(i, offsets))
        })
        .collect()
}
